from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zebu.abnf import Repetition, RuleRef, parse_abnf
from zebu.frontend import parse_zebu
from zebu.pattern import (
    MatchBudgetExceeded,
    PAlt,
    PBytes,
    PClass,
    PLit,
    Pattern,
    PRep,
    compile_pattern,
    match_full,
    reference_match,
)

FIG_RULES = """\
SIP-Version = "SIP" "/" 1*DIGIT "." 1*DIGIT
Method = INVITEm / ACKm / OPTIONSm / BYEm / CANCELm / REGISTERm / extension-method
INVITEm = %x49.4E.56.49.54.45
ACKm = %x41.43.4B
OPTIONSm = %x4F.50.54.49.4F.4E.53
BYEm = %x42.59.45
CANCELm = %x43.41.4E.43.45.4C
REGISTERm = %x52.45.47.49.53.54.45.52
extension-method = token
token = 1*( ALPHA / DIGIT / "-" / "." / "!" / "%" / "*" / "_" / "+" / "`" / "'" / "~" )
CSeq = "CSeq" HCOLON 1*DIGIT LWS Method
LWS = [*WSP CRLF] 1*WSP
SWS = [LWS]
HCOLON = *( SP / HTAB ) ":" SWS
"""


@pytest.fixture(scope="module")
def fig():
    return parse_abnf(FIG_RULES)


def compiled(fig, name):
    return compile_pattern(fig.get(name), fig)


def test_sip_version_accepts_and_rejects(fig):
    p = compiled(fig, "SIP-Version")
    assert match_full(p, b"SIP/2.0").matched
    assert match_full(p, b"sip/10.4").matched
    assert not match_full(p, b"SIP/.0").matched
    assert not match_full(p, b"SIP/2.").matched
    assert not match_full(p, b"SIP/2.0 ").matched


def test_char_codes_are_case_sensitive(fig):
    p = compiled(fig, "INVITEm")
    assert match_full(p, b"INVITE").matched
    assert not match_full(p, b"invite").matched


def test_digit_run_capture_span():
    g = parse_zebu("num = 1*DIGIT:value\n")
    p = compile_pattern(g.base.get("num"), g)
    res = match_full(p, b"4711")
    assert res.matched
    assert res.span(p, "value") == (0, 4)


def test_cseq_header_body_captures():
    g = parse_zebu(
        "header CSeq = 1*DIGIT:number:uint32 LWS Method:method\n"
        "Method = INVITEm / ACKm / BYEm { enum }\n"
        "INVITEm = %x49.4E.56.49.54.45\n"
        "ACKm = %x41.43.4B\n"
        "BYEm = %x42.59.45\n"
        "LWS = [*WSP CRLF] 1*WSP\n"
    )
    decl = g.header("CSeq")
    p = compile_pattern(decl.body, g, table=g.subfields["CSeq"])
    res = match_full(p, b"1 INVITE")
    assert res.matched
    assert res.span(p, "number") == (0, 1)
    assert res.span(p, "method#0") == (2, 8)  # INVITEm branch
    assert res.span(p, "method#1") is None
    assert not match_full(p, b"x INVITE").matched


def test_empty_repetition_matches_empty():
    g = parse_abnf("R = *DIGIT")
    p = compiled(g, "R")
    assert match_full(p, b"").matched


def test_alternation_prefers_source_order_for_captures():
    g = parse_zebu('pick = ( "ab" / "a" ):x "b"\n')
    p = compile_pattern(g.base.get("pick"), g)
    res = match_full(p, b"ab")
    # greedy first branch "ab" leaves no "b"; backtracking lands on "a"
    assert res.matched
    assert res.span(p, "x") == (0, 1)


def test_greedy_repetition_backtracks_to_match():
    g = parse_abnf('R = 1*DIGIT "1"')
    p = compiled(g, "R")
    assert match_full(p, b"111").matched
    assert not match_full(p, b"2").matched


def test_capture_under_repetition_reports_last_iteration():
    g = parse_zebu('R = 1*( DIGIT:d "," )\n')
    p = compile_pattern(g.base.get("R"), g)
    res = match_full(p, b"1,2,3,")
    assert res.span(p, "d") == (4, 5)


def test_match_budget_is_enforced():
    g = parse_abnf('R = 1*( 1*"a" ) "b"')
    p = compiled(g, "R")
    with pytest.raises(MatchBudgetExceeded):
        match_full(p, b"a" * 26, budget=2_000)


def test_single_byte_alternation_folds_to_class(fig):
    p = compiled(fig, "token")
    assert isinstance(p.root, PRep)
    assert isinstance(p.root.inner, PClass)


def test_adjacent_bytes_merge(fig):
    p = compiled(fig, "INVITEm")
    assert p.root == PBytes(b"INVITE")


def test_reference_match_examples(fig):
    assert reference_match(fig.get("SIP-Version"), fig, b"SIP/2.0")
    assert not reference_match(fig.get("SIP-Version"), fig, b"")
    digit = parse_abnf("R = 1*DIGIT")
    assert not reference_match(digit.get("R"), digit, b"")


@pytest.mark.parametrize(
    "subject,expected",
    [
        (b"CSeq:1 INVITE", True),
        (b"CSeq : 1 INVITE", True),
        (b"cseq:4711 ACK", True),
        (b"CSeq:x INVITE", False),
        (b"CSeq:1INVITE", False),
        (b"CSeq:1 invite", True),  # falls back to the extension-method branch
        (b"CSeq:1 ", False),
    ],
)
def test_cseq_full_rule_agreement(fig, subject, expected):
    p = compiled(fig, "CSeq")
    rule = fig.get("CSeq")
    assert match_full(p, subject).matched is expected
    assert reference_match(rule, fig, subject) is expected


def exhaustive_agreement(fig, rule_name, alphabet, max_len):
    rule = fig.get(rule_name)
    p = compile_pattern(rule, fig)
    disagreements = []
    for length in range(max_len + 1):
        for combo in itertools.product(alphabet, repeat=length):
            subject = bytes(combo)
            got = match_full(p, subject).matched
            want = reference_match(rule, fig, subject)
            if got is not want:
                disagreements.append(subject)
    return disagreements


def test_exhaustive_agreement_small(fig):
    # Short-length smoke version; the acceptance suite runs length <= 6.
    assert exhaustive_agreement(fig, "SIP-Version", b"SIP/.01s", 4) == []
    assert exhaustive_agreement(fig, "HCOLON", b": \t\r\na0;x", 4) == []
    assert exhaustive_agreement(fig, "CSeq", b"CSEQ01: ", 4) == []


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(0, 3),
    extra=st.integers(0, 3),
    k=st.integers(0, 8),
)
def test_repetition_exactness(n, extra, k):
    m = n + extra
    node = Repetition(n, m, RuleRef("DIGIT"))
    g = parse_abnf('Unused = "x"')
    p = compile_pattern(node, g)
    subject = b"7" * k
    assert match_full(p, subject).matched is (n <= k <= m)
    assert reference_match(node, g, subject) is (n <= k <= m)


_CASEABLE = "sip/2.0"


@settings(max_examples=80, deadline=None)
@given(st.lists(st.booleans(), min_size=len(_CASEABLE), max_size=len(_CASEABLE)))
def test_case_insensitivity_of_literal_positions(flips):
    g = parse_abnf('V = "SIP" "/" 1*DIGIT "." 1*DIGIT')
    p = compile_pattern(g.get("V"), g)
    subject = "".join(
        c.upper() if flip else c for c, flip in zip(_CASEABLE, flips)
    ).encode()
    assert match_full(p, subject).matched


def test_matched_false_means_no_captures():
    g = parse_zebu("R = 1*DIGIT:d \"!\"\n")
    p = compile_pattern(g.base.get("R"), g)
    res = match_full(p, b"123")
    assert not res.matched
    assert res.captures == {}


@settings(max_examples=60, deadline=None)
@given(st.permutations(range(4)), st.binary(max_size=5))
def test_matched_is_independent_of_branch_order(order, subject):
    branches = ['"ab"', '"a"', "2DIGIT", '%x41']
    def grammar_for(perm):
        alts = " / ".join(branches[i] for i in perm)
        return parse_abnf(f"R = 1*( {alts} )")
    base = grammar_for(range(4))
    shuffled = grammar_for(order)
    got = match_full(compile_pattern(base.get("R"), base), subject).matched
    other = match_full(compile_pattern(shuffled.get("R"), shuffled), subject).matched
    assert got == other


def test_inlining_depth_guard():
    from zebu.pattern import InliningDepthExceeded
    lines = [f"A{i} = A{i + 1}" for i in range(200)] + ['A200 = "x"']
    g = parse_abnf("\n".join(lines))
    with pytest.raises(InliningDepthExceeded):
        compile_pattern(g.get("A0"), g)


def test_reference_budget_enforced():
    from zebu.pattern import RecursionBudgetExceeded
    g = parse_abnf('R = 1*( 1*"a" ) "b"')
    with pytest.raises(RecursionBudgetExceeded):
        reference_match(g.get("R"), g, b"a" * 40, budget=50)
