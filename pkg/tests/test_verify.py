from __future__ import annotations

import random

import pytest

from zebu.frontend import parse_zebu
from zebu.verify import (
    Code,
    Severity,
    check_no_cycles,
    check_no_duplicates,
    check_no_omission,
    check_type_annotations,
    format_diagnostic,
    has_errors,
    verify_all,
)

ENTRY_STUB = 'requestLine = "GO"\nstatusLine = "NO"\n'


def codes(diags):
    return [d.code for d in diags]


def test_core_rules_count_as_defined():
    ag = parse_zebu(ENTRY_STUB + "A = 1*DIGIT WSP CRLF\n")
    assert check_no_omission(ag) == []


def test_undefined_rule_reported_once():
    ag = parse_zebu(ENTRY_STUB + "A = B B\nC = B\n")
    diags = check_no_omission(ag)
    assert codes(diags) == [Code.UNDEFINED_RULE]
    assert "'B'" in diags[0].message


def test_bundled_grammars_are_closed(sip_ag, rtsp_ag):
    assert check_no_omission(sip_ag) == []
    assert check_no_omission(rtsp_ag) == []


def test_duplicate_definition_points_at_second():
    ag = parse_zebu(ENTRY_STUB + 'A = "x"\nA = "x"\n')
    diags = check_no_duplicates(ag)
    assert codes(diags) == [Code.DUPLICATE_RULE]
    assert diags[0].span[0] == 4  # line of the second definition


def test_duplicates_are_case_insensitive():
    ag = parse_zebu(ENTRY_STUB + 'a = "x"\nA = "y"\n')
    assert codes(check_no_duplicates(ag)) == [Code.DUPLICATE_RULE]


def test_clean_grammar_has_no_duplicates(sip_ag):
    assert check_no_duplicates(sip_ag) == []


def test_header_key_collision_reported():
    ag = parse_zebu(
        ENTRY_STUB
        + 'header To { "To" / "t" } = 1*DIGIT\n'
        + 'header Tag { "t" } = 1*DIGIT\n')
    diags = check_no_duplicates(ag)
    assert codes(diags) == [Code.DUPLICATE_RULE]


def test_two_rule_cycle():
    ag = parse_zebu(ENTRY_STUB + "A = B\nB = A\n")
    diags = check_no_cycles(ag)
    assert codes(diags) == [Code.RULE_CYCLE]
    path = diags[0].cycle_path
    assert path[0] == path[-1]
    assert set(path) == {"A", "B"}


def test_self_loop():
    ag = parse_zebu(ENTRY_STUB + 'A = A / "x"\n')
    diags = check_no_cycles(ag)
    assert codes(diags) == [Code.RULE_CYCLE]
    assert diags[0].cycle_path == ("A", "A")


def test_bundled_grammars_acyclic(sip_ag, rtsp_ag):
    assert check_no_cycles(sip_ag) == []
    assert check_no_cycles(rtsp_ag) == []


def test_cycle_witness_paths_traverse_real_references():
    ag = parse_zebu(ENTRY_STUB + "A = B\nB = C\nC = A\nD = A\n")
    for diag in check_no_cycles(ag):
        path = diag.cycle_path
        for src, dst in zip(path, path[1:]):
            body = ag.base.get(src).body
            assert dst.lower() in repr(body).lower()


@pytest.mark.parametrize("seed", range(8))
def test_random_dag_plus_back_edges(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 12)
    names = [f"R{i}" for i in range(n)]
    lines = [ENTRY_STUB.rstrip()]
    # forward edges only: acyclic by construction
    edges = {}
    for i, name in enumerate(names):
        targets = [names[j] for j in range(i + 1, n) if rng.random() < 0.4]
        edges[name] = targets
        body = " ".join(targets) if targets else '"x"'
        lines.append(f"{name} = {body}")
    k = rng.randint(0, 2)
    injected = 0
    for _ in range(k):
        i = rng.randrange(1, n)
        j = rng.randrange(0, i)
        # re-declare one rule with an extra back edge via alternation
        src = names[i]
        tgt = names[j]
        body = " ".join(edges[src]) if edges[src] else '"x"'
        lines = [ln for ln in lines if not ln.startswith(f"{src} =")]
        lines.append(f"{src} = ( {body} ) / {tgt}")
        edges[src] = edges[src] + [tgt]
        injected += 1
    ag = parse_zebu("\n".join(lines) + "\n")
    diags = check_no_cycles(ag)
    if injected:
        assert len(diags) >= 1
    else:
        assert diags == []


def test_uint16_over_literal_alternation_ok():
    ag = parse_zebu(ENTRY_STUB + 'header H = GF:code:uint16\nGF = "500" / "501" / "502"\n')
    assert check_type_annotations(ag) == []


def test_uint16_over_non_numeric_literal_rejected():
    ag = parse_zebu(ENTRY_STUB + 'header H = GF:code:uint16\nGF = "OK"\n')
    diags = check_type_annotations(ag)
    assert codes(diags) == [Code.TYPE_MISMATCH]
    assert "'OK'" in diags[0].message


def test_uint16_over_too_large_literal_rejected():
    ag = parse_zebu(ENTRY_STUB + 'header H = GF:code:uint16\nGF = "65535" / "65536"\n')
    diags = check_type_annotations(ag)
    assert codes(diags) == [Code.TYPE_MISMATCH]


def test_uint32_over_digit_run_deferred():
    ag = parse_zebu(ENTRY_STUB + "header H = 1*DIGIT:n:uint32\n")
    assert check_type_annotations(ag) == []


def test_enum_requires_alternation():
    ag = parse_zebu(ENTRY_STUB + "header H = 1*DIGIT:n:enum\n")
    diags = check_type_annotations(ag)
    assert codes(diags) == [Code.TYPE_MISMATCH]


def test_shape_collision_between_reference_and_definition():
    ag = parse_zebu(
        ENTRY_STUB + 'header H = M:m:uint16\nM = "1" / "2" { enum }\n')
    diags = check_type_annotations(ag)
    assert Code.TYPE_MISMATCH in codes(diags)


def test_matching_shapes_at_both_sites_allowed():
    ag = parse_zebu(
        ENTRY_STUB + 'header H = M:m:enum\nM = "1" / "2" { enum }\n')
    assert check_type_annotations(ag) == []


def test_capture_under_unbounded_repetition_warns():
    ag = parse_zebu(ENTRY_STUB + 'header H = *( 1*DIGIT:n "," )\n')
    diags = check_type_annotations(ag)
    assert len(diags) == 1
    assert diags[0].severity is Severity.WARNING


def test_verify_all_order_omission_before_cycle():
    ag = parse_zebu(ENTRY_STUB + "A = B / Missing\nB = A\n")
    diags = [d for d in verify_all(ag) if d.is_error]
    assert codes(diags)[:2] == [Code.UNDEFINED_RULE, Code.RULE_CYCLE]


def test_verify_all_empty_grammar_missing_entry_points():
    diags = verify_all(parse_zebu('A = "x"\n'))
    errors = [d for d in diags if d.is_error]
    assert {d.code for d in errors} == {Code.UNDEFINED_RULE}
    assert any("requestLine" in d.message for d in errors)
    assert any("statusLine" in d.message for d in errors)


def test_verify_all_unresolved_constraint_ref():
    ag = parse_zebu(ENTRY_STUB + "request { Foo.bar == 1; }\n")
    diags = verify_all(ag)
    assert Code.UNRESOLVED_REF in codes(diags)


def test_unreachable_rule_is_warning_only():
    ag = parse_zebu(ENTRY_STUB + 'Orphan = "x"\n')
    diags = verify_all(ag)
    unreachable = [d for d in diags if d.code is Code.UNREACHABLE_RULE]
    assert len(unreachable) == 1
    assert not unreachable[0].is_error
    assert not has_errors(diags)


def test_bundled_grammars_verify_clean(sip_ag, rtsp_ag):
    assert verify_all(sip_ag) == []
    assert verify_all(rtsp_ag) == []


def test_diagnostic_rendering():
    ag = parse_zebu(ENTRY_STUB + "A = B\n")
    diag = check_no_omission(ag)[0]
    text = format_diagnostic(diag, "spec.zebu")
    assert text.startswith("spec.zebu:3:")
    assert "error[UNDEFINED_RULE]" in text
