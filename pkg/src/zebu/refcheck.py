"""Reference validation of whole messages, independent of the parse engine.

The mutation harness labels every mutant by re-checking it here before
emission, so detection rates measured against the engine are a real claim
rather than a tautology. This module re-implements the message structure
rules and constraint semantics directly over the grammar AST: derivations
are explored by a recursive environment-threading backtracker (same
disambiguation contract as the compiled matcher: source-order branches,
greedy repetition, full backtracking), with no pattern compilation, no
inlining, and no lazy holes, so lazy regions are checked in full.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import abnf, frontend
from .abnf import Alternation, CharCodes, CharRange, LiteralCI, Repetition, RuleRef, Sequence
from .errors import ZebuError
from .frontend import (
    REQUEST_LINE,
    STATUS_LINE,
    And,
    Annotated,
    AnnotatedGrammar,
    Cmp,
    FieldRef,
    IntLit,
    Mandatory,
    Not,
    Or,
    Shape,
    StrLit,
)


class ReferenceBudgetExceeded(ZebuError):
    pass


DEFAULT_BUDGET = 4_000_000

# env entry: dotted path -> (start, end, branch or None)
Env = "dict[str, tuple[int, int, int | None]]"


def derive_env(body, ag: AnnotatedGrammar, subject: bytes,
               table, budget: int = DEFAULT_BUDGET):
    """First full derivation of `subject` from `body` under the
    disambiguation contract; returns the annotation environment, or None
    when the subject is not derivable."""
    n = len(subject)
    steps = budget

    def gen(elem, pos, env, prefix):
        nonlocal steps
        steps -= 1
        if steps < 0:
            raise ReferenceBudgetExceeded("reference derivation budget exhausted")
        if isinstance(elem, LiteralCI):
            lit = elem.text.lower().encode("ascii")
            end = pos + len(lit)
            if end <= n and subject[pos:end].lower() == lit:
                yield end, env
        elif isinstance(elem, CharCodes):
            end = pos + len(elem.data)
            if subject[pos:end] == elem.data:
                yield end, env
        elif isinstance(elem, CharRange):
            if pos < n and elem.lo <= subject[pos] <= elem.hi:
                yield pos + 1, env
        elif isinstance(elem, Annotated):
            path = prefix + (elem.name,)
            key = ".".join(path)
            sf = table.get(key)
            shape = sf.shape if sf is not None else Shape.RAW
            if shape in (Shape.ENUM, Shape.UNION):
                alt = frontend.resolve_to_alternation(elem.inner, ag)
                branches = alt.branches if alt is not None else (elem.inner,)
                for i, branch in enumerate(branches):
                    for end, env2 in gen(branch, pos, env, path):
                        yield end, {**env2, key: (pos, end, i)}
            else:
                for end, env2 in gen(elem.inner, pos, env, path):
                    yield end, {**env2, key: (pos, end, None)}
        elif isinstance(elem, RuleRef):
            rule = abnf.resolve(elem.name, ag.base)
            if rule is None:
                raise ZebuError(f"undefined rule {elem.name!r} in reference validation")
            yield from gen(rule.body, pos, env, prefix)
        elif isinstance(elem, Sequence):
            yield from seq(elem.items, 0, pos, env, prefix)
        elif isinstance(elem, Alternation):
            for branch in elem.branches:
                yield from gen(branch, pos, env, prefix)
        elif isinstance(elem, Repetition):
            yield from rep(elem, 0, pos, env, prefix)
        else:
            raise TypeError(f"not a grammar element: {elem!r}")

    def seq(items, i, pos, env, prefix):
        if i == len(items):
            yield pos, env
            return
        for mid, env2 in gen(items[i], pos, env, prefix):
            yield from seq(items, i + 1, mid, env2, prefix)

    def rep(node, count, pos, env, prefix):
        if node.max is None or count < node.max:
            for mid, env2 in gen(node.inner, pos, env, prefix):
                if mid == pos:
                    if count + 1 <= node.min:
                        yield from rep(node, count + 1, mid, env2, prefix)
                    continue
                yield from rep(node, count + 1, mid, env2, prefix)
        if count >= node.min:
            yield pos, env

    try:
        for end, env in gen(body, 0, {}, ()):
            if end == n:
                return env
    except RecursionError:
        raise ReferenceBudgetExceeded("recursion limit during reference derivation") from None
    return None


# --- structural scan ----------------------------------------------------------

@dataclass
class _RefHeaderLine:
    key: bytes
    value: bytes  # unfolded, leading delimiter whitespace stripped


def _scan_structure(raw: bytes):
    """(command_line, header_lines, ok, notes); independent re-statement of
    the line rules: strict CRLF, blank-line terminator, WSP continuations."""
    notes = []
    if not raw:
        return None, [], False, ["empty input"]
    # strict CRLF split
    segments = []
    pos, n = 0, len(raw)
    blank_at = None
    while pos < n:
        i_cr = raw.find(b"\r", pos)
        i_lf = raw.find(b"\n", pos)
        if i_cr == -1 and i_lf == -1:
            return None, [], False, ["final line lacks CRLF"]
        if i_cr == -1 or (i_lf != -1 and i_lf < i_cr):
            return None, [], False, ["bare LF"]
        if i_cr + 1 >= n or raw[i_cr + 1:i_cr + 2] != b"\n":
            return None, [], False, ["bare CR"]
        if i_cr == pos:
            blank_at = pos
            break
        segments.append(raw[pos:i_cr])
        pos = i_cr + 2
    if blank_at is None:
        return None, [], False, ["no blank line before body"]
    if not segments:
        return None, [], False, ["no command line"]
    if segments[0][:1] in (b" ", b"\t"):
        return None, [], False, ["continuation before command line"]

    command = segments[0]
    logical: list[list[bytes]] = []
    for seg in segments[1:]:
        if seg[:1] in (b" ", b"\t"):
            if not logical:
                notes.append("continuation before any header")
                return None, [], False, notes
            logical[-1].append(seg)
        else:
            logical.append([seg])

    headers = []
    for parts in logical:
        first = parts[0]
        colon = first.find(b":")
        if colon == -1:
            return None, [], False, ["header line without colon"]
        key = first[:colon].rstrip(b" \t")
        if not key:
            return None, [], False, ["empty header key"]
        value = first[colon + 1:]
        for cont in parts[1:]:
            value += b" " + cont.lstrip(b" \t")
        headers.append(_RefHeaderLine(key, value.lstrip(b" \t")))
    return command, headers, True, notes


# --- field extraction and constraint evaluation --------------------------------

def _env_value(ag, entry, env, subject, key):
    """Typed comparison value for a constraint operand: an int, a
    (bytes, ci_flag) pair, or None when unavailable."""
    hit = env.get(key)
    if hit is None:
        return None
    start, end, branch = hit
    table = ag.subfields.get(entry) or {}
    sf = table.get(key)
    if sf is None:
        return None
    if sf.shape in (Shape.UINT16, Shape.UINT32):
        text = subject[start:end]
        if not text.isdigit():
            return None
        return int(text)
    if sf.shape is Shape.ENUM:
        return branch
    if sf.shape is Shape.RAW:
        return subject[start:end], frontend.terminals_all_ci(sf.element, ag)
    return None


def _eval_ref(expr, lookup):
    if isinstance(expr, And):
        result = True
        for item in expr.items:
            v = _eval_ref(item, lookup)
            if v is None:
                return None
            result = result and v
        return result
    if isinstance(expr, Or):
        result = False
        for item in expr.items:
            v = _eval_ref(item, lookup)
            if v is None:
                return None
            result = result or v
        return result
    if isinstance(expr, Not):
        v = _eval_ref(expr.item, lookup)
        return None if v is None else not v
    if isinstance(expr, Cmp):
        lhs = _ref_operand(expr.lhs, lookup)
        rhs = _ref_operand(expr.rhs, lookup)
        if lhs is None or rhs is None:
            return None
        if isinstance(lhs, int) and isinstance(rhs, int):
            a, b = lhs, rhs
        elif isinstance(lhs, tuple) and isinstance(rhs, tuple):
            a, cia = lhs
            b, cib = rhs
            if cia and cib:
                a, b = a.lower(), b.lower()
        else:
            return expr.op == "!="  # type mismatch never compares equal
        if expr.op == "==":
            return a == b
        if expr.op == "!=":
            return a != b
        if expr.op == "<":
            return a < b
        if expr.op == "<=":
            return a <= b
        if expr.op == ">":
            return a > b
        return a >= b
    raise ZebuError(f"not a constraint expression: {expr!r}")


def _ref_operand(node, lookup):
    if isinstance(node, IntLit):
        return node.value
    if isinstance(node, StrLit):
        return node.value.encode("ascii", "replace"), True
    if isinstance(node, FieldRef):
        return lookup(node)
    raise ZebuError(f"not a constraint operand: {node!r}")


def _range_violations(ag, entry, env, subject) -> list[str]:
    out = []
    table = ag.subfields.get(entry) or {}
    for key, sf in table.items():
        if sf.shape not in (Shape.UINT16, Shape.UINT32):
            continue
        hit = env.get(key)
        if hit is None:
            continue
        start, end, _ = hit
        text = subject[start:end]
        if not text.isdigit():
            out.append(f"{entry}.{key}: non-numeric {text!r}")
            continue
        value = int(text)
        width = 16 if sf.shape is Shape.UINT16 else 32
        if value >= (1 << width):
            out.append(f"{entry}.{key}: {value} overflows uint{width}")
            continue
        bound = frontend.declared_range(sf.element, ag)
        if bound is not None and not bound.holds(value):
            out.append(f"{entry}.{key}: {value} outside declared range")
    return out


def reference_validate(ag: AnnotatedGrammar, raw: bytes,
                       budget: int = DEFAULT_BUDGET) -> tuple[bool, list[str]]:
    """Full-message validity per the grammar and its declared constraints.

    Returns (valid, notes); notes name the first problems found. Used as
    the emission-time ground truth for mutants.
    """
    command, headers, ok, notes = _scan_structure(raw)
    if not ok:
        return False, notes

    problems: list[str] = []
    kind = None
    cmd_entry = None
    cmd_env = None
    for entry_name, rule, k in ((REQUEST_LINE, ag.request_line, Mandatory.REQUEST),
                                (STATUS_LINE, ag.status_line, Mandatory.RESPONSE)):
        if rule is None:
            continue
        env = derive_env(rule.body, ag, command, ag.subfields[entry_name], budget)
        if env is not None:
            kind = k
            cmd_entry = entry_name
            cmd_env = env
            break
    if kind is None:
        return False, ["command line derivable from neither entry point"]
    problems.extend(_range_violations(ag, cmd_entry, cmd_env, command))

    by_decl: dict[str, list[_RefHeaderLine]] = {}
    for line in headers:
        low = line.key.decode("latin-1").lower()
        for decl in ag.headers:
            if any(low == k.lower() for k in decl.keys):
                by_decl.setdefault(decl.name, []).append(line)
                break
        # undeclared headers are skipped

    envs: dict[str, tuple[dict, bytes]] = {}
    for decl in ag.headers:
        lines = by_decl.get(decl.name, [])
        if not lines:
            if decl.mandatory_in.covers(kind.value):
                problems.append(f"mandatory header {decl.name} missing")
            continue
        if len(lines) > 1 and not decl.multiple:
            problems.append(f"header {decl.name} duplicated")
        table = ag.subfields[decl.name]
        for i, line in enumerate(lines if decl.multiple else lines[:1]):
            env = derive_env(decl.body, ag, line.value, table, budget)
            if env is None:
                problems.append(f"header {decl.name} value not derivable")
                continue
            problems.extend(_range_violations(ag, decl.name, env, line.value))
            if i == 0:
                envs[decl.name] = (env, line.value)

    def lookup(ref: FieldRef):
        entry = ref.entry
        if entry is None:
            head = ref.path[0]
            if head in (REQUEST_LINE, STATUS_LINE):
                entry = head
            else:
                decl = ag.header(head)
                entry = decl.name if decl else None
        if entry == frontend.BUILTIN_MESSAGE:
            return kind.name.encode(), True
        key = ".".join(ref.sub_path or ref.path[1:])
        if entry in (REQUEST_LINE, STATUS_LINE):
            if entry != cmd_entry:
                return None
            return _env_value(ag, entry, cmd_env, command, key)
        hit = envs.get(entry)
        if hit is None:
            return None
        env, subject = hit
        return _env_value(ag, entry, env, subject, key)

    block = ag.request_block if kind is Mandatory.REQUEST else ag.response_block
    for expr in block:
        if _eval_ref(expr, lookup) is False:
            problems.append(f"constraint failed: {frontend.expr_to_text(expr)}")
    for decl in ag.headers:
        if decl.name in envs:
            for expr in decl.local_constraints:
                if _eval_ref(expr, lookup) is False:
                    problems.append(
                        f"{decl.name} constraint failed: {frontend.expr_to_text(expr)}")

    return (not problems), problems
