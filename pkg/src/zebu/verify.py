"""Static consistency checks run before a grammar is compiled.

Checks: every referenced rule is defined, no rule is defined twice, the
rule-reference graph is acyclic, and type annotations are consistent with
what the annotated rules can derive. Compilation proceeds only when no
ERROR-severity diagnostic is produced.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

from . import abnf
from .abnf import Alternation, CharCodes, CharRange, Element, LiteralCI, Repetition, RuleRef, Sequence
from .frontend import (
    Annotated,
    AnnotatedGrammar,
    Shape,
    Subfield,
    iter_unresolved,
    resolve_to_alternation,
)


class Severity(enum.Enum):
    ERROR = "error"
    WARNING = "warning"


class Code(enum.Enum):
    UNDEFINED_RULE = "UNDEFINED_RULE"
    DUPLICATE_RULE = "DUPLICATE_RULE"
    RULE_CYCLE = "RULE_CYCLE"
    TYPE_MISMATCH = "TYPE_MISMATCH"
    UNRESOLVED_REF = "UNRESOLVED_REF"
    UNREACHABLE_RULE = "UNREACHABLE_RULE"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: Code
    message: str
    span: tuple[int, int] = (0, 0)
    cycle_path: tuple[str, ...] = ()

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR


def format_diagnostic(diag: Diagnostic, filename: str = "<input>") -> str:
    line, col = diag.span
    return (f"{filename}:{line}:{col}: "
            f"{diag.severity.value}[{diag.code.value}]: {diag.message}")


def _error(code, message, span=(0, 0), cycle=()):
    return Diagnostic(Severity.ERROR, code, message, span, tuple(cycle))


def _warning(code, message, span=(0, 0)):
    return Diagnostic(Severity.WARNING, code, message, span)


# --- reference walking -------------------------------------------------------

def _iter_refs(elem: Element) -> Iterator[RuleRef]:
    if isinstance(elem, RuleRef):
        yield elem
    elif isinstance(elem, Annotated):
        yield from _iter_refs(elem.inner)
    elif isinstance(elem, Sequence):
        for item in elem.items:
            yield from _iter_refs(item)
    elif isinstance(elem, Alternation):
        for branch in elem.branches:
            yield from _iter_refs(branch)
    elif isinstance(elem, Repetition):
        yield from _iter_refs(elem.inner)


def _root_elements(ag: AnnotatedGrammar) -> Iterator[tuple[str, Element]]:
    for entry, body in ag.entry_points():
        yield entry, body
    for decl in ag.headers:
        yield decl.name, decl.key_pattern


# --- the four checks ---------------------------------------------------------

def check_no_omission(ag: AnnotatedGrammar) -> list[Diagnostic]:
    """One UNDEFINED_RULE per distinct referenced-but-undefined name."""
    out = []
    seen = set()

    def visit(elem, span):
        for ref in _iter_refs(elem):
            low = ref.name.lower()
            if low in seen:
                continue
            if abnf.resolve(ref.name, ag.base) is None:
                seen.add(low)
                out.append(_error(
                    Code.UNDEFINED_RULE,
                    f"rule {ref.name!r} is referenced but never defined",
                    span,
                ))
            else:
                seen.add(low)

    for rule in ag.base:
        visit(rule.body, rule.span)
    for name, body in _root_elements(ag):
        visit(body, (0, 0))
    return out


def check_no_duplicates(ag: AnnotatedGrammar) -> list[Diagnostic]:
    """One DUPLICATE_RULE per name defined more than once (case-insensitive),
    pointing at the second definition. Header key variants that collide
    across two headers after case folding are reported the same way."""
    out = []
    first: dict[str, str] = {}
    reported = set()
    for rule in ag.base.definitions:
        low = rule.name.lower()
        if low in first and low not in reported:
            reported.add(low)
            out.append(_error(
                Code.DUPLICATE_RULE,
                f"rule {rule.name!r} is defined more than once",
                rule.span,
            ))
        first.setdefault(low, rule.name)
    key_owner: dict[str, str] = {}
    for decl in ag.headers:
        for key in decl.keys:
            low = key.lower()
            owner = key_owner.get(low)
            if owner is not None and owner != decl.name:
                out.append(_error(
                    Code.DUPLICATE_RULE,
                    f"header key {key!r} of {decl.name!r} is already used by {owner!r}",
                    decl.span,
                ))
            key_owner.setdefault(low, decl.name)
    return out


def check_no_cycles(ag: AnnotatedGrammar) -> list[Diagnostic]:
    """One RULE_CYCLE per strongly connected component of size > 1 or
    self-loop in the rule-reference graph, with a witness path."""
    graph: dict[str, list[str]] = {}
    display: dict[str, str] = {}
    for rule in ag.base:
        low = rule.name.lower()
        display[low] = rule.name
        targets = []
        for ref in _iter_refs(rule.body):
            tlow = ref.name.lower()
            if ag.base.get(tlow) is not None:
                targets.append(tlow)
        graph[low] = targets

    sccs = _tarjan(graph)
    out = []
    for scc in sccs:
        members = set(scc)
        if len(scc) > 1 or scc[0] in graph.get(scc[0], ()):
            path = _witness_cycle(graph, scc[0], members)
            names = tuple(display[n] for n in path)
            rule = ag.base.get(scc[0])
            out.append(_error(
                Code.RULE_CYCLE,
                "rule cycle: " + " -> ".join(names),
                rule.span if rule else (0, 0),
                cycle=names,
            ))
    return out


def _tarjan(graph: dict[str, list[str]]) -> list[list[str]]:
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    counter = [0]
    sccs: list[list[str]] = []

    def strongconnect(v):
        # iterative Tarjan; grammars can be deep
        work = [(v, iter(graph.get(v, ())))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(graph.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                scc = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    scc.append(w)
                    if w == node:
                        break
                sccs.append(sorted(scc))

    for v in graph:
        if v not in index:
            strongconnect(v)
    return sccs


def _witness_cycle(graph, start, members) -> list[str]:
    # DFS within the SCC from start back to start
    stack = [(start, [start])]
    visited = set()
    while stack:
        node, path = stack.pop()
        for nxt in graph.get(node, ()):
            if nxt == start:
                return path + [start]
            if nxt in members and nxt not in visited:
                visited.add(nxt)
                stack.append((nxt, path + [nxt]))
    return [start, start]


_FINITE_LIMIT = 4096


def _finite_strings(elem, ag, stack=frozenset()) -> set[str] | None:
    """The finite set of strings `elem` derives, or None when unbounded,
    too large, or dependent on byte ranges wider than explicit sets."""
    if isinstance(elem, LiteralCI):
        return {elem.text}
    if isinstance(elem, CharCodes):
        try:
            return {elem.data.decode("ascii")}
        except UnicodeDecodeError:
            return None
    if isinstance(elem, CharRange):
        if elem.hi - elem.lo >= 16:
            return None
        return {chr(b) for b in range(elem.lo, elem.hi + 1)}
    if isinstance(elem, Annotated):
        return _finite_strings(elem.inner, ag, stack)
    if isinstance(elem, Alternation):
        out: set[str] = set()
        for branch in elem.branches:
            sub = _finite_strings(branch, ag, stack)
            if sub is None:
                return None
            out |= sub
            if len(out) > _FINITE_LIMIT:
                return None
        return out
    if isinstance(elem, Sequence):
        out = {""}
        for item in elem.items:
            sub = _finite_strings(item, ag, stack)
            if sub is None:
                return None
            out = {a + b for a in out for b in sub}
            if len(out) > _FINITE_LIMIT:
                return None
        return out
    if isinstance(elem, Repetition):
        if elem.max is None:
            return None
        sub = _finite_strings(elem.inner, ag, stack)
        if sub is None:
            return None
        out: set[str] = set()
        layer = {""}
        for i in range(elem.max):
            if i >= elem.min:
                out |= layer
            layer = {a + b for a in layer for b in sub}
            if len(layer) > _FINITE_LIMIT:
                return None
        out |= layer
        return out
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in stack:
            return None
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return None
        return _finite_strings(rule.body, ag, stack | {low})
    return None


def _digits_only(elem, ag, stack=frozenset()) -> bool:
    """True when every terminal reachable from `elem` is a decimal digit."""
    if isinstance(elem, LiteralCI):
        return elem.text.isascii() and elem.text.isdigit()
    if isinstance(elem, CharCodes):
        return all(0x30 <= b <= 0x39 for b in elem.data)
    if isinstance(elem, CharRange):
        return elem.lo >= 0x30 and elem.hi <= 0x39
    if isinstance(elem, Annotated):
        return _digits_only(elem.inner, ag, stack)
    if isinstance(elem, Sequence):
        return all(_digits_only(i, ag, stack) for i in elem.items)
    if isinstance(elem, Alternation):
        return all(_digits_only(b, ag, stack) for b in elem.branches)
    if isinstance(elem, Repetition):
        return _digits_only(elem.inner, ag, stack)
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in stack:
            return True
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return True
        return _digits_only(rule.body, ag, stack | {low})
    return False


def check_type_annotations(ag: AnnotatedGrammar) -> list[Diagnostic]:
    """Validate subfield shapes against what the annotated rules derive.

    For uint16/uint32 fields over a finite literal set, every string must
    parse as a decimal unsigned integer within the width; digit runs defer
    the range check to parse time; anything else is a TYPE_MISMATCH.
    """
    out = []
    for entry, table in ag.subfields.items():
        for sf in table.values():
            out.extend(_check_subfield(entry, sf, ag))
    for entry, body in ag.entry_points():
        out.extend(_warn_captures_under_unbounded(entry, body, ag))
    return out


def _check_subfield(entry, sf: Subfield, ag) -> list[Diagnostic]:
    where = f"{entry}.{sf.key}"
    out = []
    if (sf.declared_shape is not None and sf.def_shape is not None
            and sf.declared_shape is not sf.def_shape):
        out.append(_error(
            Code.TYPE_MISMATCH,
            f"subfield {where} is {sf.declared_shape.value} at its reference "
            f"but {sf.def_shape.value} at the rule definition",
        ))
    if sf.shape in (Shape.ENUM, Shape.UNION):
        if resolve_to_alternation(sf.element, ag) is None:
            out.append(_error(
                Code.TYPE_MISMATCH,
                f"subfield {where} is {sf.shape.value} but its rule has no alternation body",
            ))
    if sf.shape is Shape.ENUM and sf.children:
        out.append(_error(
            Code.TYPE_MISMATCH,
            f"enum subfield {where} cannot contain named subfields "
            f"({', '.join(sf.children)})",
        ))
    if sf.shape in (Shape.RAW, Shape.UINT16, Shape.UINT32) and sf.children:
        out.append(_error(
            Code.TYPE_MISMATCH,
            f"subfield {where} nests named subfields but is not struct or union",
        ))
    if sf.shape in (Shape.UINT16, Shape.UINT32):
        width = 16 if sf.shape is Shape.UINT16 else 32
        strings = _finite_strings(sf.element, ag)
        if strings is not None:
            bad = sorted(
                s for s in strings
                if not (s.isascii() and s.isdigit()) or int(s) >= (1 << width)
            )
            if bad:
                out.append(_error(
                    Code.TYPE_MISMATCH,
                    f"subfield {where} is {sf.shape.value} but derives "
                    f"{bad[0]!r}" + (f" (+{len(bad) - 1} more)" if len(bad) > 1 else ""),
                ))
        elif not _digits_only(sf.element, ag):
            # unbounded and not a pure digit run: cannot be numeric
            out.append(_error(
                Code.TYPE_MISMATCH,
                f"subfield {where} is {sf.shape.value} but its rule does not "
                f"derive numeric text",
            ))
        # unbounded digit runs defer the range check to parse time
    return out


def _warn_captures_under_unbounded(entry, body, ag) -> list[Diagnostic]:
    out = []

    def walk(elem, unbounded, stack):
        if isinstance(elem, Annotated):
            if unbounded:
                out.append(_warning(
                    Code.TYPE_MISMATCH,
                    f"subfield {entry}.{elem.name} sits under an unbounded repetition; "
                    f"captures report only the last iteration",
                ))
            walk(elem.inner, unbounded, stack)
        elif isinstance(elem, Sequence):
            for item in elem.items:
                walk(item, unbounded, stack)
        elif isinstance(elem, Alternation):
            for branch in elem.branches:
                walk(branch, unbounded, stack)
        elif isinstance(elem, Repetition):
            walk(elem.inner, unbounded or elem.max is None, stack)
        elif isinstance(elem, RuleRef):
            low = elem.name.lower()
            if low in stack:
                return
            rule = abnf.resolve(elem.name, ag.base)
            if rule is not None:
                walk(rule.body, unbounded, stack | {low})

    walk(body, False, frozenset())
    return out


# --- driver -------------------------------------------------------------------

def check_entry_points(ag: AnnotatedGrammar) -> list[Diagnostic]:
    out = []
    if ag.request_line is None:
        out.append(_error(Code.UNDEFINED_RULE, "no requestLine entry point defined"))
    if ag.status_line is None:
        out.append(_error(Code.UNDEFINED_RULE, "no statusLine entry point defined"))
    return out


def check_unreachable(ag: AnnotatedGrammar) -> list[Diagnostic]:
    reachable: set[str] = set()
    frontier: list[Element] = [body for _, body in _root_elements(ag)]
    while frontier:
        elem = frontier.pop()
        for ref in _iter_refs(elem):
            low = ref.name.lower()
            if low in reachable:
                continue
            reachable.add(low)
            rule = ag.base.get(low)
            if rule is not None:
                frontier.append(rule.body)
    out = []
    for rule in ag.base:
        if rule.name.lower() not in reachable:
            out.append(_warning(
                Code.UNREACHABLE_RULE,
                f"rule {rule.name!r} is never referenced from any entry point",
                rule.span,
            ))
    return out


def check_unresolved_refs(ag: AnnotatedGrammar) -> list[Diagnostic]:
    out = []
    for ref in iter_unresolved(ag):
        out.append(_error(
            Code.UNRESOLVED_REF,
            f"constraint references unknown field {'.'.join(ref.path)!r}",
            ref.span,
        ))
    return out


def verify_all(ag: AnnotatedGrammar) -> list[Diagnostic]:
    """All checks in fixed order; compilation proceeds iff no ERROR.

    The cycle check runs even when omissions exist (undefined references
    are simply absent edges) so one grammar can report both.
    """
    out = []
    out.extend(check_entry_points(ag))
    out.extend(check_no_omission(ag))
    out.extend(check_no_duplicates(ag))
    out.extend(check_no_cycles(ag))
    out.extend(check_type_annotations(ag))
    out.extend(check_unresolved_refs(ag))
    out.extend(check_unreachable(ag))
    return out


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.is_error for d in diags)
