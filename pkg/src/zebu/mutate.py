"""Grammar-driven mutation harness.

Valid base messages are derived from the grammar itself (repetition bounds
honored, alternation branches uniform, declared constraints repaired by
resampling). Invalid mutants come from three rule families: out-of-set
character replacement, invalid repetition counts, and constraint
violations. Torture mutants apply validity-preserving transforms (case
flips, extra legal whitespace, folding, boundary repetition counts).

Every mutant's ground-truth label is re-verified against the independent
reference validator before emission; unverified labels would corrupt the
detection-rate metric. Campaigns are deterministic: the RNG stream is
split per mutant index, so partial tallies merge without changing results.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import abnf, frontend, refcheck
from .abnf import Alternation, CharCodes, CharRange, LiteralCI, Repetition, RuleRef, Sequence
from .errors import ZebuError
from .frontend import (
    REQUEST_LINE,
    STATUS_LINE,
    Annotated,
    AnnotatedGrammar,
    Cmp,
    FieldRef,
    HeaderDecl,
    Shape,
    expr_to_text,
)


class Exhausted(ZebuError):
    """No mutant of the requested family exists for this derivation."""


class BudgetExhausted(ZebuError):
    """Constraint-aware resampling could not produce a valid base message."""


class MutRule(enum.Enum):
    CHARSET = "charset"
    REPETITION = "repetition"
    CONSTRAINT = "constraint"
    TORTURE = "torture"


class Position(enum.Enum):
    FIRST = "first"
    MIDDLE = "middle"
    LAST = "last"


INVALID_RULES = (MutRule.CHARSET, MutRule.REPETITION, MutRule.CONSTRAINT)


@dataclass
class Mutant:
    data: bytes
    rule: MutRule
    ground_truth: str  # "VALID" | "INVALID"
    provenance: str
    seed: str


# --- derivation --------------------------------------------------------------

@dataclass
class DNode:
    elem: object
    start: int
    end: int
    children: list = field(default_factory=list)
    branch: int | None = None
    count: int | None = None
    path: str | None = None

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class Part:
    kind: str                      # "command" | "header"
    decl: HeaderDecl | None
    key: bytes | None
    node: DNode | None
    value: bytes
    offset: int = 0                # absolute offset of the line
    value_offset: int = 0          # absolute offset of the value


@dataclass
class DerivationTree:
    ag: AnnotatedGrammar
    kind: str                      # "request" | "response"
    parts: list[Part]
    message: bytes = b""

    def assemble(self) -> None:
        chunks = []
        offset = 0
        for part in self.parts:
            part.offset = offset
            if part.kind == "command":
                part.value_offset = offset
                line = part.value
            else:
                part.value_offset = offset + len(part.key) + 2
                line = part.key + b": " + part.value
            chunks.append(line)
            chunks.append(b"\r\n")
            offset += len(line) + 2
        chunks.append(b"\r\n")
        self.message = b"".join(chunks)

    def entry_parts(self) -> dict[str, Part]:
        out = {}
        for part in self.parts:
            if part.kind == "command":
                key = REQUEST_LINE if self.kind == "request" else STATUS_LINE
                out.setdefault(key, part)
            else:
                out.setdefault(part.decl.name, part)
        return out

    def env_of(self, part: Part) -> dict:
        env = {}
        for node in part.node.walk():
            if node.path is not None:
                env[node.path] = (node.start, node.end, node.branch)
        return env


class _Deriver:
    def __init__(self, ag: AnnotatedGrammar, rng: random.Random, size_budget: int):
        self.ag = ag
        self.rng = rng
        self.size_budget = size_budget
        self._crlf_cache: dict[int, bool] = {}

    def derive_value(self, body) -> tuple[bytes, DNode]:
        out = bytearray()
        node = self._derive(body, out, ())
        return bytes(out), node

    def _derive(self, elem, out: bytearray, prefix) -> DNode:
        start = len(out)
        if isinstance(elem, LiteralCI):
            out += elem.text.encode("ascii")
            return DNode(elem, start, len(out))
        if isinstance(elem, CharCodes):
            out += elem.data
            return DNode(elem, start, len(out))
        if isinstance(elem, CharRange):
            pool = [b for b in range(elem.lo, elem.hi + 1) if b not in (0x0D, 0x0A)]
            out.append(self.rng.choice(pool) if pool else elem.lo)
            return DNode(elem, start, len(out))
        if isinstance(elem, RuleRef):
            rule = abnf.resolve(elem.name, self.ag.base)
            if rule is None:
                raise ZebuError(f"cannot derive undefined rule {elem.name!r}")
            child = self._derive(rule.body, out, prefix)
            return DNode(elem, start, len(out), [child])
        if isinstance(elem, Annotated):
            path = prefix + (elem.name,)
            child = self._derive(elem.inner, out, path)
            branch = _annotated_branch(child)
            return DNode(elem, start, len(out), [child],
                         branch=branch, path=".".join(path))
        if isinstance(elem, Sequence):
            children = [self._derive(i, out, prefix) for i in elem.items]
            return DNode(elem, start, len(out), children)
        if isinstance(elem, Alternation):
            indices = [i for i, b in enumerate(elem.branches)
                       if not self._may_crlf(b)]
            if not indices:
                indices = list(range(len(elem.branches)))
            i = self.rng.choice(indices)
            child = self._derive(elem.branches[i], out, prefix)
            return DNode(elem, start, len(out), [child], branch=i)
        if isinstance(elem, Repetition):
            count = self._pick_count(elem)
            children = []
            for _ in range(count):
                children.append(self._derive(elem.inner, out, prefix))
            return DNode(elem, start, len(out), children, count=count)
        raise TypeError(f"cannot derive {elem!r}")

    def _pick_count(self, elem: Repetition) -> int:
        # base messages stay fold-free; torture introduces folds later
        if self._may_crlf(elem.inner):
            return elem.min
        if elem.max is None:
            extra = 0
            while extra < self.size_budget and self.rng.random() < 0.5:
                extra += 1
            return elem.min + extra
        return self.rng.randint(elem.min, min(elem.max, elem.min + self.size_budget))

    def _may_crlf(self, elem) -> bool:
        key = id(elem)
        hit = self._crlf_cache.get(key)
        if hit is None:
            hit = _may_contain_crlf(elem, self.ag, frozenset())
            self._crlf_cache[key] = hit
        return hit


def _annotated_branch(node: DNode) -> int | None:
    # branch index for enum/union fields: unwrap rule refs to the alternation
    current = node
    while True:
        if isinstance(current.elem, Alternation):
            return current.branch
        if isinstance(current.elem, RuleRef) and current.children:
            current = current.children[0]
            continue
        return None


def _may_contain_crlf(elem, ag, stack) -> bool:
    if isinstance(elem, LiteralCI):
        return False
    if isinstance(elem, CharCodes):
        return any(b in (0x0D, 0x0A) for b in elem.data)
    if isinstance(elem, CharRange):
        return elem.lo <= 0x0D <= elem.hi or elem.lo <= 0x0A <= elem.hi
    if isinstance(elem, Annotated):
        return _may_contain_crlf(elem.inner, ag, stack)
    if isinstance(elem, Sequence):
        return any(_may_contain_crlf(i, ag, stack) for i in elem.items)
    if isinstance(elem, Alternation):
        return any(_may_contain_crlf(b, ag, stack) for b in elem.branches)
    if isinstance(elem, Repetition):
        return _may_contain_crlf(elem.inner, ag, stack)
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in stack:
            return False
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return False
        return _may_contain_crlf(rule.body, ag, stack | {low})
    return False


def _whitespace_only(elem, ag, stack=frozenset()) -> bool:
    if isinstance(elem, LiteralCI):
        return all(c in " \t" for c in elem.text)
    if isinstance(elem, CharCodes):
        return all(b in (0x20, 0x09, 0x0D, 0x0A) for b in elem.data)
    if isinstance(elem, CharRange):
        return all(b in (0x20, 0x09, 0x0D, 0x0A)
                   for b in range(elem.lo, elem.hi + 1))
    if isinstance(elem, Annotated):
        return False
    if isinstance(elem, Sequence):
        return all(_whitespace_only(i, ag, stack) for i in elem.items)
    if isinstance(elem, Alternation):
        return all(_whitespace_only(b, ag, stack) for b in elem.branches)
    if isinstance(elem, Repetition):
        return _whitespace_only(elem.inner, ag, stack)
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in stack:
            return True
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return False
        return _whitespace_only(rule.body, ag, stack | {low})
    return False


def _derive_message(ag: AnnotatedGrammar, rng: random.Random,
                    size_budget: int) -> DerivationTree:
    deriver = _Deriver(ag, rng, size_budget)
    kind = rng.choice(("request", "response"))
    entry_rule = ag.request_line if kind == "request" else ag.status_line
    parts = []
    value, node = deriver.derive_value(entry_rule.body)
    parts.append(Part("command", None, None, node, value))
    for decl in ag.headers:
        include = decl.mandatory_in.covers(kind) or rng.random() < 0.5
        if not include:
            continue
        copies = 2 if decl.multiple and rng.random() < 0.34 else 1
        for _ in range(copies):
            value, node = deriver.derive_value(decl.body)
            parts.append(Part("header", decl, decl.keys[0].encode("ascii"),
                              node, value))
    tree = DerivationTree(ag, kind, parts)
    tree.assemble()
    _repair(tree, deriver)
    return tree


def _repair(tree: DerivationTree, deriver: _Deriver, retries: int = 200) -> None:
    """Resample constrained entries until every declared constraint holds."""
    ag = tree.ag
    for _ in range(retries):
        bad_part = _first_violation(tree)
        if bad_part is None:
            ok, notes = refcheck.reference_validate(ag, tree.message)
            if ok:
                return
            raise BudgetExhausted(f"derived message unexpectedly invalid: {notes}")
        body = (bad_part.decl.body if bad_part.decl is not None
                else (ag.request_line if tree.kind == "request"
                      else ag.status_line).body)
        bad_part.value, bad_part.node = deriver.derive_value(body)
        tree.assemble()
    raise BudgetExhausted("constraint-aware resampling budget exhausted")


def _first_violation(tree: DerivationTree) -> Part | None:
    ag = tree.ag
    entry_parts = tree.entry_parts()

    for entry, part in entry_parts.items():
        env = tree.env_of(part)
        if refcheck._range_violations(ag, entry, env, part.value):
            return part

    def lookup(ref: FieldRef):
        entry = _ref_entry(ref, ag)
        if entry == frontend.BUILTIN_MESSAGE:
            return tree.kind.upper().encode(), True
        part = entry_parts.get(entry)
        if part is None:
            return None
        if entry in (REQUEST_LINE, STATUS_LINE):
            wanted = REQUEST_LINE if tree.kind == "request" else STATUS_LINE
            if entry != wanted:
                return None
        key = ".".join(ref.sub_path or ref.path[1:])
        return refcheck._env_value(ag, entry, tree.env_of(part), part.value, key)

    block = ag.request_block if tree.kind == "request" else ag.response_block
    local = [(decl, expr) for decl in ag.headers for expr in decl.local_constraints]
    for expr in block:
        if refcheck._eval_ref(expr, lookup) is False:
            return _part_for_expr(expr, tree, entry_parts)
    for decl, expr in local:
        if decl.name in entry_parts and refcheck._eval_ref(expr, lookup) is False:
            return entry_parts[decl.name]
    return None


def _ref_entry(ref: FieldRef, ag) -> str | None:
    if ref.entry is not None:
        return ref.entry
    head = ref.path[0]
    if head in (REQUEST_LINE, STATUS_LINE, frontend.BUILTIN_MESSAGE):
        return head
    decl = ag.header(head)
    return decl.name if decl else None


def _part_for_expr(expr, tree, entry_parts) -> Part | None:
    for ref in frontend.iter_field_refs(expr):
        entry = _ref_entry(ref, tree.ag)
        part = entry_parts.get(entry)
        if part is not None:
            return part
    return None


def derive_valid(ag: AnnotatedGrammar, seed, size_budget: int = 8) -> DerivationTree:
    """Random valid message honoring the grammar and all declared constraints."""
    rng = random.Random(f"derive:{seed}")
    return _derive_message(ag, rng, size_budget)


# --- mutation targets -----------------------------------------------------------

_TERMINALS = (LiteralCI, CharCodes, CharRange)


@dataclass
class _CharTarget:
    abs_start: int
    length: int
    valid_at: object  # callable(index) -> set[int]
    describe: str


def _charset_targets(tree: DerivationTree) -> list[_CharTarget]:
    out = []
    for part in tree.parts:
        if part.kind == "header":
            key = part.key
            out.append(_CharTarget(
                part.offset, len(key),
                lambda i, k=key: _case_pair(k[i]),
                f"key {key.decode('ascii')}"))
            colon_at = part.offset + len(key)
            out.append(_CharTarget(colon_at, 1, lambda i: {0x3A}, "key colon"))
            out.append(_CharTarget(colon_at + 1, 1, lambda i: {0x20, 0x09},
                                   "key delimiter space"))
        for node in part.node.walk():
            if not isinstance(node.elem, _TERMINALS) or node.end == node.start:
                continue
            elem = node.elem
            base = part.value_offset
            if isinstance(elem, LiteralCI):
                text = elem.text.encode("ascii")
                out.append(_CharTarget(
                    base + node.start, node.end - node.start,
                    lambda i, t=text: _case_pair(t[i]),
                    f"literal {elem.text!r}"))
            elif isinstance(elem, CharCodes):
                out.append(_CharTarget(
                    base + node.start, node.end - node.start,
                    lambda i, d=elem.data: {d[i]},
                    f"char codes {elem.data!r}"))
            else:
                out.append(_CharTarget(
                    base + node.start, 1,
                    lambda i, lo=elem.lo, hi=elem.hi: set(range(lo, hi + 1)),
                    f"char range {elem.lo:#04x}-{elem.hi:#04x}"))
    return out


def _case_pair(b: int) -> set[int]:
    if 0x41 <= b <= 0x5A:
        return {b, b + 32}
    if 0x61 <= b <= 0x7A:
        return {b, b - 32}
    return {b}


def _splice(data: bytes, start: int, end: int, insert: bytes) -> bytes:
    return data[:start] + insert + data[end:]


def mutate_charset(tree: DerivationTree, position: Position, seed,
                   retries: int = 40) -> Mutant:
    """Replace the first, middle, or last byte of one message terminal with
    a byte outside its valid set (CR/LF excluded); emit only if the whole
    mutant re-checks INVALID."""
    rng = random.Random(f"charset:{seed}")
    targets = _charset_targets(tree)
    if not targets:
        raise Exhausted("derivation has no terminals")
    for _ in range(retries):
        t = rng.choice(targets)
        if position is Position.FIRST:
            idx = 0
        elif position is Position.LAST:
            idx = t.length - 1
        else:
            idx = t.length // 2
        valid = t.valid_at(idx)
        pool = [b for b in range(256) if b not in valid and b not in (0x0D, 0x0A)]
        if not pool:
            continue
        replacement = rng.choice(pool)
        at = t.abs_start + idx
        data = _splice(tree.message, at, at + 1, bytes((replacement,)))
        ok, _ = refcheck.reference_validate(tree.ag, data)
        if not ok:
            return Mutant(
                data, MutRule.CHARSET, "INVALID",
                f"{position.value} byte of {t.describe} -> {replacement:#04x}",
                str(seed))
    raise Exhausted("no invalidating charset replacement found")


def _repetition_nodes(tree: DerivationTree):
    out = []
    for part in tree.parts:
        for node in part.node.walk():
            elem = node.elem
            if not isinstance(elem, Repetition):
                continue
            if elem.min == 0 and elem.max is None:
                continue
            out.append((part, node))
    return out


def mutate_repetition(tree: DerivationTree, seed, retries: int = 40) -> Mutant:
    """Rewrite one repetition's expansion to a count outside its bounds."""
    rng = random.Random(f"repetition:{seed}")
    candidates = _repetition_nodes(tree)
    if not candidates:
        raise Exhausted("no bounded repetition in this derivation")
    deriver = _Deriver(tree.ag, rng, size_budget=4)
    for _ in range(retries):
        part, node = rng.choice(candidates)
        elem: Repetition = node.elem
        if deriver._may_crlf(elem.inner):
            continue
        counts = []
        if elem.min > 0:
            counts.append(rng.randrange(0, elem.min))
        if elem.max is not None:
            extra = 1
            while extra < 4 and rng.random() < 0.4:
                extra += 1
            counts.append(elem.max + extra)
        if not counts:
            continue
        count = rng.choice(counts)
        buf = bytearray()
        for _ in range(count):
            deriver._derive(elem.inner, buf, ())
        at = part.value_offset + node.start
        data = _splice(tree.message, at, part.value_offset + node.end, bytes(buf))
        ok, _ = refcheck.reference_validate(tree.ag, data)
        if not ok:
            return Mutant(
                data, MutRule.REPETITION, "INVALID",
                f"repetition [{elem.min},{'inf' if elem.max is None else elem.max}]"
                f" expanded {count} times",
                str(seed))
    raise Exhausted("no invalidating repetition count found")


# --- constraint mutations ---------------------------------------------------------

def _exact_digit_count(elem, ag) -> int | None:
    """k when the element derives exactly k digits, None otherwise."""
    seen = set()
    while isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in seen:
            return None
        seen.add(low)
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return None
        elem = rule.body
    if isinstance(elem, Repetition) and elem.min == elem.max:
        return elem.min
    return None


def _range_targets(tree: DerivationTree):
    """Numeric fields with a violible bound: declared ranges, uint widths,
    and range-shaped block constraints."""
    ag = tree.ag
    out = []
    entry_parts = tree.entry_parts()
    for entry, part in entry_parts.items():
        table = ag.subfields.get(entry) or {}
        env = tree.env_of(part)
        for key, sf in table.items():
            if sf.shape not in (Shape.UINT16, Shape.UINT32) or key not in env:
                continue
            width = 16 if sf.shape is Shape.UINT16 else 32
            bound = frontend.declared_range(sf.element, ag)
            hi = bound.hi if bound is not None else (1 << width)
            strict = bound.hi_strict if bound is not None else True
            lo = bound.lo if bound is not None else 0
            out.append((part, entry, key, sf, lo, hi, strict))
    block = ag.request_block if tree.kind == "request" else ag.response_block
    for expr in block:
        parsed = _range_shape_of(expr)
        if parsed is None:
            continue
        ref, lo, hi, strict = parsed
        entry = _ref_entry(ref, ag)
        part = entry_parts.get(entry)
        if part is None:
            continue
        key = ".".join(ref.sub_path or ref.path[1:])
        sf = (ag.subfields.get(entry) or {}).get(key)
        if sf is None or key not in tree.env_of(part):
            continue
        out.append((part, entry, key, sf, lo, hi, strict))
    return out


def _range_shape_of(expr):
    """(ref, lo, hi, hi_strict) for `lo <= f && f < hi`-shaped constraints."""
    if not frontend.is_range_shaped(expr):
        return None
    refs = list(frontend.iter_field_refs(expr))
    if not refs:
        return None
    ref = refs[0]
    lo, hi, strict = 0, None, True
    items = expr.items if isinstance(expr, frontend.And) else (expr,)
    for item in items:
        if not isinstance(item, Cmp):
            return None
        lhs_int = isinstance(item.lhs, frontend.IntLit)
        lit = item.lhs.value if lhs_int else (
            item.rhs.value if isinstance(item.rhs, frontend.IntLit) else None)
        if lit is None:
            return None
        op = item.op
        if not lhs_int:
            op = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}.get(op, op)
        # now: lit <op> field
        if op in ("<", "<="):
            lo = max(lo, lit if op == "<=" else lit + 1)
        elif op in (">", ">="):
            hi = lit if op == ">=" else lit - 1
            strict = False
        else:
            return None
    if hi is None:
        return None
    return ref, lo, hi, strict


def mutate_constraint(ag: AnnotatedGrammar, tree: DerivationTree, seed,
                      retries: int = 40) -> Mutant:
    """Violate a declared constraint while staying grammar-syntactic where
    the strategy allows: out-of-range rewrite of a checked numeric field,
    deletion of a mandatory header, duplication of a multiple=false header,
    or a cross-field equality broken on one side."""
    rng = random.Random(f"constraint:{seed}")
    strategies = []
    entry_parts = tree.entry_parts()

    for target in _range_targets(tree):
        strategies.append(("range", target))
    for decl in ag.headers:
        if decl.mandatory_in.covers(tree.kind) and decl.name in entry_parts:
            strategies.append(("delete", decl))
        if not decl.multiple and decl.name in entry_parts:
            strategies.append(("duplicate", decl))
    block = ag.request_block if tree.kind == "request" else ag.response_block
    for expr in block:
        if (isinstance(expr, Cmp) and expr.op == "=="
                and isinstance(expr.lhs, FieldRef) and isinstance(expr.rhs, FieldRef)):
            strategies.append(("equality", expr))
    if not strategies:
        raise Exhausted("grammar declares no violible constraints")

    deriver = _Deriver(ag, rng, size_budget=4)
    for _ in range(retries):
        kind, payload = rng.choice(strategies)
        data = None
        describe = ""
        if kind == "range":
            part, entry, key, sf, lo, hi, strict = payload
            span = tree.env_of(part).get(key)
            bad = _out_of_range_text(rng, ag, sf, lo, hi, strict)
            if bad is None or span is None:
                continue
            at = part.value_offset + span[0]
            data = _splice(tree.message, at, part.value_offset + span[1], bad)
            describe = f"{entry}.{key} rewritten to {bad.decode('ascii')}"
        elif kind == "delete":
            decl = payload
            parts = [p for p in tree.parts
                     if p.kind == "header" and p.decl.name == decl.name]
            keep = [p for p in tree.parts if p not in parts[:1]]
            clone = DerivationTree(ag, tree.kind, keep)
            clone.assemble()
            data = clone.message
            describe = f"mandatory header {decl.name} deleted"
        elif kind == "duplicate":
            decl = payload
            out = []
            for p in tree.parts:
                out.append(p)
                if p.kind == "header" and p.decl.name == decl.name:
                    out.append(p)
            clone = DerivationTree(ag, tree.kind, list(out))
            clone.assemble()
            data = clone.message
            describe = f"header {decl.name} duplicated"
        else:
            side = rng.choice((payload.lhs, payload.rhs))
            entry = _ref_entry(side, ag)
            part = entry_parts.get(entry)
            if part is None:
                continue
            key = ".".join(side.sub_path or side.path[1:])
            env = tree.env_of(part)
            hit = env.get(key)
            sf = (ag.subfields.get(entry) or {}).get(key)
            if hit is None or sf is None:
                continue
            start, end, branch = hit
            alt = frontend.resolve_to_alternation(sf.element, ag)
            if alt is None or branch is None or len(alt.branches) < 2:
                continue
            choices = [i for i in range(len(alt.branches)) if i != branch]
            new_branch = rng.choice(choices)
            buf = bytearray()
            deriver._derive(alt.branches[new_branch], buf, ())
            at = part.value_offset + start
            data = _splice(tree.message, at, part.value_offset + end, bytes(buf))
            describe = (f"{entry}.{key} rewritten to alternation branch {new_branch} "
                        f"breaking {expr_to_text(payload)}")
        if data is None:
            continue
        ok, _ = refcheck.reference_validate(ag, data)
        if not ok:
            return Mutant(data, MutRule.CONSTRAINT, "INVALID", describe, str(seed))
    raise Exhausted("no constraint violation could be produced")


def _out_of_range_text(rng, ag, sf: frontend.Subfield, lo, hi, strict) -> bytes | None:
    exact = _exact_digit_count(sf.element, ag)
    candidates = []
    top = hi if strict else hi + 1
    if exact is not None:
        limit = 10 ** exact
        if top < limit:
            candidates.extend(v for v in (top, top + 1, limit - 1) if v < limit)
        if lo > 0:
            candidates.append(rng.randrange(0, lo))
    else:
        candidates.extend((top, top + rng.randrange(0, 1000)))
        if lo > 0:
            candidates.append(rng.randrange(0, lo))
    if not candidates:
        return None
    value = rng.choice(candidates)
    text = str(value)
    if exact is not None:
        text = text.zfill(exact)
        if len(text) != exact:
            return None
    return text.encode("ascii")


# --- torture mutations -----------------------------------------------------------

def _ws_points(tree: DerivationTree):
    """(part, start, end, in_value) spans derived from whitespace-only
    grammar positions, plus the delimiter points around the colon."""
    out = []
    for part in tree.parts:
        if part.kind == "header":
            colon_at = part.offset + len(part.key)
            out.append((part, colon_at, colon_at, False))  # before the colon
            out.append((part, part.value_offset - 1, part.value_offset - 1, False))
        for node in part.node.walk():
            if isinstance(node.elem, (RuleRef, Repetition, Sequence, Alternation)):
                if _whitespace_only(node.elem, tree.ag):
                    out.append((part,
                                part.value_offset + node.start,
                                part.value_offset + node.end,
                                part.kind == "header"))
    return out


def _literal_spans(tree: DerivationTree):
    out = []
    for part in tree.parts:
        if part.kind == "header":
            out.append((part.offset, part.offset + len(part.key)))
        for node in part.node.walk():
            if isinstance(node.elem, LiteralCI) and node.end > node.start:
                out.append((part.value_offset + node.start,
                            part.value_offset + node.end))
    return out


def mutate_torture(ag: AnnotatedGrammar, tree: DerivationTree, seed,
                   retries: int = 40) -> Mutant:
    """Validity-preserving corner-case transforms: case flips inside
    case-insensitive literals, extra legal whitespace, folds at linear-
    whitespace points, and repetition counts pushed to exact bounds.
    Re-verified VALID before emission; the identity transform is the
    fallback, so this never exhausts."""
    rng = random.Random(f"torture:{seed}")
    for _ in range(retries):
        data = tree.message
        edits = []  # (start, end, replacement) applied right-to-left
        names = []
        n_transforms = rng.randint(1, 3)
        for _ in range(n_transforms):
            choice = rng.randrange(4)
            if choice == 0:
                spans = _literal_spans(tree)
                if not spans:
                    continue
                s, e = rng.choice(spans)
                flipped = bytes(
                    (b ^ 0x20) if (0x41 <= b <= 0x5A or 0x61 <= b <= 0x7A)
                    and rng.random() < 0.6 else b
                    for b in data[s:e])
                edits.append((s, e, flipped))
                names.append("case-flip")
            elif choice == 1:
                points = _ws_points(tree)
                if not points:
                    continue
                part, s, e, _ = rng.choice(points)
                run = bytes(rng.choice((0x20, 0x09))
                            for _ in range(rng.randint(1, 3)))
                edits.append((s, s, run))
                names.append("extra-whitespace")
            elif choice == 2:
                points = [p for p in _ws_points(tree) if p[3] and p[2] > p[1]]
                if not points:
                    continue
                part, s, e, _ = rng.choice(points)
                fold = b"\r\n" + bytes(rng.choice((0x20, 0x09))
                                       for _ in range(rng.randint(1, 2)))
                edits.append((s, e, fold))
                names.append("fold")
            else:
                bounded = [(p, nd) for p, nd in _repetition_nodes(tree)
                           if not _may_contain_crlf(nd.elem.inner, ag, frozenset())]
                if not bounded:
                    continue
                part, node = rng.choice(bounded)
                elem: Repetition = node.elem
                count = elem.min if (elem.max is None or rng.random() < 0.5) else elem.max
                deriver = _Deriver(ag, rng, size_budget=2)
                buf = bytearray()
                for _ in range(count):
                    deriver._derive(elem.inner, buf, ())
                edits.append((part.value_offset + node.start,
                              part.value_offset + node.end, bytes(buf)))
                names.append(f"boundary-repetition({count})")
        if not edits:
            return Mutant(tree.message, MutRule.TORTURE, "VALID",
                          "identity", str(seed))
        # drop overlapping edits, apply right-to-left so offsets stay valid
        edits.sort(key=lambda t: t[0], reverse=True)
        pruned = []
        prev_start = None
        for s, e, rep in edits:
            if prev_start is not None and e > prev_start:
                continue
            pruned.append((s, e, rep))
            prev_start = s
        for s, e, rep in pruned:
            data = _splice(data, s, e, rep)
        ok, _ = refcheck.reference_validate(ag, data)
        if ok:
            return Mutant(data, MutRule.TORTURE, "VALID",
                          "+".join(sorted(set(names))), str(seed))
    return Mutant(tree.message, MutRule.TORTURE, "VALID", "identity", str(seed))


# --- campaigns ---------------------------------------------------------------------

DEFAULT_MIX = {MutRule.CHARSET: 1.0, MutRule.REPETITION: 1.0,
               MutRule.CONSTRAINT: 1.0, MutRule.TORTURE: 1.0}

_POSITIONS = (Position.FIRST, Position.MIDDLE, Position.LAST)


@dataclass
class RuleTally:
    emitted: int = 0
    detected: int = 0
    missed: int = 0


@dataclass
class MutationReport:
    per_rule: dict = field(default_factory=dict)
    false_rejects: int = 0
    total: int = 0
    seed: object = None
    positions: set = field(default_factory=set)
    constraints: set = field(default_factory=set)

    def tally(self, rule: MutRule) -> RuleTally:
        return self.per_rule.setdefault(rule.value, RuleTally())

    @property
    def missed(self) -> int:
        return sum(t.missed for t in self.per_rule.values())

    def merge(self, other: "MutationReport") -> None:
        for rule, tally in other.per_rule.items():
            mine = self.per_rule.setdefault(rule, RuleTally())
            mine.emitted += tally.emitted
            mine.detected += tally.detected
            mine.missed += tally.missed
        self.false_rejects += other.false_rejects
        self.total += other.total
        self.positions |= other.positions
        self.constraints |= other.constraints

    def render(self) -> str:
        lines = [f"{'rule':<12} {'emitted':>8} {'detected':>9} {'missed':>7}"]
        for rule in ("charset", "repetition", "constraint"):
            t = self.per_rule.get(rule, RuleTally())
            lines.append(f"{rule:<12} {t.emitted:>8} {t.detected:>9} {t.missed:>7}")
        t = self.per_rule.get("torture", RuleTally())
        lines.append(f"{'torture':<12} {t.emitted:>8} {'-':>9} {'-':>7}")
        lines.append(f"total {self.total}  missed {self.missed}  "
                     f"falseRejects {self.false_rejects}  seed {self.seed}")
        return "\n".join(lines) + "\n"


def _weighted_rule(rng: random.Random, mix: dict) -> MutRule:
    rules = [r for r in MutRule if mix.get(r, 0) > 0]
    weights = [mix[r] for r in rules]
    return rng.choices(rules, weights=weights, k=1)[0]


def make_mutant(ag: AnnotatedGrammar, index: int, seed, mix=None,
                size_budget: int = 8) -> Mutant:
    """Deterministic mutant for (grammar, seed, index): fresh valid base,
    weighted rule choice, fallback to the next family on exhaustion."""
    mix = DEFAULT_MIX if mix is None else mix
    mutant_seed = f"{seed}:{index}"
    rng = random.Random(f"rule:{mutant_seed}")
    tree = _derive_message(ag, random.Random(f"base:{mutant_seed}"), size_budget)
    first = _weighted_rule(rng, mix)
    order = [first] + [r for r in (*INVALID_RULES, MutRule.TORTURE) if r is not first]
    for rule in order:
        try:
            if rule is MutRule.CHARSET:
                position = _POSITIONS[index % 3]
                mutant = mutate_charset(tree, position, mutant_seed)
            elif rule is MutRule.REPETITION:
                mutant = mutate_repetition(tree, mutant_seed)
            elif rule is MutRule.CONSTRAINT:
                mutant = mutate_constraint(ag, tree, mutant_seed)
            else:
                mutant = mutate_torture(ag, tree, mutant_seed)
            return mutant
        except Exhausted:
            continue
    raise Exhausted(f"no mutation family applicable at index {index}")


def run_campaign(ag: AnnotatedGrammar, target, n: int, seed, mix=None,
                 size_budget: int = 8, sink=None,
                 index_range=None) -> MutationReport:
    """Feed n mutants to `target` (bytes -> accepted bool) and tally.

    Deterministic for fixed (grammar, n, seed, mix); `index_range` runs a
    sub-range for parallel execution, and partial reports merge exactly.
    """
    if n <= 0:
        raise ZebuError("campaign size must be positive")
    mix = DEFAULT_MIX if mix is None else mix
    report = MutationReport(seed=seed)
    for index in index_range if index_range is not None else range(n):
        mutant = make_mutant(ag, index, seed, mix, size_budget)
        accepted = target(mutant.data)
        tally = report.tally(mutant.rule)
        tally.emitted += 1
        report.total += 1
        if mutant.ground_truth == "INVALID":
            if accepted:
                tally.missed += 1
            else:
                tally.detected += 1
        elif not accepted:
            report.false_rejects += 1
        if mutant.rule is MutRule.CHARSET:
            report.positions.add(mutant.provenance.split(" ", 1)[0])
        if mutant.rule is MutRule.CONSTRAINT:
            report.constraints.add(mutant.provenance)
        if sink is not None:
            sink(index, mutant)
    return report


def parse_mix(text: str) -> dict:
    """Parse `charset=1,repetition=2,...`; unnamed rules get weight 0."""
    mix = {r: 0.0 for r in MutRule}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, value = item.partition("=")
        try:
            rule = MutRule(name.strip())
        except ValueError:
            raise ZebuError(f"unknown mutation rule {name.strip()!r}") from None
        mix[rule] = float(value) if value else 1.0
    if not any(mix.values()):
        raise ZebuError("mutation mix selects no rules")
    return mix
