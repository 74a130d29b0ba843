"""Annotation layer on top of ABNF: entry points, constraints, typed subfields.

A `.zebu` file is a list of ABNF rules where some rules are lifted into
parser entry points:

    protocol sip3261
    requestLine = Method:method SP Request-URI:uri:struct:lazy SP SIP-Version
    statusLine  = SIP-Version SP Status-Code:code:uint16 SP Reason-Phrase
    header CSeq = CSeq-Num:number:uint32 LWS Method:method
    header To { "To" / "t" } = to-spec { mandatory; readonly }

    request {
        mandatory Max-Forwards;
        CSeq.method == requestLine.method;
    }
    range CSeq-Num = 0 <= x < 2147483648

Subfields are named with a postfix on the annotated element,
`Elem:name[:shape][:lazy]` with shape one of uint16/uint32/struct/union/enum;
a shape may instead be given at a rule's definition via `{ enum }`.
Annotation blocks use `;` as the item separator, so `;` comments are not
recognized inside braces. The full dialect grammar lives in docs/dialect.md.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import abnf
from .abnf import (
    Alternation,
    CharCodes,
    CharRange,
    Element,
    ElementParser,
    Grammar,
    LiteralCI,
    Repetition,
    Rule,
    RuleRef,
    Scanner,
    Sequence,
)
from .errors import SourceError, ZebuError


class ZebuSyntaxError(SourceError):
    pass


class DuplicateEntryPoint(SourceError):
    pass


class UnknownAnnotation(SourceError):
    pass


class DuplicateSubfield(SourceError):
    pass


class UnresolvedFieldRef(ZebuError):
    def __init__(self, path: tuple[str, ...], span):
        super().__init__(f"unresolved field reference {'.'.join(path)!r}")
        self.path = path
        self.span = span


class Shape(enum.Enum):
    RAW = "raw"
    UINT16 = "uint16"
    UINT32 = "uint32"
    STRUCT = "struct"
    UNION = "union"
    ENUM = "enum"


class Mandatory(enum.Enum):
    NONE = "none"
    REQUEST = "request"
    RESPONSE = "response"
    BOTH = "both"

    def covers(self, kind: str) -> bool:
        return self is Mandatory.BOTH or self.value == kind


_SHAPE_WORDS = {s.value: s for s in Shape if s is not Shape.RAW}


# --- annotated element ------------------------------------------------------

@dataclass(frozen=True)
class Annotated:
    """An element carrying a subfield annotation (name, optional shape, lazy)."""
    inner: Element
    name: str
    shape: Shape | None
    lazy: bool


# --- constraint expressions -------------------------------------------------

@dataclass
class FieldRef:
    path: tuple[str, ...]
    span: tuple[int, int]
    entry: str | None = None          # bound entry key, set by resolution
    sub_path: tuple[str, ...] = ()    # bound path within the entry

    @property
    def bound(self) -> bool:
        return self.entry is not None


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class StrLit:
    value: str


@dataclass
class Cmp:
    op: str  # == != < <= > >=
    lhs: object
    rhs: object


@dataclass
class And:
    items: tuple


@dataclass
class Or:
    items: tuple


@dataclass
class Not:
    item: object


ConstraintExpr = object  # Cmp | And | Or | Not


def iter_field_refs(expr):
    if isinstance(expr, FieldRef):
        yield expr
    elif isinstance(expr, Cmp):
        yield from iter_field_refs(expr.lhs)
        yield from iter_field_refs(expr.rhs)
    elif isinstance(expr, (And, Or)):
        for item in expr.items:
            yield from iter_field_refs(item)
    elif isinstance(expr, Not):
        yield from iter_field_refs(expr.item)


def expr_to_text(expr) -> str:
    if isinstance(expr, FieldRef):
        return ".".join(expr.path)
    if isinstance(expr, IntLit):
        return str(expr.value)
    if isinstance(expr, StrLit):
        return f'"{expr.value}"'
    if isinstance(expr, Cmp):
        return f"{expr_to_text(expr.lhs)} {expr.op} {expr_to_text(expr.rhs)}"
    if isinstance(expr, And):
        return " && ".join(_paren(i, (Or,)) for i in expr.items)
    if isinstance(expr, Or):
        return " || ".join(expr_to_text(i) for i in expr.items)
    if isinstance(expr, Not):
        return f"!({expr_to_text(expr.item)})"
    raise TypeError(repr(expr))


def _paren(expr, kinds) -> str:
    text = expr_to_text(expr)
    return f"({text})" if isinstance(expr, kinds) else text


def is_range_shaped(expr) -> bool:
    """True when the expression constrains exactly one field against
    integer literals only; violations of such constraints report as RANGE."""
    refs = {".".join(r.path) for r in iter_field_refs(expr)}
    if len(refs) != 1:
        return False
    return _int_only(expr)


def _int_only(expr) -> bool:
    if isinstance(expr, (FieldRef, IntLit)):
        return True
    if isinstance(expr, StrLit):
        return False
    if isinstance(expr, Cmp):
        return _int_only(expr.lhs) and _int_only(expr.rhs)
    if isinstance(expr, (And, Or)):
        return all(_int_only(i) for i in expr.items)
    if isinstance(expr, Not):
        return _int_only(expr.item)
    return False


# --- declarations -----------------------------------------------------------

@dataclass(frozen=True)
class RangeBound:
    lo: int
    hi: int
    hi_strict: bool

    def holds(self, value: int) -> bool:
        if value < self.lo:
            return False
        return value < self.hi if self.hi_strict else value <= self.hi


@dataclass
class HeaderDecl:
    name: str
    key_pattern: Element
    keys: tuple[str, ...]
    body: Element
    mandatory_in: Mandatory = Mandatory.NONE
    multiple: bool = False
    readonly: bool = False
    local_constraints: list = field(default_factory=list)
    span: tuple[int, int] = (0, 0)


@dataclass
class Subfield:
    name: str
    path: tuple[str, ...]
    shape: Shape
    lazy: bool
    element: Element
    span: tuple[int, int]
    declared_shape: Shape | None = None
    def_shape: Shape | None = None
    children: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return ".".join(self.path)


SubfieldTable = "dict[str, Subfield]"

REQUEST_LINE = "requestLine"
STATUS_LINE = "statusLine"


@dataclass
class AnnotatedGrammar:
    base: Grammar
    protocol: str = "zebu"
    request_line: Rule | None = None
    status_line: Rule | None = None
    headers: list[HeaderDecl] = field(default_factory=list)
    request_block: list = field(default_factory=list)
    response_block: list = field(default_factory=list)
    range_constraints: dict[str, RangeBound] = field(default_factory=dict)
    rule_shapes: dict[str, tuple[Shape, tuple[int, int]]] = field(default_factory=dict)
    subfields: dict[str, dict[str, Subfield]] = field(default_factory=dict)

    def header(self, name: str) -> HeaderDecl | None:
        low = name.lower()
        for decl in self.headers:
            if decl.name.lower() == low:
                return decl
        return None

    def entry_points(self):
        if self.request_line is not None:
            yield REQUEST_LINE, self.request_line.body
        if self.status_line is not None:
            yield STATUS_LINE, self.status_line.body
        for decl in self.headers:
            yield decl.name, decl.body

    def entry_table(self, entry: str) -> dict[str, Subfield] | None:
        if entry in self.subfields:
            return self.subfields[entry]
        decl = self.header(entry)
        return self.subfields.get(decl.name) if decl else None

    def all_constraints(self):
        yield from self.request_block
        yield from self.response_block
        for decl in self.headers:
            yield from decl.local_constraints


# --- subfield collection ----------------------------------------------------

def rule_def_shape(elem: Element, ag: AnnotatedGrammar) -> Shape | None:
    """Shape attached at the definition of the rule `elem` references, if any."""
    if isinstance(elem, RuleRef):
        hit = ag.rule_shapes.get(elem.name.lower())
        if hit:
            return hit[0]
    return None


def collect_subfields(body: Element, ag: AnnotatedGrammar) -> dict[str, Subfield]:
    """Walk an entry-point body, expanding rule references, and return the
    full subfield namespace keyed by dotted path, in declaration order.

    Duplicate names are rejected at the second declaration unless the two
    sites lie in disjoint branches of one alternation (in which case they
    merge and must agree on shape and laziness).
    """
    return _collect(body, (), ag, frozenset())


def _collect(elem, prefix, ag, stack):
    if isinstance(elem, Annotated):
        path = prefix + (elem.name,)
        inner = _collect(elem.inner, path, ag, stack)
        def_shape = rule_def_shape(elem.inner, ag)
        if elem.shape is not None and def_shape is not None and elem.shape is not def_shape:
            shape = elem.shape  # conflicting declaration; the verifier reports it
        else:
            shape = elem.shape or def_shape or Shape.RAW
        sf = Subfield(
            name=elem.name,
            path=path,
            shape=shape,
            lazy=elem.lazy,
            element=elem.inner,
            span=(0, 0),
            declared_shape=elem.shape,
            def_shape=def_shape,
            children=tuple(s.name for s in inner.values() if len(s.path) == len(path) + 1),
        )
        out = {sf.key: sf}
        out.update(inner)
        return out
    if isinstance(elem, Sequence):
        out = {}
        for item in elem.items:
            _merge_strict(out, _collect(item, prefix, ag, stack))
        return out
    if isinstance(elem, Alternation):
        out = {}
        for branch in elem.branches:
            _merge_branches(out, _collect(branch, prefix, ag, stack))
        return out
    if isinstance(elem, Repetition):
        return _collect(elem.inner, prefix, ag, stack)
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in stack:
            return {}
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return {}
        return _collect(rule.body, prefix, ag, stack | {low})
    return {}


def _merge_strict(out, new):
    for key, sf in new.items():
        if key in out:
            raise DuplicateSubfield(f"duplicate subfield name {key!r}")
        out[key] = sf


def _merge_branches(out, new):
    for key, sf in new.items():
        old = out.get(key)
        if old is None:
            out[key] = sf
            continue
        if old.shape is not sf.shape or old.lazy != sf.lazy:
            raise DuplicateSubfield(
                f"subfield {key!r} redeclared across alternation branches "
                f"with a different shape or laziness"
            )
        merged_children = old.children + tuple(c for c in sf.children if c not in old.children)
        old.children = merged_children


def branch_child_names(alt: Alternation, path, ag: AnnotatedGrammar) -> list[tuple[str, ...]]:
    """Direct child subfield names contributed by each alternation branch."""
    result = []
    for branch in alt.branches:
        table = _collect(branch, path, ag, frozenset())
        result.append(tuple(s.name for s in table.values() if len(s.path) == len(path) + 1))
    return result


def declared_range(elem: Element, ag: AnnotatedGrammar) -> RangeBound | None:
    """The range directive applying to `elem`, found by following its
    rule-reference chain; None when no directive names a rule on the chain."""
    seen = set()
    while isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in seen:
            return None
        seen.add(low)
        bound = ag.range_constraints.get(low)
        if bound is not None:
            return bound
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return None
        elem = rule.body
    return None


def resolve_to_alternation(elem: Element, ag: AnnotatedGrammar) -> Alternation | None:
    """Follow rule references until an alternation body is found (for
    enum/union subfields); None when the element cannot supply one."""
    seen = set()
    while True:
        if isinstance(elem, Alternation):
            return elem
        if isinstance(elem, RuleRef):
            low = elem.name.lower()
            if low in seen:
                return None
            seen.add(low)
            rule = abnf.resolve(elem.name, ag.base)
            if rule is None:
                return None
            elem = rule.body
            continue
        return None


def terminals_all_ci(elem: Element, ag: AnnotatedGrammar, _stack=frozenset()) -> bool:
    """True when every terminal reachable from `elem` is a case-insensitive
    literal; governs case-insensitive string comparison in constraints."""
    if isinstance(elem, LiteralCI):
        return True
    if isinstance(elem, (CharCodes, CharRange)):
        return False
    if isinstance(elem, Annotated):
        return terminals_all_ci(elem.inner, ag, _stack)
    if isinstance(elem, Sequence):
        return all(terminals_all_ci(i, ag, _stack) for i in elem.items)
    if isinstance(elem, Alternation):
        return all(terminals_all_ci(b, ag, _stack) for b in elem.branches)
    if isinstance(elem, Repetition):
        return terminals_all_ci(elem.inner, ag, _stack)
    if isinstance(elem, RuleRef):
        low = elem.name.lower()
        if low in _stack:
            return True
        rule = abnf.resolve(elem.name, ag.base)
        if rule is None:
            return True
        return terminals_all_ci(rule.body, ag, _stack | {low})
    return False


# --- parsing ----------------------------------------------------------------

class _ZebuElements(ElementParser):
    def postfix(self, elem: Element) -> Element:
        s = self.s
        if s.peek() != ":":
            return elem
        s.take()
        name = s.take_name("subfield name")
        shape = None
        lazy = False
        while s.peek() == ":":
            s.take()
            word = s.take_name("subfield tag")
            if word in _SHAPE_WORDS:
                if shape is not None:
                    s.error(f"subfield {name!r} given two shapes")
                shape = _SHAPE_WORDS[word]
            elif word == "lazy":
                lazy = True
            else:
                raise UnknownAnnotation(f"unknown subfield tag {word!r}", *s.location())
        return Annotated(elem, name, shape, lazy)


_HEADER_FLAGS = ("mandatory", "multiple", "readonly")


class _ZebuParser:
    def __init__(self, source: str):
        self.s = Scanner(source)
        self.elements = _ZebuElements(self.s)
        self.ag = AnnotatedGrammar(base=Grammar())
        self._protocol_seen = False
        self._mandatory_decls: list[tuple[str, str, tuple[int, int]]] = []

    def parse(self) -> AnnotatedGrammar:
        s = self.s
        while True:
            s.skip_blank()
            if s.at_end():
                break
            span = s.location()
            name = s.take_name("rule or directive name")
            s.skip_inline()
            if name == "protocol":
                self._parse_protocol(span)
            elif name in (REQUEST_LINE, STATUS_LINE):
                self._parse_command_line(name, span)
            elif name == "header":
                self._parse_header(span)
            elif name in ("request", "response") and s.peek() == "{":
                self._parse_kind_block(name)
            elif name == "range":
                self._parse_range(span)
            else:
                self._parse_plain_rule(name, span)
        self._finish()
        return self.ag

    # directive parsers ----------------------------------------------------

    def _parse_protocol(self, span):
        if self._protocol_seen:
            raise ZebuSyntaxError("duplicate protocol directive", *span)
        self.ag.protocol = self.s.take_name("protocol name")
        self._protocol_seen = True
        self._end_of_declaration()

    def _parse_command_line(self, which, span):
        s = self.s
        s.expect("=", "'=' after entry point name")
        s.skip_inline()
        body = self.elements.parse_alternation()
        constraints = self._maybe_annotation_block(allow_flags=False, allow_exprs=True)
        rule = Rule(which, body, span)
        if which == REQUEST_LINE:
            if self.ag.request_line is not None:
                raise DuplicateEntryPoint("second requestLine declaration", *span)
            self.ag.request_line = rule
            self.ag.request_block.extend(constraints["exprs"])
        else:
            if self.ag.status_line is not None:
                raise DuplicateEntryPoint("second statusLine declaration", *span)
            self.ag.status_line = rule
            self.ag.response_block.extend(constraints["exprs"])
        self._end_of_declaration()

    def _parse_header(self, span):
        s = self.s
        name = s.take_name("header name")
        s.skip_inline()
        key_pattern = None
        if s.peek() == "{":
            s.take()
            self._skip_block_ws()
            key_pattern = self.elements.parse_alternation()
            self._skip_block_ws()
            s.expect("}", "'}' closing the key variants")
            s.skip_inline()
        s.expect("=", "'=' after header name")
        s.skip_inline()
        body = self.elements.parse_alternation()
        block = self._maybe_annotation_block(allow_flags=True, allow_exprs=True)
        if self.ag.header(name) is not None:
            raise DuplicateEntryPoint(f"second declaration of header {name!r}", *span)
        if key_pattern is None:
            key_pattern = LiteralCI(name)
        keys = _extract_keys(key_pattern, span)
        decl = HeaderDecl(
            name=name,
            key_pattern=key_pattern,
            keys=keys,
            body=body,
            mandatory_in=Mandatory.BOTH if block["mandatory"] else Mandatory.NONE,
            multiple=block["multiple"],
            readonly=block["readonly"],
            local_constraints=block["exprs"],
            span=span,
        )
        self.ag.headers.append(decl)
        self._end_of_declaration()

    def _parse_kind_block(self, kind):
        s = self.s
        s.expect("{", "'{'")
        exprs = []
        while True:
            self._skip_block_ws()
            if s.eat("}"):
                break
            if s.at_end():
                s.error("unterminated block")
            save = s.pos
            if s.peek() in "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz":
                word_span = s.location()
                word = s.take_name()
                s.skip_inline()
                if word == "mandatory":
                    target = s.take_name("header name")
                    self._mandatory_decls.append((kind, target, word_span))
                    self._end_of_block_item()
                    continue
                s.pos = save
            exprs.append(self._parse_expr())
            self._end_of_block_item()
        if kind == "request":
            self.ag.request_block.extend(exprs)
        else:
            self.ag.response_block.extend(exprs)

    def _parse_range(self, span):
        s = self.s
        rule = s.take_name("rule name")
        s.skip_inline()
        s.expect("=", "'='")
        s.skip_inline()
        lo = self._take_integer()
        s.skip_inline()
        if not (s.eat("<") and s.eat("=")):
            s.error("expected '<=' after the lower bound")
        s.skip_inline()
        if s.take_name("the range variable") != "x":
            s.error("range bounds must be written around 'x'")
        s.skip_inline()
        s.expect("<", "'<' or '<='")
        hi_strict = not s.eat("=")
        s.skip_inline()
        hi = self._take_integer()
        if lo > hi:
            raise ZebuSyntaxError("empty range", *span)
        self.ag.range_constraints[rule.lower()] = RangeBound(lo, hi, hi_strict)
        self._end_of_declaration()

    def _parse_plain_rule(self, name, span):
        s = self.s
        if s.peek() == "=" and s.peek_at(1) == "/":
            s.error("incremental alternatives (=/) are not supported")
        s.expect("=", "'=' after rule name")
        s.skip_inline()
        body = self.elements.parse_alternation()
        block = self._maybe_annotation_block(allow_flags=False, allow_exprs=False)
        if block["shape"] is not None:
            self.ag.rule_shapes[name.lower()] = (block["shape"], span)
        self.ag.base.add(Rule(name, body, span))
        self._end_of_declaration()

    # block machinery --------------------------------------------------------

    def _maybe_annotation_block(self, allow_flags: bool, allow_exprs: bool) -> dict:
        s = self.s
        result = {"mandatory": False, "multiple": False, "readonly": False,
                  "shape": None, "exprs": []}
        s.skip_inline()
        if s.peek() != "{":
            return result
        s.take()
        while True:
            self._skip_block_ws()
            if s.eat("}"):
                break
            if s.at_end():
                s.error("unterminated annotation block")
            save = s.pos
            if s.peek() in "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz":
                span = s.location()
                word = s.take_name()
                self._skip_block_ws()
                if s.peek() in (";", "}"):
                    if word in _HEADER_FLAGS:
                        if not allow_flags:
                            raise UnknownAnnotation(
                                f"{word!r} is not valid here", *span)
                        result[word] = True
                    elif word in _SHAPE_WORDS:
                        result["shape"] = _SHAPE_WORDS[word]
                    else:
                        raise UnknownAnnotation(f"unknown annotation {word!r}", *span)
                    self._end_of_block_item()
                    continue
                s.pos = save
            if not allow_exprs:
                raise UnknownAnnotation(
                    "only shape keywords are allowed on plain rules", *s.location())
            result["exprs"].append(self._parse_expr())
            self._end_of_block_item()
        return result

    def _end_of_block_item(self):
        self._skip_block_ws()
        if self.s.peek() == ";":
            self.s.take()
        elif self.s.peek() != "}":
            self.s.error("expected ';' or '}' after annotation item")

    def _skip_block_ws(self):
        s = self.s
        while not s.at_end() and s.peek() in (" ", "\t", "\r", "\n"):
            s.take()

    def _end_of_declaration(self):
        s = self.s
        s.skip_inline()
        if not s.at_end() and not s.at_line_break():
            s.error(f"unexpected {s.peek()!r} after declaration")

    # constraint expressions --------------------------------------------------

    def _parse_expr(self):
        return self._parse_or()

    def _parse_or(self):
        items = [self._parse_and()]
        while True:
            self._skip_block_ws()
            if self.s.peek() == "|" and self.s.peek_at(1) == "|":
                self.s.take(); self.s.take()
                items.append(self._parse_and())
            else:
                break
        return items[0] if len(items) == 1 else Or(tuple(items))

    def _parse_and(self):
        items = [self._parse_not()]
        while True:
            self._skip_block_ws()
            if self.s.peek() == "&" and self.s.peek_at(1) == "&":
                self.s.take(); self.s.take()
                items.append(self._parse_not())
            else:
                break
        return items[0] if len(items) == 1 else And(tuple(items))

    def _parse_not(self):
        self._skip_block_ws()
        if self.s.eat("!"):
            return Not(self._parse_not())
        return self._parse_cmp()

    _CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")

    def _parse_cmp(self):
        self._skip_block_ws()
        if self.s.peek() == "(":
            self.s.take()
            inner = self._parse_expr()
            self._skip_block_ws()
            self.s.expect(")", "')'")
            return inner
        lhs = self._parse_operand()
        self._skip_block_ws()
        op = self._take_cmp_op()
        rhs = self._parse_operand()
        return Cmp(op, lhs, rhs)

    def _take_cmp_op(self) -> str:
        s = self.s
        two = s.peek() + s.peek_at(1)
        if two in ("==", "!=", "<=", ">="):
            s.take(); s.take()
            return two
        if s.peek() in ("<", ">"):
            return s.take()
        s.error("expected a comparison operator")

    def _parse_operand(self):
        s = self.s
        self._skip_block_ws()
        ch = s.peek()
        if ch.isdigit():
            return IntLit(self._take_integer())
        if ch == '"':
            return StrLit(self._take_string())
        span = s.location()
        parts = [s.take_name("field reference")]
        while s.peek() == ".":
            s.take()
            parts.append(s.take_name("field path component"))
        return FieldRef(tuple(parts), span)

    def _take_integer(self) -> int:
        s = self.s
        start = s.pos
        while s.peek().isdigit():
            s.take()
        if start == s.pos:
            s.error("expected an integer")
        return int(s.text[start:s.pos])

    def _take_string(self) -> str:
        s = self.s
        start = s.pos
        s.take()
        chars = []
        while True:
            if s.at_end() or s.at_line_break():
                s.error("unterminated string literal", start)
            ch = s.take()
            if ch == '"':
                return "".join(chars)
            chars.append(ch)

    # post-pass ---------------------------------------------------------------

    def _finish(self):
        ag = self.ag
        for kind, target, span in self._mandatory_decls:
            decl = ag.header(target)
            if decl is None:
                raise ZebuSyntaxError(
                    f"mandatory declaration names unknown header {target!r}", *span)
            decl.mandatory_in = _merge_mandatory(decl.mandatory_in, kind)
        for entry, body in ag.entry_points():
            ag.subfields[entry] = collect_subfields(body, ag)


def _merge_mandatory(current: Mandatory, kind: str) -> Mandatory:
    added = Mandatory.REQUEST if kind == "request" else Mandatory.RESPONSE
    if current is Mandatory.NONE:
        return added
    if current is added or current is Mandatory.BOTH:
        return current
    return Mandatory.BOTH


def _extract_keys(pattern: Element, span) -> tuple[str, ...]:
    if isinstance(pattern, LiteralCI):
        return (pattern.text,)
    if isinstance(pattern, Alternation):
        keys = []
        for branch in pattern.branches:
            if not isinstance(branch, LiteralCI):
                raise ZebuSyntaxError(
                    "header key variants must be quoted literals", *span)
            keys.append(branch.text)
        return tuple(keys)
    raise ZebuSyntaxError("header key variants must be quoted literals", *span)


def parse_zebu(source: str) -> AnnotatedGrammar:
    """Parse a `.zebu` file into an AnnotatedGrammar.

    Plain ABNF rules land in `.base`; annotated rules become entry points.
    Subfield namespaces are computed per entry point; a duplicate name is
    rejected at its second declaration.
    """
    return _ZebuParser(source).parse()


# --- field-reference resolution ----------------------------------------------

BUILTIN_MESSAGE = "message"
BUILTIN_KIND_PATH = (BUILTIN_MESSAGE, "kind")


def _bind_ref(ref: FieldRef, ag: AnnotatedGrammar) -> bool:
    if ref.path == BUILTIN_KIND_PATH:
        ref.entry = BUILTIN_MESSAGE
        ref.sub_path = ("kind",)
        return True
    if len(ref.path) < 2:
        return False
    head = ref.path[0]
    if head in (REQUEST_LINE, STATUS_LINE):
        entry = head
    else:
        decl = ag.header(head)
        if decl is None:
            return False
        entry = decl.name
    table = ag.subfields.get(entry, {})
    sub = ref.path[1:]
    if ".".join(sub) not in table:
        return False
    ref.entry = entry
    ref.sub_path = sub
    return True


def iter_unresolved(ag: AnnotatedGrammar):
    """Yield every FieldRef that does not bind, attempting to bind the rest."""
    for expr in ag.all_constraints():
        for ref in iter_field_refs(expr):
            if not _bind_ref(ref, ag):
                yield ref


def resolve_constraint_refs(ag: AnnotatedGrammar) -> AnnotatedGrammar:
    """Bind every field reference in every constraint to an (entry, subfield)
    pair. Raises UnresolvedFieldRef for the first reference that does not
    bind. Idempotent; returns the same grammar with bindings attached."""
    for ref in iter_unresolved(ag):
        raise UnresolvedFieldRef(ref.path, ref.span)
    return ag
