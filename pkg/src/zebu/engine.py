"""Two-level message parsing: a line scanner plus per-header patterns.

`index_message` scans lines only (no pattern runs): it locates the command
line, header lines with folded continuations, and the raw body. Dedicated
patterns then run on demand per requested header; lazy subfields defer
their own pattern until forced. A session counts pattern executions so the
cost model (independent of total header count) is observable.

`validate` is the full-validation driver used by the mutation campaigns:
it parses every declared header present, forces lazy subfields, checks
mandatory/multiplicity rules, and evaluates the request/response block
constraints, accumulating every reason rather than stopping at the first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field

from . import frontend, pattern as pat
from .errors import ZebuError
from .frontend import (
    REQUEST_LINE,
    STATUS_LINE,
    And,
    AnnotatedGrammar,
    Cmp,
    FieldRef,
    IntLit,
    Mandatory,
    Not,
    Or,
    Shape,
    StrLit,
    Subfield,
    expr_to_text,
    is_range_shaped,
)
from .pattern import MatchBudgetExceeded, Pattern, compile_pattern, compile_subfield_pattern, match_full


class MessageKind(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


class ReasonCode(enum.Enum):
    SYNTAX = "SYNTAX"
    CONSTRAINT = "CONSTRAINT"
    RANGE = "RANGE"
    MANDATORY_MISSING = "MANDATORY_MISSING"
    DUPLICATE_HEADER = "DUPLICATE_HEADER"
    FOLDING = "FOLDING"
    BUDGET = "BUDGET"


@dataclass(frozen=True)
class Reason:
    code: ReasonCode
    location: str
    message: str


@dataclass
class Verdict:
    accepted: bool
    reasons: list[Reason]

    @property
    def outcome(self) -> str:
        return "ACCEPT" if self.accepted else "REJECT"

    def report(self) -> str:
        if self.accepted:
            return "ACCEPT\n"
        return "".join(
            f"REJECT {r.code.value} {r.location} {r.message}\n" for r in self.reasons
        )


class MessageSyntaxError(ZebuError):
    def __init__(self, reasons):
        super().__init__("; ".join(r.message for r in reasons))
        self.reasons = list(reasons)


class MessageTypeError(MessageSyntaxError):
    pass


class ForceFailed(MessageSyntaxError):
    pass


class UnknownHeader(ZebuError):
    pass


class UnknownSubfield(ZebuError):
    pass


class DuplicateHeader(ZebuError):
    def __init__(self, name, count):
        super().__init__(f"header {name!r} appears {count} times but multiple is not set")
        self.header = name
        self.count = count


class HeaderNotParsed(ZebuError):
    pass


# --- typed values ------------------------------------------------------------

class _AbsentType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ABSENT"


ABSENT = _AbsentType()


@dataclass(frozen=True)
class U16:
    value: int


@dataclass(frozen=True)
class U32:
    value: int


@dataclass(frozen=True)
class EnumTag:
    branch: int


class RawSlice:
    """Zero-copy view of a span of the unfolded value; equality is by content."""

    __slots__ = ("source", "start", "end")

    def __init__(self, source: bytes, start: int, end: int):
        self.source = source
        self.start = start
        self.end = end

    @property
    def data(self) -> bytes:
        return self.source[self.start:self.end]

    def __eq__(self, other):
        if isinstance(other, RawSlice):
            return self.data == other.data
        return NotImplemented

    def __hash__(self):
        return hash(self.data)

    def __repr__(self):
        return f"RawSlice({self.data!r})"


@dataclass
class StructVal:
    fields: dict

    def get(self, name):
        return self.fields.get(name, ABSENT)


@dataclass
class UnionVal:
    branch: int
    fields: dict

    def get(self, name):
        return self.fields.get(name, ABSENT)


class LazyPending:
    """Handle for a declared-lazy subfield; forcing it runs its own pattern."""

    __slots__ = ("entry_name", "key", "source", "span", "value", "failure")

    def __init__(self, entry_name: str, key: str, source: bytes, span: tuple[int, int]):
        self.entry_name = entry_name
        self.key = key
        self.source = source
        self.span = span
        self.value = None
        self.failure = None

    def __repr__(self):
        return f"LazyPending({self.entry_name}.{self.key} @ {self.span})"


# --- line index ---------------------------------------------------------------

Span = "tuple[int, int]"


@dataclass(frozen=True)
class HeaderLine:
    key: bytes                      # trailing SP/HTAB before the colon stripped
    key_span: tuple[int, int]
    value_spans: tuple[tuple[int, int], ...]  # physical segments of a folded value
    line_no: int


@dataclass
class LineIndex:
    raw: bytes
    command_line: tuple[int, int]
    headers: list[HeaderLine]
    body: tuple[int, int]

    def unfolded_value(self, header: HeaderLine) -> bytes:
        spans = header.value_spans
        first = self.raw[spans[0][0]:spans[0][1]]
        if len(spans) == 1:
            return first.lstrip(b" \t")
        parts = [first]
        for s, e in spans[1:]:
            parts.append(b" ")
            parts.append(self.raw[s:e].lstrip(b" \t"))
        return b"".join(parts).lstrip(b" \t")


def index_message(raw: bytes) -> LineIndex:
    """Scan physical lines without running any pattern.

    Raises MessageSyntaxError carrying every structural problem found:
    missing CRLF terminators, bare CR or LF, a continuation line before any
    header, a header line without a colon, or no command line.
    """
    reasons: list[Reason] = []
    if not raw:
        raise MessageSyntaxError([Reason(ReasonCode.SYNTAX, "message", "empty input")])

    lines: list[tuple[int, int]] = []
    pos = 0
    n = len(raw)
    body_span = None
    while pos < n:
        i_cr = raw.find(b"\r", pos)
        i_lf = raw.find(b"\n", pos)
        if i_cr == -1 and i_lf == -1:
            reasons.append(Reason(
                ReasonCode.SYNTAX, f"line {len(lines) + 1}",
                "final line lacks a CRLF terminator"))
            raise MessageSyntaxError(reasons)
        if i_cr == -1 or (i_lf != -1 and i_lf < i_cr):
            reasons.append(Reason(
                ReasonCode.SYNTAX, f"offset {i_lf}", "bare LF outside CRLF"))
            raise MessageSyntaxError(reasons)
        if i_cr + 1 >= n or raw[i_cr + 1] != 0x0A:
            reasons.append(Reason(
                ReasonCode.SYNTAX, f"offset {i_cr}", "bare CR outside CRLF"))
            raise MessageSyntaxError(reasons)
        if i_cr == pos:
            body_span = (i_cr + 2, n)
            break
        lines.append((pos, i_cr))
        pos = i_cr + 2
    if body_span is None:
        reasons.append(Reason(
            ReasonCode.SYNTAX, "message",
            "headers are not terminated by an empty line"))
        raise MessageSyntaxError(reasons)

    if not lines:
        reasons.append(Reason(ReasonCode.SYNTAX, "line 1", "no command line"))
        raise MessageSyntaxError(reasons)
    cmd = lines[0]
    if raw[cmd[0]] in b" \t":
        reasons.append(Reason(
            ReasonCode.FOLDING, "line 1",
            "message starts with a continuation line"))

    headers: list[HeaderLine] = []
    for line_no, (s, e) in enumerate(lines[1:], start=2):
        if raw[s] in b" \t":
            if not headers:
                reasons.append(Reason(
                    ReasonCode.FOLDING, f"line {line_no}",
                    "continuation line before any header"))
                continue
            prev = headers[-1]
            headers[-1] = HeaderLine(
                prev.key, prev.key_span,
                prev.value_spans + ((s, e),), prev.line_no)
            continue
        colon = raw.find(b":", s, e)
        if colon == -1:
            reasons.append(Reason(
                ReasonCode.SYNTAX, f"line {line_no}", "header line has no colon"))
            continue
        key_end = colon
        while key_end > s and raw[key_end - 1] in b" \t":
            key_end -= 1
        if key_end == s:
            reasons.append(Reason(
                ReasonCode.SYNTAX, f"line {line_no}", "empty header key"))
            continue
        headers.append(HeaderLine(
            raw[s:key_end], (s, key_end), ((colon + 1, e),), line_no))

    if reasons:
        raise MessageSyntaxError(reasons)
    return LineIndex(raw, cmd, headers, body_span)


# --- compiled grammar -----------------------------------------------------------

@dataclass
class CompiledEntry:
    name: str
    pattern: Pattern
    table: dict[str, Subfield]
    lazy_patterns: dict[str, Pattern] = dc_field(default_factory=dict)
    branch_children: dict[str, tuple] = dc_field(default_factory=dict)
    ci_fields: frozenset = frozenset()

    def top_fields(self):
        return [sf for sf in self.table.values() if len(sf.path) == 1]


@dataclass
class CompiledHeader:
    name: str
    keys: tuple[str, ...]
    mandatory_in: Mandatory
    multiple: bool
    readonly: bool
    entry: CompiledEntry
    local_constraints: list = dc_field(default_factory=list)


@dataclass
class CompiledGrammar:
    protocol: str
    request_line: CompiledEntry
    status_line: CompiledEntry
    headers: list[CompiledHeader]
    request_constraints: list = dc_field(default_factory=list)
    response_constraints: list = dc_field(default_factory=list)
    match_budget: int = pat.DEFAULT_MATCH_BUDGET
    source: str | None = None  # original .zebu text, kept for the mutation harness

    def __post_init__(self):
        self.header_table: dict[str, CompiledHeader] = {}
        for ch in self.headers:
            for key in ch.keys:
                self.header_table[key.lower()] = ch

    def header(self, name: str) -> CompiledHeader | None:
        low = name.lower()
        for ch in self.headers:
            if ch.name.lower() == low:
                return ch
        return None

    def lazy_set(self) -> set[str]:
        out = set()
        for entry in (self.request_line, self.status_line):
            out.update(f"{entry.name}.{n}" for n in entry.lazy_patterns)
        for ch in self.headers:
            out.update(f"{ch.name}.{n}" for n in ch.entry.lazy_patterns)
        return out

    def stub_names(self) -> dict[str, str]:
        """Generated-stub naming surface, mechanically derived from the grammar."""
        proto = self.protocol
        names = {
            f"{proto}_getType": "message kind probe",
            f"{proto}_parse_headers": "header parse driver",
        }
        for entry, label in ((self.request_line, "RequestLine"),
                             (self.status_line, "StatusLine")):
            for sf in entry.table.values():
                names[f"{proto}_{label}_{_stub_get(sf.path)}"] = f"{entry.name}.{sf.key}"
        for ch in self.headers:
            flat = ch.name.replace("-", "_")
            names[f"{proto}_get_header_{flat}"] = ch.name
            for sf in ch.entry.table.values():
                names[f"{proto}_header_{flat}_{_stub_get(sf.path)}"] = (
                    f"{ch.name}.{sf.key}")
            for lazy_name in ch.entry.lazy_patterns:
                names[f"{proto}_Lazy_{flat}_{lazy_name}_getParsed"] = (
                    f"{ch.name}.{lazy_name}")
        return names


def _stub_get(path: tuple[str, ...]) -> str:
    *front, last = path
    stem = "get" + last[:1].upper() + last[1:]
    return "_".join(front + [stem]) if front else stem


def _compile_entry(name: str, body, ag: AnnotatedGrammar,
                   table: dict[str, Subfield]) -> CompiledEntry:
    entry_pattern = compile_pattern(body, ag, table=table)
    lazy_patterns = {}
    branch_children = {}
    ci = set()
    for sf in table.values():
        if sf.lazy and len(sf.path) == 1:
            lazy_patterns[sf.name] = compile_subfield_pattern(sf, ag, table)
        if sf.shape is Shape.UNION:
            alt = frontend.resolve_to_alternation(sf.element, ag)
            if alt is not None:
                branch_children[sf.key] = tuple(
                    frontend.branch_child_names(alt, sf.path, ag))
        if frontend.terminals_all_ci(sf.element, ag):
            ci.add(sf.key)
    return CompiledEntry(name, entry_pattern, table, lazy_patterns,
                         branch_children, frozenset(ci))


def compile_grammar(ag: AnnotatedGrammar) -> CompiledGrammar:
    """Build the loadable artifact from a verified AnnotatedGrammar."""
    frontend.resolve_constraint_refs(ag)
    if ag.request_line is None or ag.status_line is None:
        raise ZebuError("grammar must define requestLine and statusLine")
    request = _compile_entry(REQUEST_LINE, ag.request_line.body, ag,
                             ag.subfields[REQUEST_LINE])
    status = _compile_entry(STATUS_LINE, ag.status_line.body, ag,
                            ag.subfields[STATUS_LINE])
    headers = []
    for decl in ag.headers:
        entry = _compile_entry(decl.name, decl.body, ag, ag.subfields[decl.name])
        headers.append(CompiledHeader(
            name=decl.name,
            keys=decl.keys,
            mandatory_in=decl.mandatory_in,
            multiple=decl.multiple,
            readonly=decl.readonly,
            entry=entry,
            local_constraints=list(decl.local_constraints),
        ))
    return CompiledGrammar(
        protocol=ag.protocol,
        request_line=request,
        status_line=status,
        headers=headers,
        request_constraints=list(ag.request_block),
        response_constraints=list(ag.response_block),
    )


# --- typed conversion -----------------------------------------------------------

class _ConvertErrors(ZebuError):
    def __init__(self, reasons):
        super().__init__("; ".join(r.message for r in reasons))
        self.reasons = reasons


def _convert(entry: CompiledEntry, pattern: Pattern, res, source: bytes,
             sf: Subfield, location: str, errors: list[Reason]):
    span = res.span(pattern, sf.key)
    if span is None:
        return ABSENT
    start, end = span
    shape = sf.shape
    if shape is Shape.RAW:
        return RawSlice(source, start, end)
    if shape in (Shape.UINT16, Shape.UINT32):
        text = source[start:end]
        if not text.isdigit():
            errors.append(Reason(
                ReasonCode.SYNTAX, location,
                f"captured value {text!r} is not an unsigned decimal integer"))
            return ABSENT
        value = int(text)
        width = 16 if shape is Shape.UINT16 else 32
        if value >= (1 << width):
            errors.append(Reason(
                ReasonCode.RANGE, location,
                f"value {value} overflows uint{width}"))
            return ABSENT
        bound = pattern.deferred_ranges.get(sf.key)
        if bound is not None and not bound.holds(value):
            op = "<" if bound.hi_strict else "<="
            errors.append(Reason(
                ReasonCode.RANGE, location,
                f"value {value} outside {bound.lo} <= x {op} {bound.hi}"))
            return ABSENT
        return U16(value) if width == 16 else U32(value)
    if shape is Shape.ENUM:
        branch = _matched_branch(pattern, res, sf.key)
        if branch is None:
            errors.append(Reason(
                ReasonCode.SYNTAX, location, "no alternation branch recorded"))
            return ABSENT
        return EnumTag(branch)
    if shape is Shape.STRUCT:
        fields = {}
        for child in sf.children:
            child_sf = entry.table[f"{sf.key}.{child}"]
            fields[child] = _convert(entry, pattern, res, source, child_sf,
                                     f"{location}.{child}", errors)
        return StructVal(fields)
    if shape is Shape.UNION:
        branch = _matched_branch(pattern, res, sf.key)
        if branch is None:
            errors.append(Reason(
                ReasonCode.SYNTAX, location, "no alternation branch recorded"))
            return ABSENT
        children = ()
        per_branch = entry.branch_children.get(sf.key)
        if per_branch and branch < len(per_branch):
            children = per_branch[branch]
        fields = {}
        for child in children:
            child_sf = entry.table[f"{sf.key}.{child}"]
            fields[child] = _convert(entry, pattern, res, source, child_sf,
                                     f"{location}.{child}", errors)
        return UnionVal(branch, fields)
    raise ZebuError(f"unhandled shape {shape}")


def _matched_branch(pattern: Pattern, res, key: str) -> int | None:
    i = 0
    while True:
        cid = pattern.capture_index.get(f"{key}#{i}")
        if cid is None:
            return None
        if cid in res.captures:
            return i
        i += 1


# --- parsed views ----------------------------------------------------------------

class HeaderState(enum.Enum):
    UNPARSED = "unparsed"
    PARSED_OK = "ok"
    PARSE_FAILED = "failed"


@dataclass
class ParsedHeader:
    name: str
    instance: int
    raw_value: bytes
    state: HeaderState
    failures: list[Reason]
    fields: dict
    _entry: CompiledEntry

    def get_subfield(self, name: str):
        """Memoized typed value; LazyPending for an unforced lazy field;
        ABSENT for an optional subfield the match did not exercise."""
        if self.state is not HeaderState.PARSED_OK:
            raise HeaderNotParsed(f"header {self.name!r} is in state {self.state.value}")
        if f"{name}" not in self._entry.table:
            raise UnknownSubfield(f"header {self.name!r} has no subfield {name!r}")
        return self.fields.get(name, ABSENT)


@dataclass
class ParsedCommandLine:
    kind: MessageKind
    fields: dict
    failures: list[Reason]
    entry: CompiledEntry


class ParsedMessage:
    """Single-owner session over one raw message: line index, memo tables,
    and the pattern-execution counter."""

    def __init__(self, grammar: CompiledGrammar, raw: bytes):
        self.grammar = grammar
        self.raw = raw
        self.index = index_message(raw)
        self._exec = 0
        self._lazy_exec = 0
        self._command: ParsedCommandLine | None = None
        self._command_error: MessageTypeError | None = None
        self._scans: dict[str, list[HeaderLine]] = {}
        self._parsed: dict[tuple[str, int], ParsedHeader] = {}

    # counters ------------------------------------------------------------

    @property
    def exec_counter(self) -> int:
        """Header-level plus lazy-subfield pattern executions so far."""
        return self._exec

    @property
    def lazy_exec_counter(self) -> int:
        return self._lazy_exec

    def _run(self, pattern: Pattern, subject: bytes, location: str,
             lazy: bool = False):
        self._exec += 1
        if lazy:
            self._lazy_exec += 1
        try:
            return match_full(pattern, subject, self.grammar.match_budget)
        except MatchBudgetExceeded as exc:
            raise _Budget(Reason(ReasonCode.BUDGET, location, str(exc))) from None

    # command line ----------------------------------------------------------

    def message_type(self) -> MessageKind:
        """REQUEST or RESPONSE, deciding with at most two pattern runs."""
        return self._parse_command().kind

    def command_fields(self) -> ParsedCommandLine:
        return self._parse_command()

    def _parse_command(self) -> ParsedCommandLine:
        if self._command is not None:
            return self._command
        if self._command_error is not None:
            raise self._command_error
        s, e = self.index.command_line
        subject = self.raw[s:e]
        try:
            for entry, kind in ((self.grammar.request_line, MessageKind.REQUEST),
                                (self.grammar.status_line, MessageKind.RESPONSE)):
                res = self._run(entry.pattern, subject, "command line")
                if res.matched:
                    failures: list[Reason] = []
                    fields = self._materialize(entry, entry.pattern, res,
                                               subject, failures)
                    self._command = ParsedCommandLine(kind, fields, failures, entry)
                    return self._command
        except _Budget as b:
            self._command_error = MessageTypeError([b.reason])
            raise self._command_error from None
        self._command_error = MessageTypeError([Reason(
            ReasonCode.SYNTAX, "command line",
            "matches neither the request line nor the status line")])
        raise self._command_error

    def _materialize(self, entry: CompiledEntry, pattern: Pattern, res,
                     subject: bytes, failures: list[Reason]) -> dict:
        fields = {}
        for sf in entry.top_fields():
            if sf.lazy and sf.name in entry.lazy_patterns:
                span = res.span(pattern, sf.key)
                fields[sf.name] = (
                    ABSENT if span is None
                    else LazyPending(entry.name, sf.key, subject, span))
            else:
                fields[sf.name] = _convert(entry, pattern, res, subject, sf,
                                           f"{entry.name}.{sf.key}", failures)
        return fields

    # headers ------------------------------------------------------------------

    def _header(self, name: str) -> CompiledHeader:
        ch = self.grammar.header(name)
        if ch is None:
            raise UnknownHeader(f"header {name!r} is not declared in the grammar")
        return ch

    def _scan(self, ch: CompiledHeader) -> list[HeaderLine]:
        low = ch.name.lower()
        hit = self._scans.get(low)
        if hit is None:
            keys = {k.lower().encode("ascii") for k in ch.keys}
            hit = [h for h in self.index.headers if h.key.lower() in keys]
            self._scans[low] = hit
        return hit

    def header_count(self, name: str) -> int:
        return len(self._scan(self._header(name)))

    def parse_header(self, name: str) -> ParsedHeader | None:
        """Parse the first instance of a declared header; None when absent.

        Raises DuplicateHeader when the header appears more than once and
        is not declared `multiple`.
        """
        ch = self._header(name)
        instances = self._scan(ch)
        if not instances:
            return None
        if len(instances) > 1 and not ch.multiple:
            raise DuplicateHeader(ch.name, len(instances))
        return self.parse_header_nth(name, 0)

    def parse_header_nth(self, name: str, index: int) -> ParsedHeader | None:
        """Indexed access for `multiple` headers, in source order."""
        ch = self._header(name)
        memo_key = (ch.name.lower(), index)
        if memo_key in self._parsed:
            return self._parsed[memo_key]
        instances = self._scan(ch)
        if index >= len(instances):
            return None
        value = self.index.unfolded_value(instances[index])
        location = f"{ch.name}[{index}]" if index else ch.name
        try:
            res = self._run(ch.entry.pattern, value, location)
        except _Budget as b:
            parsed = ParsedHeader(ch.name, index, value, HeaderState.PARSE_FAILED,
                                  [b.reason], {}, ch.entry)
            self._parsed[memo_key] = parsed
            return parsed
        if not res.matched:
            parsed = ParsedHeader(
                ch.name, index, value, HeaderState.PARSE_FAILED,
                [Reason(ReasonCode.SYNTAX, location,
                        f"value {value!r} does not match the header grammar")],
                {}, ch.entry)
        else:
            failures: list[Reason] = []
            fields = self._materialize(ch.entry, ch.entry.pattern, res, value, failures)
            state = HeaderState.PARSE_FAILED if failures else HeaderState.PARSED_OK
            parsed = ParsedHeader(ch.name, index, value, state, failures,
                                  fields, ch.entry)
        self._parsed[memo_key] = parsed
        return parsed

    def get_subfield(self, header: ParsedHeader, name: str):
        return header.get_subfield(name)

    # lazy forcing -----------------------------------------------------------------

    def force_lazy(self, pending: LazyPending):
        """Run the subfield's own pattern over its raw span exactly once;
        later calls return the memoized value without a pattern run."""
        if pending.value is not None:
            return pending.value
        if pending.failure is not None:
            raise pending.failure
        entry = self._entry_by_name(pending.entry_name)
        sub_pattern = entry.lazy_patterns[pending.key]
        s, e = pending.span
        subject = pending.source[s:e]
        location = f"{pending.entry_name}.{pending.key}"
        try:
            res = self._run(sub_pattern, subject, location, lazy=True)
        except _Budget as b:
            pending.failure = ForceFailed([b.reason])
            raise pending.failure from None
        if not res.matched:
            pending.failure = ForceFailed([Reason(
                ReasonCode.SYNTAX, location,
                f"lazy value {subject!r} does not match its grammar")])
            raise pending.failure
        errors: list[Reason] = []
        sf = entry.table[pending.key]
        value = _convert(entry, sub_pattern, res, subject, sf, location, errors)
        if errors:
            pending.failure = ForceFailed(errors)
            raise pending.failure
        pending.value = value
        return value

    def _entry_by_name(self, entry_name: str) -> CompiledEntry:
        if entry_name == REQUEST_LINE:
            return self.grammar.request_line
        if entry_name == STATUS_LINE:
            return self.grammar.status_line
        return self._header(entry_name).entry

    # selectors ----------------------------------------------------------------------

    def select(self, selector: str):
        """Resolve a dotted `Entry.sub.sub` selector, forcing lazy fields.

        Raises UnknownSubfield for a path not present in the grammar;
        returns ABSENT when the path is valid but unexercised.
        """
        parts = selector.split(".")
        head, rest = parts[0], parts[1:]
        if head in (REQUEST_LINE, STATUS_LINE):
            entry = (self.grammar.request_line if head == REQUEST_LINE
                     else self.grammar.status_line)
            if not rest or ".".join(rest) not in entry.table:
                raise UnknownSubfield(f"no subfield {selector!r}")
            try:
                cmd = self._parse_command()
            except MessageTypeError:
                return ABSENT
            if cmd.entry is not entry:
                return ABSENT
            return self._walk(cmd.fields, rest)
        ch = self._header(head)
        if not rest or ".".join(rest) not in ch.entry.table:
            raise UnknownSubfield(f"no subfield {selector!r}")
        parsed = self.parse_header(head)
        if parsed is None or parsed.state is not HeaderState.PARSED_OK:
            return ABSENT
        return self._walk(parsed.fields, rest)

    def _walk(self, fields: dict, path: list[str]):
        current = fields.get(path[0], ABSENT)
        for name in path[1:]:
            if isinstance(current, LazyPending):
                current = self.force_lazy(current)
            if isinstance(current, (StructVal, UnionVal)):
                current = current.get(name)
            else:
                return ABSENT
        if isinstance(current, LazyPending):
            current = self.force_lazy(current)
        return current

    def body(self) -> bytes:
        s, e = self.index.body
        return self.raw[s:e]


class _Budget(Exception):
    def __init__(self, reason: Reason):
        self.reason = reason


# --- full validation ---------------------------------------------------------------

def validate(grammar: CompiledGrammar, raw: bytes,
             session: ParsedMessage | None = None) -> Verdict:
    """Index, type the command line, parse every declared header present,
    force lazy subfields, check mandatory/multiplicity rules, and evaluate
    block constraints. Reasons are exhaustive, not first-failure.

    Passing an existing session reuses its memo tables and counter."""
    reasons: list[Reason] = []
    try:
        msg = session if session is not None else ParsedMessage(grammar, raw)
    except MessageSyntaxError as exc:
        return Verdict(False, exc.reasons)

    kind = None
    command = None
    try:
        command = msg.command_fields()
        kind = command.kind
        reasons.extend(command.failures)
        _force_all(msg, command.entry, command.fields, reasons)
    except MessageTypeError as exc:
        reasons.extend(exc.reasons)

    first_instances: dict[str, ParsedHeader] = {}
    for ch in grammar.headers:
        count = msg.header_count(ch.name)
        if count == 0:
            if kind is not None and ch.mandatory_in.covers(kind.value):
                reasons.append(Reason(
                    ReasonCode.MANDATORY_MISSING, ch.name,
                    f"mandatory header {ch.name!r} is missing"))
            continue
        if count > 1 and not ch.multiple:
            reasons.append(Reason(
                ReasonCode.DUPLICATE_HEADER, ch.name,
                f"header {ch.name!r} appears {count} times"))
            count = 1  # constraints still use the first instance
        for i in range(count if ch.multiple else 1):
            parsed = msg.parse_header_nth(ch.name, i)
            if parsed.state is not HeaderState.PARSED_OK:
                reasons.extend(parsed.failures)
                continue
            _force_all(msg, ch.entry, parsed.fields, reasons)
            if i == 0:
                first_instances[ch.name] = parsed

    def lookup(ref: FieldRef):
        return _lookup(ref, msg, kind, command, first_instances)

    blocks = []
    if kind is MessageKind.REQUEST:
        blocks = grammar.request_constraints
    elif kind is MessageKind.RESPONSE:
        blocks = grammar.response_constraints
    for expr in blocks:
        _check_constraint(expr, lookup, "block", reasons)
    for ch in grammar.headers:
        if ch.name in first_instances:
            for expr in ch.local_constraints:
                _check_constraint(expr, lookup, ch.name, reasons)

    return Verdict(not reasons, reasons)


def _force_all(msg: ParsedMessage, entry: CompiledEntry, fields: dict,
               reasons: list[Reason]) -> None:
    for value in fields.values():
        if isinstance(value, LazyPending):
            try:
                msg.force_lazy(value)
            except ForceFailed as exc:
                reasons.extend(exc.reasons)


def _lookup(ref: FieldRef, msg, kind, command, first_instances):
    """Returns (typed value, ci_flag) or None when unavailable."""
    if ref.entry == frontend.BUILTIN_MESSAGE:
        if kind is None:
            return None
        name = kind.name.encode()
        return RawSlice(name, 0, len(name)), True
    if ref.entry in (REQUEST_LINE, STATUS_LINE):
        if command is None or command.entry.name != ref.entry:
            return None
        entry = command.entry
        value = _dig(msg, command.fields, ref.sub_path)
    else:
        parsed = first_instances.get(ref.entry)
        if parsed is None:
            return None
        entry = parsed._entry
        value = _dig(msg, parsed.fields, ref.sub_path)
    if value is None:
        return None
    return value, ".".join(ref.sub_path) in entry.ci_fields


def _dig(msg, fields, path):
    current = fields.get(path[0], ABSENT)
    for name in path[1:]:
        if isinstance(current, LazyPending):
            try:
                current = msg.force_lazy(current)
            except ForceFailed:
                return None
        if isinstance(current, (StructVal, UnionVal)):
            current = current.get(name)
        else:
            return None
    if isinstance(current, LazyPending):
        try:
            current = msg.force_lazy(current)
        except ForceFailed:
            return None
    if current is ABSENT:
        return None
    return current


def _check_constraint(expr, lookup, location, reasons):
    verdict = _eval(expr, lookup)
    if verdict is False:
        code = ReasonCode.RANGE if is_range_shaped(expr) else ReasonCode.CONSTRAINT
        reasons.append(Reason(code, location, f"constraint failed: {expr_to_text(expr)}"))


def _eval(expr, lookup):
    """Three-valued evaluation: None when a referenced field is unavailable
    (absent, unparsed, or the wrong message kind), in which case the
    constraint does not apply."""
    if isinstance(expr, And):
        out = True
        for item in expr.items:
            v = _eval(item, lookup)
            if v is None:
                return None
            out = out and v
        return out
    if isinstance(expr, Or):
        out = False
        for item in expr.items:
            v = _eval(item, lookup)
            if v is None:
                return None
            out = out or v
        return out
    if isinstance(expr, Not):
        v = _eval(expr.item, lookup)
        return None if v is None else not v
    if isinstance(expr, Cmp):
        lhs = _operand(expr.lhs, lookup)
        rhs = _operand(expr.rhs, lookup)
        if lhs is None or rhs is None:
            return None
        return _compare(expr.op, lhs, rhs)
    raise ZebuError(f"not a constraint expression: {expr!r}")


def _operand(node, lookup):
    if isinstance(node, IntLit):
        return node.value
    if isinstance(node, StrLit):
        return node
    if isinstance(node, FieldRef):
        hit = lookup(node)
        if hit is None:
            return None
        return hit  # (typed value, ci flag)
    raise ZebuError(f"not a constraint operand: {node!r}")


def _compare(op, lhs, rhs):
    lnum, lbytes, lci = _comparable(lhs)
    rnum, rbytes, rci = _comparable(rhs)
    if lnum is not None and rnum is not None:
        return _apply(op, lnum, rnum)
    if lbytes is not None and rbytes is not None:
        if lci and rci:
            lbytes = lbytes.lower()
            rbytes = rbytes.lower()
        return _apply(op, lbytes, rbytes)
    # type mismatch: never equal
    return op == "!="


def _comparable(side):
    """Returns (numeric, bytes, case_insensitive)."""
    if isinstance(side, int):
        return side, None, False
    if isinstance(side, StrLit):
        return None, side.value.encode("ascii", "replace"), True
    value, ci = side
    if isinstance(value, (U16, U32)):
        return value.value, None, False
    if isinstance(value, EnumTag):
        return value.branch, None, False
    if isinstance(value, RawSlice):
        return None, value.data, ci
    return None, None, False


def _apply(op, a, b):
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b
