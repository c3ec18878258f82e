"""Parser and serializer for the RTSL document dialect.

RTSL documents look like XML but are not XML: tag names may contain spaces,
commas, parentheses and periods (``<Town Hall>``, ``<X,Y>``, ``<(0,1)>``),
elements may hold newline-separated bare words as list items, and a close tag
may carry a terrain-condition suffix (``<Wood>300</Wood>/Snow``).  This module
owns the generic document tree only; schema-level meaning lives in
:mod:`rtsl.definition`.

Content model, applied when an element is closed:

* the element's inline content is split into element children and nonempty
  text lines;
* if there are no element children and exactly one text line, that line is the
  element's ``text`` payload (``<Vision>5</Vision>``);
* otherwise every text line becomes a bare child node whose tag is the
  whitespace-normalized line and whose content is empty (faction names, build
  lists, terrain labels).

Open/close tag matching, and all other name matching in the toolchain, is
case-insensitive and ignores internal whitespace, so ``< Build Time>`` closes
``</ Build Time>`` and matches the ``Build Time`` keyword.  Parsing is
all-or-nothing: any structural error raises and no partial tree is returned.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

__all__ = [
    "SourceSpan",
    "DocNode",
    "Keyword",
    "GameSpecific",
    "ParseError",
    "UnbalancedTagError",
    "UnterminatedTagError",
    "EmptyTagNameError",
    "MalformedCoordinateError",
    "normalize_name",
    "match_key",
    "parse_document",
    "serialize_document",
    "classify_tag",
    "parse_coordinate_tag",
]


def normalize_name(raw: str) -> str:
    """Collapse internal whitespace runs and strip: ``" Build  Time "`` -> ``"Build Time"``."""
    return re.sub(r"\s+", " ", raw).strip()


def match_key(name: str) -> str:
    """Key used for all tag/keyword matching: casefolded, whitespace removed."""
    return re.sub(r"\s+", "", name).casefold()


@dataclass(frozen=True)
class SourceSpan:
    """1-based, inclusive region of the source text."""

    start_line: int
    start_col: int
    end_line: int
    end_col: int

    def contains(self, other: "SourceSpan") -> bool:
        return (self.start_line, self.start_col) <= (other.start_line, other.start_col) and (
            other.end_line,
            other.end_col,
        ) <= (self.end_line, self.end_col)

    def covers_line(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line


_NO_SPAN = SourceSpan(1, 1, 1, 1)


@dataclass(eq=False)
class DocNode:
    """One element (or bare word) of a parsed document.

    A node carries either ``text``, ``children``, or neither.  The single
    exception is a terrain-condition node, which has text plus a
    ``condition_suffix`` (``<Wood>300</Wood>/Snow`` -> tag ``Wood``, text
    ``300``, suffix ``Snow``).  The synthetic document root has tag ``""`` and
    only children.
    """

    tag: str
    text: str | None = None
    children: list["DocNode"] = field(default_factory=list)
    condition_suffix: str | None = None
    span: SourceSpan = _NO_SPAN

    @property
    def key(self) -> str:
        return match_key(self.tag)

    def child(self, name: str) -> "DocNode | None":
        """First child whose tag matches ``name`` (whitespace/case-insensitive)."""
        want = match_key(name)
        for c in self.children:
            if c.key == want:
                return c
        return None

    def children_named(self, name: str) -> list["DocNode"]:
        want = match_key(name)
        return [c for c in self.children if c.key == want]

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def structural_key(self):
        """Span-free identity used for structural equality and digests."""
        return (
            self.tag,
            self.text,
            self.condition_suffix,
            tuple(c.structural_key() for c in self.children),
        )

    def same_structure(self, other: "DocNode") -> bool:
        return self.structural_key() == other.structural_key()

    def __repr__(self) -> str:  # keep test failures readable
        parts = [f"tag={self.tag!r}"]
        if self.text is not None:
            parts.append(f"text={self.text!r}")
        if self.condition_suffix is not None:
            parts.append(f"suffix={self.condition_suffix!r}")
        if self.children:
            parts.append(f"children={len(self.children)}")
        return f"DocNode({', '.join(parts)})"


class ParseError(ValueError):
    """Base class for structural parse failures; carries the offending span."""

    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{message} at line {span.start_line}:{span.start_col}")
        self.span = span


class UnbalancedTagError(ParseError):
    pass


class UnterminatedTagError(ParseError):
    pass


class EmptyTagNameError(ParseError):
    pass


class MalformedCoordinateError(ValueError):
    """A coordinate-looking tag with non-integer parts, e.g. ``(1,a)``."""

    def __init__(self, tag: str):
        super().__init__(f"malformed coordinate tag {tag!r}")
        self.tag = tag


class Keyword(Enum):
    """Reserved tag names of the language.

    ``COORDINATE`` covers grid-cell tags of the form ``0,0`` / ``(0,1)``.
    Everything else classifies as :class:`GameSpecific`.
    """

    COORDINATE = "#,#"
    ACTION = "Action"
    ARMOR = "Armor"
    ATTACK = "Attack"
    BUILD = "Build"
    BUILDING = "Building"
    BUILD_TIME = "Building Time"
    CONTAIN = "Contain"
    DAMAGE = "Damage"
    DISTANCE = "Distance"
    ENEMY = "Enemy"
    FACTION = "Faction"
    GATHER = "Gather"
    HEALTH_POINT = "Health Point"
    LIMIT = "Limit"
    MAP = "Map"
    MODIFY = "Modify"
    MOVEMENT = "Movement"
    NAME = "Name"
    PREPARE = "Prepare"
    PROCESS = "Process"
    PURPOSE = "Purpose"
    RANGE = "Range"
    RECHARGE = "Recharge"
    REPAIR = "Repair"
    REQUIRE = "Require"
    RESOURCE = "Resource"
    SHAPE = "Shape"
    POINT = "Point"
    SQUARE = "Square"
    RECTANGLE = "Rectangle"
    CIRCLE = "Circle"
    F_CONE = "F_Cone"
    B_CONE = "B_Cone"
    SIZE = "Size"
    SPEED = "Speed"
    TERRAIN = "Terrain"
    TIME_LIMIT = "Time Limit"
    WEIGHT = "Weight"
    VISION = "Vision"
    UNIT = "Unit"
    UNIQUE_ID = "UniqueID"
    UPGRADE = "Upgrade"


@dataclass(frozen=True)
class GameSpecific:
    """Classification result for a non-reserved tag; keeps the original name."""

    name: str


_KEYWORD_LOOKUP: dict[str, Keyword] = {match_key(kw.value): kw for kw in Keyword}
# The listings spell the same concepts several ways; all aliases are accepted.
_KEYWORD_LOOKUP[match_key("Build Time")] = Keyword.BUILD_TIME
_KEYWORD_LOOKUP[match_key("Build Speed")] = Keyword.BUILD_TIME
_KEYWORD_LOOKUP[match_key("Factions")] = Keyword.FACTION


def classify_tag(tag: str) -> Keyword | GameSpecific:
    """Classify a tag name. Total: every nonempty tag maps to exactly one case."""
    if not tag or not tag.strip():
        raise ValueError("empty tag name")
    kw = _KEYWORD_LOOKUP.get(match_key(tag))
    if kw is not None:
        return kw
    try:
        if _coordinate_parts(tag) is not None:
            return Keyword.COORDINATE
    except MalformedCoordinateError:
        pass
    return GameSpecific(normalize_name(tag))


_PAREN_COORD_RE = re.compile(r"^\(\s*([^,()<>]*?)\s*,\s*([^,()<>]*?)\s*\)$")
_BARE_COORD_RE = re.compile(r"^([^,()<>]*?)\s*,\s*([^,()<>]*?)$")
_INT_RE = re.compile(r"^[+-]?\d+$")


def _coordinate_parts(tag: str) -> tuple[int, int] | None:
    """Integer pair for a coordinate tag, None for a non-coordinate, raise for a
    coordinate-looking tag with non-integer parts."""
    s = tag.strip()
    m = _PAREN_COORD_RE.match(s)
    if m:
        a, b = m.group(1), m.group(2)
        if _INT_RE.match(a) and _INT_RE.match(b):
            return int(a), int(b)
        raise MalformedCoordinateError(tag)
    m = _BARE_COORD_RE.match(s)
    if m:
        a, b = m.group(1), m.group(2)
        a_int, b_int = bool(_INT_RE.match(a)), bool(_INT_RE.match(b))
        if a_int and b_int:
            return int(a), int(b)
        if a_int or b_int:
            # "1,a" is a botched coordinate; "X,Y" is an ordinary tag.
            raise MalformedCoordinateError(tag)
    return None


def parse_coordinate_tag(tag: str) -> tuple[int, int] | None:
    """Parse ``0,0`` / ``(0,1)`` tag spellings into an integer pair.

    Returns None for tags that are not coordinates; raises
    :class:`MalformedCoordinateError` for coordinate-like tags with
    non-integer parts.
    """
    if not tag:
        raise ValueError("empty tag name")
    return _coordinate_parts(tag)


# --- parsing -----------------------------------------------------------------

_SUFFIX_RE = re.compile(r"[ \t]*/[ \t]*([^<\n]+)")


class _Frame:
    __slots__ = ("node", "items", "open_span")

    def __init__(self, node: DocNode, open_span: SourceSpan):
        self.node = node
        self.items: list[tuple[str, object, SourceSpan]] = []
        self.open_span = open_span


def parse_document(source: str) -> DocNode:
    """Parse RTSL source into a tree under a synthetic root node.

    The root's children are the document's top-level elements and bare words.
    Raises :class:`UnbalancedTagError`, :class:`UnterminatedTagError` or
    :class:`EmptyTagNameError` on structural problems; no partial tree is
    produced.
    """
    return _Parser(source).run()


class _Parser:
    def __init__(self, source: str):
        self.src = source
        self.n = len(source)
        self.pos = 0
        self.line = 1
        self.col = 1

    # -- low-level cursor ------------------------------------------------

    def _advance(self, count: int = 1) -> None:
        for _ in range(count):
            if self.pos >= self.n:
                return
            if self.src[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _here(self) -> tuple[int, int]:
        return self.line, self.col

    # -- main loop ---------------------------------------------------------

    def run(self) -> DocNode:
        root = DocNode(tag="")
        stack = [_Frame(root, _NO_SPAN)]
        while self.pos < self.n:
            if self.src[self.pos] == "<":
                self._read_tag(stack)
            else:
                self._read_text(stack[-1])
        if len(stack) > 1:
            frame = stack[-1]
            raise UnterminatedTagError(f"<{frame.node.tag}> is never closed", frame.open_span)
        end_line = max(1, self.line)
        end_col = max(1, self.col)
        self._finalize(root, stack[0].items, force_children=True)
        root.span = SourceSpan(1, 1, end_line, end_col)
        return root

    def _read_text(self, frame: _Frame) -> None:
        start_line, start_col = self._here()
        chars: list[str] = []
        while self.pos < self.n and self.src[self.pos] not in "<\n":
            chars.append(self.src[self.pos])
            self._advance()
        raw = "".join(chars)
        stripped = raw.strip()
        if stripped:
            lead = len(raw) - len(raw.lstrip())
            span = SourceSpan(start_line, start_col + lead, start_line, start_col + lead + len(stripped) - 1)
            frame.items.append(("text", stripped, span))
        if self.pos < self.n and self.src[self.pos] == "\n":
            self._advance()

    def _read_tag(self, stack: list[_Frame]) -> None:
        tag_start = self._here()
        self._advance()  # consume '<'
        body_chars: list[str] = []
        while True:
            if self.pos >= self.n or self.src[self.pos] == "\n":
                raise UnterminatedTagError(
                    "tag is not closed with '>'", SourceSpan(*tag_start, *tag_start)
                )
            ch = self.src[self.pos]
            if ch == "<":
                raise UnterminatedTagError(
                    "tag is not closed with '>'", SourceSpan(*tag_start, *tag_start)
                )
            if ch == ">":
                break
            body_chars.append(ch)
            self._advance()
        end_line, end_col = self._here()
        self._advance()  # consume '>'
        span = SourceSpan(*tag_start, end_line, end_col)
        body = "".join(body_chars)
        is_close = body.lstrip().startswith("/")
        name = normalize_name(body.lstrip().lstrip("/") if is_close else body)
        if not name:
            raise EmptyTagNameError("tag has no name", span)
        if is_close:
            self._close(stack, name, span)
        else:
            node = DocNode(tag=name, span=span)
            stack.append(_Frame(node, span))

    def _close(self, stack: list[_Frame], name: str, close_span: SourceSpan) -> None:
        if len(stack) == 1:
            raise UnbalancedTagError(f"</{name}> has no matching open tag", close_span)
        frame = stack[-1]
        if match_key(frame.node.tag) != match_key(name):
            raise UnbalancedTagError(
                f"</{name}> does not match open tag <{frame.node.tag}>", close_span
            )
        stack.pop()
        node = frame.node
        self._finalize(node, frame.items)
        node.span = SourceSpan(
            frame.open_span.start_line,
            frame.open_span.start_col,
            close_span.end_line,
            close_span.end_col,
        )
        # A terrain-condition suffix must directly follow the close tag.
        m = _SUFFIX_RE.match(self.src, self.pos)
        if m and m.group(1).strip():
            node.condition_suffix = normalize_name(m.group(1))
            self._advance(m.end() - self.pos)
        stack[-1].items.append(("node", node, node.span))

    @staticmethod
    def _finalize(node: DocNode, items: list, force_children: bool = False) -> None:
        texts = [it for it in items if it[0] == "text"]
        elements = [it for it in items if it[0] == "node"]
        if not force_children and not elements and len(texts) == 1:
            node.text = texts[0][1]
            return
        for kind, payload, span in items:
            if kind == "node":
                node.children.append(payload)
            else:
                node.children.append(DocNode(tag=normalize_name(payload), span=span))


# --- serialization ------------------------------------------------------------


def serialize_document(root: DocNode) -> str:
    """Emit canonical RTSL: 2-space indentation, one element per line.

    Childless, textless nodes are emitted as bare words; re-parsing the output
    yields a structurally identical tree.  An empty root serializes to ``""``.
    """
    lines: list[str] = []
    for child in root.children:
        _emit(child, 0, lines)
    return "\n".join(lines) + ("\n" if lines else "")


def _emit(node: DocNode, depth: int, lines: list[str]) -> None:
    pad = "  " * depth
    suffix = f"/{node.condition_suffix}" if node.condition_suffix else ""
    if node.children:
        lines.append(f"{pad}<{node.tag}>")
        for child in node.children:
            _emit(child, depth + 1, lines)
        lines.append(f"{pad}</{node.tag}>{suffix}")
    elif node.text is not None:
        lines.append(f"{pad}<{node.tag}>{node.text}</{node.tag}>{suffix}")
    elif suffix:
        lines.append(f"{pad}<{node.tag}></{node.tag}>{suffix}")
    else:
        lines.append(f"{pad}{node.tag}")
