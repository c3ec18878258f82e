"""RTSL toolchain: document parsing, definition compilation, deterministic
simulation, and the agent match protocol."""

from rtsl.definition import (
    CompileError,
    Diagnostic,
    GameDefinition,
    compile_definition,
    validate_references,
)
from rtsl.document import (
    DocNode,
    GameSpecific,
    Keyword,
    ParseError,
    classify_tag,
    parse_coordinate_tag,
    parse_document,
    serialize_document,
)
from rtsl.kernel import (
    GameState,
    KernelConfig,
    Receipt,
    new_game,
    resolve_damage,
    spawn,
    state_digest,
    submit,
    tick,
    visible_update,
)
from rtsl.manager import (
    MatchResult,
    Session,
    command_text,
    decode_command,
    encode_update,
    run_match,
    serve_match,
)

__all__ = [
    "CompileError",
    "Diagnostic",
    "GameDefinition",
    "compile_definition",
    "validate_references",
    "DocNode",
    "GameSpecific",
    "Keyword",
    "ParseError",
    "classify_tag",
    "parse_coordinate_tag",
    "parse_document",
    "serialize_document",
    "GameState",
    "KernelConfig",
    "Receipt",
    "new_game",
    "resolve_damage",
    "spawn",
    "state_digest",
    "submit",
    "tick",
    "visible_update",
    "MatchResult",
    "Session",
    "command_text",
    "decode_command",
    "encode_update",
    "run_match",
    "serve_match",
]
