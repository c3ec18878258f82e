"""Replay logs: self-contained match records that re-execute bit-exactly.

A replay embeds the canonical definition text (so verification needs no other
files), the seed, clock and economy settings, the per-tick command log, and
the end-of-match digest.  Verification recompiles the embedded definition,
replays every logged command at its recorded tick, and compares digests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from rtsl.definition import compile_definition
from rtsl.document import parse_document, serialize_document
from rtsl.kernel import KernelConfig, new_game, state_digest, submit, tick
from rtsl.manager import MatchResult, decode_command

__all__ = [
    "ReplayDoc",
    "ReplayError",
    "DefinitionMismatch",
    "DigestMismatch",
    "definition_digest",
    "write_replay",
    "parse_replay",
    "verify_replay",
]

_MAGIC = "RTSL-REPLAY 1"


class ReplayError(ValueError):
    pass


class DefinitionMismatch(ReplayError):
    pass


class DigestMismatch(ReplayError):
    pass


def definition_digest(definition_text: str) -> str:
    """Digest of the canonical serialization, stable across formatting noise."""
    canonical = serialize_document(parse_document(definition_text))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ReplayDoc:
    definition_text: str
    def_digest: str
    seed: int
    tick_hz: int
    players: list[tuple[str, str]]
    log: list[tuple[int, str, str]]
    end_tick: int
    end_digest: str
    result: str
    config: KernelConfig = field(default_factory=KernelConfig)


def write_replay(
    definition_text: str,
    result: MatchResult,
    seed: int,
    tick_hz: int,
    config: KernelConfig | None = None,
) -> str:
    config = config or KernelConfig()
    canonical = serialize_document(parse_document(definition_text))
    lines = [
        _MAGIC,
        f"seed {seed}",
        f"tickhz {tick_hz}",
        f"gatherrate {config.gather_rate!r}",
        f"depositrange {config.deposit_range!r}",
        f"damagerolls {int(config.damage_rolls)}",
    ]
    for pid, faction in result.players:
        lines.append(f"player {pid} {faction}")
    lines.append(f"defdigest {definition_digest(definition_text)}")
    lines.append("DEF-BEGIN")
    lines.extend(canonical.splitlines())
    lines.append("DEF-END")
    lines.append("LOG-BEGIN")
    for at_tick, pid, text in result.log:
        lines.append(f"{at_tick}|{pid}|{text}")
    lines.append("LOG-END")
    winner = result.winner if result.winner else "draw"
    lines.append(f"END {result.end_tick} {result.digest} {winner}")
    return "\n".join(lines) + "\n"


def parse_replay(text: str) -> ReplayDoc:
    lines = text.splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ReplayError("not a replay file")
    header: dict[str, str] = {}
    players: list[tuple[str, str]] = []
    i = 1
    while i < len(lines) and lines[i] != "DEF-BEGIN":
        key, _, value = lines[i].partition(" ")
        if key == "player":
            pid, _, faction = value.partition(" ")
            players.append((pid, faction))
        else:
            header[key] = value
        i += 1
    if i >= len(lines):
        raise ReplayError("missing DEF-BEGIN")
    i += 1
    def_lines = []
    while i < len(lines) and lines[i] != "DEF-END":
        def_lines.append(lines[i])
        i += 1
    if i >= len(lines):
        raise ReplayError("missing DEF-END")
    i += 1
    if i >= len(lines) or lines[i] != "LOG-BEGIN":
        raise ReplayError("missing LOG-BEGIN")
    i += 1
    log: list[tuple[int, str, str]] = []
    while i < len(lines) and lines[i] != "LOG-END":
        at_tick, pid, cmd_text = lines[i].split("|", 2)
        log.append((int(at_tick), pid, cmd_text))
        i += 1
    if i >= len(lines):
        raise ReplayError("missing LOG-END")
    i += 1
    if i >= len(lines) or not lines[i].startswith("END "):
        raise ReplayError("missing END record")
    _, end_tick, end_digest, result = lines[i].split(" ", 3)
    try:
        config = KernelConfig(
            gather_rate=float(header["gatherrate"]),
            deposit_range=float(header["depositrange"]),
            damage_rolls=bool(int(header["damagerolls"])),
        )
        return ReplayDoc(
            definition_text="\n".join(def_lines) + "\n",
            def_digest=header["defdigest"],
            seed=int(header["seed"]),
            tick_hz=int(header["tickhz"]),
            players=players,
            log=log,
            end_tick=int(end_tick),
            end_digest=end_digest,
            result=result,
            config=config,
        )
    except (KeyError, ValueError) as exc:
        raise ReplayError(f"bad replay header: {exc}") from exc


def verify_replay(text: str) -> str:
    """Re-execute a replay; returns the reproduced digest or raises.

    Raises :class:`DefinitionMismatch` when the embedded definition does not
    hash to the recorded digest, :class:`DigestMismatch` when re-execution
    diverges from the recorded end state.
    """
    doc = parse_replay(text)
    if definition_digest(doc.definition_text) != doc.def_digest:
        raise DefinitionMismatch("embedded definition does not match the recorded digest")
    defn = compile_definition(parse_document(doc.definition_text))
    state = new_game(defn, doc.players, seed=doc.seed, tick_hz=doc.tick_hz, config=doc.config)
    cursor = 0
    while state.tick < doc.end_tick:
        while cursor < len(doc.log) and doc.log[cursor][0] == state.tick:
            _, pid, cmd_text = doc.log[cursor]
            submit(state, pid, decode_command(cmd_text))
            cursor += 1
        tick(state)
    digest = state_digest(state)
    if digest != doc.end_digest:
        raise DigestMismatch(f"replay diverged: {digest} != {doc.end_digest}")
    return digest
