"""Operator command line: validate definitions, run bot matches, verify
replays, serve network matches.

Exit codes: 0 success, 1 domain failure (diagnostics, lost verification),
2 environment or I/O failure.  Flags beat environment variables (RTSL_TICK_HZ,
RTSL_GATHER_RATE, RTSL_HP_IN_ENEMY_TAG) which beat defaults.
"""

from __future__ import annotations

import argparse
import os
import sys

from rtsl.bots import BotScriptError, ScriptedBotSession, parse_bot_script
from rtsl.definition import CompileError, compile_definition, validate_references
from rtsl.document import ParseError, parse_document
from rtsl.kernel import KernelConfig
from rtsl.manager import run_match, serve_match
from rtsl.replay import (
    DefinitionMismatch,
    DigestMismatch,
    ReplayError,
    verify_replay,
    write_replay,
)

__all__ = ["main"]

OK, DOMAIN_FAILURE, ENV_FAILURE = 0, 1, 2


def _env_int(name: str, fallback: int) -> int:
    value = os.environ.get(name)
    return int(value) if value else fallback


def _env_float(name: str, fallback: float) -> float:
    value = os.environ.get(name)
    return float(value) if value else fallback


def _env_bool(name: str, fallback: bool) -> bool:
    value = os.environ.get(name)
    if not value:
        return fallback
    return value.strip().casefold() in ("1", "true", "yes", "on")


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_definition(path: str):
    """Returns (definition, diagnostics) or raises OSError/ParseError/CompileError."""
    defn = compile_definition(parse_document(_read(path)))
    return defn, validate_references(defn)


def _config_from_env_and_flags(args) -> KernelConfig:
    gather_rate = args.gather_rate if args.gather_rate is not None else _env_float("RTSL_GATHER_RATE", 10.0)
    include_hp = _env_bool("RTSL_HP_IN_ENEMY_TAG", True)
    return KernelConfig(gather_rate=gather_rate, include_enemy_hp=include_hp)


def _tick_hz(args) -> int:
    return args.tick_hz if args.tick_hz is not None else _env_int("RTSL_TICK_HZ", 10)


def cmd_validate(args) -> int:
    try:
        text = _read(args.file)
    except OSError as exc:
        print(f"ERROR {args.file} {exc}", file=sys.stderr)
        return ENV_FAILURE
    try:
        defn = compile_definition(parse_document(text))
    except (ParseError, CompileError) as exc:
        print(f"ERROR {getattr(exc, 'path', args.file)} {exc}")
        return DOMAIN_FAILURE
    diagnostics = validate_references(defn)
    for diag in diagnostics:
        print(diag)
    return DOMAIN_FAILURE if diagnostics else OK


def cmd_match(args) -> int:
    try:
        definition_text = _read(getattr(args, "def"))
        bot1 = parse_bot_script(_read(args.bot1))
        bot2 = parse_bot_script(_read(args.bot2))
    except OSError as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return ENV_FAILURE
    except BotScriptError as exc:
        print(f"ERROR bot script: {exc}")
        return DOMAIN_FAILURE
    try:
        defn = compile_definition(parse_document(definition_text))
    except (ParseError, CompileError) as exc:
        print(f"ERROR {exc}")
        return DOMAIN_FAILURE
    diagnostics = validate_references(defn)
    if diagnostics:
        for diag in diagnostics:
            print(diag)
        return DOMAIN_FAILURE
    config = _config_from_env_and_flags(args)
    sessions = [("P1", ScriptedBotSession(bot1)), ("P2", ScriptedBotSession(bot2))]
    try:
        result = run_match(
            defn,
            sessions,
            tick_hz=_tick_hz(args),
            seed=args.seed,
            time_limit_ticks=args.max_ticks,
            config=config,
            map_name=args.map,
        )
    except ValueError as exc:
        print(f"ERROR {exc}")
        return DOMAIN_FAILURE
    print(result.summary())
    if args.replay:
        try:
            with open(args.replay, "w", encoding="utf-8") as fh:
                fh.write(write_replay(definition_text, result, args.seed, _tick_hz(args), config))
        except OSError as exc:
            print(f"ERROR {args.replay} {exc}", file=sys.stderr)
            return ENV_FAILURE
    return OK


def cmd_replay(args) -> int:
    try:
        text = _read(args.file)
    except OSError as exc:
        print(f"ERROR {args.file} {exc}", file=sys.stderr)
        return ENV_FAILURE
    try:
        digest = verify_replay(text)
    except DefinitionMismatch as exc:
        print(f"DefinitionMismatch {exc}")
        return DOMAIN_FAILURE
    except (DigestMismatch, ReplayError, CompileError, ParseError) as exc:
        print(f"{type(exc).__name__} {exc}")
        return DOMAIN_FAILURE
    print(f"VERIFIED {digest}")
    return OK


def cmd_serve(args) -> int:
    try:
        definition_text = _read(getattr(args, "def"))
    except OSError as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return ENV_FAILURE
    try:
        defn = compile_definition(parse_document(definition_text))
    except (ParseError, CompileError) as exc:
        print(f"ERROR {exc}")
        return DOMAIN_FAILURE
    diagnostics = validate_references(defn)
    if diagnostics:
        for diag in diagnostics:
            print(diag)
        return DOMAIN_FAILURE
    try:
        result = serve_match(
            defn,
            port=args.port,
            host=args.host,
            tick_hz=_tick_hz(args),
            seed=args.seed,
            time_limit_ticks=args.max_ticks,
            config=_config_from_env_and_flags(args),
            map_name=args.map,
            handshake_timeout_s=args.handshake_timeout,
        )
    except OSError as exc:
        print(f"ERROR port {args.port}: {exc}", file=sys.stderr)
        return ENV_FAILURE
    print(result.summary())
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtsl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse, compile, and cross-check a definition file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("match", help="run a headless match between two scripted bots")
    p.add_argument("--def", required=True, help="definition file")
    p.add_argument("--map", default=None, help="expected map name")
    p.add_argument("--bot1", required=True, help="bot script for P1")
    p.add_argument("--bot2", required=True, help="bot script for P2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tick-hz", type=int, default=None)
    p.add_argument("--max-ticks", type=int, default=1000)
    p.add_argument("--gather-rate", type=float, default=None)
    p.add_argument("--replay", default=None, help="write the replay log here")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("replay", help="re-execute a replay and verify its digest")
    p.add_argument("file")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="serve one network match for two agents")
    p.add_argument("--def", required=True, help="definition file")
    p.add_argument("--map", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tick-hz", type=int, default=None)
    p.add_argument("--max-ticks", type=int, default=1000)
    p.add_argument("--gather-rate", type=float, default=None)
    p.add_argument("--handshake-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
