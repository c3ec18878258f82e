"""Match manager: wire protocol, command codec, update encoding, match loop.

The protocol is line-oriented.  Clients send ``FACTION <name>`` once, then
``CMD <command-text>`` or ``UPDATE`` while playing.  The server answers every
command line with ``OK <receipt>`` or ``ERR <reason>``, answers ``UPDATE``
(and ``CMD Update``) with an ``UPDATE-BEGIN`` .. ``UPDATE-END`` block of
document fragments, and pushes ``MAP``/``OPPONENT``/``START`` during the
handshake and ``GAMEOVER <winner|draw>`` at the end.  Handshake violations
forfeit the offending session; malformed lines during play earn an ``ERR``
but never stop the match loop.

Command texts follow the seven agent actions, e.g.
``Construct(Town Hall, 10, 12)`` or
``Action(Lockdown, [Ghost1], [Tank3], [], [])``.
"""

from __future__ import annotations

import re
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from rtsl.definition import GameDefinition
from rtsl.document import DocNode, serialize_document
from rtsl.kernel import (
    Attack,
    Command,
    Construct,
    GameAction,
    GameState,
    Gather,
    KernelConfig,
    Move,
    Train,
    Update,
    UpdateView,
    eliminated_players,
    new_game,
    state_digest,
    submit,
    tick,
    visible_update,
)

__all__ = [
    "BadCommandSyntax",
    "WrongArity",
    "decode_command",
    "command_text",
    "encode_update",
    "Session",
    "MatchResult",
    "run_match",
    "serve_match",
]


# --- command codec ------------------------------------------------------------


class BadCommandSyntax(ValueError):
    def __init__(self, text: str):
        super().__init__(f"bad command syntax: {text!r}")
        self.text = text


class WrongArity(ValueError):
    def __init__(self, name: str, got: int, want: int):
        super().__init__(f"{name} takes {want} arguments, got {got}")
        self.name = name
        self.got = got
        self.want = want


_CMD_RE = re.compile(r"^\s*([A-Za-z]+)\s*(?:\((.*)\))?\s*$", re.DOTALL)


def _split_args(raw: str) -> list[str]:
    args: list[str] = []
    depth = 0
    current: list[str] = []
    for ch in raw:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise BadCommandSyntax(raw)
        if ch == "," and depth == 0:
            args.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    if depth != 0:
        raise BadCommandSyntax(raw)
    last = "".join(current).strip()
    if last or args:
        args.append(last)
    return args


def _number_arg(text: str, line: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise BadCommandSyntax(line) from None


def _bracket_list(text: str, line: str) -> list[str]:
    s = text.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise BadCommandSyntax(line)
    inner = s[1:-1].strip()
    if not inner:
        return []
    return [part.strip() for part in inner.split(",")]


def decode_command(text: str) -> Command:
    """Parse one of the seven textual agent actions; whitespace-tolerant."""
    if not text or not text.strip():
        raise BadCommandSyntax(text)
    m = _CMD_RE.match(text)
    if m is None:
        raise BadCommandSyntax(text)
    verb = m.group(1)
    raw = m.group(2)
    key = verb.casefold()
    if key == "update":
        if raw and raw.strip():
            raise WrongArity(verb, len(_split_args(raw)), 0)
        return Update()
    if raw is None:
        raise BadCommandSyntax(text)
    args = _split_args(raw)

    def need(count: int) -> None:
        if len(args) != count:
            raise WrongArity(verb, len(args), count)

    if key == "construct":
        need(3)
        return Construct(args[0], _number_arg(args[1], text), _number_arg(args[2], text))
    if key == "move":
        need(3)
        return Move(args[0], _number_arg(args[1], text), _number_arg(args[2], text))
    if key == "train":
        need(2)
        return Train(args[0], args[1])
    if key == "gather":
        need(3)
        return Gather(args[0], _number_arg(args[1], text), _number_arg(args[2], text))
    if key == "attack":
        need(2)
        return Attack(args[0], args[1])
    if key == "action":
        need(5)
        return GameAction(
            name=args[0],
            allies=tuple(_bracket_list(args[1], text)),
            enemies=tuple(_bracket_list(args[2], text)),
            xs=tuple(_number_arg(v, text) for v in _bracket_list(args[3], text)),
            ys=tuple(_number_arg(v, text) for v in _bracket_list(args[4], text)),
        )
    raise BadCommandSyntax(text)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def command_text(cmd: Command) -> str:
    """Canonical textual form; decode_command(command_text(c)) == c."""
    if isinstance(cmd, Construct):
        return f"Construct({cmd.building}, {_fmt(cmd.x)}, {_fmt(cmd.y)})"
    if isinstance(cmd, Move):
        return f"Move({cmd.unit}, {_fmt(cmd.x)}, {_fmt(cmd.y)})"
    if isinstance(cmd, Train):
        return f"Train({cmd.location}, {cmd.product})"
    if isinstance(cmd, Gather):
        return f"Gather({cmd.unit}, {_fmt(cmd.x)}, {_fmt(cmd.y)})"
    if isinstance(cmd, Attack):
        return f"Attack({cmd.ally}, {cmd.enemy})"
    if isinstance(cmd, GameAction):
        allies = ", ".join(cmd.allies)
        enemies = ", ".join(cmd.enemies)
        xs = ", ".join(_fmt(x) for x in cmd.xs)
        ys = ", ".join(_fmt(y) for y in cmd.ys)
        return f"Action({cmd.name}, [{allies}], [{enemies}], [{xs}], [{ys}])"
    if isinstance(cmd, Update):
        return "Update"
    raise TypeError(f"not a command: {cmd!r}")


# --- update encoding -----------------------------------------------------------


def _num_node(tag: str, value: float) -> DocNode:
    return DocNode(tag=tag, text=_fmt(value))


def _position_node(pos: tuple[float, float]) -> DocNode:
    return DocNode(tag="Position", children=[DocNode(tag="X,Y", text=f"{_fmt(pos[0])},{_fmt(pos[1])}")])


def _action_node(action: str, detail: str) -> DocNode:
    if detail:
        return DocNode(tag="Action", children=[DocNode(tag=action, text=detail)])
    return DocNode(tag="Action", text=action)


def _entity_node(view, include_hp: bool, include_state: bool) -> DocNode:
    node = DocNode(tag=view.proto)
    node.children.append(DocNode(tag="UniqueID", text=view.id))
    if include_hp:
        node.children.append(_num_node("Health Point", view.hp))
    if include_state:
        node.children.append(_action_node(view.action, view.action_detail))
    if view.pos is not None:
        node.children.append(_position_node(view.pos))
    elif view.container:
        node.children.append(DocNode(tag="Contained", text=view.container))
    return node


def encode_update(view: UpdateView, include_enemy_hp: bool = True) -> str:
    """Serialize a vision-limited snapshot as parseable document fragments."""
    root = DocNode(tag="")
    root.children.append(DocNode(tag="Tick", text=str(view.tick)))
    bank = DocNode(tag="Resource")
    for res in sorted(view.bank):
        bank.children.append(_num_node(res, view.bank[res]))
    root.children.append(bank)
    buildings = [e for e in view.own if e.kind == "building"]
    units = [e for e in view.own if e.kind != "building"]
    if buildings:
        section = DocNode(tag="Building")
        for e in buildings:
            section.children.append(_entity_node(e, True, True))
        root.children.append(section)
    if units:
        section = DocNode(tag="Unit")
        for e in units:
            section.children.append(_entity_node(e, True, True))
        root.children.append(section)
    if view.enemies:
        section = DocNode(tag="Enemy")
        for e in view.enemies:
            section.children.append(_entity_node(e, include_enemy_hp, False))
        root.children.append(section)
    if view.cells:
        board = DocNode(tag="Map")
        for cell in view.cells:
            cell_node = DocNode(tag=f"({cell.coord[0]},{cell.coord[1]})")
            terrain = DocNode(tag="Terrain")
            for label in cell.layers:
                terrain.children.append(DocNode(tag=label))
            cell_node.children.append(terrain)
            for res, amount in cell.deposits:
                cell_node.children.append(_num_node(res, amount))
            board.children.append(cell_node)
        root.children.append(board)
    return serialize_document(root)


# --- sessions -------------------------------------------------------------------


class Session:
    """Transport-agnostic player connection.

    The match loop calls :meth:`poll` once per tick for pending client lines
    and :meth:`deliver` for each server line.  Subclasses bridge to sockets or
    to in-process bots.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.inbox: deque[str] = deque()
        self.delivered: list[str] = []
        self._lock = threading.Lock()
        self.closed = False

    def push(self, line: str) -> None:
        """Feed a client line (test and transport side)."""
        with self._lock:
            self.inbox.append(line)

    def poll(self) -> list[str]:
        with self._lock:
            lines = list(self.inbox)
            self.inbox.clear()
        return lines

    def deliver(self, line: str) -> None:
        self.delivered.append(line)

    def close(self) -> None:
        self.closed = True


class SocketSession(Session):
    """Session over a connected stream socket; a reader thread fills the inbox."""

    def __init__(self, conn: socket.socket, name: str = ""):
        super().__init__(name)
        self.conn = conn
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        buffer = b""
        try:
            while True:
                chunk = self.conn.recv(4096)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    self.push(line.decode("utf-8", "replace").rstrip("\r"))
        except OSError:
            pass
        self.closed = True

    def deliver(self, line: str) -> None:
        super().deliver(line)
        try:
            self.conn.sendall((line + "\n").encode("utf-8"))
        except OSError:
            self.closed = True

    def close(self) -> None:
        super().close()
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.conn.close()


# --- match loop ------------------------------------------------------------------


@dataclass
class MatchResult:
    winner: str | None
    end_tick: int
    digest: str
    reason: str  # elimination | timeout | forfeit | handshake
    players: list[tuple[str, str]] = field(default_factory=list)
    log: list[tuple[int, str, str]] = field(default_factory=list)
    state: GameState | None = None

    def summary(self) -> str:
        who = self.winner if self.winner else "draw"
        return f"RESULT {who} reason={self.reason} tick={self.end_tick} digest={self.digest}"


def _handshake(
    sessions: list[tuple[str, Session]], defn: GameDefinition, timeout_s: float
) -> tuple[dict[str, str], str | None]:
    """Collect one FACTION declaration per session.

    Returns (pid -> faction, forfeiting pid or None)."""
    declared: dict[str, str] = {}
    deadline = time.monotonic() + timeout_s
    while len(declared) < len(sessions):
        progress = False
        for pid, session in sessions:
            if pid in declared:
                continue
            for line in session.poll():
                progress = True
                if line.startswith("FACTION ") and pid not in declared:
                    name = line[len("FACTION "):].strip()
                    if defn.faction(name) is None:
                        session.deliver("ERR UnknownFaction")
                        return declared, pid
                    declared[pid] = name
                    session.deliver(f"MAP {defn.map.name}")
                else:
                    session.deliver("ERR ProtocolViolation")
                    return declared, pid
        if len(declared) < len(sessions) and not progress:
            if time.monotonic() >= deadline:
                for pid, _ in sessions:
                    if pid not in declared:
                        return declared, pid
            time.sleep(0.001)
    return declared, None


def run_match(
    defn: GameDefinition,
    sessions: list[tuple[str, Session]],
    tick_hz: int = 10,
    seed: int = 0,
    time_limit_ticks: int = 1000,
    config: KernelConfig | None = None,
    map_name: str | None = None,
    realtime: bool = False,
    handshake_timeout_s: float = 30.0,
) -> MatchResult:
    """Drive a full match over two sessions and return the outcome.

    The loop drains every session's pending lines at the start of each tick,
    answers them, then advances the kernel.  A player is eliminated once it
    has lost every entity it ever had; hitting the tick limit is a draw.
    """
    if map_name is not None and map_name != defn.map.name:
        raise ValueError(f"definition provides map {defn.map.name!r}, not {map_name!r}")
    declared, forfeiter = _handshake(sessions, defn, handshake_timeout_s)
    if forfeiter is not None:
        others = [pid for pid, _ in sessions if pid != forfeiter]
        winner = others[0] if others else None
        for _, session in sessions:
            session.deliver(f"GAMEOVER {winner if winner else 'draw'}")
        return MatchResult(winner=winner, end_tick=0, digest="", reason="handshake")

    players = [(pid, declared[pid]) for pid, _ in sessions]
    state = new_game(defn, players, seed=seed, tick_hz=tick_hz, config=config)
    by_pid = dict(sessions)
    for pid, session in sessions:
        other = next(f for p, f in players if p != pid) if len(players) > 1 else ""
        session.deliver(f"OPPONENT {other}")
        session.deliver("START")

    config = state.config
    tick_seconds = 1.0 / tick_hz
    next_deadline = time.monotonic() + tick_seconds
    result: MatchResult | None = None
    while state.tick < time_limit_ticks:
        for pid, session in sessions:
            for line in session.poll():
                _handle_play_line(state, pid, session, line, config)
        tick(state)
        losers = eliminated_players(state)
        if losers:
            alive = [pid for pid, _ in sessions if pid not in losers]
            winner = alive[0] if len(alive) == 1 else None
            result = MatchResult(
                winner=winner, end_tick=state.tick, digest=state_digest(state), reason="elimination"
            )
            break
        if realtime:
            delay = next_deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_deadline += tick_seconds
    if result is None:
        result = MatchResult(
            winner=None, end_tick=state.tick, digest=state_digest(state), reason="timeout"
        )
    result.players = players
    result.log = [(t, pid, command_text(cmd)) for t, pid, cmd in state.command_log]
    result.state = state
    for pid, session in sessions:
        session.deliver(f"GAMEOVER {result.winner if result.winner else 'draw'}")
    return result


def _deliver_update(state: GameState, pid: str, session: Session, config: KernelConfig) -> None:
    view = visible_update(state, pid)
    session.deliver("UPDATE-BEGIN")
    for line in encode_update(view, include_enemy_hp=config.include_enemy_hp).splitlines():
        session.deliver(line)
    session.deliver("UPDATE-END")


def _handle_play_line(
    state: GameState, pid: str, session: Session, line: str, config: KernelConfig
) -> None:
    stripped = line.strip()
    if not stripped:
        return
    if stripped == "UPDATE":
        _deliver_update(state, pid, session, config)
        return
    if stripped.startswith("CMD "):
        try:
            cmd = decode_command(stripped[len("CMD "):])
        except (BadCommandSyntax, WrongArity) as exc:
            session.deliver(f"ERR {type(exc).__name__} {exc}")
            return
        if isinstance(cmd, Update):
            _deliver_update(state, pid, session, config)
            return
        receipt = submit(state, pid, cmd)
        if receipt.accepted:
            suffix = f" {receipt.entity_id}" if receipt.entity_id else ""
            session.deliver(f"OK accepted{suffix}")
        else:
            session.deliver(f"OK rejected {receipt.reason}")
        return
    session.deliver("ERR ProtocolViolation")


def serve_match(
    defn: GameDefinition,
    port: int,
    host: str = "127.0.0.1",
    tick_hz: int = 10,
    seed: int = 0,
    time_limit_ticks: int = 1000,
    config: KernelConfig | None = None,
    map_name: str | None = None,
    realtime: bool = True,
    handshake_timeout_s: float = 30.0,
    ready: threading.Event | None = None,
) -> MatchResult:
    """Accept two socket clients on ``host:port`` and run one match."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, port))
    listener.listen(2)
    if ready is not None:
        ready.set()
    sessions: list[tuple[str, Session]] = []
    try:
        for pid in ("P1", "P2"):
            conn, _ = listener.accept()
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sessions.append((pid, SocketSession(conn, name=pid)))
        return run_match(
            defn,
            sessions,
            tick_hz=tick_hz,
            seed=seed,
            time_limit_ticks=time_limit_ticks,
            config=config,
            map_name=map_name,
            realtime=realtime,
            handshake_timeout_s=handshake_timeout_s,
        )
    finally:
        for _, session in sessions:
            session.close()
        listener.close()
