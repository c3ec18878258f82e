"""Scripted baseline bots that drive the wire protocol in-process.

A bot script is a small line-based file::

    name gatherer
    faction Human
    update-every 10
    at 0 Construct(Wood Camp, 2, 2)
    at 15 Train(WoodCamp1, Peasants)
    on-visible Horse Attack(Archer1, {id})

``at`` lines queue a command at a tick counted from START; ticks must be
nondecreasing.  ``on-visible`` rules fire once per newly seen enemy of the
named prototype, substituting ``{id}`` in the template.  ``update-every N``
makes the bot request an update every N ticks (0 disables; reactive rules
need updates to see anything).  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from rtsl.document import parse_document
from rtsl.manager import Session

__all__ = ["BotScript", "BotScriptError", "parse_bot_script", "ScriptedBotSession"]


class BotScriptError(ValueError):
    pass


@dataclass
class BotScript:
    name: str = "bot"
    faction: str = ""
    timed: list[tuple[int, str]] = field(default_factory=list)
    reactive: list[tuple[str, str]] = field(default_factory=list)
    update_every: int = 0


def parse_bot_script(text: str) -> BotScript:
    script = BotScript()
    last_tick = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("name "):
            script.name = line[5:].strip()
        elif line.startswith("faction "):
            script.faction = line[8:].strip()
        elif line.startswith("update-every "):
            script.update_every = int(line[13:].strip())
        elif line.startswith("at "):
            rest = line[3:].strip()
            parts = rest.split(None, 1)
            if len(parts) != 2:
                raise BotScriptError(f"line {lineno}: expected 'at <tick> <command>'")
            at_tick = int(parts[0])
            if at_tick < last_tick:
                raise BotScriptError(f"line {lineno}: at-ticks must be nondecreasing")
            last_tick = at_tick
            script.timed.append((at_tick, parts[1]))
        elif line.startswith("on-visible "):
            rest = line[11:].strip()
            parts = rest.split(None, 1)
            if len(parts) != 2:
                raise BotScriptError(f"line {lineno}: expected 'on-visible <prototype> <template>'")
            script.reactive.append((parts[0], parts[1]))
        else:
            raise BotScriptError(f"line {lineno}: unrecognized directive {line!r}")
    if not script.faction:
        raise BotScriptError("script must declare a faction")
    return script


class ScriptedBotSession(Session):
    """Session whose client side is played by a :class:`BotScript`."""

    def __init__(self, script: BotScript):
        super().__init__(name=script.name)
        self.script = script
        self._declared = False
        self._started = False
        self._tick = -1
        self._next_timed = 0
        self._pending: list[str] = []
        self._seen_ids: set[str] = set()
        self._update_lines: list[str] | None = None

    # -- server -> bot ----------------------------------------------------

    def deliver(self, line: str) -> None:
        super().deliver(line)
        if line == "START":
            self._started = True
            return
        if line == "UPDATE-BEGIN":
            self._update_lines = []
            return
        if line == "UPDATE-END":
            if self._update_lines is not None:
                self._react_to_update("\n".join(self._update_lines))
            self._update_lines = None
            return
        if self._update_lines is not None:
            self._update_lines.append(line)

    def _react_to_update(self, text: str) -> None:
        if not self.script.reactive:
            return
        try:
            root = parse_document(text)
        except ValueError:
            return
        enemy_block = root.child("Enemy")
        if enemy_block is None:
            return
        for enemy in enemy_block.children:
            uid_node = enemy.child("UniqueID")
            uid = uid_node.text if uid_node is not None and uid_node.text else None
            if uid is None or uid in self._seen_ids:
                continue
            for proto, template in self.script.reactive:
                if enemy.key == proto.replace(" ", "").casefold():
                    self._seen_ids.add(uid)
                    self._pending.append("CMD " + template.replace("{id}", uid))

    # -- bot -> server ----------------------------------------------------

    def poll(self) -> list[str]:
        lines = super().poll()  # external pushes, if any
        if not self._declared:
            self._declared = True
            lines.append(f"FACTION {self.script.faction}")
            return lines
        if not self._started:
            return lines
        self._tick += 1
        while self._next_timed < len(self.script.timed) and self.script.timed[self._next_timed][0] <= self._tick:
            lines.append("CMD " + self.script.timed[self._next_timed][1])
            self._next_timed += 1
        lines.extend(self._pending)
        self._pending = []
        if self.script.update_every and self._tick % self.script.update_every == 0:
            lines.append("UPDATE")
        return lines
