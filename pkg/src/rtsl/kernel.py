"""Deterministic fixed-tick simulation kernel.

The kernel owns the true game state.  Commands are validated synchronously by
:func:`submit` (resources are debited atomically on acceptance) and take
effect over subsequent calls to :func:`tick`.  Each tick advances time by
``1 / tick_hz`` seconds and runs a fixed phase order:

1. effect expiry, 2. build/train/research progress, 3. movement,
4. gathering, 5. attack resolution (damage buffered, then applied
simultaneously), 6. repair, 7. removal of entities with hp below zero,
8. terrain-condition transitions, 9. vision cache recompute.

Entities are processed in ascending creation order and all tie-breaks are
total, so identical inputs replay to bit-identical states.  Entities whose hp
falls below 0 are removed at the tick boundary; an entity at exactly 0 hp
survives.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field

from rtsl.definition import (
    AbilityDef,
    AttackDef,
    GameDefinition,
    FactionDef,
    ModifyRule,
    PropertyModifier,
    PrototypeDef,
    RequireSpec,
    match_key,
)
from rtsl.geometry import (
    OrientedShape,
    cell_center,
    cells_in_shape,
    cells_in_vision,
    containing_cell,
    distance,
    find_path,
)

__all__ = [
    "KernelConfig",
    "Construct",
    "Move",
    "Train",
    "Gather",
    "Attack",
    "GameAction",
    "Update",
    "Command",
    "Receipt",
    "UnknownFaction",
    "GameState",
    "PlayerState",
    "Entity",
    "ActiveEffect",
    "new_game",
    "spawn",
    "submit",
    "tick",
    "resolve_damage",
    "visible_update",
    "UpdateView",
    "state_digest",
    "eliminated_players",
]

_EPS = 1e-9


# --- commands ----------------------------------------------------------------


@dataclass(frozen=True)
class Construct:
    building: str
    x: float
    y: float


@dataclass(frozen=True)
class Move:
    unit: str
    x: float
    y: float


@dataclass(frozen=True)
class Train:
    location: str
    product: str


@dataclass(frozen=True)
class Gather:
    unit: str
    x: float
    y: float


@dataclass(frozen=True)
class Attack:
    ally: str
    enemy: str


@dataclass(frozen=True)
class GameAction:
    name: str
    allies: tuple[str, ...] = ()
    enemies: tuple[str, ...] = ()
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()


@dataclass(frozen=True)
class Update:
    pass


Command = Construct | Move | Train | Gather | Attack | GameAction | Update


# rejection reasons; receipts carry one of these plus optional detail
NOT_YOUR_ENTITY = "NotYourEntity"
UNKNOWN_ID = "UnknownID"
INSUFFICIENT_RESOURCES = "InsufficientResources"
MISSING_BUILDING = "MissingBuilding"
MISSING_TECH = "MissingTech"
BAD_TERRAIN = "BadTerrain"
DISTANCE_VIOLATION = "DistanceViolation"
CONTAIN_FULL = "ContainFull"
ABILITY_EXHAUSTED = "AbilityExhausted"
REQUIRE_TRAIT_FAILED = "RequireTraitFailed"
ARMOR_CLASS_NOT_ALLOWED = "ArmorClassNotAllowed"
NO_DEPOSIT = "NoDepositRemaining"
BUSY = "Busy"
IMMOBILE = "Immobile"
UNKNOWN_PROTOTYPE = "UnknownPrototype"
NOT_BUILDABLE = "NotBuildable"
BAD_TARGET = "BadTarget"
ALREADY_RESEARCHED = "AlreadyResearched"
UNREACHABLE = "Unreachable"


@dataclass(frozen=True)
class Receipt:
    accepted: bool
    reason: str = ""
    entity_id: str = ""

    @staticmethod
    def ok(entity_id: str = "") -> "Receipt":
        return Receipt(True, "", entity_id)

    @staticmethod
    def no(reason: str, detail: str = "") -> "Receipt":
        return Receipt(False, f"{reason}:{detail}" if detail else reason)


class UnknownFaction(ValueError):
    pass


# --- state -------------------------------------------------------------------


@dataclass
class KernelConfig:
    gather_rate: float = 10.0  # units extracted per second
    deposit_range: float = 1.0  # max center distance for extract/deliver
    include_enemy_hp: bool = True
    damage_rolls: bool = False  # roll uniform in [min, max] instead of max


@dataclass
class ActionState:
    """Current activity of an entity; exactly one variant at a time."""

    kind: str  # idle | moving | attacking | gathering | build | game_specific
    dest: tuple[float, float] | None = None
    path: list[tuple[float, float]] | None = None
    target: str | None = None
    resource: str | None = None
    cell: tuple[int, int] | None = None
    phase: str | None = None  # gathering: extract | return
    product: str | None = None
    remaining_s: float = 0.0
    upgrade: bool = False
    name: str | None = None  # game_specific action name

    @staticmethod
    def idle() -> "ActionState":
        return ActionState("idle")


@dataclass
class Entity:
    id: str
    seq: int
    owner: str
    proto: PrototypeDef
    pos: tuple[float, float] | None
    hp: float
    under_construction: bool = False
    action: ActionState = field(default_factory=ActionState.idle)
    last_fire: dict[str, int] = field(default_factory=dict)
    carrying: tuple[str, float] | None = None
    contained: list[str] = field(default_factory=list)
    container: str | None = None
    ability_uses: dict[str, int] = field(default_factory=dict)
    footprint: frozenset[tuple[int, int]] = frozenset()

    @property
    def completed(self) -> bool:
        return not self.under_construction


@dataclass
class ActiveEffect:
    ability: str
    source: str
    target: str
    modifiers: list[PropertyModifier]
    expires_at_tick: int | None


@dataclass
class RuntimeLayer:
    label: str
    condition: tuple[str, float, str] | None = None


@dataclass
class RuntimeCell:
    layers: list[RuntimeLayer]
    deposits: dict[str, float] = field(default_factory=dict)


@dataclass
class PlayerState:
    faction: FactionDef
    bank: dict[str, float]
    techs_done: set[str] = field(default_factory=set)
    visible_cells: set[tuple[int, int]] = field(default_factory=set)
    ever_had_entities: bool = False


@dataclass
class GameState:
    defn: GameDefinition
    tick: int
    tick_hz: int
    seed: int
    rng: random.Random
    config: KernelConfig
    players: dict[str, PlayerState]
    entities: dict[str, Entity] = field(default_factory=dict)
    cells: dict[tuple[int, int], RuntimeCell] = field(default_factory=dict)
    blocked: dict[tuple[int, int], str] = field(default_factory=dict)
    effects: list[ActiveEffect] = field(default_factory=list)
    command_log: list[tuple[int, str, Command]] = field(default_factory=list)
    spent: dict[str, float] = field(default_factory=dict)
    id_counters: dict[str, int] = field(default_factory=dict)
    seq_counter: int = 0

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_hz

    # -- lookups --------------------------------------------------------

    def entities_in_order(self) -> list[Entity]:
        return sorted(self.entities.values(), key=lambda e: e.seq)

    def own_entities(self, player: str) -> list[Entity]:
        return [e for e in self.entities_in_order() if e.owner == player]

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.defn.map.width and 0 <= cell[1] < self.defn.map.height

    def layer_labels(self, cell: tuple[int, int]) -> frozenset[str]:
        rc = self.cells.get(cell)
        if rc is None:
            return frozenset({self.defn.map.default_layer})
        return frozenset(layer.label for layer in rc.layers)

    def passable_for(self, proto: PrototypeDef):
        terrain = proto.moves_over

        def passable(cell: tuple[int, int]) -> bool:
            return self.in_bounds(cell) and bool(self.layer_labels(cell) & terrain) and cell not in self.blocked

        return passable

    def occupied_layers(self, entity: Entity) -> frozenset[str]:
        if entity.pos is None:
            return frozenset()
        labels = self.layer_labels(containing_cell(entity.pos))
        hit = labels & entity.proto.occupy_terrain
        return hit if hit else labels & entity.proto.moves_over


# --- effect folding -----------------------------------------------------------


def _effective(state: GameState, entity: Entity, prop: str, base: float) -> float:
    value = base
    for eff in state.effects:
        if eff.target != entity.id:
            continue
        for mod in eff.modifiers:
            if mod.prop != prop:
                continue
            if mod.op == "set":
                value = mod.value
            else:
                value *= 1.0 + mod.value / 100.0
    return value


def effective_speed(state: GameState, entity: Entity) -> float:
    return max(0.0, _effective(state, entity, "speed", entity.proto.speed))


def effective_vision(state: GameState, entity: Entity) -> float:
    return max(0.0, _effective(state, entity, "vision", entity.proto.vision))


def effective_recharge(state: GameState, entity: Entity, attack: AttackDef) -> float:
    return _effective(state, entity, "recharge", attack.recharge_s)


# --- game creation ------------------------------------------------------------


def new_game(
    defn: GameDefinition,
    players: list[tuple[str, str]],
    seed: int = 0,
    tick_hz: int = 10,
    config: KernelConfig | None = None,
) -> GameState:
    """Fresh state at tick 0: banks filled, board materialized, no entities."""
    if tick_hz < 1:
        raise ValueError("tick_hz must be at least 1")
    player_states: dict[str, PlayerState] = {}
    for pid, faction_name in players:
        faction = defn.faction(faction_name)
        if faction is None:
            raise UnknownFaction(faction_name)
        player_states[pid] = PlayerState(faction=faction, bank=dict(defn.starting_resources))
    cells = {
        coord: RuntimeCell(
            layers=[RuntimeLayer(layer.label, layer.condition) for layer in cell.layers],
            deposits=dict(cell.deposits),
        )
        for coord, cell in defn.map.cells.items()
    }
    state = GameState(
        defn=defn,
        tick=0,
        tick_hz=tick_hz,
        seed=seed,
        rng=random.Random(seed),
        config=config or KernelConfig(),
        players=player_states,
        cells=cells,
    )
    _recompute_vision(state)
    return state


def _find_proto(faction: FactionDef, name: str) -> PrototypeDef | None:
    return faction.prototype(name)


def _footprint(proto: PrototypeDef, pos: tuple[float, float]) -> frozenset[tuple[int, int]]:
    return frozenset(cells_in_shape(OrientedShape(proto.shape, pos)))


def spawn(
    state: GameState,
    owner: str,
    proto_name: str,
    pos: tuple[float, float],
    completed: bool = True,
) -> Entity:
    """Place an entity directly (scenario setup and training completion)."""
    player = state.players[owner]
    proto = _find_proto(player.faction, proto_name)
    if proto is None:
        raise ValueError(f"{proto_name!r} is not a prototype of {player.faction.name}")
    cell = containing_cell(pos)
    if not state.in_bounds(cell):
        raise ValueError(f"position {pos} outside the map")
    state.id_counters[proto.name] = state.id_counters.get(proto.name, 0) + 1
    uid = f"{proto.name.replace(' ', '')}{state.id_counters[proto.name]}"
    state.seq_counter += 1
    entity = Entity(
        id=uid,
        seq=state.seq_counter,
        owner=owner,
        proto=proto,
        pos=pos,
        hp=proto.max_health,
        under_construction=not completed,
        ability_uses={ab.name: ab.use_limit for ab in proto.abilities if ab.use_limit is not None},
    )
    if not completed:
        entity.action = ActionState(
            "build", product=proto.name, remaining_s=proto.build_time_s, upgrade=False
        )
    if proto.kind == "building":
        entity.footprint = _footprint(proto, pos)
        for c in entity.footprint:
            state.blocked[c] = uid
    state.entities[uid] = entity
    player.ever_had_entities = True
    _recompute_vision(state)
    return entity


# --- requirement checking -------------------------------------------------------


def _check_resources(player: PlayerState, costs: dict[str, float]) -> list[str]:
    return sorted(res for res, amount in costs.items() if player.bank.get(res, 0.0) < amount - _EPS)


def _debit(state: GameState, player: PlayerState, costs: dict[str, float]) -> None:
    for res, amount in costs.items():
        player.bank[res] = player.bank.get(res, 0.0) - amount
        state.spent[res] = state.spent.get(res, 0.0) + amount


def _has_completed_building(state: GameState, pid: str, name: str) -> bool:
    want = match_key(name)
    return any(
        e.owner == pid and e.completed and e.proto.kind == "building" and match_key(e.proto.name) == want
        for e in state.entities.values()
    )


def _check_require(state: GameState, pid: str, req: RequireSpec) -> Receipt | None:
    player = state.players[pid]
    lacking = _check_resources(player, req.resources)
    if lacking:
        return Receipt.no(INSUFFICIENT_RESOURCES, ",".join(lacking))
    for building in req.buildings:
        if not _has_completed_building(state, pid, building):
            return Receipt.no(MISSING_BUILDING, building)
    done = {match_key(t) for t in player.techs_done}
    for tech in req.techs:
        if match_key(tech) not in done:
            return Receipt.no(MISSING_TECH, tech)
    return None


def _check_distance_window(
    state: GameState, pid: str, req: RequireSpec, pos: tuple[float, float]
) -> Receipt | None:
    """Distance windows are anchored on the nearest completed required building."""
    if req.distance is None or not req.buildings:
        return None
    greater, less = req.distance
    anchors = [
        e
        for e in state.entities.values()
        if e.owner == pid
        and e.completed
        and e.pos is not None
        and any(match_key(e.proto.name) == match_key(b) for b in req.buildings)
    ]
    if not anchors:
        return Receipt.no(MISSING_BUILDING, req.buildings[0])
    nearest = min(distance(pos, a.pos) for a in anchors)
    if not (greater - _EPS <= nearest <= less + _EPS):
        return Receipt.no(DISTANCE_VIOLATION, f"{nearest:.2f}")
    return None


def _trait_value(proto: PrototypeDef, name: str) -> object:
    for key, value in proto.traits.items():
        if match_key(key) == match_key(name):
            return value
    return False  # an absent trait reads as False


def _check_target_traits(req: RequireSpec, target: Entity) -> Receipt | None:
    for name, wanted in req.target_traits.items():
        if _trait_value(target.proto, name) != wanted:
            return Receipt.no(REQUIRE_TRAIT_FAILED, name)
    return None


# --- visibility ------------------------------------------------------------------


def _recompute_vision(state: GameState) -> None:
    # nothing beyond the far corner can matter, however hard an effect
    # inflates vision; the cap keeps the disc scan bounded
    cap = math.hypot(state.defn.map.width, state.defn.map.height)
    for pid, player in state.players.items():
        visible: set[tuple[int, int]] = set()
        for entity in state.entities.values():
            if entity.owner != pid or entity.pos is None:
                continue
            vision = min(cap, effective_vision(state, entity))
            for cell in cells_in_vision(entity.pos, vision):
                if state.in_bounds(cell):
                    visible.add(cell)
        player.visible_cells = visible


def _visible_enemies(state: GameState, pid: str) -> list[Entity]:
    own = [e for e in state.entities.values() if e.owner == pid and e.pos is not None]
    seen = []
    for other in state.entities_in_order():
        if other.owner == pid or other.pos is None:
            continue
        for mine in own:
            if distance(mine.pos, other.pos) <= effective_vision(state, mine) + _EPS:
                seen.append(other)
                break
    return seen


# --- command submission -------------------------------------------------------------


def submit(state: GameState, pid: str, cmd: Command) -> Receipt:
    """Validate a command; on acceptance debit costs and queue the effect."""
    if pid not in state.players:
        return Receipt.no(NOT_YOUR_ENTITY, pid)
    receipt = _dispatch(state, pid, cmd)
    if receipt.accepted and not isinstance(cmd, Update):
        state.command_log.append((state.tick, pid, cmd))
    return receipt


def _dispatch(state: GameState, pid: str, cmd: Command) -> Receipt:
    if isinstance(cmd, Construct):
        return _submit_construct(state, pid, cmd)
    if isinstance(cmd, Move):
        return _submit_move(state, pid, cmd)
    if isinstance(cmd, Train):
        return _submit_train(state, pid, cmd)
    if isinstance(cmd, Gather):
        return _submit_gather(state, pid, cmd)
    if isinstance(cmd, Attack):
        return _submit_attack(state, pid, cmd)
    if isinstance(cmd, GameAction):
        return _submit_game_action(state, pid, cmd)
    if isinstance(cmd, Update):
        return Receipt.ok()
    return Receipt.no(BAD_TARGET, str(cmd))


def _own_entity(state: GameState, pid: str, uid: str) -> tuple[Entity | None, Receipt | None]:
    entity = state.entities.get(uid)
    if entity is None:
        return None, Receipt.no(UNKNOWN_ID, uid)
    if entity.owner != pid:
        return None, Receipt.no(NOT_YOUR_ENTITY, uid)
    return entity, None


def _submit_construct(state: GameState, pid: str, cmd: Construct) -> Receipt:
    player = state.players[pid]
    proto = _find_proto(player.faction, cmd.building)
    if proto is None or proto.kind != "building":
        return Receipt.no(UNKNOWN_PROTOTYPE, cmd.building)
    pos = (cmd.x, cmd.y)
    footprint = _footprint(proto, pos)
    for cell in footprint:
        if not state.in_bounds(cell):
            return Receipt.no(BAD_TERRAIN, f"({cell[0]},{cell[1]}) outside map")
        if not state.layer_labels(cell) & proto.occupy_terrain:
            return Receipt.no(BAD_TERRAIN, f"({cell[0]},{cell[1]})")
        if cell in state.blocked:
            return Receipt.no(BAD_TERRAIN, f"({cell[0]},{cell[1]}) occupied")
    bad = _check_require(state, pid, proto.require) or _check_distance_window(
        state, pid, proto.require, pos
    )
    if bad:
        return bad
    _debit(state, player, proto.require.resources)
    entity = spawn(state, pid, proto.name, pos, completed=proto.build_time_s <= 0)
    return Receipt.ok(entity.id)


def _submit_move(state: GameState, pid: str, cmd: Move) -> Receipt:
    entity, bad = _own_entity(state, pid, cmd.unit)
    if bad:
        return bad
    if entity.container is not None:
        return Receipt.no(BAD_TARGET, "contained")
    if entity.proto.speed <= 0:
        return Receipt.no(IMMOBILE, entity.id)
    dest = (cmd.x, cmd.y)
    if not state.in_bounds(containing_cell(dest)):
        return Receipt.no(BAD_TERRAIN, "outside map")
    path = find_path(state.passable_for(entity.proto), entity.pos, dest)
    if path is None:
        return Receipt.no(UNREACHABLE, f"({cmd.x},{cmd.y})")
    entity.action = ActionState("moving", dest=dest, path=path)
    return Receipt.ok(entity.id)


def _submit_train(state: GameState, pid: str, cmd: Train) -> Receipt:
    entity, bad = _own_entity(state, pid, cmd.location)
    if bad:
        return bad
    if not entity.completed or entity.action.kind == "build":
        return Receipt.no(BUSY, entity.id)
    player = state.players[pid]
    want = match_key(cmd.product)

    if any(match_key(u) == want for u in entity.proto.upgrades_to):
        target = _find_proto(player.faction, cmd.product)
        if target is None:
            return Receipt.no(UNKNOWN_PROTOTYPE, cmd.product)
        bad = _check_require(state, pid, target.require)
        if bad:
            return bad
        _debit(state, player, target.require.resources)
        entity.action = ActionState(
            "build", product=target.name, remaining_s=target.build_time_s, upgrade=True
        )
        return Receipt.ok(entity.id)

    if not any(match_key(p) == want for p in entity.proto.purpose.build):
        return Receipt.no(NOT_BUILDABLE, cmd.product)
    unit = _find_proto(player.faction, cmd.product)
    if unit is not None:
        bad = _check_require(state, pid, unit.require)
        if bad:
            return bad
        _debit(state, player, unit.require.resources)
        entity.action = ActionState("build", product=unit.name, remaining_s=unit.build_time_s)
        return Receipt.ok(entity.id)
    tech = player.faction.tech(cmd.product)
    if tech is not None:
        if match_key(tech.name) in {match_key(t) for t in player.techs_done}:
            return Receipt.no(ALREADY_RESEARCHED, tech.name)
        bad = _check_require(state, pid, tech.require)
        if bad:
            return bad
        _debit(state, player, tech.require.resources)
        entity.action = ActionState("build", product=tech.name, remaining_s=tech.build_time_s)
        return Receipt.ok(entity.id)
    return Receipt.no(UNKNOWN_PROTOTYPE, cmd.product)


def _submit_gather(state: GameState, pid: str, cmd: Gather) -> Receipt:
    entity, bad = _own_entity(state, pid, cmd.unit)
    if bad:
        return bad
    if not entity.proto.gather:
        return Receipt.no(NOT_BUILDABLE, "cannot gather")
    cell = containing_cell((cmd.x, cmd.y))
    if not state.in_bounds(cell):
        return Receipt.no(BAD_TERRAIN, "outside map")
    rc = state.cells.get(cell)
    resource = None
    if rc is not None:
        for res in sorted(rc.deposits):
            if rc.deposits[res] > _EPS and any(match_key(res) == match_key(g) for g in entity.proto.gather):
                resource = res
                break
    if resource is None:
        return Receipt.no(NO_DEPOSIT, f"({cell[0]},{cell[1]})")
    entity.action = ActionState("gathering", resource=resource, cell=cell, phase="extract")
    return Receipt.ok(entity.id)


def _submit_attack(state: GameState, pid: str, cmd: Attack) -> Receipt:
    entity, bad = _own_entity(state, pid, cmd.ally)
    if bad:
        return bad
    if not entity.proto.attacks:
        return Receipt.no(NOT_BUILDABLE, "cannot attack")
    target = state.entities.get(cmd.enemy)
    visible_ids = {e.id for e in _visible_enemies(state, pid)}
    if target is None or target.owner == pid or cmd.enemy not in visible_ids:
        return Receipt.no(UNKNOWN_ID, cmd.enemy)
    entity.action = ActionState("attacking", target=cmd.enemy)
    return Receipt.ok(entity.id)


def _submit_game_action(state: GameState, pid: str, cmd: GameAction) -> Receipt:
    name = match_key(cmd.name)
    if name == match_key("Repair"):
        return _submit_repair(state, pid, cmd)
    if name == match_key("Load"):
        return _submit_load(state, pid, cmd)
    if name == match_key("Unload"):
        return _submit_unload(state, pid, cmd)
    return _submit_ability(state, pid, cmd)


def _submit_repair(state: GameState, pid: str, cmd: GameAction) -> Receipt:
    if len(cmd.allies) != 2:
        return Receipt.no(BAD_TARGET, "Repair needs [repairer, target]")
    repairer, bad = _own_entity(state, pid, cmd.allies[0])
    if bad:
        return bad
    target, bad = _own_entity(state, pid, cmd.allies[1])
    if bad:
        return bad
    if repairer.proto.repair is None:
        return Receipt.no(NOT_BUILDABLE, "cannot repair")
    repairer.action = ActionState("game_specific", name="Repair", target=target.id)
    return Receipt.ok(repairer.id)


def _submit_load(state: GameState, pid: str, cmd: GameAction) -> Receipt:
    if len(cmd.allies) != 2:
        return Receipt.no(BAD_TARGET, "Load needs [container, unit]")
    container, bad = _own_entity(state, pid, cmd.allies[0])
    if bad:
        return bad
    unit, bad = _own_entity(state, pid, cmd.allies[1])
    if bad:
        return bad
    spec = container.proto.contain
    if spec is None:
        return Receipt.no(NOT_BUILDABLE, "cannot contain")
    if unit.pos is None or container.pos is None:
        return Receipt.no(BAD_TARGET, "not on the map")
    if distance(unit.pos, container.pos) > 1.0 + _EPS:
        return Receipt.no(DISTANCE_VIOLATION, "not adjacent")
    if spec.allowed_armor_classes:
        cls = unit.proto.armor.armor_class
        if cls is None or match_key(cls) not in {match_key(c) for c in spec.allowed_armor_classes}:
            return Receipt.no(ARMOR_CLASS_NOT_ALLOWED, cls or "none")
    carried = sum(state.entities[u].proto.weight or 0.0 for u in container.contained)
    if carried + (unit.proto.weight or 0.0) > spec.max_weight + _EPS:
        return Receipt.no(CONTAIN_FULL, f"{carried}+{unit.proto.weight}")
    unit.pos = None
    unit.action = ActionState.idle()
    unit.container = container.id
    container.contained.append(unit.id)
    _recompute_vision(state)
    return Receipt.ok(container.id)


def _submit_unload(state: GameState, pid: str, cmd: GameAction) -> Receipt:
    if len(cmd.allies) != 2 or len(cmd.xs) != 1 or len(cmd.ys) != 1:
        return Receipt.no(BAD_TARGET, "Unload needs [container, unit] and a position")
    container, bad = _own_entity(state, pid, cmd.allies[0])
    if bad:
        return bad
    unit, bad = _own_entity(state, pid, cmd.allies[1])
    if bad:
        return bad
    if unit.id not in container.contained:
        return Receipt.no(BAD_TARGET, "not inside")
    pos = (cmd.xs[0], cmd.ys[0])
    cell = containing_cell(pos)
    if not state.passable_for(unit.proto)(cell):
        return Receipt.no(BAD_TERRAIN, f"({cell[0]},{cell[1]})")
    container.contained.remove(unit.id)
    unit.container = None
    unit.pos = pos
    _recompute_vision(state)
    return Receipt.ok(unit.id)


def _submit_ability(state: GameState, pid: str, cmd: GameAction) -> Receipt:
    if not cmd.allies:
        return Receipt.no(BAD_TARGET, "no caster")
    caster, bad = _own_entity(state, pid, cmd.allies[0])
    if bad:
        return bad
    ability = caster.proto.ability(cmd.name)
    if ability is None:
        return Receipt.no(NOT_BUILDABLE, cmd.name)
    ally_targets = []
    for uid in cmd.allies[1:]:
        entity, bad = _own_entity(state, pid, uid)
        if bad:
            return bad
        ally_targets.append(entity)
    visible_ids = {e.id for e in _visible_enemies(state, pid)}
    enemy_targets = []
    for uid in cmd.enemies:
        entity = state.entities.get(uid)
        if entity is None or entity.owner == pid or uid not in visible_ids:
            return Receipt.no(UNKNOWN_ID, uid)
        enemy_targets.append(entity)
    return apply_ability(state, caster, ability, ally_targets, enemy_targets)


def apply_ability(
    state: GameState,
    caster: Entity,
    ability: AbilityDef,
    ally_targets: list[Entity],
    enemy_targets: list[Entity],
) -> Receipt:
    if not ally_targets and not enemy_targets:
        return Receipt.no(BAD_TARGET, "no targets")
    if ability.use_limit is not None:
        left = caster.ability_uses.get(ability.name, ability.use_limit)
        if left <= 0:
            return Receipt.no(ABILITY_EXHAUSTED, ability.name)
    player = state.players[caster.owner]
    lacking = _check_resources(player, ability.require.resources)
    if lacking:
        return Receipt.no(INSUFFICIENT_RESOURCES, ",".join(lacking))
    for target in enemy_targets:
        bad = _check_target_traits(ability.require, target)
        if bad:
            return bad
    if ability.require.distance is not None and caster.pos is not None:
        greater, less = ability.require.distance
        for target in ally_targets + enemy_targets:
            if target.pos is None:
                return Receipt.no(BAD_TARGET, target.id)
            d = distance(caster.pos, target.pos)
            if not (greater - _EPS <= d <= less + _EPS):
                return Receipt.no(DISTANCE_VIOLATION, f"{d:.2f}")
    _debit(state, player, ability.require.resources)
    if ability.use_limit is not None:
        caster.ability_uses[ability.name] = caster.ability_uses.get(ability.name, ability.use_limit) - 1
    expires = None
    if ability.time_limit_s is not None:
        expires = state.tick + math.ceil(ability.time_limit_s * state.tick_hz)
    for target in enemy_targets:
        mods = [m for m in ability.modifiers if m.scope == "enemy"]
        if mods:
            state.effects.append(
                ActiveEffect(ability.name, caster.id, target.id, mods, expires)
            )
    for target in ally_targets:
        mods = [m for m in ability.modifiers if m.scope == "ally"]
        if mods:
            state.effects.append(
                ActiveEffect(ability.name, caster.id, target.id, mods, expires)
            )
    return Receipt.ok(caster.id)


# --- damage --------------------------------------------------------------------


def resolve_damage(
    attack: AttackDef,
    attacker_layers: frozenset[str] | set[str],
    target_proto: PrototypeDef,
    target_layers: frozenset[str] | set[str],
    rules: list[ModifyRule] | tuple = (),
    base: float | None = None,
) -> float:
    """Damage dealt by one hit, before it is applied to hp.

    Order: per-target damage override, then terrain modifiers, then the single
    matching armor mitigation (attack-specific wins over universal), clamped
    at zero.  Unless overridden the maximum of the damage range is used.
    """
    if base is None:
        base = attack.damage.for_target(target_proto.name)[1]
    value = float(base)
    for rule in rules:
        if rule.activity != "attack" or rule.prop != "damage":
            continue
        if rule.on_layer in attacker_layers and rule.versus_layer in target_layers:
            value *= 1.0 + rule.percent / 100.0
    armor = target_proto.armor
    mitigation = armor.per_attack.get(match_key(attack.name), armor.universal)
    if mitigation is not None:
        if mitigation.kind == "flat":
            value -= mitigation.value
        else:
            value *= 1.0 - mitigation.value / 100.0
    return max(0.0, value)


def _roll_base(state: GameState, attack: AttackDef, target: PrototypeDef) -> float:
    lo, hi = attack.damage.for_target(target.name)
    if state.config.damage_rolls:
        return state.rng.uniform(lo, hi)
    return hi


# --- tick phases -----------------------------------------------------------------


def tick(state: GameState) -> GameState:
    """Advance the simulation by one tick (mutates and returns the state)."""
    dt = state.dt
    _phase_effect_expiry(state)
    _phase_build(state, dt)
    _phase_movement(state, dt)
    _phase_gather(state, dt)
    _phase_attacks(state, dt)
    _phase_repair(state, dt)
    _phase_deaths(state)
    _phase_terrain(state)
    _recompute_vision(state)
    state.tick += 1
    return state


def _phase_effect_expiry(state: GameState) -> None:
    state.effects = [
        eff
        for eff in state.effects
        if (eff.expires_at_tick is None or eff.expires_at_tick > state.tick)
        and eff.target in state.entities
    ]


def _phase_build(state: GameState, dt: float) -> None:
    for entity in state.entities_in_order():
        if entity.action.kind != "build" or entity.container is not None:
            continue
        entity.action.remaining_s -= dt
        if entity.action.remaining_s > _EPS:
            continue
        _complete_build(state, entity)


def _complete_build(state: GameState, entity: Entity) -> None:
    action = entity.action
    player = state.players[entity.owner]
    if entity.under_construction:
        entity.under_construction = False
        entity.action = ActionState.idle()
        return
    if action.upgrade:
        target = _find_proto(player.faction, action.product)
        frac = entity.hp / entity.proto.max_health
        entity.proto = target
        entity.hp = frac * target.max_health
        if target.kind == "building" and entity.pos is not None:
            for c in entity.footprint:
                state.blocked.pop(c, None)
            entity.footprint = _footprint(target, entity.pos)
            for c in entity.footprint:
                state.blocked[c] = entity.id
        entity.action = ActionState.idle()
        return
    unit = _find_proto(player.faction, action.product)
    if unit is not None:
        pos = _spawn_position(state, entity, unit)
        if pos is None:
            return  # no free cell yet; hold and retry next tick
        entity.action = ActionState.idle()
        spawn(state, entity.owner, unit.name, pos)
        return
    # research finished
    player.techs_done.add(action.product)
    entity.action = ActionState.idle()


def _spawn_position(state: GameState, around: Entity, unit: PrototypeDef) -> tuple[float, float] | None:
    passable = state.passable_for(unit)
    cells = around.footprint or {containing_cell(around.pos)}
    min_x = min(c[0] for c in cells)
    max_x = max(c[0] for c in cells)
    min_y = min(c[1] for c in cells)
    max_y = max(c[1] for c in cells)
    for ring in range(1, max(state.defn.map.width, state.defn.map.height)):
        candidates = sorted(
            (x, y)
            for x in range(min_x - ring, max_x + ring + 1)
            for y in range(min_y - ring, max_y + ring + 1)
            if max(min_x - x, x - max_x, 0) == ring or max(min_y - y, y - max_y, 0) == ring
        )
        for cell in candidates:
            if passable(cell):
                return cell_center(cell)
    return None


def _advance_along(entity: Entity, waypoints: list[tuple[float, float]], budget: float) -> list:
    pos = entity.pos
    while budget > _EPS and waypoints:
        nxt = waypoints[0]
        seg = distance(pos, nxt)
        if seg <= budget + _EPS:
            pos = nxt
            budget -= seg
            waypoints.pop(0)
        else:
            frac = budget / seg
            pos = (pos[0] + (nxt[0] - pos[0]) * frac, pos[1] + (nxt[1] - pos[1]) * frac)
            budget = 0.0
    entity.pos = pos
    return waypoints


def _phase_movement(state: GameState, dt: float) -> None:
    for entity in state.entities_in_order():
        if entity.container is not None or entity.pos is None or not entity.completed:
            continue
        speed = effective_speed(state, entity)
        if entity.action.kind == "moving":
            if speed <= 0:
                continue
            path = entity.action.path or []
            if path and not state.passable_for(entity.proto)(containing_cell(path[0])):
                path = find_path(state.passable_for(entity.proto), entity.pos, entity.action.dest)
                if path is None:
                    entity.action = ActionState.idle()
                    continue
            entity.action.path = _advance_along(entity, path, speed * dt)
            if not entity.action.path:
                entity.action = ActionState.idle()
        elif entity.action.kind == "attacking":
            target = state.entities.get(entity.action.target)
            if target is None or target.pos is None:
                entity.action = ActionState.idle()
                continue
            in_reach = any(
                distance(entity.pos, target.pos) <= atk.range + _EPS
                and state.occupied_layers(target) & atk.target_terrain
                for atk in entity.proto.attacks
            )
            if in_reach or speed <= 0:
                continue
            reach = max((atk.range for atk in entity.proto.attacks), default=1.0)
            path = _path_near(state, entity, target.pos, max(reach, 1.0))
            if path:
                _advance_along(entity, path, speed * dt)


def _nearest_process_building(state: GameState, entity: Entity, resource: str) -> Entity | None:
    best = None
    best_key = None
    for other in state.entities_in_order():
        if other.owner != entity.owner or not other.completed or other.pos is None:
            continue
        if not any(match_key(r) == match_key(resource) for r in other.proto.purpose.process):
            continue
        key = (distance(entity.pos, other.pos), other.seq)
        if best_key is None or key < best_key:
            best, best_key = other, key
    return best


def _prepare_gate_open(state: GameState, entity: Entity, resource: str, cell: tuple[int, int]) -> bool:
    """If the owner's faction has an extraction-prep building type for this
    resource, a completed one of theirs must sit on the deposit cell."""
    faction = state.players[entity.owner].faction
    gated = any(
        any(match_key(r) == match_key(resource) for r in proto.purpose.prepare)
        for proto in faction.prototypes
    )
    if not gated:
        return True
    return any(
        e.owner == entity.owner
        and e.completed
        and cell in e.footprint
        and any(match_key(r) == match_key(resource) for r in e.proto.purpose.prepare)
        for e in state.entities.values()
    )


def _phase_gather(state: GameState, dt: float) -> None:
    for entity in state.entities_in_order():
        action = entity.action
        if action.kind != "gathering" or entity.container is not None or entity.pos is None:
            continue
        if action.phase == "extract":
            capacity = 0.0
            for res, cap in entity.proto.gather.items():
                if match_key(res) == match_key(action.resource):
                    capacity = cap
            carried = entity.carrying[1] if entity.carrying else 0.0
            if carried >= capacity - _EPS:
                action.phase = "return"
                continue
            rc = state.cells.get(action.cell)
            remaining = rc.deposits.get(action.resource, 0.0) if rc else 0.0
            if remaining <= _EPS:
                if carried > _EPS:
                    action.phase = "return"
                else:
                    entity.action = ActionState.idle()
                continue
            target_pos = cell_center(action.cell)
            if distance(entity.pos, target_pos) > state.config.deposit_range + _EPS:
                _step_toward(state, entity, target_pos, dt, state.config.deposit_range)
                continue
            if not _prepare_gate_open(state, entity, action.resource, action.cell):
                entity.action = ActionState.idle()
                continue
            amount = min(state.config.gather_rate * dt, capacity - carried, remaining)
            rc.deposits[action.resource] = remaining - amount
            entity.carrying = (action.resource, carried + amount)
            if entity.carrying[1] >= capacity - _EPS:
                action.phase = "return"
        else:  # return
            if not entity.carrying:
                action.phase = "extract"
                continue
            depot = _nearest_process_building(state, entity, action.resource)
            if depot is None:
                entity.action = ActionState.idle()
                continue
            if distance(entity.pos, depot.pos) > state.config.deposit_range + _EPS:
                _step_toward(state, entity, depot.pos, dt, state.config.deposit_range)
                continue
            player = state.players[entity.owner]
            res, amount = entity.carrying
            player.bank[res] = player.bank.get(res, 0.0) + amount
            entity.carrying = None
            action.phase = "extract"


def _path_near(
    state: GameState, entity: Entity, target: tuple[float, float], reach: float
) -> list[tuple[float, float]] | None:
    """Waypoints to the target, or to the best reachable cell within ``reach``
    of it when the target's own cell cannot be entered (deposits, footprints)."""
    passable = state.passable_for(entity.proto)
    direct = find_path(passable, entity.pos, target)
    if direct is not None:
        return direct
    tc = containing_cell(target)
    radius = int(math.ceil(reach)) + 1
    candidates = [
        (x, y)
        for x in range(tc[0] - radius, tc[0] + radius + 1)
        for y in range(tc[1] - radius, tc[1] + radius + 1)
        if distance(cell_center((x, y)), target) <= reach + _EPS and passable((x, y))
    ]
    for cell in sorted(candidates, key=lambda c: (distance(cell_center(c), target), c)):
        path = find_path(passable, entity.pos, cell_center(cell))
        if path is not None:
            return path
    return None


def _step_toward(
    state: GameState, entity: Entity, target: tuple[float, float], dt: float, reach: float = 1.0
) -> None:
    speed = effective_speed(state, entity)
    if speed <= 0:
        return
    path = _path_near(state, entity, target, reach)
    if path:
        _advance_along(entity, path, speed * dt)


def _phase_attacks(state: GameState, dt: float) -> None:
    buffer: list[tuple[str, float]] = []
    for attacker in state.entities_in_order():
        if attacker.action.kind != "attacking" or attacker.container is not None:
            continue
        if not attacker.completed or attacker.pos is None:
            continue
        target = state.entities.get(attacker.action.target)
        if target is None or target.pos is None:
            attacker.action = ActionState.idle()
            continue
        attacker_layers = state.occupied_layers(attacker)
        for attack in attacker.proto.attacks:
            if distance(attacker.pos, target.pos) > attack.range + _EPS:
                continue
            if not state.occupied_layers(target) & attack.target_terrain:
                continue
            last = attacker.last_fire.get(attack.name)
            recharge = effective_recharge(state, attacker, attack)
            if last is not None and (state.tick - last) * dt < recharge - _EPS:
                continue
            player = state.players[attacker.owner]
            if _check_resources(player, attack.require.resources):
                continue
            if attack.require.target_traits and _check_target_traits(attack.require, target):
                continue
            _debit(state, player, attack.require.resources)
            attacker.last_fire[attack.name] = state.tick
            base = _roll_base(state, attack, target.proto)
            base = _effective(state, attacker, "damage", base)
            for victim in _attack_victims(state, attacker, target, attack):
                dmg = resolve_damage(
                    attack,
                    attacker_layers,
                    victim.proto,
                    state.occupied_layers(victim),
                    state.defn.terrain_rules,
                    base=_roll_base(state, attack, victim.proto) if victim is not target else base,
                )
                buffer.append((victim.id, dmg))
    for uid, dmg in buffer:
        victim = state.entities.get(uid)
        if victim is not None:
            victim.hp -= dmg


def _attack_victims(state: GameState, attacker: Entity, target: Entity, attack: AttackDef) -> list[Entity]:
    if attack.shape.kind == "point":
        return [target]
    heading = (target.pos[0] - attacker.pos[0], target.pos[1] - attacker.pos[1])
    area = cells_in_shape(OrientedShape(attack.shape, target.pos, heading))
    victims = []
    for entity in state.entities_in_order():
        if entity is attacker or entity.pos is None or entity.container is not None:
            continue
        if containing_cell(entity.pos) not in area:
            continue
        if not state.occupied_layers(entity) & attack.target_terrain:
            continue
        victims.append(entity)
    return victims


def _phase_repair(state: GameState, dt: float) -> None:
    for entity in state.entities_in_order():
        action = entity.action
        if action.kind != "game_specific" or match_key(action.name or "") != match_key("Repair"):
            continue
        if entity.container is not None or entity.pos is None or entity.proto.repair is None:
            continue
        target = state.entities.get(action.target)
        if target is None or target.pos is None:
            entity.action = ActionState.idle()
            continue
        if target.hp >= target.proto.max_health - _EPS:
            entity.action = ActionState.idle()
            continue
        rate, rng = entity.proto.repair.for_target(target.proto.name)
        if distance(entity.pos, target.pos) > rng + _EPS:
            _step_toward(state, entity, target.pos, dt, rng)
            continue
        target.hp = min(target.proto.max_health, target.hp + rate * dt)


def _phase_deaths(state: GameState) -> None:
    dead = [e for e in state.entities_in_order() if e.hp < 0]
    for entity in dead:
        _remove_entity(state, entity)


def _remove_entity(state: GameState, entity: Entity) -> None:
    # anything carried goes down with the container
    for uid in list(entity.contained):
        inner = state.entities.get(uid)
        if inner is not None:
            _remove_entity(state, inner)
    if entity.container is not None:
        holder = state.entities.get(entity.container)
        if holder is not None and entity.id in holder.contained:
            holder.contained.remove(entity.id)
    for cell in entity.footprint:
        if state.blocked.get(cell) == entity.id:
            del state.blocked[cell]
    state.entities.pop(entity.id, None)
    state.effects = [eff for eff in state.effects if eff.target != entity.id]


def _phase_terrain(state: GameState) -> None:
    for cell in state.cells.values():
        for layer in cell.layers:
            if layer.condition is None:
                continue
            resource, _, replacement = layer.condition
            if cell.deposits.get(resource, 0.0) <= 1e-12:
                layer.label = replacement
                layer.condition = None


def eliminated_players(state: GameState) -> list[str]:
    """Players who had assets and lost them all."""
    out = []
    for pid, player in state.players.items():
        if player.ever_had_entities and not any(e.owner == pid for e in state.entities.values()):
            out.append(pid)
    return out


# --- player-facing views ------------------------------------------------------------


@dataclass(frozen=True)
class EntityView:
    id: str
    proto: str
    kind: str
    pos: tuple[float, float] | None
    hp: float
    action: str
    action_detail: str = ""
    container: str | None = None
    carrying: tuple[str, float] | None = None


@dataclass(frozen=True)
class CellView:
    coord: tuple[int, int]
    layers: tuple[str, ...]
    deposits: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class UpdateView:
    player: str
    tick: int
    bank: dict[str, float]
    own: tuple[EntityView, ...]
    enemies: tuple[EntityView, ...]
    cells: tuple[CellView, ...]


def _action_view(entity: Entity) -> tuple[str, str]:
    action = entity.action
    if action.kind == "idle":
        return "Idle", ""
    if action.kind == "moving":
        return "Moving", f"{_fmt(action.dest[0])},{_fmt(action.dest[1])}"
    if action.kind == "attacking":
        return "Attacking", action.target or ""
    if action.kind == "gathering":
        return "Gathering", action.resource or ""
    if action.kind == "build":
        return "Build", action.product or ""
    return action.name or "Idle", action.target or ""


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def visible_update(state: GameState, pid: str) -> UpdateView:
    """Vision-limited snapshot for one player."""
    player = state.players[pid]
    own = []
    for entity in sorted(state.own_entities(pid), key=lambda e: e.id):
        kind_name, detail = _action_view(entity)
        own.append(
            EntityView(
                id=entity.id,
                proto=entity.proto.name,
                kind=entity.proto.kind,
                pos=entity.pos,
                hp=entity.hp,
                action=kind_name,
                action_detail=detail,
                container=entity.container,
                carrying=entity.carrying,
            )
        )
    enemies = []
    for entity in sorted(_visible_enemies(state, pid), key=lambda e: e.id):
        kind_name, detail = _action_view(entity)
        enemies.append(
            EntityView(
                id=entity.id,
                proto=entity.proto.name,
                kind=entity.proto.kind,
                pos=entity.pos,
                hp=entity.hp,
                action=kind_name,
            )
        )
    cells = []
    for coord in sorted(player.visible_cells):
        labels = tuple(sorted(state.layer_labels(coord)))
        rc = state.cells.get(coord)
        deposits = tuple(sorted(rc.deposits.items())) if rc else ()
        deposits = tuple((r, a) for r, a in deposits if a > _EPS)
        cells.append(CellView(coord=coord, layers=labels, deposits=deposits))
    return UpdateView(
        player=pid,
        tick=state.tick,
        bank=dict(player.bank),
        own=tuple(own),
        enemies=tuple(enemies),
        cells=tuple(cells),
    )


# --- digests -----------------------------------------------------------------------


def state_digest(state: GameState) -> str:
    """Stable hash of the observable state, for determinism and replay checks."""
    doc = {
        "tick": state.tick,
        "hz": state.tick_hz,
        "seed": state.seed,
        "players": {
            pid: {
                "faction": p.faction.name,
                "bank": {k: p.bank[k] for k in sorted(p.bank)},
                "techs": sorted(p.techs_done),
            }
            for pid, p in sorted(state.players.items())
        },
        "spent": {k: state.spent[k] for k in sorted(state.spent)},
        "entities": [
            {
                "id": e.id,
                "owner": e.owner,
                "proto": e.proto.name,
                "pos": e.pos,
                "hp": e.hp,
                "built": e.completed,
                "action": [
                    e.action.kind,
                    e.action.dest,
                    e.action.target,
                    e.action.resource,
                    e.action.cell,
                    e.action.phase,
                    e.action.product,
                    round(e.action.remaining_s, 9),
                    e.action.name,
                ],
                "carrying": e.carrying,
                "contained": sorted(e.contained),
                "fired": {k: e.last_fire[k] for k in sorted(e.last_fire)},
                "uses": {k: e.ability_uses[k] for k in sorted(e.ability_uses)},
            }
            for e in sorted(state.entities.values(), key=lambda e: e.id)
        ],
        "effects": [
            [f.ability, f.source, f.target, f.expires_at_tick]
            for f in state.effects
        ],
        "cells": [
            {
                "at": list(coord),
                "layers": [layer.label for layer in cell.layers],
                "deposits": {k: cell.deposits[k] for k in sorted(cell.deposits) if cell.deposits[k] > 0},
            }
            for coord, cell in sorted(state.cells.items())
        ],
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
