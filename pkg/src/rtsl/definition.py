"""Compile parsed RTSL documents into typed, cross-checked game definitions.

A complete game document has four kinds of top-level section:

* ``<Factions>`` - the playable faction names;
* ``<Resource>`` - the resource universe and each player's starting bank;
* one element per faction name holding its ``Building`` / ``Unit`` / ``Tech``
  sections;
* ``<Map>`` - the board, and optionally ``<Terrain>`` blocks declaring
  terrain-conditional combat modifiers.

Compilation is deterministic and all-or-nothing; structural problems raise
:class:`CompileError` subclasses while dangling cross-references are reported
by :func:`validate_references` as diagnostics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from rtsl.document import DocNode, Keyword, classify_tag, match_key, normalize_name, parse_coordinate_tag

__all__ = [
    "CompileError",
    "MissingField",
    "BadNumber",
    "DuplicateName",
    "Diagnostic",
    "Mitigation",
    "ArmorSpec",
    "DamageSpec",
    "ShapeSpec",
    "RequireSpec",
    "PropertyModifier",
    "AbilityDef",
    "AttackDef",
    "ContainSpec",
    "RepairSpec",
    "PurposeSpec",
    "TechDef",
    "PrototypeDef",
    "FactionDef",
    "TerrainLayer",
    "CellDef",
    "MapDef",
    "ModifyRule",
    "GameDefinition",
    "compile_definition",
    "validate_references",
    "parse_range_text",
]


class CompileError(ValueError):
    """Structural compilation failure; ``path`` names the offending node."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.reason = message


class MissingField(CompileError):
    def __init__(self, path: str):
        super().__init__(path, "required field is missing")


class BadNumber(CompileError):
    def __init__(self, path: str, text: str):
        super().__init__(path, f"not a number: {text!r}")
        self.text = text


class DuplicateName(CompileError):
    def __init__(self, path: str, name: str):
        super().__init__(path, f"duplicate name {name!r}")
        self.name = name


@dataclass(frozen=True)
class Diagnostic:
    """One dangling-reference finding, machine-readable as ``LEVEL path message``."""

    category: str
    path: str
    name: str

    def __str__(self) -> str:
        return f"ERROR {self.path} {self.category}: unresolved name {self.name!r}"


UNKNOWN_UPGRADE_TARGET = "UnknownUpgradeTarget"
UNKNOWN_RESOURCE = "UnknownResource"
UNKNOWN_BUILDING = "UnknownBuilding"
UNKNOWN_TECH = "UnknownTech"
UNKNOWN_BUILD_PRODUCT = "UnknownBuildProduct"


# --- leaf specs ----------------------------------------------------------------


@dataclass
class Mitigation:
    """Armor entry: flat point reduction or percentage reduction."""

    kind: str  # "flat" | "percent"
    value: float


@dataclass
class ArmorSpec:
    universal: Mitigation | None = None
    universal_label: str | None = None
    per_attack: dict[str, Mitigation] = field(default_factory=dict)
    armor_class: str | None = None


@dataclass
class DamageSpec:
    universal: tuple[float, float]
    per_target: dict[str, tuple[float, float]] = field(default_factory=dict)

    def for_target(self, proto_name: str) -> tuple[float, float]:
        return self.per_target.get(match_key(proto_name), self.universal)


@dataclass
class ShapeSpec:
    """Geometry of an entity footprint or attack area.

    kinds: point (no dims), square (side), rectangle (parallel, perpendicular),
    circle (radius), f_cone / b_cone (height, base length).
    """

    kind: str
    dims: tuple[float, ...] = ()

    POINT = "point"
    SQUARE = "square"
    RECTANGLE = "rectangle"
    CIRCLE = "circle"
    F_CONE = "f_cone"
    B_CONE = "b_cone"


POINT_SHAPE = ShapeSpec(ShapeSpec.POINT)


@dataclass
class RequireSpec:
    resources: dict[str, float] = field(default_factory=dict)
    buildings: list[str] = field(default_factory=list)
    techs: list[str] = field(default_factory=list)
    target_traits: dict[str, object] = field(default_factory=dict)
    distance: tuple[float, float] | None = None  # (greater, less)

    def is_empty(self) -> bool:
        return not (self.resources or self.buildings or self.techs or self.target_traits or self.distance)


@dataclass
class PropertyModifier:
    """One property override carried by an ability.

    ``prop`` is the normalized property key ("speed", "recharge", ...);
    ``op`` is "set" or "add_percent"; ``scope`` says whether the modifier hits
    allied or enemy targets of the cast.
    """

    prop: str
    op: str
    value: float
    scope: str = "enemy"


@dataclass
class AbilityDef:
    name: str
    modifiers: list[PropertyModifier] = field(default_factory=list)
    require: RequireSpec = field(default_factory=RequireSpec)
    time_limit_s: float | None = None
    use_limit: int | None = None


@dataclass
class AttackDef:
    name: str
    range: float
    damage: DamageSpec
    recharge_s: float
    shape: ShapeSpec = field(default_factory=lambda: ShapeSpec(ShapeSpec.POINT))
    target_terrain: frozenset[str] = frozenset()
    require: RequireSpec = field(default_factory=RequireSpec)


@dataclass
class ContainSpec:
    max_weight: float
    allowed_armor_classes: frozenset[str] = frozenset()


@dataclass
class RepairSpec:
    rate_hp_per_s: float
    range: float = 1.0
    per_target: dict[str, tuple[float, float]] = field(default_factory=dict)

    def for_target(self, proto_name: str) -> tuple[float, float]:
        return self.per_target.get(match_key(proto_name), (self.rate_hp_per_s, self.range))


@dataclass
class PurposeSpec:
    process: list[str] = field(default_factory=list)
    prepare: list[str] = field(default_factory=list)
    build: list[str] = field(default_factory=list)


@dataclass
class TechDef:
    name: str
    build_time_s: float = 0.0
    require: RequireSpec = field(default_factory=RequireSpec)


@dataclass
class PrototypeDef:
    kind: str  # "unit" | "building"
    name: str
    max_health: float
    build_time_s: float = 0.0
    armor: ArmorSpec = field(default_factory=ArmorSpec)
    shape: ShapeSpec = field(default_factory=lambda: ShapeSpec(ShapeSpec.POINT))
    occupy_terrain: frozenset[str] = frozenset()
    movement_terrain: frozenset[str] | None = None
    vision: float = 0.0
    speed: float = 0.0
    attacks: list[AttackDef] = field(default_factory=list)
    require: RequireSpec = field(default_factory=RequireSpec)
    upgrades_to: list[str] = field(default_factory=list)
    purpose: PurposeSpec = field(default_factory=PurposeSpec)
    gather: dict[str, float] = field(default_factory=dict)
    contain: ContainSpec | None = None
    repair: RepairSpec | None = None
    abilities: list[AbilityDef] = field(default_factory=list)
    weight: float | None = None
    traits: dict[str, object] = field(default_factory=dict)
    # Runtime-flavored tags the listings carry (UniqueID, Action, Position,
    # Enemy); kept so nothing in a listing is silently dropped.
    instance_hints: dict[str, str] = field(default_factory=dict)

    @property
    def moves_over(self) -> frozenset[str]:
        return self.movement_terrain if self.movement_terrain is not None else self.occupy_terrain

    def ability(self, name: str) -> AbilityDef | None:
        want = match_key(name)
        for ab in self.abilities:
            if match_key(ab.name) == want:
                return ab
        return None


@dataclass
class FactionDef:
    name: str
    buildings: list[PrototypeDef] = field(default_factory=list)
    units: list[PrototypeDef] = field(default_factory=list)
    techs: list[TechDef] = field(default_factory=list)

    @property
    def prototypes(self) -> list[PrototypeDef]:
        return self.buildings + self.units

    def prototype(self, name: str) -> PrototypeDef | None:
        want = match_key(name)
        for proto in self.prototypes:
            if match_key(proto.name) == want:
                return proto
        return None

    def tech(self, name: str) -> TechDef | None:
        want = match_key(name)
        for tech in self.techs:
            if match_key(tech.name) == want:
                return tech
        return None


@dataclass
class TerrainLayer:
    label: str
    # (resource, amount, replacement label): the label flips to the
    # replacement once the cell's deposit of that resource is exhausted.
    condition: tuple[str, float, str] | None = None


@dataclass
class CellDef:
    layers: list[TerrainLayer] = field(default_factory=list)
    deposits: dict[str, float] = field(default_factory=dict)


@dataclass
class MapDef:
    name: str
    width: int
    height: int
    cells: dict[tuple[int, int], CellDef] = field(default_factory=dict)
    default_layer: str = "Ground"

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height


@dataclass
class ModifyRule:
    """Combat adjustment conditioned on attacker and target terrain."""

    on_layer: str
    activity: str  # normalized, e.g. "attack"
    versus_layer: str
    prop: str  # normalized, e.g. "damage"
    percent: float


@dataclass
class GameDefinition:
    factions: list[FactionDef]
    starting_resources: dict[str, float]
    map: MapDef
    terrain_rules: list[ModifyRule] = field(default_factory=list)

    def faction(self, name: str) -> FactionDef | None:
        want = match_key(name)
        for f in self.factions:
            if match_key(f.name) == want:
                return f
        return None

    def all_prototypes(self):
        for f in self.factions:
            yield from f.prototypes

    def resource_names(self) -> list[str]:
        return list(self.starting_resources)


# --- small parsing helpers ------------------------------------------------------

_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_RANGE_RE = re.compile(r"^(\d+(?:\.\d+)?)\s*-\s*(\d+(?:\.\d+)?)$")


def _number(text: str, path: str) -> float:
    cleaned = text.strip().replace(" ", "")
    if not _NUMBER_RE.match(cleaned):
        raise BadNumber(path, text)
    return float(cleaned)


def parse_range_text(text: str, path: str = "") -> tuple[float, float]:
    """Parse ``"3-9"`` / ``"2 - 5"`` / ``"4"`` into a (min, max) pair."""
    s = text.strip()
    m = _RANGE_RE.match(s)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        return (lo, hi) if lo <= hi else (hi, lo)
    if _NUMBER_RE.match(s):
        n = float(s)
        return (n, n)
    raise BadNumber(path, text)


def _is_numeric(text: str) -> bool:
    return bool(_NUMBER_RE.match(text.strip().replace(" ", "")))


def _is_percent(text: str) -> bool:
    s = text.strip()
    return s.endswith("%") and _is_numeric(s[:-1])


def _name_items(node: DocNode) -> list[str]:
    """Names listed in an element: child tags, or the single text payload."""
    if node.children:
        return [c.tag for c in node.children]
    if node.text is not None:
        return [node.text]
    return []


def _bare_value(value_text: str) -> object:
    s = value_text.strip()
    if s.casefold() == "true":
        return True
    if s.casefold() == "false":
        return False
    if _is_numeric(s):
        return float(s.replace(" ", ""))
    return s


def _text_of(node: DocNode, path: str) -> str:
    if node.text is None:
        raise MissingField(path)
    return node.text


# --- section compilers -----------------------------------------------------------


def _compile_mitigation(text: str, path: str) -> Mitigation:
    if _is_percent(text):
        value = _number(text.strip()[:-1], path)
        if not 0 <= value <= 100:
            raise BadNumber(path, text)
        return Mitigation("percent", value)
    return Mitigation("flat", _number(text, path))


def _compile_armor(node: DocNode, path: str) -> ArmorSpec:
    spec = ArmorSpec()
    if node.text is not None:
        if _is_numeric(node.text) or _is_percent(node.text):
            spec.universal = _compile_mitigation(node.text, path)
        else:
            spec.armor_class = node.text
        return spec
    named: list[tuple[str, Mitigation]] = []
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        if child.text is None and not child.children:
            # bare word: a universal value or an armor-class label
            if _is_numeric(child.tag) or _is_percent(child.tag):
                spec.universal = _compile_mitigation(child.tag, cpath)
            else:
                spec.armor_class = child.tag
        elif child.text is not None:
            named.append((child.tag, _compile_mitigation(child.text, cpath)))
        else:
            raise BadNumber(cpath, "<nested>")
    if spec.universal is None and len(named) == 1:
        # A lone named entry shields against everything, keeping its label
        # ("a shield which will decrease any attack damage by 4 points").
        spec.universal_label, spec.universal = named[0]
    else:
        for name, mit in named:
            spec.per_attack[match_key(name)] = mit
    return spec


def _compile_damage(node: DocNode, path: str) -> DamageSpec:
    universal: tuple[float, float] | None = None
    per_target: dict[str, tuple[float, float]] = {}
    if node.text is not None:
        universal = parse_range_text(node.text, path)
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        if child.text is None and not child.children:
            universal = parse_range_text(child.tag, cpath)
        elif child.text is not None:
            per_target[match_key(child.tag)] = parse_range_text(child.text, cpath)
        else:
            raise BadNumber(cpath, "<nested>")
    if universal is None:
        if not per_target:
            raise MissingField(path)
        universal = (0.0, 0.0)
    return DamageSpec(universal=universal, per_target=per_target)


def _compile_shape(shape_node: DocNode | None, size_text: str | None, path: str) -> ShapeSpec:
    if shape_node is None:
        return ShapeSpec(ShapeSpec.POINT)
    kind_name: str | None = None
    inline_size: str | None = None
    if shape_node.text is not None:
        kind_name = shape_node.text
    else:
        for child in shape_node.children:
            if child.text is None and not child.children:
                kind_name = child.tag
            else:
                kind_name = child.tag
                if child.text is not None:
                    inline_size = child.text
                else:
                    size_child = child.child("Size")
                    if size_child is not None and size_child.text is not None:
                        inline_size = size_child.text
            break
    if kind_name is None:
        raise MissingField(f"{path}/Shape")
    kinds = {
        match_key("Point"): ShapeSpec.POINT,
        match_key("Square"): ShapeSpec.SQUARE,
        match_key("Rectangle"): ShapeSpec.RECTANGLE,
        match_key("Circle"): ShapeSpec.CIRCLE,
        match_key("F_Cone"): ShapeSpec.F_CONE,
        match_key("B_Cone"): ShapeSpec.B_CONE,
    }
    kind = kinds.get(match_key(kind_name))
    if kind is None:
        raise CompileError(f"{path}/Shape", f"unknown shape {kind_name!r}")
    if kind == ShapeSpec.POINT:
        return ShapeSpec(kind)
    size = inline_size if inline_size is not None else size_text
    if size is None:
        raise MissingField(f"{path}/Shape/Size")
    spath = f"{path}/Shape/Size"
    # the pair in a size is positional ("height-base"), not a min/max range
    m = _RANGE_RE.match(size.strip())
    if m:
        pair = (float(m.group(1)), float(m.group(2)))
    else:
        n = _number(size, spath)
        pair = (n, n)
    if kind in (ShapeSpec.SQUARE, ShapeSpec.CIRCLE):
        if pair[0] != pair[1]:
            raise BadNumber(spath, size)
        dims: tuple[float, ...] = (pair[0],)
    else:
        dims = pair
    for d in dims:
        if d <= 0:
            raise BadNumber(spath, size)
    return ShapeSpec(kind, dims)


def _compile_require(node: DocNode, path: str) -> RequireSpec:
    req = RequireSpec()
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        kind = classify_tag(child.tag)
        if kind is Keyword.RESOURCE:
            for res in child.children:
                req.resources[res.tag] = _number(_text_of(res, f"{cpath}/{res.tag}"), f"{cpath}/{res.tag}")
        elif kind is Keyword.BUILDING:
            req.buildings.extend(_name_items(child))
        elif kind is Keyword.DISTANCE:
            less = child.child("Less")
            greater = child.child("Greater")
            lo = _number(_text_of(greater, f"{cpath}/Greater"), f"{cpath}/Greater") if greater else 0.0
            hi = _number(_text_of(less, f"{cpath}/Less"), f"{cpath}/Less") if less else float("inf")
            if lo >= hi:
                raise CompileError(cpath, "Greater bound must be below Less bound")
            req.distance = (lo, hi)
        elif kind is Keyword.ENEMY:
            for trait in child.children:
                req.target_traits[normalize_name(trait.tag)] = _bare_value(
                    _text_of(trait, f"{cpath}/{trait.tag}")
                )
        elif child.text is not None and _is_numeric(child.text):
            # direct resource cost, e.g. an attack requiring 5 mana
            req.resources[child.tag] = _number(child.text, cpath)
        elif child.text is None and not child.children:
            req.techs.append(child.tag)
        else:
            raise CompileError(cpath, "unrecognized requirement")
    if node.text is not None:
        req.techs.append(node.text)
    return req


def _compile_attack(node: DocNode, path: str) -> AttackDef:
    range_node = node.child("Range")
    damage_node = node.child("Damage")
    recharge_node = node.child("Recharge")
    if damage_node is None:
        raise MissingField(f"{path}/Damage")
    if recharge_node is None:
        raise MissingField(f"{path}/Recharge")
    rng = _number(_text_of(range_node, f"{path}/Range"), f"{path}/Range") if range_node else 0.0
    recharge = _number(_text_of(recharge_node, f"{path}/Recharge"), f"{path}/Recharge")
    if recharge <= 0:
        raise BadNumber(f"{path}/Recharge", recharge_node.text or "")
    if rng < 0:
        raise BadNumber(f"{path}/Range", range_node.text or "")
    damage = _compile_damage(damage_node, f"{path}/Damage")
    for lo, hi in [damage.universal, *damage.per_target.values()]:
        if not (hi >= lo >= 0):
            raise BadNumber(f"{path}/Damage", f"{lo}-{hi}")
    size_node = node.child("Size")
    shape = _compile_shape(node.child("Shape"), size_node.text if size_node else None, path)
    terrain_node = node.child("Terrain")
    terrain = frozenset(_name_items(terrain_node)) if terrain_node else frozenset()
    require_node = node.child("Require")
    require = _compile_require(require_node, f"{path}/Require") if require_node else RequireSpec()
    return AttackDef(
        name=node.tag,
        range=rng,
        damage=damage,
        recharge_s=recharge,
        shape=shape,
        target_terrain=terrain,
        require=require,
    )


def _compile_purpose(node: DocNode, path: str) -> PurposeSpec:
    purpose = PurposeSpec()
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        kind = classify_tag(child.tag)
        if kind in (Keyword.PROCESS, Keyword.PREPARE):
            wrapped = child.child("Resource")
            names = _name_items(wrapped) if wrapped is not None else _name_items(child)
            if kind is Keyword.PROCESS:
                purpose.process.extend(names)
            else:
                purpose.prepare.extend(names)
        elif kind is Keyword.BUILD:
            purpose.build.extend(_name_items(child))
        else:
            raise CompileError(cpath, "unrecognized purpose entry")
    return purpose


def _compile_repair(node: DocNode, path: str) -> RepairSpec:
    rate: float | None = None
    rng = 1.0
    per_target: dict[str, tuple[float, float]] = {}
    if node.text is not None:
        rate = _number(node.text, path)
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        if child.text is None and not child.children:
            rate = _number(child.tag, cpath)
        elif classify_tag(child.tag) is Keyword.RANGE:
            rng = _number(_text_of(child, cpath), cpath)
        else:
            t_rate: float | None = None
            t_range: float | None = None
            if child.text is not None:
                t_rate = _number(child.text, cpath)
            for sub in child.children:
                if sub.text is None and not sub.children:
                    t_rate = _number(sub.tag, f"{cpath}/{sub.tag}")
                elif classify_tag(sub.tag) is Keyword.RANGE:
                    t_range = _number(_text_of(sub, f"{cpath}/Range"), f"{cpath}/Range")
            if t_rate is None:
                raise MissingField(cpath)
            per_target[match_key(child.tag)] = (t_rate, t_range if t_range is not None else rng)
    if rate is None:
        raise MissingField(path)
    if rate <= 0:
        raise BadNumber(path, str(rate))
    # overrides that predate the universal range pick it up now
    per_target = {k: (r, rg) for k, (r, rg) in per_target.items()}
    return RepairSpec(rate_hp_per_s=rate, range=rng, per_target=per_target)


def _compile_contain(node: DocNode, path: str) -> ContainSpec:
    weight_node = node.child("Weight")
    if weight_node is None:
        raise MissingField(f"{path}/Weight")
    max_weight = _number(_text_of(weight_node, f"{path}/Weight"), f"{path}/Weight")
    if max_weight <= 0:
        raise BadNumber(f"{path}/Weight", weight_node.text or "")
    armor_node = node.child("Armor")
    classes = frozenset(_name_items(armor_node)) if armor_node else frozenset()
    return ContainSpec(max_weight=max_weight, allowed_armor_classes=classes)


def _modifier_payload(text: str, path: str) -> tuple[str, float]:
    s = text.strip()
    if _is_percent(s):
        return "add_percent", _number(s[:-1], path)
    return "set", _number(s, path)


def _compile_ability(node: DocNode, path: str) -> AbilityDef:
    ability = AbilityDef(name=node.tag)
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        kind = classify_tag(child.tag)
        if kind is Keyword.ENEMY:
            for prop in child.children:
                op, value = _modifier_payload(_text_of(prop, f"{cpath}/{prop.tag}"), f"{cpath}/{prop.tag}")
                ability.modifiers.append(
                    PropertyModifier(prop=match_key(prop.tag), op=op, value=value, scope="enemy")
                )
        elif kind is Keyword.REQUIRE:
            ability.require = _compile_require(child, cpath)
        elif kind is Keyword.TIME_LIMIT:
            ability.time_limit_s = _number(_text_of(child, cpath), cpath)
            if ability.time_limit_s <= 0:
                raise BadNumber(cpath, child.text or "")
        elif kind is Keyword.LIMIT:
            raw = _number(_text_of(child, cpath), cpath)
            if raw != int(raw) or raw < 1:
                raise BadNumber(cpath, child.text or "")
            ability.use_limit = int(raw)
        elif child.text is not None:
            op, value = _modifier_payload(child.text, cpath)
            ability.modifiers.append(
                PropertyModifier(prop=match_key(child.tag), op=op, value=value, scope="ally")
            )
        else:
            raise CompileError(cpath, "unrecognized ability entry")
    return ability


_INSTANCE_TAGS = {Keyword.UNIQUE_ID, Keyword.ACTION, Keyword.ENEMY}


def _compile_prototype(node: DocNode, kind: str, path: str) -> PrototypeDef:
    name = node.tag
    max_health: float | None = None
    build_time = 0.0
    armor = ArmorSpec()
    shape_node: DocNode | None = None
    size_text: str | None = None
    occupy: frozenset[str] = frozenset()
    movement: frozenset[str] | None = None
    movement_present = False
    vision = 0.0
    speed = 0.0
    attacks: list[AttackDef] = []
    require = RequireSpec()
    upgrades: list[str] = []
    purpose = PurposeSpec()
    gather: dict[str, float] = {}
    contain: ContainSpec | None = None
    repair: RepairSpec | None = None
    abilities: list[AbilityDef] = []
    weight: float | None = None
    traits: dict[str, object] = {}
    hints: dict[str, str] = {}

    for child in node.children:
        cpath = f"{path}/{child.tag}"
        tag_kind = classify_tag(child.tag)
        if tag_kind in _INSTANCE_TAGS:
            hints[normalize_name(child.tag)] = child.text or ""
        elif match_key(child.tag) == match_key("Position"):
            xy = child.child("X,Y")
            hints["Position"] = (xy.text if xy is not None and xy.text else child.text) or ""
        elif tag_kind is Keyword.HEALTH_POINT:
            max_health = _number(_text_of(child, cpath), cpath)
        elif tag_kind is Keyword.BUILD_TIME:
            build_time = _number(_text_of(child, cpath), cpath)
        elif tag_kind is Keyword.ARMOR:
            armor = _compile_armor(child, cpath)
        elif tag_kind is Keyword.SHAPE:
            shape_node = child
        elif tag_kind is Keyword.SIZE:
            size_text = _text_of(child, cpath)
        elif tag_kind is Keyword.TERRAIN:
            occupy = frozenset(_name_items(child))
        elif tag_kind is Keyword.MOVEMENT:
            movement_present = True
            terrain = child.child("Terrain")
            movement = frozenset(_name_items(terrain)) if terrain is not None else frozenset(_name_items(child))
        elif tag_kind is Keyword.VISION:
            vision = _number(_text_of(child, cpath), cpath)
        elif tag_kind is Keyword.SPEED:
            speed = _number(_text_of(child, cpath), cpath)
        elif tag_kind is Keyword.ATTACK:
            for atk in child.children:
                attacks.append(_compile_attack(atk, f"{cpath}/{atk.tag}"))
        elif tag_kind is Keyword.REQUIRE:
            require = _compile_require(child, cpath)
        elif tag_kind is Keyword.UPGRADE:
            upgrades.extend(_name_items(child))
        elif tag_kind is Keyword.PURPOSE:
            purpose = _compile_purpose(child, cpath)
        elif tag_kind is Keyword.GATHER:
            for res in child.children:
                lo, hi = parse_range_text(_text_of(res, f"{cpath}/{res.tag}"), f"{cpath}/{res.tag}")
                capacity = hi
                if capacity <= 0:
                    raise BadNumber(f"{cpath}/{res.tag}", res.text or "")
                gather[res.tag] = capacity
        elif tag_kind is Keyword.CONTAIN:
            contain = _compile_contain(child, cpath)
        elif tag_kind is Keyword.REPAIR:
            repair = _compile_repair(child, cpath)
        elif tag_kind is Keyword.WEIGHT:
            weight = _number(_text_of(child, cpath), cpath)
            if weight <= 0:
                raise BadNumber(cpath, child.text or "")
        elif isinstance(tag_kind, Keyword):
            raise CompileError(cpath, f"keyword {child.tag!r} is not valid inside a prototype")
        elif child.children:
            abilities.append(_compile_ability(child, cpath))
        else:
            traits[normalize_name(child.tag)] = _bare_value(child.text if child.text is not None else "True")

    if max_health is None:
        raise MissingField(f"{path}/Health Point")
    if max_health <= 0:
        raise BadNumber(f"{path}/Health Point", str(max_health))
    if not occupy:
        raise MissingField(f"{path}/Terrain")
    shape = _compile_shape(shape_node, size_text, path)
    if kind == "building" and not movement_present:
        speed = 0.0
    attacks = [
        AttackDef(
            name=a.name,
            range=a.range,
            damage=a.damage,
            recharge_s=a.recharge_s,
            shape=a.shape,
            target_terrain=a.target_terrain if a.target_terrain else occupy,
            require=a.require,
        )
        for a in attacks
    ]
    return PrototypeDef(
        kind=kind,
        name=name,
        max_health=max_health,
        build_time_s=build_time,
        armor=armor,
        shape=shape,
        occupy_terrain=occupy,
        movement_terrain=movement,
        vision=vision,
        speed=speed,
        attacks=attacks,
        require=require,
        upgrades_to=upgrades,
        purpose=purpose,
        gather=gather,
        contain=contain,
        repair=repair,
        abilities=abilities,
        weight=weight,
        traits=traits,
        instance_hints=hints,
    )


def _compile_tech(node: DocNode, path: str) -> TechDef:
    build_time = 0.0
    require = RequireSpec()
    for child in node.children:
        cpath = f"{path}/{child.tag}"
        kind = classify_tag(child.tag)
        if kind is Keyword.BUILD_TIME:
            build_time = _number(_text_of(child, cpath), cpath)
        elif kind is Keyword.REQUIRE:
            require = _compile_require(child, cpath)
        else:
            raise CompileError(cpath, "unrecognized tech entry")
    return TechDef(name=node.tag, build_time_s=build_time, require=require)


def _compile_faction(name: str, node: DocNode | None) -> FactionDef:
    faction = FactionDef(name=name)
    if node is None:
        return faction
    seen: set[str] = set()
    for section in node.children:
        spath = f"{name}/{section.tag}"
        kind = classify_tag(section.tag)
        if kind is Keyword.BUILDING:
            for proto in section.children:
                _check_unique(seen, proto.tag, spath)
                faction.buildings.append(_compile_prototype(proto, "building", f"{spath}/{proto.tag}"))
        elif kind is Keyword.UNIT:
            for proto in section.children:
                _check_unique(seen, proto.tag, spath)
                faction.units.append(_compile_prototype(proto, "unit", f"{spath}/{proto.tag}"))
        elif match_key(section.tag) == match_key("Tech"):
            for tech in section.children:
                _check_unique(seen, tech.tag, spath)
                faction.techs.append(_compile_tech(tech, f"{spath}/{tech.tag}"))
        else:
            raise CompileError(spath, "faction sections must be Building, Unit, or Tech")
    return faction


def _check_unique(seen: set[str], name: str, path: str) -> None:
    key = match_key(name)
    if key in seen:
        raise DuplicateName(path, name)
    seen.add(key)


def _compile_cell_terrain(node: DocNode, path: str, cell: CellDef, default_layer: str) -> None:
    items: list[DocNode] = node.children if node.children else []
    if not items and node.text is not None:
        cell.layers.append(TerrainLayer(label=node.text))
        return
    for item in items:
        ipath = f"{path}/{item.tag}"
        if item.text is None and not item.children:
            cell.layers.append(TerrainLayer(label=item.tag))
        elif item.text is not None:
            amount = _number(item.text, ipath)
            if amount <= 0:
                raise BadNumber(ipath, item.text)
            replacement = item.condition_suffix if item.condition_suffix else default_layer
            cell.layers.append(TerrainLayer(label=item.tag, condition=(item.tag, amount, replacement)))
            cell.deposits[item.tag] = cell.deposits.get(item.tag, 0.0) + amount
        else:
            raise CompileError(ipath, "unrecognized terrain entry")


def _compile_map(node: DocNode, default_layer: str) -> MapDef:
    name_node = node.child("Name")
    name = name_node.text if name_node is not None and name_node.text else "Unnamed"
    explicit: tuple[int, int] | None = None
    size_node = node.child("Size")
    if size_node is not None:
        lo, hi = parse_range_text(_text_of(size_node, "Map/Size"), "Map/Size")
        m = _RANGE_RE.match(size_node.text.strip())
        if m:
            explicit = (int(float(m.group(1))), int(float(m.group(2))))
        else:
            explicit = (int(lo), int(lo))
    cells: dict[tuple[int, int], CellDef] = {}
    max_x = max_y = -1
    for child in node.children:
        kind = classify_tag(child.tag)
        if kind in (Keyword.NAME, Keyword.SIZE):
            continue
        coord = parse_coordinate_tag(child.tag)
        if coord is None:
            raise CompileError(f"Map/{child.tag}", "expected a coordinate cell, Name, or Size")
        if coord in cells:
            raise DuplicateName(f"Map/{child.tag}", child.tag)
        cell = CellDef()
        for part in child.children:
            ppath = f"Map/{child.tag}/{part.tag}"
            if classify_tag(part.tag) is Keyword.TERRAIN:
                _compile_cell_terrain(part, ppath, cell, default_layer)
            elif part.text is not None:
                amount = _number(part.text, ppath)
                if amount < 0:
                    raise BadNumber(ppath, part.text)
                cell.deposits[part.tag] = cell.deposits.get(part.tag, 0.0) + amount
            else:
                raise CompileError(ppath, "unrecognized cell entry")
        if not cell.layers:
            cell.layers.append(TerrainLayer(label=default_layer))
        cells[coord] = cell
        max_x, max_y = max(max_x, coord[0]), max(max_y, coord[1])
    if explicit is not None:
        width, height = explicit
    else:
        width, height = max_x + 1, max_y + 1
    if width < 1 or height < 1:
        raise CompileError("Map", "map must be at least 1x1")
    for coord in cells:
        if not (0 <= coord[0] < width and 0 <= coord[1] < height):
            raise CompileError(f"Map/({coord[0]},{coord[1]})", "declared cell lies outside the map size")
    return MapDef(name=name, width=width, height=height, cells=cells, default_layer=default_layer)


def _compile_terrain_rules(node: DocNode) -> list[ModifyRule]:
    rules: list[ModifyRule] = []
    for layer in node.children:
        modify = layer.child("Modify")
        if modify is None:
            continue
        for activity in modify.children:
            for versus in activity.children:
                for prop in versus.children:
                    text = _text_of(prop, f"Terrain/{layer.tag}/Modify/{activity.tag}/{versus.tag}/{prop.tag}")
                    path = f"Terrain/{layer.tag}/Modify/{activity.tag}/{versus.tag}/{prop.tag}"
                    if not _is_percent(text):
                        raise BadNumber(path, text)
                    rules.append(
                        ModifyRule(
                            on_layer=layer.tag,
                            activity=match_key(activity.tag),
                            versus_layer=versus.tag,
                            prop=match_key(prop.tag),
                            percent=_number(text.strip()[:-1], path),
                        )
                    )
    return rules


def compile_definition(root: DocNode, default_layer: str = "Ground") -> GameDefinition:
    """Compile a parsed document into a :class:`GameDefinition`.

    Raises :class:`MissingField` / :class:`BadNumber` / :class:`DuplicateName`
    on structural problems.  Cross-reference integrity is checked separately by
    :func:`validate_references`.
    """
    factions_node: DocNode | None = None
    resource_node: DocNode | None = None
    map_node: DocNode | None = None
    terrain_rules: list[ModifyRule] = []
    faction_bodies: dict[str, DocNode] = {}

    for child in root.children:
        kind = classify_tag(child.tag)
        if kind is Keyword.FACTION:
            factions_node = child
        elif kind is Keyword.RESOURCE:
            resource_node = child
        elif kind is Keyword.MAP:
            map_node = child
        elif kind is Keyword.TERRAIN:
            terrain_rules.extend(_compile_terrain_rules(child))
        else:
            faction_bodies[match_key(child.tag)] = child

    if factions_node is None:
        raise MissingField("Factions")
    if map_node is None:
        raise MissingField("Map")

    starting: dict[str, float] = {}
    if resource_node is not None:
        for res in resource_node.children:
            if match_key(res.tag) in (match_key(r) for r in starting):
                raise DuplicateName("Resource", res.tag)
            starting[res.tag] = _number(_text_of(res, f"Resource/{res.tag}"), f"Resource/{res.tag}")
            if starting[res.tag] < 0:
                raise BadNumber(f"Resource/{res.tag}", res.text or "")

    names = _name_items(factions_node)
    seen: set[str] = set()
    factions: list[FactionDef] = []
    for name in names:
        _check_unique(seen, name, "Factions")
        factions.append(_compile_faction(name, faction_bodies.pop(match_key(name), None)))
    if faction_bodies:
        stray = next(iter(faction_bodies.values()))
        raise CompileError(stray.tag, "top-level section does not match any declared faction")

    game_map = _compile_map(map_node, default_layer)
    return GameDefinition(
        factions=factions,
        starting_resources=starting,
        map=game_map,
        terrain_rules=terrain_rules,
    )


# --- reference validation ---------------------------------------------------------


def validate_references(defn: GameDefinition) -> list[Diagnostic]:
    """Report every dangling cross-reference; empty list means fully resolved."""
    out: list[Diagnostic] = []
    resources = {match_key(r) for r in defn.starting_resources}

    def check_resource(name: str, path: str) -> None:
        if match_key(name) not in resources:
            out.append(Diagnostic(UNKNOWN_RESOURCE, path, name))

    def check_require(req: RequireSpec, faction: FactionDef, path: str) -> None:
        for res in req.resources:
            check_resource(res, f"{path}/Require")
        building_names = {match_key(b.name) for b in faction.buildings}
        for b in req.buildings:
            if match_key(b) not in building_names:
                out.append(Diagnostic(UNKNOWN_BUILDING, f"{path}/Require", b))
        tech_names = {match_key(t.name) for t in faction.techs}
        for t in req.techs:
            if match_key(t) not in tech_names:
                out.append(Diagnostic(UNKNOWN_TECH, f"{path}/Require", t))

    for faction in defn.factions:
        proto_names = {match_key(p.name) for p in faction.prototypes}
        buildable = proto_names | {match_key(t.name) for t in faction.techs}
        for proto in faction.prototypes:
            path = f"{faction.name}/{proto.name}"
            check_require(proto.require, faction, path)
            for target in proto.upgrades_to:
                if match_key(target) not in proto_names:
                    out.append(Diagnostic(UNKNOWN_UPGRADE_TARGET, path, target))
            for product in proto.purpose.build:
                if match_key(product) not in buildable:
                    out.append(Diagnostic(UNKNOWN_BUILD_PRODUCT, f"{path}/Purpose", product))
            for res in proto.purpose.process + proto.purpose.prepare:
                check_resource(res, f"{path}/Purpose")
            for res in proto.gather:
                check_resource(res, f"{path}/Gather")
            for attack in proto.attacks:
                check_require(attack.require, faction, f"{path}/{attack.name}")
            for ability in proto.abilities:
                check_require(ability.require, faction, f"{path}/{ability.name}")
        for tech in faction.techs:
            check_require(tech.require, faction, f"{faction.name}/{tech.name}")

    for coord, cell in sorted(defn.map.cells.items()):
        for res in cell.deposits:
            check_resource(res, f"Map/({coord[0]},{coord[1]})")
    return out
