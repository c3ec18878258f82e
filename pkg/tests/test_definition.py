"""Tests for definition compilation and reference validation."""

from __future__ import annotations

import random

import pytest

from rtsl.definition import (
    BadNumber,
    DuplicateName,
    MissingField,
    ShapeSpec,
    UNKNOWN_BUILD_PRODUCT,
    UNKNOWN_RESOURCE,
    UNKNOWN_TECH,
    UNKNOWN_UPGRADE_TARGET,
    compile_definition,
    parse_range_text,
    validate_references,
)
from rtsl.document import parse_document
from rtsl.fixtures import load_fixture


MINI_MAP = "<Map>\n  <Name> Flat </Name>\n  <Size> 8-8 </Size>\n</Map>\n"


def mini_game(unit_body: str = "", building_body: str = "", resources: str = "") -> str:
    """A one-faction document with a custom unit and/or building body."""
    res = resources or "<Wood> 100 </Wood>\n  <Gold> 100 </Gold>"
    unit = f"<Unit>\n<Thing>\n<Health Point>10</Health Point>\n<Terrain>Ground</Terrain>\n{unit_body}\n</Thing>\n</Unit>" if unit_body is not None else ""
    building = f"<Building>\n{building_body}\n</Building>" if building_body else ""
    return (
        f"<Factions>\nHuman\n</Factions>\n<Resource>\n  {res}\n</Resource>\n"
        f"<Human>\n{unit}\n{building}\n</Human>\n{MINI_MAP}"
    )


def compile_text(text: str):
    return compile_definition(parse_document(text))


@pytest.fixture(scope="module")
def paper_game():
    return compile_text(load_fixture("paper-game").text)


class TestRangeText:
    @pytest.mark.parametrize(
        "text,expected",
        [("3-9", (3, 9)), ("4", (4, 4)), ("50-100", (50, 100)), ("2 - 5", (2, 5)), (" 4 -9", (4, 9))],
    )
    def test_valid(self, text, expected):
        assert parse_range_text(text) == expected

    @pytest.mark.parametrize("text", ["", "x", "3-", "3-9-12", "a-b"])
    def test_invalid(self, text):
        with pytest.raises(BadNumber):
            parse_range_text(text)


class TestTownHall:
    def test_compiled_fields(self, paper_game):
        hall = paper_game.faction("Human").prototype("Town Hall")
        assert hall.kind == "building"
        assert hall.max_health == 1200
        assert hall.build_time_s == 30
        assert hall.shape == ShapeSpec(ShapeSpec.SQUARE, (2,))
        assert hall.vision == 1
        assert hall.occupy_terrain == {"Ground"}
        assert hall.require.resources == {"Wood": 800, "Gold": 1200}
        assert hall.upgrades_to == ["Keep"]
        assert hall.purpose.process == ["Wood", "Gold"]
        assert hall.purpose.build == ["Peasants"]
        assert hall.speed == 0

    def test_nothing_left_unconsumed(self, paper_game):
        hall = paper_game.faction("Human").prototype("Town Hall")
        # runtime-flavored listing tags are kept as hints, not dropped
        assert set(hall.instance_hints) == {"UniqueID", "Action", "Position", "Enemy"}
        assert hall.instance_hints["UniqueID"] == "TownHall1"
        assert hall.instance_hints["Position"] == "120,120"
        assert hall.traits == {}
        assert hall.abilities == []


class TestElvinArcher:
    def test_compiled_fields(self, paper_game):
        archer = paper_game.faction("Human").prototype("Elvin Archer")
        assert archer.kind == "unit"
        assert archer.max_health == 40
        assert archer.build_time_s == 15
        assert archer.shape == ShapeSpec(ShapeSpec.CIRCLE, (0.5,))
        assert archer.vision == 5
        assert archer.speed == 3
        assert archer.require.resources == {"Gold": 500, "Wood": 50, "Food": 1}
        (arrow,) = archer.attacks
        assert arrow.name == "Arrow"
        assert arrow.range == 4
        assert arrow.damage.universal == (3, 9)
        assert arrow.recharge_s == 2
        assert arrow.target_terrain == {"Ground"}

    def test_lone_named_armor_is_universal(self, paper_game):
        archer = paper_game.faction("Human").prototype("Elvin Archer")
        armor = archer.armor
        assert armor.universal is not None
        assert armor.universal.kind == "flat" and armor.universal.value == 4
        assert armor.universal_label == "Shield"
        assert armor.per_attack == {}


class TestArmorAndDamage:
    def test_mixed_armor(self, paper_game):
        tank = paper_game.faction("Orc").prototype("Tank")
        armor = tank.armor
        assert armor.universal.kind == "flat" and armor.universal.value == 2
        assert armor.per_attack["arrow"].kind == "percent"
        assert armor.per_attack["arrow"].value == 3
        assert armor.per_attack["sword"].kind == "flat"
        assert armor.per_attack["sword"].value == 5

    def test_per_target_damage(self):
        fixture = load_fixture("damage-per-target").text
        game = compile_text(mini_game(unit_body=f"<Attack><Smash><Range>1</Range><Recharge>1</Recharge>{fixture}</Smash></Attack>"))
        smash = game.faction("Human").prototype("Thing").attacks[0]
        assert smash.damage.universal == (2, 5)
        assert smash.damage.for_target("Horse") == (4, 9)
        assert smash.damage.for_target("Wolf") == (2, 5)


class TestPrototypeParts:
    def test_repair_overrides(self, paper_game):
        peasant = paper_game.faction("Human").prototype("Peasants")
        repair = peasant.repair
        assert repair.rate_hp_per_s == 2
        assert repair.range == 1
        assert repair.for_target("Horse") == (1, 2)
        assert repair.for_target("Keep") == (2, 1)

    def test_contain(self, paper_game):
        hut = paper_game.faction("Human").prototype("Transport Hut")
        assert hut.contain.max_weight == 8
        assert hut.contain.allowed_armor_classes == {"Light"}

    def test_armor_class_and_traits(self, paper_game):
        peasant = paper_game.faction("Human").prototype("Peasants")
        assert peasant.armor.armor_class == "Light"
        assert peasant.traits["Biological"] is True
        tank = paper_game.faction("Orc").prototype("Tank")
        assert tank.traits["Biological"] is False

    def test_gather_capacity_is_range_max(self, paper_game):
        peasant = paper_game.faction("Human").prototype("Peasants")
        assert peasant.gather == {"Wood": 100, "Gold": 100, "Oil": 20}

    def test_lockdown_ability(self, paper_game):
        ghost = paper_game.faction("Human").prototype("Ghost")
        lockdown = ghost.ability("Lockdown")
        assert lockdown.time_limit_s == 12
        assert lockdown.use_limit is None
        mods = {(m.prop, m.scope): (m.op, m.value) for m in lockdown.modifiers}
        assert mods[("recharge", "enemy")] == ("set", 100000)
        assert mods[("speed", "enemy")] == ("add_percent", -100)
        assert lockdown.require.target_traits == {"Biological": False}
        mine = ghost.ability("Mine")
        assert mine.use_limit == 4

    def test_movement_terrain(self):
        game = compile_text(mini_game(unit_body="<Movement>\n<Terrain>Air</Terrain>\n</Movement>\n<Speed>2</Speed>"))
        thing = game.faction("Human").prototype("Thing")
        assert thing.occupy_terrain == {"Ground"}
        assert thing.moves_over == {"Air"}

    def test_tech_compiles(self, paper_game):
        masonry = paper_game.faction("Human").tech("Masonry")
        assert masonry.build_time_s == 2
        assert masonry.require.resources == {"Gold": 10}


class TestMap:
    def test_hills_cells(self, paper_game):
        hills = paper_game.map
        assert hills.name == "Hills"
        assert (hills.width, hills.height) == (16, 16)
        gold_cell = hills.cells[(0, 0)]
        assert [layer.label for layer in gold_cell.layers] == ["Ground", "High", "Air"]
        assert gold_cell.deposits == {"Gold": 1000}
        wood_cell = hills.cells[(0, 1)]
        assert [layer.label for layer in wood_cell.layers] == ["Wood", "Low", "Air"]
        assert wood_cell.layers[0].condition == ("Wood", 300, "Ground")
        assert wood_cell.deposits == {"Wood": 300}

    def test_inferred_size(self):
        text = load_fixture("hills-map").text
        doc = f"<Factions>\nHuman\n</Factions>\n<Resource><Wood>100</Wood><Gold>100</Gold></Resource>\n<Human></Human>\n{text}"
        game = compile_text(doc)
        assert (game.map.width, game.map.height) == (1, 2)

    def test_modify_rules(self, paper_game):
        (rule,) = paper_game.terrain_rules
        assert rule.on_layer == "Low"
        assert rule.activity == "attack"
        assert rule.versus_layer == "High"
        assert rule.prop == "damage"
        assert rule.percent == -25


class TestCompileErrors:
    def test_missing_map(self):
        with pytest.raises(MissingField) as exc:
            compile_text("<Factions></Factions>")
        assert exc.value.path == "Map"

    def test_missing_factions(self):
        with pytest.raises(MissingField) as exc:
            compile_text(MINI_MAP)
        assert exc.value.path == "Factions"

    def test_bad_number(self):
        with pytest.raises(BadNumber):
            compile_text(mini_game(unit_body="<Vision>loads</Vision>"))

    def test_duplicate_prototype(self):
        body = (
            "<Camp>\n<Health Point>10</Health Point>\n<Terrain>Ground</Terrain>\n</Camp>\n"
            "<Camp>\n<Health Point>10</Health Point>\n<Terrain>Ground</Terrain>\n</Camp>"
        )
        with pytest.raises(DuplicateName):
            compile_text(mini_game(building_body=body))

    def test_missing_health(self):
        text = mini_game().replace("<Health Point>10</Health Point>\n", "")
        with pytest.raises(MissingField):
            compile_text(text)


class TestValidateReferences:
    def test_positive_paper_game(self, paper_game):
        assert validate_references(paper_game) == []

    def test_dangling_upgrade(self):
        game = compile_text(load_fixture("dangling-upgrade").text)
        diags = validate_references(game)
        assert [(d.category, d.name) for d in diags] == [(UNKNOWN_UPGRADE_TARGET, "Keep")]

    def test_undeclared_attack_resource(self):
        game = compile_text(load_fixture("mana-game").text)
        diags = validate_references(game)
        assert [(d.category, d.name) for d in diags] == [(UNKNOWN_RESOURCE, "Mana")]

    def test_unknown_tech_and_build_product(self):
        game = compile_text(mini_game(unit_body="<Require>\nIroncraft\n</Require>\n<Purpose><Build>Gryphon</Build></Purpose>"))
        cats = {(d.category, d.name) for d in validate_references(game)}
        assert (UNKNOWN_TECH, "Ironcraft") in cats
        assert (UNKNOWN_BUILD_PRODUCT, "Gryphon") in cats

    def test_name_deletion_fuzzing(self):
        source = load_fixture("paper-game").text
        removable = ["Keep", "Masonry", "Peasants", "Grunt"]
        rng = random.Random(5)
        for _ in range(8):
            name = rng.choice(removable)
            root = parse_document(source)
            for faction in root.children:
                for section in faction.children:
                    section.children = [c for c in section.children if c.tag != name]
            game = compile_definition(root)
            diags = validate_references(game)
            assert any(d.name == name for d in diags), f"deleting {name} went unnoticed"

    def test_diagnostic_line_format(self):
        game = compile_text(load_fixture("dangling-upgrade").text)
        (diag,) = validate_references(game)
        line = str(diag)
        assert line.startswith("ERROR ")
        assert "Keep" in line


class TestDeterminism:
    def test_same_tree_same_definition(self):
        text = load_fixture("paper-game").text
        first = compile_text(text)
        second = compile_text(text)
        assert first == second
