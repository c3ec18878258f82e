"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Tolerances are pinned
here: damage arithmetic at 1e-9, the terrain flip at +/-1 tick, resource
conservation exact, everything else exact equality.
"""

from __future__ import annotations

import math
import random

import pytest

from rtsl.bots import ScriptedBotSession, parse_bot_script
from rtsl.cli import main
from rtsl.definition import ArmorSpec, AttackDef, DamageSpec, Mitigation, ModifyRule, compile_definition
from rtsl.document import DocNode, normalize_name, parse_document, serialize_document
from rtsl.fixtures import fixture_ids, load_fixture
from rtsl.kernel import (
    Attack,
    GameAction,
    Gather,
    Train,
    effective_speed,
    new_game,
    resolve_damage,
    spawn,
    submit,
    tick,
    visible_update,
)
from rtsl.manager import (
    BadCommandSyntax,
    Session,
    WrongArity,
    command_text,
    decode_command,
    encode_update,
    run_match,
)

DAMAGE_TOL = 1e-9
FLIP_TOL_TICKS = 1


def _passed(number: int, label: str) -> None:
    print(f"ACCEPTANCE {number:02d} PASS  {label}")


def paper_game():
    return compile_definition(parse_document(load_fixture("paper-game").text))


def test_01_paper_fixture_compilation():
    from rtsl.definition import ShapeSpec, validate_references

    game = paper_game()
    assert validate_references(game) == []

    hall = game.faction("Human").prototype("Town Hall")
    assert hall.max_health == 1200
    assert hall.build_time_s == 30
    assert hall.vision == 1
    assert hall.require.resources == {"Wood": 800, "Gold": 1200}

    archer = game.faction("Human").prototype("Elvin Archer")
    assert archer.max_health == 40
    assert archer.build_time_s == 15
    assert archer.vision == 5
    assert archer.speed == 3
    assert archer.require.resources == {"Gold": 500, "Wood": 50, "Food": 1}
    (arrow,) = archer.attacks
    assert arrow.damage.universal == (3, 9)
    assert arrow.recharge_s == 2

    hills = game.map
    assert hills.name == "Hills"
    assert hills.cells[(0, 0)].deposits == {"Gold": 1000}
    assert hills.cells[(0, 1)].layers[0].condition == ("Wood", 300, "Ground")

    ghost = game.faction("Human").prototype("Ghost")
    lockdown = ghost.ability("Lockdown")
    assert lockdown.time_limit_s == 12
    assert lockdown.require.target_traits == {"Biological": False}

    assert game.starting_resources == {"Wood": 100, "Gold": 100, "Oil": 10, "Food": 5}
    state = new_game(game, [("P1", "Human"), ("P2", "Orc")])
    assert state.players["P1"].bank == {"Wood": 100, "Gold": 100, "Oil": 10, "Food": 5}
    assert ShapeSpec(ShapeSpec.SQUARE, (2,)) == hall.shape
    _passed(1, "listing values compile exactly, zero diagnostics")


def test_02_round_trip_corpus_and_randomized():
    checked = 0
    for fixture_id in fixture_ids():
        fx = load_fixture(fixture_id)
        if fx.expected["kind"] == "parse-error":
            continue
        tree = parse_document(fx.text)
        assert parse_document(serialize_document(tree)).same_structure(tree), fixture_id
        checked += 1
    assert checked >= 20

    rng = random.Random(2024)
    letters = "abcdefg HQZ 0123,()._-"

    def word():
        while True:
            w = normalize_name("".join(rng.choice(letters) for _ in range(rng.randint(1, 10))))
            if w and not w.startswith("/"):
                return w

    def build(depth):
        node = DocNode(tag=word())
        roll = rng.random()
        if roll < 0.35 and depth < 4:
            for _ in range(rng.randint(1, 4)):
                node.children.append(build(depth + 1) if rng.random() < 0.5 else DocNode(tag=word()))
        elif roll < 0.75:
            node.text = word()
            if rng.random() < 0.2:
                node.condition_suffix = word().replace("/", ".")
        return node

    for _ in range(1000):
        doc = DocNode(tag="")
        for _ in range(rng.randint(0, 3)):
            doc.children.append(build(0))
        first = parse_document(serialize_document(doc))
        second = parse_document(serialize_document(first))
        assert second.same_structure(first)
    _passed(2, f"round-trip on {checked} corpus documents and 1000 generated ones")


def test_03_damage_table():
    from rtsl.definition import PrototypeDef

    def target(armor):
        return PrototypeDef(
            kind="unit", name="Dummy", max_health=100, armor=armor, occupy_terrain=frozenset({"Ground"})
        )

    arrow = AttackDef(
        name="Arrow", range=4, damage=DamageSpec(universal=(3.0, 9.0)), recharge_s=2,
        target_terrain=frozenset({"Ground"}),
    )
    shield = target(ArmorSpec(universal=Mitigation("flat", 4)))
    assert resolve_damage(arrow, {"Ground"}, shield, {"Ground"}) == pytest.approx(5.0, abs=DAMAGE_TOL)

    pct = target(ArmorSpec(per_attack={"arrow": Mitigation("percent", 3)}))
    assert resolve_damage(arrow, {"Ground"}, pct, {"Ground"}) == pytest.approx(8.73, abs=DAMAGE_TOL)

    bare = target(ArmorSpec())
    rules = [ModifyRule("Low", "attack", "High", "damage", -25)]
    assert resolve_damage(arrow, {"Low"}, bare, {"High"}, rules) == pytest.approx(6.75, abs=DAMAGE_TOL)

    wall = target(ArmorSpec(universal=Mitigation("flat", 50)))
    assert resolve_damage(arrow, {"Ground"}, wall, {"Ground"}) == 0.0
    _passed(3, "9-4=5, 9*0.97=8.73, 9*0.75=6.75, clamp at 0 (tol 1e-9)")


def test_04_terrain_transition_at_predicted_tick():
    state = new_game(paper_game(), [("P1", "Human"), ("P2", "Orc")], tick_hz=10)
    peasant = spawn(state, "P1", "Peasants", (1.5, 1.5))
    spawn(state, "P1", "Wood Camp", (2.5, 1.5))
    assert submit(state, "P1", Gather(peasant.id, 0, 1)).accepted

    per_tick = state.config.gather_rate * state.dt
    capacity = 100.0
    extraction_ticks = math.ceil(300.0 / per_tick)
    intermediate_deliveries = math.ceil(300.0 / capacity) - 1
    predicted = extraction_ticks + intermediate_deliveries

    flip_tick = None
    for _ in range(predicted + 20):
        tick(state)
        assert state.cells[(0, 1)].deposits.get("Wood", 0.0) >= 0.0, "deposit went negative"
        if flip_tick is None and all(l.label != "Wood" for l in state.cells[(0, 1)].layers):
            flip_tick = state.tick
    assert flip_tick is not None
    assert abs(flip_tick - predicted) <= FLIP_TOL_TICKS, (flip_tick, predicted)
    _passed(4, f"300 wood removed; layer flipped at tick {flip_tick} (predicted {predicted} +/-1)")


def test_05_vision_filtering_on_128_map():
    defn = compile_definition(parse_document(load_fixture("vision-game").text))
    state = new_game(defn, [("P1", "Human"), ("P2", "Orc")])
    archer = spawn(state, "P1", "Elvin Archer", (64.5, 64.5))

    disc = {
        (i, j)
        for i in range(128)
        for j in range(128)
        if (i + 0.5 - 64.5) ** 2 + (j + 0.5 - 64.5) ** 2 <= 5 * 5 + 1e-9
    }
    assert len(disc) == 81

    from rtsl.document import parse_coordinate_tag

    block = parse_document(encode_update(visible_update(state, "P1")))
    coords = {parse_coordinate_tag(c.tag) for c in block.child("Map").children}
    assert coords == disc
    assert len(coords ^ disc) == 0  # none of the other 16384-81 cells leak

    near = spawn(state, "P2", "Wolf", (69.4, 64.5))  # distance 4.9
    view = visible_update(state, "P1")
    assert [e.id for e in view.enemies] == [near.id]
    near.pos = (69.6, 64.5)  # distance 5.1
    tick(state)
    assert visible_update(state, "P1").enemies == ()
    _passed(5, "update holds exactly the 81 disc cells; enemy visible at 4.9, not at 5.1")


def test_06_lockdown_semantics():
    hz = 10
    defn = paper_game()
    state = new_game(defn, [("P1", "Human"), ("P2", "Orc")], tick_hz=hz)
    ghost = spawn(state, "P1", "Ghost", (8.5, 8.5))
    hall = spawn(state, "P1", "Town Hall", (12, 9))
    tank = spawn(state, "P2", "Tank", (10.5, 8.5))
    submit(state, "P2", Attack(tank.id, hall.id))
    tick(state)
    hp_frozen = hall.hp
    assert hp_frozen < 1200  # the tank does fire when free

    assert submit(state, "P1", GameAction("Lockdown", (ghost.id,), (tank.id,))).accepted
    cast_tick = state.tick
    window = 12 * hz
    for _ in range(window):
        assert effective_speed(state, tank) == 0.0
        tick(state)
        assert hall.hp == hp_frozen, f"attack fired inside [t, t+12hz) at tick {state.tick}"
    tick(state)  # first tick past the window
    assert effective_speed(state, tank) == pytest.approx(1.0)
    assert hall.hp < hp_frozen, "attack did not resume after expiry"
    assert state.tick == cast_tick + window + 1

    horse = spawn(state, "P2", "Horse", (9.5, 8.5))
    rejected = submit(state, "P1", GameAction("Lockdown", (ghost.id,), (horse.id,)))
    assert not rejected.accepted and rejected.reason.startswith("RequireTraitFailed")

    for _ in range(4):
        assert submit(state, "P1", GameAction("Mine", (ghost.id,), (tank.id,))).accepted
    fifth = submit(state, "P1", GameAction("Mine", (ghost.id,), (tank.id,)))
    assert not fifth.accepted and fifth.reason.startswith("AbilityExhausted")
    _passed(6, "frozen for exactly 12*hz ticks, reverts, trait gate and 4-use limit hold")


GATHER_BOT = """\
name gatherer
faction Human
at 0 Construct(Wood Camp, 2.5, 1.5)
at 12 Train(WoodCamp1, Peasants)
at 25 Gather(Peasants1, 0, 1)
"""

IDLE_BOT = "name idler\nfaction Orc\n"


def test_07_determinism_and_replay(tmp_path, capsys):
    game_file = tmp_path / "game.rtsl"
    game_file.write_text(load_fixture("paper-game").text, encoding="utf-8")
    b1 = tmp_path / "g.bot"
    b1.write_text(GATHER_BOT, encoding="utf-8")
    b2 = tmp_path / "i.bot"
    b2.write_text(IDLE_BOT, encoding="utf-8")
    replay_file = tmp_path / "match.replay"

    digests = []
    for _ in range(2):
        code = main(
            ["match", "--def", str(game_file), "--bot1", str(b1), "--bot2", str(b2),
             "--seed", "2024", "--max-ticks", "150", "--replay", str(replay_file)]
        )
        assert code == 0
        digests.append(capsys.readouterr().out.strip().split("digest=")[1])
    assert digests[0] == digests[1]

    assert main(["replay", str(replay_file)]) == 0
    capsys.readouterr()

    content = replay_file.read_text(encoding="utf-8")
    edited = content.replace("Gather(Peasants1, 0, 1)", "Gather(Peasants1, 0, 2)", 1)
    assert edited != content
    replay_file.write_text(edited, encoding="utf-8")
    assert main(["replay", str(replay_file)]) == 1
    capsys.readouterr()
    _passed(7, "identical digests across runs; replay verifies; one-byte edit detected")


def test_08_conservation_over_50_random_matches():
    rng = random.Random(88)
    for trial in range(50):
        state = new_game(paper_game(), [("P1", "Human"), ("P2", "Orc")], seed=trial, tick_hz=10)

        def totals():
            out: dict[str, float] = {}
            for player in state.players.values():
                for res, amount in player.bank.items():
                    out[res] = out.get(res, 0.0) + amount
            for e in state.entities.values():
                if e.carrying:
                    out[e.carrying[0]] = out.get(e.carrying[0], 0.0) + e.carrying[1]
            for cell in state.cells.values():
                for res, amount in cell.deposits.items():
                    out[res] = out.get(res, 0.0) + amount
            for res, amount in state.spent.items():
                out[res] = out.get(res, 0.0) + amount
            return out

        initial = totals()
        peasant = spawn(state, "P1", "Peasants", (1.5, 1.5))
        hall = spawn(state, "P1", "Town Hall", (10, 12))
        spawn(state, "P1", "Wood Camp", (2.5, 1.5))
        grunt = spawn(state, "P2", "Grunt", (12.5, 12.5))
        for _ in range(rng.randint(10, 60)):
            roll = rng.random()
            if roll < 0.3:
                submit(state, "P1", Gather(peasant.id, 0, 1))
            elif roll < 0.5:
                submit(state, "P1", Train(hall.id, "Peasants"))
            elif roll < 0.6:
                submit(state, "P2", Attack(grunt.id, peasant.id))
            tick(state)
        final = totals()
        # every resource flow moves exactly-representable amounts, so the
        # books must balance to the bit
        assert final == initial, f"trial {trial}: {final} != {initial}"
    _passed(8, "bank + carried + deposits + spent constant across 50 randomized matches")


def test_09_simultaneous_lethality():
    duel = """
<Factions>
Red
Blue
</Factions>
<Resource>
  <Gold> 10 </Gold>
</Resource>
<Red>
  <Unit>
    <Duelist>
      <Health Point>9</Health Point>
      <Terrain>Ground</Terrain>
      <Vision>5</Vision>
      <Attack>
        <Blade>
          <Range>3</Range>
          <Damage>10</Damage>
          <Recharge>5</Recharge>
        </Blade>
      </Attack>
    </Duelist>
  </Unit>
</Red>
<Blue>
  <Unit>
    <Fencer>
      <Health Point>9</Health Point>
      <Terrain>Ground</Terrain>
      <Vision>5</Vision>
      <Attack>
        <Blade>
          <Range>3</Range>
          <Damage>10</Damage>
          <Recharge>5</Recharge>
        </Blade>
      </Attack>
    </Fencer>
  </Unit>
</Blue>
<Map>
  <Name> Pit </Name>
  <Size> 8-8 </Size>
</Map>
"""
    defn = compile_definition(parse_document(duel))
    state = new_game(defn, [("P1", "Red"), ("P2", "Blue")])
    a = spawn(state, "P1", "Duelist", (2.5, 2.5))
    b = spawn(state, "P2", "Fencer", (4.5, 2.5))
    assert submit(state, "P1", Attack(a.id, b.id)).accepted
    assert submit(state, "P2", Attack(b.id, a.id)).accepted
    tick(state)
    assert state.entities == {}, "damage must be buffered and applied simultaneously"
    _passed(9, "mutually lethal attackers both die on the same tick")


def test_10_protocol_conformance():
    from rtsl.kernel import Construct, Move, Update

    rng = random.Random(31337)
    names = ["Archer1", "TownHall1", "Grunt7", "Ghost2"]
    for _ in range(300):
        kind = rng.randrange(3)
        if kind == 0:
            cmd = Construct("Town Hall", rng.randint(0, 50), rng.randint(0, 50))
        elif kind == 1:
            cmd = Move(rng.choice(names), round(rng.uniform(0, 50), 2), round(rng.uniform(0, 50), 2))
        else:
            cmd = GameAction(
                "Lockdown",
                tuple(rng.sample(names, rng.randint(1, 2))),
                tuple(rng.sample(names, rng.randint(0, 2))),
                (), (),
            )
        assert decode_command(command_text(cmd)) == cmd
    assert decode_command(command_text(Update())) == Update()

    from rtsl.bots import BotScript

    noisy = ScriptedBotSession(
        BotScript(name="noisy", faction="Human",
                  timed=[(0, "Blargh(1,"), (1, "Move(OneArg)"), (2, "Update")])
    )
    idle = ScriptedBotSession(BotScript(name="idle", faction="Orc"))
    result = run_match(paper_game(), [("P1", noisy), ("P2", idle)], time_limit_ticks=10)
    errs = [line for line in noisy.delivered if line.startswith("ERR")]
    assert len(errs) == 2, "each malformed line earns exactly one ERR"
    assert result.end_tick == 10, "the match loop survived the garbage"
    assert "UPDATE-BEGIN" in noisy.delivered

    eager = Session("eager")
    eager.push("CMD Move(X, 1, 2)")  # out of order: command before FACTION
    polite = ScriptedBotSession(BotScript(name="ok", faction="Human"))
    result = run_match(paper_game(), [("P1", polite), ("P2", eager)], time_limit_ticks=10)
    assert "ERR ProtocolViolation" in eager.delivered
    assert result.winner == "P1" and result.reason == "handshake"
    _passed(10, "codec round-trip, ERR on malformed lines without dying, strict handshake")
