from __future__ import annotations

from dataclasses import replace

import pytest

from helpers import box_token
from stfgraph.config import DEFAULT
from stfgraph.cstg import OCCLUDED, empty_graph, update_graph
from stfgraph.directive import ActionDirective, Pose6DoFAction
from stfgraph.errors import ReplanBudgetExhausted, UnknownObject, UnresolvedTarget, UnsatisfiableGoal
from stfgraph.geometry import TOP_DOWN, Vec3
from stfgraph.goal import GoalEntry, GoalSpec
from stfgraph.harness.episode import run_episode
from stfgraph.harness.replay import replay_graph
from stfgraph.planner.instantiate import instantiate_action
from stfgraph.planner.loop import OracleBackend, ScriptedBackend, step_loop
from stfgraph.planner.oracle import oracle_candidates, oracle_directive, parse_instruction, staging_spots
from stfgraph.planner.subgoals import subgoal_holds
from stfgraph.planner.verify import verify_preconditions
from stfgraph.sim.tasks import load_bundled


def graph(*specs):
    return update_graph(empty_graph(), [box_token(*s) for s in specs])


def oid(g, descriptor):
    return next(k for k, n in g.nodes.items() if n.descriptor == descriptor)


def two_blocks_stacked():
    # red on the table, blue on top of it
    return graph(("a", "red block", (0, 0, 0.02)), ("b", "blue block", (0, 0, 0.06)))


def hidden_cube_graph():
    rec = run_episode("hide-and-restore", 0)
    for t in range(len(rec.steps)):
        g = replay_graph(rec, upto=t, verify=False)
        cube = next(n for n in g.nodes.values() if n.descriptor == "purple cube")
        if cube.visibility == OCCLUDED:
            return g, cube.object_id, rec
    raise AssertionError("cube never hidden")


# -- directives

def test_directive_arity():
    with pytest.raises(ValueError):
        ActionDirective("pick", "obj1", "obj2")
    with pytest.raises(ValueError):
        ActionDirective("place_on", "obj1", (0, 0, 0))
    with pytest.raises(ValueError):
        ActionDirective("place_at", "obj1", "obj2")
    with pytest.raises(ValueError):
        ActionDirective("fly", "obj1")
    d = ActionDirective("place_at", "obj1", [0.1, 0.2, 0.3], ("exists(obj1)",), "note")
    assert ActionDirective.from_dict(d.to_dict()) == d


def test_release_present_iff_verb_places():
    g = graph(("a", "red block", (0, 0, 0.02)), ("b", "cup", (0.2, 0, 0.32), (0.035, 0.035, 0.03)))
    red, cup = oid(g, "red block"), oid(g, "cup")
    cases = [ActionDirective("pick", red), ActionDirective("place_on", cup, red),
             ActionDirective("place_at", cup, (0.1, 0.1, 0.03)), ActionDirective("cover_with", cup, red),
             ActionDirective("uncover", cup, (0.1, 0.1, 0.03))]
    for d in cases:
        act = instantiate_action(d, g)
        assert (act.release is not None) == (d.verb != "pick")
        assert Pose6DoFAction.from_dict(act.to_dict()) == act


# -- verification

def test_pick_with_block_on_top_violates_clear_top():
    g = two_blocks_stacked()
    red = oid(g, "red block")
    rep = verify_preconditions(g, ActionDirective("pick", red))
    assert not rep.passed
    assert [p for p, _ in rep.violated] == [f"clear_top({red})"]
    assert rep.checked_against_step == 0


def test_pick_top_block_passes():
    g = two_blocks_stacked()
    assert verify_preconditions(g, ActionDirective("pick", oid(g, "blue block"))).passed


def test_place_on_stable_footprint_passes():
    g = graph(("a", "red block", (0, 0, 0.02)), ("b", "blue block", (0.2, 0, 0.32)))  # blue held
    rep = verify_preconditions(g, ActionDirective("place_on", oid(g, "blue block"), oid(g, "red block")))
    assert rep.passed, rep.violated


def test_place_on_small_target_is_unstable():
    g = graph(("a", "red block", (0, 0, 0.005), (0.005, 0.005, 0.005)), ("b", "blue block", (0.2, 0, 0.32)))
    blue, red = oid(g, "blue block"), oid(g, "red block")
    rep = verify_preconditions(g, ActionDirective("place_on", blue, red))
    assert [p for p, _ in rep.violated] == [f"stable({blue},{red})"]


def test_declared_predicates_are_checked():
    g = two_blocks_stacked()
    rep = verify_preconditions(g, ActionDirective("pick", oid(g, "blue block"),
                                                  preconditions=("exists(obj9)", "bogus(obj1)")))
    assert [p for p, _ in rep.violated] == ["exists(obj9)", "bogus(obj1)"]


def test_unknown_subject_raises():
    with pytest.raises(UnknownObject):
        verify_preconditions(two_blocks_stacked(), ActionDirective("pick", "obj9"))


def test_pick_occluded_cube_names_occluder():
    g, cube, _ = hidden_cube_graph()
    cup = next(n.object_id for n in g.nodes.values() if n.descriptor == "brown cup")
    rep = verify_preconditions(g, ActionDirective("pick", cube))
    assert (f"unoccluded({cube})", f"occluded, uncover first (hidden by {cup})") in rep.violated


# -- instantiation

def test_grasp_pose_formula():
    g = graph(("a", "cube", (0.1, 0.2, 0.05), (0.05, 0.05, 0.05)))
    act = instantiate_action(ActionDirective("pick", "obj1"), g)
    assert act.grasp.position == Vec3(0.1, 0.2, 0.1 + 0.02)
    assert act.grasp.orientation == TOP_DOWN and act.release is None and act.gripper == "close"


def test_place_on_release_height():
    g = graph(("a", "table block", (0.0, 0.0, 0.05), (0.05, 0.05, 0.05)),
              ("b", "cube", (0.2, 0.0, 0.3), (0.025, 0.025, 0.025)))
    act = instantiate_action(ActionDirective("place_on", "obj1", "obj2"), g)
    assert act.release.position.z == pytest.approx(0.125, abs=1e-15)
    assert act.release.position[:2] == (0.0, 0.0)


def test_place_at_passthrough_and_done():
    g = graph(("a", "cube", (0.2, 0.0, 0.3)))
    act = instantiate_action(ActionDirective("place_at", "obj1", (0.11, -0.07, 0.02)), g)
    assert act.release.position == (0.11, -0.07, 0.02)
    assert instantiate_action(ActionDirective("done"), g) is None


def test_instantiate_unresolved_target():
    g = graph(("a", "cube", (0.2, 0.0, 0.3)))
    with pytest.raises(UnresolvedTarget):
        instantiate_action(ActionDirective("place_on", "obj1", "obj5"), g)


def test_instantiation_is_deterministic():
    g = two_blocks_stacked()
    d = ActionDirective("pick", oid(g, "blue block"))
    assert instantiate_action(d, g).to_dict() == instantiate_action(d, g).to_dict()


# -- oracle

def stack_goal(top, bottom):
    return GoalSpec("goal_image", goal_scene=(
        GoalEntry(bottom, Vec3(0.0, 0.0, 0.02)),
        GoalEntry(top, Vec3(0.0, 0.0, 0.06), (bottom,)),
    ))


def test_oracle_first_step_picks_the_block_to_go_on_top():
    # both on the table, bottom block already at its target
    g = graph(("a", "red block", (0.2, 0, 0.02)), ("b", "blue block", (0, 0, 0.02)))
    d = oracle_directive(g, stack_goal("red block", "blue block"))
    assert (d.verb, d.subject_id) == ("pick", oid(g, "red block"))


def test_oracle_done_when_goal_holds():
    g = two_blocks_stacked()
    assert oracle_directive(g, stack_goal("blue block", "red block")).verb == "done"


def test_oracle_cycle_is_unsatisfiable():
    goal = GoalSpec("goal_image", goal_scene=(
        GoalEntry("a", Vec3(0, 0, 0.02), ("b",)), GoalEntry("b", Vec3(0, 0, 0.06), ("a",))))
    with pytest.raises(UnsatisfiableGoal):
        oracle_directive(graph(("x", "a", (0, 0, 0.02)), ("y", "b", (0.2, 0, 0.02))), goal)


def test_oracle_unknown_descriptor():
    with pytest.raises(UnresolvedTarget):
        oracle_directive(two_blocks_stacked(), stack_goal("green block", "red block"))


def test_rejections_shrink_candidates():
    g = graph(("a", "red block", (0.2, 0, 0.02)), ("b", "blue block", (0, 0, 0.02)), ("c", "cup", (-0.2, 0, 0.32)))
    goal = GoalSpec("instruction", instruction="move the red block aside")
    cands = oracle_candidates(g, goal)
    rejected = []
    for _ in range(len(cands)):
        d = oracle_directive(g, goal, rejected=tuple(rejected))
        assert d not in rejected
        rejected.append(d)
    with pytest.raises(UnsatisfiableGoal):
        oracle_directive(g, goal, rejected=tuple(rejected))


def test_parse_instruction_grammar():
    assert parse_instruction("Hide the purple cube under the brown cup, move the green block aside, "
                             "then restore the original state.") == [
        ("hide", "purple cube", "brown cup"), ("aside", "green block"), ("restore",)]
    with pytest.raises(UnsatisfiableGoal):
        parse_instruction("juggle the blocks")


def test_staging_spots_are_clear_of_everything():
    g = graph(("a", "red block", (0, 0, 0.02)), ("b", "blue block", (0.05, 0, 0.02)), ("c", "cup", (0, 0, 0.3)))
    cup = oid(g, "cup")
    spots = staging_spots(g, cup)
    assert spots
    h = g.nodes[cup].half_extents()
    for p in spots:
        for other in (n for k, n in g.nodes.items() if k != cup):
            oh = other.half_extents()
            assert (abs(p.x - other.centroid.x) >= h.x + oh.x + 0.03 - 1e-9
                    or abs(p.y - other.centroid.y) >= h.y + oh.y + 0.03 - 1e-9)
    assert [abs(p.x) for p in spots[:2]] == sorted(abs(p.x) for p in spots[:2])


def test_restore_place_targets_pre_move_centroid():
    base = load_bundled("hide-and-restore")
    spec = replace(base, goal=GoalSpec("instruction", instruction="move the purple cube aside, then restore the "
                                                                  "original state"), checkpoint=None)
    rec = run_episode(spec, 0)
    assert rec.success
    g0 = replay_graph(rec, upto=0, verify=False)
    cube = next(n for n in g0.nodes.values() if n.descriptor == "purple cube")
    places = [s["directive"] for s in rec.steps
              if s["directive"] and s["directive"]["verb"] == "place_at" and s["directive"]["subject"] == cube.object_id]
    assert len(places) == 2  # aside, then home
    assert tuple(places[-1]["target"]) == tuple(cube.centroid)


def test_uncover_returns_cup_to_pre_hide_centroid():
    rec = run_episode("hide-and-restore", 0)
    g0 = replay_graph(rec, upto=0, verify=False)
    cup = next(n for n in g0.nodes.values() if n.descriptor == "brown cup")
    uncovers = [s["directive"] for s in rec.steps if s["directive"] and s["directive"]["verb"] == "uncover"]
    assert [tuple(d["target"]) for d in uncovers] == [tuple(cup.centroid)]


def test_subgoal_predicates():
    g = two_blocks_stacked()
    assert not subgoal_holds(g, "flat")
    flat = graph(("a", "red block", (0, 0, 0.02)), ("b", "blue block", (0.2, 0, 0.02)))
    assert subgoal_holds(flat, "flat") and subgoal_holds(flat, "restore")
    assert subgoal_holds(flat, f"at|{oid(flat, 'blue block')}|0.2000,0.0000,0.0200")
    with pytest.raises(ValueError):
        subgoal_holds(flat, "teleport")


# -- step loop

def test_oracle_episode_needs_no_replans():
    rec = run_episode("stack-3", 0)
    assert rec.success
    assert all(s["violations"] == [] for s in rec.steps)


def test_scripted_occluded_pick_replans_once():
    g, cube, rec = hidden_cube_graph()
    goal = GoalSpec("instruction", instruction="hide the purple cube under the brown cup, move the green block "
                                               "aside, then restore the original state")
    be = ScriptedBackend([ActionDirective("pick", cube)], fallback=OracleBackend())
    out = step_loop(g, None, goal, be)
    viol = [e for e in out.graph.log.events if e.kind == "precondition_violation"]
    assert len(viol) == 1 and viol[0].subject_id == cube and "uncover first" in viol[0].detail
    assert out.report.passed and out.directive.subject_id != cube
    assert len(out.violations) == 1


def test_always_invalid_exhausts_budget():
    g = two_blocks_stacked()
    be = ScriptedBackend([ActionDirective("pick", oid(g, "red block"))] * 10)
    with pytest.raises(ReplanBudgetExhausted) as err:
        step_loop(g, None, stack_goal("blue block", "red block"), be)
    assert len(err.value.violations) == DEFAULT.max_replans + 1
    kinds = [e.kind for e in err.value.graph.log.events]
    assert kinds.count("precondition_violation") == DEFAULT.max_replans + 1


def test_unknown_subject_from_backend_becomes_violation():
    g = two_blocks_stacked()
    be = ScriptedBackend([ActionDirective("pick", "obj42")], fallback=OracleBackend())
    out = step_loop(g, None, stack_goal("blue block", "red block"), be)
    assert out.violations[0]["subject"] == "none"
    assert out.directive.verb == "done"
