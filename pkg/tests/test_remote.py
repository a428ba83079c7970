from __future__ import annotations

import base64
import io
import json
import socket

import numpy as np
import pytest
import requests
from PIL import Image

from stfgraph.cstg import empty_graph, update_graph
from stfgraph.directive import ActionDirective
from stfgraph.errors import MalformedDirective, RemoteTimeout, Transport
from stfgraph.goal import GoalSpec
from stfgraph.harness.episode import run_episode
from stfgraph.harness.perception import perceive
from stfgraph.planner.loop import RemoteBackend
from stfgraph.planner.prompt import SCHEMA_VERSION, SYSTEM_PREAMBLE, assemble_prompt
from stfgraph.planner.remote import MALFORMATION_KINDS, EndpointConfig, parse_directive, remote_directive
from stfgraph.planner.stub_server import StubServer
from stfgraph.sim.render import render
from stfgraph.sim.tasks import load_bundled

FIXTURE = {"version": SCHEMA_VERSION, "verb": "place_on", "subject": "obj2", "target": "obj1",
           "preconditions": ["clear_top(obj1)"], "subgoal": "stack blue on red"}

MALFORMED = {
    "no_json": "I would pick up the blue block first.",
    "invalid_json": '{"version": "directive/1", "verb": pick}',
    "multiple_objects": json.dumps(FIXTURE) + "\n" + json.dumps(FIXTURE),
    "unknown_verb": json.dumps(dict(FIXTURE, verb="throw")),
    "schema_violation": json.dumps(dict(FIXTURE, target=[0.1, 0.2, 0.3])),
}


def scene_prompt(task="stack-3", goal=None):
    spec = load_bundled(task).variant(0)
    obs = render(spec.initial_state())
    g = update_graph(empty_graph(), perceive(obs, 0))
    return assemble_prompt(g, obs, goal or spec.goal), g, obs


# -- prompt assembly (no network)

def test_prompt_contains_instruction_verbatim_for_empty_graph():
    obs = render(load_bundled("stack-3").variant(0).initial_state())
    goal = GoalSpec("instruction", instruction="restack it in the original order")
    p = assemble_prompt(empty_graph(), obs, goal)
    assert "restack it in the original order" in p.text()
    assert "no objects" in p.spatial_context_text and p.labels == ()


def test_prompt_labels_one_per_visible_node_at_mask_centroids():
    p, g, obs = scene_prompt("stack-3")
    assert len(p.labels) == len(g.nodes) == 3
    centroids = {(float(c), float(r)) for r, c in (m.pixel_centroid() for m in obs.masks.values())}
    assert {uv for _, uv in p.labels} == centroids
    img = Image.open(io.BytesIO(p.annotated_observation))
    assert img.size == (obs.rgb.shape[1], obs.rgb.shape[0])
    # the label boxes changed pixels around each centroid
    diff = np.any(np.asarray(img.convert("RGB")) != obs.rgb, axis=2)
    for _, (u, v) in p.labels:
        assert diff[int(v) - 3:int(v) + 4, int(u) - 6:int(u) + 7].any()


def test_prompt_is_deterministic():
    a, _, _ = scene_prompt("hide-and-restore")
    b, _, _ = scene_prompt("hide-and-restore")
    assert a.text() == b.text() and a.annotated_observation == b.annotated_observation
    assert a.digest() == b.digest()


def test_prompt_carries_feedback_and_preamble_schema():
    p, g, obs = scene_prompt()
    p2 = assemble_prompt(g, obs, load_bundled("stack-3").goal, feedback=("pick obj1: clear_top(obj1): obj2 rests",))
    assert "rejected proposals" in p2.text() and p2.digest() != p.digest()
    assert SCHEMA_VERSION in SYSTEM_PREAMBLE


# -- reply parsing (no network)

def test_parse_valid_directive():
    assert parse_directive("Here you go:\n" + json.dumps(FIXTURE)) == ActionDirective.from_dict(FIXTURE)


@pytest.mark.parametrize("kind", MALFORMATION_KINDS)
def test_parse_rejects_each_malformation(kind):
    with pytest.raises(MalformedDirective) as err:
        parse_directive(MALFORMED[kind])
    assert err.value.kind == kind


def test_unknown_verb_is_named():
    with pytest.raises(MalformedDirective, match="throw"):
        parse_directive(MALFORMED["unknown_verb"])


def test_endpoint_from_env():
    env = {"STFGRAPH_ENDPOINT_URL": "http://h:1/v1", "STFGRAPH_API_TOKEN": "k", "STFGRAPH_MODEL": "m",
           "STFGRAPH_TIMEOUT": "4"}
    e = EndpointConfig.from_env(env)
    assert (e.completions_url, e.token, e.model, e.timeout) == ("http://h:1/v1/chat/completions", "k", "m", 4.0)
    with pytest.raises(ValueError):
        EndpointConfig.from_env({})


def test_network_is_disabled_for_unmarked_tests():
    with pytest.raises(Exception):
        socket.create_connection(("127.0.0.1", 9))
    with pytest.raises(Exception):
        requests.post("http://127.0.0.1:9/v1/chat/completions", json={}, timeout=1)


# -- over HTTP against the stub

@pytest.mark.remote
def test_round_trip_valid_directive():
    p, _, _ = scene_prompt()
    with StubServer([json.dumps(FIXTURE)]) as stub:
        d = remote_directive(p, EndpointConfig(stub.url, token="secret", model="m1"))
    assert d == ActionDirective.from_dict(FIXTURE)
    body = stub.requests[0]
    assert body["model"] == "m1"
    system, user = body["messages"]
    assert system == {"role": "system", "content": SYSTEM_PREAMBLE}
    text, image = user["content"]
    assert text["text"] == p.text()
    png = base64.b64decode(image["image_url"]["url"].split(",", 1)[1])
    assert png == p.annotated_observation


@pytest.mark.remote
@pytest.mark.parametrize("kind", MALFORMATION_KINDS)
def test_malformed_reply_retried_then_surfaced(kind):
    p, _, _ = scene_prompt()
    with StubServer([MALFORMED[kind]]) as stub:
        with pytest.raises(MalformedDirective) as err:
            remote_directive(p, EndpointConfig(stub.url, retries=2))
    assert err.value.kind == kind
    assert len(stub.requests) == 3
    assert "Invalid reply" in stub.requests[-1]["messages"][-1]["content"]


@pytest.mark.remote
def test_retry_recovers_after_one_bad_reply():
    p, _, _ = scene_prompt()
    with StubServer([MALFORMED["no_json"], json.dumps(FIXTURE)]) as stub:
        assert remote_directive(p, EndpointConfig(stub.url)).verb == "place_on"
    assert len(stub.requests) == 2


@pytest.mark.remote
def test_transport_and_timeout_errors():
    p, _, _ = scene_prompt()
    with StubServer([json.dumps(FIXTURE)], status=503) as stub:
        with pytest.raises(Transport):
            remote_directive(p, EndpointConfig(stub.url))
    with StubServer([json.dumps(FIXTURE)], delay=0.5) as stub:
        with pytest.raises(RemoteTimeout):
            remote_directive(p, EndpointConfig(stub.url, timeout=0.1))


@pytest.mark.remote
def test_remote_backend_drives_an_episode():
    """The stub replays the oracle's directives; the remote loop must reach the same end."""
    spec = load_bundled("stack-3").variant(0)
    ref = run_episode(spec, 0)
    replies = [json.dumps(dict(s["directive"], version=SCHEMA_VERSION)) for s in ref.steps]
    with StubServer(replies) as stub:
        rec = run_episode(spec, 0, backend=RemoteBackend(EndpointConfig(stub.url)))
    assert rec.success and rec.header["backend"] == "remote"
    assert [s["directive"] for s in rec.steps] == [s["directive"] for s in ref.steps]
    assert all(s["prompt"] for s in rec.steps) and len(stub.requests) == len(ref.steps)


@pytest.mark.remote
def test_remote_failure_is_a_planning_failure():
    spec = load_bundled("stack-3").variant(0)
    with StubServer(["no idea"]) as stub:
        rec = run_episode(spec, 0, backend=RemoteBackend(EndpointConfig(stub.url)))
    assert not rec.success and rec.cause == "planning"
    assert "MalformedDirective" in rec.final["reason"]
