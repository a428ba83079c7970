"""Driving an episode through the HTTP planner interface.

A local stub stands in for a chat-completions endpoint.  It is loaded with the
directives the rule-based planner would give, so the episode should end the
same way; along the way every proposal still passes through prompt assembly,
JSON parsing and precondition verification.

    python demos/03_remote_planner_stub.py
"""
from __future__ import annotations

import json

from stfgraph.harness.episode import run_episode
from stfgraph.planner.loop import RemoteBackend
from stfgraph.planner.prompt import SCHEMA_VERSION
from stfgraph.planner.remote import EndpointConfig
from stfgraph.planner.stub_server import StubServer
from stfgraph.sim.tasks import load_bundled

spec = load_bundled("stack-3")
reference = run_episode(spec, 0)
replies = [json.dumps(dict(s["directive"], version=SCHEMA_VERSION)) for s in reference.steps]

# %% one malformed reply first: the client asks again with a correction
replies.insert(0, "Sure! First I will pick up the top block.")

with StubServer(replies) as stub:
    backend = RemoteBackend(EndpointConfig(stub.url, model="stub"))
    rec = run_episode(spec, 0, backend=backend)
    requests = stub.requests

print(f"remote episode: {'success' if rec.success else 'failure: ' + rec.final['reason']}, "
      f"{len(rec.steps)} steps, {len(requests)} HTTP requests")

# %% what the endpoint saw on the first request
first = requests[0]["messages"]
print("\nsystem message (first lines):")
print("\n".join(first[0]["content"].splitlines()[:6]))
user = first[1]["content"]
text = next(part["text"] for part in user if part["type"] == "text") if isinstance(user, list) else user
print("\nuser message (first lines):")
print("\n".join(text.splitlines()[:14]))

# %% the retry carried the bad reply back with a correction
retry = requests[1]["messages"]
print("\nretry turn:", retry[-2]["role"], "->", retry[-1]["content"][:100])
