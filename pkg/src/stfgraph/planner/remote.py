"""Client for an OpenAI-compatible chat-completions endpoint acting as the planner.

Request: ``POST {url}/chat/completions`` with a system message (the versioned
preamble) and one user message carrying the prompt text and the annotated
observation as a PNG data URL.  Reply: the assistant content must hold exactly
one JSON object following the ``directive/1`` schema.

Malformed replies fall in five classes (``MalformedDirective.kind``)::

    no_json           no JSON object anywhere in the reply
    invalid_json      an object starts but does not parse
    multiple_objects  more than one top-level object
    unknown_verb      verb outside the vocabulary
    schema_violation  missing/mistyped fields, wrong version, bad arity
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import requests

from ..directive import VERBS, ActionDirective
from ..errors import MalformedDirective, RemoteTimeout, Transport
from .prompt import SCHEMA_VERSION, PromptContext

MALFORMATION_KINDS = ("no_json", "invalid_json", "multiple_objects", "unknown_verb", "schema_violation")
_FIELDS = {"version", "verb", "subject", "target", "preconditions", "subgoal"}


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    token: str = ""
    model: str = "default"
    timeout: float = 30.0
    retries: int = 2  # extra attempts after a malformed reply

    @classmethod
    def from_env(cls, env=None) -> "EndpointConfig":
        env = os.environ if env is None else env
        url = env.get("STFGRAPH_ENDPOINT_URL")
        if not url:
            raise ValueError("STFGRAPH_ENDPOINT_URL is not set")
        return cls(url=url, token=env.get("STFGRAPH_API_TOKEN", ""), model=env.get("STFGRAPH_MODEL", "default"),
                   timeout=float(env.get("STFGRAPH_TIMEOUT", "30")))

    @property
    def completions_url(self) -> str:
        return self.url.rstrip("/") + "/chat/completions"


def build_messages(prompt: PromptContext) -> list:
    return [
        {"role": "system", "content": prompt.preamble},
        {"role": "user", "content": [
            {"type": "text", "text": prompt.text()},
            {"type": "image_url", "image_url": {"url": prompt.image_data_url()}},
        ]},
    ]


def _objects(text: str) -> list:
    """Top-level JSON objects in ``text``, in order."""
    dec = json.JSONDecoder()
    found, i = [], text.find("{")
    while i != -1:
        try:
            obj, end = dec.raw_decode(text, i)
        except json.JSONDecodeError as e:
            if not found:
                raise MalformedDirective(f"reply holds unparseable JSON: {e.msg}", "invalid_json") from None
            break
        found.append(obj)
        i = text.find("{", end)
    return found


def parse_directive(text: str) -> ActionDirective:
    objs = _objects(text)
    if not objs:
        raise MalformedDirective("reply contains no JSON object", "no_json")
    if len(objs) > 1:
        raise MalformedDirective(f"reply contains {len(objs)} JSON objects, expected one", "multiple_objects")
    d = objs[0]
    if not isinstance(d, dict):
        raise MalformedDirective("directive is not a JSON object", "schema_violation")
    verb = d.get("verb")
    if isinstance(verb, str) and verb not in VERBS:
        raise MalformedDirective(f"unknown verb {verb!r}", "unknown_verb")
    if d.get("version") != SCHEMA_VERSION:
        raise MalformedDirective(f"expected version {SCHEMA_VERSION!r}, got {d.get('version')!r}", "schema_violation")
    extra = set(d) - _FIELDS
    if extra:
        raise MalformedDirective(f"unexpected fields {sorted(extra)}", "schema_violation")
    if not isinstance(verb, str):
        raise MalformedDirective("verb must be a string", "schema_violation")
    pre = d.get("preconditions", [])
    if not isinstance(pre, list) or not all(isinstance(p, str) for p in pre):
        raise MalformedDirective("preconditions must be a list of strings", "schema_violation")
    if not isinstance(d.get("subgoal", "") or "", str):
        raise MalformedDirective("subgoal must be a string", "schema_violation")
    target = d.get("target")
    if isinstance(target, list) and not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in target):
        raise MalformedDirective("point targets must be numeric", "schema_violation")
    try:
        return ActionDirective.from_dict(d)
    except (ValueError, TypeError) as e:
        raise MalformedDirective(str(e), "schema_violation") from None


def _content(body) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise Transport("response is not a chat completion") from None
    if isinstance(content, list):  # content parts
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise Transport("completion content is not text")
    return content


def remote_directive(prompt: PromptContext, endpoint: EndpointConfig, session=None) -> ActionDirective:
    """One directive from the endpoint, retrying up to ``endpoint.retries`` times on malformed replies."""
    http = session or requests
    headers = {"Content-Type": "application/json"}
    if endpoint.token:
        headers["Authorization"] = f"Bearer {endpoint.token}"
    messages = build_messages(prompt)
    last = None
    for _ in range(endpoint.retries + 1):
        payload = {"model": endpoint.model, "messages": messages, "temperature": 0}
        try:
            resp = http.post(endpoint.completions_url, json=payload, headers=headers, timeout=endpoint.timeout)
        except requests.Timeout as e:
            raise RemoteTimeout(f"no reply within {endpoint.timeout}s") from e
        except requests.RequestException as e:
            raise Transport(str(e)) from e
        if resp.status_code != 200:
            raise Transport(f"HTTP {resp.status_code} from {endpoint.completions_url}")
        try:
            body = resp.json()
        except ValueError:
            raise Transport("response body is not JSON") from None
        text = _content(body)
        try:
            return parse_directive(text)
        except MalformedDirective as e:
            last = e
            messages = messages + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": f"Invalid reply ({e.kind}): {e}. Reply with exactly one "
                                            f"JSON object following schema {SCHEMA_VERSION}."},
            ]
    raise MalformedDirective(f"{last} (after {endpoint.retries} retries)", last.kind)
