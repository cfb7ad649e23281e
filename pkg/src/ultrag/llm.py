"""Chat-completions clients: a real HTTP client and a scripted stand-in.

Both expose complete(messages) -> ChatResponse.  The HTTP client speaks the
ubiquitous chat-completions JSON shape (model, messages, temperature) with
an optional bearer token from an environment variable.  The scripted client
replays canned replies in order and is what every test and offline run uses;
it counts tokens by whitespace so accounting stays deterministic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import requests


class TransportError(RuntimeError):
    """Network-level failure; safe to retry."""


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int


class HttpChatClient:
    def __init__(self, endpoint, model, timeout=60.0, token_env="ULTRAG_LLM_TOKEN"):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.token_env = token_env
        self._session = requests.Session()

    def complete(self, messages):
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": self.model, "messages": messages, "temperature": 0}
        try:
            resp = self._session.post(self.endpoint, json=body, headers=headers,
                                      timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(str(e)) from e
        if resp.status_code != 200:
            raise TransportError(f"LLM endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            doc = resp.json()
            content = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"malformed LLM response: {e}") from e
        usage = doc.get("usage") or {}
        return ChatResponse(content=content,
                            prompt_tokens=int(usage.get("prompt_tokens", 0)),
                            completion_tokens=int(usage.get("completion_tokens", 0)))


class ScriptedChatClient:
    """Replays a fixed list of replies; raises when the script runs dry."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.cursor = 0
        self.calls = []  # (messages, reply) pairs, in order

    def complete(self, messages):
        if self.cursor >= len(self.replies):
            raise TransportError("scripted client has no reply left")
        reply = self.replies[self.cursor]
        self.cursor += 1
        self.calls.append((messages, reply))
        prompt_tokens = sum(len(m.get("content", "").split()) for m in messages)
        return ChatResponse(content=reply, prompt_tokens=prompt_tokens,
                            completion_tokens=len(reply.split()))


def make_chat_client(endpoint, model="default"):
    """`script:<path>` loads a JSON list of replies; anything else is HTTP."""
    if endpoint.startswith("script:"):
        path = endpoint[len("script:"):]
        with open(path, encoding="utf-8") as fh:
            replies = json.load(fh)
        if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
            raise ValueError("script file must hold a JSON list of strings")
        return ScriptedChatClient(replies)
    return HttpChatClient(endpoint, model)
