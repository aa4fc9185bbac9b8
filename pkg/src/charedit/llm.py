"""Parsing backends: HTTP chat-completion client and a scripted test double."""

from __future__ import annotations

import json
import os

import requests


class LLMBackendError(RuntimeError):
    """Raised when the backend endpoint cannot produce a response."""


class HTTPChatBackend:
    """Chat-completion client for an OpenAI-style endpoint.

    The API key is read from an environment variable at call time, never
    stored in config files.  The engine works fully offline without a
    backend; this client is opt-in.
    """

    def __init__(
        self,
        url: str,
        model: str = "gpt-4",
        api_key_env: str = "CHAREDIT_LLM_API_KEY",
        timeout: float = 30.0,
    ):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: dict) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        user_payload = {k: request[k] for k in request if k not in ("system", "examples", "version")}
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request["system"]},
                {"role": "user", "content": json.dumps(user_payload, sort_keys=True)},
            ],
        }
        try:
            response = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
            response.raise_for_status()
            doc = response.json()
            return doc["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise LLMBackendError(f"backend request failed: {exc}") from exc


class ScriptedBackend:
    """Returns canned responses in order; raises once the script runs out."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.requests: list[dict] = []

    def complete(self, request: dict) -> str:
        self.requests.append(request)
        if not self.responses:
            raise LLMBackendError("scripted backend exhausted")
        return self.responses.pop(0)
