"""Chat-completion with tool calling: message types, a live HTTP backend and a scripted one.

The scripted backend replays recorded responses keyed by ``(agent role,
turn index)``, which is what makes pipeline runs reproducible offline.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Literal, Optional, Protocol, Sequence, Union

import httpx

from .errors import AuthError, ConfigError, MalformedResponse, RateLimited, TransportError
from .ingest import tokenize

logger = logging.getLogger(__name__)

Role = Literal["system", "user", "assistant", "tool"]
ParamType = Literal["string", "string_list", "integer"]


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]
    call_id: str


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str
    tool_call: Optional[ToolCall] = None
    tool_result_for: Optional[str] = None

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant", "tool"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.tool_call is not None and self.role != "assistant":
            raise ValueError("only assistant messages may carry a tool_call")
        if self.tool_result_for is not None and self.role != "tool":
            raise ValueError("only tool messages may carry tool_result_for")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChatMessage":
        call = data.get("tool_call")
        return cls(
            role=data["role"],
            content=data.get("content", ""),
            tool_call=ToolCall(**call) if call else None,
            tool_result_for=data.get("tool_result_for"),
        )


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: ParamType
    description: str
    required: bool = True


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    params: tuple[ToolParam, ...] = ()

    def json_schema(self) -> dict:
        props = {}
        for p in self.params:
            if p.type == "string_list":
                schema = {"type": "array", "items": {"type": "string"}}
            else:
                schema = {"type": p.type}
            schema["description"] = p.description
            props[p.name] = schema
        return {
            "type": "object",
            "properties": props,
            "required": [p.name for p in self.params if p.required],
        }


@dataclass
class ProviderConfig:
    mode: Literal["live", "scripted"] = "scripted"
    endpoint: Optional[str] = None
    model: str = "gpt-4o"
    api_key_env: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    script: Optional[str] = None

    def validate(self) -> None:
        if self.mode == "live":
            if not self.endpoint or not self.api_key_env:
                raise ConfigError("live provider needs endpoint and api_key_env")
        elif self.mode == "scripted":
            if not self.script:
                raise ConfigError("scripted provider needs a script file path")
        else:
            raise ConfigError(f"unknown provider mode {self.mode!r}")


def count_tokens(text: str) -> int:
    return len(tokenize(text))


# ---------------------------------------------------------------- validation


def _check_type(value: Any, ptype: ParamType) -> Any:
    if ptype == "string":
        if isinstance(value, str):
            return value
    elif ptype == "string_list":
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
    elif ptype == "integer":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            return int(value)
    raise TypeError(f"expected {ptype}, got {type(value).__name__}")


def validate_tool_call(call: ToolCall, tools: Sequence[ToolSpec]) -> ToolCall:
    """Check ``call`` against its ToolSpec; returns a copy with coerced arguments."""
    spec = next((t for t in tools if t.name == call.name), None)
    if spec is None:
        raise MalformedResponse(f"model called unknown tool {call.name!r}", "unknown_tool", call)
    if not isinstance(call.arguments, dict):
        raise MalformedResponse("tool arguments must be an object", "bad_arguments", call)
    known = {p.name: p for p in spec.params}
    extra = set(call.arguments) - set(known)
    if extra:
        raise MalformedResponse(f"unexpected arguments {sorted(extra)}", "bad_arguments", call)
    args = {}
    for p in spec.params:
        if p.name not in call.arguments:
            if p.required:
                raise MalformedResponse(f"missing argument {p.name!r}", "bad_arguments", call)
            continue
        try:
            args[p.name] = _check_type(call.arguments[p.name], p.type)
        except TypeError as exc:
            raise MalformedResponse(f"argument {p.name!r}: {exc}", "bad_arguments", call) from exc
    return ToolCall(call.name, args, call.call_id)


# ---------------------------------------------------------------- providers


class ChatProvider(Protocol):
    def complete(
        self,
        messages: Sequence[ChatMessage],
        tools: Sequence[ToolSpec],
        *,
        agent: str = "",
        turn: int = 0,
    ) -> ChatMessage: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValueError("first message must have role=system")


def _parse_response_message(payload: dict, tools: Sequence[ToolSpec]) -> ChatMessage:
    """Turn a recorded or wire response into a validated assistant message."""
    if not isinstance(payload, dict):
        raise MalformedResponse("response must be an object")
    call = payload.get("tool_call")
    if call:
        try:
            tc = ToolCall(call["name"], dict(call.get("arguments") or {}), str(call["call_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"malformed tool_call: {exc}") from exc
        return ChatMessage("assistant", payload.get("content") or "", tool_call=validate_tool_call(tc, tools))
    content = payload.get("content")
    if not isinstance(content, str) or not content.strip():
        raise MalformedResponse("response has neither text nor a tool call")
    return ChatMessage("assistant", content)


class ScriptedProvider:
    """Replays a JSON script of ``{"role", "turn", "response"}`` records."""

    def __init__(self, records: Sequence[dict]):
        self._responses: dict[tuple[str, int], Any] = {}
        for rec in records:
            key = (rec["role"], int(rec["turn"]))
            if key in self._responses:
                raise ConfigError(f"duplicate script record for {key}")
            self._responses[key] = rec["response"]
        self.requests: list[dict] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedProvider":
        try:
            records = json.loads(Path(path).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read script {path}: {exc}") from exc
        if not isinstance(records, list):
            raise ConfigError("script file must hold a JSON list")
        return cls(records)

    def complete(self, messages, tools, *, agent: str = "", turn: int = 0) -> ChatMessage:
        _check_messages(messages)
        self.requests.append(
            {"agent": agent, "turn": turn, "messages": list(messages), "tools": [t.name for t in tools]}
        )
        try:
            response = self._responses[(agent, turn)]
        except KeyError:
            raise MalformedResponse(f"script exhausted at ({agent}, turn {turn})", "script_exhausted")
        if isinstance(response, str):
            response = {"content": response}
        return _parse_response_message(response, tools)


def wire_message(msg: ChatMessage) -> dict:
    out: dict[str, Any] = {"role": msg.role, "content": msg.content}
    if msg.tool_call is not None:
        out["tool_calls"] = [
            {
                "id": msg.tool_call.call_id,
                "type": "function",
                "function": {
                    "name": msg.tool_call.name,
                    "arguments": json.dumps(msg.tool_call.arguments, separators=(",", ":")),
                },
            }
        ]
    if msg.tool_result_for is not None:
        out["tool_call_id"] = msg.tool_result_for
    return out


def build_request(
    messages: Sequence[ChatMessage], tools: Sequence[ToolSpec], config: ProviderConfig
) -> dict:
    body: dict[str, Any] = {
        "model": config.model,
        "messages": [wire_message(m) for m in messages],
        "temperature": config.temperature,
    }
    if tools:
        body["tools"] = [
            {"name": t.name, "description": t.description, "parameters": t.json_schema()}
            for t in tools
        ]
    return body


def parse_wire_response(data: dict, tools: Sequence[ToolSpec]) -> ChatMessage:
    """Read an OpenAI-style ``choices[0].message``; only the first tool call is used."""
    try:
        message = data["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"response lacks choices[0].message: {exc}") from exc
    calls = message.get("tool_calls") or []
    if calls:
        if len(calls) > 1:
            logger.warning("model returned %d tool calls; using the first", len(calls))
        first = calls[0]
        try:
            fn = first["function"]
            raw_args = fn.get("arguments") or "{}"
            args = json.loads(raw_args) if isinstance(raw_args, str) else raw_args
            payload = {
                "content": message.get("content") or "",
                "tool_call": {"name": fn["name"], "arguments": args, "call_id": first["id"]},
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"malformed tool call on the wire: {exc}") from exc
        return _parse_response_message(payload, tools)
    return _parse_response_message({"content": message.get("content")}, tools)


class HttpProvider:
    """Live chat-completions backend with capped exponential backoff."""

    backoff_base = 0.5
    backoff_cap = 8.0

    def __init__(
        self,
        config: ProviderConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        config.validate()
        if config.mode != "live":
            raise ConfigError("HttpProvider needs a live ProviderConfig")
        self.config = config
        self._sleep = sleep
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self.attempts = 0

    def _auth_header(self) -> str:
        key = os.environ.get(self.config.api_key_env or "")
        if not key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        return f"Bearer {key}"

    def _delay(self, attempt: int) -> float:
        base = min(self.backoff_cap, self.backoff_base * (2**attempt))
        return base * (0.5 + random.random() / 2)

    def complete(self, messages, tools, *, agent: str = "", turn: int = 0) -> ChatMessage:
        _check_messages(messages)
        body = build_request(messages, tools, self.config)
        headers = {"Authorization": self._auth_header(), "Content-Type": "application/json"}
        last_exc: Exception = TransportError("no attempt made")
        for attempt in range(self.config.max_retries + 1):
            self.attempts += 1
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_exc = TransportError(f"transport failure: {exc}")
                if attempt < self.config.max_retries:
                    self._sleep(self._delay(attempt))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials ({resp.status_code})")
            if resp.status_code == 429:
                retry_after = _retry_after(resp)
                last_exc = RateLimited("rate limited by provider", retry_after)
                if attempt < self.config.max_retries:
                    self._sleep(retry_after if retry_after is not None else self._delay(attempt))
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(f"provider error {resp.status_code}")
                if attempt < self.config.max_retries:
                    self._sleep(self._delay(attempt))
                continue
            if resp.status_code >= 400:
                raise MalformedResponse(f"provider refused request ({resp.status_code}): {resp.text[:200]}")
            try:
                data = resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
            return parse_wire_response(data, tools)
        raise last_exc


def _retry_after(resp: httpx.Response) -> Optional[float]:
    value = resp.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def make_provider(config: ProviderConfig, **kwargs) -> ChatProvider:
    config.validate()
    if config.mode == "scripted":
        return ScriptedProvider.from_file(config.script)
    return HttpProvider(config, **kwargs)
