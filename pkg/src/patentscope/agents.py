"""The five-role analysis team.

Roles run in a fixed order over one shared, append-only transcript. Each
role sees the earlier roles' output (subject to the context budget), may call
its permitted tool a bounded number of times, and contributes one report
section.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Literal, Optional, Sequence

from .context import (
    CompressionConfig,
    CorpusStats,
    TokenBudget,
    limit_history,
    prepare_patent_text,
    truncate_tokens,
)
from .errors import (
    BudgetImpossible,
    HandlerError,
    MalformedResponse,
    PatentscopeError,
    PipelineError,
    TurnLimitExceeded,
)
from .ingest import CleanDocument
from .llm import ChatMessage, ChatProvider, ToolCall, count_tokens
from .tools import ToolRegistry, compact_json, dispatch

logger = logging.getLogger(__name__)

PLACEHOLDER = "{patent_content}"
CORRECTIVE_MESSAGE = "tool unavailable; answer from context"
DEFAULT_MAX_TURNS = 4


class AgentRole(str, enum.Enum):
    innovation_points = "innovation_points"
    implementation_method = "implementation_method"
    technical_detail = "technical_detail"
    horizontal_comparison = "horizontal_comparison"
    academic_direction = "academic_direction"


PIPELINE_ORDER = tuple(AgentRole)

# (allowed tools, tool-call budget) per role
_TOOL_POLICY = {
    AgentRole.innovation_points: (("lookup_patent_metadata",), 1),
    AgentRole.implementation_method: ((), 0),
    AgentRole.technical_detail: ((), 0),
    AgentRole.horizontal_comparison: (("search_patents",), 1),
    AgentRole.academic_direction: (("search_papers",), 1),
}


@dataclass(frozen=True)
class AgentProfile:
    role: AgentRole
    system_message: str
    user_message_template: str
    allowed_tools: tuple[str, ...]
    max_tool_calls: int
    max_turns: int = DEFAULT_MAX_TURNS

    def user_message(self, patent_content: str) -> str:
        return self.user_message_template.replace(PLACEHOLDER, patent_content)


# ---------------------------------------------------------------- prompt catalog


def _catalog_dir():
    return resources.files("patentscope").joinpath("prompts")


def parse_prompt_file(text: str) -> tuple[str, str]:
    """Split a catalog file into (system message, user template)."""
    head, sep, rest = text.partition("=== system ===\n")
    if not sep or head.strip():
        raise ValueError("prompt file must start with '=== system ==='")
    system, sep, user = rest.partition("\n=== user ===\n")
    if not sep:
        raise ValueError("prompt file lacks '=== user ===' section")
    user = user.rstrip("\n")
    if PLACEHOLDER not in user:
        raise ValueError(f"user template lacks {PLACEHOLDER}")
    return system, user


@lru_cache(maxsize=None)
def load_prompts(role: AgentRole) -> tuple[str, str]:
    text = _catalog_dir().joinpath(f"{role.value}.txt").read_text("utf-8")
    return parse_prompt_file(text)


def catalog_checksums() -> dict[str, str]:
    """Expected sha256 per catalog file, from the shipped SHA256SUMS."""
    sums = {}
    for line in _catalog_dir().joinpath("SHA256SUMS").read_text("utf-8").splitlines():
        if line.strip():
            digest, name = line.split(maxsplit=1)
            sums[name.strip()] = digest
    return sums


def verify_catalog() -> list[str]:
    """Names of catalog files whose content drifted from the recorded checksum."""
    drifted = []
    for name, digest in catalog_checksums().items():
        data = _catalog_dir().joinpath(name).read_bytes()
        if hashlib.sha256(data).hexdigest() != digest:
            drifted.append(name)
    return drifted


def build_profile(role: AgentRole, max_turns: int = DEFAULT_MAX_TURNS) -> AgentProfile:
    role = AgentRole(role)
    system, user = load_prompts(role)
    tools, budget = _TOOL_POLICY[role]
    return AgentProfile(role, system, user, tools, budget, max_turns)


# ---------------------------------------------------------------- state


@dataclass(frozen=True)
class ToolCitation:
    tool: str
    arguments: dict[str, Any]
    digest: str
    result: Any = None

    def to_dict(self) -> dict:
        return {"tool": self.tool, "arguments": self.arguments, "digest": self.digest, "result": self.result}


@dataclass
class SectionOutput:
    role: AgentRole
    markdown: str
    tool_citations: list[ToolCitation] = field(default_factory=list)
    # logical clock: transcript length when the section completed
    completed_at: int = 0

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "markdown": self.markdown,
            "tool_citations": [c.to_dict() for c in self.tool_citations],
            "completed_at": self.completed_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SectionOutput":
        return cls(
            role=AgentRole(data["role"]),
            markdown=data["markdown"],
            tool_citations=[ToolCitation(**c) for c in data.get("tool_citations", [])],
            completed_at=int(data.get("completed_at", 0)),
        )


@dataclass
class TeamState:
    patent_id: str = ""
    transcript: list[ChatMessage] = field(default_factory=list)
    sections: dict[AgentRole, SectionOutput] = field(default_factory=dict)

    def append(self, message: ChatMessage) -> None:
        self.transcript.append(message)

    def to_dict(self) -> dict:
        return {
            "patent_id": self.patent_id,
            "transcript": [m.to_dict() for m in self.transcript],
            "sections": [s.to_dict() for s in self.sections.values()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "TeamState":
        state = cls(patent_id=data.get("patent_id", ""))
        state.transcript = [ChatMessage.from_dict(m) for m in data.get("transcript", [])]
        for s in data.get("sections", []):
            sec = SectionOutput.from_dict(s)
            state.sections[sec.role] = sec
        return state

    @classmethod
    def from_json(cls, text: str) -> "TeamState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ContextPolicy:
    strategy: Literal["compress", "transform"] = "compress"
    budget: TokenBudget = TokenBudget()
    compression: CompressionConfig = CompressionConfig()


# ---------------------------------------------------------------- agent loop


def _drop_orphan_tool_messages(messages: list[ChatMessage]) -> list[ChatMessage]:
    calls = {m.tool_call.call_id for m in messages if m.tool_call is not None}
    return [m for m in messages if m.role != "tool" or m.tool_result_for in calls]


def shared_context(
    system: ChatMessage, prior: Sequence[ChatMessage], user: ChatMessage, policy: ContextPolicy
) -> list[ChatMessage]:
    """``[system] + limited prior transcript``; the user prompt is reserved out of the budget."""
    budget = policy.budget
    if policy.strategy == "transform":
        prior = [truncate_tokens(m, budget.max_tokens_per_message) for m in prior]
    reserve = count_tokens(user.content)
    if reserve >= budget.max_total_tokens:
        raise BudgetImpossible(f"user prompt of {reserve} tokens leaves no room in the total budget")
    reduced = TokenBudget(
        min(budget.max_tokens_per_message, budget.max_total_tokens - reserve),
        budget.max_total_tokens - reserve,
        budget.max_history_messages,
    )
    return _drop_orphan_tool_messages(limit_history([system, *prior], reduced))


def _digest(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()[:16]


def run_agent(
    profile: AgentProfile,
    patent_text: str,
    state: TeamState,
    llm: ChatProvider,
    registry: ToolRegistry,
    context_policy: Optional[ContextPolicy] = None,
) -> SectionOutput:
    """Run one role to a text answer, appending every message to the shared transcript."""
    policy = context_policy or ContextPolicy()
    system = ChatMessage("system", profile.system_message)
    user = ChatMessage("user", profile.user_message(patent_text))
    base = shared_context(system, state.transcript, user, policy)
    tools = registry.specs(profile.allowed_tools)
    own: list[ChatMessage] = []
    citations: list[ToolCitation] = []
    dispatched = 0

    def record(msg: ChatMessage) -> None:
        own.append(msg)
        state.append(msg)

    for turn in range(profile.max_turns):
        messages = [*base, user, *own]
        try:
            reply = llm.complete(messages, tools, agent=profile.role.value, turn=turn)
        except MalformedResponse as exc:
            if exc.reason != "unknown_tool" or exc.tool_call is None:
                raise
            reply = ChatMessage("assistant", "", tool_call=exc.tool_call)

        call: Optional[ToolCall] = reply.tool_call
        if call is None:
            state.append(reply)
            section = SectionOutput(profile.role, reply.content, citations, len(state.transcript))
            return section

        record(reply)
        if call.name in profile.allowed_tools and dispatched < profile.max_tool_calls:
            dispatched += 1
            try:
                result = dispatch(registry, call)
            except HandlerError as exc:
                logger.warning("%s: tool %s failed: %s", profile.role.value, call.name, exc.cause)
                result = ChatMessage("tool", compact_json({"error": str(exc)}), tool_result_for=call.call_id)
            else:
                citations.append(
                    ToolCitation(call.name, dict(call.arguments), _digest(result.content), json.loads(result.content))
                )
            record(result)
        else:
            logger.info("%s: refused tool call %s (not allowed or over budget)", profile.role.value, call.name)
            record(ChatMessage("tool", CORRECTIVE_MESSAGE, tool_result_for=call.call_id))

    raise TurnLimitExceeded(f"{profile.role.value}: no text answer within {profile.max_turns} turns")


@dataclass
class PipelineDeps:
    llm: ChatProvider
    registry: ToolRegistry
    context: ContextPolicy = ContextPolicy()
    corpus_stats: Optional[CorpusStats] = None
    max_turns: int = DEFAULT_MAX_TURNS


def run_pipeline(patent: CleanDocument, deps: PipelineDeps, patent_id: Optional[str] = None) -> TeamState:
    """Run all five roles in order. The first hard failure raises PipelineError.

    The raised error carries the partial state as ``exc.state``.
    """
    if patent.profile != "llm":
        raise ValueError("run_pipeline needs an llm-profile document")
    text = prepare_patent_text(
        patent.text, deps.context.strategy, deps.context.budget, deps.context.compression, deps.corpus_stats
    )
    state = TeamState(patent_id=patent_id or patent.doc_id)
    for role in PIPELINE_ORDER:
        profile = build_profile(role, deps.max_turns)
        try:
            state.sections[role] = run_agent(profile, text, state, deps.llm, deps.registry, deps.context)
        except PatentscopeError as exc:
            err = PipelineError(role.value, exc)
            err.state = state
            raise err from exc
    return state
