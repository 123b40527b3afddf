"""External knowledge tools the agents may call, and the registry they dispatch through.

Each tool runs against either a live HTTP backend or local JSON fixtures.
Constraints the prompts only ask for politely (comma-free patent ids, at most
three paper keywords) are enforced here.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping, Optional, Sequence
from urllib.parse import urlparse

import httpx

from .errors import (
    BackendError,
    EmptyKeywords,
    FixtureMissing,
    HandlerError,
    InvalidKeywords,
    NotFound,
    TooManyKeywords,
    UnknownTool,
)
from .ingest import tokenize
from .llm import ChatMessage, ToolCall, ToolParam, ToolSpec

logger = logging.getLogger(__name__)

DEFAULT_LIMIT = 5
MAX_PAPER_KEYWORDS = 3


@dataclass(frozen=True)
class PatentRecord:
    patent_id: str
    title: str = ""
    abstract: str = ""
    inventor: str = ""
    assignee: str = ""
    application_date: str = ""
    worldwide_applications: tuple[tuple[str, int], ...] = ()
    pdf_url: str = ""

    def __post_init__(self):
        if not self.patent_id:
            raise ValueError("patent_id must be non-empty")
        if self.application_date:
            dt.date.fromisoformat(self.application_date)
        if self.pdf_url and not _well_formed_url(self.pdf_url):
            raise ValueError(f"malformed pdf_url {self.pdf_url!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PatentRecord":
        apps = tuple((str(j), int(y)) for j, y in data.get("worldwide_applications") or ())
        return cls(
            patent_id=str(data["patent_id"]),
            title=data.get("title") or "",
            abstract=data.get("abstract") or "",
            inventor=data.get("inventor") or "",
            assignee=data.get("assignee") or "",
            application_date=data.get("application_date") or "",
            worldwide_applications=apps,
            pdf_url=data.get("pdf_url") or "",
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["worldwide_applications"] = [list(a) for a in self.worldwide_applications]
        return d


@dataclass(frozen=True)
class PaperRecord:
    title: str
    url: str
    year: Optional[int] = None
    abstract: Optional[str] = None

    def __post_init__(self):
        if not self.title or not self.url:
            raise ValueError("paper title and url must be non-empty")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PaperRecord":
        year = data.get("year")
        return cls(
            title=data["title"],
            url=data["url"],
            year=int(year) if year is not None else None,
            abstract=data.get("abstract"),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _well_formed_url(url: str) -> bool:
    parts = urlparse(url)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def normalize_patent_id(patent_id: str) -> str:
    """``"US2017/0263445,A1"`` -> ``"US20170263445A1"``."""
    return re.sub(r"[^0-9A-Za-z]", "", patent_id).upper()


def _clean_keywords(keywords: Sequence[str]) -> list[str]:
    if isinstance(keywords, str):
        keywords = [keywords]
    cleaned = [k.strip() for k in keywords if k and k.strip()]
    if not cleaned:
        raise EmptyKeywords("at least one keyword is required")
    for k in cleaned:
        if not k.isascii():
            raise InvalidKeywords(f"keywords must be English (ASCII): {k!r}")
    return cleaned


def keyword_overlap(keywords: Sequence[str], text: str) -> int:
    """Number of keywords whose tokens all occur in ``text``."""
    vocab = set(tokenize(text))
    hits = 0
    for kw in keywords:
        toks = tokenize(kw)
        if toks and all(t in vocab for t in toks):
            hits += 1
    return hits


# ---------------------------------------------------------------- fixture store


def _read_json_list(path: Optional[Path]) -> list[dict]:
    if path is None or not path.exists():
        return []
    data = json.loads(path.read_text("utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: fixture file must contain a JSON list")
    return data


class FixtureStore:
    """Patents and papers from ``patents.json`` / ``papers.json``; append-only."""

    def __init__(
        self,
        patents: Sequence[PatentRecord] = (),
        papers: Sequence[PaperRecord] = (),
        patents_path: Optional[Path] = None,
        papers_path: Optional[Path] = None,
    ):
        self._patents = {p.patent_id: p for p in patents}
        self._papers = list(papers)
        self.patents_path = patents_path
        self.papers_path = papers_path
        self._lock = threading.Lock()

    @classmethod
    def load(cls, patents_path=None, papers_path=None) -> "FixtureStore":
        pp = Path(patents_path) if patents_path else None
        ap = Path(papers_path) if papers_path else None
        patents = [PatentRecord.from_dict(d) for d in _read_json_list(pp)]
        papers = [PaperRecord.from_dict(d) for d in _read_json_list(ap)]
        return cls(patents, papers, pp, ap)

    @property
    def patents(self) -> list[PatentRecord]:
        return list(self._patents.values())

    @property
    def papers(self) -> list[PaperRecord]:
        return list(self._papers)

    def get_patent(self, patent_id: str) -> Optional[PatentRecord]:
        return self._patents.get(patent_id)

    def add_patents(self, records: Sequence[PatentRecord]) -> None:
        with self._lock:
            new = [r for r in records if r.patent_id not in self._patents]
            for r in new:
                self._patents[r.patent_id] = r
            if new and self.patents_path is not None:
                self._write(self.patents_path, [p.to_dict() for p in self._patents.values()])

    def add_papers(self, records: Sequence[PaperRecord]) -> None:
        with self._lock:
            seen = {p.url for p in self._papers}
            new = [r for r in records if r.url not in seen]
            self._papers.extend(new)
            if new and self.papers_path is not None:
                self._write(self.papers_path, [p.to_dict() for p in self._papers])

    @staticmethod
    def _write(path: Path, rows: list[dict]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(rows, indent=2, ensure_ascii=False) + "\n", "utf-8")
        os.replace(tmp, path)


def rank_patents(records: Sequence[PatentRecord], keywords: Sequence[str], limit: int) -> list[PatentRecord]:
    scored = [(keyword_overlap(keywords, f"{r.title} {r.abstract}"), r) for r in records]
    scored = [(s, r) for s, r in scored if s > 0]
    scored.sort(key=lambda sr: (-sr[0], sr[1].patent_id))
    return [r for _, r in scored[: max(limit, 0)]]


def rank_papers(records: Sequence[PaperRecord], keywords: Sequence[str], limit: int) -> list[PaperRecord]:
    scored = [(keyword_overlap(keywords, f"{r.title} {r.abstract or ''}"), r) for r in records]
    scored = [(s, r) for s, r in scored if s > 0]
    scored.sort(key=lambda sr: (-sr[0], sr[1].title, sr[1].url))
    return [r for _, r in scored[: max(limit, 0)]]


# ---------------------------------------------------------------- backends


@dataclass
class LiveBackend:
    """Generic JSON backends.

    Patents: ``GET {patents_base_url}/patents/{id}`` -> PatentRecord object and
    ``GET {patents_base_url}/search?q=...&limit=N`` -> ``{"results": [...]}``.
    Papers use the Semantic Scholar graph search shape:
    ``GET {papers_base_url}/paper/search?query=...&limit=N&fields=...`` -> ``{"data": [...]}``.
    """

    patents_base_url: Optional[str] = None
    papers_base_url: Optional[str] = None
    patents_key_env: Optional[str] = None
    papers_key_env: Optional[str] = None
    timeout: float = 30.0
    transport: Optional[httpx.BaseTransport] = None
    _client: httpx.Client = field(init=False, repr=False)

    def __post_init__(self):
        self._client = httpx.Client(timeout=self.timeout, transport=self.transport)

    def _get(self, base: Optional[str], path: str, params: dict, key_env: Optional[str], key_header: str):
        if not base:
            raise BackendError("live backend base URL is not configured")
        headers = {}
        if key_env:
            key = os.environ.get(key_env)
            if not key:
                raise BackendError(f"environment variable {key_env} is not set")
            headers[key_header] = key
        try:
            resp = self._client.get(base.rstrip("/") + path, params=params, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if resp.status_code == 404:
            raise NotFound(f"not found: {path}")
        if resp.status_code >= 400:
            raise BackendError(f"backend returned {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"backend returned invalid JSON: {exc}") from exc

    def patent(self, patent_id: str) -> PatentRecord:
        data = self._get(self.patents_base_url, f"/patents/{patent_id}", {}, self.patents_key_env, "Authorization")
        try:
            return PatentRecord.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"bad patent payload: {exc}") from exc

    def search_patents(self, keywords: Sequence[str], limit: int) -> list[PatentRecord]:
        data = self._get(
            self.patents_base_url, "/search", {"q": " ".join(keywords), "limit": limit},
            self.patents_key_env, "Authorization",
        )
        try:
            return [PatentRecord.from_dict(d) for d in data["results"]][:limit]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"bad patent search payload: {exc}") from exc

    def search_papers(self, keywords: Sequence[str], limit: int) -> list[PaperRecord]:
        data = self._get(
            self.papers_base_url, "/paper/search",
            {"query": " ".join(keywords), "limit": limit, "fields": "title,url,year,abstract"},
            self.papers_key_env, "x-api-key",
        )
        out = []
        try:
            for d in data.get("data", []):
                if d.get("title") and d.get("url"):
                    out.append(PaperRecord.from_dict(d))
        except (AttributeError, TypeError, ValueError) as exc:
            raise BackendError(f"bad paper search payload: {exc}") from exc
        return out[:limit]


class KnowledgeTools:
    """The three tool handlers, backed by fixtures or a live backend.

    In live mode fetched records are appended to the fixture store, so data
    collected once is available offline later.
    """

    def __init__(self, store: FixtureStore, live: Optional[LiveBackend] = None, default_limit: int = DEFAULT_LIMIT):
        self.store = store
        self.live = live
        self.default_limit = default_limit

    def lookup_patent_metadata(self, patent_id: str) -> PatentRecord:
        pid = normalize_patent_id(patent_id)
        if not pid:
            raise NotFound("empty patent id")
        if self.live is None:
            rec = self.store.get_patent(pid)
            if rec is None:
                raise FixtureMissing(f"no fixture record for {pid}")
            return rec
        rec = self.live.patent(pid)
        self.store.add_patents([rec])
        return rec

    def search_patents(self, keywords: Sequence[str], limit: Optional[int] = None) -> list[PatentRecord]:
        kws = _clean_keywords(keywords)
        lim = self.default_limit if limit is None else limit
        if self.live is None:
            return rank_patents(self.store.patents, kws, lim)
        found = self.live.search_patents(kws, lim)
        self.store.add_patents(found)
        return found

    def search_papers(self, keywords: Sequence[str], limit: Optional[int] = None) -> list[PaperRecord]:
        kws = _clean_keywords(keywords)
        if len(kws) > MAX_PAPER_KEYWORDS:
            raise TooManyKeywords(f"at most {MAX_PAPER_KEYWORDS} keywords allowed, got {len(kws)}")
        lim = self.default_limit if limit is None else limit
        if self.live is None:
            return rank_papers(self.store.papers, kws, lim)
        found = self.live.search_papers(kws, lim)
        self.store.add_papers(found)
        return found


# ---------------------------------------------------------------- registry


LOOKUP_SPEC = ToolSpec(
    "lookup_patent_metadata",
    "Look up a patent by its publication number and return its title, abstract, inventor, "
    "assignee, application date, worldwide applications and source PDF URL.",
    (ToolParam("patent_id", "string", "Patent publication number without commas, e.g. US20170263445A1"),),
)
SEARCH_PATENTS_SPEC = ToolSpec(
    "search_patents",
    "Search for patents similar to the given one using English keywords.",
    (
        ToolParam("keywords", "string_list", "English keywords describing the patent"),
        ToolParam("limit", "integer", "Maximum number of results", required=False),
    ),
)
SEARCH_PAPERS_SPEC = ToolSpec(
    "search_papers",
    "Search scholarly papers related to the patent. Use at most 3 English keywords.",
    (
        ToolParam("keywords", "string_list", "At most 3 English keywords"),
        ToolParam("limit", "integer", "Maximum number of results", required=False),
    ),
)


def _to_jsonable(value: Any) -> Any:
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def compact_json(value: Any) -> str:
    return json.dumps(_to_jsonable(value), separators=(",", ":"), ensure_ascii=False)


Handler = Callable[..., Any]


class ToolRegistry:
    """Immutable map of tool name -> (ToolSpec, handler)."""

    def __init__(self, entries: Mapping[str, tuple[ToolSpec, Handler]]):
        for name, (spec, handler) in entries.items():
            if spec.name != name:
                raise ValueError(f"registry key {name!r} does not match spec name {spec.name!r}")
            if not callable(handler):
                raise ValueError(f"handler for {name!r} is not callable")
        self._entries = MappingProxyType(dict(entries))

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def spec(self, name: str) -> ToolSpec:
        try:
            return self._entries[name][0]
        except KeyError:
            raise UnknownTool(f"no tool named {name!r}") from None

    def specs(self, names: Optional[Sequence[str]] = None) -> list[ToolSpec]:
        names = self.names() if names is None else names
        return [self.spec(n) for n in names]

    def handler(self, name: str) -> Handler:
        try:
            return self._entries[name][1]
        except KeyError:
            raise UnknownTool(f"no tool named {name!r}") from None


def build_registry(tools: KnowledgeTools) -> ToolRegistry:
    return ToolRegistry(
        {
            LOOKUP_SPEC.name: (LOOKUP_SPEC, tools.lookup_patent_metadata),
            SEARCH_PATENTS_SPEC.name: (SEARCH_PATENTS_SPEC, tools.search_patents),
            SEARCH_PAPERS_SPEC.name: (SEARCH_PAPERS_SPEC, tools.search_papers),
        }
    )


def dispatch(registry: ToolRegistry, tool_call: ToolCall) -> ChatMessage:
    """Run the handler and wrap its result as a compact-JSON tool message."""
    handler = registry.handler(tool_call.name)
    try:
        result = handler(**tool_call.arguments)
    except Exception as exc:
        raise HandlerError(tool_call.name, exc) from exc
    return ChatMessage("tool", compact_json(result), tool_result_for=tool_call.call_id)
