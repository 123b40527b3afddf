"""Text extraction and normalization for patent documents.

Two filtering profiles exist. ``llm`` keeps function words because the text
goes to the agents verbatim; ``index`` additionally drops stop words before
chunking and embedding.
"""

from __future__ import annotations

import html
import io
import logging
import re
import shlex
import subprocess
import tempfile
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Optional, Union

from .errors import EmptyAfterFilter, EncodingError, ExtractorFailed, ImageOnlyPdf

logger = logging.getLogger(__name__)

SourceKind = Literal["plain_text", "pdf_text_layer", "pre_extracted"]
Profile = Literal["llm", "index"]

ALLOWED_PUNCTUATION = frozenset(".,;:!?'\"()-%")

HTML_TAG_RE = re.compile(r"<!--.*?-->|</?[A-Za-z][A-Za-z0-9:-]*(?:\s[^<>]*)?/?>", re.DOTALL)
URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    source_kind: SourceKind
    payload: Union[bytes, str]
    language_hint: Optional[str] = None

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.payload:
            raise ValueError("payload must be non-empty")
        if self.source_kind not in ("plain_text", "pdf_text_layer", "pre_extracted"):
            raise ValueError(f"unknown source_kind {self.source_kind!r}")


@dataclass(frozen=True)
class ExtractorConfig:
    mode: Literal["builtin", "command"] = "builtin"
    command_template: Optional[str] = None


@dataclass
class Removals:
    special_chars: int = 0
    html_tags: int = 0
    urls: int = 0
    stop_words: int = 0


@dataclass
class CleanDocument:
    doc_id: str
    text: str
    token_count: int
    profile: Profile
    removals: Removals = field(default_factory=Removals)


# ---------------------------------------------------------------- tokenizer


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(word: str) -> str:
    start, end = 0, len(word)
    while start < end and _is_punct(word[start]):
        start += 1
    while end > start and _is_punct(word[end - 1]):
        end -= 1
    return word[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    This is the single tokenizer used for filtering, token budgets, chunking
    and the ROUGE/BERTScore metrics, so counts agree everywhere.
    """
    tokens = []
    for word in text.lower().split():
        tok = _strip_punct(word)
        if tok:
            tokens.append(tok)
    return tokens


def token_words(text: str) -> list[tuple[str, str]]:
    """Pairs of (surface word, token) for every word that yields a token."""
    pairs = []
    for word in text.split():
        tok = _strip_punct(word.lower())
        if tok:
            pairs.append((word, tok))
    return pairs


# ---------------------------------------------------------------- stop words


def parse_stopwords(lines: Iterable[str]) -> frozenset[str]:
    words = set()
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    text = resources.files("patentscope").joinpath("data/stopwords_en.txt").read_text("utf-8")
    return parse_stopwords(text.splitlines())


def load_stopwords(path: Union[str, Path, None]) -> frozenset[str]:
    if path is None:
        return default_stopwords()
    return parse_stopwords(Path(path).read_text("utf-8").splitlines())


# ---------------------------------------------------------------- extraction


def _decode(payload: Union[bytes, str]) -> str:
    if isinstance(payload, str):
        return payload
    try:
        return payload.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"payload is not valid UTF-8: {exc}") from exc


def _pdf_bytes(payload: Union[bytes, str]) -> bytes:
    if isinstance(payload, str):
        return payload.encode("latin-1")
    return payload


def _read_text_layer(data: bytes) -> list[str]:
    from pypdf import PdfReader
    from pypdf.errors import PdfReadError

    try:
        reader = PdfReader(io.BytesIO(data))
        return [page.extract_text() or "" for page in reader.pages]
    except (PdfReadError, ValueError, KeyError) as exc:
        raise ExtractorFailed(f"could not parse PDF: {exc}") from exc


def _run_extractor_command(data: bytes, template: str) -> str:
    with tempfile.TemporaryDirectory(prefix="patentscope-extract-") as tmp:
        src = Path(tmp) / "input.pdf"
        dst = Path(tmp) / "output.txt"
        src.write_bytes(data)
        argv = [arg.format(input=str(src), output=str(dst)) for arg in shlex.split(template)]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=300)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExtractorFailed(f"could not run extractor {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode("utf-8", "replace").strip()
            raise ExtractorFailed(f"extractor exited with {proc.returncode}: {stderr}")
        if not dst.exists():
            raise ExtractorFailed("extractor did not write its output file")
        return _decode(dst.read_bytes())


def extract_text(raw: RawDocument, extractor_config: Optional[ExtractorConfig] = None) -> str:
    """Return the full text of ``raw``; PDFs keep page order, pages joined by newlines."""
    if raw.source_kind in ("plain_text", "pre_extracted"):
        return _decode(raw.payload)

    cfg = extractor_config or ExtractorConfig()
    data = _pdf_bytes(raw.payload)
    if cfg.mode == "command":
        if not cfg.command_template:
            raise ExtractorFailed("extractor mode 'command' needs a command_template")
        text = _run_extractor_command(data, cfg.command_template)
    else:
        text = "\n".join(p.strip("\n") for p in _read_text_layer(data))

    if not text.strip():
        raise ImageOnlyPdf(f"{raw.doc_id}: no extractable text layer (OCR is not supported)")
    return text


def raw_from_path(path: Union[str, Path], doc_id: Optional[str] = None) -> RawDocument:
    """Build a RawDocument from a file, picking the source kind from its suffix."""
    path = Path(path)
    data = path.read_bytes()
    kind: SourceKind = "pdf_text_layer" if path.suffix.lower() == ".pdf" else "plain_text"
    return RawDocument(doc_id=doc_id or path.stem, source_kind=kind, payload=data)


# ---------------------------------------------------------------- filtering


def _keep_char(ch: str) -> bool:
    if ch.isspace() or ch in ALLOWED_PUNCTUATION:
        return True
    cat = unicodedata.category(ch)
    return cat[0] in ("L", "N", "M")


def _filter_pass(text: str, removals: Removals) -> str:
    text = html.unescape(text)
    text, n = HTML_TAG_RE.subn(" ", text)
    removals.html_tags += n
    text, n = URL_RE.subn(" ", text)
    removals.urls += n
    kept = [ch for ch in text if _keep_char(ch)]
    removals.special_chars += len(text) - len(kept)
    return _WS_RE.sub(" ", "".join(kept)).strip()


def filter_text(
    text: str,
    profile: Profile = "llm",
    stopwords: Optional[frozenset[str]] = None,
    doc_id: str = "",
) -> CleanDocument:
    """Apply the normalization rules and return a CleanDocument.

    HTML tags, URLs and special characters are removed repeatedly until the
    text stops changing, so a removal can never expose a new tag or URL and
    the output is a fixed point of the filter.
    """
    if profile not in ("llm", "index"):
        raise ValueError(f"unknown profile {profile!r}")
    removals = Removals()
    current = text
    while True:
        nxt = _filter_pass(current, removals)
        if nxt == current:
            break
        current = nxt

    if profile == "index":
        stop = default_stopwords() if stopwords is None else stopwords
        kept_words = []
        for word in current.split():
            if _strip_punct(word.lower()) in stop:
                removals.stop_words += 1
            else:
                kept_words.append(word)
        current = " ".join(kept_words)

    if not tokenize(current):
        raise EmptyAfterFilter(f"{doc_id or 'document'}: nothing left after filtering")
    return CleanDocument(
        doc_id=doc_id,
        text=current,
        token_count=len(tokenize(current)),
        profile=profile,
        removals=removals,
    )
