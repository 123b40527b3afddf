"""Assemble agent sections into a Markdown report, render it to HTML, export PDF.

The renderer covers a deliberately small Markdown subset (ATX headings,
flat lists, pipe tables, paragraphs, bold/italic/code/links) so output is
deterministic and easy to golden-test. Anything else is escaped text.
"""

from __future__ import annotations

import datetime as dt
import html
import re
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .agents import PIPELINE_ORDER, AgentRole, TeamState
from .errors import ConverterFailed, ConverterUnconfigured, MissingSection
from .tools import PatentRecord

SECTION_TITLES = {
    AgentRole.innovation_points: "Abstract and Innovations",
    AgentRole.implementation_method: "Implementation Methods",
    AgentRole.technical_detail: "Technical Details",
    AgentRole.horizontal_comparison: "Comparative Analysis",
    AgentRole.academic_direction: "Academic Direction",
}
REFERENCES_TITLE = "References"


@dataclass
class AnalysisReport:
    patent_id: str
    generated_at: str
    metadata: Optional[PatentRecord]
    sections: list[tuple[str, str]]
    citations: list[tuple[str, str]] = field(default_factory=list)


def metadata_from_state(state: TeamState) -> Optional[PatentRecord]:
    """The PatentRecord fetched by the innovation agent, if it fetched one."""
    sec = state.sections.get(AgentRole.innovation_points)
    if sec is None:
        return None
    for cit in sec.tool_citations:
        if cit.tool == "lookup_patent_metadata" and isinstance(cit.result, dict) and "patent_id" in cit.result:
            return PatentRecord.from_dict(cit.result)
    return None


def citations_from_state(state: TeamState) -> list[tuple[str, str]]:
    seen, out = set(), []
    for role in PIPELINE_ORDER:
        sec = state.sections.get(role)
        if sec is None:
            continue
        for cit in sec.tool_citations:
            results = cit.result if isinstance(cit.result, list) else [cit.result]
            for rec in results:
                if not isinstance(rec, dict):
                    continue
                url = rec.get("url") or rec.get("pdf_url")
                title = rec.get("title") or rec.get("patent_id")
                if title and url and (title, url) not in seen:
                    seen.add((title, url))
                    out.append((title, url))
    return out


_HEADING_RE = re.compile(r"^(#{1,6})(\s+.*|)$")
_FENCE_RE = re.compile(r"^\s*(```|~~~)")


def demote_headings(body: str, min_level: int = 3) -> str:
    """Shift headings so the shallowest one sits at ``min_level``."""
    lines = body.splitlines()
    levels, in_fence = [], False
    for line in lines:
        if _FENCE_RE.match(line):
            in_fence = not in_fence
        elif not in_fence and (m := _HEADING_RE.match(line)):
            levels.append(len(m.group(1)))
    if not levels or min(levels) >= min_level:
        return body
    shift = min_level - min(levels)
    out, in_fence = [], False
    for line in lines:
        if _FENCE_RE.match(line):
            in_fence = not in_fence
        elif not in_fence and (m := _HEADING_RE.match(line)):
            line = "#" * min(6, len(m.group(1)) + shift) + m.group(2)
        out.append(line)
    return "\n".join(out)


def _md_escape_link_text(text: str) -> str:
    return text.replace("[", "(").replace("]", ")")


def _metadata_block(meta: PatentRecord) -> list[str]:
    lines = []
    pairs = [
        ("Title", meta.title),
        ("Inventor", meta.inventor),
        ("Assignee", meta.assignee),
        ("Application date", meta.application_date),
        ("Worldwide applications", ", ".join(f"{j} ({y})" for j, y in meta.worldwide_applications)),
    ]
    for label, value in pairs:
        if value:
            lines.append(f"- **{label}:** {value}")
    if meta.pdf_url:
        lines.append(f"- **Source PDF:** [{meta.pdf_url}]({meta.pdf_url})")
    return lines


def assemble_markdown(
    state: TeamState,
    metadata: Optional[PatentRecord] = None,
    generated_at: Optional[str] = None,
) -> tuple[AnalysisReport, str]:
    """Build the report: H1 title, metadata list, one H2 per section, then References."""
    for role in PIPELINE_ORDER:
        if role not in state.sections or not state.sections[role].markdown.strip():
            raise MissingSection(role.value)
    metadata = metadata if metadata is not None else metadata_from_state(state)
    patent_id = state.patent_id or (metadata.patent_id if metadata else "unknown")
    stamp = generated_at or dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    sections = [(SECTION_TITLES[r], demote_headings(state.sections[r].markdown.strip())) for r in PIPELINE_ORDER]
    citations = citations_from_state(state)
    report = AnalysisReport(patent_id, stamp, metadata, sections, citations)

    lines = [f"# Patent Analysis Report: {patent_id}", ""]
    if metadata is not None:
        lines += _metadata_block(metadata) + [""]
    for title, body in sections:
        lines += [f"## {title}", "", body, ""]
    if citations:
        lines += [f"## {REFERENCES_TITLE}", ""]
        lines += [f"{i}. [{_md_escape_link_text(t)}]({u})" for i, (t, u) in enumerate(citations, 1)]
        lines.append("")
    return report, "\n".join(lines).rstrip("\n") + "\n"


# ---------------------------------------------------------------- HTML

_INLINE_RE = re.compile(
    r"(?P<code>`[^`\n]+`)"
    r"|(?P<link>\[(?P<ltext>[^\]\n]+)\]\((?P<href>[^)\s]+)\))"
    r"|(?P<bold>\*\*(?=\S)(?P<btext>.+?)(?<=\S)\*\*)"
    r"|(?P<italic>(?<![\w*])\*(?=[^\s*])(?P<itext>[^*\n]+?)(?<=\S)\*(?![\w*])"
    r"|(?<!\w)_(?=\S)(?P<utext>[^_\n]+?)(?<=\S)_(?!\w))"
)
_SAFE_SCHEMES = ("http://", "https://", "mailto:", "#", "/")


def _esc(text: str) -> str:
    return html.escape(text, quote=True)


def render_inline(text: str) -> str:
    out, pos = [], 0
    for m in _INLINE_RE.finditer(text):
        out.append(_esc(text[pos : m.start()]))
        if m.group("code"):
            out.append(f"<code>{_esc(m.group('code')[1:-1])}</code>")
        elif m.group("link"):
            href = m.group("href")
            if href.lower().startswith(_SAFE_SCHEMES) or "://" not in href and ":" not in href:
                out.append(f'<a href="{_esc(href)}">{render_inline(m.group("ltext"))}</a>')
            else:
                out.append(_esc(m.group(0)))
        elif m.group("bold"):
            out.append(f"<strong>{render_inline(m.group('btext'))}</strong>")
        else:
            inner = m.group("itext") if m.group("itext") is not None else m.group("utext")
            out.append(f"<em>{render_inline(inner)}</em>")
        pos = m.end()
    out.append(_esc(text[pos:]))
    return "".join(out)


_UL_RE = re.compile(r"^\s*[-*+]\s+(.*)$")
_OL_RE = re.compile(r"^\s*\d+[.)]\s+(.*)$")
_TABLE_SEP_RE = re.compile(r"^\s*\|?\s*:?-{1,}:?\s*(\|\s*:?-{1,}:?\s*)*\|?\s*$")


def _split_row(line: str) -> list[str]:
    s = line.strip()
    if s.startswith("|"):
        s = s[1:]
    if s.endswith("|") and not s.endswith("\\|"):
        s = s[:-1]
    return [c.strip() for c in re.split(r"(?<!\\)\|", s)]


def _is_table_start(lines: list[str], i: int) -> bool:
    return (
        i + 1 < len(lines)
        and "|" in lines[i]
        and _TABLE_SEP_RE.match(lines[i + 1]) is not None
        and "-" in lines[i + 1]
    )


def _block_start(lines: list[str], i: int) -> bool:
    line = lines[i]
    return (
        not line.strip()
        or _HEADING_RE.match(line) is not None
        or _UL_RE.match(line) is not None
        or _OL_RE.match(line) is not None
        or _is_table_start(lines, i)
    )


def render_body(markdown: str) -> str:
    lines = markdown.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    out: list[str] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        m = _HEADING_RE.match(line)
        if m:
            level = len(m.group(1))
            out.append(f"<h{level}>{render_inline(m.group(2).strip())}</h{level}>")
            i += 1
            continue
        if _is_table_start(lines, i):
            header = _split_row(lines[i])
            i += 2
            rows = []
            while i < len(lines) and lines[i].strip() and "|" in lines[i]:
                rows.append(_split_row(lines[i]))
                i += 1
            parts = ["<table>", "<thead>", "<tr>"]
            parts += [f"<th>{render_inline(c)}</th>" for c in header]
            parts += ["</tr>", "</thead>", "<tbody>"]
            for row in rows:
                row = (row + [""] * len(header))[: len(header)]
                parts.append("<tr>" + "".join(f"<td>{render_inline(c)}</td>" for c in row) + "</tr>")
            parts += ["</tbody>", "</table>"]
            out.append("\n".join(parts))
            continue
        for pattern, tag in ((_UL_RE, "ul"), (_OL_RE, "ol")):
            if pattern.match(line):
                items = []
                while i < len(lines) and (im := pattern.match(lines[i])):
                    items.append(f"<li>{render_inline(im.group(1).strip())}</li>")
                    i += 1
                out.append(f"<{tag}>\n" + "\n".join(items) + f"\n</{tag}>")
                break
        else:
            para = [line.strip()]
            i += 1
            while i < len(lines) and not _block_start(lines, i):
                para.append(lines[i].strip())
                i += 1
            out.append(f"<p>{render_inline(' '.join(para))}</p>")
    return "\n".join(out)


_STYLE = (
    "body{font-family:Georgia,serif;max-width:52em;margin:2em auto;line-height:1.5;padding:0 1em}"
    "table{border-collapse:collapse}th,td{border:1px solid #999;padding:.25em .5em}"
    "code{background:#f3f3f3;padding:0 .2em}"
)


def render_html(markdown: str, title: Optional[str] = None) -> str:
    """Render the supported Markdown subset into a standalone HTML5 document.

    Output is also well-formed XML, which keeps it checkable with a strict parser.
    """
    if title is None:
        m = re.search(r"^#\s+(.+)$", markdown, re.MULTILINE)
        title = m.group(1).strip() if m else "Report"
    return (
        "<!DOCTYPE html>\n"
        '<html lang="en">\n<head>\n<meta charset="utf-8" />\n'
        f"<title>{_esc(title)}</title>\n<style>{_STYLE}</style>\n</head>\n<body>\n"
        f"{render_body(markdown)}\n</body>\n</html>\n"
    )


# ---------------------------------------------------------------- PDF

_path_locks: dict[str, threading.Lock] = {}
_path_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    with _path_locks_guard:
        return _path_locks.setdefault(str(path.resolve()), threading.Lock())


def export_pdf(html_text: str, output_path: Union[str, Path], command_template: Optional[str]) -> Path:
    """Convert HTML to PDF with an external command (``{input}``/``{output}`` placeholders)."""
    if not command_template:
        raise ConverterUnconfigured("no HTML-to-PDF converter configured")
    output_path = Path(output_path)
    with _lock_for(output_path), tempfile.TemporaryDirectory(prefix="patentscope-pdf-") as tmp:
        src = Path(tmp) / "report.html"
        src.write_text(html_text, "utf-8")
        if output_path.exists():
            output_path.unlink()
        argv = [a.format(input=str(src), output=str(output_path)) for a in shlex.split(command_template)]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=600)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ConverterFailed(f"could not run converter: {exc}") from exc
        if proc.returncode != 0:
            raise ConverterFailed(
                f"converter exited with {proc.returncode}: {proc.stderr.decode('utf-8', 'replace').strip()}"
            )
        if not output_path.exists() or output_path.stat().st_size == 0:
            raise ConverterFailed("converter produced no output")
        with output_path.open("rb") as fh:
            if fh.read(4) != b"%PDF":
                raise ConverterFailed("converter output is not a PDF")
    return output_path
