import json
import re
import stat
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DEMO_DIR, GOLDEN_DIR, WORKED_EXAMPLE
from patentscope.agents import PIPELINE_ORDER, AgentRole, PipelineDeps, SectionOutput, TeamState, run_pipeline
from patentscope.errors import ConverterFailed, ConverterUnconfigured, MissingSection
from patentscope.ingest import RawDocument, extract_text, filter_text
from patentscope.llm import ScriptedProvider
from patentscope.report import SECTION_TITLES, assemble_markdown, demote_headings, export_pdf, render_html
from patentscope.tools import FixtureStore, KnowledgeTools, build_registry

TITLES = ["Abstract and Innovations", "Implementation Methods", "Technical Details", "Comparative Analysis", "Academic Direction"]


def demo_state():
    raw = RawDocument(WORKED_EXAMPLE, "plain_text", (DEMO_DIR / f"{WORKED_EXAMPLE}.txt").read_bytes())
    doc = filter_text(extract_text(raw), "llm", doc_id=WORKED_EXAMPLE)
    store = FixtureStore.load(DEMO_DIR / "fixtures/patents.json", DEMO_DIR / "fixtures/papers.json")
    llm = ScriptedProvider(json.loads((DEMO_DIR / "script.json").read_text()))
    return run_pipeline(doc, PipelineDeps(llm, build_registry(KnowledgeTools(store))))


def simple_state(skip=()):
    state = TeamState(patent_id="X1")
    for r in PIPELINE_ORDER:
        if r not in skip:
            state.sections[r] = SectionOutput(r, f"Body of {r.value}.")
    return state


def h2s(md):
    return re.findall(r"^## (.+)$", md, re.MULTILINE)


def parse(html_doc):
    return ET.fromstring(html_doc.split("\n", 1)[1])  # drop the doctype line


BLOCK_TAGS = {"p", "li", "td", "th", "tr", "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "table"}


def _text(el):
    parts = [el.text or ""]
    for child in el:
        inner = _text(child)
        parts.append(f" {inner} " if child.tag in BLOCK_TAGS else inner)
        parts.append(child.tail or "")
    return "".join(parts)


def body_text(html_doc):
    return " ".join(_text(parse(html_doc).find("body")).split())


def strip_markdown(md):
    """Oracle: visible text implied by the markdown source."""
    out = []
    for line in md.splitlines():
        if re.match(r"^\s*\|?\s*:?-+:?\s*(\|\s*:?-+:?\s*)*\|?\s*$", line) and "-" in line:
            continue
        line = re.sub(r"^#{1,6}\s+", "", line)
        line = re.sub(r"^\s*(?:[-*+]|\d+[.)])\s+", "", line)
        line = re.sub(r"\[([^\]]+)\]\([^)]+\)", r"\1", line)
        line = line.replace("**", "").replace("`", "")
        line = re.sub(r"(?<![\w*])\*(\S[^*]*?)\*", r"\1", line)
        line = line.replace("|", " ")
        out.append(line)
    return " ".join(" ".join(out).split())


class TestAssemble:
    def test_h2_order(self):
        _, md = assemble_markdown(simple_state())
        assert h2s(md) == TITLES
        assert md.startswith("# Patent Analysis Report: X1\n")
        assert list(SECTION_TITLES.values()) == TITLES

    def test_missing_section(self):
        with pytest.raises(MissingSection) as ei:
            assemble_markdown(simple_state(skip=(AgentRole.academic_direction,)))
        assert ei.value.role == "academic_direction"

    def test_demo_report(self):
        report, md = assemble_markdown(demo_state())
        assert h2s(md) == TITLES + ["References"]
        assert report.metadata is not None and report.metadata.patent_id == WORKED_EXAMPLE
        assert "- **Inventor:** Fixture Inventor" in md
        assert [t for t, _ in report.sections] == TITLES

    def test_golden(self):
        _, md = assemble_markdown(demo_state())
        assert md == (GOLDEN_DIR / f"{WORKED_EXAMPLE}.md").read_text("utf-8")

    def test_section_headings_cannot_break_order(self):
        state = simple_state()
        state.sections[AgentRole.technical_detail].markdown = "## Sneaky\n\n# Also sneaky\n\ntext"
        _, md = assemble_markdown(state)
        assert h2s(md) == TITLES

    def test_demote(self):
        assert demote_headings("# a\n### b\n#### c") == "### a\n##### b\n###### c"
        assert demote_headings("#### a\ntext") == "#### a\ntext"

    def test_no_references_without_citations(self):
        assert "References" not in assemble_markdown(simple_state())[1]

    @given(st.lists(st.text(max_size=40).filter(str.strip), min_size=5, max_size=5))
    def test_order_property(self, bodies):
        state = TeamState(patent_id="P")
        for r, b in zip(PIPELINE_ORDER, bodies):
            state.sections[r] = SectionOutput(r, b)
        assert h2s(assemble_markdown(state)[1]) == TITLES


class TestRender:
    def test_heading(self):
        assert "<h1>T</h1>" in render_html("# T")

    def test_link(self):
        a = parse(render_html("[a](http://x)")).find(".//a")
        assert a.get("href") == "http://x" and a.text == "a"

    def test_constructs(self):
        md = "## H\n\n- one\n- two\n\n1. first\n2. second\n\n| a | b |\n|---|---|\n| 1 | 2 |\n\n**b** *i* `c`"
        root = parse(render_html(md))
        assert [li.text for li in root.iter("li")] == ["one", "two", "first", "second"]
        assert root.find(".//ul") is not None and root.find(".//ol") is not None
        assert [c.text for c in root.iter("td")] == ["1", "2"]
        assert [c.text for c in root.iter("th")] == ["a", "b"]
        assert root.find(".//strong").text == "b"
        assert root.find(".//em").text == "i"
        assert root.find(".//code").text == "c"

    def test_unsafe_link_escaped(self):
        out = render_html("[x](javascript:alert(1))")
        assert "<a" not in out.split("<body>")[1]

    def test_escaping(self):
        out = render_html("a < b & c > d")
        assert "a &lt; b &amp; c &gt; d" in out

    def test_mixed_document_round_trip(self):
        md = (GOLDEN_DIR / f"{WORKED_EXAMPLE}.md").read_text("utf-8")
        html_doc = render_html(md)
        root = parse(html_doc)
        assert root.tag == "html" and html_doc.startswith("<!DOCTYPE html>")
        assert body_text(html_doc) == strip_markdown(md)
        assert [h.text for h in root.iter("h2")] == TITLES + ["References"]

    def test_demo_escapes_raw_markup(self):
        html_doc = render_html(assemble_markdown(demo_state())[1])
        assert "&lt;bubbles&gt;" in html_doc and "sooner &amp; filling" in html_doc

    @settings(max_examples=200)
    @given(st.text(alphabet=st.sampled_from(list("ab <>&*_`[]()|#-1.\n\"'")), max_size=120))
    def test_total_and_well_formed(self, text):
        html_doc = render_html(text)
        root = parse(html_doc)
        assert root.find("body") is not None
        body = html_doc.split("<body>", 1)[1]
        assert not re.search(r"<(?!/?(h[1-6]|p|ul|ol|li|table|thead|tbody|tr|th|td|strong|em|code|a)[ >])", body.replace("</body>", "").replace("</html>", ""))


def stub(tmp_path, body):
    script = tmp_path / "conv.sh"
    script.write_text("#!/bin/sh\n" + body + "\n")
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return f"{script} {{input}} {{output}}"


class TestExportPdf:
    def test_unconfigured(self, tmp_path):
        with pytest.raises(ConverterUnconfigured):
            export_pdf("<html/>", tmp_path / "r.pdf", None)

    def test_success(self, tmp_path):
        out = export_pdf("<html/>", tmp_path / "r.pdf", stub(tmp_path, 'printf "%%PDF-1.4 stub" > "$2"'))
        assert out.read_bytes().startswith(b"%PDF")

    def test_receives_html(self, tmp_path):
        export_pdf("<p>hi</p>", tmp_path / "r.pdf", stub(tmp_path, '{ printf "%%PDF-"; cat "$1"; } > "$2"'))
        assert (tmp_path / "r.pdf").read_bytes() == b"%PDF-<p>hi</p>"

    def test_empty_output(self, tmp_path):
        with pytest.raises(ConverterFailed):
            export_pdf("<html/>", tmp_path / "r.pdf", stub(tmp_path, ': > "$2"'))

    def test_bad_magic(self, tmp_path):
        with pytest.raises(ConverterFailed):
            export_pdf("<html/>", tmp_path / "r.pdf", stub(tmp_path, 'echo hello > "$2"'))

    def test_nonzero_exit(self, tmp_path):
        with pytest.raises(ConverterFailed):
            export_pdf("<html/>", tmp_path / "r.pdf", stub(tmp_path, 'printf "%%PDF" > "$2"; exit 3'))

    def test_missing_command(self, tmp_path):
        with pytest.raises(ConverterFailed):
            export_pdf("<html/>", tmp_path / "r.pdf", "/nonexistent/converter {input} {output}")
