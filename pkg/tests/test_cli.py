import csv
import json
import math

import pytest

from conftest import GOLDEN_DIR, WORKED_EXAMPLE
from patentscope.cli import main
from patentscope.embedindex import LocalEmbedder
from patentscope.ingest import filter_text


def run(demo, *args):
    return main(["-c", str(demo / "config.yaml"), *args])


class TestAnalyze:
    def test_outputs_deterministic(self, demo, tmp_path):
        patent = demo / f"{WORKED_EXAMPLE}.txt"
        assert run(demo, "analyze", str(patent), "-o", str(tmp_path / "a")) == 0
        assert run(demo, "analyze", str(patent), "-o", str(tmp_path / "b")) == 0
        for suffix in (".md", ".html", ".teamstate.json"):
            a = (tmp_path / "a" / f"{WORKED_EXAMPLE}{suffix}").read_bytes()
            assert a == (tmp_path / "b" / f"{WORKED_EXAMPLE}{suffix}").read_bytes()
        md = (tmp_path / "a" / f"{WORKED_EXAMPLE}.md").read_text("utf-8")
        assert md == (GOLDEN_DIR / f"{WORKED_EXAMPLE}.md").read_text("utf-8")

    def test_default_output_dir(self, demo):
        assert run(demo, "analyze", str(demo / f"{WORKED_EXAMPLE}.txt")) == 0
        assert (demo / "out" / f"{WORKED_EXAMPLE}.html").exists()

    def test_transform_strategy(self, demo, tmp_path):
        patent = demo / f"{WORKED_EXAMPLE}.txt"
        assert run(demo, "analyze", str(patent), "--context-strategy", "transform", "-o", str(tmp_path)) == 0

    def test_missing_input(self, demo, capsys):
        assert run(demo, "analyze", str(demo / "nope.txt")) == 3
        assert "nope.txt" in capsys.readouterr().err

    def test_live_without_env(self, demo, tmp_path, monkeypatch):
        monkeypatch.delenv("PATENTSCOPE_TEST_KEY", raising=False)
        cfg = tmp_path / "live.yaml"
        cfg.write_text(
            "provider:\n  mode: live\n  endpoint: http://llm.test/v1\n  api_key_env: PATENTSCOPE_TEST_KEY\n"
        )
        assert main(["-c", str(cfg), "analyze", str(demo / f"{WORKED_EXAMPLE}.txt")]) == 2

    def test_unknown_config_key(self, demo, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("provider:\n  mode: scripted\n  script: s.json\nbogus: 1\n")
        assert main(["-c", str(cfg), "analyze", str(demo / f"{WORKED_EXAMPLE}.txt")]) == 2

    def test_pipeline_failure(self, demo, tmp_path, capsys):
        script = json.loads((demo / "script.json").read_text())
        (demo / "script.json").write_text(json.dumps([r for r in script if r["role"] != "technical_detail"]))
        assert run(demo, "analyze", str(demo / f"{WORKED_EXAMPLE}.txt"), "-o", str(tmp_path)) == 4
        assert "technical_detail" in capsys.readouterr().err
        partial = json.loads((tmp_path / f"{WORKED_EXAMPLE}.teamstate.json").read_text())
        assert [s["role"] for s in partial["sections"]] == ["innovation_points", "implementation_method"]

    def test_report_rerender(self, demo, tmp_path):
        patent = demo / f"{WORKED_EXAMPLE}.txt"
        assert run(demo, "analyze", str(patent), "-o", str(tmp_path / "a")) == 0
        state = tmp_path / "a" / f"{WORKED_EXAMPLE}.teamstate.json"
        assert run(demo, "report", str(state), "-o", str(tmp_path / "r")) == 0
        assert (tmp_path / "r" / f"{WORKED_EXAMPLE}.md").read_bytes() == (tmp_path / "a" / f"{WORKED_EXAMPLE}.md").read_bytes()

    def test_pdf_converter_failure(self, demo, tmp_path):
        cfg = (demo / "config.yaml").read_text().replace("report:\n  output_dir: out", "report:\n  output_dir: out\n  converter:\n    command_template: \"false {input} {output}\"")
        (demo / "config.yaml").write_text(cfg)
        assert run(demo, "analyze", str(demo / f"{WORKED_EXAMPLE}.txt")) == 5


class TestIndexSearch:
    def test_index_then_search(self, demo, capsys):
        assert run(demo, "index", str(demo / "corpus")) == 0
        capsys.readouterr()
        first = (demo / "corpus" / "piston.txt").read_text().split(".")[0]
        assert run(demo, "search", first, "-k", "3") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].split("\t")[1] == "piston#0"

        # linear-scan oracle over the stored chunk texts
        chunks = [json.loads(l) for l in (demo / "out" / "index.evp.chunks.jsonl").read_text().splitlines()]
        e = LocalEmbedder()
        q = e.embed_one(filter_text(first, "index").text)
        sims = sorted(((-float(sum(float(a) * float(b) for a, b in zip(q, e.embed_one(c["text"])))), c["key"]) for c in chunks))
        assert [l.split("\t")[1] for l in lines] == [k for _, k in sims[:3]]
        for line, (neg, _) in zip(lines, sims):
            assert math.isclose(float(line.split("\t")[2]), -neg, abs_tol=1e-5)

    def test_k_zero(self, demo, capsys):
        assert run(demo, "index", str(demo / "corpus")) == 0
        capsys.readouterr()
        assert run(demo, "search", "resist", "-k", "0") == 0
        assert capsys.readouterr().out == ""

    def test_missing_index(self, demo, capsys):
        assert run(demo, "search", "resist") != 0
        assert "IndexIoError" in capsys.readouterr().err

    def test_corrupt_index(self, demo, capsys):
        assert run(demo, "index", str(demo / "corpus")) == 0
        path = demo / "out" / "index.evp"
        path.write_bytes(path.read_bytes()[:30])
        assert run(demo, "search", "resist") != 0
        assert "CorruptIndex" in capsys.readouterr().err


def write_manifest(tmp_path, rows):
    m = tmp_path / "pairs.jsonl"
    m.write_text("\n".join(rows) + "\n")
    return m


class TestEval:
    def test_identical_pair(self, demo, tmp_path):
        (tmp_path / "g.txt").write_text("The mold presses resist droplets under helium.")
        (tmp_path / "r.txt").write_text("The mold presses resist droplets under helium.")
        m = write_manifest(tmp_path, ['{"id": "same", "generated": "g.txt", "reference": "r.txt"}'])
        assert run(demo, "eval", str(m), "-o", str(tmp_path / "metrics")) == 0
        (row,) = json.loads((tmp_path / "metrics" / "metrics.json").read_text())
        for key in ("rouge1", "rouge2", "rougeL", "bert_precision", "bert_recall", "bert_f1"):
            assert row[key] == pytest.approx(1.0, abs=1e-6)
        table = list(csv.DictReader((tmp_path / "metrics" / "metrics.csv").open()))
        assert [r["id"] for r in table] == ["same", "mean"]

    def test_malformed_row(self, demo, tmp_path, capsys):
        (tmp_path / "g.txt").write_text("resist mold")
        (tmp_path / "r.txt").write_text("resist mold gap")
        (tmp_path / "empty.txt").write_text("  ")
        m = write_manifest(tmp_path, [
            '{"id": "ok", "generated": "g.txt", "reference": "r.txt"}',
            '{not json',
            '{"id": "noref", "generated": "g.txt", "reference": "empty.txt"}',
        ])
        assert run(demo, "eval", str(m), "-o", str(tmp_path / "metrics")) == 1
        rows = json.loads((tmp_path / "metrics" / "metrics.json").read_text())
        assert [("error" in r) for r in rows] == [False, True, True]
        assert "EmptyReference" in rows[2]["error"]
        assert rows[0]["rouge1"] == pytest.approx(2 / 3)
