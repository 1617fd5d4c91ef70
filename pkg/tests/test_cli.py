from __future__ import annotations

import json

import pytest

from reidlab.cli import main
from reidlab.corpus import parse_manifest


@pytest.fixture()
def fixture_manifest(tmp_path):
    path = tmp_path / "fixture.jsonl"
    assert main(["fixture", "--out", str(path), "--identities", "8"]) == 0
    return path


class TestIngest:
    def test_ingest_prints_counts(self, fixture_manifest, tmp_path, capsys):
        out = tmp_path / "index.jsonl"
        code = main(["ingest", "--manifest", str(fixture_manifest), "--out", str(out)])
        captured = capsys.readouterr().out
        assert code == 0
        assert "fixture: 48" in captured
        assert parse_manifest(out).stats.total == 48

    def test_missing_file_nonzero_with_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        code = main(["ingest", "--manifest", str(missing), "--out", str(tmp_path / "o.jsonl")])
        assert code != 0

    def test_all_filtered_reports_empty_corpus(self, fixture_manifest, tmp_path, capsys):
        code = main(
            [
                "ingest",
                "--manifest",
                str(fixture_manifest),
                "--out",
                str(tmp_path / "o.jsonl"),
                "--min-width",
                "5000",
                "--min-height",
                "5000",
            ]
        )
        assert code != 0
        assert "empty corpus" in capsys.readouterr().err


class TestSynth:
    def test_same_seed_twice_identical_digest(self, tmp_path, capsys):
        args = ["synth", "--stage", "2", "--fixture", "--total", "200", "--seed", "7", "--out", str(tmp_path / "d1")]
        assert main(args) == 0
        first = capsys.readouterr().out
        args[-1] = str(tmp_path / "d2")
        assert main(args) == 0
        second = capsys.readouterr().out
        digest1 = next(l for l in first.splitlines() if l.startswith("digest:"))
        digest2 = next(l for l in second.splitlines() if l.startswith("digest:"))
        assert digest1 == digest2

    def test_stage3_prints_per_setting_counts(self, tmp_path, capsys):
        assert main(["synth", "--stage", "3", "--fixture", "--total", "60", "--seed", "1", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        for setting in ("reid_standard", "reid_cc", "reid_vi", "reid_t2i", "attr_retrieval", "adaptive_mm"):
            assert setting in out

    def test_invalid_plan_nonzero(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"fractions": {"i2i_pair": 0.9}, "total": 100}))
        code = main(["synth", "--stage", "2", "--fixture", "--plan", str(plan), "--out", str(tmp_path)])
        assert code != 0
        assert "sum to 1" in capsys.readouterr().err


class TestEval:
    def test_perfect_fixture_shows_100(self, tmp_path, capsys):
        code = main(
            [
                "eval",
                "--fixture",
                "--setting",
                "standard",
                "--strategy",
                "pairwise",
                "--backend",
                "perfect",
                "--out",
                str(tmp_path),
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "100.0" in out
        assert "mAP" in out

    def test_strategy_tag_in_report(self, tmp_path, capsys):
        for strategy in ("pairwise", "best_choice"):
            assert (
                main(
                    [
                        "eval",
                        "--fixture",
                        "--strategy",
                        strategy,
                        "--backend",
                        "perfect",
                        "--out",
                        str(tmp_path),
                    ]
                )
                == 0
            )
            out = capsys.readouterr().out
            assert f"strategy={strategy}" in out
            report = json.loads((tmp_path / f"eval_standard_{strategy}.json").read_text())
            assert report["strategy"] == strategy

    def test_tau_minus_one_notes_full_gallery(self, tmp_path, capsys):
        code = main(
            ["eval", "--fixture", "--tau", "-1", "--backend", "perfect", "--out", str(tmp_path)]
        )
        assert code == 0
        assert "full gallery" in capsys.readouterr().out


class TestSessionExport:
    def test_export_roundtrip(self, tmp_path, capsys):
        import json as _json

        from fastapi.testclient import TestClient

        from reidlab.service import ServiceConfig, create_app

        data_dir = tmp_path / "data"
        config = ServiceConfig(data_dir=data_dir, use_fixture=True, fixture_identities=6)
        with TestClient(create_app(config)) as client:
            opened = client.post("/v1/sessions", json={"scope": {"dataset_id": "fixture"}})
            session_id = _json.loads(opened.text.splitlines()[0])["session_id"]
            client.post(f"/v1/sessions/{session_id}/query", json={"text": "A person", "k": 3})
            live_log = client.get(f"/v1/sessions/{session_id}/log").text
        code = main(["session-export", "--data-dir", str(data_dir), "--session-id", session_id])
        assert code == 0
        assert capsys.readouterr().out == live_log

    def test_unknown_session_nonzero(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        (data_dir / "sessions.jsonl").write_text("")
        assert main(["session-export", "--data-dir", str(data_dir), "--session-id", "ghost"]) != 0


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        config = tmp_path / "cli.json"
        config.write_text(json.dumps({"out": str(tmp_path / "build"), "seed": 11}))
        code = main(["--config", str(config), "synth", "--stage", "2", "--fixture", "--total", "50"])
        assert code == 0
        assert (tmp_path / "build" / "stage2_seed11.jsonl").exists()

    def test_flags_override_config(self, tmp_path, capsys):
        config = tmp_path / "cli.json"
        config.write_text(json.dumps({"seed": 11}))
        code = main(
            ["--config", str(config), "synth", "--stage", "2", "--fixture", "--total", "50",
             "--seed", "3", "--out", str(tmp_path / "b")]
        )
        assert code == 0
        assert (tmp_path / "b" / "stage2_seed3.jsonl").exists()

    def test_missing_out_reports_error(self, tmp_path, capsys):
        code = main(["synth", "--stage", "2", "--fixture", "--total", "10"])
        assert code == 2
        assert "--out" in capsys.readouterr().err
