"""CLI surface: workflows, exit codes, error JSON, byte-identical re-runs."""

from __future__ import annotations

import json
import re

import pytest

from ood_audit.cli import main
from ood_audit.core import save_dump

from conftest import det, dump, gt, record


def strip_timestamps(data: bytes) -> bytes:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        return data  # binary artifact (PNG): compare as-is
    text = re.sub(r"^# timestamp=.*$", "", text, flags=re.MULTILINE)
    text = re.sub(r"^\s*\"timestamp\": .*$", "", text, flags=re.MULTILINE)
    return text.encode("utf-8")


def synth_config_file(tmp_path, name="synth.json", **overrides):
    obj = {
        "feature_dim": 4,
        "id_clusters": [{"mean": [0, 0, 0, 0], "sigma": 1.0, "weight": 1.0}],
        "ood_cluster": {"mean": [10, 0, 0, 0], "sigma": 1.0},
        "n_cali": 400,
        "n_ood": 200,
        "contamination_rate": 0.0,
        "seed": 17,
    }
    obj.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    """Generated dumps plus hand-built aux/candidate fixtures."""
    ws = {"dir": tmp_path}
    config = synth_config_file(tmp_path)
    ws["config"] = config
    for split, name in (("id_cali", "cali"), ("ood_test", "ood"), ("id_test", "idtest"),
                        ("id_train", "train")):
        out = tmp_path / f"{name}.jsonl"
        assert main(["simulate", "gen", "--config", config, "--split", split,
                     "--out", str(out)]) == 0
        ws[name] = str(out)

    # ood dump with aux detections (3 of 10 images contaminated with a car)
    records = []
    for i in range(10):
        aux_name = "car" if i < 3 else "camel"
        records.append(
            record(
                image_id=f"aux_{i:02d}",
                detections=[det(confidence=0.9)],
                aux_detections=[det(class_id=-1, class_name=aux_name, confidence=0.8)],
            )
        )
    ood_aux = tmp_path / "ood_aux.jsonl"
    save_dump(dump(records=records, split_kind="ood_test"), ood_aux)
    ws["ood_aux"] = str(ood_aux)

    # candidate dump: 5 of 20 contaminated
    cands = []
    for i in range(20):
        name = "car" if i < 5 else "giraffe"
        cands.append(
            record(
                image_id=f"cand_{i:02d}",
                aux_detections=[det(class_id=-1, class_name=name, confidence=0.8)],
                ground_truth=[gt(class_name="zebra", is_ood=True)],
            )
        )
    cand_path = tmp_path / "candidates.jsonl"
    save_dump(dump(records=cands, split_kind="candidate"), cand_path)
    ws["candidates"] = str(cand_path)

    class_map = tmp_path / "class_map.json"
    class_map.write_text(json.dumps({"sedan": "car"}), encoding="utf-8")
    ws["class_map"] = str(class_map)

    curation_config = tmp_path / "curation.json"
    curation_config.write_text(
        json.dumps({"id_class_list": ["car", "person"], "class_map": {}}),
        encoding="utf-8",
    )
    ws["curation_config"] = str(curation_config)
    return ws


class TestWorkflow:
    def test_full_pipeline(self, workspace, tmp_path):
        d = tmp_path / "out"
        d.mkdir()
        calib = str(d / "calib.json")
        model = str(d / "model.bin")
        cali_scores = str(d / "cali_scores.csv")
        assert main([
            "calibrate", "--filter", "centroid_l2", "--cali", workspace["cali"],
            "--out", calib, "--model-out", model, "--scores-out", cali_scores,
        ]) == 0
        calib_doc = json.loads(open(calib).read())
        assert calib_doc["retention"] >= 0.95
        assert calib_doc["n_cali"] > 0

        mask = str(d / "mask.json")
        assert main([
            "audit", "outliers", "--dump", workspace["cali"],
            "--filter", "centroid_l2", "--mask-out", mask, "--out", str(d / "outliers.json"),
        ]) == 0

        hall_csv = str(d / "hall.csv")
        ood_scores = str(d / "ood_scores.csv")
        assert main([
            "eval", "hallucinations", "--dump", workspace["ood"],
            "--model", model, "--calib", calib,
            "--out", hall_csv, "--summary-out", str(d / "hall.json"),
            "--scores-out", ood_scores,
        ]) == 0
        summary = json.loads(open(d / "hall.json").read())
        # 10-sigma separation: nearly everything should be flagged OoD
        assert summary["total"] <= 5

        fpr_json = str(d / "fpr.json")
        assert main([
            "eval", "fpr95", "--id-scores", cali_scores, "--ood-scores", ood_scores,
            "--out", fpr_json,
        ]) == 0
        assert json.loads(open(fpr_json).read())["fpr95"] <= 0.05

        kde_csv = str(d / "kde.csv")
        assert main([
            "report", "kde", "--id-scores", cali_scores, "--ood-scores", ood_scores,
            "--outlier-mask", mask, "--out", kde_csv,
        ]) == 0
        assert (d / "kde.png").exists()  # figure rendered alongside the CSV
        header_line = [
            l for l in open(kde_csv).read().splitlines() if not l.startswith("#")
        ][0]
        assert header_line == "score,id_density,ood_density"

    def test_map_eval(self, workspace, tmp_path):
        out = str(tmp_path / "map.json")
        assert main(["eval", "map", "--dump", workspace["idtest"], "--out", out]) == 0
        doc = json.loads(open(out).read())
        # synthetic detections replicate their ground truth exactly
        assert doc["map"] == pytest.approx(1.0)

    def test_audit_type1_then_inflation(self, workspace, tmp_path):
        t1 = str(tmp_path / "t1.json")
        assert main([
            "audit", "type1", "--dump", workspace["ood_aux"],
            "--class-map", workspace["class_map"], "--out", t1,
        ]) == 0
        doc = json.loads(open(t1).read())
        assert doc["flagged_objects"] == 3
        assert doc["n_images"] == 10

    def test_curate_and_prep_finetune(self, workspace, tmp_path):
        retained = str(tmp_path / "retained.jsonl")
        rejected = str(tmp_path / "rejected.jsonl")
        summary = str(tmp_path / "curate.json")
        assert main([
            "curate", "--candidates", workspace["candidates"],
            "--config", workspace["curation_config"],
            "--retained-out", retained, "--rejected-out", rejected, "--out", summary,
        ]) == 0
        doc = json.loads(open(summary).read())
        assert doc["n_retained"] == 15
        assert doc["n_rejected"] == 5

        ft = str(tmp_path / "ft.jsonl")
        assert main([
            "prep-finetune", "--id-train", workspace["train"],
            "--proximal", retained, "--lambda", "1.0", "--out", ft,
        ]) == 0
        lines = open(ft).read().strip().split("\n")
        header = json.loads(lines[0])
        assert header["lambda"] == 1.0
        assert len(lines) - 1 == 15 + len(
            [l for l in open(workspace["train"])]
        ) - 1  # proximal + train records

    def test_fpr95_on_identical_score_files(self, tmp_path):
        scores = tmp_path / "scores.txt"
        scores.write_text("\n".join(str(float(v)) for v in range(100)) + "\n")
        out = str(tmp_path / "fpr.json")
        assert main(["eval", "fpr95", "--id-scores", str(scores),
                     "--ood-scores", str(scores), "--out", out]) == 0
        assert json.loads(open(out).read())["fpr95"] == 0.95

    def test_simulate_tau_shift_csv(self, workspace, tmp_path):
        out = str(tmp_path / "shift.csv")
        fig = str(tmp_path / "shift.png")
        assert main([
            "simulate", "tau-shift", "--config", workspace["config"],
            "--rates", "0,0.05,0.1", "--out", out, "--fig", fig,
        ]) == 0
        rows = [l for l in open(out).read().splitlines() if l and not l.startswith("#")]
        assert rows[0] == "contamination_rate,n_contaminated,tau,fpr95"
        assert len(rows) == 4
        import os

        assert os.path.exists(fig)

    def test_validate_exit_codes(self, workspace, tmp_path):
        assert main(["validate", "--dump", workspace["cali"],
                     "--out", str(tmp_path / "v.json")]) == 0
        # break a dump: logits length mismatch
        bad = dump(records=[record(detections=[det(logits=[0.1])])])
        bad_path = tmp_path / "bad.jsonl"
        save_dump(bad, bad_path)
        code = main(["validate", "--dump", str(bad_path), "--out", str(tmp_path / "vb.json")])
        assert code == 3
        doc = json.loads(open(tmp_path / "vb.json").read())
        assert doc["n_violations"] == 1


class TestDeterminism:
    def run_twice(self, commands, files):
        # identical inputs include identical flags: re-run the same argv
        # into the same paths, capturing bytes between the runs
        outs = []
        for _ in range(2):
            for argv in commands:
                assert main(argv) == 0
            outs.append([open(f, "rb").read() for f in files])
        for b1, b2 in zip(outs[0], outs[1]):
            assert strip_timestamps(b1) == strip_timestamps(b2)

    def test_lemma1_reports_byte_identical(self, tmp_path):
        out = str(tmp_path / "lemma1.csv")
        self.run_twice(
            [["simulate", "lemma1", "--alpha", "0.8", "--g", "5",
              "--trials", "2000", "--seed", "7", "--out", out]],
            [out],
        )

    def test_gen_and_calibrate_byte_identical(self, workspace, tmp_path):
        dump_out = str(tmp_path / "cali.jsonl")
        calib = str(tmp_path / "calib.json")
        scores = str(tmp_path / "scores.csv")
        self.run_twice(
            [
                ["simulate", "gen", "--config", workspace["config"],
                 "--split", "id_cali", "--out", dump_out],
                ["calibrate", "--filter", "knn:k=5", "--cali", dump_out,
                 "--out", calib, "--scores-out", scores],
            ],
            [dump_out, calib, scores],
        )

    def test_kde_report_and_figure_byte_identical(self, workspace, tmp_path):
        base = tmp_path / "scores"
        base.mkdir()
        cali_scores = str(base / "cali.csv")
        ood_scores = str(base / "ood.csv")
        calib = str(base / "calib.json")
        model = str(base / "model.bin")
        assert main(["calibrate", "--filter", "centroid_l2", "--cali", workspace["cali"],
                     "--out", calib, "--model-out", model,
                     "--scores-out", cali_scores]) == 0
        assert main(["eval", "hallucinations", "--dump", workspace["ood"],
                     "--model", model, "--calib", calib,
                     "--out", str(base / "h.csv"), "--scores-out", ood_scores]) == 0
        out = str(tmp_path / "kde.csv")
        fig = str(tmp_path / "kde.png")
        self.run_twice(
            [["report", "kde", "--id-scores", cali_scores,
              "--ood-scores", ood_scores, "--out", out, "--fig", fig]],
            [out, fig],
        )


class TestErrors:
    def test_unknown_subcommand_exits_2_with_usage(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_runtime_error_json_on_stderr_exit_1(self, capsys):
        code = main(["validate", "--dump", "/nope/missing.jsonl"])
        assert code == 1
        payload = json.loads(capsys.readouterr().err)
        assert payload["error"]["type"] == "FileNotFoundError"

    def test_bad_filter_spec_reports_error(self, workspace, capsys):
        code = main(["calibrate", "--filter", "bogus", "--cali", workspace["cali"]])
        assert code == 1
        assert "unknown filter method" in json.loads(capsys.readouterr().err)["error"]["message"]

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["--version"])
        assert err.value.code == 0
        assert "ood-audit" in capsys.readouterr().out


def test_threads_env_var_fallback(monkeypatch):
    from ood_audit.core import resolve_threads

    monkeypatch.setenv("OOD_AUDIT_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(5) == 5
    monkeypatch.delenv("OOD_AUDIT_THREADS")
    assert resolve_threads(None) >= 1
