import json
from pathlib import Path

import numpy as np
import pytest

from futureseg.cli import main
from futureseg.fields import FlowField, flow_write, write_label_png

QUICK = Path(__file__).resolve().parents[1] / "configs" / "quickstart.yaml"


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["synth", "--help"])
    assert e.value.code == 0
    assert "--n" in capsys.readouterr().out


def test_bad_usage_exits_two():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["train-mask", "--data", "x", "--layers", "most"])
    assert e.value.code == 2


def test_eval_shape_mismatch_exits_one(tmp_path, capsys):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    flow_write(FlowField.zeros(4, 6), tmp_path / "p" / "a.flo")
    flow_write(FlowField.zeros(4, 5), tmp_path / "g" / "a.flo")
    code = main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "futureseg eval: error: ShapeError" in err


def test_eval_scores_flows_and_labels(tmp_path, capsys):
    for d in ("p", "g"):
        (tmp_path / d).mkdir()
    flow_write(FlowField(np.ones((4, 6)), np.zeros((4, 6))), tmp_path / "p" / "a.flo")
    flow_write(FlowField.zeros(4, 6), tmp_path / "g" / "a.flo")
    lab = np.zeros((4, 6), np.uint8)
    lab[:2] = 3
    write_label_png(lab, tmp_path / "p" / "sem_0.png")
    write_label_png(lab, tmp_path / "g" / "sem_0.png")
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"),
                 "--out", str(tmp_path / "o")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["flow_mse"][0]["mse"] == pytest.approx(0.5)
    assert report["semantic_iou"]["per_class"]["3"] == 1.0
    assert (tmp_path / "o" / "eval.json").exists()


def test_missing_checkpoint_exits_one(tmp_path, capsys):
    code = main(["rollout", "--ckpt", str(tmp_path / "none.ckpt"), "--past", str(tmp_path),
                 "--n", "2"])
    assert code == 1
    assert "ConfigError" in capsys.readouterr().err


def test_quickstart_end_to_end(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FUTURESEG_OUT", str(tmp_path / "runs"))
    data = tmp_path / "data"
    assert main(["synth", "--config", str(QUICK), "--n", "8", "--out", str(data)]) == 0
    manifest = data / "manifest.jsonl"
    assert len(manifest.read_text().splitlines()) == 8

    ofnet = tmp_path / "ofnet.ckpt"
    assert main(["train-flow", "--data", str(manifest), "--config", str(QUICK),
                 "--out", str(ofnet)]) == 0
    pre = tmp_path / "pre.ckpt"
    assert main(["train-mask", "--data", str(manifest), "--config", str(QUICK),
                 "--out", str(pre)]) == 0
    ft = tmp_path / "ft.ckpt"
    assert main(["train-mask", "--data", str(manifest), "--config", str(QUICK), "--stage",
                 "finetune", "--ofnet", str(ofnet), "--init", str(pre), "--epochs", "1",
                 "--out", str(ft)]) == 0

    past = data / "seq_000000"
    roll = tmp_path / "roll"
    assert main(["rollout", "--ckpt", str(ofnet), "--past", str(past), "--n", "3",
                 "--out", str(roll)]) == 0
    assert len(list(roll.glob("*.flo"))) == 3

    capsys.readouterr()
    assert main(["experiment", "--config", str(QUICK)]) == 0
    mean = json.loads(capsys.readouterr().out)
    assert {"ap", "ap50", "iou"} <= set(mean)
    report = tmp_path / "runs" / "quickstart" / "report.json"
    assert report.exists() and (report.parent / "pr_curve.png").exists()

    assert main(["baseline", "--config", str(QUICK), "--method", "copy",
                 "--out", str(tmp_path / "copy")]) == 0
    assert main(["report", "--report", str(report), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.txt").read_text().strip()
