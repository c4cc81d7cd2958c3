"""End-to-end command-line behavior on a small synthetic workspace."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from hmlc import autodiff as ad
from hmlc.checkpoint import load_checkpoint
from hmlc.cli import _build_model, _restore_model, main
from hmlc.config import load_run_config
from hmlc.hierarchy import load_hierarchy
from hmlc.corpus import load_corpus
from hmlc.model import total_loss, train

BASE_INI = """\
[paths]
hierarchy = {data}/hierarchy.tsv
train = {data}/train.jsonl
test = {data}/test.jsonl

[encoder]
vocab_buckets = 64
d = 8
heads = 2
max_tokens = 8

[model]
head_hidden = 8
cross_heads = 2

[run]
seed = 5
{run_extra}
[train]
epochs = {epochs}
batch_size = 8
lr = 0.005

[hmcl]
strategy = all
repeats_per_level = 1, 2, 2
batch_size = 4
lr = 0.001
max_batches = 3
proj_hidden = 8
proj_dim = 8
"""


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Generated data, a pretrained encoder, and two identical training runs."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-synthetic", "--out", str(data), "--seed", "5",
                 "--n-train", "48", "--n-val", "0", "--n-test", "16"]) == 0

    def write_ini(name, epochs=2, run_extra=""):
        path = root / name
        path.write_text(BASE_INI.format(data=data, epochs=epochs,
                                        run_extra=run_extra))
        return path

    ini = write_ini("run.ini")
    ini_quick = write_ini("quick.ini", epochs=1)
    ini_f64 = write_ini("f64.ini", epochs=1, run_extra="precision = f64\n")
    ini_wide = root / "wide.ini"
    ini_wide.write_text(BASE_INI.format(data=data, epochs=1, run_extra="")
                        .replace("d = 8", "d = 16"))

    pre = root / "pre"
    assert main(["pretrain", "--config", str(ini), "--out", str(pre)]) == 0
    tr1, tr1b = root / "tr1", root / "tr1b"
    for out in (tr1, tr1b):
        assert main(["train", "--config", str(ini), "--out", str(out),
                     "--init-checkpoint", str(pre / "encoder.ckpt")]) == 0
    return {"root": root, "data": data, "ini": ini, "ini_quick": ini_quick,
            "ini_f64": ini_f64, "ini_wide": ini_wide, "pre": pre,
            "tr1": tr1, "tr1b": tr1b}


# ------------------------------------------------------------ gen-synthetic


def test_gen_synthetic_artifacts(ws):
    data = ws["data"]
    h = load_hierarchy(data / "hierarchy.tsv")
    assert h.m == 10 and h.depth == 3
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert set(manifest["splits"]) == {"train", "test"}  # n-val 0 omitted
    assert manifest["splits"]["train"]["n"] == 48
    assert len((data / "train.jsonl").read_text().splitlines()) == 48
    assert len((data / "test.jsonl").read_text().splitlines()) == 16
    assert not (data / "val.jsonl").exists()
    corpus = load_corpus(data / "train.jsonl", h)
    assert len(corpus) == 48


def test_gen_synthetic_deterministic(ws, tmp_path):
    again = tmp_path / "again"
    assert main(["gen-synthetic", "--out", str(again), "--seed", "5",
                 "--n-train", "48", "--n-val", "0", "--n-test", "16"]) == 0
    for name in ("hierarchy.tsv", "train.jsonl", "test.jsonl", "manifest.json"):
        assert (again / name).read_bytes() == (ws["data"] / name).read_bytes()


def test_gen_synthetic_seed_changes_corpus(ws, tmp_path):
    other = tmp_path / "other"
    assert main(["gen-synthetic", "--out", str(other), "--seed", "6",
                 "--n-train", "48", "--n-val", "0", "--n-test", "16"]) == 0
    assert (other / "train.jsonl").read_bytes() != (ws["data"] / "train.jsonl").read_bytes()


def test_gen_synthetic_requires_seed(tmp_path, capsys):
    assert main(["gen-synthetic", "--out", str(tmp_path / "x")]) == 2
    assert "seed" in capsys.readouterr().err


# ----------------------------------------------------------------- pretrain


def test_pretrain_artifacts(ws):
    pre = ws["pre"]
    diag = json.loads((pre / "pretrain_diagnostics.json").read_text())
    assert diag["strategy"] == "all"
    assert diag["steps"] == 3
    assert diag["final_objective"] >= 0.0
    for key in ("alignment_before", "alignment_after",
                "uniformity_before", "uniformity_after"):
        assert isinstance(diag[key], float)
    arrays, header = load_checkpoint(pre / "encoder.ckpt")
    assert header["meta"]["kind"] == "encoder"
    assert set(header["meta"]["scope"]) == {"hierarchy", "encoder", "precision"}
    assert all(name.startswith("encoder.") for name in arrays)
    config = json.loads((pre / "config.json").read_text())
    assert (pre / "run.log").exists()
    assert config["config"]["seed"] == 5


def test_pretrain_stdout_mode(ws, capsys):
    assert main(["pretrain", "--config", str(ws["ini"])]) == 0
    diag = json.loads(capsys.readouterr().out)
    assert diag["steps"] == 3


def test_pretrain_requires_config(capsys):
    assert main(["pretrain"]) == 2
    assert "--config" in capsys.readouterr().err


# -------------------------------------------------------------------- train


def test_train_artifacts(ws):
    tr1 = ws["tr1"]
    summary = json.loads((tr1 / "summary.json").read_text())
    assert summary["init"] == "pretrained"
    assert summary["epochs_run"] == 2
    history = [json.loads(line) for line in
               (tr1 / "history.jsonl").read_text().splitlines()]
    assert len(history) == 2
    assert [h["epoch"] for h in history] == [1, 2]
    assert summary["final"] == history[-1]
    _, header = load_checkpoint(tr1 / "model.ckpt")
    assert header["meta"]["kind"] == "model"
    assert header["meta"]["init"] == "pretrained"
    assert set(header["meta"]["scope"]) == {
        "hierarchy", "encoder", "precision", "model"}


def test_train_byte_identical_reruns(ws):
    # distinct --out dirs: every artifact except the out path itself matches
    for name in ("model.ckpt", "history.jsonl"):
        assert (ws["tr1"] / name).read_bytes() == (ws["tr1b"] / name).read_bytes()
    summaries = []
    configs = []
    for out in (ws["tr1"], ws["tr1b"]):
        summary = json.loads((out / "summary.json").read_text())
        summary.pop("config_hash")  # covers the out path, differs by design
        summaries.append(summary)
        config = json.loads((out / "config.json").read_text())
        config["config"].pop("out")
        config.pop("hash")
        configs.append(config)
    assert summaries[0] == summaries[1]
    assert configs[0] == configs[1]


def test_train_random_init(ws, tmp_path):
    out = tmp_path / "rand"
    assert main(["train", "--config", str(ws["ini_quick"]), "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["init"] == "random"


def test_train_f64_precision(ws, tmp_path):
    out = tmp_path / "wide"
    assert main(["train", "--config", str(ws["ini_f64"]), "--out", str(out)]) == 0
    _, header = load_checkpoint(out / "model.ckpt")
    assert {e["dtype"] for e in header["arrays"]} == {"<f8"}
    assert header["meta"]["scope"]["precision"] == "f64"


def test_init_checkpoint_scope_mismatch(ws, tmp_path, capsys):
    rc = main(["train", "--config", str(ws["ini_wide"]), "--out",
               str(tmp_path / "x"), "--init-checkpoint",
               str(ws["pre"] / "encoder.ckpt")])
    assert rc == 3
    assert "configuration" in capsys.readouterr().err


def test_resume_precision_mismatch(ws, tmp_path):
    rc = main(["train", "--config", str(ws["ini_f64"]), "--out",
               str(tmp_path / "x"), "--resume", str(ws["tr1"] / "model.ckpt")])
    assert rc == 3


def test_resume_runs(ws, tmp_path):
    out = tmp_path / "resumed"
    assert main(["train", "--config", str(ws["ini_quick"]), "--out", str(out),
                 "--resume", str(ws["tr1"] / "model.ckpt")]) == 0
    assert json.loads((out / "summary.json").read_text())["init"] == "resume"


def test_checkpoint_restores_training_state(ws):
    # retrace the CLI run in process and compare against the restored model
    cfg = load_run_config(ws["ini"])
    ad.set_default_dtype(cfg.precision)
    h = load_hierarchy(cfg.hierarchy_path)
    corpus = load_corpus(cfg.train_path, h, fields=cfg.encoder.fields)
    model = _build_model(cfg, h)
    enc_arrays, _ = load_checkpoint(ws["pre"] / "encoder.ckpt")
    for name, arr in enc_arrays.items():
        model.encoder.named("encoder")[name].data = arr.astype(ad.default_dtype())
    train(corpus, model, cfg.train, cfg.loss)

    restored, _ = _restore_model(ws["tr1"] / "model.ckpt")
    named = restored.named()
    for name, tensor in model.named().items():
        assert np.array_equal(tensor.data, named[name].data), name
    batch = list(corpus.records[:4])
    a = total_loss(batch, model, cfg.loss).item()
    b = total_loss(batch, restored, cfg.loss).item()
    assert abs(a - b) <= 1e-6


# --------------------------------------------------------------------- eval


def test_eval_artifacts(ws, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--config", str(ws["ini"]), "--checkpoint",
                 str(ws["tr1"] / "model.ckpt"), "--out", str(out)]) == 0
    payload = json.loads((out / "eval.json").read_text())
    assert payload["split"] == "test"
    assert payload["threshold"] == 0.5
    for block in ("raw", "repaired"):
        assert 0.0 <= payload[block]["micro_f1"] <= 1.0
        assert "violations" in payload[block]
    assert payload["repaired"]["violations"] == 0


def test_eval_scores_ks(ws, tmp_path, capsys):
    scores = tmp_path / "scores.json"
    scores.write_text(json.dumps({"pos": [0.9, 0.4], "neg": [0.6, 0.1]}))
    assert main(["eval", "--config", str(ws["ini"]), "--checkpoint",
                 str(ws["tr1"] / "model.ckpt"), "--split", "train",
                 "--scores", str(scores)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["split"] == "train"
    assert payload["ks"]["ks_exhaustive"] == pytest.approx(0.5)
    assert payload["ks"]["ks"] <= 0.5


def test_eval_rejects_encoder_checkpoint(ws, capsys):
    rc = main(["eval", "--config", str(ws["ini"]), "--checkpoint",
               str(ws["pre"] / "encoder.ckpt")])
    assert rc == 2
    assert "not a model checkpoint" in capsys.readouterr().err


# -------------------------------------------------------------------- infer


def test_infer_predictions(ws, tmp_path):
    out1, out2 = tmp_path / "inf1", tmp_path / "inf2"
    for out in (out1, out2):
        assert main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
                     "--input", str(ws["data"] / "test.jsonl"),
                     "--out", str(out)]) == 0
    lines = (out1 / "predictions.jsonl").read_text().splitlines()
    assert len(lines) == 16
    h = load_hierarchy(ws["data"] / "hierarchy.tsv")
    for line in lines:
        obj = json.loads(line)
        assert set(obj) == {"id", "labels", "scores"}
        assert set(obj["labels"]) <= set(h.labels)
        assert set(obj["scores"]) == set(h.labels)
        assert all(0.0 < s < 1.0 for s in obj["scores"].values())
        for v in obj["labels"]:
            assert obj["scores"][v] >= 0.5
    assert (out1 / "predictions.jsonl").read_bytes() == \
        (out2 / "predictions.jsonl").read_bytes()


def test_infer_threshold_monotonicity(ws, capsys):
    # lowering the threshold can only grow each record's label set
    by_threshold = {}
    for t in ("0.5", "0.01"):
        assert main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
                     "--input", str(ws["data"] / "test.jsonl"),
                     "--threshold", t]) == 0
        lines = capsys.readouterr().out.splitlines()
        by_threshold[t] = {
            obj["id"]: set(obj["labels"])
            for obj in map(json.loads, lines)
        }
    for rid, labels in by_threshold["0.5"].items():
        assert labels <= by_threshold["0.01"][rid]


def test_infer_invalid_threshold(ws, capsys):
    rc = main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
               "--input", str(ws["data"] / "test.jsonl"),
               "--threshold", "0.0"])
    assert rc == 2
    assert "threshold" in capsys.readouterr().err


def test_infer_malformed_lines(ws, tmp_path, capsys):
    bad = tmp_path / "mixed.jsonl"
    bad.write_text("\n".join([
        json.dumps({"id": "ok", "fields": {"name": "alpha beta"}}),
        "{not json",
        json.dumps({"fields": {"name": "no id"}}),
        json.dumps({"id": "empty", "fields": {"name": "", "description": ""}}),
        json.dumps({"id": "nofields"}),
    ]) + "\n")
    out = tmp_path / "inf"
    assert main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
                 "--input", str(bad), "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert err.count("warning: skipped line") == 4
    lines = (out / "predictions.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["id"] == "ok"

    rc = main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
               "--input", str(bad), "--out", str(out), "--strict"])
    assert rc == 2


def test_infer_empty_input(ws, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["infer", "--checkpoint", str(ws["tr1"] / "model.ckpt"),
                 "--input", str(empty)]) == 0
    assert capsys.readouterr().out == ""


def test_infer_missing_checkpoint(ws, tmp_path, capsys):
    rc = main(["infer", "--checkpoint", str(tmp_path / "nope.ckpt"),
               "--input", str(ws["data"] / "test.jsonl")])
    assert rc == 2


# ------------------------------------------------------------- sample-audit


def _read_audit(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["strategy", "stage", "anchor_label", "negative_label", "count"]
    return {(r[2], r[3]): int(r[4]) for r in rows[1:]}


def test_sample_audit_label_frequencies(ws, tmp_path):
    hier = str(ws["data"] / "hierarchy.tsv")
    draws = 2000

    out = tmp_path / "all"
    assert main(["sample-audit", "--hierarchy", hier, "--seed", "1",
                 "--strategy", "all", "--draws", str(draws),
                 "--out", str(out)]) == 0
    counts = _read_audit(out / "label_stage.csv")
    # anchor Finance draws uniformly over its 5 eligible labels
    finance = {u: n for (v, u), n in counts.items() if v == "Finance"}
    assert set(finance) == {"Video", "Game", "Game-Moba", "Game-RPG", "Game-Strategy"}
    sigma = np.sqrt(draws * 0.2 * 0.8)
    for n in finance.values():
        assert abs(n - draws / 5) < 4 * sigma

    out = tmp_path / "level"
    assert main(["sample-audit", "--hierarchy", hier, "--seed", "1",
                 "--strategy", "level", "--draws", str(draws),
                 "--out", str(out)]) == 0
    counts = _read_audit(out / "label_stage.csv")
    finance = {u: n for (v, u), n in counts.items() if v == "Finance"}
    assert set(finance) == {"Video", "Game"}
    assert sum(finance.values()) == draws

    out = tmp_path / "sibling"
    assert main(["sample-audit", "--hierarchy", hier, "--seed", "1",
                 "--strategy", "sibling", "--draws", str(draws),
                 "--out", str(out)]) == 0
    counts = _read_audit(out / "label_stage.csv")
    assert counts[("Finance-Investment", "Finance-Loan")] == draws


def test_sample_audit_instance_stage(ws, tmp_path):
    out = tmp_path / "aud"
    assert main(["sample-audit", "--config", str(ws["ini"]),
                 "--strategy", "level", "--draws", "200",
                 "--out", str(out)]) == 0
    counts = _read_audit(out / "instance_stage.csv")
    assert sum(counts.values()) >= 200
    assert (out / "label_stage.csv").exists()


def test_sample_audit_stdout(ws, capsys):
    assert main(["sample-audit", "--hierarchy",
                 str(ws["data"] / "hierarchy.tsv"), "--seed", "2",
                 "--strategy", "sibling", "--draws", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines
    for line in lines:
        strategy, stage, v, u, n = line.split(",")
        assert strategy == "sibling" and stage == "label"
        assert int(n) > 0


def test_sample_audit_requires_inputs(capsys):
    assert main(["sample-audit"]) == 2
    assert main(["sample-audit", "--seed", "1"]) == 2
    err = capsys.readouterr().err
    assert "--config or --hierarchy" in err


def test_missing_hierarchy_path_fails_cleanly(ws, tmp_path, capsys):
    ini = tmp_path / "broken.ini"
    ini.write_text("[paths]\nhierarchy = {0}\ntrain = {1}\n[run]\nseed = 1\n"
                   .format(tmp_path / "absent.tsv", ws["data"] / "train.jsonl"))
    assert main(["train", "--config", str(ini)]) == 2
    assert "absent.tsv" in capsys.readouterr().err
