import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from becnet.cli import main
from becnet.experiment import p_keep_from_erase

FIXTURE = Path(__file__).parent / "fixtures" / "pairs64.txt"
TINY = ["--d-model", "16", "--heads", "2", "--layers", "1", "--ffn", "32", "--batch-size", "16", "--warmup", "20"]


def run(args, code=0):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert res.exit_code == code, res.output
    return res


def test_verify_identity_channel():
    doc = json.loads(run(["verify", "--d", 64, "--M", 8, "--p-keep", 1, "--trials", 500]).output)
    assert doc["mc_flip_rate"] == 0 and doc["pass"]


def test_verify_exact(tmp_path):
    out = tmp_path / "v.json"
    run(["verify", "--d", 8, "--M", 4, "--p-keep", 0.7, "--q-dist", "gaussian", "--trials", 4000, "--exact",
         "--out", out])
    doc = json.loads(out.read_text())
    assert 0 <= doc["exact_conditional_flip_rate"] <= 1
    manifest = json.loads((tmp_path / "v.manifest.json").read_text())
    assert "v.json" in manifest["outputs"]


def test_verify_guaranteed_cell_passes():
    res = run(["verify", "--d", 2048, "--M", 4, "--p-keep", 0.95, "--v-dist", "planted", "--cosine", 0.9,
               "--trials", 4000])
    doc = json.loads(res.output)
    assert doc["guaranteed"] and doc["pass"]


@pytest.mark.parametrize("args", [["--p-keep", "0"], ["--p-keep", "1.5"], ["--M", "1"], ["--d", "40", "--exact"],
                                  ["--q-dist", "cauchy"]])
def test_verify_usage_errors(args):
    run(["verify", *args], code=2)


def test_calibrate_deterministic(tmp_path):
    grid = "d=16,64;M=4;p=0.5;q=uniform,powerlaw"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(["calibrate", "--grid", grid, "--trials", 1000, "--out", a])
    run(["calibrate", "--grid", grid, "--trials", 1000, "--out", b, "--workers", 3])
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.json"
    run(["calibrate", "--grid", grid, "--trials", 1000, "--out", c, "--quantile", 0.99])
    assert json.loads(a.read_text())["C"] <= json.loads(c.read_text())["C"]


def test_calibrate_bad_grid(tmp_path):
    run(["calibrate", "--grid", "d=4", "--out", tmp_path / "x.json"], code=2)


def test_train_outputs_and_determinism(tmp_path):
    args = ["train", "--data", FIXTURE, "--epochs", 2, *TINY, "--channel-mode", "random", "--p-erase", 0.2]
    run([*args, "--out-dir", tmp_path / "a"])
    run([*args, "--out-dir", tmp_path / "b"])
    for name in ("metrics.csv", "model.ckpt", "src_vocab.txt", "tgt_vocab.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "metrics.csv").open()))
    assert [(r["epoch"], r["split"]) for r in rows] == [("1", "train"), ("1", "val"), ("2", "train"), ("2", "val")]
    assert rows[-1]["bleu"] != "" and rows[0]["bleu"] == ""
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["p_erase"] == 0.2 and manifest["config"]["p_keep"] == 0.8
    assert set(manifest["outputs"]) == {"metrics.csv", "model.ckpt", "src_vocab.txt", "tgt_vocab.txt"}


def test_train_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data={FIXTURE}\nepochs=1\nd-model=16\nheads=2\nlayers=1\nffn=32\n# comment\n", encoding="utf-8")
    run(["train", "--config", cfg, "--out-dir", tmp_path / "o"])
    assert (tmp_path / "o" / "metrics.csv").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n", encoding="utf-8")
    run(["train", "--config", bad, "--out-dir", tmp_path / "p"], code=2)


def test_train_flag_conflicts(tmp_path):
    run(["train", "--data", FIXTURE, "--p-erase", 0.3, "--out-dir", tmp_path], code=2)
    run(["train", "--data", FIXTURE, "--channel-mode", "random", "--cutoff", 0.3, "--out-dir", tmp_path], code=2)


def test_train_missing_corpus(tmp_path):
    run(["train", "--data", tmp_path / "nope.txt", "--out-dir", tmp_path], code=2)


def test_sweep_single_baseline_row(tmp_path):
    res = run(["sweep", "--data", FIXTURE, "--epochs", 1, *TINY, "--p-list", "0.0", "--awgn", "off",
               "--out-dir", tmp_path])
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert len(rows) == 1
    assert float(rows[0]["pct_drop_acc"]) == 0 and float(rows[0]["pct_drop_bleu"]) == 0
    svg = (tmp_path / "sweep_val_accuracy.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert "p=0.00" in res.output


def test_sweep_parallel_cells_match_sequential(tmp_path):
    common = ["sweep", "--data", FIXTURE, "--epochs", 1, *TINY, "--p-list", "0.0,0.5", "--awgn", "both"]
    run([*common, "--out-dir", tmp_path / "seq"])
    run([*common, "--out-dir", tmp_path / "par", "--parallel-cells", 2])
    assert (tmp_path / "seq" / "sweep.csv").read_bytes() == (tmp_path / "par" / "sweep.csv").read_bytes()


def test_sweep_failed_cell_exits_1(tmp_path, monkeypatch):
    import becnet.experiment as ex

    real = ex.train_run

    def flaky(spec, out_dir=None, data=None):
        if spec.p_erase == 0.5:
            raise RuntimeError("boom")
        return real(spec, out_dir, data)

    monkeypatch.setattr(ex, "train_run", flaky)
    run(["sweep", "--data", FIXTURE, "--epochs", 1, *TINY, "--p-list", "0,0.5", "--awgn", "off",
         "--out-dir", tmp_path], code=1)
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert rows[1]["status"].startswith("failed")


def test_sweep_bad_p_list(tmp_path):
    run(["sweep", "--data", FIXTURE, "--p-list", "0,1.5", "--out-dir", tmp_path], code=2)


def test_export_attention_cli(tmp_path):
    run(["train", "--data", FIXTURE, "--epochs", 1, *TINY, "--layers", 2, "--out-dir", tmp_path / "run"])
    args = ["export-attention", "--checkpoint", tmp_path / "run" / "model.ckpt", "--sentence", "tu regardes ton sac ."]
    run([*args, "--out-dir", tmp_path / "a"])
    run([*args, "--out-dir", tmp_path / "b"])
    files = sorted((tmp_path / "a").glob("attention_*.csv"))
    assert len(files) == 2 * 2
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        rows = list(csv.reader(f.open()))
        for r in rows[1:]:
            assert abs(sum(float(x) for x in r[1:]) - 1) <= 1e-5


def test_make_corpus(tmp_path):
    out = tmp_path / "c.txt"
    run(["make-corpus", "--pairs", 50, "--out", out])
    assert len(out.read_text().splitlines()) == 50


def test_p_erase_conversion():
    assert p_keep_from_erase(0.2) == 0.8
    with pytest.raises(ValueError):
        p_keep_from_erase(-0.1)


def test_tiny_fixture_learns(tmp_path):
    # 64 pairs need small batches so the warmup schedule actually ramps up within 30 epochs
    run(["train", "--data", FIXTURE, "--epochs", 30, "--batch-size", 8, "--warmup", 40, "--out-dir", tmp_path])
    rows = [r for r in csv.DictReader((tmp_path / "metrics.csv").open()) if r["split"] == "train"]
    assert float(rows[-1]["accuracy"]) > 0.9
