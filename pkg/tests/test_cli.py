import json
from pathlib import Path

import numpy as np
import pytest

from conceptdiff.cli import RunLock, main, montage, read_csv, read_pgm, write_csv, write_pgm


# ---------------------------------------------------------------------------
# plumbing units


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 256).reshape(16, 16)
    p = tmp_path / "x.pgm"
    write_pgm(p, img)
    back = read_pgm(p)
    assert back.shape == (16, 16)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(RuntimeError, match="not a binary PGM"):
        read_pgm(p)


def test_csv_round_trip_full_precision(tmp_path):
    rows = [[0.1 + 0.2, 1e-17], [np.pi, -3.0]]
    p = tmp_path / "x.csv"
    write_csv(p, ["a", "b"], rows)
    header, data = read_csv(p)
    assert header == ["a", "b"]
    assert np.array_equal(data, np.array(rows))  # bitwise via 17 sig digits


def test_montage_layout():
    tiles = [np.zeros((16, 16)) for _ in range(8)]
    groups = [(f"g{r}", tiles) for r in range(5)]
    canvas = montage(groups)
    assert canvas.shape == (5 * 16 + 4, 8 * 16 + 7)
    assert canvas[16, :].max() == 1.0  # separator row stays white
    with pytest.raises(RuntimeError, match="no samples"):
        montage([])


def test_run_lock(tmp_path):
    with RunLock(tmp_path):
        assert (tmp_path / ".lock").exists()
        with pytest.raises(RuntimeError, match="another process"):
            RunLock(tmp_path).__enter__()
    assert not (tmp_path / ".lock").exists()


# ---------------------------------------------------------------------------
# argument and config error paths


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["pretrain", "--sedd", "3"])
    assert e.value.code == 1


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    rc = main(["pretrain", "--seed", "3.5", "--out_dir", str(tmp_path / "r")])
    assert rc == 1
    assert "expected integer" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    rc = main(["discover", "--out_dir", str(tmp_path / "empty")])
    assert rc == 2
    assert "pretrain" in capsys.readouterr().err


def test_compose_concepts_parse_error(tmp_path):
    rc = main(["compose", "--concepts", "a,b", "--out_dir", str(tmp_path / "r")])
    assert rc == 1


# ---------------------------------------------------------------------------
# miniature end-to-end pipeline (gauss2d, tiny budgets)

FAST = [
    "--corpus_size", "300",
    "--pretrain_steps", "400",
    "--discover_iters", "200",
    "--infer_items", "20",
    "--infer_iters", "100",
    "--sampler_steps", "10",
    "--sample_count", "8",
]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    args = FAST + ["--out_dir", str(out)]
    assert main(["pretrain"] + args) == 0
    assert main(["discover"] + args) == 0
    assert main(["infer"] + args) == 0
    assert main(["sample"] + args) == 0
    assert main(["compose", "--concepts", "0,1"] + args) == 0
    assert main(["eval"] + args) == 0
    assert main(["report"] + args) == 0
    return out


def test_pipeline_artifacts(run_dir):
    for name in (
        "config.json",
        "denoiser.clcm",
        "pretrain_loss.csv",
        "discovery.clcm",
        "weights.csv",
        "labels.csv",
        "discovery_loss.csv",
        "weights_inferred.csv",
        "labels_inferred.csv",
        "metrics.json",
        "confusion.csv",
        "compose_report.json",
        "report.pgm",
        "summary.txt",
    ):
        assert (run_dir / name).is_file(), name
    assert (run_dir / "samples" / "concept_00.csv").is_file()
    assert (run_dir / "samples" / "composed_0_1.csv").is_file()
    assert not (run_dir / ".lock").exists()


def test_pipeline_weights_on_simplex(run_dir):
    _, w = read_csv(run_dir / "weights.csv")
    assert w.shape == (25, 5)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert w.min() >= 0.0


def test_pipeline_metrics_shape(run_dir):
    metrics = json.loads((run_dir / "metrics.json").read_text())
    for key in (
        "accuracy",
        "kl_to_uniform",
        "per_concept_counts",
        "kmeans_accuracy",
        "inferred_logreg_accuracy",
    ):
        assert key in metrics, key
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert sum(metrics["per_concept_counts"]) == 25


def test_summary_reproduces_metrics(run_dir):
    metrics = json.loads((run_dir / "metrics.json").read_text())
    summary = (run_dir / "summary.txt").read_text()
    for key, value in metrics.items():
        assert key in summary
        assert json.dumps(value, sort_keys=True) in summary


def test_report_montage_dimensions(run_dir):
    img = read_pgm(run_dir / "report.pgm")
    # 5 concepts + 1 composed row, 8 samples each, 16x16 tiles, 1-px gaps
    assert img.shape == (6 * 16 + 5, 8 * 16 + 7)


def test_pretrain_refuses_overwrite(run_dir, capsys):
    args = FAST + ["--out_dir", str(run_dir)]
    rc = main(["pretrain"] + args)
    assert rc == 2
    assert "--force" in capsys.readouterr().err


def test_compose_rejects_out_of_range_concept(run_dir, capsys):
    args = FAST + ["--out_dir", str(run_dir)]
    rc = main(["compose", "--concepts", "0,9"] + args)
    assert rc == 2
    assert "out of range" in capsys.readouterr().err


def test_discover_rerun_is_bitwise_identical(run_dir):
    before = (run_dir / "weights.csv").read_bytes()
    ckpt_before = (run_dir / "discovery.clcm").read_bytes()
    args = FAST + ["--out_dir", str(run_dir)]
    assert main(["discover"] + args) == 0
    assert (run_dir / "weights.csv").read_bytes() == before
    assert (run_dir / "discovery.clcm").read_bytes() == ckpt_before


def test_cl_seed_overrides(tmp_path, monkeypatch, capsys):
    out = tmp_path / "seeded"
    monkeypatch.setenv("CL_SEED", "nonsense")
    rc = main(["pretrain"] + FAST + ["--out_dir", str(out)])
    assert rc == 1  # env override goes through the same validation
    monkeypatch.delenv("CL_SEED")
