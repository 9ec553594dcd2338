"""Experiment runner: pretrain -> discover -> infer -> sample -> compose -> eval.

Every subcommand resolves one flat config (file + ``--key value`` overrides
+ CL_SEED), echoes it into the run directory as ``config.json``, and writes
its artifacts there.  All floats serialize at full precision so reruns with
an identical config are bitwise identical.  Exit codes: 0 success, 1 usage
error, 2 runtime or validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from conceptdiff.checkpoint import (
    CheckpointError,
    load_denoiser,
    load_discovery,
    save_denoiser,
    save_discovery,
)
from conceptdiff.config import ConfigError, RunConfig, data_dim, resolve_config
from conceptdiff.denoiser import ConditionalDenoiser
from conceptdiff.discovery import infer_weights, run_discovery
from conceptdiff.numerics.rng import RngStream
from conceptdiff.oracle import GaussianWorld, verify_composition
from conceptdiff.sampler import SamplerConfig, sample_composed
from conceptdiff.schedule import DiffusionSchedule
from conceptdiff.synthdata import gen_gauss2d, gen_glyphs, gen_pretrain_corpus


# ---------------------------------------------------------------------------
# small artifact helpers


def write_csv(path, header: list[str], rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
    return header, data


def write_pgm(path, img: np.ndarray):
    """Binary P5, maxval 255; input values are clipped from [0, 1]."""
    g = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    b = np.round(g * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{b.shape[1]} {b.shape[0]}\n255\n".encode("ascii"))
        f.write(b.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise RuntimeError(f"{path}: not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    w, h, maxval = (int(v) for v in fields)
    pix = np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return pix.reshape(h, w).astype(np.float64) / float(maxval)


class RunLock:
    """Single-writer guard for a run directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path} exists: another process is writing to this run "
                "directory (delete the lock file if that process is gone)"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _prepare(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return out


def _schedule(cfg: RunConfig) -> DiffusionSchedule:
    return DiffusionSchedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)


def _discovery_items(cfg: RunConfig):
    if cfg.domain == "gauss2d":
        return gen_gauss2d(seed=cfg.seed, k=cfg.k_true, n_per_class=cfg.n_per_class)
    return gen_glyphs(seed=cfg.seed, n_per_combo=cfg.n_per_class)


def _holdout_items(cfg: RunConfig):
    # fresh draw, disjoint stream from the discovery set
    if cfg.domain == "gauss2d":
        per = -(-cfg.infer_items // cfg.k_true)
        ds = gen_gauss2d(seed=cfg.seed + 1, k=cfg.k_true, n_per_class=per)
    else:
        per = -(-cfg.infer_items // 6)
        ds = gen_glyphs(seed=cfg.seed + 1, n_per_combo=per)
    return ds.items[: cfg.infer_items], ds.labels[: cfg.infer_items]


def _label_rows(labels: np.ndarray):
    if labels.ndim == 1:
        return ["label"], [[int(v)] for v in labels]
    return ["shape", "lighting"], [[int(a), int(b)] for a, b in labels]


def _load_denoiser(out: Path):
    path = out / "denoiser.clcm"
    if not path.is_file():
        raise RuntimeError(f"{path} not found: run the pretrain subcommand first")
    return load_denoiser(path)


def _load_library(out: Path) -> np.ndarray:
    path = out / "discovery.clcm"
    if not path.is_file():
        raise RuntimeError(f"{path} not found: run the discover subcommand first")
    library, _logits, _meta = load_discovery(path)
    return library


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    if (out / "denoiser.clcm").exists() and not args.force:
        raise RuntimeError(
            f"{out / 'denoiser.clcm'} already exists; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    with RunLock(out):
        _prepare(cfg)
        corpus = gen_pretrain_corpus(
            cfg.domain,
            cfg.corpus_size,
            seed=cfg.seed,
            k=cfg.k_true,
            p_uncond=cfg.p_uncond,
            embed_dim=cfg.embed_dim,
            vocab_std=cfg.vocab_std,
        )
        den = ConditionalDenoiser(
            data_dim=data_dim(cfg),
            embed_dim=cfg.embed_dim,
            hidden_width=cfg.hidden_width,
            hidden_layers=cfg.hidden_layers,
            time_dim=cfg.time_dim,
            rng=RngStream(cfg.seed, stream=7),
        )
        sched = _schedule(cfg)
        losses = den.pretrain(
            corpus,
            sched,
            steps=cfg.pretrain_steps,
            rng=RngStream(cfg.seed, stream=8),
            batch_size=cfg.pretrain_batch,
            lr=cfg.pretrain_lr,
            cond_scale=cfg.cond_scale(),
            desc_dropout=cfg.desc_dropout,
        )
        save_denoiser(
            out / "denoiser.clcm",
            den,
            sched,
            corpus.vocab,
            extra={"domain": cfg.domain, "seed": cfg.seed},
        )
        write_csv(
            out / "pretrain_loss.csv",
            ["step", "loss"],
            ((i, v) for i, v in enumerate(losses)),
        )
    print(f"pretrained {cfg.pretrain_steps} steps; final loss {losses[-1]:.5f}")
    return 0


def cmd_discover(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    with RunLock(out):
        den, sched, _vocab, _meta = _load_denoiser(out)
        ds = _discovery_items(cfg)
        state = run_discovery(
            ds.items,
            den,
            sched,
            k=cfg.k,
            iters=cfg.discover_iters,
            batch_size=cfg.discover_batch,
            seed=cfg.seed,
            mode=cfg.discover_mode,
            lr_library=cfg.lr_library,
            lr_logits=cfg.lr_logits,
        )
        save_discovery(out / "discovery.clcm", state, extra={"domain": cfg.domain})
        weights = state.weights()
        write_csv(
            out / "weights.csv",
            [f"concept_{j}" for j in range(cfg.k)],
            weights,
        )
        header, rows = _label_rows(ds.labels)
        write_csv(out / "labels.csv", header, rows)
        write_csv(
            out / "discovery_loss.csv",
            ["iteration", "loss"],
            ((i, v) for i, v in enumerate(state.loss_trace)),
        )
    print(f"discovered {cfg.k} concepts over {ds.items.shape[0]} items")
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    with RunLock(out):
        den, sched, _vocab, _meta = _load_denoiser(out)
        library = _load_library(out)
        items, labels = _holdout_items(cfg)
        weights = infer_weights(
            items, library, den, sched, iters=cfg.infer_iters, seed=cfg.seed
        )
        write_csv(
            out / "weights_inferred.csv",
            [f"concept_{j}" for j in range(library.shape[0])],
            weights,
        )
        header, rows = _label_rows(labels)
        write_csv(out / "labels_inferred.csv", header, rows)
    print(f"inferred weights for {items.shape[0]} held-out items")
    return 0


def _sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(
        kind=cfg.sampler_kind,
        steps=cfg.sampler_steps,
        guidance=cfg.guidance,
        count=cfg.sample_count,
        seed=cfg.seed,
        x0_clamp=cfg.clamp_range(),
    )


def _write_samples(out: Path, name: str, samples: np.ndarray, domain: str):
    sdir = out / "samples"
    sdir.mkdir(exist_ok=True)
    if domain == "glyphs":
        gdir = sdir / name
        gdir.mkdir(exist_ok=True)
        side = int(round(samples.shape[1] ** 0.5))
        for i, row in enumerate(samples):
            write_pgm(gdir / f"{i:03d}.pgm", row.reshape(side, side))
    else:
        write_csv(
            sdir / f"{name}.csv",
            [f"x{j}" for j in range(samples.shape[1])],
            samples,
        )


def cmd_sample(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    with RunLock(out):
        den, sched, _vocab, _meta = _load_denoiser(out)
        library = _load_library(out)
        scfg = _sampler_config(cfg)
        for j in range(library.shape[0]):
            samples = sample_composed(den, [library[j]], sched, scfg)
            _write_samples(out, f"concept_{j:02d}", samples, cfg.domain)
    print(f"wrote {library.shape[0]} x {cfg.sample_count} samples")
    return 0


def cmd_compose(cfg: RunConfig, args) -> int:
    try:
        indices = [int(v) for v in args.concepts.split(",")]
    except ValueError:
        print(f"error: --concepts expects e.g. '2,4', got {args.concepts!r}", file=sys.stderr)
        return 1
    out = _prepare(cfg)
    with RunLock(out):
        den, sched, _vocab, _meta = _load_denoiser(out)
        library = _load_library(out)
        for i in indices:
            if not 0 <= i < library.shape[0]:
                raise RuntimeError(
                    f"concept index {i} out of range (library has {library.shape[0]})"
                )
        scfg = _sampler_config(cfg)
        samples = sample_composed(den, [library[i] for i in indices], sched, scfg)
        name = "composed_" + "_".join(str(i) for i in indices)
        _write_samples(out, name, samples, cfg.domain)
        report: dict = {"concepts": indices, "count": int(samples.shape[0])}
        if cfg.domain == "glyphs":
            from conceptdiff.evaluation import build_detectors, detect_factors

            det = build_detectors(threshold=cfg.detector_threshold)
            shapes = []
            lights = []
            for row in samples:
                s, l = detect_factors(row, det)
                shapes.append(s)
                lights.append(l)
            report["shape_fire_rate"] = float(np.mean([s is not None for s in shapes]))
            report["light_fire_rate"] = float(np.mean([v is not None for v in lights]))
            report["shape_counts"] = {
                str(v): int(sum(s == v for s in shapes)) for v in (0, 1, 2)
            }
            report["light_counts"] = {
                str(v): int(sum(l == v for l in lights)) for v in (0, 1)
            }
        else:
            report["sample_mean"] = samples.mean(axis=0).tolist()
            report["sample_var"] = samples.var(axis=0).tolist()
        (out / "compose_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
    print(f"composed concepts {indices}: {samples.shape[0]} samples")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    from conceptdiff.evaluation import (
        confusion_matrix,
        factor_recovery_rate,
        fit_logreg,
        hungarian_accuracy,
        kl_to_uniform,
        kmeans_baseline,
        logreg_accuracy,
    )

    out = _prepare(cfg)
    with RunLock(out):
        for name in ("weights.csv", "labels.csv"):
            if not (out / name).is_file():
                raise RuntimeError(f"{out / name} not found: run discover first")
        _, weights = read_csv(out / "weights.csv")
        _, labels_raw = read_csv(out / "labels.csv")
        labels = labels_raw.astype(np.int64)
        flat_labels = (
            labels[:, 0] if labels.shape[1] == 1 else labels[:, 0] * 2 + labels[:, 1]
        )
        n_classes = int(flat_labels.max()) + 1
        assign = weights.argmax(axis=1)
        cm = confusion_matrix(assign, flat_labels, n_pred=weights.shape[1], n_true=n_classes)
        counts = np.bincount(assign, minlength=weights.shape[1])

        metrics: dict = {
            "accuracy": hungarian_accuracy(cm),
            "kl_to_uniform": kl_to_uniform(counts),
            "per_concept_counts": counts.tolist(),
        }
        ds = _discovery_items(cfg)
        km_assign, _, _ = kmeans_baseline(ds.items, k=cfg.k, seed=cfg.seed)
        km_cm = confusion_matrix(km_assign, flat_labels, n_pred=cfg.k, n_true=n_classes)
        metrics["kmeans_accuracy"] = hungarian_accuracy(km_cm)

        if cfg.domain == "glyphs":
            rate, mapping = factor_recovery_rate(weights, labels, 3, 2)
            metrics["factor_recovery"] = rate
            metrics["factor_mapping"] = {str(k): v for k, v in mapping.items()}

        if (out / "weights_inferred.csv").is_file():
            _, w_inf = read_csv(out / "weights_inferred.csv")
            _, lab_inf_raw = read_csv(out / "labels_inferred.csv")
            lab_inf = lab_inf_raw.astype(np.int64)
            flat_inf = (
                lab_inf[:, 0]
                if lab_inf.shape[1] == 1
                else lab_inf[:, 0] * 2 + lab_inf[:, 1]
            )
            model = fit_logreg(weights, flat_labels)
            metrics["inferred_logreg_accuracy"] = logreg_accuracy(model, w_inf, flat_inf)

        (out / "metrics.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n"
        )
        write_csv(
            out / "confusion.csv",
            [f"class_{c}" for c in range(n_classes)],
            cm,
        )
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_oracle_check(cfg: RunConfig, args) -> int:
    sched = _schedule(cfg)
    world = GaussianWorld(
        means=np.array([[-1.0], [3.0], [0.0]]),
        stds=np.array([1.0, 1.0, 2.0]),
    )
    report = {
        "conjunction_two_over_base": verify_composition(
            world, [0, 1], sched, n_samples=10_000, seed=cfg.seed
        ),
        "singleton_identity": verify_composition(
            world, [0], sched, n_samples=10_000, seed=cfg.seed
        ),
    }
    passed = all(r["passed"] for r in report.values())
    report["passed"] = passed
    out = _prepare(cfg)
    (out / "oracle.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"oracle checks {'passed' if passed else 'FAILED'}")
    return 0 if passed else 2


def _point_tile(xy: np.ndarray, bound: float = 6.0, side: int = 16) -> np.ndarray:
    """One sample point rendered as a bright spot on a dim canvas."""
    img = np.zeros((side, side))
    px = (np.clip(xy, -bound, bound) + bound) / (2 * bound) * (side - 1)
    cx, cy = int(round(px[0])), int(round((side - 1) - px[1]))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y, x = cy + dy, cx + dx
            if 0 <= y < side and 0 <= x < side:
                img[y, x] = 0.5 if (dy or dx) else 1.0
    return img


def _sample_groups(out: Path, domain: str):
    sdir = out / "samples"
    groups = []
    if domain == "glyphs":
        for gdir in sorted(d for d in sdir.iterdir() if d.is_dir()):
            tiles = [read_pgm(p) for p in sorted(gdir.glob("*.pgm"))]
            if tiles:
                groups.append((gdir.name, tiles))
    else:
        for csv_path in sorted(sdir.glob("*.csv")):
            _, rows = read_csv(csv_path)
            tiles = [_point_tile(r) for r in rows]
            if tiles:
                groups.append((csv_path.stem, tiles))
    return groups


def montage(groups, max_cols: int = 8) -> np.ndarray:
    """Rows of tiles with 1-px white separators."""
    if not groups:
        raise RuntimeError("no samples to montage")
    tile_h, tile_w = groups[0][1][0].shape
    cols = min(max_cols, max(len(tiles) for _, tiles in groups))
    rows = len(groups)
    h = rows * tile_h + (rows - 1)
    w = cols * tile_w + (cols - 1)
    canvas = np.ones((h, w))
    for r, (_, tiles) in enumerate(groups):
        for c, tile in enumerate(tiles[:cols]):
            y = r * (tile_h + 1)
            x = c * (tile_w + 1)
            canvas[y : y + tile_h, x : x + tile_w] = tile
    return canvas


def cmd_report(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    metrics_path = out / "metrics.json"
    if not metrics_path.is_file():
        raise RuntimeError(f"{metrics_path} not found: run eval first")
    if not (out / "samples").is_dir():
        raise RuntimeError(f"{out / 'samples'} not found: run sample first")
    groups = _sample_groups(out, cfg.domain)
    if not groups:
        raise RuntimeError(f"{out / 'samples'} is empty")
    write_pgm(out / "report.pgm", montage(groups))

    metrics = json.loads(metrics_path.read_text())
    lines = [f"run {out}", f"domain = {cfg.domain}", f"k = {cfg.k}", ""]
    width = max(len(k) for k in metrics)
    for key in sorted(metrics):
        lines.append(f"{key:<{width}}  {json.dumps(metrics[key], sort_keys=True)}")
    lines.append("")
    lines.append("sample groups: " + ", ".join(f"{n} ({len(t)})" for n, t in groups))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # the exit-code contract reserves 2 for runtime failures; argparse
    # defaults to 2 for usage errors, so remap those to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


COMMANDS = {
    "pretrain": cmd_pretrain,
    "discover": cmd_discover,
    "infer": cmd_infer,
    "sample": cmd_sample,
    "compose": cmd_compose,
    "eval": cmd_eval,
    "oracle-check": cmd_oracle_check,
    "report": cmd_report,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="conceptdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"{name} stage")
        sp.add_argument("--config", default=None, help="flat key = value config file")
        for field in dataclasses.fields(RunConfig):
            sp.add_argument(f"--{field.name}", default=None, metavar="V")
        if name == "pretrain":
            sp.add_argument("--force", action="store_true", help="overwrite an existing run")
        if name == "compose":
            sp.add_argument("--concepts", required=True, help="comma-separated concept indices")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name) is not None
    }
    try:
        cfg = resolve_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CheckpointError, RuntimeError, FloatingPointError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
