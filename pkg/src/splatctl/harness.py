"""Training loop, lambda sweep, evaluation and checkpoint diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import control
from .core import GaussianSet
from .io.config import RunConfig, format_config
from .io.dataset import Dataset, EmptyDatasetError, init_gaussians, load_dataset, scene_extent
from .io.ply import export_ply, import_ply
from .io.synth import synth_scene
from .loss import psnr, ssim, total_loss
from .optim import OptimState, adam_step, group_learning_rates, maybe_promote_sh, sync_topology
from .render import RasterSettings, rasterize_backward, rasterize_forward, render

log = logging.getLogger(__name__)

HIST_BINS = 64
EVENT_FIELDS = ["iteration", "event", "n_removed", "n_gaussians", "lambda_alpha", "min_opacity"]
CHECKPOINT_FIELDS = ["iteration", "n_gaussians", "loss", "mean_scale", "mean_opacity"]
TRACE_FIELDS = ["iteration", "n_gaussians", "loss", "rgb_loss", "lambda_alpha", "mean_opacity"]
SWEEP_FIELDS = ["lambda_alpha", "final_count", "test_psnr", "test_ssim", "wall_s"]


def opacity_histogram(gaussians: GaussianSet, bins: int = HIST_BINS) -> np.ndarray:
    counts, _ = np.histogram(gaussians.opacities, bins=bins, range=(0.0, 1.0))
    return counts


def mean_scale(gaussians: GaussianSet) -> float:
    return float(np.mean(np.exp(gaussians.log_scales))) if len(gaussians) else 0.0


def mean_opacity(gaussians: GaussianSet) -> float:
    return float(np.mean(gaussians.opacities)) if len(gaussians) else 0.0


@dataclass
class TrainResult:
    gaussians: GaussianSet
    metrics: dict
    events: list[dict]
    checkpoints: list[dict]
    histograms: list[tuple[int, np.ndarray]]
    trace: list[dict]
    collapsed: bool = False
    shutoff_iteration: int | None = None


def get_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset, prefer_raw=cfg.prefer_raw)
    return synth_scene(cfg.synth_k, cfg.seed, cfg.synth_views, cfg.synth_resolution)[1]


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def evaluate(gaussians: GaussianSet, dataset: Dataset, indices=None, settings: RasterSettings | None = None) -> dict:
    """Per-view and mean PSNR/SSIM over ``indices`` (default: the test split)."""
    settings = settings or RasterSettings()
    indices = dataset.test_indices if indices is None else list(indices)
    views = []
    for i in indices:
        cam, target = dataset.cameras[i], dataset.images[i]
        if target.shape != (cam.height, cam.width, 3):
            raise ValueError(f"view {i}: image shape {target.shape} does not match camera")
        image = render(gaussians, cam, settings)
        views.append({"view": i, "psnr": psnr(image, target), "ssim": ssim(image, target)})
    return {
        "views": views,
        "psnr": float(np.mean([v["psnr"] for v in views])) if views else float("nan"),
        "ssim": float(np.mean([v["ssim"] for v in views])) if views else float("nan"),
        "count": len(gaussians),
    }


def train(cfg: RunConfig, dataset: Dataset | None = None) -> TrainResult:
    """Run the full optimize / prune / split schedule for ``cfg.t_max`` iterations.

    Outputs go to ``cfg.out_dir`` when set. A run whose Gaussians are all
    pruned stops early and is reported with ``collapsed=True``.
    """
    dataset = dataset if dataset is not None else get_dataset(cfg)
    if len(dataset) == 0 or not dataset.train_indices:
        raise EmptyDatasetError("dataset has no training views")
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg))
        if cfg.save_checkpoints:
            (out / "checkpoints").mkdir(exist_ok=True)

    view_rng = np.random.default_rng([cfg.seed, 0])
    split_rng = np.random.default_rng([cfg.seed, 1])
    gaussians = init_gaussians(
        dataset.init_points, dataset.init_colors, cfg.n_random_fallback, cfg.seed, cfg.max_sh_degree
    )
    settings = cfg.raster_settings()
    loss_cfg = cfg.loss_config()
    ctrl_cfg = cfg.control_config(len(gaussians))
    optim_cfg = cfg.optim_config()
    extent = scene_extent(dataset.cameras)
    state = control.ControlState(lambda_alpha=cfg.lambda_alpha)
    opt = OptimState.for_gaussians(gaussians)
    train_idx = np.array(dataset.train_indices)

    events: list[dict] = []
    checkpoints: list[dict] = []
    histograms: list[tuple[int, np.ndarray]] = []
    trace: list[dict] = []
    collapsed = False
    shutoff = None
    last_loss = float("nan")
    start = time.perf_counter()

    def checkpoint(t: int) -> None:
        checkpoints.append(
            {
                "iteration": t,
                "n_gaussians": len(gaussians),
                "loss": last_loss,
                "mean_scale": mean_scale(gaussians),
                "mean_opacity": mean_opacity(gaussians),
            }
        )
        histograms.append((t, opacity_histogram(gaussians)))
        if out and cfg.save_checkpoints:
            export_ply(gaussians, out / "checkpoints" / f"iter_{t:06d}.ply")

    t_end = cfg.t_max
    for t in range(cfg.t_max):
        if len(gaussians) == 0:
            t_end = t
            break
        view = int(train_idx[view_rng.integers(len(train_idx))])
        cam, target = dataset.cameras[view], dataset.images[view]
        loss_cfg.lambda_alpha = state.live_lambda_alpha
        buffers = rasterize_forward(gaussians, cam, settings)
        res = total_loss(buffers.image, target, gaussians, loss_cfg)
        grads = rasterize_backward(buffers, res.d_image)
        grads["opacity_logits"] = grads["opacity_logits"] + res.d_opacity_logits
        lrs = group_learning_rates(optim_cfg, t, cfg.t_max, extent)
        adam_step(gaussians, grads, opt, lrs, optim_cfg)
        maybe_promote_sh(gaussians, t, optim_cfg)
        last_loss = res.total

        for ev in control.step(state, ctrl_cfg, gaussians, split_rng):
            if ev.edit is not None:
                sync_topology(opt, ev.edit)
            if ev.kind == "lambda_disabled":
                shutoff = ev.iteration
            events.append(
                {
                    "iteration": ev.iteration,
                    "event": ev.kind,
                    "n_removed": ev.n_removed,
                    "n_gaussians": ev.n_gaussians,
                    "lambda_alpha": ev.lambda_alpha,
                    "round_complete": ev.round_complete,
                    "min_opacity": ev.min_opacity,
                }
            )
        trace.append(
            {
                "iteration": t,
                "n_gaussians": len(gaussians),
                "loss": res.total,
                "rgb_loss": res.rgb,
                "lambda_alpha": state.live_lambda_alpha,
                "mean_opacity": mean_opacity(gaussians),
            }
        )
        if t % cfg.checkpoint_interval == 0:
            checkpoint(t)
    checkpoint(t_end)

    if len(gaussians) == 0:
        collapsed = True
    wall = time.perf_counter() - start
    test = evaluate(gaussians, dataset, settings=settings)
    train_metrics = evaluate(gaussians, dataset, dataset.train_indices, settings)
    metrics = {
        "lambda_alpha": cfg.lambda_alpha,
        "final_count": len(gaussians),
        "test_psnr": test["psnr"],
        "test_ssim": test["ssim"],
        "train_psnr": train_metrics["psnr"],
        "train_ssim": train_metrics["ssim"],
        "n_split_rounds": state.n_split,
        "shutoff_iteration": shutoff,
        "collapsed": collapsed,
        "wall_s": wall,
    }
    if collapsed:
        log.warning("run collapsed: every Gaussian was pruned")
    if out:
        export_ply(gaussians, out / "final.ply")
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
        _write_csv(out / "events.csv", EVENT_FIELDS, events)
        _write_csv(out / "checkpoints.csv", CHECKPOINT_FIELDS, checkpoints)
        _write_csv(out / "trace.csv", TRACE_FIELDS, trace)
        _write_histograms(out / "opacity_hist.csv", histograms)
    return TrainResult(gaussians, metrics, events, checkpoints, histograms, trace, collapsed, shutoff)


def _write_histograms(path: Path, histograms: list[tuple[int, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "n_gaussians"] + [f"bin_{i:02d}" for i in range(HIST_BINS)])
        for t, counts in histograms:
            writer.writerow([t, int(counts.sum())] + [int(c) for c in counts])


@dataclass
class SweepRecord:
    lambda_alpha: float
    final_count: int
    test_psnr: float
    test_ssim: float
    train_psnr: float
    train_ssim: float
    wall_s: float
    collapsed: bool = False
    failed: bool = False
    error: str = ""
    checkpoints: list[dict] = field(default_factory=list)


def sweep(cfg: RunConfig, lambda_grid, dataset: Dataset | None = None, keep_results: bool = False):
    """Train once per lambda on identical data and seed.

    Returns ``(records, report)``, plus the raw :class:`TrainResult` list when
    ``keep_results`` is set. Failed runs are flagged and the sweep moves on.
    """
    grid = [float(x) for x in lambda_grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    dataset = dataset if dataset is not None else get_dataset(cfg)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    records, results = [], []
    for lam in grid:
        run_dir = str(out / f"lambda_{lam:.3e}") if out else None
        run_cfg = cfg.replace(lambda_alpha=lam, out_dir=run_dir)
        start = time.perf_counter()
        try:
            res = train(run_cfg, dataset)
        except Exception as exc:  # noqa: BLE001 - one bad point must not stop the sweep
            log.exception("sweep point lambda=%g failed", lam)
            records.append(
                SweepRecord(lam, 0, float("nan"), float("nan"), float("nan"), float("nan"),
                            time.perf_counter() - start, failed=True, error=repr(exc))
            )
            results.append(None)
            continue
        m = res.metrics
        records.append(
            SweepRecord(
                lam, m["final_count"], m["test_psnr"], m["test_ssim"], m["train_psnr"], m["train_ssim"],
                time.perf_counter() - start, collapsed=res.collapsed, checkpoints=res.checkpoints,
            )
        )
        results.append(res)
        log.info("lambda=%g count=%d psnr=%.2f", lam, m["final_count"], m["test_psnr"])
    report = monotonicity_report(records)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sweep.csv", SWEEP_FIELDS, [asdict(r) for r in records])
        _write_csv(out / "curve.csv", ["final_count", "test_psnr", "lambda_alpha", "phase"], label_phases(records))
        (out / "monotonicity.json").write_text(json.dumps(report, indent=2))
    if keep_results:
        return records, report, results
    return records, report


def monotonicity_report(records: list[SweepRecord]) -> dict:
    ok = [r for r in records if not r.failed]
    pairs = []
    for a, b in zip(ok, ok[1:]):
        pairs.append(
            {
                "lambda_lo": a.lambda_alpha,
                "lambda_hi": b.lambda_alpha,
                "count_lo": a.final_count,
                "count_hi": b.final_count,
                "nonincreasing": b.final_count <= a.final_count,
            }
        )
    return {"pairs": pairs, "monotone": all(p["nonincreasing"] for p in pairs), "failed_runs": len(records) - len(ok)}


def label_phases(records: list[SweepRecord], steep: float = 2.0, drop: float = 3.0) -> list[dict]:
    """Heuristic four-phase labels along the count/PSNR curve.

    Points more than ``drop`` dB below the best PSNR are underfitting (A);
    past the best point a falling curve is overfitting (D); otherwise a slope
    of at least ``steep`` dB per decade of count is the efficient regime (B)
    and anything flatter is saturation (C).
    """
    pts = sorted((r for r in records if not r.failed and r.final_count > 0), key=lambda r: r.final_count)
    if not pts:
        return []
    best = max(range(len(pts)), key=lambda i: pts[i].test_psnr)
    best_psnr = pts[best].test_psnr
    rows = []
    for i, r in enumerate(pts):
        if i > 0 and pts[i].final_count > pts[i - 1].final_count:
            slope = (r.test_psnr - pts[i - 1].test_psnr) / math.log10(pts[i].final_count / pts[i - 1].final_count)
        else:
            slope = math.inf
        if r.test_psnr < best_psnr - drop:
            phase = "A"
        elif i > best and r.test_psnr < best_psnr:
            phase = "D"
        elif slope >= steep:
            phase = "B"
        else:
            phase = "C"
        rows.append({"final_count": r.final_count, "test_psnr": r.test_psnr, "lambda_alpha": r.lambda_alpha, "phase": phase})
    return rows


def eval_model(model_path, dataset: Dataset) -> dict:
    gaussians = import_ply(model_path)
    return evaluate(gaussians, dataset)


_ITER_RE = re.compile(r"iter_(\d+)\.ply$")


def diagnostics(checkpoint_dir, out_dir=None) -> tuple[list[list], list[dict]]:
    """Opacity histograms and mean activated scale for every saved checkpoint."""
    ckpt = Path(checkpoint_dir)
    if (ckpt / "checkpoints").is_dir():
        ckpt = ckpt / "checkpoints"
    files = sorted(p for p in ckpt.glob("iter_*.ply") if _ITER_RE.search(p.name)) if ckpt.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no checkpoints in {checkpoint_dir}")
    hist_rows, size_rows = [], []
    for path in files:
        t = int(_ITER_RE.search(path.name).group(1))
        g = import_ply(path)
        counts = opacity_histogram(g)
        hist_rows.append([t, len(g)] + [int(c) for c in counts])
        size_rows.append({"iteration": t, "n_gaussians": len(g), "mean_scale": mean_scale(g)})
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "opacity_hist.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "n_gaussians"] + [f"bin_{i:02d}" for i in range(HIST_BINS)])
            writer.writerows(hist_rows)
        _write_csv(out / "size_evolution.csv", ["iteration", "n_gaussians", "mean_scale"], size_rows)
    return hist_rows, size_rows
