"""Metrics, single-thread CPU measurement, sweep running, Pareto export.

CPU cost is measured as process CPU time for one forward pass over a
one-second input window, including per-frame feature extraction, with BLAS
pinned to a single thread. The median over ``reps`` repetitions is the
headline number; p10/p90 capture dispersion.

Results CSV columns (stable order):
``model_kind,f_rgb,f_hp,macro_f1_action,macro_f1_verb,cpu_median_s,
cpu_p10_s,cpu_p90_s,seed,status``. Failed rows keep their configuration
columns and leave metric fields empty. Floats are written with ``repr`` so
a CSV round trip is lossless. The JSON export mirrors the same fields.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import models as M
from .errors import DivergenceError, MeasurementError, MetricError
from .sampling import RateConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "model_kind",
    "f_rgb",
    "f_hp",
    "macro_f1_action",
    "macro_f1_verb",
    "cpu_median_s",
    "cpu_p10_s",
    "cpu_p90_s",
    "seed",
    "status",
)


def macro_f1(predictions, labels, n_classes: int) -> float:
    """Unweighted mean F1 over classes present in labels or predictions.

    Per-class F1 = 2TP / (2TP + FP + FN), with 0/0 treated as 0. Classes
    absent from both vectors are excluded from the mean.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.size == 0 or labels.size == 0:
        raise MetricError("macro_f1 requires non-empty predictions and labels")
    if predictions.shape != labels.shape:
        raise MetricError(
            f"predictions and labels length mismatch: {predictions.shape} vs {labels.shape}"
        )
    for name, arr in (("predictions", predictions), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise MetricError(f"{name} contain values outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    present = denom > 0  # class appears in labels or predictions
    f1 = 2 * tp[present] / denom[present]
    # sequential sum in class order: order-independent of numpy's pairwise
    # reduction, so the value is reproducible down to the last bit
    total = 0.0
    for value in f1:
        total += value
    return total / len(f1)


@dataclass(frozen=True)
class CpuStats:
    median_cpu_seconds: float
    p10: float
    p90: float
    reps: int
    warmup: int
    thread_count: int = 1

    def __post_init__(self):
        if self.reps < 5:
            raise MeasurementError(f"need reps >= 5 for stable stats, got {self.reps}")
        if self.thread_count != 1:
            raise MeasurementError(
                f"CPU stats are only valid single-threaded, got {self.thread_count} threads"
            )
        if not self.p10 <= self.median_cpu_seconds <= self.p90:
            raise MeasurementError("percentiles out of order")

    def as_dict(self):
        return {
            "median_cpu_seconds": self.median_cpu_seconds,
            "p10": self.p10,
            "p90": self.p90,
            "reps": self.reps,
            "warmup": self.warmup,
            "thread_count": self.thread_count,
        }


@contextmanager
def single_thread():
    """Pin BLAS pools to one thread and verify the pin took effect."""
    with threadpool_limits(limits=1):
        for pool in threadpool_info():
            if pool.get("num_threads", 1) != 1:
                raise MeasurementError(
                    f"thread pool {pool.get('internal_api')} still reports "
                    f"{pool['num_threads']} threads"
                )
        yield


def validate_grid_point(kind: str, f_rgb: float, f_hp: float):
    """Model kinds constrain which frequencies make sense."""
    from .errors import ConfigError

    if kind not in M.MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {M.MODEL_KINDS}")
    if kind == "rgb_seq" and f_hp != 0:
        raise ConfigError(f"rgb_seq rows must use f_hp=0, got {f_hp}")
    if kind in ("mm_tmlp", "fusionnet", "hp_mlp") and f_hp <= 0:
        raise ConfigError(f"{kind} rows require f_hp > 0, got {f_hp}")


def bench_inputs(model, kind: str, cfg: RateConfig, seed: int = 0):
    """Fixed synthetic inputs for one benchmark window.

    Sequence models get one window at their instantiated lengths.
    Single-frame models run once per sampled frame: fusionnet per RGB
    frame (with the simultaneous hand frame), hp_mlp per hand frame.
    """
    rng = np.random.default_rng(seed)
    if kind == "hp_mlp":
        return None, 0.1 * rng.standard_normal((cfg.steps(cfg.f_hp), M.HP_INPUT_DIM))
    if kind == "fusionnet":
        t = cfg.steps(cfg.f_rgb)
        rgb = rng.standard_normal((t, model.rgb_extractor.d_in))
        hp = 0.1 * rng.standard_normal((t, M.HP_INPUT_DIM))
        return rgb, hp
    t_rgb = cfg.steps(cfg.f_rgb)
    rgb = rng.standard_normal((1, t_rgb, model.rgb_stream.extractor.d_in))
    hp = None
    if kind == "mm_tmlp" and cfg.hp_enabled:
        hp = 0.1 * rng.standard_normal((1, cfg.steps(cfg.f_hp), M.HP_INPUT_DIM))
    return rgb, hp


def _stream_extract(extractor, seq):
    """Run the extractor one frame at a time, as frames arrive at runtime."""
    t = seq.shape[0]
    feats = np.empty((t, extractor.d_out))
    for i in range(t):
        feats[i] = extractor.forward(seq[i : i + 1], cache=False)[0]
    return feats


def streaming_forward(model, kind: str, rgb, hp):
    """Deployment-shaped inference for one window.

    Feature extraction runs once per sampled frame (a live system cannot
    batch frames that have not arrived yet); the temporal stack and head
    run once at the window end. Single-frame models classify every sampled
    frame. Returns the same logits as the batched forward.
    """
    if kind == "hp_mlp":
        feats = _stream_extract(model.extractor, hp)
        return model.head.forward(feats, cache=False)
    if kind == "fusionnet":
        fr = _stream_extract(model.rgb_extractor, rgb)
        fh = _stream_extract(model.hp_extractor, hp)
        return model.head.forward(np.concatenate([fr, fh], axis=1), cache=False)
    parts = []
    feats = _stream_extract(model.rgb_stream.extractor, rgb[0])
    parts.append(model.rgb_stream.temporal.forward(feats[None], cache=False)[:, -1, :])
    if hp is not None:
        hfeats = _stream_extract(model.hp_stream.extractor, hp[0])
        parts.append(model.hp_stream.temporal.forward(hfeats[None], cache=False)[:, -1, :])
    return model.head.forward(np.concatenate(parts, axis=1), cache=False)


def measure_cpu(model, kind: str, cfg: RateConfig, reps: int = 15,
                warmup: int = 3, input_seed: int = 0) -> CpuStats:
    """Median process-CPU seconds for one window of streaming inference."""
    if reps < 5:
        raise MeasurementError(f"need reps >= 5, got {reps}")
    rgb, hp = bench_inputs(model, kind, cfg, input_seed)
    times = []
    with single_thread():
        for _ in range(warmup):
            streaming_forward(model, kind, rgb, hp)
        for _ in range(reps):
            t0 = time.process_time()
            streaming_forward(model, kind, rgb, hp)
            times.append(time.process_time() - t0)
    times = np.array(times)
    return CpuStats(
        median_cpu_seconds=float(np.median(times)),
        p10=float(np.percentile(times, 10)),
        p90=float(np.percentile(times, 90)),
        reps=reps,
        warmup=warmup,
        thread_count=1,
    )


def build_bench_model(kind: str, n_actions: int, cfg: M.ModelConfig,
                      rates: RateConfig, seed: int = 0):
    """Deployment-representative twin of a model configuration.

    Uses the reference RGB extractor so that per-frame extraction cost is
    part of the measurement regardless of which backend training used.
    """
    bench_cfg = cfg if cfg.rgb_backend == "reference" else replace(cfg, rgb_backend="reference")
    rng = np.random.default_rng(seed)
    return M.build_model(kind, n_actions, bench_cfg, rates, rng)


# ---------------------------------------------------------------------------
# Sweep running


@dataclass(frozen=True)
class SweepPoint:
    model_kind: str
    f_rgb: float
    f_hp: float

    def key(self):
        return (self.model_kind, float(self.f_rgb), float(self.f_hp))


@dataclass
class SweepRow:
    model_kind: str
    f_rgb: float
    f_hp: float
    macro_f1_action: float | None
    macro_f1_verb: float | None
    cpu: CpuStats | None
    seed: int
    status: str = "ok"
    checkpoint: str | None = None

    def key(self):
        return (self.model_kind, float(self.f_rgb), float(self.f_hp))


@dataclass(frozen=True)
class BenchConfig:
    enabled: bool = True
    reps: int = 15
    warmup: int = 3
    window_seconds: float = 1.0
    input_seed: int = 0


def run_sweep(grid, prepared_train, prepared_val, meta, model_cfg: M.ModelConfig,
              train_cfg: M.TrainConfig, base_rates: RateConfig, stride: int,
              seed: int, bench: BenchConfig | None = None, row_sink=None,
              completed=None, background_keep: float = 1.0, checkpoint_dir=None):
    """Train/evaluate/measure every grid point; returns the row list.

    Rows are handed to ``row_sink`` as soon as they are complete so partial
    sweeps survive interruption; grid points whose key is in ``completed``
    are skipped. Per-row seeds derive from the grid position, so a resumed
    sweep produces the same rows as an uninterrupted one. A training
    failure marks the row ``failed`` and the sweep continues.
    """
    from .dataset import windows_from_takes
    from .errors import ConfigError

    if not grid:
        raise ConfigError("sweep grid is empty")
    for point in grid:
        validate_grid_point(point.model_kind, point.f_rgb, point.f_hp)
    bench = bench if bench is not None else BenchConfig()
    completed = completed or set()
    train_ctx = {t.take_id: t for t in prepared_train} if train_cfg.augment else None
    rows = []
    for i, point in enumerate(grid):
        if point.key() in completed:
            log.info("skipping completed grid point %s", point.key())
            continue
        row_seed = seed + i
        eff_rates = replace(base_rates, f_rgb=point.f_rgb, f_hp=point.f_hp)
        row = SweepRow(
            model_kind=point.model_kind,
            f_rgb=point.f_rgb,
            f_hp=point.f_hp,
            macro_f1_action=None,
            macro_f1_verb=None,
            cpu=None,
            seed=row_seed,
        )
        try:
            train_set = windows_from_takes(prepared_train, eff_rates, stride,
                                           background_keep, row_seed)
            val_set = windows_from_takes(prepared_val, eff_rates, stride)
            rng = np.random.default_rng(row_seed)
            model = M.build_model(point.model_kind, meta.n_actions, model_cfg, eff_rates, rng)
            result = M.train_model(
                model, point.model_kind, train_set, val_set,
                replace(train_cfg, seed=row_seed), meta.action_to_verb,
                dataset_ctx=train_ctx,
            )
            row.macro_f1_action = result.best_f1_action
            row.macro_f1_verb = result.best_f1_verb
            if checkpoint_dir is not None:
                import os

                path = os.path.join(
                    checkpoint_dir,
                    f"{point.model_kind}_frgb{point.f_rgb:g}_fhp{point.f_hp:g}.ckpt",
                )
                M.save_model(path, model, point.model_kind,
                             {"f_rgb": point.f_rgb, "f_hp": point.f_hp, "seed": row_seed})
                row.checkpoint = path
            if bench.enabled:
                bench_rates = replace(eff_rates, window_seconds=bench.window_seconds)
                bench_model = build_bench_model(
                    point.model_kind, meta.n_actions, model_cfg, bench_rates, row_seed
                )
                row.cpu = measure_cpu(
                    bench_model, point.model_kind, bench_rates,
                    reps=bench.reps, warmup=bench.warmup, input_seed=bench.input_seed,
                )
        except DivergenceError as exc:
            log.warning("grid point %s failed: %s", point.key(), exc)
            row = SweepRow(
                model_kind=point.model_kind,
                f_rgb=point.f_rgb,
                f_hp=point.f_hp,
                macro_f1_action=None,
                macro_f1_verb=None,
                cpu=None,
                seed=row_seed,
                status="failed",
            )
        rows.append(row)
        if row_sink is not None:
            row_sink(row)
    return rows


def pareto_front(rows):
    """Rows not dominated on (macro_f1_action up, cpu median down).

    A row is dominated when another row has f1 >= and cpu <= with at least
    one strict inequality; ties on f1 resolve toward lower CPU. Output is
    sorted by CPU ascending.
    """
    usable = [r for r in rows if r.status == "ok" and r.macro_f1_action is not None
              and r.cpu is not None]
    front = []
    for r in usable:
        dominated = False
        for s in usable:
            if s is r:
                continue
            if (
                s.macro_f1_action >= r.macro_f1_action
                and s.cpu.median_cpu_seconds <= r.cpu.median_cpu_seconds
                and (
                    s.macro_f1_action > r.macro_f1_action
                    or s.cpu.median_cpu_seconds < r.cpu.median_cpu_seconds
                )
            ):
                dominated = True
                break
        if not dominated:
            front.append(r)
    return sorted(front, key=lambda r: (r.cpu.median_cpu_seconds, -r.macro_f1_action))


# ---------------------------------------------------------------------------
# Export / import


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def row_to_record(row: SweepRow):
    return {
        "model_kind": row.model_kind,
        "f_rgb": float(row.f_rgb),
        "f_hp": float(row.f_hp),
        "macro_f1_action": row.macro_f1_action,
        "macro_f1_verb": row.macro_f1_verb,
        "cpu_median_s": row.cpu.median_cpu_seconds if row.cpu else None,
        "cpu_p10_s": row.cpu.p10 if row.cpu else None,
        "cpu_p90_s": row.cpu.p90 if row.cpu else None,
        "seed": row.seed,
        "status": row.status,
    }


def record_to_row(rec, reps=15, warmup=3):
    cpu = None
    if rec.get("cpu_median_s") not in (None, ""):
        cpu = CpuStats(
            median_cpu_seconds=float(rec["cpu_median_s"]),
            p10=float(rec["cpu_p10_s"]),
            p90=float(rec["cpu_p90_s"]),
            reps=reps,
            warmup=warmup,
        )

    def opt_float(v):
        return None if v in (None, "") else float(v)

    return SweepRow(
        model_kind=rec["model_kind"],
        f_rgb=float(rec["f_rgb"]),
        f_hp=float(rec["f_hp"]),
        macro_f1_action=opt_float(rec.get("macro_f1_action")),
        macro_f1_verb=opt_float(rec.get("macro_f1_verb")),
        cpu=cpu,
        seed=int(rec["seed"]),
        status=rec.get("status", "ok"),
    )


def export_results(rows, path, fmt: str = "csv"):
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                rec = row_to_record(row)
                writer.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([row_to_record(r) for r in rows], fh, indent=2)
            fh.write("\n")
    else:
        raise MetricError(f"unknown export format {fmt!r}")


def read_results(path, fmt: str = "csv"):
    if fmt == "csv":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return [record_to_row(rec) for rec in csv.DictReader(fh)]
    if fmt == "json":
        with open(path, "r", encoding="utf-8") as fh:
            return [record_to_row(rec) for rec in json.load(fh)]
    raise MetricError(f"unknown export format {fmt!r}")
