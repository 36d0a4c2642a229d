"""Command-line interface: synth, train, sweep, bench, normalize.

All commands read a JSON config (see config.SCHEMA), fully validated
before any side effect; ``--set dotted.key=value`` overrides individual
keys. Exit codes: 0 success, 2 config error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import bench as B
from . import dataset as D
from . import handpose as hp
from . import models as M
from .config import apply_overrides, default_config, load_config
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    MmearError,
    PoseError,
)
from .sampling import RateConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

HISTORY_COLUMNS = ("epoch", "train_loss", "val_f1_action", "val_f1_verb")


def _synth_spec(cfg):
    return D.SynthSpec(**cfg["dataset"]["synth"])


def _rates(cfg):
    return RateConfig(**cfg["rates"])


def _model_config(cfg, feature_dim=None):
    m = cfg["model"]
    d_rgb = m["d_rgb"]
    if feature_dim is not None and m["rgb_backend"] == "precomputed":
        if d_rgb != feature_dim:
            raise ConfigError(
                f"model.d_rgb={d_rgb} must match the dataset feature_dim="
                f"{feature_dim} with the precomputed backend"
            )
    return M.ModelConfig(
        d_rgb=d_rgb,
        d_hp=m["d_hp"],
        hp_hidden=m["hp_hidden"],
        head_hidden=m["head_hidden"],
        activation=m["activation"],
        rgb_backend=m["rgb_backend"],
        reference=M.ReferenceExtractorConfig(**m["reference"]),
        temporal=M.TemporalMlpConfig(**m["temporal"]),
    )


def _train_config(cfg):
    t = cfg["train"]
    return M.TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        seed=t["seed"],
        augment=tuple(t["augment"]),
        eval_every=t["eval_every"],
    )


def _bench_config(cfg):
    return B.BenchConfig(**cfg["bench"])


def _topology(cfg):
    ds = cfg["dataset"]
    if ds["unit_lengths"]:
        return hp.SkeletonTopology.with_unit_lengths()
    if ds["reference_lengths"]:
        return hp.SkeletonTopology.with_lengths(
            hp.read_lengths_file(ds["reference_lengths"])
        )
    return hp.SkeletonTopology()


def _load_takes(cfg):
    ds = cfg["dataset"]
    if ds["mode"] == "synth":
        takes, meta = D.synth_generate(_synth_spec(cfg))
    else:
        if not ds["path"]:
            raise ConfigError("dataset.mode='files' requires dataset.path")
        takes, meta = D.load_dataset(ds["path"])
    if abs(meta.native_hz - cfg["rates"]["native_hz"]) > 1e-9:
        raise ConfigError(
            f"rates.native_hz={cfg['rates']['native_hz']} does not match the "
            f"dataset native rate {meta.native_hz}"
        )
    return takes, meta


def _prepare_split(cfg, takes, meta):
    topo = _topology(cfg)
    prepared = [D.prepare_take(t, topo) for t in takes]
    return D.split_takes(
        prepared, cfg["dataset"]["val_fraction"], cfg["dataset"]["split_seed"]
    )


def _require_hp_rates(kind, rates):
    if kind in ("mm_tmlp", "fusionnet", "hp_mlp") and not rates.hp_enabled:
        raise ConfigError(f"model kind {kind} requires rates.f_hp > 0")


def _write_history(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["train_loss"]),
                    repr(row["val_f1_action"]) if "val_f1_action" in row else "",
                    repr(row["val_f1_verb"]) if "val_f1_verb" in row else "",
                ]
            )


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg, force=False):
    ds = cfg["dataset"]
    if ds["mode"] != "synth":
        raise ConfigError("synth command requires dataset.mode='synth'")
    if not ds["path"]:
        raise ConfigError("synth command requires dataset.path (output directory)")
    target = ds["path"]
    if os.path.exists(target) and os.listdir(target) and not force:
        raise ConfigError(
            f"dataset directory {target} already exists; pass --force to overwrite"
        )
    spec = _synth_spec(cfg)
    takes, meta = D.synth_generate(spec)
    D.save_dataset(target, takes, meta, synth_spec=spec)
    n_frames = sum(t.n_frames for t in takes)
    print(f"wrote {len(takes)} takes ({n_frames} frames) to {target}")
    return EXIT_OK


def cmd_train(cfg):
    takes, meta = _load_takes(cfg)
    rates = _rates(cfg)
    kind = cfg["model"]["kind"]
    _require_hp_rates(kind, rates)
    model_cfg = _model_config(cfg, meta.feature_dim)
    tcfg = _train_config(cfg)
    train_takes, val_takes = _prepare_split(cfg, takes, meta)
    train_set = D.windows_from_takes(
        train_takes, rates, cfg["dataset"]["stride"],
        cfg["dataset"]["background_keep"], tcfg.seed,
    )
    val_set = D.windows_from_takes(val_takes, rates, cfg["dataset"]["stride"])
    log.info("training %s on %d windows (%d val)", kind, len(train_set), len(val_set))

    rng = np.random.default_rng(tcfg.seed)
    model = M.build_model(kind, meta.n_actions, model_cfg, rates, rng)
    ctx = {t.take_id: t for t in train_takes} if tcfg.augment else None
    result = M.train_model(model, kind, train_set, val_set, tcfg,
                           meta.action_to_verb, dataset_ctx=ctx)

    out_dir = cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    history_path = os.path.join(out_dir, "history.csv")
    _write_history(history_path, result.history)
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    M.save_model(
        ckpt_path, model, kind,
        {
            "f_rgb": rates.f_rgb,
            "f_hp": rates.f_hp,
            "window_seconds": rates.window_seconds,
            "native_hz": rates.native_hz,
            "seed": tcfg.seed,
            "d_rgb": model_cfg.d_rgb,
            "d_hp": model_cfg.d_hp,
        },
    )
    print(
        f"trained {kind}: best val action F1 {result.best_f1_action:.4f} "
        f"(verb {result.best_f1_verb:.4f}) at epoch {result.best_epoch}; "
        f"wrote {history_path} and {ckpt_path}"
    )
    return EXIT_OK


def _read_completed(path):
    rows = B.read_results(path)
    return rows, {r.key() for r in rows}


def cmd_sweep(cfg, force=False, resume=False):
    if not cfg["grid"]:
        raise ConfigError("sweep requires a non-empty grid")
    grid = [B.SweepPoint(p["model_kind"], float(p["f_rgb"]), float(p["f_hp"]))
            for p in cfg["grid"]]
    for point in grid:
        B.validate_grid_point(point.model_kind, point.f_rgb, point.f_hp)

    takes, meta = _load_takes(cfg)
    base_rates = _rates(cfg)
    model_cfg = _model_config(cfg, meta.feature_dim)
    tcfg = _train_config(cfg)
    bench_cfg = _bench_config(cfg)
    train_takes, val_takes = _prepare_split(cfg, takes, meta)

    out_dir = cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    prior_rows, completed = [], set()
    if os.path.exists(results_path):
        if resume:
            prior_rows, completed = _read_completed(results_path)
            log.info("resuming: %d rows already complete", len(prior_rows))
        elif force:
            os.remove(results_path)
        else:
            raise ConfigError(
                f"{results_path} already exists; pass --resume to continue "
                "or --force to start over"
            )

    all_rows = list(prior_rows)

    def sink(row):
        all_rows.append(row)
        B.export_results(all_rows, results_path)  # incremental, survives kills

    B.run_sweep(
        grid, train_takes, val_takes, meta, model_cfg, tcfg, base_rates,
        cfg["dataset"]["stride"], tcfg.seed, bench=bench_cfg, row_sink=sink,
        completed=completed, background_keep=cfg["dataset"]["background_keep"],
        checkpoint_dir=out_dir,
    )
    B.export_results(all_rows, results_path)
    if cfg["output"]["json"]:
        B.export_results(all_rows, os.path.join(out_dir, "results.json"), fmt="json")
    pareto = B.pareto_front(all_rows)
    B.export_results(pareto, os.path.join(out_dir, "pareto.csv"))
    ok = [r for r in all_rows if r.status == "ok"]
    print(
        f"sweep finished: {len(ok)}/{len(all_rows)} rows ok, "
        f"{len(pareto)} on the Pareto front; wrote {results_path}"
    )
    return EXIT_OK if ok else 1


def cmd_bench(cfg):
    rates = RateConfig(
        native_hz=cfg["rates"]["native_hz"],
        f_rgb=cfg["rates"]["f_rgb"],
        f_hp=cfg["rates"]["f_hp"],
        window_seconds=cfg["bench"]["window_seconds"],
    )
    kind = cfg["model"]["kind"]
    _require_hp_rates(kind, rates)
    bench_cfg = _bench_config(cfg)
    model_cfg = _model_config(cfg)
    n_actions = 37  # background + 36; head width barely affects the timing
    model = B.build_bench_model(kind, n_actions, model_cfg, rates, cfg["train"]["seed"])
    stats = B.measure_cpu(
        model, kind, rates,
        reps=bench_cfg.reps, warmup=bench_cfg.warmup, input_seed=bench_cfg.input_seed,
    )
    payload = {"model_kind": kind, "f_rgb": rates.f_rgb, "f_hp": rates.f_hp,
               "window_seconds": rates.window_seconds, **stats.as_dict()}
    print(json.dumps(payload, indent=2))
    out_dir = cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "cpu_stats.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_normalize(args):
    if args.unit_lengths and args.lengths:
        raise ConfigError("--unit-lengths and --lengths are mutually exclusive")
    if args.unit_lengths:
        topo = hp.SkeletonTopology.with_unit_lengths()
    elif args.lengths:
        topo = hp.SkeletonTopology.with_lengths(hp.read_lengths_file(args.lengths))
    else:
        topo = hp.SkeletonTopology()

    frames = hp.parse_hand_pose_file(args.input)

    if args.compute_reference_lengths:
        lengths = hp.reference_lengths_from_frames(frames, topo)
        hp.write_lengths_file(args.output, lengths)
        print(f"wrote per-edge mean lengths for {len(frames)} frames to {args.output}")
        return EXIT_OK

    out_frames = []
    degenerate = 0
    for i, frame in enumerate(frames):
        try:
            out_frames.append(hp.normalize_hand_frame(frame, topo))
        except PoseError as exc:
            if args.strict:
                raise PoseError(f"frame {i}: {exc}") from None
            degenerate += 1
            log.warning("frame %d: %s; zeroing", i, exc)
            out_frames.append(hp.NormalizedHandFrame.empty())
    hp.write_hand_pose_file(args.output, out_frames)
    msg = f"normalized {len(frames)} frames to {args.output}"
    if degenerate:
        msg += f" ({degenerate} degenerate frames zeroed)"
    print(msg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmear",
        description="Two-stream temporal-MLP action recognition: data "
        "synthesis, training, frequency sweeps, and CPU benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key (dotted path, JSON value)",
        )

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    add_config_args(p_synth)
    p_synth.add_argument("--force", action="store_true",
                         help="overwrite an existing dataset directory")

    p_train = sub.add_parser("train", help="train one model at one rate config")
    add_config_args(p_train)

    p_sweep = sub.add_parser("sweep", help="train/evaluate/benchmark a rate grid")
    add_config_args(p_sweep)
    p_sweep.add_argument("--force", action="store_true", help="discard existing results")
    p_sweep.add_argument("--resume", action="store_true",
                         help="skip grid points already in results.csv")

    p_bench = sub.add_parser("bench", help="measure CPU for one configuration")
    add_config_args(p_bench)

    p_norm = sub.add_parser("normalize", help="normalize a hand-pose file")
    p_norm.add_argument("input", help="hand-pose text file")
    p_norm.add_argument("output", help="output file")
    p_norm.add_argument("--strict", action="store_true",
                        help="fail on degenerate frames instead of zeroing them")
    p_norm.add_argument("--unit-lengths", action="store_true",
                        help="use unit bone lengths instead of anatomical defaults")
    p_norm.add_argument("--lengths", help="bone-lengths file to normalize against")
    p_norm.add_argument(
        "--compute-reference-lengths", action="store_true",
        help="write per-edge mean bone lengths of the input instead of normalizing",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "normalize":
            return cmd_normalize(args)
        cfg = apply_overrides(load_config(args.config), args.set)
        if args.command == "synth":
            return cmd_synth(cfg, force=args.force)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, force=args.force, resume=args.resume)
        if args.command == "bench":
            return cmd_bench(cfg)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, PoseError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGENCE
    except MmearError as exc:
        log.error("%s", exc)
        return 1


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
