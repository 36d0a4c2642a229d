import json
from pathlib import Path

import numpy as np
import pytest

from mmear import cli
from mmear import dataset as D
from mmear import handpose as hp
from mmear.config import apply_overrides, default_config, validate_config
from mmear.errors import ConfigError

from helpers import random_hand, random_rotation

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(tmp_path, **extra):
    cfg = {
        "dataset": {
            "mode": "synth",
            "path": str(tmp_path / "data"),
            "synth": {
                "n_takes": 4,
                "frames_per_take": 120,
                "n_verbs": 2,
                "n_objects": 2,
                "feature_dim": 16,
                "seed": 1,
                "segments_per_take": 3,
            },
            "stride": 15,
            "val_fraction": 0.25,
        },
        "model": {
            "kind": "mm_tmlp",
            "d_rgb": 16,
            "d_hp": 8,
            "hp_hidden": 12,
            "head_hidden": 16,
            "reference": {"image_size": 16, "patch_size": 8, "hidden": 8},
            "temporal": {"depth": 1},
        },
        "rates": {"f_rgb": 30.0, "f_hp": 30.0},
        "train": {"epochs": 2, "batch_size": 8, "lr": 1e-3, "seed": 0, "augment": []},
        "bench": {"reps": 5, "warmup": 1},
        "output": {"dir": str(tmp_path / "out")},
    }
    cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfigValidation:
    def test_defaults_validate(self):
        validate_config(default_config())

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"model": {"kindd": "mm_tmlp"}})
        assert "kindd" in str(err.value)
        assert "model" in str(err.value)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError):
            validate_config({"modell": {}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"train": {"epochs": "ten"}})
        assert "train.epochs" in str(err.value)

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigError):
            validate_config({"rates": {"f_rgb": True}})

    def test_bad_choice_rejected(self):
        with pytest.raises(ConfigError):
            validate_config({"model": {"kind": "transformer"}})

    def test_grid_entries_validated(self):
        with pytest.raises(ConfigError):
            validate_config({"grid": [{"model_kind": "mm_tmlp"}]})
        with pytest.raises(ConfigError):
            validate_config(
                {"grid": [{"model_kind": "mm_tmlp", "f_rgb": 30, "f_hp": 30, "x": 1}]}
            )

    def test_overrides(self):
        cfg = apply_overrides(default_config(), ["train.epochs=3", "model.kind=hp_mlp"])
        assert cfg["train"]["epochs"] == 3
        assert cfg["model"]["kind"] == "hp_mlp"

    def test_override_unknown_key(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config(), ["train.epochz=3"])

    def test_override_revalidates(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config(), ["train.epochs=nope"])


class TestSynthCommand:
    def test_writes_parseable_dataset(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["synth", "--config", str(cfg)]) == 0
        takes, meta = D.load_dataset(tmp_path / "data")
        assert len(takes) == 4
        assert meta.n_actions == 5

    def test_same_seed_byte_identical(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        cfg1 = tiny_config(tmp_path / "a")
        cfg2 = tiny_config(tmp_path / "b")
        assert cli.main(["synth", "--config", str(cfg1)]) == 0
        assert cli.main(["synth", "--config", str(cfg2)]) == 0
        a_root, b_root = tmp_path / "a" / "data", tmp_path / "b" / "data"
        files_a = sorted(p.relative_to(a_root) for p in a_root.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b_root) for p in b_root.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a_root / rel).read_bytes() == (b_root / rel).read_bytes(), rel

    def test_refuses_existing_without_force(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["synth", "--config", str(cfg)]) == 0
        assert cli.main(["synth", "--config", str(cfg)]) == cli.EXIT_CONFIG
        assert cli.main(["synth", "--config", str(cfg), "--force"]) == 0

    def test_zero_takes_config_error(self, tmp_path):
        cfg = tiny_config(tmp_path)
        code = cli.main(
            ["synth", "--config", str(cfg), "--set", "dataset.synth.n_takes=0"]
        )
        assert code == cli.EXIT_CONFIG


class TestTrainCommand:
    def test_smoke_and_outputs(self, tmp_path):
        import time

        cfg = tiny_config(tmp_path)
        t0 = time.perf_counter()
        assert cli.main(["train", "--config", str(cfg)]) == 0
        assert time.perf_counter() - t0 < 60.0
        out = tmp_path / "out"
        assert (out / "history.csv").exists()
        assert (out / "model.ckpt").exists()
        header = (out / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_f1_action,val_f1_verb"

    def test_rerun_identical_history(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "history.csv").read_bytes()
        assert cli.main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "history.csv").read_bytes() == first

    def test_missing_dataset_path_exits_with_data_error(self, tmp_path, caplog):
        cfg = tiny_config(tmp_path)
        missing = str(tmp_path / "no_such_dir")
        code = cli.main(
            ["train", "--config", str(cfg), "--set", "dataset.mode=files",
             "--set", f"dataset.path={missing}"]
        )
        assert code == cli.EXIT_DATA
        assert "no_such_dir" in caplog.text

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path):
        cfg = tiny_config(tmp_path)
        code = cli.main(["train", "--config", str(cfg), "--set", "train.lr=1e200"])
        assert code == cli.EXIT_DIVERGENCE

    def test_hp_kind_requires_hp_rate(self, tmp_path):
        cfg = tiny_config(tmp_path)
        code = cli.main(
            ["train", "--config", str(cfg), "--set", "model.kind=hp_mlp",
             "--set", "rates.f_hp=0"]
        )
        assert code == cli.EXIT_CONFIG

    def test_d_rgb_mismatch_rejected(self, tmp_path):
        cfg = tiny_config(tmp_path)
        code = cli.main(["train", "--config", str(cfg), "--set", "model.d_rgb=32"])
        assert code == cli.EXIT_CONFIG


class TestSweepCommand:
    def _sweep_config(self, tmp_path, bench_enabled=False):
        grid = [
            {"model_kind": "mm_tmlp", "f_rgb": 30, "f_hp": 30},
            {"model_kind": "mm_tmlp", "f_rgb": 10, "f_hp": 30},
            {"model_kind": "rgb_seq", "f_rgb": 30, "f_hp": 0},
            {"model_kind": "hp_mlp", "f_rgb": 30, "f_hp": 30},
        ]
        return tiny_config(
            tmp_path,
            grid=grid,
            bench={"enabled": bench_enabled, "reps": 5, "warmup": 1},
        )

    def test_grid_product_rows_and_pareto(self, tmp_path):
        cfg = self._sweep_config(tmp_path, bench_enabled=True)
        assert cli.main(["sweep", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        lines = (out / "results.csv").read_text().splitlines()
        assert len(lines) == 5  # header + 4 rows
        assert (out / "results.json").exists()
        assert (out / "pareto.csv").exists()
        pareto = (out / "pareto.csv").read_text().splitlines()
        assert 2 <= len(pareto) <= 5

    def test_empty_grid_usage_error(self, tmp_path):
        cfg = tiny_config(tmp_path, grid=[])
        assert cli.main(["sweep", "--config", str(cfg)]) == cli.EXIT_CONFIG

    def test_refuses_existing_results(self, tmp_path):
        cfg = self._sweep_config(tmp_path)
        assert cli.main(["sweep", "--config", str(cfg)]) == 0
        assert cli.main(["sweep", "--config", str(cfg)]) == cli.EXIT_CONFIG

    def test_resume_skips_completed_rows(self, tmp_path):
        from mmear import bench as B

        cfg = self._sweep_config(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        # pre-seed one completed row with a sentinel f1; resume must keep it
        sentinel = B.SweepRow("mm_tmlp", 30.0, 30.0, 0.123456, 0.2, None, 0)
        B.export_results([sentinel], out / "results.csv")
        assert cli.main(["sweep", "--config", str(cfg), "--resume"]) == 0
        rows = B.read_results(out / "results.csv")
        assert len(rows) == 4
        kept = [r for r in rows if r.key() == ("mm_tmlp", 30.0, 30.0)]
        assert kept[0].macro_f1_action == 0.123456

    def test_rerun_byte_identical_results(self, tmp_path):
        cfg = self._sweep_config(tmp_path)
        assert cli.main(["sweep", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "results.csv").read_bytes()
        assert cli.main(["sweep", "--config", str(cfg), "--force"]) == 0
        assert (tmp_path / "out" / "results.csv").read_bytes() == first


class TestBenchCommand:
    def test_smoke(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["bench", "--config", str(cfg)]) == 0
        stats = json.loads((tmp_path / "out" / "cpu_stats.json").read_text())
        assert stats["thread_count"] == 1
        assert stats["median_cpu_seconds"] > 0
        assert stats["window_seconds"] == 1.0


class TestNormalizeCommand:
    def _write_pose_file(self, path, frames):
        hp.write_hand_pose_file(path, frames)

    def test_normalize_then_renormalize_unchanged(self, tmp_path, rng):
        src = tmp_path / "raw.txt"
        frames = [
            hp.HandFrame(random_hand(rng), random_hand(rng), True, True)
            for _ in range(4)
        ]
        self._write_pose_file(src, frames)
        mid = tmp_path / "norm.txt"
        out = tmp_path / "norm2.txt"
        assert cli.main(["normalize", str(src), str(mid)]) == 0
        assert cli.main(["normalize", str(mid), str(out)]) == 0
        a = hp.parse_hand_pose_file(mid)
        b = hp.parse_hand_pose_file(out)
        for fa, fb in zip(a, b):
            np.testing.assert_allclose(fa.left, fb.left, atol=1e-9)
            np.testing.assert_allclose(fa.right, fb.right, atol=1e-9)

    def test_rigid_transform_same_output(self, tmp_path, rng):
        frames = [
            hp.HandFrame(random_hand(rng), random_hand(rng), True, True)
            for _ in range(3)
        ]
        rot = random_rotation(rng)
        t = rng.standard_normal(3)
        moved = [
            hp.HandFrame(f.left @ rot.T + t, f.right @ rot.T + t, True, True)
            for f in frames
        ]
        src_a, src_b = tmp_path / "a.txt", tmp_path / "b.txt"
        self._write_pose_file(src_a, frames)
        self._write_pose_file(src_b, moved)
        out_a, out_b = tmp_path / "na.txt", tmp_path / "nb.txt"
        assert cli.main(["normalize", str(src_a), str(out_a)]) == 0
        assert cli.main(["normalize", str(src_b), str(out_b)]) == 0
        na = hp.parse_hand_pose_file(out_a)
        nb = hp.parse_hand_pose_file(out_b)
        for fa, fb in zip(na, nb):
            np.testing.assert_allclose(fa.left, fb.left, atol=1e-9)
            np.testing.assert_allclose(fa.right, fb.right, atol=1e-9)

    def test_degenerate_zeroed_by_default(self, tmp_path, rng):
        src = tmp_path / "bad.txt"
        degenerate = hp.HandFrame(np.zeros((21, 3)), random_hand(rng), True, True)
        self._write_pose_file(src, [degenerate])
        out = tmp_path / "out.txt"
        assert cli.main(["normalize", str(src), str(out)]) == 0
        frames = hp.parse_hand_pose_file(out)
        assert not frames[0].left.any() and not frames[0].right.any()
        assert not frames[0].left_valid

    def test_strict_mode_fails(self, tmp_path, rng):
        src = tmp_path / "bad.txt"
        degenerate = hp.HandFrame(np.zeros((21, 3)), random_hand(rng), True, True)
        self._write_pose_file(src, [degenerate])
        out = tmp_path / "out.txt"
        assert cli.main(["normalize", str(src), str(out), "--strict"]) == cli.EXIT_DATA

    def test_compute_reference_lengths(self, tmp_path, rng):
        src = tmp_path / "raw.txt"
        frames = [
            hp.HandFrame(random_hand(rng), random_hand(rng), True, True)
            for _ in range(5)
        ]
        self._write_pose_file(src, frames)
        out = tmp_path / "lengths.txt"
        assert cli.main(
            ["normalize", "--compute-reference-lengths", str(src), str(out)]
        ) == 0
        lengths = hp.read_lengths_file(out)
        assert lengths.shape == (20,)
        assert (lengths > 0).all()

    def test_unit_lengths_flag(self, tmp_path, rng):
        src = tmp_path / "raw.txt"
        self._write_pose_file(
            src, [hp.HandFrame(random_hand(rng), random_hand(rng), True, True)]
        )
        out = tmp_path / "norm.txt"
        assert cli.main(["normalize", str(src), str(out), "--unit-lengths"]) == 0
        frame = hp.parse_hand_pose_file(out)[0]
        topo = hp.SkeletonTopology.with_unit_lengths()
        np.testing.assert_allclose(
            hp.bone_lengths(frame.right, topo), np.ones(20), atol=1e-9
        )

    def test_conflicting_length_flags(self, tmp_path, rng):
        src = tmp_path / "raw.txt"
        self._write_pose_file(
            src, [hp.HandFrame(random_hand(rng), random_hand(rng), True, True)]
        )
        code = cli.main(
            ["normalize", str(src), str(tmp_path / "o.txt"),
             "--unit-lengths", "--lengths", str(src)]
        )
        assert code == cli.EXIT_CONFIG
