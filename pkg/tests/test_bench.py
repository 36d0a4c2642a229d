import numpy as np
import pytest

from helpers import brute_force_macro_f1
from mmear import bench as B
from mmear import models as M
from mmear.errors import ConfigError, MeasurementError, MetricError
from mmear.sampling import RateConfig


class TestMacroF1:
    def test_perfect_predictor(self):
        labels = np.array([0, 1, 2, 1, 0])
        assert B.macro_f1(labels, labels, 3) == 1.0

    def test_hand_computed_example(self):
        preds = np.array([0, 0, 1, 2])
        labels = np.array([0, 1, 1, 2])
        assert B.macro_f1(preds, labels, 3) == pytest.approx(7.0 / 9.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 1000))
            c = int(rng.integers(2, 40))
            preds = rng.integers(0, c, size=n)
            labels = rng.integers(0, c, size=n)
            assert B.macro_f1(preds, labels, c) == pytest.approx(
                brute_force_macro_f1(preds, labels, c), abs=1e-12
            )

    def test_zero_support_classes_excluded(self):
        # classes 3 and 4 absent from both sides: excluded from the mean
        preds = np.array([0, 1, 0, 1])
        labels = np.array([0, 1, 1, 1])
        got = B.macro_f1(preds, labels, 5)
        assert got == pytest.approx(brute_force_macro_f1(preds, labels, 5))

    def test_predicted_only_class_counts_as_zero(self):
        preds = np.array([2, 2, 2, 2])
        labels = np.array([0, 0, 0, 0])
        # class 0: f1 0 (no predictions), class 2: f1 0 (no support) -> 0
        assert B.macro_f1(preds, labels, 3) == 0.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 5, 200)
        labels = rng.integers(0, 5, 200)
        perm = rng.permutation(200)
        assert B.macro_f1(preds, labels, 5) == B.macro_f1(preds[perm], labels[perm], 5)

    def test_empty_inputs_rejected(self):
        with pytest.raises(MetricError):
            B.macro_f1(np.array([]), np.array([]), 3)

    def test_out_of_range_rejected(self):
        with pytest.raises(MetricError):
            B.macro_f1(np.array([3]), np.array([0]), 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricError):
            B.macro_f1(np.array([0, 1]), np.array([0]), 2)


class TestCpuStats:
    def test_validates_rep_count(self):
        with pytest.raises(MeasurementError):
            B.CpuStats(1.0, 0.9, 1.1, reps=3, warmup=1)

    def test_validates_percentile_order(self):
        with pytest.raises(MeasurementError):
            B.CpuStats(1.0, 1.5, 2.0, reps=5, warmup=1)

    def test_validates_thread_count(self):
        with pytest.raises(MeasurementError):
            B.CpuStats(1.0, 0.9, 1.1, reps=5, warmup=1, thread_count=4)

    def test_as_dict(self):
        stats = B.CpuStats(1.0, 0.9, 1.1, reps=5, warmup=2)
        d = stats.as_dict()
        assert d["median_cpu_seconds"] == 1.0 and d["thread_count"] == 1


def _tiny_bench_model(kind="mm_tmlp"):
    cfg = M.ModelConfig(
        d_rgb=8,
        d_hp=6,
        hp_hidden=8,
        head_hidden=8,
        rgb_backend="reference",
        reference=M.ReferenceExtractorConfig(image_size=16, patch_size=8, hidden=8),
        temporal=M.TemporalMlpConfig(depth=1),
    )
    rates = RateConfig(30, 10, 10, 1.0)
    model = M.build_model(kind, 5, cfg, rates, np.random.default_rng(0))
    return model, rates


class TestMeasureCpu:
    def test_smoke(self):
        model, rates = _tiny_bench_model()
        stats = B.measure_cpu(model, "mm_tmlp", rates, reps=5, warmup=1)
        assert stats.median_cpu_seconds > 0
        assert stats.p10 <= stats.median_cpu_seconds <= stats.p90
        assert stats.thread_count == 1

    def test_rejects_too_few_reps(self):
        model, rates = _tiny_bench_model()
        with pytest.raises(MeasurementError):
            B.measure_cpu(model, "mm_tmlp", rates, reps=2)

    def test_streaming_matches_batched_forward(self):
        model, rates = _tiny_bench_model()
        rgb, hpx = B.bench_inputs(model, "mm_tmlp", rates, seed=3)
        stream = B.streaming_forward(model, "mm_tmlp", rgb, hpx)
        batched = model.forward(rgb=rgb, hp=hpx, cache=False)
        np.testing.assert_allclose(stream, batched, atol=1e-9)

    def test_streaming_single_frame_kinds(self):
        for kind in ("fusionnet", "hp_mlp"):
            model, rates = _tiny_bench_model(kind)
            rgb, hpx = B.bench_inputs(model, kind, rates, seed=1)
            out = B.streaming_forward(model, kind, rgb, hpx)
            assert out.shape == (rates.steps(rates.f_hp if kind == "hp_mlp" else rates.f_rgb), 5)

    def test_build_bench_model_uses_reference_backend(self):
        cfg = M.ModelConfig(
            d_rgb=8, d_hp=6, hp_hidden=8, head_hidden=8,
            reference=M.ReferenceExtractorConfig(image_size=16, patch_size=8, hidden=8),
            temporal=M.TemporalMlpConfig(depth=1),
        )
        rates = RateConfig(30, 10, 10, 1.0)
        model = B.build_bench_model("mm_tmlp", 5, cfg, rates, seed=0)
        assert isinstance(model.rgb_stream.extractor, M.ReferenceRgbExtractor)


def _row(kind="mm_tmlp", f_rgb=30.0, f_hp=30.0, f1=0.9, cpu=1.0, status="ok", seed=0):
    stats = None
    if cpu is not None:
        stats = B.CpuStats(cpu, cpu * 0.9, cpu * 1.1, reps=5, warmup=1)
    return B.SweepRow(
        model_kind=kind,
        f_rgb=f_rgb,
        f_hp=f_hp,
        macro_f1_action=f1,
        macro_f1_verb=f1,
        cpu=stats,
        seed=seed,
        status=status,
    )


class TestParetoFront:
    def test_single_row(self):
        rows = [_row()]
        assert B.pareto_front(rows) == rows

    def test_strict_dominance(self):
        a = _row(f1=0.9, cpu=10.0)
        b = _row(f1=0.8, cpu=20.0)
        assert B.pareto_front([a, b]) == [a]

    def test_three_incomparable(self):
        rows = [_row(f1=0.9, cpu=10.0), _row(f1=0.85, cpu=3.0), _row(f1=0.6, cpu=1.0)]
        front = B.pareto_front(rows)
        assert len(front) == 3
        cpus = [r.cpu.median_cpu_seconds for r in front]
        assert cpus == sorted(cpus)

    def test_equal_f1_tie_goes_to_lower_cpu(self):
        a = _row(f1=0.9, cpu=5.0)
        b = _row(f1=0.9, cpu=7.0)
        assert B.pareto_front([b, a]) == [a]

    def test_failed_rows_excluded(self):
        ok = _row()
        failed = B.SweepRow("mm_tmlp", 1.0, 1.0, None, None, None, 0, status="failed")
        assert B.pareto_front([ok, failed]) == [ok]

    def test_random_instances_mutually_nondominated(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            rows = [
                _row(f1=float(rng.uniform(0, 1)), cpu=float(rng.uniform(0.1, 10)))
                for _ in range(12)
            ]
            front = B.pareto_front(rows)
            assert front
            for r in front:
                for s in front:
                    if r is s:
                        continue
                    dominates = (
                        s.macro_f1_action >= r.macro_f1_action
                        and s.cpu.median_cpu_seconds <= r.cpu.median_cpu_seconds
                        and (
                            s.macro_f1_action > r.macro_f1_action
                            or s.cpu.median_cpu_seconds < r.cpu.median_cpu_seconds
                        )
                    )
                    assert not dominates
            # completeness: every non-dominated input row is on the front
            for r in rows:
                dominated = any(
                    s.macro_f1_action >= r.macro_f1_action
                    and s.cpu.median_cpu_seconds <= r.cpu.median_cpu_seconds
                    and (
                        s.macro_f1_action > r.macro_f1_action
                        or s.cpu.median_cpu_seconds < r.cpu.median_cpu_seconds
                    )
                    for s in rows
                    if s is not r
                )
                assert dominated or r in front


class TestExport:
    def test_csv_round_trip(self, tmp_path):
        rows = [
            _row(f1=0.912345678901234, cpu=0.0312),
            _row(kind="rgb_seq", f_rgb=10.0, f_hp=0.0, f1=0.5, cpu=0.011, seed=3),
            B.SweepRow("hp_mlp", 30.0, 30.0, None, None, None, 7, status="failed"),
        ]
        path = tmp_path / "results.csv"
        B.export_results(rows, path)
        back = B.read_results(path)
        assert len(back) == 3
        for a, b in zip(rows, back):
            assert a.key() == b.key()
            assert a.macro_f1_action == b.macro_f1_action
            assert a.macro_f1_verb == b.macro_f1_verb
            assert a.seed == b.seed and a.status == b.status
            if a.cpu is None:
                assert b.cpu is None
            else:
                assert a.cpu.median_cpu_seconds == b.cpu.median_cpu_seconds
                assert a.cpu.p10 == b.cpu.p10 and a.cpu.p90 == b.cpu.p90

    def test_json_round_trip(self, tmp_path):
        rows = [_row(), _row(kind="rgb_seq", f_hp=0.0)]
        path = tmp_path / "results.json"
        B.export_results(rows, path, fmt="json")
        back = B.read_results(path, fmt="json")
        assert [r.key() for r in back] == [r.key() for r in rows]

    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        B.export_results([], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0] == ",".join(B.CSV_COLUMNS)

    def test_sixteen_rows_seventeen_lines(self, tmp_path):
        rows = [
            _row(f_rgb=f_rgb, f_hp=f_hp)
            for f_rgb in (1.0, 3.0, 10.0, 30.0)
            for f_hp in (1.0, 3.0, 10.0, 30.0)
        ]
        path = tmp_path / "grid.csv"
        B.export_results(rows, path)
        assert len(path.read_text().splitlines()) == 17

    def test_unknown_format(self, tmp_path):
        with pytest.raises(MetricError):
            B.export_results([], tmp_path / "x.bin", fmt="parquet")


class TestGridValidation:
    def test_rgb_seq_requires_zero_hp(self):
        with pytest.raises(ConfigError):
            B.validate_grid_point("rgb_seq", 30.0, 30.0)
        B.validate_grid_point("rgb_seq", 30.0, 0.0)

    def test_multimodal_requires_hp(self):
        for kind in ("mm_tmlp", "fusionnet", "hp_mlp"):
            with pytest.raises(ConfigError):
                B.validate_grid_point(kind, 30.0, 0.0)
            B.validate_grid_point(kind, 30.0, 10.0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            B.validate_grid_point("cnn", 30.0, 30.0)


class TestRunSweep:
    @pytest.fixture()
    def sweep_env(self, tiny_prepared):
        prepared, meta = tiny_prepared
        train, val = prepared[:3], prepared[3:]
        cfg = M.ModelConfig(
            d_rgb=16, d_hp=8, hp_hidden=12, head_hidden=16,
            reference=M.ReferenceExtractorConfig(image_size=16, patch_size=8, hidden=8),
            temporal=M.TemporalMlpConfig(depth=1),
        )
        tcfg = M.TrainConfig(epochs=2, batch_size=8, lr=1e-3, seed=0)
        rates = RateConfig(30, 30, 30, 2.0)
        return train, val, meta, cfg, tcfg, rates

    def test_smoke_row(self, sweep_env):
        train, val, meta, cfg, tcfg, rates = sweep_env
        grid = [B.SweepPoint("rgb_seq", 30.0, 0.0)]
        rows = B.run_sweep(
            grid, train, val, meta, cfg, tcfg, rates, stride=15, seed=0,
            bench=B.BenchConfig(reps=5, warmup=1),
        )
        assert len(rows) == 1
        row = rows[0]
        assert row.status == "ok"
        assert 0.0 <= row.macro_f1_action <= 1.0
        assert row.cpu.median_cpu_seconds > 0

    def test_deterministic_f1(self, sweep_env):
        train, val, meta, cfg, tcfg, rates = sweep_env
        grid = [B.SweepPoint("mm_tmlp", 30.0, 30.0), B.SweepPoint("rgb_seq", 30.0, 0.0)]
        kwargs = dict(bench=B.BenchConfig(enabled=False))
        a = B.run_sweep(grid, train, val, meta, cfg, tcfg, rates, 15, 0, **kwargs)
        b = B.run_sweep(grid, train, val, meta, cfg, tcfg, rates, 15, 0, **kwargs)
        assert [r.macro_f1_action for r in a] == [r.macro_f1_action for r in b]
        assert [r.macro_f1_verb for r in a] == [r.macro_f1_verb for r in b]

    def test_completed_points_skipped(self, sweep_env):
        train, val, meta, cfg, tcfg, rates = sweep_env
        grid = [B.SweepPoint("rgb_seq", 30.0, 0.0), B.SweepPoint("hp_mlp", 30.0, 30.0)]
        rows = B.run_sweep(
            grid, train, val, meta, cfg, tcfg, rates, 15, 0,
            bench=B.BenchConfig(enabled=False),
            completed={("rgb_seq", 30.0, 0.0)},
        )
        assert [r.model_kind for r in rows] == ["hp_mlp"]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_row_marked_failed(self, sweep_env):
        train, val, meta, cfg, tcfg, rates = sweep_env
        from dataclasses import replace

        grid = [B.SweepPoint("rgb_seq", 30.0, 0.0)]
        rows = B.run_sweep(
            grid, train, val, meta, cfg, replace(tcfg, lr=1e200), rates, 15, 0,
            bench=B.BenchConfig(enabled=False),
        )
        assert rows[0].status == "failed"
        assert rows[0].macro_f1_action is None

    def test_empty_grid_rejected(self, sweep_env):
        train, val, meta, cfg, tcfg, rates = sweep_env
        with pytest.raises(ConfigError):
            B.run_sweep([], train, val, meta, cfg, tcfg, rates, 15, 0)
