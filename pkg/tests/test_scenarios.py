import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridsurrogate.grid import build_admittance, bundled_feeder
from gridsurrogate.powerflow import LoadVector, VoltageState, mismatch
from gridsurrogate.scenarios import (
    DatasetGenerationError,
    NoiseSpec,
    SamplingSpec,
    build_dataset,
    dataset_hash,
    inject_noise,
    load_dataset,
    nominal_sampling_spec,
    sample_scenarios,
    save_dataset,
    split_counts,
)


@pytest.fixture(scope="module")
def ds15(feeder15):
    spec = nominal_sampling_spec(feeder15, seed=0)
    return build_dataset(feeder15, sample_scenarios(spec), 512, seed=0)


class TestSampling:
    def test_apparent_power_identity(self):
        spec = SamplingSpec(np.array([1.0, 0.5, 2.0]), np.array([0.9, 0.8, 0.95]), pool_size=2000, seed=1)
        pool = sample_scenarios(spec)
        s = pool.p_d / spec.base_pf
        np.testing.assert_allclose(pool.p_d**2 + pool.q_d**2, s**2, atol=1e-12)

    def test_unity_power_factor(self):
        pool = sample_scenarios(SamplingSpec(np.array([1.0, 1.0]), np.array([1.0, 0.9]), pool_size=500))
        assert np.all(pool.q_d[:, 0] == 0.0)
        assert np.all(pool.q_d[:, 1] > 0.0)

    def test_sample_statistics(self):
        pool = sample_scenarios(SamplingSpec(np.ones(3), np.ones(3), pool_size=5000, seed=0))
        s = pool.p_d
        assert np.all(np.abs(s.mean(axis=0) - 1.0) <= 0.02)
        assert np.all(np.abs(s.std(axis=0) - 0.30) <= 0.02)
        assert np.all(s > 0)

    def test_deterministic(self):
        spec = SamplingSpec(np.ones(4), np.full(4, 0.9), seed=5)
        a, b = sample_scenarios(spec), sample_scenarios(spec)
        assert np.array_equal(a.p_d, b.p_d) and np.array_equal(a.q_d, b.q_d)

    def test_heavy_spread_redraws_non_positive(self):
        pool = sample_scenarios(SamplingSpec(np.ones(5), np.ones(5), rel_std=1.0, pool_size=3000))
        assert np.all(pool.p_d > 0)

    @pytest.mark.parametrize("kw", [{"rel_std": 0.0}, {"base_pf": np.array([1.2])}, {"base_s": np.array([-1.0])}])
    def test_invalid_spec(self, kw):
        args = {"base_s": np.array([1.0]), "base_pf": np.array([0.9])}
        args.update(kw)
        with pytest.raises(ValueError):
            SamplingSpec(**args)

    def test_nominal_point_hits_target(self, feeder15):
        from gridsurrogate.powerflow import solve_newton_raphson

        spec = nominal_sampling_spec(feeder15, seed=0)
        p = spec.base_s * spec.base_pf
        sol = solve_newton_raphson(feeder15, LoadVector(p, np.sqrt(spec.base_s**2 - p**2)))
        assert sol.state.v.min() == pytest.approx(0.95, abs=1e-6)


class TestSplits:
    def test_paper_counts(self):
        assert split_counts(512) == (204, 103, 205)

    @given(st.integers(1, 10_000))
    def test_counts_add_up(self, n):
        tr, va, te = split_counts(n)
        assert tr + va + te == n and min(tr, va, te) >= 0
        assert abs(tr - 0.4 * n) < 1 and abs(te - 0.4 * n) <= 0.5

    def test_dataset_split(self, ds15):
        assert ds15.split_sizes() == (204, 103, 205)


class TestBuildDataset:
    def test_rows_satisfy_power_flow(self, ds15, feeder15):
        Y = build_admittance(feeder15)
        V = np.ones((len(ds15), 15), dtype=complex)
        V[:, feeder15.load_buses] = ds15.mu + 1j * ds15.omega
        loads = LoadVector(ds15.p_d[0], ds15.q_d[0])
        res = [mismatch(Y, feeder15, LoadVector(ds15.p_d[k], ds15.q_d[k]), VoltageState.from_phasor(V[k])) for k in range(len(ds15))]
        assert max(res) <= 1e-8
        assert len(loads) == 14

    def test_deterministic(self, feeder15, ds15):
        spec = nominal_sampling_spec(feeder15, seed=0)
        again = build_dataset(feeder15, sample_scenarios(spec), 512, seed=0)
        assert dataset_hash(again) == dataset_hash(ds15)

    def test_parallel_matches_serial(self, feeder15):
        pool = sample_scenarios(nominal_sampling_spec(feeder15, seed=1))
        a = build_dataset(feeder15, pool, 40, seed=3)
        b = build_dataset(feeder15, pool, 40, seed=3, jobs=2)
        assert dataset_hash(a) == dataset_hash(b)

    def test_too_many_failures(self, feeder15):
        spec = nominal_sampling_spec(feeder15, seed=0).scaled(40.0)
        with pytest.raises(DatasetGenerationError):
            build_dataset(feeder15, sample_scenarios(spec), 50, seed=0)

    def test_points_beyond_pool(self, feeder15):
        spec = SamplingSpec(np.full(14, 1e-3), np.full(14, 0.9), pool_size=10)
        with pytest.raises(ValueError):
            build_dataset(feeder15, sample_scenarios(spec), 11, seed=0)

    def test_limit_training_keeps_val_test(self, ds15):
        small = ds15.limit_training(50)
        assert small.split_sizes() == (50, 103, 205)
        np.testing.assert_array_equal(small.x[small.rows("test")], ds15.x[ds15.rows("test")])


class TestNoise:
    def test_zero_level_is_identity(self, ds15):
        out = inject_noise(ds15, NoiseSpec(0.0))
        assert np.array_equal(out.x, ds15.x) and np.array_equal(out.y, ds15.y)

    def test_bounds_and_untouched_splits(self, ds15):
        out = inject_noise(ds15, NoiseSpec(0.10, seed=2))
        tr = ds15.rows("train")
        assert np.max(np.abs(out.x[tr] - ds15.x[tr])) <= 1.0
        assert np.max(np.abs(out.y[tr] - ds15.y[tr])) <= 0.1
        for name in ("val", "test"):
            idx = ds15.rows(name)
            assert np.array_equal(out.x[idx], ds15.x[idx]) and np.array_equal(out.y[idx], ds15.y[idx])

    def test_half_level_halves_range(self, feeder15):
        # 10^4 perturbations per level: empirical maxima sit near the bounds
        from gridsurrogate.scenarios import Dataset

        n = 10_000 // 28 + 1
        base = Dataset(np.zeros((n, 28)), np.zeros((n, 28)), np.zeros(n, dtype=np.int8), np.arange(1, 15))
        full = inject_noise(base, NoiseSpec(0.10, seed=4))
        half = inject_noise(base, NoiseSpec(0.05, seed=4))
        assert np.abs(half.x).max() == pytest.approx(0.5, abs=0.01)
        assert np.abs(full.x).max() == pytest.approx(1.0, abs=0.01)
        assert np.abs(half.y).max() == pytest.approx(0.05, abs=0.001)
        # independent signs on inputs and labels
        assert 0.45 < np.mean(np.sign(half.x) == np.sign(half.y)) < 0.55

    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            NoiseSpec(0.2)

    @settings(max_examples=10, deadline=None)
    @given(level=st.floats(0.0, 0.10), seed=st.integers(0, 1000))
    def test_noise_bound_property(self, ds15, level, seed):
        out = inject_noise(ds15, NoiseSpec(level, seed=seed))
        assert np.max(np.abs(out.x - ds15.x)) <= level * 10 + 1e-12


class TestDatasetFiles:
    def test_round_trip(self, ds15, tmp_path):
        side = save_dataset(ds15, tmp_path / "d.csv")
        back = load_dataset(tmp_path / "d.csv")
        assert dataset_hash(back) == dataset_hash(ds15)
        assert side.exists()
        header = (tmp_path / "d.csv").read_text().splitlines()[0].split(",")
        assert header[:2] == ["p_d_1", "p_d_2"] and header[-1] == "omega_14"

    def test_sidecar_records_stats(self, ds15, tmp_path):
        import json

        save_dataset(ds15, tmp_path / "d.csv")
        side = json.loads((tmp_path / "d.json").read_text())
        mean, std = ds15.input_stats()
        np.testing.assert_allclose(side["normalization"]["x_mean"], mean)
        assert side["meta"]["grid_hash"] == ds15.meta["grid_hash"]
        assert len(side["splits"]["train"]) == 204
