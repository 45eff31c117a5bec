import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arraynigp.errors import InvalidArgumentError
from arraynigp.experiments import (
    ScenarioConfig,
    beta_gap_trend,
    default_config,
    prediction_grid,
    rmse,
    run_array_length_sweep,
    run_beta_sweep,
    run_input_uncertainty_sweep,
    run_single_array_case,
    sample_gp_prior,
    square_path_poses,
)
from arraynigp.gp_core import TrainingSet
from arraynigp.input_noise import fit_model
from arraynigp.kernel import Hyperparameters


class TestRMSE:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355, abs=1e-4)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.randoms())
    def test_permutation_invariant(self, xs, r):
        a = np.array(xs)
        b = a[::-1] + 1.0
        perm = list(range(len(xs)))
        r.shuffle(perm)
        assert rmse(a[perm], b[perm]) == pytest.approx(rmse(a, b), rel=1e-12)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(InvalidArgumentError):
            rmse([], [])


class TestPriorSampling:
    H = Hyperparameters(0.5, 2.0)

    def test_deterministic_and_duplicates(self):
        pts = np.array([0.0, 0.3, 0.0, 1.0])
        a = sample_gp_prior(pts, self.H, 4)
        np.testing.assert_array_equal(a, sample_gp_prior(pts, self.H, 4))
        assert a[0] == a[2]

    def test_leading_subset_stable(self):
        pts = np.linspace(0, 2, 10)
        a = sample_gp_prior(pts, self.H, 11)
        b = sample_gp_prior(np.concatenate([pts, [5.0, 6.0]]), self.H, 11)
        np.testing.assert_allclose(b[:10], a, rtol=0, atol=1e-10)

    def test_single_point(self):
        draws = np.array([sample_gp_prior([0.2], self.H, s)[0] for s in range(2000)])
        assert abs(draws.mean()) < 4 * math.sqrt(2.0 / 2000)

    def test_variance_and_correlation(self):
        pts = [0.0, self.H.length_scale]
        D = np.array([sample_gp_prior(pts, self.H, s) for s in range(10_000)])
        assert D[:, 0].var() == pytest.approx(self.H.signal_variance, rel=0.05)
        assert np.corrcoef(D.T)[0, 1] == pytest.approx(math.exp(-0.5), abs=0.05)

    def test_empty(self):
        assert sample_gp_prior(np.zeros((0, 2)), self.H, 0).shape == (0,)


class TestConfig:
    def test_roundtrip(self):
        cfg = default_config("array_length", mc_runs=3)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_defaults(self):
        cfg = default_config("input_uncertainty")
        assert (cfg.n_centers, cfg.sensors_per_array, cfg.length_scale) == (60, 5, 0.5)
        assert cfg.n_centers * cfg.sensors_per_array == 300
        assert cfg.mc_runs == 100 and cfg.grid_resolution == 200
        beta = default_config("beta_sweep")
        assert beta.timesteps * beta.array_grid[0] * beta.array_grid[1] == 1200

    @pytest.mark.parametrize(
        "kw",
        [
            {"kind": "nope"},
            {"mc_runs": 0},
            {"array_length": -1.0},
            {"sensors_per_array": 0},
            {"methods": ["GP", "Kriging"]},
            {"sigma_x": -0.1},
            {"values": [0.01, -0.2]},
            {"length_scale": 0.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            ScenarioConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(InvalidArgumentError):
            ScenarioConfig.from_dict({"kind": "input_uncertainty", "bogus": 1})

    def test_scalar_sigma_expands(self):
        cfg = default_config("beta_sweep")
        np.testing.assert_array_equal(cfg.noise_model(0.2).sigma_x, 0.2 * np.eye(3))


def _small(kind, **kw):
    base = dict(mc_runs=3, n_centers=20, grid_resolution=40, seed=5)
    base.update(kw)
    return default_config(kind, **base)


class TestInputUncertaintySweep:
    def test_structure_and_collapse(self):
        cfg = _small("input_uncertainty", values=[0.0, 0.01])
        res = run_input_uncertainty_sweep(cfg)
        assert len(res.records) == 2 * 3 * cfg.mc_runs
        assert [len(res.cell(v, m)) for v in res.values for m in res.methods] == [3] * 6
        for run in range(cfg.mc_runs):
            r = {x["method"]: x["rmse"] for x in res.records if x["value"] == 0.0 and x["run"] == run}
            assert r["GP"] == r["NIGP"] == r["ArrayNIGP"]
        rows = res.summary()
        assert len(rows) == 6 and all(row["std_rmse"] >= 0 and row["std_var"] >= 0 for row in rows)

    def test_determinism(self):
        cfg = _small("input_uncertainty", values=[0.02])
        a, b = run_input_uncertainty_sweep(cfg), run_input_uncertainty_sweep(cfg)
        assert a.records == b.records

    def test_cells_independent_of_sweep_values(self):
        a = run_input_uncertainty_sweep(_small("input_uncertainty", values=[0.01]))
        b = run_input_uncertainty_sweep(_small("input_uncertainty", values=[0.05, 0.01]))
        assert a.cell(0.01, "NIGP") == b.cell(0.01, "NIGP")

    def test_workers_match_serial(self):
        cfg = _small("input_uncertainty", values=[0.01], mc_runs=2)
        assert run_input_uncertainty_sweep(cfg, workers=2).records == run_input_uncertainty_sweep(cfg).records

    def test_rejects_multid(self):
        with pytest.raises(InvalidArgumentError):
            run_input_uncertainty_sweep(_small("input_uncertainty", dimension=2, domain=[[0, 1], [0, 1]]))


class TestArrayLengthSweep:
    def test_zero_length_is_point_array(self):
        res = run_array_length_sweep(_small("array_length", values=[0.0, 1.0]))
        assert res.values == [0.0, 1.0]
        assert all(r["converged"] in (True, False) for r in res.records)
        assert all(r["raw_min_variance"] >= -1e-10 for r in res.records)


class TestSingleArray:
    def test_properties(self):
        case = run_single_array_case(default_config("single_array"))
        gp = case.posteriors["GP"].mean
        arr = case.posteriors["ArrayNIGP"].mean
        assert np.max(np.abs(arr - gp)) < 0.05
        span = case.array_span()
        assert span.sum() > 10
        assert np.max(np.abs(arr[span] - case.latent_shifted[span])) < 0.05
        np.testing.assert_allclose(case.noisy_inputs - case.true_inputs, 0.5)

    def test_no_error_interpolates(self):
        # no input error and no assumed input uncertainty: every method interpolates
        cfg = default_config("single_array", input_error=0.0, sigma_x=0.0)
        case = run_single_array_case(cfg)
        train = TrainingSet(case.noisy_inputs, case.outputs)
        for name in ("GP", "NIGP", "ArrayNIGP"):
            fit = fit_model(train, cfg.hyper, name, cfg.noise_model())
            np.testing.assert_allclose(fit.predict(case.noisy_inputs).mean, case.outputs, atol=1e-5)


class TestBeta:
    def test_path(self):
        cfg = default_config("beta_sweep")
        poses = square_path_poses(cfg)
        assert len(poses) == 40
        c = np.array([p.center for p in poses])
        assert np.all(c[:, 2] == cfg.path_height)
        assert np.allclose(np.abs(c[:, :2]).max(), cfg.path_side / 2)

    @pytest.mark.slow
    def test_small_sweep(self):
        cfg = default_config("beta_sweep", mc_runs=1, timesteps=10, grid_resolution=10)
        res = run_beta_sweep(cfg, [0.01, 0.2])
        assert res.methods == ["NIGP", "ArrayNIGP"]
        assert len(res.records) == 4
        assert -1.0 <= beta_gap_trend(res) <= 1.0


def test_prediction_grid():
    g = prediction_grid([[0, 1], [2, 3]], 5)
    assert g.shape == (25, 2)
    assert g.min(axis=0).tolist() == [0, 2] and g.max(axis=0).tolist() == [1, 3]
