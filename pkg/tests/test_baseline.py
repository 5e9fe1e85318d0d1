"""Norm-ratio scale estimation against a re-computation oracle."""
import numpy as np
import pytest

from dvlcal.baseline import baseline_calibrate, estimate_scale_direct
from dvlcal.core import DataError, EmKind, VelocitySeries, correct_series, rotation_from_euler
from dvlcal.simulate import DvlConfig, GnssConfig, TrajectorySpec, simulate_pair


def ratio_oracle(v_dvl, v_gnss, r):
    """Scripted re-computation: mean over epochs of ||dvl|| / ||R gnss|| - 1."""
    total = 0.0
    for d, g in zip(v_dvl, v_gnss):
        total += np.sqrt(np.sum(d * d)) / np.sqrt(np.sum((r @ g) ** 2)) - 1.0
    return total / len(v_dvl)


def make_series(v_dvl, v_gnss):
    n = len(v_dvl)
    return VelocitySeries(t=np.arange(n, dtype=float), v_dvl=v_dvl, v_gnss=v_gnss)


class TestEstimateScaleDirect:
    def test_noise_free_scalar_scale_recovered(self):
        traj = TrajectorySpec([1.8, 0.0, 0.0], 100.0)
        series = simulate_pair(traj, DvlConfig(scale=0.01), GnssConfig(0.0), seed=0)
        est = estimate_scale_direct(series)
        assert abs(est.k_bar - 0.01) < 1e-12
        assert len(est.per_epoch) == 100
        assert abs(est.k_bar - est.per_epoch.mean()) < 1e-15

    def test_equal_inputs_give_zero(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(30, 3)) + [2, 0, 0]
        est = estimate_scale_direct(make_series(v, v))
        assert est.k_bar == 0.0

    def test_matches_ratio_oracle_on_noisy_series(self):
        rng = np.random.default_rng(1)
        r = rotation_from_euler(0.2, -0.1, 0.5)
        v_gnss = rng.normal(size=(64, 3)) + [2, 0, 0]
        v_dvl = rng.normal(size=(64, 3)) + [2, 0, 0]
        est = estimate_scale_direct(make_series(v_dvl, v_gnss), r)
        assert abs(est.k_bar - ratio_oracle(v_dvl, v_gnss, r)) < 1e-12

    def test_near_zero_gnss_speed_aborts_naming_epoch(self):
        v = np.tile([2.0, 0.0, 0.0], (5, 1))
        g = v.copy()
        g[3] = [0.0, 0.0, 0.0]
        with pytest.raises(DataError, match="epoch 3"):
            estimate_scale_direct(make_series(v, g))

    def test_scale_equivariance(self):
        # multiplying every v_dvl by (1 + a) maps k_t to (1+a)(1+k_t) - 1
        rng = np.random.default_rng(2)
        v_gnss = rng.normal(size=(40, 3)) + [2, 0, 0]
        v_dvl = rng.normal(size=(40, 3)) + [2, 0, 0]
        alpha = 0.25
        base = estimate_scale_direct(make_series(v_dvl, v_gnss))
        shifted = estimate_scale_direct(make_series((1 + alpha) * v_dvl, v_gnss))
        assert np.allclose(
            shifted.per_epoch, (1 + alpha) * (1 + base.per_epoch) - 1, rtol=1e-12, atol=1e-14
        )

    def test_rotation_invariance_of_norms(self):
        rng = np.random.default_rng(3)
        v_gnss = rng.normal(size=(25, 3)) + [2, 0, 0]
        v_dvl = rng.normal(size=(25, 3)) + [2, 0, 0]
        q = rotation_from_euler(*rng.uniform(-np.pi, np.pi, 3))
        plain = estimate_scale_direct(make_series(v_dvl, v_gnss))
        # shared rotation applied to v_dvl and to (R v_gnss) leaves norms alone
        rotated = estimate_scale_direct(make_series(v_dvl @ q.T, v_gnss @ q.T))
        assert abs(plain.k_bar - rotated.k_bar) < 1e-12


class TestBaselineCalibrate:
    def test_scale_only_correction_recovers_gnss_truth(self):
        traj = TrajectorySpec([2.0, -0.08, -0.01], 100.0)
        series = simulate_pair(traj, DvlConfig(scale=0.008), GnssConfig(0.0), seed=0)
        em = baseline_calibrate(series)
        assert em.kind is EmKind.EM1
        corrected = correct_series(series.v_dvl, em)
        assert np.allclose(corrected, traj.v_gt, rtol=0, atol=1e-12)

    def test_pure_bias_absorbed_as_pseudo_scale(self):
        # constant velocity-level bias shows up as ||v + d|| / ||v|| - 1
        v = np.array([2.0, 0.0, 0.0])
        delta = np.array([0.0, 0.0, 0.05])
        series = make_series(np.tile(v + delta, (50, 1)), np.tile(v, (50, 1)))
        em = baseline_calibrate(series)
        expected = np.linalg.norm(v + delta) / np.linalg.norm(v) - 1.0
        assert abs(em.value[0] - expected) < 1e-12
        assert em.value[0] > 0.0

    def test_windowing_uses_exactly_100_epochs(self):
        traj = TrajectorySpec([2.0, 0.0, 0.0], 200.0)
        series = simulate_pair(traj, DvlConfig(scale=0.005), GnssConfig(0.0), seed=0)
        window = series.first_seconds(100.0)
        assert len(window) == 100
        est = estimate_scale_direct(window)
        assert len(est.per_epoch) == 100
        assert abs(est.window_seconds - 100.0) < 1e-12
