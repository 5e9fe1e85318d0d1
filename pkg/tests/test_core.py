"""Error-model forward/inverse application and the velocity series types."""
import numpy as np
import pytest

from dvlcal.core import (
    DataError,
    EmKind,
    ErrorModel,
    VelocitySeries,
    apply_error_model,
    check_rotation,
    correct,
    correct_series,
    rotation_from_euler,
    subtract_input,
)


def random_rotation(rng):
    return rotation_from_euler(*rng.uniform(-np.pi, np.pi, 3))


def random_error_model(rng):
    kind = rng.choice(list(EmKind))
    if kind == EmKind.EM1:
        return ErrorModel.scalar_scale(rng.uniform(-0.5, 0.5))
    if kind == EmKind.EM2:
        return ErrorModel.vector_scale(rng.uniform(-0.5, 0.5, 3))
    if kind == EmKind.EM3:
        return ErrorModel.scalar_bias(rng.uniform(-1.0, 1.0))
    return ErrorModel.vector_bias(rng.uniform(-1.0, 1.0, 3))


class TestApplyErrorModel:
    def test_identity_case(self):
        out = apply_error_model([1.0, 0.0, 0.0], ErrorModel.scalar_scale(0.0))
        assert np.allclose(out, [1.0, 0.0, 0.0], atol=0.0)

    def test_scalar_scale_hand_expansion(self):
        # (1 + 0.005) * 2 = 2.01 on the x axis, zero elsewhere
        out = apply_error_model([2.0, 0.0, 0.0], ErrorModel.scalar_scale(0.005))
        assert np.allclose(out, [2.01, 0.0, 0.0], rtol=0.0, atol=1e-15)

    def test_vector_bias_hand_expansion(self):
        out = apply_error_model([1.0, 1.0, 1.0], ErrorModel.vector_bias([0.007] * 3))
        assert np.allclose(out, [1.007, 1.007, 1.007], rtol=0.0, atol=1e-15)

    def test_caller_supplied_noise(self):
        out = apply_error_model([1.0, 2.0, 3.0], ErrorModel.scalar_bias(0.5), noise=[0.1, 0.0, -0.1])
        assert np.allclose(out, [1.6, 2.5, 3.4])

    def test_non_finite_input_rejected(self):
        with pytest.raises(DataError):
            apply_error_model([np.nan, 0.0, 0.0], ErrorModel.scalar_scale(0.0))
        with pytest.raises(DataError):
            apply_error_model([1.0, 0.0, 0.0], ErrorModel.scalar_scale(0.0), noise=[np.inf, 0, 0])

    def test_linearity_in_v_when_bias_free(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k = rng.uniform(-0.5, 0.5, 3)
            em = ErrorModel.vector_scale(k)
            r = random_rotation(rng)
            v = rng.normal(size=3)
            alpha = rng.uniform(-3, 3)
            lhs = apply_error_model(alpha * v, em, r)
            rhs = alpha * apply_error_model(v, em, r)
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


class TestCorrect:
    def test_round_trip_all_kinds(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            em = random_error_model(rng)
            r = random_rotation(rng)
            v = rng.uniform(-5, 5, 3)
            v_meas = apply_error_model(v, em, r)
            back = correct(v_meas, em, r)
            assert np.allclose(back, v, rtol=1e-12, atol=1e-13)

    def test_inverse_of_scalar_scale_example(self):
        out = correct([2.01, 0.0, 0.0], ErrorModel.scalar_scale(0.005))
        assert np.allclose(out, [2.0, 0.0, 0.0], rtol=1e-15)

    def test_inverse_of_vector_bias_example(self):
        out = correct([1.007, 1.007, 1.007], ErrorModel.vector_bias([0.007] * 3))
        assert np.allclose(out, [1.0, 1.0, 1.0], rtol=1e-15)

    def test_degenerate_scale_rejected(self):
        em = ErrorModel.scalar_scale(-1.0 + 1e-9)
        with pytest.raises(DataError, match="degenerate"):
            correct([1.0, 0.0, 0.0], em)

    def test_correct_series_matches_scalar_correct(self):
        rng = np.random.default_rng(3)
        em = ErrorModel.vector_scale([0.1, -0.2, 0.3])
        r = random_rotation(rng)
        vs = rng.normal(size=(20, 3))
        batch = correct_series(vs, em, r)
        for i in range(20):
            assert np.allclose(batch[i], correct(vs[i], em, r), rtol=1e-14)


class TestScalarVectorEquivalence:
    def test_em1_equals_uniform_em2(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = rng.uniform(-0.5, 0.5)
            v = rng.normal(size=3)
            r = random_rotation(rng)
            em1, em2 = ErrorModel.scalar_scale(k), ErrorModel.vector_scale([k] * 3)
            f1, f2 = apply_error_model(v, em1, r), apply_error_model(v, em2, r)
            assert np.allclose(f1, f2, rtol=0.0, atol=1e-15)
            assert np.allclose(correct(f1, em1, r), correct(f2, em2, r), rtol=0.0, atol=1e-15)

    def test_em3_equals_uniform_em4(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            b = rng.uniform(-1, 1)
            v = rng.normal(size=3)
            em3, em4 = ErrorModel.scalar_bias(b), ErrorModel.vector_bias([b] * 3)
            f3, f4 = apply_error_model(v, em3), apply_error_model(v, em4)
            assert np.allclose(f3, f4, rtol=0.0, atol=1e-15)
            assert np.allclose(correct(f3, em3), correct(f4, em4), rtol=0.0, atol=1e-15)


class TestErrorModelType:
    def test_payload_arity_enforced(self):
        with pytest.raises(DataError):
            ErrorModel(EmKind.EM1, np.array([0.1, 0.2, 0.3]))
        with pytest.raises(DataError):
            ErrorModel(EmKind.EM4, np.array([0.1]))

    def test_scale_bound_enforced(self):
        with pytest.raises(DataError):
            ErrorModel.scalar_scale(-1.0)
        with pytest.raises(DataError):
            ErrorModel.vector_scale([0.1, -1.5, 0.0])

    def test_absent_terms_are_exact_zero(self):
        assert np.all(ErrorModel.scalar_scale(0.01).bias_vector == 0.0)
        assert np.all(ErrorModel.vector_bias([1, 2, 3]).scale_vector == 0.0)

    def test_output_dims(self):
        assert EmKind.EM1.output_dim == 1
        assert EmKind.EM2.output_dim == 3
        assert EmKind.EM3.output_dim == 1
        assert EmKind.EM4.output_dim == 3


class TestRotation:
    def test_norm_preserved(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            r = check_rotation(random_rotation(rng))
            v = rng.normal(size=3)
            assert abs(np.linalg.norm(r @ v) - np.linalg.norm(v)) < 1e-12

    def test_non_orthonormal_rejected(self):
        with pytest.raises(DataError):
            check_rotation(np.eye(3) * 1.001)

    def test_reflection_rejected(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(DataError):
            check_rotation(m)


class TestVelocitySeries:
    def test_subtract_equal_inputs(self):
        s = VelocitySeries(t=[0.0], v_dvl=[[1, 2, 3]], v_gnss=[[1, 2, 3]])
        assert np.all(subtract_input(s) == 0.0)

    def test_subtract_componentwise(self):
        s = VelocitySeries(t=[0.0], v_dvl=[[2.01, 0, 0]], v_gnss=[[2.0, 0, 0]])
        assert np.allclose(subtract_input(s), [[0.01, 0, 0]], rtol=0, atol=1e-15)

    def test_subtract_preserves_length_and_order(self):
        rng = np.random.default_rng(1)
        for n in (1, 2, 17, 100):
            vd = rng.normal(size=(n, 3))
            vg = rng.normal(size=(n, 3))
            s = VelocitySeries(t=np.arange(n, dtype=float), v_dvl=vd, v_gnss=vg)
            out = subtract_input(s)
            assert out.shape == (n, 3)
            assert np.array_equal(out, vd - vg)

    def test_empty_series_rejected(self):
        with pytest.raises(DataError):
            VelocitySeries(t=np.array([]), v_dvl=np.zeros((0, 3)), v_gnss=np.zeros((0, 3)))

    def test_time_monotonicity_enforced(self):
        with pytest.raises(DataError):
            VelocitySeries(t=[0.0, 0.0], v_dvl=np.zeros((2, 3)), v_gnss=np.zeros((2, 3)))
        with pytest.raises(DataError):
            VelocitySeries(t=[-1.0, 0.0], v_dvl=np.zeros((2, 3)), v_gnss=np.zeros((2, 3)))

    def test_windows_by_time(self):
        n = 200
        s = VelocitySeries(
            t=np.arange(n, dtype=float), v_dvl=np.ones((n, 3)), v_gnss=np.ones((n, 3))
        )
        head = s.first_seconds(100.0)
        tail = s.from_seconds(100.0)
        assert len(head) == 100 and head.t[-1] == 99.0
        assert len(tail) == 100 and tail.t[0] == 100.0

    def test_arrays_read_only(self):
        s = VelocitySeries(t=[0.0], v_dvl=[[1, 2, 3]], v_gnss=[[0, 0, 0]])
        with pytest.raises(ValueError):
            s.v_dvl[0, 0] = 9.0
