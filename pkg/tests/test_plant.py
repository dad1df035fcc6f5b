import json

import numpy as np
import pytest

from conftest import DEMO_SPEC_PATH, unit_ellipsoid_spec
from arrhc.errors import DomainError, InfeasibleError, InstabilityError
from arrhc.matrixcore import quad_form, spectral_radius
from arrhc.plant import (
    SystemSpec,
    aux_rollout,
    in_X0,
    load_system_spec,
    max_aux_input_over_X0,
    sample_X0,
    step,
)


def raw_spec(**overrides):
    """Unvalidated SystemSpec for arithmetic-only operation tests."""
    fields = dict(
        A=np.eye(2), B=np.zeros((2, 1)), K=np.zeros((1, 2)),
        P=np.eye(2), Q=np.eye(1), Qbar=np.eye(2), c=1.0, u_max=1.0,
        Pbar=np.eye(2), Pbar_inv=np.eye(2), Abar=np.eye(2),
    )
    fields.update(overrides)
    return SystemSpec(**fields)


# --- step ---

def test_step_zero(demo_spec):
    np.testing.assert_array_equal(step(demo_spec, np.zeros(2), np.zeros(1)), np.zeros(2))


def test_step_identity_dynamics():
    spec = raw_spec()
    x = np.array([0.3, -0.7])
    np.testing.assert_array_equal(step(spec, x, np.array([5.0])), x)


def test_step_demo_matrices(demo_spec):
    np.testing.assert_allclose(step(demo_spec, np.array([1.0, 0.0]), np.array([1.0])), [4.0, 2.0])


def test_step_dimension_mismatch(demo_spec):
    with pytest.raises(DomainError):
        step(demo_spec, np.zeros(3), np.zeros(1))


# --- in_X0 ---

def test_in_X0_origin(demo_spec):
    inside, margin = in_X0(demo_spec, np.zeros(2))
    assert inside and margin == pytest.approx(demo_spec.c)


def test_in_X0_outside_unit_ball():
    spec = unit_ellipsoid_spec(c=1.0)
    inside, margin = in_X0(spec, np.array([2.0, 0.0]))
    assert not inside
    assert margin == pytest.approx(-3.0)


def test_in_X0_boundary_point(demo_spec):
    x = np.array([1.0, 1.0])
    x *= np.sqrt(demo_spec.c / quad_form(x, demo_spec.Pbar))
    inside, margin = in_X0(demo_spec, x)
    assert inside
    assert abs(margin) < 1e-9


# --- aux_rollout ---

def test_aux_rollout_zero(demo_spec):
    states, inputs = aux_rollout(demo_spec, np.zeros(2), 4)
    assert not states.any() and not inputs.any()


def test_aux_rollout_scalar_powers(scalar_spec):
    states, inputs = aux_rollout(scalar_spec, np.array([1.0]), 3)
    np.testing.assert_allclose(states[:, 0], [1.0, 0.25, 0.0625, 0.015625], rtol=1e-14)
    np.testing.assert_allclose(inputs[:, 0], -0.25 * states[:3, 0], rtol=1e-14)


def test_aux_rollout_lyapunov_decrease(demo_spec):
    rng = np.random.default_rng(5)
    for x in sample_X0(demo_spec, 20, rng):
        states, _ = aux_rollout(demo_spec, x, 10)
        w = [quad_form(s, demo_spec.Pbar) for s in states]
        assert all(w[t + 1] <= w[t] + 1e-12 for t in range(10))


def test_aux_rollout_rejects_outside_seed():
    spec = unit_ellipsoid_spec(c=1.0)
    with pytest.raises(InfeasibleError):
        aux_rollout(spec, np.array([3.0, 0.0]), 2)


# --- max_aux_input_over_X0 ---

def test_max_aux_input_unit_ball():
    spec = raw_spec(K=np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(max_aux_input_over_X0(spec), [1.0])


def test_max_aux_input_scaled():
    spec = raw_spec(K=np.array([[3.0, 4.0]]), c=4.0)
    np.testing.assert_allclose(max_aux_input_over_X0(spec), [10.0])


def test_max_aux_input_monte_carlo_oracle(demo_spec):
    rng = np.random.default_rng(17)
    bound = max_aux_input_over_X0(demo_spec)[0]
    pts = sample_X0(demo_spec, 100_000, rng, boundary=True)
    vals = np.abs(pts @ demo_spec.K[0])
    assert np.max(vals) <= bound * (1 + 1e-9)          # zero violations
    assert np.max(vals) >= bound * 0.999               # and the bound is tight


# --- invariants ---

def test_forward_invariance(demo_spec):
    rng = np.random.default_rng(23)
    for x in sample_X0(demo_spec, 500, rng):
        u = demo_spec.K @ x
        assert np.max(np.abs(u)) <= demo_spec.u_max
        assert in_X0(demo_spec, step(demo_spec, x, u))[0]


def test_lyapunov_difference_identity(demo_spec):
    rng = np.random.default_rng(29)
    for x in rng.normal(size=(50, 2)) * 3.0:
        drop = quad_form(demo_spec.Abar @ x, demo_spec.Pbar) - quad_form(x, demo_spec.Pbar)
        assert drop == pytest.approx(-quad_form(x, demo_spec.Qbar), abs=1e-9)


def test_demo_spec_is_repaired(demo_spec):
    assert demo_spec.repaired
    np.testing.assert_allclose(demo_spec.K_requested, [[-3.25, -3.0]])
    assert spectral_radius(demo_spec.Abar) < 1.0
    residual = np.max(np.abs(
        demo_spec.Abar.T @ demo_spec.Pbar @ demo_spec.Abar - demo_spec.Pbar + demo_spec.Qbar
    ))
    assert residual <= 1e-9


def test_unrepaired_load_raises():
    with pytest.raises(InstabilityError):
        load_system_spec(DEMO_SPEC_PATH, repair=False)


# --- construction and serialization ---

def test_build_rejects_bad_weights():
    with pytest.raises(DomainError):
        SystemSpec.build([[0.5]], [[1.0]], [[-0.25]],
                         P=[[-1.0]], Q=[[1.0]], Qbar=[[1.0]], c=1.0, u_max=1.0)
    with pytest.raises(DomainError):
        SystemSpec.build([[0.5]], [[1.0]], [[-0.25]],
                         P=[[1.0]], Q=[[1.0]], Qbar=[[1.0]], c=-1.0, u_max=1.0)


def test_build_checks_aux_input_bound():
    # |K| sqrt(c / Pbar) = 0.25 * sqrt(1.2 * 15 / 16) > 0.2 violates the box
    with pytest.raises(DomainError):
        SystemSpec.build([[0.5]], [[1.0]], [[-0.25]],
                         P=[[1.0]], Q=[[1.0]], Qbar=[[1.0]], c=1.2, u_max=0.2)
    SystemSpec.build([[0.5]], [[1.0]], [[-0.25]],
                     P=[[1.0]], Q=[[1.0]], Qbar=[[1.0]], c=1.2, u_max=0.2, strict=False)


def test_json_round_trip(tmp_path, demo_spec):
    path = tmp_path / "spec.json"
    demo_spec.save(path)
    data = json.loads(path.read_text())
    assert data["K"] == [[-3.25, -3.0]]   # the requested gain is what persists
    data["Pbar"] = [[1.0, 0.0], [0.0, 1.0]]  # must be ignored on load
    reloaded = load_system_spec(data, repair=True)
    np.testing.assert_allclose(reloaded.Pbar, demo_spec.Pbar, atol=1e-12)
    np.testing.assert_allclose(reloaded.K, demo_spec.K, atol=1e-12)


def test_sample_X0_inside(demo_spec):
    rng = np.random.default_rng(31)
    pts = sample_X0(demo_spec, 1000, rng)
    w = np.einsum("ki,ij,kj->k", pts, demo_spec.Pbar, pts)
    assert np.all(w <= demo_spec.c * (1 + 1e-12))
