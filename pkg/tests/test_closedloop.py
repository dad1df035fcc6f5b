import math

import numpy as np
import pytest

from arrhc.certificates import compute_gamma_hat, compute_rho, find_Nstar, table_for
from arrhc.closedloop import (
    ActuatorState,
    accumulated_cost,
    actuator_step,
    run_closed_loop,
    summarize_trace,
    verify_decay,
    write_trace_csv,
)
from arrhc.errors import CertificateError, DomainError, InfeasibleError, ResilienceViolationError
from arrhc.matrixcore import quad_form
from arrhc.plant import SystemSpec, in_X0, sample_X0, step
from arrhc.replay import AttackSchedule, gen_schedule


@pytest.fixture(scope="module")
def fast_spec():
    return SystemSpec.build(
        [[0.5]], [[1.0]], [[-0.4]],
        P=[[1.0]], Q=[[1.0]], Qbar=[[1.0]], c=1.0, u_max=1.0,
    )


def boundary_x0(spec, frac=0.98, direction=None):
    d = np.ones(spec.n) if direction is None else np.asarray(direction, dtype=float)
    return d * np.sqrt(frac * spec.c / quad_form(d, spec.Pbar))


# --- actuator ---

def test_actuator_fresh_then_attacks():
    plan = np.array([[1.0], [2.0], [3.0]])
    u, st = actuator_step(None, plan, attacked=False, now=5)
    assert u == 1.0 and st.age == 0 and st.created_at == 5
    u, st = actuator_step(st, np.zeros((3, 1)), attacked=True, now=6)
    assert u == 2.0 and st.age == 1
    u, st = actuator_step(st, np.zeros((3, 1)), attacked=True, now=7)
    assert u == 3.0 and st.age == 2


def test_actuator_buffer_exhaustion():
    plan = np.array([[1.0], [2.0]])
    _, st = actuator_step(None, plan, attacked=False, now=0)
    _, st = actuator_step(st, plan, attacked=True, now=1)
    with pytest.raises(ResilienceViolationError):
        actuator_step(st, plan, attacked=True, now=2)


def test_actuator_detects_index_drift():
    from arrhc.errors import NumericsError

    _, st = actuator_step(None, np.ones((4, 1)), attacked=False, now=0)
    with pytest.raises(NumericsError):
        actuator_step(st, np.ones((4, 1)), attacked=True, now=3)


# --- closed loop ---

def test_zero_initial_state(fast_spec):
    sched = gen_schedule("greedy", S=1, T=10)
    trace = run_closed_loop(fast_spec, 4, sched, np.zeros(1))
    assert np.all(trace.states == 0.0) and np.all(trace.inputs == 0.0)
    assert float(np.sum(trace.stage_cost)) == 0.0
    report = verify_decay(trace, trace.gamma)
    assert report.ok and report.max_ratio == 0.0


def test_attack_free_value_decreases(fast_spec):
    sched = gen_schedule("none", S=0, T=25)
    trace = run_closed_loop(fast_spec, 6, sched, np.array([0.8]))
    vals = trace.lyap
    assert all(vals[k + 1] < vals[k] + 1e-12 for k in range(trace.T - 1))
    assert vals[-1] < 1e-6 * vals[0]


def test_attack_free_run_respects_rho_envelope(fast_spec):
    rho = compute_rho(fast_spec, 6)
    assert rho < 1.0
    sched = gen_schedule("none", S=0, T=25)
    trace = run_closed_loop(fast_spec, 6, sched, np.array([0.8]))
    report = verify_decay(trace, rho)
    assert report.ok
    cost = accumulated_cost(trace)
    assert cost.total <= trace.V0 / (1.0 - rho) * (1.0 + 1e-6)


def test_adversarial_run_respects_gamma(fast_spec):
    S = 1
    N = find_Nstar(fast_spec, S) + 1
    sched = gen_schedule("greedy", S=S, T=40)
    trace = run_closed_loop(fast_spec, N, sched, np.array([0.9]))
    report = verify_decay(trace, trace.gamma)
    assert report.ok
    cost = accumulated_cost(trace)
    assert cost.satisfied


def test_trace_replays_dynamics_and_stays_feasible(demo_spec):
    sched = gen_schedule("greedy", S=2, T=30)
    x0 = boundary_x0(demo_spec)
    trace = run_closed_loop(demo_spec, 8, sched, x0)
    for k in range(trace.T - 1):
        np.testing.assert_allclose(
            trace.states[k + 1], step(demo_spec, trace.states[k], trace.inputs[k]), atol=1e-9
        )
        assert in_X0(demo_spec, trace.states[k])[0]
    np.testing.assert_allclose(
        trace.final_state, step(demo_spec, trace.states[-1], trace.inputs[-1]), atol=1e-9
    )


def test_demo_settling_under_attack_horizons(demo_spec):
    x0 = boundary_x0(demo_spec)
    for S in (0, 2, 5):
        sched = (
            gen_schedule("none", S=0, T=80) if S == 0 else gen_schedule("greedy", S=S, T=80)
        )
        trace = run_closed_loop(demo_spec, 15, sched, x0, lyapunov_monitor=False)
        norms = (trace.states**2).sum(axis=1)
        assert norms[-1] < 1e-6 or trace.stopped_early


def test_per_step_ratio_bounds_by_attack_pattern(demo_spec):
    # per-step Lyapunov ratios never exceed the per-case discounts
    S, N = 3, 12
    sched = gen_schedule("periodic_burst", S=S, T=40, period=3)
    x0 = boundary_x0(demo_spec, frac=0.9)
    trace = run_closed_loop(demo_spec, N, sched, x0)
    t = table_for(demo_spec)
    patterns = set()
    for k in range(trace.T - 1):
        th_prev = trace.theta[k - 1] if k > 0 else 0
        th = trace.theta[k]
        patterns.add((th, th_prev))
        ratio = trace.lyap[k + 1] / trace.lyap[k]
        if th == 1 and th_prev == 0:
            bound = t.rho(N - 1)
        elif th == 0 and th_prev == 0:
            bound = t.rho(N)
        elif th == 1 and th_prev == 1:
            bound = t.rho(N - trace.s[k])
        else:
            extra = math.prod(1 + t.alpha(l) for l in range(N - trace.s[k - 1], N))
            bound = t.rho(N) * extra
        assert ratio <= bound * (1.0 + 1e-6), (k, th, th_prev, ratio, bound)
    assert patterns == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_asymptotic_block_contraction(fast_spec):
    # at the starts of idle blocks the monitored value contracts by gamma_hat
    S = 1
    N = 5
    gamma_hat = compute_gamma_hat(fast_spec, N, S)
    assert gamma_hat < 1.0
    sched = gen_schedule("greedy", S=S, T=40)
    trace = run_closed_loop(fast_spec, N, sched, np.array([0.9]))
    starts = [0] + [
        k for k in range(1, trace.T) if trace.theta[k] == 0 and trace.theta[k - 1] == 1
    ]
    vals = [trace.lyap[k] for k in starts]
    for a, b in zip(vals, vals[1:]):
        assert b <= gamma_hat * a * (1.0 + 1e-6)


def test_early_stop(demo_spec):
    sched = gen_schedule("none", S=0, T=2000)
    trace = run_closed_loop(demo_spec, 10, sched, boundary_x0(demo_spec), lyapunov_monitor=False)
    assert trace.stopped_early and trace.T < 200


def test_monitor_off_marks_nan(fast_spec):
    sched = gen_schedule("greedy", S=1, T=8)
    trace = run_closed_loop(fast_spec, 4, sched, np.array([0.5]), lyapunov_monitor=False)
    assert np.all(np.isnan(trace.lyap))
    with pytest.raises(DomainError):
        verify_decay(trace, 0.9)


def test_guards(fast_spec, demo_spec):
    with pytest.raises(DomainError):
        run_closed_loop(fast_spec, 2, gen_schedule("greedy", S=2, T=10), np.array([0.5]))
    with pytest.raises(InfeasibleError):
        run_closed_loop(demo_spec, 8, gen_schedule("none", S=0, T=5), np.array([50.0, 0.0]))
    sched = gen_schedule("greedy", S=1, T=8)
    trace = run_closed_loop(fast_spec, 2, sched, np.array([0.5]))
    assert math.isnan(trace.gamma)  # N = S + 1 < S + 2: no rate defined
    with pytest.raises(CertificateError):
        accumulated_cost(trace)


# --- persistence ---

def test_csv_determinism_and_layout(tmp_path, fast_spec):
    sched = gen_schedule("random", S=2, T=30, seed=11)
    a = run_closed_loop(fast_spec, 5, sched, np.array([0.7]))
    b = run_closed_loop(fast_spec, 5, sched, np.array([0.7]))
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace_csv(a, pa)
    write_trace_csv(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    header = pa.read_text().splitlines()[0]
    assert header == "k,theta,s,x_1,u_1,lyap,stage_cost,envelope"


def test_summary_contents(fast_spec):
    S = 1
    N = find_Nstar(fast_spec, S) + 1
    sched = gen_schedule("greedy", S=S, T=30)
    trace = run_closed_loop(fast_spec, N, sched, np.array([0.8]))
    summary = summarize_trace(trace, Nstar=N - 1)
    assert summary["decay_ok"] is True and summary["cost_ok"] is True
    assert summary["Nstar"] == N - 1
    assert summary["total_cost"] <= summary["cost_bound"] * (1 + 1e-6)
