"""Walk through the plant model and the horizon solver on the bundled example.

The bundled two-state plant is open-loop unstable and ships with a gain
that fails to stabilize it; loading with repair enabled synthesizes an LQ
gain instead.  We then look at the invariant ellipsoid, solve a few
horizon problems, and compare against a dense condensed-form solve.
"""

import numpy as np

from arrhc import (
    SolverSettings,
    aux_rollout,
    build_nqp,
    in_X0,
    load_system_spec,
    max_aux_input_over_X0,
    objective_value,
    sample_X0,
    solve_nqp,
    spectral_radius,
    value_VN,
)

spec = load_system_spec("demos/configs/demo_system.json", repair=True)

print("=== plant ===")
print(f"A eigenvalue moduli: {np.abs(np.linalg.eigvals(spec.A))} (open loop unstable)")
print(f"configured gain {spec.K_requested.ravel()} -> repaired LQ gain {np.round(spec.K.ravel(), 6)}")
print(f"closed-loop spectral radius: {spectral_radius(spec.Abar):.4f}")
print(f"invariant set: x' Pbar x <= {spec.c}, Pbar =\n{np.round(spec.Pbar, 4)}")
print(f"max |K x| over the set: {max_aux_input_over_X0(spec)[0]:.3f} (input bound {spec.u_max})")

print("\n=== stabilizing-gain rollout stays inside the set ===")
x0 = np.array([3.0, 2.0])
states, inputs = aux_rollout(spec, x0, 6)
for t, x in enumerate(states):
    print(f"  t={t}: x = {np.round(x, 5)}  margin = {in_X0(spec, x)[1]:.2f}")

print("\n=== horizon solve vs a dense condensed-form check ===")
N = 8
inst = build_nqp(spec, x0, N)
sol = solve_nqp(inst)
Pt = np.kron(np.eye(N), spec.P)
Qt = np.kron(np.eye(N), spec.Q)
H = 2 * (inst.Gamma.T @ Pt @ inst.Gamma + Qt)
g = 2 * inst.Gamma.T @ Pt @ inst.Phi @ x0
U = np.linalg.solve(H, -g).reshape(N, spec.m)
print(f"value V_{N}(x0) = {sol.value:.6f}  (iterations: {sol.iterations}, status: {sol.status})")
print(f"first inputs: solver {np.round(sol.inputs[:3].ravel(), 6)} vs dense {np.round(U[:3].ravel(), 6)}")

print("\n=== the splitting iteration handles active constraints ===")
xb = sample_X0(spec, 1, np.random.default_rng(1), boundary=True)[0]
sol_b = solve_nqp(build_nqp(spec, xb, 2), SolverSettings(presolve_unconstrained=False))
print(f"boundary start {np.round(xb, 4)}: status {sol_b.status} after {sol_b.iterations} iterations,")
print(f"  first planned state sits at margin {in_X0(spec, sol_b.states[1])[1]:.4f} of the set")

print("\n=== value function grows with the horizon and bounds the rollout cost ===")
for N in (1, 2, 5, 10):
    v = value_VN(spec, x0, N)
    st, us = aux_rollout(spec, x0, N)
    print(f"  N={N:>2}: V_N = {v:10.4f}  <= rollout objective {objective_value(spec, st, us):10.4f}")
