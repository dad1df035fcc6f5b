"""Attack-resilient receding-horizon control.

Constrained discrete-time LTI control where the operator transmits whole
input plans, the actuator buffers them against replay attacks on the
command channel, and closed-loop stability plus an infinite-horizon cost
bound are certified from plant constants.  Also covers the induced
security-investment game between plants sharing a network.
"""

from .allocation import (
    AllocationProblem,
    Player,
    SecurityMap,
    check_convexity,
    cost_Ci,
    grad_Ci,
    load_allocation_problem,
    security_level,
    solve_nash,
    solve_social,
    total_cost,
)
from .certificates import (
    CertificateSet,
    CertificateTable,
    bound_PiA,
    bound_PiE,
    certificate_set,
    chi_psi,
    compute_alpha,
    compute_gamma,
    compute_gamma_hat,
    compute_lambda,
    compute_phi,
    compute_phi_inf,
    compute_rho,
    cost_bound,
    find_Nhat_star,
    find_Nstar,
    find_Shat_star,
    find_Sstar,
    table_for,
)
from .closedloop import (
    ActuatorState,
    ClosedLoopTrace,
    accumulated_cost,
    actuator_step,
    run_closed_loop,
    summarize_trace,
    verify_decay,
    write_summary_json,
    write_trace_csv,
)
from .errors import (
    ArrhcError,
    CertificateError,
    DomainError,
    InfeasibleError,
    InstabilityError,
    NumericsError,
    ProtocolError,
    ResilienceViolationError,
)
from .horizonqp import (
    QPInstance,
    QPSolution,
    SolverSettings,
    build_nqp,
    objective_value,
    project_ellipsoid,
    solve_nqp,
    value_VN,
)
from .matrixcore import (
    quad_form,
    solve_discrete_lyapunov,
    spectral_radius,
    sym_eig_extremes,
)
from .plant import (
    SystemSpec,
    aux_rollout,
    in_X0,
    load_system_spec,
    lq_gain,
    max_aux_input_over_X0,
    sample_X0,
    step,
)
from .replay import (
    AttackerState,
    AttackSchedule,
    Xorshift64Star,
    channel_step,
    gen_schedule,
    load_schedule,
    update_counter,
)

__version__ = "0.1.0"
