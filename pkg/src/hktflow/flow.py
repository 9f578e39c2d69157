"""Explicit parabolic flow of a scalar potential on the quaternionic torus.

d/dt phi = f(eigenvalues(Omega + Hess phi)) - h, integrated by RK4 with a
CFL-style time step from the linearization bound.  Admissibility (eigenvalues
inside the operator's cone) is enforced by step rejection: a stage that
leaves the cone halves dt and retries from the identical state, never by
projecting back.  All state advances through one evaluation code path, so a
resumed run retraces the interrupted one bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import cones
from . import fields
from . import quat
from .diagnostics import DiagnosticsRecord
from .errors import AdmissibilityError, ConfigError, FlowBreakdownError

MAX_REJECTIONS = 8
RANGE_SLACK = 1e-7


@dataclass
class FlowProblem:
    """Background data, operator, and run limits for one trajectory."""

    grid: fields.TorusGrid
    op: cones.OperatorSpec
    omega: np.ndarray
    h: fields.ScalarField
    phi0: fields.ScalarField
    subsolution: fields.ScalarField | None = None
    tol_osc: float = 1e-8
    dt_safety: float = 0.5
    dt_max: float = 1.0
    max_steps: int = 1_000_000
    record_every: int = 50
    force: bool = False

    def __post_init__(self):
        self.omega = quat.entries_of(self.omega)
        defect = quat.hermiticity_defect(self.omega)
        if defect > quat.HERMITICITY_TOL:
            raise ConfigError(f"background matrix is not hyperhermitian (defect {defect:.3e})")
        if self.omega.shape[0] != self.grid.n:
            raise ConfigError(
                f"background matrix is {self.omega.shape[0]} x {self.omega.shape[0]} "
                f"but n = {self.grid.n}"
            )
        if self.op.n != self.grid.n:
            raise ConfigError(f"operator has n = {self.op.n} but grid has n = {self.grid.n}")
        if not 0.0 < self.dt_safety <= 1.0:
            raise ConfigError(f"dt_safety {self.dt_safety} outside (0, 1]")
        self.omega_grid = fields.broadcast_omega(self.omega, self.grid)


@dataclass
class EvalResult:
    """One right-hand-side evaluation: values, worst margin, linearization bound."""

    rhs: np.ndarray | None
    margin: float
    grad_sum_max: float | None
    lam: np.ndarray
    hess_trace: np.ndarray | None


@dataclass
class FlowState:
    phi: fields.ScalarField
    t: float
    step: int
    dt: float
    last_eval: EvalResult
    history: list = field(default_factory=list)

    @property
    def last_rhs(self):
        return fields.ScalarField(self.phi.grid, self.last_eval.rhs)


@dataclass
class FlowResult:
    state: FlowState
    b: float
    phi_tilde: fields.ScalarField
    residual: float
    converged: bool
    B: float
    initial_range: tuple


def assemble_A(phi, omega):
    """Omega + Hess phi as a pointwise hyperhermitian matrix field."""
    hess = fields.q_hessian(phi)
    return fields.HessianField(
        phi.grid,
        hess.values + fields.broadcast_omega(omega, phi.grid),
        asymmetry=hess.asymmetry,
    )


def _lam_and_trace(problem, comps, plan):
    """Eigenvalue field of A = Omega + Hess and the Hessian real trace.

    n = 1 avoids materializing the matrix field (the hot path at fine
    grids); larger n assembles it and shares the field eigensolver, so the
    bits match the public Hessian route.
    """
    grid = problem.grid
    if grid.n == 1:
        h00 = comps[plan.slot_index[(0, 0, 0)]]
        lam = (h00 + problem.omega[0, 0, 0])[..., None]
        return lam, h00
    values = plan.scatter(comps)
    lam = quat.eigenvalues_field(values + problem.omega_grid)
    idx = np.arange(grid.n)
    trace = np.sum(values[idx, idx, 0], axis=0)
    return lam, trace


def evaluate(problem, phi_values, need_grad_sum=False):
    """f(lam(A)) - h at a raw field array, skipping f outside the cone.

    When any grid point leaves the cone the result carries only the margin
    (rhs None); the caller decides between rejection and error.
    grad_sum_max is the grid max of sum_i f_i(lam), the CFL weight.
    """
    grid = problem.grid
    plan = fields.hessian_plan(grid)
    comps = plan.apply(fields.rfftn(phi_values))
    lam, trace = _lam_and_trace(problem, comps, plan)
    margins = cones.cone_margin(problem.op.cone, lam)
    margin = float(np.min(margins))
    if not margin > 0.0:
        return EvalResult(None, margin, None, lam, None)
    rhs = cones.f_value(problem.op, lam, check=False) - problem.h.values
    grad_sum = None
    if need_grad_sum:
        grad_sum = float(np.max(cones.f_gradient_sum(problem.op, lam)))
    return EvalResult(rhs, margin, grad_sum, lam, trace)


def rhs(problem, phi):
    """Public right-hand side; raises on inadmissibility with the worst point."""
    result = evaluate(problem, phi.values)
    if result.rhs is None:
        margins = cones.cone_margin(problem.op.cone, result.lam)
        point = tuple(int(i) for i in np.unravel_index(int(np.argmin(margins)), margins.shape))
        raise AdmissibilityError(
            f"field leaves the cone: margin {result.margin:.6e} at grid point {point}",
            margin=result.margin, point=point,
        )
    return fields.ScalarField(problem.grid, result.rhs), result.margin


def initial_state(problem):
    ev = evaluate(problem, problem.phi0.values, need_grad_sum=True)
    if ev.rhs is None:
        margins = cones.cone_margin(problem.op.cone, ev.lam)
        point = tuple(int(i) for i in np.unravel_index(int(np.argmin(margins)), margins.shape))
        raise AdmissibilityError(
            f"initial field is not admissible: margin {ev.margin:.6e} at {point}",
            margin=ev.margin, point=point,
        )
    return FlowState(problem.phi0.copy(), t=0.0, step=0, dt=0.0, last_eval=ev)


def propose_dt(problem, state):
    """safety / (4 L sum_a K_max^2), L the grid max of sum_i f_i, capped."""
    L = state.last_eval.grad_sum_max
    dt = problem.dt_safety / (4.0 * L * problem.grid.nyquist_sq_sum)
    return min(dt, problem.dt_max)


def make_record(problem, state):
    """Full diagnostics row at the current state (costs extra transforms)."""
    ev = state.last_eval
    rhs_min = float(np.min(ev.rhs))
    rhs_max = float(np.max(ev.rhs))
    grad_sup = fields.grad_sup_norm(state.phi)
    lap_sup = float(np.max(np.abs(ev.hess_trace)))
    return DiagnosticsRecord(
        t=state.t,
        step=state.step,
        dt=state.dt,
        rhs_min=rhs_min,
        rhs_max=rhs_max,
        rhs_mean=fields.mean(ev.rhs),
        theta=rhs_max - rhs_min,
        cone_margin=ev.margin,
        osc_phi=fields.osc(state.phi),
        grad_sup=grad_sup,
        lap_sup=lap_sup,
        ratio_c2=lap_sup / (grad_sup + 1.0),
    )


def step(problem, state, on_record=None):
    """One accepted RK4 step; rejects and halves dt when a stage leaves the cone.

    The first stage reuses the stored evaluation at the current state, so a
    rejected attempt retries from bit-identical data.  After MAX_REJECTIONS
    halvings the flow is declared broken (the continuum theory predicts the
    cone is never left, so reaching this is a discretization failure).
    """
    phi = state.phi.values
    k1 = state.last_eval.rhs
    dt = propose_dt(problem, state)
    worst_margin = state.last_eval.margin
    for _ in range(MAX_REJECTIONS + 1):
        attempt = _try_step(problem, phi, k1, dt)
        if isinstance(attempt, float):
            worst_margin = min(worst_margin, attempt)
            dt = 0.5 * dt
            continue
        phi_new, ev_new = attempt
        new_state = FlowState(
            phi=fields.ScalarField(problem.grid, phi_new),
            t=state.t + dt,
            step=state.step + 1,
            dt=dt,
            last_eval=ev_new,
            history=state.history,
        )
        if problem.record_every and new_state.step % problem.record_every == 0:
            record = make_record(problem, new_state)
            new_state.history.append(record)
            if on_record is not None:
                on_record(record)
        return new_state
    raise FlowBreakdownError(
        f"step rejected {MAX_REJECTIONS + 1} times at t={state.t:.6g} "
        f"(worst margin {worst_margin:.6e})",
        t=state.t, margin=worst_margin,
    )


def _try_step(problem, phi, k1, dt):
    """RK4 stages at a candidate dt; returns the violating margin on failure."""
    e2 = evaluate(problem, phi + (0.5 * dt) * k1)
    if e2.rhs is None:
        return e2.margin
    e3 = evaluate(problem, phi + (0.5 * dt) * e2.rhs)
    if e3.rhs is None:
        return e3.margin
    e4 = evaluate(problem, phi + dt * e3.rhs)
    if e4.rhs is None:
        return e4.margin
    phi_new = phi + (dt / 6.0) * (k1 + 2.0 * e2.rhs + 2.0 * e3.rhs + e4.rhs)
    ev_new = evaluate(problem, phi_new, need_grad_sum=True)
    if ev_new.rhs is None:
        return ev_new.margin
    return phi_new, ev_new


def normalize(phi):
    """Subtract the grid mean (the quantity that converges as t grows)."""
    return fields.ScalarField(phi.grid, phi.values - fields.mean(phi.values))


def derived_background(omega1):
    """Background matrix of the averaged-eigenvalue flow: Re tr * I - (n-1) * raw."""
    ent = quat.entries_of(omega1)
    n = ent.shape[0]
    idx = np.arange(n)
    tr = float(np.sum(ent[idx, idx, 0]))
    out = -(n - 1.0) * ent
    out[idx, idx, 0] += tr
    return out


def check_subsolution(problem):
    """Precondition for bounded operators: the configured subsolution margin.

    The subsolution is time independent, so its time derivative term is
    zero.  Failure raises ConfigError unless the problem is forced, in
    which case it downgrades to a warning (the condition is sufficient,
    not necessary).
    """
    if cones.classify_f_infinity(problem.op) != "bounded":
        return None
    if problem.subsolution is None:
        msg = "bounded operator requires a subsolution field in the config"
        if problem.force:
            warnings.warn(msg + " (forced past)", stacklevel=2)
            return None
        raise ConfigError(msg)
    hess = fields.q_hessian(problem.subsolution)
    lam = quat.eigenvalues_field(hess.values + problem.omega_grid)
    margins = cones.cone_margin(problem.op.cone, lam)
    worst = float(np.min(margins))
    if not worst > 0.0:
        raise ConfigError(f"subsolution field is itself inadmissible (margin {worst:.3e})")
    rho, point = cones.csub_margin_field(problem.op, lam, problem.h.values, 0.0)
    if not rho > 0.0:
        msg = f"subsolution margin check fails: rho = {rho:.6e} at grid point {point}"
        if problem.force:
            warnings.warn(msg + " (forced past)", stacklevel=2)
        else:
            raise ConfigError(msg)
    return rho


def run(problem, start_state=None, on_record=None, on_checkpoint=None, checkpoint_every=0):
    """Advance until osc(d/dt phi) < tol_osc or the step limit.

    Returns the final state, the level constant b = mean of the final time
    derivative, the normalized potential, and the stationary residual.
    Monitors enforce the discrete maximum principle each accepted step: the
    range of d/dt phi must stay inside the (slack-widened) range of the
    previous step and of the start of this run segment.
    """
    check_subsolution(problem)
    state = initial_state(problem) if start_state is None else start_state
    ev = state.last_eval
    lo = float(np.min(ev.rhs))
    hi = float(np.max(ev.rhs))
    init_lo, init_hi = lo, hi
    B = 1.0 + abs(min(lo, 0.0))
    slack = RANGE_SLACK * max(1.0, abs(lo), abs(hi))
    if start_state is None and problem.record_every:
        record = make_record(problem, state)
        state.history.append(record)
        if on_record is not None:
            on_record(record)
    converged = (hi - lo) < problem.tol_osc
    while not converged and state.step < problem.max_steps:
        state = step(problem, state, on_record=on_record)
        new_lo = float(np.min(state.last_eval.rhs))
        new_hi = float(np.max(state.last_eval.rhs))
        if (
            new_hi > hi + slack
            or new_lo < lo - slack
            or new_hi > init_hi + slack
            or new_lo < init_lo - slack
        ):
            raise FlowBreakdownError(
                "discrete maximum principle violated: range "
                f"[{new_lo!r}, {new_hi!r}] left [{lo!r}, {hi!r}] at step {state.step}",
                t=state.t, margin=state.last_eval.margin,
            )
        lo, hi = new_lo, new_hi
        if checkpoint_every and on_checkpoint is not None and state.step % checkpoint_every == 0:
            on_checkpoint(state)
        converged = (hi - lo) < problem.tol_osc
    if problem.record_every and (not state.history or state.history[-1].step != state.step):
        record = make_record(problem, state)
        state.history.append(record)
        if on_record is not None:
            on_record(record)
    if on_checkpoint is not None:
        on_checkpoint(state)
    b = fields.mean(state.last_eval.rhs)
    residual = float(np.max(np.abs(state.last_eval.rhs - b)))
    return FlowResult(
        state=state,
        b=b,
        phi_tilde=normalize(state.phi),
        residual=residual,
        converged=converged,
        B=B,
        initial_range=(init_lo, init_hi),
    )
