"""Run-history records and the post-hoc monitors tied to them.

The flow emits DiagnosticsRecord rows; everything else here is a pure
function of a list of such records, so re-running a detector on saved
history reproduces its verdict bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cones
from . import fields
from . import quat
from .errors import AdmissibilityError, DiagnosticsError, InvalidBError

CSV_COLUMNS = (
    "t", "step", "dt", "rhs_min", "rhs_max", "rhs_mean", "theta",
    "cone_margin", "osc_phi", "grad_sup", "lap_sup", "ratio_c2",
)

MONOTONE_SLACK = 1e-7
DECAY_T_MIN = 1.0
MIN_FIT_RECORDS = 20


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One sampled instant of the flow.

    theta is the oscillation of the time derivative (the convergence
    criterion); cone_margin the worst admissibility margin over the grid;
    ratio_c2 = lap_sup / (grad_sup + 1) tracks the second-order estimate
    shape.
    """

    t: float
    step: int
    dt: float
    rhs_min: float
    rhs_max: float
    rhs_mean: float
    theta: float
    cone_margin: float
    osc_phi: float
    grad_sup: float
    lap_sup: float
    ratio_c2: float

    def as_row(self):
        return [getattr(self, name) for name in CSV_COLUMNS]

    @classmethod
    def from_row(cls, row):
        vals = dict(zip(CSV_COLUMNS, row))
        return cls(
            t=float(vals["t"]), step=int(float(vals["step"])), dt=float(vals["dt"]),
            rhs_min=float(vals["rhs_min"]), rhs_max=float(vals["rhs_max"]),
            rhs_mean=float(vals["rhs_mean"]), theta=float(vals["theta"]),
            cone_margin=float(vals["cone_margin"]), osc_phi=float(vals["osc_phi"]),
            grad_sup=float(vals["grad_sup"]), lap_sup=float(vals["lap_sup"]),
            ratio_c2=float(vals["ratio_c2"]),
        )


@dataclass(frozen=True)
class DecayFit:
    delta_hat: float
    c_hat: float
    r2: float
    window: tuple


def fit_decay(history, tol_osc=1e-8, t_min=DECAY_T_MIN):
    """Least-squares exponential rate of theta over the late-time window.

    The window keeps records with t >= t_min (discarding the transient) and
    theta > 10 * tol_osc (discarding the noise floor).  The regression runs
    on log(theta/theta_ref) with theta_ref the first windowed value, so
    rescaling every theta by a common factor cancels in the ratio before
    any rounding can creep in (bitwise so for power-of-two factors).
    """
    window = [r for r in history if r.t >= t_min and r.theta > 10.0 * tol_osc]
    if len(window) < MIN_FIT_RECORDS:
        raise DiagnosticsError(
            f"decay window has {len(window)} records, need {MIN_FIT_RECORDS} "
            "(run too short)"
        )
    t = np.array([r.t for r in window])
    theta_ref = window[0].theta
    y = np.log(np.array([r.theta for r in window]) / theta_ref)
    t_bar = t.mean()
    y_bar = y.mean()
    dt = t - t_bar
    slope = float(np.dot(dt, y - y_bar) / np.dot(dt, dt))
    intercept = y_bar - slope * t_bar
    resid = y - (slope * t + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - y_bar, y - y_bar))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(
        delta_hat=-slope,
        c_hat=float(theta_ref * math.exp(intercept)),
        r2=r2,
        window=(float(t[0]), float(t[-1])),
    )


@dataclass(frozen=True)
class MonotoneReport:
    passed: bool
    first_violation: int | None
    slack: float
    detail: str = ""


def _range_scale(history):
    worst = 1.0
    for r in history:
        worst = max(worst, abs(r.rhs_min), abs(r.rhs_max))
    return worst


def check_max_principle(history):
    """Sup of the time derivative never rises, inf never falls (with slack).

    Slack is MONOTONE_SLACK times the magnitude scale of the history; an
    empty or single-record history passes vacuously.
    """
    slack = MONOTONE_SLACK * _range_scale(history)
    for prev, cur in zip(history, history[1:]):
        if cur.rhs_max > prev.rhs_max + slack:
            return MonotoneReport(
                False, cur.step, slack,
                f"rhs_max rose {prev.rhs_max!r} -> {cur.rhs_max!r} at step {cur.step}",
            )
        if cur.rhs_min < prev.rhs_min - slack:
            return MonotoneReport(
                False, cur.step, slack,
                f"rhs_min fell {prev.rhs_min!r} -> {cur.rhs_min!r} at step {cur.step}",
            )
    return MonotoneReport(True, None, slack)


@dataclass(frozen=True)
class HarnackReport:
    passed: bool
    q: float | None
    sup_monotone: bool
    inf_monotone: bool
    detail: str = ""


def check_harnack_monotone(history, B, tol_osc=1e-8):
    """Monotone range of psi = d/dt phi + B, plus the unit-time contraction q.

    psi must stay positive (else B was chosen too small).  q is the largest
    ratio theta(m)/theta(m-1) sampled at unit-time marks, restricted to
    marks where theta is still above the noise floor; q < 1 is the
    oscillation-contraction shape.
    """
    if not history:
        return HarnackReport(True, None, True, True, "empty history")
    B = float(B)
    for r in history:
        if r.rhs_min + B <= 0.0:
            raise InvalidBError(
                f"psi = rhs + B is not positive at step {r.step}: "
                f"rhs_min={r.rhs_min!r}, B={B!r}"
            )
    slack = MONOTONE_SLACK * _range_scale(history)
    sup_ok = all(c.rhs_max <= p.rhs_max + slack for p, c in zip(history, history[1:]))
    inf_ok = all(c.rhs_min >= p.rhs_min - slack for p, c in zip(history, history[1:]))

    # theta at unit-time marks: first record at or past each integer time
    marks = []
    target = 0.0
    for r in history:
        if r.t >= target:
            marks.append(r.theta)
            target = math.floor(r.t) + 1.0
    floor = 10.0 * tol_osc
    ratios = [b / a for a, b in zip(marks, marks[1:]) if a > floor and b > floor]
    q = max(ratios) if ratios else None
    return HarnackReport(sup_ok and inf_ok, q, sup_ok, inf_ok)


@dataclass(frozen=True)
class EllipticReport:
    b: float
    residual: float
    cone_margin: float
    mult_gap: float | None


def verify_elliptic(phi, problem):
    """Residual of the stationary equation at a saved field.

    Recomputes b as the mean of f(lam(A[phi])) - h and reports the sup of
    the recentered residual.  For the sigma-type flows also evaluates the
    multiplicative identity |exp(b) - mean(sigma_k/C)/mean(e^h)|.
    """
    grid = phi.grid
    hess = fields.q_hessian(phi)
    a_field = hess.values + fields.broadcast_omega(problem.omega, grid)
    lam = quat.eigenvalues_field(a_field)
    margins = cones.cone_margin(problem.op.cone, lam)
    worst = float(np.min(margins))
    if not worst > 0.0:
        point = np.unravel_index(int(np.argmin(margins)), margins.shape)
        raise AdmissibilityError(
            f"saved field is not admissible: margin {worst:.6e} at {point}",
            margin=worst, point=point,
        )
    rhs = cones.f_value(problem.op, lam, check=False) - problem.h.values
    b = fields.mean(rhs)
    residual = float(np.max(np.abs(rhs - b)))
    mult_gap = None
    if problem.op.kind in ("log_sigma_k", "log_ma"):
        k = problem.op.order
        ratio = cones.sigma(k, lam) / math.comb(grid.n, k)
        mult_gap = abs(math.exp(b) - fields.mean(ratio) / fields.mean(np.exp(problem.h.values)))
    return EllipticReport(b=b, residual=residual, cone_margin=worst, mult_gap=mult_gap)


@dataclass(frozen=True)
class AprioriReport:
    passed: bool
    series: dict


def track_apriori(history, t_min=DECAY_T_MIN):
    """No monotone blowup in the a priori quantities after the transient.

    For each tracked series the max over the last quarter of the window
    must not exceed twice the max over the first quarter (plus an absolute
    epsilon for all-zero series).
    """
    window = [r for r in history if r.t >= t_min]
    if len(window) < 4:
        window = list(history)
    series = {}
    passed = True
    for name in ("ratio_c2", "grad_sup", "osc_phi"):
        vals = [getattr(r, name) for r in window]
        if len(vals) < 4:
            series[name] = {"first_max": None, "last_max": None, "ok": True}
            continue
        q = len(vals) // 4
        first = max(vals[:q])
        last = max(vals[-q:])
        ok = last <= 2.0 * first + 1e-12
        series[name] = {"first_max": first, "last_max": last, "ok": ok}
        passed = passed and ok
    return AprioriReport(passed=passed, series=series)
