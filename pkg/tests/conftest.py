"""Shared fixtures: one converged manufactured run reused across test files."""

import numpy as np
import pytest

from hktflow import cones, fields, flow


def make_demo_problem(tol_osc=1e-8, **overrides):
    """n = 1 determinant flow on an 8x8 slice with a known stationary state."""
    grid = fields.TorusGrid(1, (0, 1), (8, 8))
    op = cones.log_ma(1)
    omega = np.array([[[1.0, 0.0, 0.0, 0.0]]])
    phi_star = fields.ModeSum(
        [fields.Mode(0.3, (1, 0)), fields.Mode(0.2, (0, 1))]
    ).evaluate(grid)
    h = fields.manufacture_h(op, omega, phi_star)
    kwargs = dict(
        grid=grid,
        op=op,
        omega=omega,
        h=h,
        phi0=fields.ScalarField(grid, np.zeros(grid.shape)),
        tol_osc=tol_osc,
        dt_safety=1.0,
        record_every=50,
    )
    kwargs.update(overrides)
    return flow.FlowProblem(**kwargs), phi_star


@pytest.fixture(scope="session")
def demo_run():
    """Converged flow at tight tolerance; several tests share it read-only."""
    problem, phi_star = make_demo_problem()
    result = flow.run(problem)
    assert result.converged
    return problem, result, phi_star
