"""Levenberg-Marquardt minimiser for residual vectors with forward-difference Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ResidualFn = Callable[[np.ndarray], np.ndarray]

GRADIENT_SMALL = "gradient_small"
STEP_SMALL = "step_small"
MAX_ITERATIONS = "max_iterations"


class LmError(RuntimeError):
    pass


@dataclass(frozen=True)
class LmConfig:
    max_iterations: int = 10
    eps1: float = 1e-8
    eps2: float = 1e-8
    tau: float = 1e-3
    fd_steps: tuple[float, ...] | float = 1e-4
    # Gain ratio this close to 1 means the local linear model is exact, so the
    # next step is taken undamped.
    exact_model_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.eps1, self.eps2, self.tau) <= 0:
            raise ValueError("eps1, eps2 and tau must be positive")
        if np.any(np.asarray(self.fd_steps, dtype=float) <= 0):
            raise ValueError("fd_steps must be positive")

    def steps_for(self, n: int) -> np.ndarray:
        h = np.broadcast_to(np.asarray(self.fd_steps, dtype=float), (n,))
        return np.array(h)


@dataclass
class LmResult:
    params: np.ndarray
    final_error: float
    iterations: int
    termination: str
    initial_error: float = float("nan")
    residual: np.ndarray = field(default=None, repr=False)


def _eval(fn: ResidualFn, a: np.ndarray) -> np.ndarray:
    return np.atleast_1d(np.asarray(fn(a), dtype=np.float64))


def fd_jacobian(residual_fn: ResidualFn, a, fd_steps, r0: np.ndarray | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    h = np.broadcast_to(np.asarray(fd_steps, dtype=np.float64), a.shape)
    if r0 is None:
        r0 = _eval(residual_fn, a)
    jac = np.empty((r0.size, a.size))
    for i in range(a.size):
        ap = a.copy()
        ap[i] += h[i]
        ri = _eval(residual_fn, ap)
        if not np.all(np.isfinite(ri)):
            raise LmError(f"non-finite residual when perturbing parameter {i}")
        jac[:, i] = (ri - r0) / h[i]
    return jac


def _solve_damped(jtj: np.ndarray, g: np.ndarray, mu: float) -> np.ndarray | None:
    try:
        if mu == 0.0:
            # undamped: minimum-norm Gauss-Newton step, defined for rank-deficient J
            step = np.linalg.lstsq(jtj, -g, rcond=1e-12)[0]
        else:
            step = np.linalg.solve(jtj + mu * np.eye(jtj.shape[0]), -g)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(step)):
        return None
    return step


def minimize(residual_fn: ResidualFn, initial, config: LmConfig = LmConfig()) -> LmResult:
    a = np.array(initial, dtype=np.float64).ravel()
    r = _eval(residual_fn, a)
    if not np.all(np.isfinite(r)):
        raise LmError("non-finite residual at the initial point")
    err = float(r @ r)
    err0 = err
    h = config.steps_for(a.size)

    jac = fd_jacobian(residual_fn, a, h, r)
    jtj = jac.T @ jac
    g = jac.T @ r
    mu = config.tau * max(float(np.max(np.diag(jtj))), 1e-300)
    mu_floor = mu
    mu_cap = 1e12 * config.tau * max(1.0, mu)
    nu = 2.0

    iterations = 0
    termination = MAX_ITERATIONS
    while iterations < config.max_iterations:
        if np.max(np.abs(g)) < config.eps1:
            termination = GRADIENT_SMALL
            break
        step = _solve_damped(jtj, g, mu)
        if step is None:
            mu = max(mu * nu, mu_floor)
            if mu > mu_cap:
                raise LmError("damped normal matrix stayed singular")
            continue
        if np.linalg.norm(step) < config.eps2 * (np.linalg.norm(a) + config.eps2):
            termination = STEP_SMALL
            break
        iterations += 1
        a_new = a + step
        r_new = _eval(residual_fn, a_new)
        err_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        predicted = -(2.0 * step @ g + step @ jtj @ step)
        if err_new < err:
            gain = (err - err_new) / predicted if predicted > 0 else 0.0
            a, r, err = a_new, r_new, err_new
            if abs(gain - 1.0) < config.exact_model_tol:
                mu_floor = max(mu_floor, mu) / 3.0
                mu = 0.0
            else:
                mu = mu / 3.0 if mu > 0 else mu_floor
            nu = 2.0
            jac = fd_jacobian(residual_fn, a, h, r)
            jtj = jac.T @ jac
            g = jac.T @ r
        else:
            mu = max(mu, mu_floor) * nu
            if mu > mu_cap:
                termination = STEP_SMALL
                break
    else:
        if np.max(np.abs(g)) < config.eps1:
            termination = GRADIENT_SMALL
    return LmResult(a, err, iterations, termination, err0, r)
