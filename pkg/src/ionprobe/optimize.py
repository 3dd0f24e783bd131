"""Damped least squares (Levenberg-Marquardt) with central-difference Jacobians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = ["LMResult", "levenberg_marquardt", "numeric_jacobian"]


@dataclass
class LMResult:
    x: np.ndarray
    covariance: np.ndarray
    chi2: float
    residuals: np.ndarray
    jacobian: np.ndarray
    iterations: int
    converged: bool
    message: str


def numeric_jacobian(fun: Callable, x: np.ndarray, steps: np.ndarray,
                     f0: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences, one column per parameter."""
    cols = []
    for i, h in enumerate(steps):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


def _covariance(jac: np.ndarray) -> np.ndarray:
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
        if not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    return cov


def levenberg_marquardt(residual: Callable, x0, scale=None, max_iter: int = 500,
                        ftol: float = 1e-10, xtol: float = 1e-12, rel_step: float = 1e-6,
                        lam0: float = 1e-3) -> LMResult:
    """Minimize sum(residual(x)**2).

    ``residual`` must return weighted residuals (data - model) / sigma.
    ``scale`` gives a typical magnitude per parameter; it sets difference
    steps for parameters near zero and the step-size convergence test.
    Converges when an accepted step lowers chi^2 by less than ``ftol``
    relative, or when the scaled step norm drops below ``xtol``.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    typ = np.abs(x) if scale is None else np.asarray(scale, dtype=float)
    typ = np.where(typ > 0, typ, 1.0)

    def steps_at(p):
        return rel_step * np.maximum(np.abs(p), typ)

    r = np.asarray(residual(x), dtype=float)
    if r.size < n:
        raise ValueError("fewer residuals than parameters")
    chi2 = float(r @ r)
    jac = numeric_jacobian(residual, x, steps_at(x), r)
    lam = lam0
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        if chi2 == 0.0:
            converged, message = True, "exact fit"
            break
        # solve in units of the typical parameter magnitudes
        js = jac * typ
        jtj = js.T @ js
        g = js.T @ r
        diag = np.diag(jtj).copy()
        floor = 1e-12 * max(diag.max(), 1e-300)
        diag = np.where(diag > floor, diag, floor)
        try:
            delta = np.linalg.solve(jtj + lam * np.diag(diag), -g) * typ
        except np.linalg.LinAlgError:
            delta = -np.linalg.lstsq(jtj + lam * np.diag(diag), g, rcond=None)[0] * typ
        step_norm = float(np.linalg.norm(delta / (np.abs(x) + typ)))
        x_new = x + delta
        r_new = np.asarray(residual(x_new), dtype=float)
        chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        if chi2_new < chi2:
            drop = chi2 - chi2_new
            x, r, chi2 = x_new, r_new, chi2_new
            lam = max(lam / 10.0, 1e-12)
            if drop <= ftol * (chi2 + drop):
                converged, message = True, "relative chi2 change below tolerance"
                break
            if step_norm < xtol:
                converged, message = True, "step below tolerance"
                break
            jac = numeric_jacobian(residual, x, steps_at(x), r)
        else:
            lam *= 10.0
            if step_norm < xtol or lam > 1e20:
                converged, message = True, "no further improvement possible"
                break
    jac = numeric_jacobian(residual, x, steps_at(x), r)
    return LMResult(x, _covariance(jac), chi2, r, jac, it, converged, message)
