"""Active-set Newton ascent for smooth concave objectives on polytopes."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
from scipy.linalg import null_space

from .errors import ConvergenceError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


def _rank(rows: np.ndarray) -> int:
    return 0 if rows.size == 0 else int(np.linalg.matrix_rank(rows, tol=1e-10))


def maximize_on_polytope(
    fun: Objective,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    *,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Maximize ``fun`` over ``{x : A x <= b}`` starting from a feasible ``x0``.

    ``fun`` returns ``(value, gradient, hessian)``. Each step is a Newton step
    restricted to the face spanned by the working set, followed by a ratio
    test and Armijo backtracking. Termination requires a vanishing Newton
    decrement on the face and non-negative multipliers for the working set.
    """
    x = np.array(x0, dtype=float)
    dim = x.size
    slack = b - A @ x
    work: list[int] = []
    for i in np.argsort(slack):
        if slack[i] <= 1e-12 and _rank(A[work + [i]]) > len(work):
            work.append(int(i))
    f, g, H = fun(x)
    for _ in range(max_iter):
        Z = null_space(A[work]) if work else np.eye(dim)
        decrement = 0.0
        p = np.zeros(dim)
        if Z.shape[1]:
            gz = Z.T @ g
            Hz = -(Z.T @ H @ Z)
            w, U = np.linalg.eigh(Hz)
            floor = 1e-12 * max(1.0, float(np.abs(w).max()))
            w = np.maximum(w, floor)
            pz = U @ ((U.T @ gz) / w)
            decrement = float(gz @ pz)
            p = Z @ pz
        scale = max(1.0, abs(f))
        stationary = decrement <= 1e-20 * scale or np.abs(p).max() <= 1e-13 * max(1.0, np.abs(x).max())
        if not stationary:
            x_new, accepted, block_hit = _line_search(fun, A, b, x, p, f, g, work)
            if accepted:
                x = x_new
                if block_hit is not None and _rank(A[work + [block_hit]]) > len(work):
                    work.append(block_hit)
                f, g, H = fun(x)
                continue
            # roundoff regime: f can no longer resolve progress, so take one plain step
            polished = x + min(1.0, _step_limit(A, b, x, p, work)[0]) * p
            if decrement <= 1e-8 * scale and fun(polished)[0] >= f - 1e-12 * scale:
                x = polished
                f, g, H = fun(x)
        if not work:
            return x
        mu, *_ = np.linalg.lstsq(A[work].T, g, rcond=None)
        j = int(np.argmin(mu))
        if mu[j] >= -1e-9 * max(1.0, float(np.abs(g).max())):
            return x
        work.pop(j)
    raise ConvergenceError(f"active-set Newton did not converge in {max_iter} iterations", best=x)


def _step_limit(A, b, x, p, work):
    Ap = A @ p
    slack = b - A @ x
    t_max, block = np.inf, None
    for i in range(A.shape[0]):
        if i not in work and Ap[i] > 1e-15:
            t = max(slack[i], 0.0) / Ap[i]
            if t < t_max:
                t_max, block = t, i
    return t_max, block


def _line_search(fun, A, b, x, p, f, g, work):
    """Ratio test then Armijo backtracking; returns (x_new, accepted, blocking row)."""
    t_max, block = _step_limit(A, b, x, p, work)
    t = min(1.0, t_max)
    if t <= 0.0:
        return x, block is not None, block
    slope = float(g @ p)
    while t >= 1e-14:
        x_new = x + t * p
        f_new = fun(x_new)[0]
        if np.isfinite(f_new) and f_new >= f + 1e-4 * t * slope and f_new > f:
            return x_new, True, block if t == t_max else None
        t *= 0.5
    return x, False, None


def project_capped_simplex(y: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{z >= 0, sum(z) <= cap}``."""
    z = np.maximum(y, 0.0)
    if z.sum() <= cap:
        return z
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - cap
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    shift = css[rho] / (rho + 1)
    return np.maximum(y - shift, 0.0)


def project_box_with_cap(c: np.ndarray, lo: np.ndarray, hi: np.ndarray, cap: float | None) -> np.ndarray:
    """Euclidean projection onto ``{lo <= x <= hi, sum(x) <= cap}`` (cap may be None)."""
    x = np.clip(c, lo, hi)
    if cap is None or x.sum() <= cap:
        return x
    # sum(clip(c - mu)) is continuous and non-increasing in mu; find the root
    lo_mu, hi_mu = 0.0, float(np.max(c - lo)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo_mu + hi_mu)
        if np.clip(c - mid, lo, hi).sum() > cap:
            lo_mu = mid
        else:
            hi_mu = mid
    return np.clip(c - hi_mu, lo, hi)
