"""Local exponential tilting of a family by its V-statistic.

At each parameter the density is tilted as
``pbar(x) = p(x) exp(xi . V(theta; x) - psi_theta(xi))`` with a K x K matrix
``xi``. A small grid of single-entry tilts, coded with a variable-length
code, lets the two-part code describe sequences whose empirical Fisher
information disagrees with the model's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError, NumericError
from .models import Family, max_norm, mle_counts, v_statistic_counts, v_symbols_batch
from .sequences import counts_of

G_N, G_N_C, BOUNDARY = "G_n", "G_n^c", "boundary"


def _tilt_logits(family: Family, theta, xi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float).reshape(family.dim, family.dim)
    p = family.pmf(theta)
    Vx = v_symbols_batch(family, theta[None, :])[0]
    with np.errstate(divide="ignore"):
        return np.log(p) + np.einsum("kl,mkl->m", xi, Vx)


def log_normalizer(family: Family, theta, xi, *, xi0: float | None = None) -> float:
    """psi_theta(xi) = log sum_x p_theta(x) exp(xi . V(theta; x))."""
    family.space.check(theta)
    if xi0 is not None and max_norm(np.asarray(xi)) > xi0 + 1e-15:
        raise DomainError(f"||xi||_M exceeds xi_0 = {xi0}")
    if not np.any(np.asarray(xi)):
        return 0.0
    value = float(logsumexp(_tilt_logits(family, theta, xi)))
    if not math.isfinite(value):
        raise NumericError("log-normalizer overflowed")
    return value


def tilted_pmf(family: Family, theta, xi) -> np.ndarray:
    logits = _tilt_logits(family, theta, xi)
    return np.exp(logits - logsumexp(logits))


def tilted_log_likelihood(family: Family, theta, xi, xs) -> float:
    theta = family.space.check(theta)
    return tilted_log_likelihood_counts(family, theta, xi, counts_of(xs, family.n_symbols))


def tilted_log_likelihood_counts(family: Family, theta, xi, counts) -> float:
    counts = np.asarray(counts)
    mask = counts > 0
    if not np.any(xi):
        p = family.pmf(theta)
        return -math.inf if np.any(p[mask] <= 0) else float(counts[mask] @ np.log(p[mask]))
    logits = _tilt_logits(family, theta, xi)
    return float(counts[mask] @ (logits[mask] - logsumexp(logits)))


@dataclass(frozen=True, eq=False)
class TiltedDensity:
    theta: np.ndarray
    xi: np.ndarray
    psi: float
    probs: np.ndarray

    @classmethod
    def of(cls, family: Family, theta, xi) -> TiltedDensity:
        theta = np.asarray(theta, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return cls(theta, xi, log_normalizer(family, theta, xi), tilted_pmf(family, theta, xi))


# ---------------------------------------------------------------- tilting grid


@dataclass(frozen=True, eq=False)
class TiltingGrid:
    """The set {0} and the single-entry matrices +-u E^(l,m), with their code lengths.

    Index 0 is the zero matrix; index ``1 + 2 (l K + m) + s`` is
    ``(-1)^s u E^(l,m)``.
    """

    K: int
    n: int
    u: float
    delta: float
    g: float
    gamma: float
    B: float
    nu: float
    l2: float
    l2bar: float

    @property
    def size(self) -> int:
        return 2 * self.K**2 + 1

    def matrix(self, index: int) -> np.ndarray:
        out = np.zeros((self.K, self.K))
        if index:
            entry, sign = divmod(index - 1, 2)
            out[divmod(entry, self.K)] = -self.u if sign else self.u
        return out

    @property
    def matrices(self) -> list[np.ndarray]:
        return [self.matrix(i) for i in range(self.size)]

    def code_length(self, index: int) -> float:
        return self.l2 if index == 0 else self.l2bar

    @property
    def kraft_sum(self) -> float:
        return math.exp(-self.l2) + 2 * self.K**2 * math.exp(-self.l2bar)


def build_tilting_grid(
    K: int,
    n: int,
    g: float,
    gamma: float,
    B: float,
    nu: float,
    *,
    alpha: float | None = None,
    xi0: float | None = None,
    delta_bar: float | None = None,
) -> TiltingGrid:
    if n < 2:
        raise ConfigError("the tilting grid needs n >= 2")
    if not (g > 0 and B > 0 and nu > 0 and 0 < gamma < 1):
        raise ConfigError("need g > 0, B > 0, nu > 0 and 0 < gamma < 1")
    if alpha is not None and not gamma * g / (2 * B) - nu * alpha > 0:
        raise ConfigError(
            f"gamma g / (2B) - nu alpha > 0 is violated: {gamma * g / (2 * B):.6g} - {nu * alpha:.6g} <= 0"
        )
    delta = math.sqrt(g * math.log(n) / n)
    u = gamma * delta / B
    if xi0 is not None and u > xi0 + 1e-15:
        raise ConfigError(f"u_n = {u:.6g} exceeds xi_0 = {xi0:.6g}")
    if delta_bar is not None and u > delta_bar + 1e-12:
        raise ConfigError(f"u_n = {u:.6g} exceeds the certified tilt radius delta_bar = {delta_bar:.6g}")
    l2 = n ** (-nu)
    l2bar = -math.log(-math.expm1(-l2)) + math.log(2 * K**2)
    return TiltingGrid(K, n, u, delta, g, gamma, B, nu, l2, l2bar)


def select_xi_index(V: np.ndarray, grid: TiltingGrid) -> int:
    """Index of the grid tilt with xi . V = u ||V||_M (row-major ties, 0 when V = 0)."""
    flat = np.abs(np.asarray(V)).reshape(-1)
    if not np.any(flat):
        return 0
    entry = int(np.argmax(flat))
    return 1 + 2 * entry + (0 if np.asarray(V).reshape(-1)[entry] > 0 else 1)


def select_xi(family: Family, theta, xs, grid: TiltingGrid) -> np.ndarray:
    counts = counts_of(xs, family.n_symbols)
    V = v_statistic_counts(family, family.space.check(theta), counts)
    return grid.matrix(select_xi_index(V, grid))


def g_function(family: Family, theta, xi, xs) -> float:
    """xi . V(theta; x^n) - psi_theta(xi)."""
    theta = family.space.check(theta)
    return g_function_counts(family, theta, xi, counts_of(xs, family.n_symbols))


def g_function_counts(family: Family, theta, xi, counts) -> float:
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return 0.0
    V = v_statistic_counts(family, theta, counts)
    return float(np.sum(xi * V)) - log_normalizer(family, theta, xi)


def tilt_margin(family: Family, theta, counts, grid: TiltingGrid) -> float:
    """g(theta, xi_bar) - u ||V(theta)|| (1 - B u / (2 gamma delta)) for the selected tilt."""
    V = v_statistic_counts(family, theta, counts)
    xi = grid.matrix(select_xi_index(V, grid))
    g = g_function_counts(family, theta, xi, counts)
    return g - grid.u * max_norm(V) * (1.0 - grid.B * grid.u / (2.0 * grid.gamma * grid.delta))


def classify_sequence(family: Family, xs, g: float) -> str:
    counts = counts_of(xs, family.n_symbols)
    return classify_counts(family, counts, g)


def classify_counts(family: Family, counts, g: float) -> str:
    n = int(np.sum(counts))
    est = mle_counts(family, counts)
    if est.boundary:
        return BOUNDARY
    delta = math.sqrt(g * math.log(n) / n) if n > 1 else 0.0
    V = v_statistic_counts(family, est.theta, counts)
    return G_N if max_norm(V) <= delta else G_N_C


def spectral_norm(V: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(V)).max())
