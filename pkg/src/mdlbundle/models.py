"""Parametric families over a finite alphabet.

A family maps a parameter vector to a probability vector over symbols
``0..M-1``. Everything downstream (Fisher information, the V-statistic, the
tilted densities) is an exact finite sum, so the classes here expose batched
evaluators that work on arrays of parameter vectors.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import expit, logsumexp

from . import _optim
from .errors import ConvergenceError, DegeneracyError, DomainError, NumericError, UnsupportedError
from .sequences import counts_of

FD_STEP = 1e-5
BOUNDARY_TOL = 1e-9


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FinitePmf:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DomainError("a pmf must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("pmf entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"pmf sums to {p.sum():.15g}, not 1")
        object.__setattr__(self, "probs", _frozen(p))

    def __len__(self):
        return self.probs.size


# ---------------------------------------------------------------- parameter spaces


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """A compact convex parameter set: an axis-aligned box or the tau-simplex.

    The tau-simplex uses free coordinates ``theta_1..theta_K`` with
    ``theta_0 = 1 - sum(theta)`` and requires every weight to be at least tau.
    """

    kind: str
    lower: np.ndarray
    upper: np.ndarray
    tau: float = 0.0

    @classmethod
    def box(cls, lower, upper) -> ParamSpace:
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise DomainError("box bounds need lower < upper in every coordinate")
        return cls("box", _frozen(lo), _frozen(hi))

    @classmethod
    def tau_simplex(cls, dim: int, tau: float) -> ParamSpace:
        if dim < 1:
            raise DomainError("dimension must be at least 1")
        if not 0 < tau < 1 / (dim + 1):
            raise DomainError(f"tau must lie in (0, 1/(K+1)) = (0, {1 / (dim + 1):.6g}), got {tau}")
        return cls("tau-simplex", _frozen(np.full(dim, tau)), _frozen(np.full(dim, 1 - dim * tau)), float(tau))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def sum_cap(self) -> float | None:
        return 1.0 - self.tau if self.kind == "tau-simplex" else None

    @property
    def width(self) -> float:
        """W_Theta: the largest coordinate extent."""
        return float(np.max(self.upper - self.lower))

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows of ``A theta <= b``.

        Box: rows ``0..K-1`` are upper bounds, rows ``K..2K-1`` lower bounds.
        Simplex: row ``i < K`` pins weight ``i+1`` at tau, row ``K`` pins weight 0.
        """
        K = self.dim
        if self.kind == "box":
            return np.vstack([np.eye(K), -np.eye(K)]), np.concatenate([self.upper, -self.lower])
        A = np.vstack([-np.eye(K), np.ones((1, K))])
        return A, np.concatenate([np.full(K, -self.tau), [1.0 - self.tau]])

    def contains(self, theta, tol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,) or not np.all(np.isfinite(theta)):
            return False
        A, b = self.constraints()
        return bool(np.all(A @ theta <= b + tol))

    def check(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if not self.contains(theta, tol=1e-10):
            raise DomainError(f"theta={theta.tolist()} is outside the parameter space")
        return theta

    def active_set(self, theta, tol: float = BOUNDARY_TOL) -> tuple[int, ...]:
        A, b = self.constraints()
        return tuple(int(i) for i in np.flatnonzero(A @ np.asarray(theta, dtype=float) >= b - tol))

    def pinned_weights(self, active: Sequence[int]) -> tuple[int, ...]:
        """Mixture weight indices pinned at tau by the given constraint rows."""
        if self.kind != "tau-simplex":
            raise DomainError("pinned weights only exist for the tau-simplex")
        K = self.dim
        return tuple(sorted(0 if r == K else r + 1 for r in active))

    def is_interior(self, theta, tol: float = BOUNDARY_TOL) -> bool:
        return not self.active_set(theta, tol)

    def project(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "box":
            return np.clip(theta, self.lower, self.upper)
        s = 1.0 - (self.dim + 1) * self.tau
        return self.tau + _optim.project_capped_simplex(theta - self.tau, s)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        K = self.dim
        if self.kind == "box":
            return self.lower + rng.random((size, K)) * (self.upper - self.lower)
        w = rng.dirichlet(np.ones(K + 1), size=size)
        return self.tau + (1.0 - (K + 1) * self.tau) * w[:, 1:]

    def grid(self, per_axis: int) -> np.ndarray:
        """Tensor grid over the bounding box, filtered to the space."""
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        if self.kind == "tau-simplex":
            pts = pts[pts.sum(axis=1) <= 1.0 - self.tau + 1e-12]
        return pts

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "tau-simplex", "dim": self.dim, "tau": self.tau}


# ---------------------------------------------------------------- constants


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants of the regularity assumptions, with a provenance label per value.

    Labels are ``closed-form``, ``grid`` (scan with a safety factor),
    ``estimate`` (sampled, not certified) or ``vacuous`` (the assumption holds
    for any positive value).
    """

    zeta: float
    lam_bar: float
    kappa: float
    b_bar: float
    kappa_p: float
    b_bar_p: float
    epsilon: float
    c_eps: float
    Delta: float
    gamma: float
    delta_bar: float
    B: float
    D_J: float
    d: float
    Lambda: float
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.zeta > 0:
            raise DegeneracyError(f"zeta must be positive, got {self.zeta}")
        if self.lam_bar < self.zeta:
            raise NumericError("lam_bar must be at least zeta")
        if not 0 < self.gamma < 1:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.B > 0 or not self.d > 0:
            raise DomainError("B and d must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["labels"] = dict(self.labels)
        return out

    def with_values(self, **changes) -> AssumptionConstants:
        labels = dict(self.labels)
        labels.update(changes.pop("labels", {}))
        return replace(self, labels=labels, **changes)


# ---------------------------------------------------------------- families


class Family(ABC):
    """Base class. Subclasses supply ``pmf_batch`` and ``jhat_batch``."""

    space: ParamSpace
    n_symbols: int
    is_exponential: bool = False
    name: str = "family"

    @property
    def dim(self) -> int:
        return self.space.dim

    @abstractmethod
    def pmf_batch(self, thetas: np.ndarray) -> np.ndarray:
        """(N, K) parameters to (N, M) probabilities."""

    @abstractmethod
    def jhat_batch(self, thetas: np.ndarray) -> np.ndarray:
        """(N, K) parameters to (N, M, K, K) per-symbol empirical Fisher matrices."""

    def pmf(self, theta) -> np.ndarray:
        return self.pmf_batch(np.atleast_2d(np.asarray(theta, dtype=float)))[0]

    def fisher_batch(self, thetas: np.ndarray) -> np.ndarray:
        p = self.pmf_batch(thetas)
        jh = self.jhat_batch(thetas)
        jh = np.where((p > 0)[:, :, None, None], jh, 0.0)
        return np.einsum("nm,nmkl->nkl", p, jh)

    def loglik_derivatives(self, counts: np.ndarray, theta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Log-likelihood of a count vector with its gradient and Hessian."""
        return _fd_loglik_derivatives(self, counts, theta)

    def mle_counts(self, counts: np.ndarray) -> np.ndarray:
        A, b = self.space.constraints()
        start = self.space.project(0.5 * (self.space.lower + self.space.upper))
        return _maximize(self, counts, start)

    def face(self, active: Sequence[int]) -> tuple[Family | None, Callable[[np.ndarray], np.ndarray]]:
        """Sub-family on the face with the given active constraints and its embedding."""
        raise UnsupportedError(f"{self.name} has no registered boundary scheme")

    def boundary_descriptor_count(self) -> int:
        """Number of faces the boundary code distinguishes."""
        raise UnsupportedError(f"{self.name} has no registered boundary scheme")

    def descriptor_index(self, active: Sequence[int]) -> int:
        """Position of a face among the boundary descriptors (base 3 over box coordinates)."""
        K = self.dim
        return sum((1 if r < K else 2) * 3 ** (r % K) for r in active)

    def descriptor_active(self, index: int) -> tuple[int, ...]:
        K = self.dim
        active = []
        for i in range(K):
            index, digit = divmod(index, 3)
            if digit:
                active.append(i if digit == 1 else K + i)
        if index:
            raise DomainError("descriptor index out of range")
        return tuple(sorted(active))

    def closed_form_constants(self, **kwargs) -> AssumptionConstants | None:
        return None

    @cached_property
    def constants(self) -> AssumptionConstants:
        return certify_assumptions(self)

    def to_dict(self) -> dict:
        return {"kind": self.name}


def _fd_loglik_derivatives(family: Family, counts, theta):
    counts = np.asarray(counts, dtype=float)
    theta = np.asarray(theta, dtype=float)
    K, h = theta.size, FD_STEP
    mask = counts > 0

    def ll(points):
        with np.errstate(divide="ignore"):
            lp = np.log(family.pmf_batch(points)[:, mask])
        return lp @ counts[mask]

    E = np.eye(K) * h
    plus = theta + E
    minus = theta - E
    pts = [theta[None, :], plus, minus]
    pp = (theta + E[:, None, :] + E[None, :, :]).reshape(-1, K)
    mm = (theta - E[:, None, :] - E[None, :, :]).reshape(-1, K)
    pm = (theta + E[:, None, :] - E[None, :, :]).reshape(-1, K)
    vals = ll(np.vstack(pts + [pp, mm, pm]))
    f0 = vals[0]
    fp, fm = vals[1 : 1 + K], vals[1 + K : 1 + 2 * K]
    off = 1 + 2 * K
    fpp = vals[off : off + K * K].reshape(K, K)
    fmm = vals[off + K * K : off + 2 * K * K].reshape(K, K)
    fpm = fpm_t = vals[off + 2 * K * K :].reshape(K, K)
    grad = (fp - fm) / (2 * h)
    hess = (fpp + fmm - fpm - fpm_t.T) / (4 * h * h)
    return float(f0), grad, 0.5 * (hess + hess.T)


def _maximize(family: Family, counts, start) -> np.ndarray:
    A, b = family.space.constraints()
    counts = np.asarray(counts, dtype=float)
    try:
        x = _optim.maximize_on_polytope(lambda t: family.loglik_derivatives(counts, t), A, b, start)
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), best=family.space.project(exc.best)) from None
    return family.space.project(x)


@dataclass(frozen=True, eq=False)
class MixtureFamily(Family):
    """Convex combinations ``sum_i theta_i q_i`` with every weight at least tau."""

    components: np.ndarray
    tau: float
    name: str = "mixture"
    is_exponential: bool = False

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.components, dtype=float))
        for row in Q:
            FinitePmf(row)
        if Q.shape[0] < 2:
            raise DomainError("a mixture needs at least two components")
        object.__setattr__(self, "components", _frozen(Q))
        object.__setattr__(self, "space", ParamSpace.tau_simplex(Q.shape[0] - 1, self.tau))
        object.__setattr__(self, "n_symbols", Q.shape[1])
        D = Q[1:] - Q[0]
        if np.linalg.matrix_rank(D, tol=1e-12) < D.shape[0]:
            raise DegeneracyError("component differences q_i - q_0 are linearly dependent; J is singular")
        object.__setattr__(self, "_diff", _frozen(D))

    def pmf_batch(self, thetas):
        thetas = np.atleast_2d(thetas)
        return np.clip(self.components[0] + thetas @ self._diff, 0.0, None)

    def _ratios(self, thetas):
        p = self.pmf_batch(thetas)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(p[:, None, :] > 0, self._diff[None, :, :] / p[:, None, :], 0.0)
        return p, r  # r: (N, K, M)

    def jhat_batch(self, thetas):
        _, r = self._ratios(thetas)
        return np.einsum("nkm,nlm->nmkl", r, r)

    def fisher_batch(self, thetas):
        p, r = self._ratios(thetas)
        return np.einsum("nkm,nlm,nm->nkl", r, r, p)

    def fisher_derivative_batch(self, thetas):
        """(N, K, K, K) array of dJ_kl / dtheta_h indexed [n, h, k, l]."""
        p, r = self._ratios(thetas)
        return -np.einsum("nhm,nkm,nlm->nhkl", r, r, r * p[:, None, :])

    def loglik_derivatives(self, counts, theta):
        counts = np.asarray(counts, dtype=float)
        p = self.pmf_batch(theta[None, :])[0]
        mask = counts > 0
        if np.any(p[mask] <= 0):
            return -np.inf, np.zeros(self.dim), -np.eye(self.dim)
        c, pm, D = counts[mask], p[mask], self._diff[:, mask]
        w = c / pm
        return float(c @ np.log(pm)), D @ w, -(D * (w / pm)) @ D.T

    def weights(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([[1.0 - theta.sum()], theta])

    def mle_counts(self, counts):
        counts = np.asarray(counts, dtype=float)
        mask = counts > 0
        Q = self.components[:, mask]
        c = counts[mask] / counts.sum()
        K = self.dim
        theta = self.space.project(np.full(K, 1.0 / (K + 1)))
        prev = -np.inf
        for _ in range(50):
            w = self.weights(theta)
            p = w @ Q
            ll = float(c @ np.log(p))
            if ll - prev < 1e-10:
                break
            prev = ll
            w = w * (Q @ (c / p))
            theta = self.space.project(w[1:])
        return _maximize(self, counts, theta)

    def face(self, active):
        pinned = self.space.pinned_weights(active)
        free = [i for i in range(self.dim + 1) if i not in pinned]
        if not pinned:
            return self, lambda t: np.asarray(t, dtype=float)
        mass = 1.0 - self.tau * len(pinned)
        base = self.tau * self.components[list(pinned)].sum(axis=0)
        Qs = mass * self.components[free] + base
        Qs = Qs / Qs.sum(axis=1, keepdims=True)
        free_idx = np.array(free)

        def embed(sub_theta):
            w = np.full(self.dim + 1, self.tau)
            sub_theta = np.asarray(sub_theta, dtype=float)
            w[free_idx] = mass * np.concatenate([[1.0 - sub_theta.sum()], sub_theta])
            return w[1:]

        if len(free) == 1:
            return _PointFamily(Qs[0]), embed
        return MixtureFamily(Qs, self.tau / mass, name="mixture"), embed

    def restrict(self, theta, active) -> np.ndarray:
        """Coordinates of a boundary point in the face sub-family."""
        pinned = self.space.pinned_weights(active)
        free = [i for i in range(self.dim + 1) if i not in pinned]
        mass = 1.0 - self.tau * len(pinned)
        return self.weights(theta)[free][1:] / mass

    def boundary_descriptor_count(self) -> int:
        return 2 ** (self.dim + 1)

    def descriptor_index(self, active):
        return sum(1 << r for r in active)

    def descriptor_active(self, index):
        if not 0 <= index < 2 ** (self.dim + 1):
            raise DomainError("descriptor index out of range")
        return tuple(r for r in range(self.dim + 1) if index >> r & 1)

    def closed_form_constants(self, **kwargs):
        return _mixture_constants(self, **kwargs)

    def to_dict(self):
        return {"kind": "mixture", "components": self.components.tolist(), "tau": self.tau}


@dataclass(frozen=True, eq=False)
class _PointFamily:
    """Zero-dimensional family: a single fixed pmf."""

    probs: np.ndarray
    dim: int = 0

    def pmf(self, theta=None):
        return np.asarray(self.probs)


@dataclass(frozen=True, eq=False)
class BernoulliFamily(Family):
    """Bernoulli in the mean parameter, ``p(1) = theta`` on a closed interval."""

    lower: float = 0.0
    upper: float = 1.0
    name: str = "bernoulli"
    is_exponential: bool = False

    def __post_init__(self):
        if not 0 <= self.lower < self.upper <= 1:
            raise DomainError("need 0 <= lower < upper <= 1")
        object.__setattr__(self, "space", ParamSpace.box([self.lower], [self.upper]))
        object.__setattr__(self, "n_symbols", 2)

    def pmf_batch(self, thetas):
        t = np.atleast_2d(thetas)[:, 0]
        return np.stack([1.0 - t, t], axis=1)

    def jhat_batch(self, thetas):
        t = np.atleast_2d(thetas)[:, 0]
        with np.errstate(divide="ignore"):
            out = np.stack([1.0 / (1.0 - t) ** 2, 1.0 / t**2], axis=1)
        return out[:, :, None, None]

    def loglik_derivatives(self, counts, theta):
        k0, k1 = np.asarray(counts, dtype=float)
        t = float(theta[0])
        with np.errstate(divide="ignore"):
            f = (k1 * math.log(t) if k1 else 0.0) + (k0 * math.log1p(-t) if k0 else 0.0)
        return f, np.array([k1 / t - k0 / (1 - t)]), np.array([[-k1 / t**2 - k0 / (1 - t) ** 2]])

    def mle_counts(self, counts):
        k0, k1 = counts
        return np.array([min(max(k1 / (k0 + k1), self.lower), self.upper)])

    def face(self, active):
        value = self.upper if 0 in active else self.lower
        return _PointFamily(np.array([1.0 - value, value])), lambda t: np.array([value])

    def boundary_descriptor_count(self) -> int:
        return 2

    def descriptor_index(self, active):
        return 0 if 0 in active else 1

    def descriptor_active(self, index):
        if index not in (0, 1):
            raise DomainError("descriptor index out of range")
        return (index,)

    def to_dict(self):
        return {"kind": "bernoulli", "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class CanonicalBernoulli(Family):
    """Bernoulli in the natural parameter, ``p(1) = sigmoid(eta)``."""

    lower: float = -1.0
    upper: float = 1.0
    name: str = "bernoulli-canonical"
    is_exponential: bool = True

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError("need lower < upper")
        object.__setattr__(self, "space", ParamSpace.box([self.lower], [self.upper]))
        object.__setattr__(self, "n_symbols", 2)

    def pmf_batch(self, thetas):
        s = expit(np.atleast_2d(thetas)[:, 0])
        return np.stack([1.0 - s, s], axis=1)

    def jhat_batch(self, thetas):
        s = expit(np.atleast_2d(thetas)[:, 0])
        j = s * (1.0 - s)
        return np.repeat(j[:, None], 2, axis=1)[:, :, None, None]

    def fisher_batch(self, thetas):
        s = expit(np.atleast_2d(thetas)[:, 0])
        return (s * (1.0 - s))[:, None, None]

    def loglik_derivatives(self, counts, theta):
        k0, k1 = np.asarray(counts, dtype=float)
        eta = float(theta[0])
        s = float(expit(eta))
        f = -k1 * np.logaddexp(0.0, -eta) - k0 * np.logaddexp(0.0, eta)
        return float(f), np.array([k1 - (k0 + k1) * s]), np.array([[-(k0 + k1) * s * (1 - s)]])

    def mle_counts(self, counts):
        k0, k1 = counts
        if k1 == 0:
            return np.array([self.lower])
        if k0 == 0:
            return np.array([self.upper])
        return np.array([min(max(math.log(k1 / k0), self.lower), self.upper)])

    def face(self, active):
        value = self.upper if 0 in active else self.lower
        s = float(expit(value))
        return _PointFamily(np.array([1.0 - s, s])), lambda t: np.array([value])

    def boundary_descriptor_count(self) -> int:
        return 2

    def descriptor_index(self, active):
        return 0 if 0 in active else 1

    def descriptor_active(self, index):
        if index not in (0, 1):
            raise DomainError("descriptor index out of range")
        return (index,)

    def closed_form_constants(self, **kwargs):
        return _canonical_bernoulli_constants(self, **kwargs)

    def to_dict(self):
        return {"kind": "bernoulli-canonical", "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class GenericFamily(Family):
    """A box-parametrized family given only by its log-pmf.

    Hessians come from central differences with step ``1e-5``.
    """

    log_pmf: Callable[[np.ndarray], np.ndarray] = None
    lower: Sequence[float] = (0.0,)
    upper: Sequence[float] = (1.0,)
    n_symbols: int = 2
    name: str = "generic"
    is_exponential: bool = False

    def __post_init__(self):
        object.__setattr__(self, "space", ParamSpace.box(self.lower, self.upper))

    def pmf_batch(self, thetas):
        return np.exp(self.log_pmf(np.atleast_2d(thetas)))

    def jhat_batch(self, thetas):
        thetas = np.atleast_2d(thetas)
        N, K = thetas.shape
        h = FD_STEP
        E = np.eye(K) * h
        out = np.empty((N, self.n_symbols, K, K))
        f0 = self.log_pmf(thetas)
        for i in range(K):
            for j in range(i, K):
                if i == j:
                    val = (self.log_pmf(thetas + E[i]) - 2 * f0 + self.log_pmf(thetas - E[i])) / h**2
                else:
                    val = (
                        self.log_pmf(thetas + E[i] + E[j])
                        - self.log_pmf(thetas + E[i] - E[j])
                        - self.log_pmf(thetas - E[i] + E[j])
                        + self.log_pmf(thetas - E[i] - E[j])
                    ) / (4 * h * h)
                out[:, :, i, j] = out[:, :, j, i] = -val
        return out

    def face(self, active):
        K = self.dim
        fixed = {}
        for r in active:
            fixed[r % K] = self.space.upper[r] if r < K else self.space.lower[r - K]
        free = [i for i in range(K) if i not in fixed]

        def embed(sub):
            full = np.empty(K)
            for i, v in fixed.items():
                full[i] = v
            full[free] = np.asarray(sub, dtype=float)
            return full

        if not free:
            return _PointFamily(self.pmf(embed(np.zeros(0)))), embed
        sub = GenericFamily(
            log_pmf=lambda t: self.log_pmf(np.stack([embed(row) for row in np.atleast_2d(t)])),
            lower=tuple(self.space.lower[free]),
            upper=tuple(self.space.upper[free]),
            n_symbols=self.n_symbols,
            name=self.name,
        )
        return sub, embed

    def restrict(self, theta, active):
        K = self.dim
        fixed = {r % K for r in active}
        return np.asarray(theta, dtype=float)[[i for i in range(K) if i not in fixed]]

    def boundary_descriptor_count(self) -> int:
        return 3**self.dim


# ---------------------------------------------------------------- operations


def log_likelihood(family: Family, theta, xs) -> float:
    """Sum of log p_theta(x_t) in nats; ``-inf`` when a symbol has probability zero."""
    theta = family.space.check(theta)
    counts = counts_of(xs, family.n_symbols)
    return log_likelihood_counts(family, theta, counts)


def log_likelihood_counts(family: Family, theta, counts) -> float:
    p = family.pmf(theta)
    mask = np.asarray(counts) > 0
    if np.any(p[mask] <= 0):
        return -math.inf
    return float(np.asarray(counts)[mask] @ np.log(p[mask]))


def empirical_fisher(family: Family, theta, xs) -> np.ndarray:
    theta = family.space.check(theta)
    counts = counts_of(xs, family.n_symbols)
    if counts.sum() == 0:
        raise DomainError("empirical Fisher information needs at least one symbol")
    return empirical_fisher_counts(family, theta, counts)


def empirical_fisher_counts(family: Family, theta, counts) -> np.ndarray:
    jh = family.jhat_batch(np.asarray(theta, dtype=float)[None, :])[0]
    used = np.flatnonzero(np.asarray(counts) > 0)
    for m in used:
        if not np.all(np.isfinite(jh[m])):
            raise NumericError(f"empirical Fisher information is not finite for symbol {m}")
    return np.einsum("m,mkl->kl", np.asarray(counts, dtype=float)[used], jh[used]) / np.sum(counts)


def fisher(family: Family, theta) -> np.ndarray:
    theta = family.space.check(theta)
    J = family.fisher_batch(theta[None, :])[0]
    if np.linalg.eigvalsh(J).min() < 1e-12:
        raise DegeneracyError(f"Fisher information is singular at theta={theta.tolist()}")
    return J


def inv_sqrt_batch(J: np.ndarray) -> np.ndarray:
    """Symmetric inverse square roots of a stack of positive definite matrices."""
    w, U = np.linalg.eigh(J)
    if np.any(w < 1e-12):
        raise DegeneracyError("Fisher information is singular")
    return np.einsum("...ik,...k,...jk->...ij", U, 1.0 / np.sqrt(w), U)


def v_symbols_batch(family: Family, thetas: np.ndarray) -> np.ndarray:
    """(N, M, K, K) per-symbol statistics J^-1/2 Jhat(theta; x) J^-1/2 - I."""
    thetas = np.atleast_2d(thetas)
    if family.is_exponential:
        # canonical coordinates: Jhat equals J, so V vanishes exactly
        return np.zeros((len(thetas), family.n_symbols, family.dim, family.dim))
    S = inv_sqrt_batch(family.fisher_batch(thetas))
    jh = family.jhat_batch(thetas)
    p = family.pmf_batch(thetas)
    jh = np.where((p > 0)[:, :, None, None], jh, 0.0)
    return np.einsum("nik,nmkl,nlj->nmij", S, jh, S) - np.eye(family.dim)


def v_statistic(family: Family, theta, xs) -> np.ndarray:
    theta = family.space.check(theta)
    counts = counts_of(xs, family.n_symbols)
    if counts.sum() == 0:
        raise DomainError("the V-statistic needs at least one symbol")
    fisher(family, theta)
    return v_statistic_counts(family, theta, counts)


def v_statistic_counts(family: Family, theta, counts) -> np.ndarray:
    Vx = v_symbols_batch(family, np.asarray(theta, dtype=float)[None, :])[0]
    c = np.asarray(counts, dtype=float)
    return np.einsum("m,mkl->kl", c, Vx) / c.sum()


def max_norm(V: np.ndarray) -> float:
    """Max-entry norm ||V||_M."""
    return float(np.abs(V).max()) if np.size(V) else 0.0


@dataclass(frozen=True, eq=False)
class MLEResult:
    theta: np.ndarray
    boundary: bool
    active: tuple[int, ...]
    loglik: float


def mle(family: Family, xs) -> MLEResult:
    counts = counts_of(xs, family.n_symbols)
    if counts.sum() == 0:
        raise DomainError("the maximum likelihood estimate is undefined for an empty sequence")
    return mle_counts(family, counts)


def mle_counts(family: Family, counts) -> MLEResult:
    counts = np.asarray(counts, dtype=np.int64)
    theta = np.asarray(family.mle_counts(counts), dtype=float)
    active = family.space.active_set(theta)
    return MLEResult(theta, bool(active), active, log_likelihood_counts(family, theta, counts))


# ---------------------------------------------------------------- certification


def _scan_grid(space: ParamSpace, resolution: int, budget: int = 40_000) -> np.ndarray:
    per_axis = max(3, min(resolution, int(round(budget ** (1.0 / space.dim)))))
    return space.grid(per_axis)


def _sqrt_det_gradient_norm(family: Family, thetas: np.ndarray) -> np.ndarray:
    J = family.fisher_batch(thetas)
    sd = np.sqrt(np.linalg.det(J))
    if isinstance(family, MixtureFamily):
        dJ = family.fisher_derivative_batch(thetas)
        grad = 0.5 * sd[:, None] * np.einsum("nkl,nhlk->nh", np.linalg.inv(J), dJ)
        return np.linalg.norm(grad, axis=1)
    h = 1e-6
    grads = []
    for i in range(family.dim):
        e = np.zeros(family.dim)
        e[i] = h
        up = np.sqrt(np.linalg.det(family.fisher_batch(thetas + e)))
        dn = np.sqrt(np.linalg.det(family.fisher_batch(thetas - e)))
        grads.append((up - dn) / (2 * h))
    return np.linalg.norm(np.stack(grads, axis=1), axis=1)


def tilted_second_moment_bound(family: Family, thetas: np.ndarray, radius: float, steps: int = 21) -> float:
    """max |E_pbar[V_ij V_kl]| over the given thetas and single-entry tilts of size <= radius."""
    Vx = v_symbols_batch(family, thetas)
    N, M, K, _ = Vx.shape
    flat = Vx.reshape(N, M, K * K)
    p = family.pmf_batch(thetas)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    best = 0.0
    entries = [(l, m) for l in range(K) for m in range(l, K)]
    for s in np.linspace(-radius, radius, steps):
        for l, m in entries:
            # a single-entry tilt s E^{lm} multiplies p by exp(s V_lm)
            logw = logp + s * Vx[:, :, l, m]
            w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
            second = np.einsum("nm,nma,nmb->nab", w, flat, flat)
            best = max(best, float(np.abs(second).max()))
    return best


def default_g(alpha: float, nu: float, B: float, gamma: float) -> float:
    """g chosen so that gamma g / (2B) = 2 nu alpha."""
    return 4.0 * nu * alpha * B / gamma


def estimate_gamma(
    family: Family,
    *,
    n: int,
    Delta: float,
    B: float,
    alpha: float,
    nu: float,
    gamma0: float = 0.5,
    sequences: int = 200,
    points: int = 64,
    seed: int = 0,
) -> float | None:
    """Sampled minimum of ||V(theta)|| / ||V(theta_hat)|| over large-V sequences.

    Returns None when no sampled sequence has an interior estimate with a
    V-statistic above the threshold.
    """
    rng = np.random.default_rng(seed)
    g = default_g(alpha, nu, B, gamma0)
    delta_n = math.sqrt(g * math.log(n) / n)
    space = family.space
    worst = math.inf
    # half the sequences come from the model, half from arbitrary pmfs so that
    # atypical, large-V types are represented
    sources = [family.pmf(t) for t in space.sample(rng, sequences // 2)]
    sources += list(rng.dirichlet(np.ones(family.n_symbols), size=sequences - sequences // 2))
    for source in sources:
        counts = rng.multinomial(n, source)
        est = mle_counts(family, counts)
        if est.boundary:
            continue
        v_hat = max_norm(v_statistic_counts(family, est.theta, counts))
        if v_hat <= delta_n:
            continue
        if family.dim == 1:
            cand = np.linspace(est.theta[0] - Delta, est.theta[0] + Delta, points + 1)[:, None]
        else:
            dirs = rng.normal(size=(points, family.dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            cand = est.theta + dirs * Delta * rng.random((points, 1)) ** (1 / family.dim)
        cand = np.array([c for c in cand if space.contains(c)])
        if cand.size == 0:
            continue
        Vx = v_symbols_batch(family, cand)
        V = np.einsum("m,nmkl->nkl", counts / n, Vx)
        worst = min(worst, float(np.abs(V).max(axis=(1, 2)).min()) / v_hat)
    return None if worst is math.inf else worst


def certify_assumptions(
    family: Family,
    resolution: int = 200,
    *,
    alpha: float = 2.0,
    nu: float = 0.05,
    epsilon: float | None = None,
    Delta: float | None = None,
    gamma: float | None = None,
    seed: int = 0,
) -> AssumptionConstants:
    """Certify (or estimate) the constants of the regularity assumptions.

    Mixtures and the canonical Bernoulli family get closed-form values where
    they exist. Everything else comes from a grid scan with a small safety
    factor and is labelled accordingly.
    """
    kwargs = dict(resolution=resolution, alpha=alpha, nu=nu, epsilon=epsilon, Delta=Delta, gamma=gamma, seed=seed)
    closed = family.closed_form_constants(**kwargs)
    if closed is not None:
        return closed
    return _scanned_constants(family, **kwargs)


def _eigen_scan(family: Family, resolution: int):
    pts = _scan_grid(family.space, resolution)
    J = family.fisher_batch(pts)
    eig = np.linalg.eigvalsh(J)
    zeta_raw = float(eig[:, 0].min())
    if not zeta_raw > 1e-12:
        bad = pts[int(np.argmin(eig[:, 0]))]
        raise DegeneracyError(f"Fisher information is singular near theta={bad.tolist()}")
    return pts, J, eig, zeta_raw


def _bundle_constants(family, pts, *, alpha, nu, gamma, Delta, resolution, seed, labels):
    """B, delta_bar and gamma shared by the scanned and closed-form paths."""
    B0 = tilted_second_moment_bound(family, pts, 0.0, steps=1)
    if gamma is None:
        est = estimate_gamma(family, n=50, Delta=Delta, B=B0, alpha=alpha, nu=nu, seed=seed)
        gamma = 0.5 if est is None else min(0.99, max(0.01, 0.99 * est))
        labels["gamma"] = "estimate"
    else:
        labels["gamma"] = "supplied"
    # sup over n of u_n = gamma delta_n / B under the default g; log(n)/n peaks at 1/e
    delta_bar = math.sqrt(4.0 * nu * alpha * gamma / (math.e * B0))
    B = 1.01 * tilted_second_moment_bound(family, pts, delta_bar)
    labels["B"] = f"grid ({len(pts)} points, 21 tilts per entry, radius {delta_bar:.4g})"
    labels["delta_bar"] = "largest u_n under the default g"
    return gamma, delta_bar, B


def _mixture_constants(family: MixtureFamily, *, resolution, alpha, nu, epsilon, Delta, gamma, seed):
    K, tau = family.dim, family.tau
    pts, J, eig, zeta_raw = _eigen_scan(family, resolution)
    labels = {
        "zeta": f"grid x0.99 ({len(pts)} points)",
        "lam_bar": "closed-form K/tau^2",
        "kappa": "closed-form 2e sqrt(K)/tau",
        "b_bar": "closed-form tau/(2 sqrt(K))",
        "kappa_p": "closed-form (equals kappa)",
        "b_bar_p": "closed-form (equals b_bar)",
        "c_eps": "closed-form exp(2 sqrt(K) eps/tau)",
        "D_J": "grid x1.01",
        "Lambda": "grid x1.01, capped by (K/tau^2)^K",
        "d": "closed-form (faces of the simplex)",
    }
    kappa = 2.0 * math.e * math.sqrt(K) / tau
    b_bar = tau / (2.0 * math.sqrt(K))
    eps = b_bar if epsilon is None else float(epsilon)
    Delta = eps if Delta is None else float(Delta)
    gamma, delta_bar, B = _bundle_constants(
        family, pts, alpha=alpha, nu=nu, gamma=gamma, Delta=Delta, resolution=resolution, seed=seed, labels=labels
    )
    Lambda = min(1.01 * float(np.linalg.det(J).max()), (K / tau**2) ** K)
    return AssumptionConstants(
        zeta=0.99 * zeta_raw,
        lam_bar=K / tau**2,
        kappa=kappa,
        b_bar=b_bar,
        kappa_p=kappa,
        b_bar_p=b_bar,
        epsilon=eps,
        c_eps=math.exp(2.0 * math.sqrt(K) * eps / tau),
        Delta=Delta,
        gamma=gamma,
        delta_bar=delta_bar,
        B=B,
        D_J=1.01 * float(_sqrt_det_gradient_norm(family, pts).max()),
        d=1.0,
        Lambda=Lambda,
        labels=labels,
    )


def _canonical_bernoulli_constants(family: CanonicalBernoulli, *, resolution, alpha, nu, epsilon, Delta, gamma, seed):
    lo, hi = family.lower, family.upper
    eta_far = max(abs(lo), abs(hi))
    eta_near = 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))

    def J(eta):
        s = float(expit(eta))
        return s * (1 - s)

    m = math.tanh(eta_far / 2.0)
    width = hi - lo
    kappa = m * math.exp(m * width)
    eps = width if epsilon is None else float(epsilon)
    etas = np.linspace(lo, hi, max(resolution, 3))
    s = expit(etas)
    dj = np.abs(0.5 * np.sqrt(s * (1 - s)) * (1 - 2 * s))
    labels = {
        "zeta": "closed-form",
        "lam_bar": "closed-form",
        "kappa": "closed-form m exp(m W), m = tanh(max|eta|/2)",
        "b_bar": "closed-form (whole space)",
        "kappa_p": "closed-form (Jhat = J)",
        "b_bar_p": "closed-form (whole space)",
        "c_eps": "closed-form exp(m eps)",
        "D_J": "grid x1.01",
        "Lambda": "closed-form",
        "gamma": "vacuous (V = 0)",
        "B": "vacuous (V = 0)",
        "delta_bar": "vacuous (V = 0)",
        "d": "closed-form (interval endpoints)",
    }
    return AssumptionConstants(
        zeta=J(eta_far),
        lam_bar=J(eta_near),
        kappa=kappa,
        b_bar=width,
        kappa_p=kappa,
        b_bar_p=width,
        epsilon=eps,
        c_eps=math.exp(m * eps),
        Delta=eps if Delta is None else float(Delta),
        gamma=0.5 if gamma is None else gamma,
        delta_bar=1.0,
        B=1.0,
        D_J=1.01 * float(dj.max()),
        d=1.0,
        Lambda=J(eta_near),
        labels=labels,
    )


def _scanned_constants(family: Family, *, resolution, alpha, nu, epsilon, Delta, gamma, seed):
    pts, J, eig, zeta_raw = _eigen_scan(family, resolution)
    space = family.space
    b_bar = 0.1 * space.width
    coarse = _scan_grid(space, resolution, budget=2_000 if family.dim > 1 else 400)
    Jc = family.fisher_batch(coarse)
    kappa = 0.0
    for i in range(len(coarse)):
        dist = np.linalg.norm(coarse - coarse[i], axis=1)
        near = np.flatnonzero((dist > 0) & (dist <= b_bar))
        if near.size == 0:
            continue
        S = inv_sqrt_batch(Jc[i][None])[0]
        top = np.linalg.eigvalsh(np.einsum("ik,nkl,lj->nij", S, Jc[near], S))[:, -1]
        kappa = max(kappa, float(((top - 1.0) / dist[near]).max()))
    kappa = 1.01 * max(kappa, 1e-12)
    eps = b_bar if epsilon is None else float(epsilon)
    Delta = eps if Delta is None else float(Delta)
    labels = {
        key: "uncertified grid scan"
        for key in ("zeta", "lam_bar", "kappa", "b_bar", "kappa_p", "b_bar_p", "c_eps", "D_J", "Lambda", "d")
    }
    if family.is_exponential:
        gamma = 0.5 if gamma is None else gamma
        delta_bar, B = 1.0, 1.0
        labels.update(gamma="vacuous (V = 0)", B="vacuous (V = 0)", delta_bar="vacuous (V = 0)")
    else:
        gamma, delta_bar, B = _bundle_constants(
            family, pts, alpha=alpha, nu=nu, gamma=gamma, Delta=Delta, resolution=resolution, seed=seed, labels=labels
        )
    return AssumptionConstants(
        zeta=0.99 * zeta_raw,
        lam_bar=1.01 * float(eig[:, -1].max()),
        kappa=kappa,
        b_bar=b_bar,
        kappa_p=kappa,
        b_bar_p=b_bar,
        epsilon=eps,
        c_eps=1.0 + kappa * eps,
        Delta=Delta,
        gamma=gamma,
        delta_bar=delta_bar,
        B=B,
        D_J=1.01 * float(_sqrt_det_gradient_norm(family, pts).max()),
        d=1.0,
        Lambda=1.01 * float(np.linalg.det(J).max()),
        labels=labels,
    )


# ---------------------------------------------------------------- loading


def family_from_dict(spec: Mapping) -> Family:
    kind = spec.get("kind", "mixture")
    if kind == "mixture":
        return MixtureFamily(np.asarray(spec["components"], dtype=float), float(spec["tau"]))
    if kind == "bernoulli":
        return BernoulliFamily(float(spec.get("lower", 0.0)), float(spec.get("upper", 1.0)))
    if kind == "bernoulli-canonical":
        return CanonicalBernoulli(float(spec.get("lower", -1.0)), float(spec.get("upper", 1.0)))
    raise DomainError(f"unknown family kind {kind!r}")
