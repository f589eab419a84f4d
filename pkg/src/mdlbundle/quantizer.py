"""Fisher-shaped quantization of the parameter space.

The space is covered by lattice cubes of side ``a n^-beta`` (large cells).
Inside each cube, rectangles aligned with the eigenvectors of ``J(theta_S)``
and with sides ``a / sqrt(n lambda_i)`` tile the cube; each rectangle that
meets the space with positive volume contributes one quantized point.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

from . import _optim
from .errors import ConstructionError, DomainError, NumericError, PreconditionError
from .models import AssumptionConstants, Family, ParamSpace

VOLUME_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConstantFisher:
    """A geometry with a fixed Fisher matrix and no densities; used to test the quantizer."""

    space: ParamSpace
    matrix: np.ndarray = None
    name: str = "constant-fisher"
    is_exponential = True  # a flat geometry is its own canonical parameterization

    def __post_init__(self):
        M = np.eye(self.space.dim) if self.matrix is None else np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", M)

    @property
    def dim(self) -> int:
        return self.space.dim

    def fisher_batch(self, thetas):
        return np.broadcast_to(self.matrix, (len(np.atleast_2d(thetas)), self.dim, self.dim)).copy()

    @cached_property
    def constants(self) -> AssumptionConstants:
        eig = np.linalg.eigvalsh(self.matrix)
        return AssumptionConstants(
            zeta=float(eig[0]),
            lam_bar=float(eig[-1]),
            kappa=1e-12,
            b_bar=math.inf,
            kappa_p=1e-12,
            b_bar_p=math.inf,
            epsilon=1.0,
            c_eps=1.0,
            Delta=1.0,
            gamma=0.5,
            delta_bar=1.0,
            B=1.0,
            D_J=0.0,
            d=1.0,
            Lambda=float(np.linalg.det(self.matrix)),
            labels={"all": "exact (constant Fisher matrix)"},
        )


@dataclass(frozen=True, eq=False)
class LargeCell:
    index: tuple[int, ...]
    center: np.ndarray
    anchor: np.ndarray  # theta_S
    fisher: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sides: np.ndarray
    boundary: bool
    lower: np.ndarray  # cube intersected with the bounding box of the space
    upper: np.ndarray


@dataclass(frozen=True, eq=False)
class QuantizedGrid:
    points: np.ndarray
    cell_of_point: np.ndarray
    cells: tuple[LargeCell, ...]
    n: int
    a: float
    beta: float
    side: float
    space: ParamSpace

    @property
    def cardinality(self) -> int:
        return len(self.points)

    @property
    def L_n(self) -> float:
        """Fixed-length parameter code, in nats."""
        return math.log(self.cardinality)

    @cached_property
    def _lattice(self) -> dict[tuple[int, ...], int]:
        return {cell.index: i for i, cell in enumerate(self.cells)}

    @classmethod
    def from_points(cls, points, space: ParamSpace, fisher=None, *, n: int = 1) -> QuantizedGrid:
        """A grid from explicit points, sharing one cell with the given metric."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != space.dim:
            pts = pts.reshape(-1, space.dim)
        for p in pts:
            space.check(p)
        J = np.eye(space.dim) if fisher is None else np.asarray(fisher, dtype=float)
        w, E = np.linalg.eigh(J)
        cell = LargeCell(
            index=(0,) * space.dim,
            center=pts.mean(axis=0),
            anchor=pts.mean(axis=0),
            fisher=J,
            eigenvalues=w,
            eigenvectors=E,
            sides=np.full(space.dim, np.nan),
            boundary=True,
            lower=space.lower.copy(),
            upper=space.upper.copy(),
        )
        return cls(pts, np.zeros(len(pts), dtype=int), (cell,), n, math.nan, math.nan, math.inf, space)

    def cell_containing(self, theta) -> LargeCell:
        theta = np.asarray(theta, dtype=float)
        if len(self.cells) == 1:
            return self.cells[0]
        base = np.floor(theta / self.side).astype(int)
        # on a cube face the point belongs to both neighbours; prefer the lower lattice index
        edge = np.abs(theta / self.side - np.round(theta / self.side)) < 1e-9
        options = [(0, -1) if e else (0,) for e in edge]
        candidates = []
        for shift in itertools.product(*options):
            idx = tuple(int(v) for v in base + np.array(shift))
            if idx in self._lattice:
                cell = self.cells[self._lattice[idx]]
                if np.all(theta >= cell.lower - 1e-9) and np.all(theta <= cell.upper + 1e-9):
                    candidates.append(idx)
        if not candidates:
            raise DomainError(f"theta={theta.tolist()} is not covered by the grid")
        return self.cells[self._lattice[min(candidates)]]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("# schema: quantized-grid v1\n")
            writer = csv.writer(fh)
            K = self.space.dim
            writer.writerow(["index", *[f"theta_{i + 1}" for i in range(K)], "cell", "boundary"])
            for i, (pt, c) in enumerate(zip(self.points, self.cell_of_point)):
                cell = self.cells[c]
                writer.writerow([i, *[repr(float(v)) for v in pt], ":".join(map(str, cell.index)), int(cell.boundary)])


# ---------------------------------------------------------------- geometry helpers


def _threshold(K: int, a: float, beta: float, b_bar: float) -> float:
    return (math.sqrt(K) * a / b_bar) ** (1.0 / beta) if math.isfinite(b_bar) else 0.0


def _validate(n, a, beta):
    if n < 1:
        raise PreconditionError("n must be at least 1")
    if not a > 0:
        raise PreconditionError("a must be positive")
    if not 0 < beta < 0.5:
        raise PreconditionError("beta must lie in (0, 1/2)")


def _polytope_rows(G: np.ndarray, H: np.ndarray, U: np.ndarray):
    """Rows for ``{w : G w <= H - G U_r, |w|_inf <= 1/2}`` stacked per rectangle."""
    K = G.shape[1]
    Gfull = np.vstack([G, np.eye(K), -np.eye(K)])
    Hfull = np.concatenate([H[None, :] - U @ G.T, np.full((len(U), 2 * K), 0.5)], axis=1)
    return Gfull, Hfull


def _min_norm_points(G: np.ndarray, Hs: np.ndarray, shrink: float = 0.0):
    """For each right-hand side in ``Hs`` find the minimum-norm point of ``{G w <= h}``.

    Enumerates candidate active sets of at most K rows; the least-norm point
    of each affine subspace is a candidate and the feasible one with the
    smallest norm is the projection of the origin. Returns (points, feasible).
    """
    m, K = G.shape
    R = len(Hs)
    norms = np.linalg.norm(G, axis=1)
    Hs = Hs - shrink * norms[None, :]
    best = np.zeros((R, K))
    best_norm = np.full(R, np.inf)
    tol = 1e-12 * (1.0 + np.abs(Hs).max(axis=1, initial=0.0))
    origin_ok = np.all(Hs >= -tol[:, None], axis=1)
    best_norm[origin_ok] = 0.0
    pending = ~origin_ok
    for size in range(1, K + 1):
        if not pending.any():
            break
        for rows in itertools.combinations(range(m), size):
            Gs = G[list(rows)]
            if np.linalg.matrix_rank(Gs, tol=1e-10) < size:
                continue
            pinv = np.linalg.pinv(Gs)
            cand = Hs[:, list(rows)] @ pinv.T
            feasible = np.all(cand @ G.T <= Hs + tol[:, None], axis=1)
            cn = np.linalg.norm(cand, axis=1)
            better = pending & feasible & (cn < best_norm)
            best[better] = cand[better]
            best_norm[better] = cn[better]
    return best, np.isfinite(best_norm)


def _cell_box(space: ParamSpace, lo: np.ndarray, hi: np.ndarray):
    """Cube intersected with the space: (lower, upper, sum cap or None)."""
    return np.maximum(lo, space.lower), np.minimum(hi, space.upper), space.sum_cap


def _has_volume(l, u, cap, h) -> bool:
    if np.any(u - l <= VOLUME_TOL * h):
        return False
    return cap is None or l.sum() < cap - VOLUME_TOL * h


def _eigh_fixed(J):
    w, E = np.linalg.eigh(J)
    signs = np.sign(E[np.argmax(np.abs(E), axis=0), np.arange(E.shape[1])])
    return w, E * signs


def build_grid(
    family,
    n: int,
    a: float = 2.0,
    beta: float = 0.25,
    *,
    strict: bool = False,
    constants: AssumptionConstants | None = None,
) -> QuantizedGrid:
    """Build the quantized set for sample size ``n``.

    With ``strict=True`` the large-sample precondition
    ``n >= (sqrt(K) a / b_bar)^(1/beta)`` is enforced.
    """
    _validate(n, a, beta)
    space: ParamSpace = family.space
    K = space.dim
    if strict:
        consts = constants or family.constants
        bound = max(2.0, _threshold(K, a, beta, consts.b_bar))
        if n < bound:
            raise PreconditionError(f"n={n} is below the threshold (sqrt(K) a / b_bar)^(1/beta) = {bound:.6g}")
    h = a * n ** (-beta)
    i_lo = np.floor(space.lower / h).astype(int)
    i_hi = np.ceil(space.upper / h).astype(int) - 1
    indices = list(itertools.product(*[range(lo, hi + 1) for lo, hi in zip(i_lo, i_hi)]))
    kept = []
    for idx in indices:
        lo = np.array(idx, dtype=float) * h
        l, u, cap = _cell_box(space, lo, lo + h)
        if _has_volume(l, u, cap, h):
            kept.append((idx, lo, l, u, cap))
    if not kept:
        raise ConstructionError("no large cell meets the parameter space")
    centers = np.array([lo + h / 2 for _, lo, *_ in kept])
    anchors = np.array([_optim.project_box_with_cap(c, l, u, cap) for c, (_, _, l, u, cap) in zip(centers, kept)])
    fishers = family.fisher_batch(anchors)

    points, owner, cells = [], [], []
    for ci, ((idx, lo, l, u, cap), center, anchor, J) in enumerate(zip(kept, centers, anchors, fishers)):
        w, E = _eigh_fixed(J)
        if w[0] < 1e-12:
            raise NumericError(f"Fisher information is singular at theta_S={anchor.tolist()}")
        s = a / np.sqrt(n * w)
        boundary = bool(
            np.any(lo <= space.lower + 1e-15)
            or np.any(lo + h >= space.upper - 1e-15)
            or (cap is not None and (lo + h).sum() >= cap - 1e-15)
        )
        cells.append(LargeCell(idx, center, anchor, J, w, E, s, boundary, l, u))
        pts = _rectangle_points(E, s, center, h, l, u, cap)
        points.append(pts)
        owner.append(np.full(len(pts), ci))
    pts = np.vstack(points)
    grid = QuantizedGrid(pts, np.concatenate(owner), tuple(cells), n, a, beta, h, space)
    if grid.cardinality == 0:
        raise ConstructionError("the quantized set is empty")
    return grid


def _rectangle_points(E, s, center, h, l, u, cap) -> np.ndarray:
    """Quantized points of one large cell, in lattice order of the rectangles."""
    K = len(s)
    # constraints of cube-and-space in x: l <= x <= u (and sum(x) <= cap)
    Gx = np.vstack([np.eye(K), -np.eye(K)] + ([np.ones((1, K))] if cap is not None else []))
    Hx = np.concatenate([u, -l] + ([[cap]] if cap is not None else []))
    # u-coordinates: x = center + E diag(s) v, where the J(theta_S) metric is isotropic
    T = E * s
    Gv = Gx @ T
    Hv = Hx - Gx @ center
    widths = h * np.abs(E).sum(axis=0) / s
    counts = np.maximum(1, np.ceil(widths - 1e-9).astype(int))
    offsets = [np.arange(c) - (c - 1) / 2.0 for c in counts]
    U = np.stack(np.meshgrid(*offsets, indexing="ij"), axis=-1).reshape(-1, K)
    corners = np.array(list(itertools.product([-0.5, 0.5], repeat=K)))
    inside = np.all(((U[:, None, :] + corners[None]) @ Gv.T) <= Hv + 1e-12, axis=(1, 2))
    result = np.zeros_like(U)
    keep = inside.copy()
    ambiguous = np.flatnonzero(~inside)
    if ambiguous.size:
        G, Hs = _polytope_rows(Gv, Hv, U[ambiguous])
        _, volume = _min_norm_points(G, Hs, shrink=VOLUME_TOL)
        proj, ok = _min_norm_points(G, Hs)
        sel = volume & ok
        result[ambiguous[sel]] = proj[sel]
        keep[ambiguous[sel]] = True
    V = U[keep] + result[keep]
    pts = center + V @ T.T
    # remove roundoff excursions outside the cell
    pts = np.clip(pts, l, u)
    if cap is not None:
        over = pts.sum(axis=1) > cap
        if over.any():
            pts[over] = np.array([_optim.project_box_with_cap(p, l, u, cap) for p in pts[over]])
    return pts


def nearest_point(grid: QuantizedGrid, theta_hat, *, metric: str = "fisher") -> tuple[int, np.ndarray, float]:
    """Closest grid point to ``theta_hat``.

    Distances use the Fisher metric of the large cell containing
    ``theta_hat`` (``metric="euclidean"`` uses the plain distance). Ties go to
    the lowest point index. Returns (index, point, quad) where quad is the
    quadratic form in ``J(theta_S)``.
    """
    theta_hat = grid.space.check(theta_hat)
    cell = grid.cell_containing(theta_hat)
    diff = grid.points - theta_hat
    if metric == "fisher":
        dist = np.einsum("ni,ij,nj->n", diff, cell.fisher, diff)
    elif metric == "euclidean":
        dist = np.einsum("ni,ni->n", diff, diff)
    else:
        raise DomainError(f"unknown metric {metric!r}")
    i = int(np.argmin(dist))
    d = diff[i]
    return i, grid.points[i].copy(), float(d @ cell.fisher @ d)


# ---------------------------------------------------------------- cardinality bound


@dataclass(frozen=True)
class CardinalityBound:
    bound: float
    count_bound: float
    r: float
    C_J: float
    C_Theta: float
    C_K: float
    C_JK: float
    Lambda: float
    integral: float
    integral_error: float
    terms: dict = field(default_factory=dict)


def _simplex_map(t: np.ndarray, tau: float):
    """Collapsed-coordinate map from [0,1]^K onto the tau-simplex with its Jacobian."""
    K = t.shape[1]
    s = 1.0 - (K + 1) * tau
    y = np.empty_like(t)
    rest = np.ones(len(t))
    jac = np.full(len(t), s**K)
    for k in range(K):
        y[:, k] = rest * t[:, k]
        jac = jac * rest
        rest = rest * (1.0 - t[:, k])
    # y sums to at most 1; the map uses y_k for the weights theta_1..theta_K
    return tau + s * y, jac


def fisher_volume(family, nodes: int | None = None, *, chunk: int = 200_000) -> tuple[float, float]:
    """Integral of sqrt(det J) over the space and an error estimate.

    Tensor Gauss-Legendre quadrature; the simplex is mapped from the unit cube
    by collapsed coordinates. The error is the difference to a half-node rule.
    """
    space: ParamSpace = family.space
    K = space.dim
    if nodes is None:
        nodes = 1000 if K <= 2 else max(8, int(round(10**6 ** (1.0 / K))))

    def rule(m):
        x, w = roots_legendre(m)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        total = 0.0
        grids = np.meshgrid(*([x] * K), indexing="ij")
        wgrid = np.prod(np.meshgrid(*([w] * K), indexing="ij"), axis=0).reshape(-1)
        T = np.stack(grids, axis=-1).reshape(-1, K)
        for start in range(0, len(T), chunk):
            t = T[start : start + chunk]
            if space.kind == "box":
                theta = space.lower + t * (space.upper - space.lower)
                jac = np.prod(space.upper - space.lower)
            else:
                theta, jac = _simplex_map(t, space.tau)
            det = np.linalg.det(family.fisher_batch(theta))
            if np.any(~np.isfinite(det)) or np.any(det < 0):
                raise NumericError("Fisher determinant is not finite and non-negative on the quadrature nodes")
            total += float(np.sum(wgrid[start : start + chunk] * jac * np.sqrt(det)))
        return total

    value = rule(nodes)
    return value, abs(value - rule(max(4, nodes // 2)))


def cardinality_bound(
    family,
    n: int,
    a: float = 2.0,
    beta: float = 0.25,
    *,
    constants: AssumptionConstants | None = None,
    nodes: int | None = None,
    integral: tuple[float, float] | None = None,
) -> CardinalityBound:
    """Upper bound on log of the quantized-set size, with every constant."""
    _validate(n, a, beta)
    consts = constants or family.constants
    K = family.space.dim
    vol, err = integral if integral is not None else fisher_volume(family, nodes)
    if not vol > 0:
        raise NumericError("the Fisher volume must be positive")
    Lambda = consts.Lambda
    C_J = 2 * K * (math.sqrt(consts.lam_bar) + 2) ** (K - 1) * math.sqrt(Lambda)
    det_floor = consts.zeta**K
    C_Theta = K * a * consts.D_J / math.sqrt(det_floor)
    C_K = 2**K * (family.space.width + 2 * a) ** (K - 1)
    C_JK = C_K * math.sqrt(Lambda) * a / vol
    r = (
        math.log1p(C_J * n ** (-(0.5 - beta)))
        + math.log1p(C_Theta * n ** (-beta))
        + math.log1p(C_JK * n ** (-beta))
    )
    bound = 0.5 * K * math.log(n) + math.log(vol) - K * math.log(a) + r
    terms = {"half_K_log_n": 0.5 * K * math.log(n), "log_volume": math.log(vol), "minus_K_log_a": -K * math.log(a)}
    return CardinalityBound(bound, math.exp(bound), r, C_J, C_Theta, C_K, C_JK, Lambda, vol, err, terms)


def r_of_n(bound: CardinalityBound, n: int, beta: float) -> float:
    return (
        math.log1p(bound.C_J * n ** (-(0.5 - beta)))
        + math.log1p(bound.C_Theta * n ** (-beta))
        + math.log1p(bound.C_JK * n ** (-beta))
    )
