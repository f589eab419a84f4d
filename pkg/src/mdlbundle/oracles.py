"""Brute-force ground truth.

Every routine here enumerates all count vectors (types) of length ``n`` and
weights them by multinomial coefficients, so sums over all ``M**n``
sequences are exact. Sequences beyond the enumeration cap are refused.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bundle import G_N, G_N_C, select_xi_index
from .codec import CodeConfig, Codebook, c_gn, c_n, codebook, encode_counts
from .errors import ConvergenceError, DomainError, PreconditionError
from .models import (
    AssumptionConstants,
    FinitePmf,
    certify_assumptions,
    default_g,
    max_norm,
    mle_counts,
    v_statistic_counts,
)
from .quantizer import nearest_point
from .sequences import DEFAULT_CAP, check_cap, compositions, log_multinomial, representative

# ---------------------------------------------------------------- divergences


@dataclass(frozen=True)
class DivergenceValue:
    lam: float | None
    value: float
    kind: str

    def __float__(self) -> float:
        return self.value


def _probs(p) -> np.ndarray:
    return np.asarray(p.probs if isinstance(p, FinitePmf) else p, dtype=float)


def renyi_divergence(p, q, lam: float) -> DivergenceValue:
    """Order-lambda Renyi divergence -1/(1-lambda) log sum p^lambda q^(1-lambda)."""
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    p, q = _probs(p), _probs(q)
    mask = p > 0
    s = float(np.sum(p[mask] ** lam * q[mask] ** (1 - lam)))
    if s <= 0:
        return DivergenceValue(lam, math.inf, "renyi")
    return DivergenceValue(lam, max(0.0, -math.log(min(s, 1.0)) / (1 - lam)), "renyi")


def kl_divergence(p, q) -> DivergenceValue:
    p, q = _probs(p), _probs(q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return DivergenceValue(None, math.inf, "kl")
    return DivergenceValue(None, max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask])))), "kl")


# ---------------------------------------------------------------- enumeration helpers


def _types(family, n: int, cap: int):
    check_cap(family.n_symbols, n, cap)
    types = compositions(n, family.n_symbols)
    return types, log_multinomial(types)


def shtarkov_complexity(family, n: int, *, cap: int = DEFAULT_CAP) -> float:
    """log of the sum over all sequences of the maximized likelihood."""
    types, logw = _types(family, n, cap)
    ll = np.array([mle_counts(family, c).loglik for c in types])
    return float(logsumexp(logw + ll))


def _config_book(family, n, config: CodeConfig, book: Codebook | None):
    return book if book is not None else codebook(family, n, config)


def exhaustive_kraft(config: CodeConfig, family, n: int, *, cap: int = DEFAULT_CAP, book: Codebook | None = None):
    """Sum of exp(-code length) over every sequence of length n."""
    types, logw = _types(family, n, cap)
    book = _config_book(family, n, config, book)
    totals = np.array([encode_counts(family, c, config, book=book).total for c in types])
    return float(np.exp(logsumexp(logw - totals)))


@dataclass(frozen=True)
class MaxRegret:
    value: float
    argmax: list[int]
    by_route: dict

    def to_dict(self) -> dict:
        return asdict(self)


def exhaustive_max_regret(config: CodeConfig, family, n: int, *, cap: int = DEFAULT_CAP, book=None) -> MaxRegret:
    types, _ = _types(family, n, cap)
    book = _config_book(family, n, config, book)
    best: dict[str, tuple[float, list[int]]] = {}
    for c in types:
        enc = encode_counts(family, c, config, book=book)
        reg = enc.total + mle_counts(family, c).loglik
        if enc.route not in best or reg > best[enc.route][0]:
            best[enc.route] = (reg, representative(c).tolist())
    value, argmax = max(best.values(), key=lambda t: t[0])
    return MaxRegret(value, argmax, {k: {"value": v, "argmax": xs} for k, (v, xs) in best.items()})


# ---------------------------------------------------------------- risk certificates


@dataclass
class RiskCertificate:
    kind: str
    n: int
    inputs: dict
    risk: float | None = None
    redundancy: float | None = None
    resolvability: float | None = None
    margins: dict = field(default_factory=dict)
    tail: list = field(default_factory=list)
    passed: bool = True
    offending: list[int] | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "PASSED" if self.passed else "FAILED"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["status"] = self.status
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **{"indent": 2, "sort_keys": True, **kwargs})


def _pstar(family, theta_star) -> np.ndarray:
    return family.pmf(family.space.check(theta_star))


def verify_risk_chain(family, theta_star, n: int, config: CodeConfig = CodeConfig(), *, cap=DEFAULT_CAP, tol=1e-9):
    """Exact check of risk <= redundancy / n <= resolvability for the plain two-part code."""
    if config.lam is None:
        raise DomainError("lambda must lie in (0, 1 - 1/alpha], which is empty for alpha = 1")
    plain = CodeConfig(**{**config.to_dict(), "combined": False})
    book = codebook(family, n, plain)
    p = _pstar(family, theta_star)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    types, logw = _types(family, n, cap)
    logprob = logw + np.array([c[c > 0] @ logp[c > 0] for c in types])
    weights = np.exp(logprob)
    risk_terms, red_terms = [], []
    for c in types:
        enc = encode_counts(family, c, plain, book=book)
        risk_terms.append(renyi_divergence(p, enc.probs, plain.lam).value)
        red_terms.append((enc.total + c[c > 0] @ logp[c > 0]) / n)
    risk_terms, red_terms = np.array(risk_terms), np.array(red_terms)
    risk = float(weights @ risk_terms)
    red = float(weights @ red_terms)
    mask = p > 0
    with np.errstate(divide="ignore"):
        kl = np.sum(p[mask] * (logp[mask] - book.logp[..., mask]), axis=-1)
    res_all = kl + book.model_length / n
    res = float(res_all.min())
    margins = {"redundancy_minus_risk": red - risk, "resolvability_minus_redundancy": res - red}
    passed = all(m >= -tol for m in margins.values())
    offending = None
    if not passed:
        offending = representative(types[int(np.argmax(weights * (risk_terms - red_terms)))]).tolist()
    return RiskCertificate(
        "risk-chain",
        n,
        {"theta_star": np.asarray(theta_star, dtype=float).tolist(), "config": plain.to_dict()},
        risk,
        red,
        res,
        margins,
        passed=passed,
        offending=offending,
    )


def verify_tail_bound(
    family,
    theta_star,
    n: int,
    b: float,
    trials: int = 100_000,
    seed: int = 0,
    config: CodeConfig = CodeConfig(),
    *,
    exact: bool = True,
    cap: int = DEFAULT_CAP,
):
    """Monte Carlo tail check for the combined code's estimator.

    The event is ``d_lambda(p* || p_hat) > (1/n) log(p*(X^n) / p_2p(X^n)) + b``.
    It passes when the observed frequency is at most ``exp(-n b / alpha)``
    plus three binomial standard deviations.
    """
    if trials < 1000:
        raise PreconditionError("the tail check needs at least 1000 trials")
    if config.lam is None:
        raise DomainError("lambda must lie in (0, 1 - 1/alpha], which is empty for alpha = 1")
    p = _pstar(family, theta_star)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    book = codebook(family, n, config)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    samples = rng.multinomial(n, p, size=trials)
    uniq, inverse = np.unique(samples, axis=0, return_inverse=True)

    def event(c):
        enc = encode_counts(family, c, config, book=book)
        loss = renyi_divergence(p, enc.probs, config.lam).value
        return loss > (c[c > 0] @ logp[c > 0] + enc.total) / n + b

    hits = np.array([event(c) for c in uniq])
    freq = float(hits[np.asarray(inverse).reshape(-1)].mean())
    bound = math.exp(-n * b / config.alpha)
    f = max(freq, bound)
    sigma = math.sqrt(f * (1 - f) / trials)
    cert = RiskCertificate(
        "tail",
        n,
        {"theta_star": np.asarray(theta_star, dtype=float).tolist(), "b": b, "trials": trials, "seed": seed},
        margins={"bound_plus_3sigma_minus_frequency": bound + 3 * sigma - freq},
        passed=freq <= bound + 3 * sigma,
    )
    row = {"b": b, "frequency": freq, "bound": bound, "sigma": sigma}
    if exact and family.n_symbols**n <= cap:
        types, logw = _types(family, n, cap)
        logprob = logw + np.array([c[c > 0] @ logp[c > 0] for c in types])
        row["exact_probability"] = float(np.exp(logprob)[np.array([event(c) for c in types])].sum())
    cert.tail.append(row)
    return cert


# ---------------------------------------------------------------- bundle obligations


@dataclass(frozen=True)
class SequenceAudit:
    counts: list[int]
    label: str
    regret: float
    v_hat: float
    v_near: float
    small_v_bound: float | None = None
    tilt_margin: float | None = None
    large_v_lhs: float | None = None
    large_v_rhs: float | None = None
    bundle_gain: float | None = None
    bundle_floor: float | None = None


@dataclass
class BundleAudit:
    n: int
    constants: dict
    delta: float
    u: float
    rows: list[SequenceAudit]
    tol: float = 1e-9

    def of(self, label: str) -> list[SequenceAudit]:
        return [r for r in self.rows if r.label == label]

    @property
    def small_v_ok(self) -> bool:
        return all(r.regret <= r.small_v_bound + self.tol for r in self.of(G_N))

    @property
    def margin_ok(self) -> bool:
        return all(r.tilt_margin > 0 for r in self.of(G_N_C))

    @property
    def large_v_ok(self) -> bool:
        return all(r.large_v_lhs < r.large_v_rhs + self.tol for r in self.of(G_N_C))

    @property
    def bundle_ok(self) -> bool:
        return all(r.bundle_gain >= r.bundle_floor - self.tol for r in self.of(G_N_C))


def desk_certify(
    family, n: int, config: CodeConfig = CodeConfig(), *, max_rounds: int = 20, cap: int = DEFAULT_CAP
) -> AssumptionConstants:
    """Constants calibrated on every sequence of length n.

    Delta and epsilon are set just above the largest distance between an
    interior estimate and its nearest grid point. gamma is the largest value
    (times 0.99) for which every large-V sequence keeps the ratio
    ||V(nearest point)|| / ||V(estimate)|| above gamma; B is then recertified
    for the resulting tilt radius.
    """
    types, _ = _types(family, n, cap)
    plain = CodeConfig(**{**config.to_dict(), "use_bundle": False})
    grid = codebook(family, n, plain).grid
    rows = []
    for c in types:
        est = mle_counts(family, c)
        if est.boundary:
            continue
        i, near, _ = nearest_point(grid, est.theta)
        v_hat = max_norm(v_statistic_counts(family, est.theta, c))
        v_near = max_norm(v_statistic_counts(family, near, c))
        rows.append((float(np.linalg.norm(near - est.theta)), v_hat, v_near))
    dist = max(r[0] for r in rows)
    radius = 1.0001 * max(dist, 1e-12)
    consts = certify_assumptions(family, alpha=config.alpha, nu=config.nu, epsilon=radius, Delta=radius)
    calibrated = False
    for _ in range(max_rounds):
        c_thr = 4 * config.nu * config.alpha * consts.B * math.log(n) / n
        caps = [max(vn / vh, c_thr / vh**2) for _, vh, vn in rows if vh > 0]
        gamma_max = min(caps) if caps else 1.0
        if calibrated and consts.gamma < gamma_max:
            break
        consts = certify_assumptions(
            family, alpha=config.alpha, nu=config.nu, epsilon=radius, Delta=radius, gamma=min(0.99, 0.99 * gamma_max)
        )
        calibrated = True
    else:
        raise ConvergenceError("gamma calibration did not settle")
    labels = {"gamma": f"desk-calibrated on all sequences of length {n}", "Delta": "desk-calibrated", "epsilon": "desk-calibrated"}
    return consts.with_values(labels=labels)


def bundle_audit(
    family,
    n: int,
    config: CodeConfig = CodeConfig(),
    constants: AssumptionConstants | None = None,
    *,
    cap: int = DEFAULT_CAP,
):
    """Evaluate both sides of the interior-regret obligations on every sequence of length n."""
    consts = constants or family.constants
    book = Codebook.build(family, n, config, consts)
    tilts = book.tilts
    if tilts is None:
        raise PreconditionError("the bundle audit needs the tilted code (use_bundle=True)")
    K, a, alpha = family.dim, config.a, config.alpha
    g = tilts.g
    delta, u, B, gamma = tilts.delta, tilts.u, tilts.B, tilts.gamma
    Cn = c_n(consts, K, a, n, config.beta)
    CG = c_gn(consts, K, a, n, config.beta)
    quad = Cn * consts.c_eps * K * a * a / 8
    small_v_bound = CG * K * a * a * (1 + K * delta) / 8 + alpha * (book.grid.L_n + tilts.l2)
    types, _ = _types(family, n, cap)
    rows = []
    for c in types:
        est = mle_counts(family, c)
        if est.boundary:
            continue
        enc = encode_counts(family, c, config, book=book)
        regret = enc.total - enc.switch_length + est.loglik
        V_hat = v_statistic_counts(family, est.theta, c)
        v_hat = max_norm(V_hat)
        label = G_N if v_hat <= delta else G_N_C
        i, near, _ = nearest_point(book.grid, est.theta)
        V_near = v_statistic_counts(family, near, c)
        v_near = max_norm(V_near)
        if label == G_N:
            rows.append(SequenceAudit(c.tolist(), label, regret, v_hat, v_near, small_v_bound=small_v_bound))
            continue
        j = select_xi_index(V_near, tilts)
        mask = c > 0
        log_tilted = float(c[mask] @ book.logp[i, j, mask])
        log_plain = float(c[mask] @ book.logp[i, 0, mask])
        gval = (log_tilted - log_plain) / n
        margin = gval - u * v_near * (1 - B * u / (2 * gamma * delta))
        lhs = est.loglik - log_tilted
        rhs = quad - v_hat * (gamma * delta * n * v_near / (2 * B * v_hat) - quad)
        total_tilted = -log_tilted + book.model_length[i, j]
        total_plain = -log_plain + book.model_length[i, 0]
        floor = n * u * v_near * (1 - B * u / (2 * gamma * delta)) - alpha * (tilts.l2bar - tilts.l2)
        rows.append(
            SequenceAudit(
                c.tolist(),
                label,
                regret,
                v_hat,
                v_near,
                tilt_margin=margin,
                large_v_lhs=lhs,
                large_v_rhs=rhs,
                bundle_gain=float(total_plain - total_tilted),
                bundle_floor=floor,
            )
        )
    return BundleAudit(n, consts.to_dict(), delta, u, rows)


def default_tilt_g(family, config: CodeConfig, constants=None) -> float:
    consts = constants or family.constants
    return config.g or default_g(config.alpha, config.nu, consts.B, consts.gamma)


__all__ = [
    "BundleAudit",
    "DivergenceValue",
    "MaxRegret",
    "RiskCertificate",
    "SequenceAudit",
    "bundle_audit",
    "default_tilt_g",
    "desk_certify",
    "exhaustive_kraft",
    "exhaustive_max_regret",
    "kl_divergence",
    "renyi_divergence",
    "shtarkov_complexity",
    "verify_risk_chain",
    "verify_tail_bound",
]
