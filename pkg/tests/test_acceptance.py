"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (visible even when pytest captures
output) before asserting, so a run log doubles as the acceptance report.
"""

import math
import time

import numpy as np
import pytest

from mdlbundle import (
    BernoulliFamily,
    CanonicalBernoulli,
    MixtureFamily,
    ParamSpace,
    build_grid,
    cardinality_bound,
    nearest_point,
)
from mdlbundle.bundle import G_N, G_N_C, build_tilting_grid, log_normalizer, spectral_norm, tilted_pmf
from mdlbundle.codec import CodeConfig, decode_bitstream, encode_bitstream, exp_regret_bound, ideal_bits
from mdlbundle.models import max_norm, v_symbols_batch
from mdlbundle.oracles import (
    bundle_audit,
    desk_certify,
    exhaustive_kraft,
    exhaustive_max_regret,
    shtarkov_complexity,
    verify_risk_chain,
    verify_tail_bound,
)
from mdlbundle.quantizer import ConstantFisher

from .conftest import FOUR_SYMBOL, THREE_SYMBOL, TWO_SYMBOL
from .test_oracles import binomial_shtarkov

TOL = 1e-9


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(number, title, ok, detail=""):
        line = f"[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {title}"
        line += f"  ({detail}; {time.perf_counter() - start:.1f}s)" if detail else f"  ({time.perf_counter() - start:.1f}s)"
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


@pytest.fixture(scope="module")
def mixture_k1():
    return MixtureFamily(TWO_SYMBOL, 0.2)


@pytest.fixture(scope="module")
def mixture_m3():
    return MixtureFamily(THREE_SYMBOL, 0.2)


@pytest.fixture(scope="module")
def mixture_k2():
    return MixtureFamily(FOUR_SYMBOL, 0.15)


def test_01_kraft_sums(report, mixture_k1):
    worst = -math.inf
    for fam in (BernoulliFamily(), mixture_k1):
        for alpha in (1.0, 2.0):
            for combined in (False, True):
                cfg = CodeConfig(alpha=alpha, combined=combined)
                for n in range(1, 11):
                    worst = max(worst, exhaustive_kraft(cfg, fam, n))
    ok = worst <= 1 + TOL
    report(1, "Kraft sums <= 1 (Bernoulli and K=1 mixture, n=1..10, alpha 1 and 2, plain and combined)", ok,
           f"largest sum {worst:.6f}")
    assert ok


def test_02_quantization_error(report, mixture_m3, mixture_k2):
    rng = np.random.default_rng(2)
    worst_quad, worst_seg = -math.inf, -math.inf
    for fam in (mixture_m3, mixture_k2):
        K = fam.dim
        for n in (100, 10_000):
            grid = build_grid(fam, n)
            a = grid.a
            for theta in fam.space.sample(rng, 10_000):
                _, point, quad = nearest_point(grid, theta)
                worst_quad = max(worst_quad, quad - K * a * a / (4 * n))
                anchor = grid.cell_containing(theta).anchor
                reach = max(np.linalg.norm(theta - anchor), np.linalg.norm(point - anchor))
                worst_seg = max(worst_seg, reach - math.sqrt(K) * a * n**-0.25)
    ok = worst_quad <= TOL and worst_seg <= TOL
    report(2, "quantization: quad <= K a^2/(4n) and segment stays within sqrt(K) a n^-1/4 of the anchor", ok,
           f"max excess {worst_quad:.2e} / {worst_seg:.2e}")
    assert ok


def test_03_cardinality(report, mixture_m3, mixture_k2):
    families = [
        mixture_m3,
        mixture_k2,
        ConstantFisher(ParamSpace.box([0.0], [1.0])),
        ConstantFisher(ParamSpace.box([0.0, 0.0], [1.0, 1.0]), np.array([[2.0, 0.5], [0.5, 1.0]])),
    ]
    ratios = []
    for fam in families:
        integral = None
        for n in (100, 1000, 10_000, 100_000):
            cb = cardinality_bound(fam, n, integral=integral)
            integral = (cb.integral, cb.integral_error)
            ratios.append(build_grid(fam, n).cardinality / cb.count_bound)
    ok = max(ratios) <= 1.0
    report(3, "grid size <= exp(cardinality bound), K=1,2, n up to 1e5", ok, f"largest size/bound {max(ratios):.3f}")
    assert ok


def test_04_exponential_family_regret(report):
    # the bound describes the untilted two-part code; the tilted code also pays alpha * l_2 for its xi = 0 flag
    fam = CanonicalBernoulli()
    slack, tilted_slack = math.inf, math.inf
    for a in (1.0, 2.0):
        for n in (8, 10, 12):
            cfg = CodeConfig(a=a, use_bundle=False)
            bound = cfg.alpha * exp_regret_bound(fam, n, cfg).bound
            interior = exhaustive_max_regret(cfg, fam, n).by_route["interior"]["value"] - cfg.interior_switch(n)
            slack = min(slack, bound - interior)
            tilted = CodeConfig(a=a)
            rep = exhaustive_max_regret(tilted, fam, n)
            tilted_slack = min(tilted_slack, bound - rep.by_route["interior"]["value"] + tilted.interior_switch(n))
    ok = slack >= -TOL
    report(4, "canonical Bernoulli: max interior regret <= alpha * bound, n=8,10,12, a=1,2", ok,
           f"smallest slack {slack:.4f}; tilted code for reference {tilted_slack:.4f}")
    assert ok


def test_05_bundle_obligations(report, mixture_m3):
    cfg = CodeConfig()
    consts = desk_certify(mixture_m3, 12, cfg)
    audit = bundle_audit(mixture_m3, 12, cfg, consts)
    gn, gc = audit.of(G_N), audit.of(G_N_C)
    ok = bool(gn) and bool(gc) and audit.small_v_ok and audit.margin_ok and audit.large_v_ok
    report(5, "large-V obligations at n=12: small-V regret chain, tilt margin, large-V regret inequality", ok,
           f"{len(gn)} small-V / {len(gc)} large-V sequences, min tilt margin "
           f"{min(r.tilt_margin for r in gc):.4f}")
    assert ok


def test_06_risk_chain(report, mixture_k1):
    worst = math.inf
    for theta in (0.3, 0.5, 0.7):
        for n in (6, 8, 10):
            cert = verify_risk_chain(mixture_k1, [theta], n, CodeConfig(alpha=2.0, lam=0.5))
            worst = min(worst, *cert.margins.values())
    ok = worst >= -TOL
    report(6, "risk <= redundancy/n <= resolvability, exact, 3 sources x n=6,8,10", ok, f"smallest margin {worst:.2e}")
    assert ok


def test_07_tail_bound(report, mixture_k1):
    rows = []
    ok = True
    for b in (0.05, 0.1):
        cert = verify_tail_bound(mixture_k1, [0.5], 50, b, trials=100_000, seed=0, config=CodeConfig(), exact=False)
        ok &= cert.passed
        t = cert.tail[0]
        rows.append(f"b={b}: {t['frequency']:.5f} <= {t['bound']:.4f}+3*{t['sigma']:.5f}")
    report(7, "tail frequency <= exp(-n b / alpha) + 3 sigma, n=50, 1e5 trials", ok, "; ".join(rows))
    assert ok


def test_08_nml_ordering(report, mixture_k1, mixture_m3):
    cfg = CodeConfig()
    gap = math.inf
    for fam, ns in ((BernoulliFamily(), (2, 6, 10)), (mixture_k1, (4, 8, 12)), (mixture_m3, (4, 8)),
                    (CanonicalBernoulli(), (4, 8, 12))):
        for n in ns:
            gap = min(gap, exhaustive_max_regret(cfg, fam, n).value - shtarkov_complexity(fam, n))
    unit = BernoulliFamily(0.0, 1.0)
    closed = max(abs(shtarkov_complexity(unit, n) - binomial_shtarkov(n)) for n in range(1, 21))
    ok = gap >= -TOL and closed <= 1e-10
    report(8, "two-part max regret >= NML complexity; binomial closed form", ok,
           f"smallest gap {gap:.4f}, closed-form error {closed:.1e}")
    assert ok


def test_09_bundle_dominance(report, mixture_m3):
    cfg = CodeConfig()
    worst, count = math.inf, 0
    for n in (12, 20, 30, 40):
        consts = desk_certify(mixture_m3, n, cfg, cap=2**80)
        audit = bundle_audit(mixture_m3, n, cfg, consts, cap=2**80)
        for r in audit.of(G_N_C):
            worst = min(worst, r.bundle_gain - r.bundle_floor)
            count += 1
    ok = count > 0 and worst >= -TOL
    report(9, "tilted candidate beats the untilted one by the guaranteed amount on large-V sequences", ok,
           f"{count} sequences, smallest excess {worst:.4f}")
    assert ok


def test_10_bitstream(report, mixture_m3, mixture_k2):
    rng = np.random.default_rng(10)
    failures, worst = 0, -math.inf
    for k in range(1000):
        fam = mixture_m3 if k % 2 else mixture_k2
        n = int(rng.integers(0, 513))
        p = fam.pmf(fam.space.sample(rng, 1)[0])
        xs = rng.choice(fam.n_symbols, size=n, p=p).tolist()
        blob = encode_bitstream(fam, xs)
        failures += decode_bitstream(fam, blob) != xs
        worst = max(worst, 8 * len(blob) - ideal_bits(fam, xs))
    ok = failures == 0 and worst <= 32
    report(10, "1000 bitstream roundtrips exact, length within 32 bits of ideal", ok,
           f"{failures} mismatches, largest overhead {worst:.2f} bits")
    assert ok


def test_11_identities(report, mixture_m3, mixture_k2):
    rng = np.random.default_rng(11)
    psi0 = ev = norm = 0.0
    for fam in (mixture_m3, mixture_k2):
        K = fam.dim
        grid = build_tilting_grid(K, 50, 1.0, 0.5, 2.0, 0.05)
        thetas = fam.space.sample(rng, 200)
        V = v_symbols_batch(fam, thetas)
        ev = max(ev, float(np.abs(np.einsum("nm,nmkl->nkl", fam.pmf_batch(thetas), V)).max()))
        for theta in thetas[:50]:
            psi0 = max(psi0, abs(log_normalizer(fam, theta, np.zeros((K, K)))))
            for xi in grid.matrices:
                norm = max(norm, abs(tilted_pmf(fam, theta, xi).sum() - 1))
    sandwich = True
    for _ in range(1000):
        K = int(rng.integers(1, 5))
        A = rng.normal(size=(K, K))
        S = (A + A.T) / 2
        m, s = max_norm(S), spectral_norm(S)
        sandwich &= m / math.sqrt(K) <= s + 1e-12 and s <= K * m + 1e-12
    ok = psi0 == 0.0 and ev <= 1e-10 and norm <= 1e-12 and sandwich
    report(11, "psi(0)=0, E[V]=0, tilted pmfs normalize, norm sandwich on 1000 matrices", ok,
           f"|E V| {ev:.1e}, |sum-1| {norm:.1e}")
    assert ok
