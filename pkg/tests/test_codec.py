import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdlbundle import (
    BernoulliFamily,
    ConfigError,
    DecodeError,
    MixtureFamily,
    PreconditionError,
    WrongRouteError,
    build_grid,
    log_likelihood,
    mle,
)
from mdlbundle.bundle import G_N_C, classify_counts
from mdlbundle.codec import (
    BOUNDARY,
    INTERIOR,
    CodeConfig,
    Codebook,
    boundary_encode,
    c_gn,
    c_n,
    codebook,
    decode_bitstream,
    encode,
    encode_bitstream,
    encode_counts,
    exp_regret_bound,
    ideal_bits,
    nonexp_regret_bound,
    regret,
    tilt_parameters,
)
from mdlbundle.models import ParamSpace
from mdlbundle.quantizer import ConstantFisher, QuantizedGrid, cardinality_bound
from mdlbundle.sequences import compositions

from .conftest import FOUR_SYMBOL, THREE_SYMBOL

PLAIN = CodeConfig(use_bundle=False, combined=False)


@pytest.fixture(scope="module")
def two_point_book():
    fam = BernoulliFamily(0.0, 1.0)
    grid = QuantizedGrid.from_points(np.array([[0.25], [0.75]]), fam.space, n=3)
    return fam, Codebook.build(fam, 3, PLAIN, grid=grid)


def test_two_point_example(two_point_book):
    fam, book = two_point_book
    enc = encode(fam, [1, 1, 0], PLAIN, book=book)
    assert enc.theta[0] == 0.75
    assert enc.data_length == pytest.approx(-math.log(0.75**2 * 0.25), abs=1e-12)
    assert enc.model_length == pytest.approx(2 * math.log(2), abs=1e-12)
    assert enc.total == pytest.approx(3.3480, abs=1e-4)
    assert mle(fam, [1, 1, 0]).loglik == pytest.approx(-1.9095, abs=1e-4)
    assert regret(fam, [1, 1, 0], enc) == pytest.approx(3.3480 - 1.9095, abs=2e-4)


def test_switch_added_in_combined_mode(two_point_book):
    fam, _ = two_point_book
    cfg = CodeConfig(use_bundle=False)
    grid = QuantizedGrid.from_points(np.array([[0.25], [0.75]]), fam.space, n=3)
    enc = encode(fam, [1, 1, 0], cfg, book=Codebook.build(fam, 3, cfg, grid=grid))
    assert enc.switch_length == pytest.approx(2 * 3**-0.25)
    assert enc.total == pytest.approx(3.34795 + 2 * 3**-0.25, abs=1e-4)


def test_parts_add_up(mix3):
    rng = np.random.default_rng(3)
    for _ in range(20):
        xs = rng.integers(0, 3, size=int(rng.integers(1, 40)))
        enc = encode(mix3, xs)
        assert enc.total == pytest.approx(sum(enc.parts().values()), abs=1e-12)


def test_exponential_family_never_tilts(canon):
    for n in (2, 5, 9, 16):
        for counts in compositions(n, 2):
            enc = encode_counts(canon, counts)
            assert enc.xi_index == 0


@pytest.mark.parametrize("components,tau", [(THREE_SYMBOL, 0.2), (FOUR_SYMBOL, 0.15)])
def test_shortcut_matches_reference(components, tau):
    fam = MixtureFamily(components, tau)
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(1, 60))
        counts = rng.multinomial(n, rng.dirichlet(np.ones(fam.n_symbols)))
        full = encode_counts(fam, counts)
        fast = encode_counts(fam, counts, reference=False)
        assert (full.route, full.theta_index, full.xi_index) == (fast.route, fast.theta_index, fast.xi_index)
        assert full.total == fast.total


def test_bundle_is_used_on_some_sequences(mix3):
    used = 0
    for counts in compositions(40, 3):
        enc = encode_counts(mix3, counts)
        used += enc.xi_index != 0
    assert used > 0


def test_point_face(mix2):
    xs = [0] * 10
    est = mle(mix2, xs)
    assert est.boundary
    enc = encode(mix2, xs)
    assert enc.route == BOUNDARY
    assert enc.model_length == 0.0
    assert enc.descriptor_length == pytest.approx(2 * math.log(2))
    assert enc.switch_length == pytest.approx(-2 * math.log(1 - math.exp(-(10**-0.25))))
    assert enc.data_length == pytest.approx(-log_likelihood(mix2, est.theta, xs), abs=1e-12)
    assert regret(mix2, xs, enc) == pytest.approx(2 * math.log(2) + enc.switch_length, abs=1e-12)


def test_boundary_encode_rejects_interior(mix2):
    with pytest.raises(WrongRouteError):
        boundary_encode(mix2, [0, 1, 0, 1])
    assert boundary_encode(mix2, [1, 1, 1]).route == BOUNDARY


def test_face_of_two_dimensional_mixture(mix_k2):
    xs = [3] * 6 + [2] * 2
    est = mle(mix_k2, xs)
    assert est.boundary
    enc = encode(mix_k2, xs)
    assert enc.route == BOUNDARY
    assert enc.descriptor_length == pytest.approx(3 * math.log(2))
    assert mix_k2.space.contains(enc.theta)


def test_plain_code_keeps_boundary_estimates_interior(mix2):
    assert encode(mix2, [0] * 10, PLAIN).route == INTERIOR


def test_descriptor_kraft(mix_k2, bern):
    for fam in (mix_k2, bern):
        count = fam.boundary_descriptor_count()
        width = (count - 1).bit_length()
        assert count * 2.0**-width <= 1.0
        assert {fam.descriptor_index(fam.descriptor_active(i)) for i in range(count)} == set(range(count))


def test_grid_sample_mismatch(mix2):
    book = codebook(mix2, 5, CodeConfig())
    with pytest.raises(PreconditionError):
        encode(mix2, [0, 1, 1], book=book)


def test_empty_sequence_needs_a_stream(mix2):
    with pytest.raises(PreconditionError):
        encode(mix2, [])


def test_config_validation():
    with pytest.raises(ConfigError):
        CodeConfig(alpha=0.5)
    with pytest.raises(ConfigError):
        CodeConfig(alpha=2.0, lam=0.7)
    with pytest.raises(ConfigError):
        CodeConfig(iota=0.6)
    assert CodeConfig().lam == 0.5
    assert CodeConfig(alpha=1.0).lam is None


def test_regret_of_grid_point_is_nonnegative(mix3):
    cfg = CodeConfig(alpha=1.0, use_bundle=False, combined=False)
    fam = mix3
    grid = QuantizedGrid.from_points(np.array([[0.45]]), fam.space, n=6)
    book = Codebook.build(fam, 6, cfg, grid=grid)
    for counts in compositions(6, 3):
        xs = np.repeat(np.arange(3), counts)
        enc = encode(fam, xs, cfg, book=book)
        assert enc.model_length == 0.0
        assert regret(fam, xs, enc) >= -1e-12


# ------------------------------------------------------------------ bounds


def test_c_n_tends_to_one(mix2):
    consts = mix2.constants
    values = [c_n(consts, 1, 2.0, n) for n in (10, 10**3, 10**6, 10**12, 10**20)]
    assert all(x > y for x, y in zip(values, values[1:]))
    assert values[-1] == pytest.approx(1.0, abs=1e-3)
    n = 500
    assert c_gn(consts, 1, 2.0, n) == pytest.approx(
        c_n(consts, 1, 2.0, n) * (1 + consts.kappa_p * 2.0 / math.sqrt(consts.zeta) * n**-0.5 / 2)
    )


def test_constant_fisher_exp_bound():
    fam = ConstantFisher(ParamSpace.box([0.0], [1.0]))
    rep = exp_regret_bound(fam, 10**4, CodeConfig())
    consts = fam.constants
    # independent evaluation of the formula
    n, K, a, alpha = 10**4, 1, 2.0, 2.0
    k = consts.kappa * math.sqrt(K) * a
    Cn = (1 + k * n**-0.25) * (1 + k * n**-0.5 / math.sqrt(consts.zeta) / 2)
    C_J, C_K = 2.0, 2.0
    C_Theta = K * a * consts.D_J / math.sqrt(consts.zeta**K)
    r = math.log1p(C_J * n**-0.25) + math.log1p(C_Theta * n**-0.25) + math.log1p(C_K * a * n**-0.25)
    f = Cn * K * a * a / (8 * alpha) - K * math.log(a) + r
    assert rep.bound == pytest.approx(0.5 * math.log(n) + 0.0 + f, abs=1e-9)
    assert rep.REG_bar == pytest.approx(alpha * (rep.bound + n**-0.25), abs=1e-9)


def test_exp_bound_requires_exponential_family(mix2):
    with pytest.raises(WrongRouteError):
        exp_regret_bound(mix2, 100)


def test_nonexp_bound_terms(mix2):
    cfg = CodeConfig()
    rep = nonexp_regret_bound(mix2, 1000, cfg)
    consts = mix2.constants
    g, _, _ = tilt_parameters(mix2, cfg)
    delta = math.sqrt(g * math.log(1000) / 1000)
    card = cardinality_bound(mix2, 1000)
    CG = c_gn(consts, 1, 2.0, 1000)
    f_ne = 0.5 * math.log(2 * math.pi) - math.log(2) + CG * 4 * (1 + delta) / 16 + card.r + 1000**-0.05
    assert rep.C_G == pytest.approx(CG)
    assert rep.f_ne == pytest.approx(f_ne, rel=1e-9)
    assert rep.bound == pytest.approx(0.5 * math.log(1000 / (2 * math.pi)) + math.log(card.integral) + f_ne, rel=1e-9)
    assert math.isfinite(rep.log_n0) and rep.regime_reached == (1000 >= rep.n0)
    slack = consts.gamma * g / (2 * consts.B) - 0.05 * 2
    assert rep.log_n0 >= (consts.c_eps * 4 + 2 * math.log(2)) / slack - 1e-9


def test_nonexp_bound_rejects_bad_g(mix2):
    with pytest.raises(ConfigError, match="violated"):
        nonexp_regret_bound(mix2, 100, CodeConfig(g=1e-4))


# ------------------------------------------------------------------ bitstream


def test_roundtrip_random(mix3, mix_k2):
    rng = np.random.default_rng(5)
    for fam in (mix3, mix_k2):
        for _ in range(40):
            n = int(rng.integers(1, 300))
            xs = rng.choice(fam.n_symbols, size=n, p=fam.pmf(fam.space.sample(rng, 1)[0])).tolist()
            blob = encode_bitstream(fam, xs)
            assert decode_bitstream(fam, blob) == xs
            assert 8 * len(blob) <= ideal_bits(fam, xs) + 32


def test_roundtrip_without_bundle(mix3):
    cfg = CodeConfig(use_bundle=False)
    xs = [0, 2, 2, 1] * 20
    assert decode_bitstream(mix3, encode_bitstream(mix3, xs, cfg), None, cfg) == xs


def test_empty_stream(mix2):
    blob = encode_bitstream(mix2, [])
    assert blob == bytes([0x4D, 1, 0, 0, 0, 0])
    assert decode_bitstream(mix2, blob) == []


def test_header_layout(mix2):
    blob = encode_bitstream(mix2, [0, 1, 1, 0, 1])
    assert blob[:6] == bytes([0x4D, 1, 0, 0, 0, 5])


@pytest.mark.parametrize("position", [0, 1, 3, 7, 9])
def test_corrupted_stream(mix3, position):
    xs = [0, 2, 1, 2, 2, 0, 1] * 9
    blob = bytearray(encode_bitstream(mix3, xs))
    blob[position] ^= 0x10
    with pytest.raises(DecodeError) as info:
        decode_bitstream(mix3, bytes(blob))
    assert info.value.offset is not None


def test_truncated_stream(mix3):
    blob = encode_bitstream(mix3, [0, 2, 1] * 30)
    with pytest.raises(DecodeError):
        decode_bitstream(mix3, blob[:-3])
    with pytest.raises(DecodeError):
        decode_bitstream(mix3, blob[:4])


def test_expected_length_mismatch(mix2):
    blob = encode_bitstream(mix2, [0, 1])
    with pytest.raises(DecodeError):
        decode_bitstream(mix2, blob, 3)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=120))
def test_roundtrip_property(xs):
    fam = FAM3
    blob = encode_bitstream(fam, xs)
    assert decode_bitstream(fam, blob, len(xs)) == xs


@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.booleans())
def test_roundtrip_property_boundary_heavy(xs, flip):
    fam = FAM2
    xs = [1 - x for x in xs] if flip else xs
    cfg = replace(CodeConfig(), seed=1)
    assert decode_bitstream(fam, encode_bitstream(fam, xs, cfg), None, cfg) == xs


FAM2 = MixtureFamily(np.array([[0.9, 0.1], [0.2, 0.8]]), 0.2)
FAM3 = MixtureFamily(THREE_SYMBOL, 0.2)


def test_default_bundle_finds_gc_sequences():
    g, _, _ = tilt_parameters(FAM3, CodeConfig())
    labels = {classify_counts(FAM3, c, g) for c in compositions(30, 3)}
    assert G_N_C in labels


def test_codebook_grid_is_default_grid(mix3):
    book = codebook(mix3, 17, CodeConfig())
    assert np.array_equal(book.grid.points, build_grid(mix3, 17).points)
