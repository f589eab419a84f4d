"""Two-part codes, the MDL estimator and regret bounds.

The interior code minimizes ``-log pbar_{theta, xi}(x^n) + alpha (L_n + Ltilde_n(xi))``
over the quantized grid and the tilting grid. The combined code adds a switch
length and sends boundary estimates to a face sub-family code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from . import _arith
from .bundle import TiltingGrid, build_tilting_grid, select_xi_index
from .errors import ConfigError, DecodeError, PreconditionError, WrongRouteError
from .models import (
    AssumptionConstants,
    Family,
    _PointFamily,
    default_g,
    mle_counts,
    v_symbols_batch,
)
from .quantizer import QuantizedGrid, build_grid, cardinality_bound
from .sequences import as_symbols, counts_of

MAGIC = 0x4D
VERSION = 1
INTERIOR, BOUNDARY = "interior", "boundary"


@dataclass(frozen=True)
class CodeConfig:
    alpha: float = 2.0
    lam: float | None = None
    a: float = 2.0
    beta: float = 0.25
    g: float | None = None
    nu: float = 0.05
    iota: float = 0.25
    d: float = 1.0
    use_bundle: bool = True
    combined: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.alpha >= 1:
            raise ConfigError(f"alpha must be at least 1, got {self.alpha}")
        top = 1.0 - 1.0 / self.alpha
        if self.lam is None:
            if top > 0:
                object.__setattr__(self, "lam", top)
        elif not 0 < self.lam <= top + 1e-15:
            raise ConfigError(f"lambda must lie in (0, 1 - 1/alpha] = (0, {top:.6g}], got {self.lam}")
        if not self.d > 2 * self.iota > 0:
            raise ConfigError(f"need d > 2 iota > 0, got d={self.d}, iota={self.iota}")
        if not self.a > 0 or not 0 < self.beta < 0.5:
            raise ConfigError("need a > 0 and 0 < beta < 1/2")
        if not self.nu > 0 or (self.g is not None and not self.g > 0):
            raise ConfigError("need nu > 0 and g > 0")

    def l1(self, n: int) -> float:
        return n ** (-self.iota)

    def interior_switch(self, n: int) -> float:
        return self.alpha * self.l1(n) if self.combined else 0.0

    def boundary_switch(self, n: int) -> float:
        return -self.alpha * math.log(-math.expm1(-self.l1(n)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class Encoding:
    route: str
    theta_index: int
    theta: np.ndarray
    xi_index: int
    xi: np.ndarray
    data_length: float
    model_length: float
    switch_length: float
    total: float
    probs: np.ndarray
    descriptor_length: float = 0.0
    face: tuple[int, ...] = ()

    def parts(self) -> dict:
        return {
            "data": self.data_length,
            "model": self.model_length,
            "switch": self.switch_length,
            "descriptor": self.descriptor_length,
        }


def _ceil_log2(m: int) -> int:
    return (m - 1).bit_length()


# ---------------------------------------------------------------- codebooks


@dataclass(eq=False)
class SubCodebook:
    """Plain two-part code on a face sub-family (no tilting)."""

    active: tuple[int, ...]
    descriptor: int
    points: np.ndarray  # embedded in the full parameter space
    logp: np.ndarray  # (P, M)
    L_n: float


@dataclass(eq=False)
class Codebook:
    """Everything the encoder and decoder share for one sample size."""

    family: Family
    n: int
    config: CodeConfig
    grid: QuantizedGrid
    tilts: TiltingGrid | None
    logp: np.ndarray  # (P, X, M) tilted log-probabilities
    vsym: np.ndarray  # (P, M, K, K)
    model_length: np.ndarray  # (P, X)
    constants: AssumptionConstants | None = None
    _faces: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        family: Family,
        n: int,
        config: CodeConfig,
        constants: AssumptionConstants | None = None,
        *,
        grid: QuantizedGrid | None = None,
    ):
        if n < 1:
            raise PreconditionError("a codebook needs n >= 1")
        grid = grid if grid is not None else build_grid(family, n, config.a, config.beta)
        pts = grid.points
        with np.errstate(divide="ignore"):
            logp0 = np.log(family.pmf_batch(pts))
        vsym = v_symbols_batch(family, pts)
        alpha = config.alpha
        tilts = None
        if config.use_bundle and n >= 2:
            consts = constants or family.constants
            g = config.g or default_g(alpha, config.nu, consts.B, consts.gamma)
            tilts = build_tilting_grid(
                family.dim, n, g, consts.gamma, consts.B, config.nu, alpha=alpha, delta_bar=consts.delta_bar
            )
            constants = consts
        if tilts is None:
            logp = logp0[:, None, :]
            model = np.full((len(pts), 1), alpha * grid.L_n)
        else:
            K = family.dim
            layers = [logp0]
            for idx in range(1, tilts.size):
                entry, sign = divmod(idx - 1, 2)
                l, m = divmod(entry, K)
                s = -tilts.u if sign else tilts.u
                logits = logp0 + s * vsym[:, :, l, m]
                layers.append(logits - logsumexp(logits, axis=1, keepdims=True))
            logp = np.stack(layers, axis=1)
            lt = np.array([tilts.code_length(i) for i in range(tilts.size)])
            model = alpha * (grid.L_n + lt)[None, :].repeat(len(pts), axis=0)
        return cls(family, n, config, grid, tilts, logp, vsym, model, constants)

    @property
    def xi_count(self) -> int:
        return 1 if self.tilts is None else self.tilts.size

    def xi_matrix(self, index: int) -> np.ndarray:
        if self.tilts is None:
            return np.zeros((self.family.dim, self.family.dim))
        return self.tilts.matrix(index)

    def face_code(self, active: tuple[int, ...]) -> SubCodebook:
        active = tuple(sorted(active))
        if active not in self._faces:
            sub, embed = self.family.face(active)
            descriptor = self.family.descriptor_index(active)
            if isinstance(sub, _PointFamily) or sub is None:
                probs = sub.pmf() if sub is not None else None
                with np.errstate(divide="ignore"):
                    logp = np.log(probs)[None, :]
                points = np.asarray(embed(np.zeros(0)), dtype=float)[None, :]
                self._faces[active] = SubCodebook(active, descriptor, points, logp, 0.0)
            else:
                grid = build_grid(sub, self.n, self.config.a, self.config.beta)
                with np.errstate(divide="ignore"):
                    logp = np.log(sub.pmf_batch(grid.points))
                points = np.stack([embed(p) for p in grid.points])
                self._faces[active] = SubCodebook(active, descriptor, points, logp, grid.L_n)
        return self._faces[active]


@lru_cache(maxsize=128)
def codebook(family: Family, n: int, config: CodeConfig) -> Codebook:
    """Cached codebook built with the family's own certified constants."""
    return Codebook.build(family, n, config)


# ---------------------------------------------------------------- encoding


def _data_lengths(logp: np.ndarray, counts: np.ndarray) -> np.ndarray:
    mask = counts > 0
    return -(logp[..., mask] @ counts[mask].astype(float))


def _book_for(family, n, config, book):
    if book is None:
        return codebook(family, n, config)
    if book.n != n:
        raise PreconditionError(f"codebook built for n={book.n} but the sequence has length {n}")
    return book


def encode(family: Family, xs, config: CodeConfig = CodeConfig(), *, book: Codebook | None = None, reference=True):
    """MDL estimate and code length of ``xs``.

    ``reference=True`` minimizes over the full product grid; otherwise each
    grid point only tries the zero tilt and its selected tilt.
    """
    counts = counts_of(as_symbols(xs, family.n_symbols), family.n_symbols)
    return encode_counts(family, counts, config, book=book, reference=reference)


def encode_counts(family, counts, config: CodeConfig = CodeConfig(), *, book=None, reference=True) -> Encoding:
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n < 1:
        raise PreconditionError("cannot encode an empty sequence with a two-part code")
    book = _book_for(family, n, config, book)
    if config.combined:
        est = mle_counts(family, counts)
        if est.boundary:
            return _boundary(book, counts, est.active)
    return _interior(book, counts, reference)


def _interior(book: Codebook, counts, reference: bool) -> Encoding:
    data = _data_lengths(book.logp, counts)
    total = data + book.model_length
    P, X = total.shape
    if reference or X == 1:
        flat = int(np.argmin(total))
        i, j = divmod(flat, X)
    else:
        V = np.einsum("m,pmkl->pkl", counts / counts.sum(), book.vsym)
        sel = np.array([select_xi_index(v, book.tilts) for v in V])
        cand = np.stack([total[:, 0], total[np.arange(P), sel]], axis=1)
        # keep the zero tilt on ties; otherwise the lowest grid index wins
        best = np.where(cand[:, 1] < cand[:, 0], sel, 0)
        vals = total[np.arange(P), best]
        i = int(np.argmin(vals))
        j = int(best[i])
    switch = book.config.interior_switch(book.n)
    probs = np.exp(book.logp[i, j])
    return Encoding(
        INTERIOR,
        i,
        book.grid.points[i].copy(),
        j,
        book.xi_matrix(j),
        float(data[i, j]),
        float(book.model_length[i, j]),
        switch,
        float(total[i, j]) + switch,
        probs,
    )


def boundary_encode(family: Family, xs, config: CodeConfig = CodeConfig(), *, book: Codebook | None = None):
    counts = counts_of(as_symbols(xs, family.n_symbols), family.n_symbols)
    n = int(counts.sum())
    est = mle_counts(family, counts)
    if not est.boundary:
        raise WrongRouteError("the maximum likelihood estimate is interior; use the interior code")
    return _boundary(_book_for(family, n, config, book), counts, est.active)


def _boundary(book: Codebook, counts, active) -> Encoding:
    family, config = book.family, book.config
    face = book.face_code(active)
    data = _data_lengths(face.logp, counts)
    model = config.alpha * face.L_n
    i = int(np.argmin(data))
    descriptor = math.log(family.boundary_descriptor_count())
    switch = config.boundary_switch(book.n)
    return Encoding(
        BOUNDARY,
        i,
        face.points[i].copy(),
        0,
        np.zeros((family.dim, family.dim)),
        float(data[i]),
        model,
        switch,
        float(data[i]) + model + switch + descriptor,
        np.exp(face.logp[i]),
        descriptor,
        face.active,
    )


def regret(family: Family, xs, encoding: Encoding) -> float:
    """Code length minus the in-model maximum-likelihood code length (may be negative)."""
    counts = counts_of(as_symbols(xs, family.n_symbols), family.n_symbols)
    return encoding.total + mle_counts(family, counts).loglik


# ---------------------------------------------------------------- bounds


@dataclass(frozen=True)
class RegretReport:
    n: int
    achieved: float | None
    C_n: float
    C_G: float | None
    r: float
    f: float
    f_ne: float | None
    bound: float
    REG_bar: float
    log_n0: float | None
    n0: float | None
    regime_reached: bool | None
    terms: dict

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def c_n(consts: AssumptionConstants, K: int, a: float, n: int, beta: float = 0.25) -> float:
    k = consts.kappa * math.sqrt(K) * a
    return (1 + k * n ** (-beta)) * (1 + k * n ** -0.5 / math.sqrt(consts.zeta) / 2)


def c_gn(consts: AssumptionConstants, K: int, a: float, n: int, beta: float = 0.25) -> float:
    return c_n(consts, K, a, n, beta) * (1 + consts.kappa_p * math.sqrt(K) * a / math.sqrt(consts.zeta) * n**-0.5 / 2)


def exp_regret_bound(family, n: int, config: CodeConfig = CodeConfig(), *, constants=None, integral=None):
    """Regret bound for exponential families in canonical parameters (divided by alpha)."""
    if not getattr(family, "is_exponential", False):
        raise WrongRouteError(f"{getattr(family, 'name', 'family')} is not an exponential family in canonical form")
    consts = constants or family.constants
    K, a, alpha = family.dim, config.a, config.alpha
    card = cardinality_bound(family, n, a, config.beta, constants=consts, integral=integral)
    Cn = c_n(consts, K, a, n, config.beta)
    f = Cn * K * a * a / (8 * alpha) - K * math.log(a) + card.r
    bound = 0.5 * K * math.log(n) + math.log(card.integral) + f
    terms = {
        "half_K_log_n": 0.5 * K * math.log(n),
        "log_fisher_volume": math.log(card.integral),
        "quantization": Cn * K * a * a / (8 * alpha),
        "minus_K_log_a": -K * math.log(a),
        "r": card.r,
        "l1": config.l1(n),
    }
    return RegretReport(n, None, Cn, None, card.r, f, None, bound, alpha * (bound + config.l1(n)), None, None, None, terms)


def tilt_parameters(family, config: CodeConfig, constants=None) -> tuple[float, float, float]:
    """(g, gamma, B) used by the bundle code."""
    consts = constants or family.constants
    g = config.g or default_g(config.alpha, config.nu, consts.B, consts.gamma)
    return g, consts.gamma, consts.B


def log_n0(consts: AssumptionConstants, K: int, a: float, g: float, alpha: float, nu: float) -> float:
    """Log of the sample-size threshold beyond which the non-exponential bound is guaranteed."""
    slack = consts.gamma * g / (2 * consts.B) - nu * alpha
    if not slack > 0:
        raise ConfigError(f"gamma g / (2B) - nu alpha > 0 is violated (value {slack:.6g})")
    cands = [
        math.log(K * a * a / (4 * consts.zeta)) - 2 * math.log(min(consts.epsilon, consts.Delta)),
        (consts.c_eps * K * a * a + alpha * math.log(2 * K * K)) / slack,
        -math.log(consts.kappa**4 * K * K * a**4),
        math.log(4 * consts.zeta / (consts.kappa**2 * K * a * a)),
    ]
    return max(cands)


def nonexp_regret_bound(family, n: int, config: CodeConfig = CodeConfig(), *, constants=None, integral=None):
    consts = constants or family.constants
    K, a, alpha = family.dim, config.a, config.alpha
    g, gamma, B = tilt_parameters(family, config, consts)
    ln0 = log_n0(consts, K, a, g, alpha, config.nu)
    card = cardinality_bound(family, n, a, config.beta, constants=consts, integral=integral)
    Cn = c_n(consts, K, a, n, config.beta)
    CG = c_gn(consts, K, a, n, config.beta)
    delta = math.sqrt(g * math.log(n) / n)
    l2 = n ** (-config.nu)
    quant = CG * K * a * a * (1 + K * delta) / (8 * alpha)
    f_ne = 0.5 * K * math.log(2 * math.pi) - K * math.log(a) + quant + card.r + l2
    bound = 0.5 * K * math.log(n / (2 * math.pi)) + math.log(card.integral) + f_ne
    terms = {
        "half_K_log_n_over_2pi": 0.5 * K * math.log(n / (2 * math.pi)),
        "log_fisher_volume": math.log(card.integral),
        "half_K_log_2pi": 0.5 * K * math.log(2 * math.pi),
        "minus_K_log_a": -K * math.log(a),
        "quantization": quant,
        "r": card.r,
        "l2": l2,
        "l1": config.l1(n),
        "delta_n": delta,
        "g": g,
        "gamma": gamma,
        "B": B,
    }
    f = Cn * K * a * a / (8 * alpha) - K * math.log(a) + card.r
    n0 = math.exp(ln0) if ln0 < 700 else math.inf
    return RegretReport(
        n, None, Cn, CG, card.r, f, f_ne, bound, alpha * (bound + config.l1(n)), ln0, n0, math.log(n) > ln0, terms
    )


# ---------------------------------------------------------------- bitstream


def _header_bits(book: Codebook, enc: Encoding) -> list[tuple[int, int]]:
    fields = [(1 if enc.route == BOUNDARY else 0, 1)]
    if enc.route == INTERIOR:
        fields.append((enc.theta_index, _ceil_log2(book.grid.cardinality)))
        if book.tilts is not None:
            if enc.xi_index == 0:
                fields.append((0, 1))
            else:
                fields.append((1, 1))
                fields.append((enc.xi_index - 1, _ceil_log2(2 * book.family.dim**2)))
    else:
        face = book.face_code(enc.face)
        fields.append((face.descriptor, _ceil_log2(book.family.boundary_descriptor_count())))
        fields.append((enc.theta_index, _ceil_log2(len(face.points))))
    return fields


def encode_bitstream(family: Family, xs, config: CodeConfig = CodeConfig(), *, book: Codebook | None = None) -> bytes:
    xs = as_symbols(xs, family.n_symbols)
    n = len(xs)
    if n >= 1 << 32:
        raise PreconditionError("sequences longer than 2^32 - 1 symbols cannot be framed")
    frame = bytes([MAGIC, VERSION]) + n.to_bytes(4, "big")
    if n == 0:
        return frame
    book = _book_for(family, n, config, book)
    enc = encode_counts(family, counts_of(xs, family.n_symbols), config, book=book)
    writer = _arith.BitWriter()
    for value, width in _header_bits(book, enc):
        writer.write(value, width)
    _arith.encode_symbols(writer, [int(x) for x in xs], _arith.frequency_table(enc.probs))
    return frame + writer.to_bytes()


def ideal_bits(family: Family, xs, config: CodeConfig = CodeConfig(), *, book: Codebook | None = None) -> float:
    """Frame, header and the Shannon length of the payload under the chosen density, in bits."""
    xs = as_symbols(xs, family.n_symbols)
    if len(xs) == 0:
        return 48.0
    book = _book_for(family, len(xs), config, book)
    enc = encode_counts(family, counts_of(xs, family.n_symbols), config, book=book)
    header = sum(w for _, w in _header_bits(book, enc))
    return 48.0 + header + enc.data_length / math.log(2)


def decode_bitstream(family: Family, data: bytes, n: int | None = None, config: CodeConfig = CodeConfig()) -> list[int]:
    data = bytes(data)
    if len(data) < 6:
        raise DecodeError("stream shorter than the 6-byte frame", offset=len(data))
    if data[0] != MAGIC:
        raise DecodeError(f"bad magic byte 0x{data[0]:02X}", offset=0)
    if data[1] != VERSION:
        raise DecodeError(f"unsupported version {data[1]}", offset=1)
    length = int.from_bytes(data[2:6], "big")
    if n is not None and n != length:
        raise DecodeError(f"header says n={length} but n={n} was expected", offset=2)
    if length == 0:
        if len(data) != 6:
            raise DecodeError("trailing bytes after an empty stream", offset=6)
        return []
    book = codebook(family, length, config)
    reader = _arith.BitReader(data, 48)

    def field(width, limit, what):
        value = reader.read(width)
        if value >= limit or reader.overrun:
            raise DecodeError(f"invalid {what} {value}", offset=reader.byte_offset)
        return value

    if reader.bit():
        if not config.combined:
            raise DecodeError("boundary route in a stream for the plain code", offset=6)
        count = family.boundary_descriptor_count()
        descriptor = field(_ceil_log2(count), count, "face descriptor")
        try:
            active = family.descriptor_active(descriptor)
            face = book.face_code(active)
        except Exception as exc:
            raise DecodeError(f"face descriptor {descriptor} names no face: {exc}", offset=reader.byte_offset) from exc
        i = field(_ceil_log2(len(face.points)), len(face.points), "parameter index")
        probs = np.exp(face.logp[i])
    else:
        P = book.grid.cardinality
        i = field(_ceil_log2(P), P, "parameter index")
        j = 0
        if book.tilts is not None and reader.bit():
            j = 1 + field(_ceil_log2(2 * family.dim**2), 2 * family.dim**2, "tilt index")
        probs = np.exp(book.logp[i, j])
    symbols = _arith.decode_symbols(reader, length, _arith.frequency_table(probs))
    # the code is canonical: a valid stream is exactly the encoding of what it decodes to
    again = encode_bitstream(family, symbols, config, book=book)
    if again != data:
        bad = next((k for k, (p, q) in enumerate(zip(again, data)) if p != q), min(len(again), len(data)))
        raise DecodeError("stream is not a valid encoding", offset=bad)
    return symbols
