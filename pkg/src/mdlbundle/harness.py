"""Experiment runner: spec files in, versioned CSV tables and a JSON manifest out."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import codec, oracles
from .codec import CodeConfig
from .errors import ConfigError, MDLError, WrongRouteError
from .models import Family, family_from_dict, mle_counts
from .sequences import DEFAULT_CAP, as_symbols

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("regret-curve", "bound-audit", "risk-cert", "kraft-sweep", "nml-compare", "compress")
SCHEMA_VERSION = 1
CONFIG_KEYS = set(CodeConfig.__dataclass_fields__)
SPEC_KEYS = {"family", "kind", "n", "config", "seed", "out"}
PARAM_KEYS = {
    "regret-curve": {"samples", "theta_star"},
    "bound-audit": {"cap"},
    "risk-cert": {"b", "trials", "theta_star"},
    "kraft-sweep": set(),
    "nml-compare": set(),
    "compress": {"input", "format"},
}


@dataclass
class ExperimentSpec:
    family_path: Path | None
    family: dict
    kind: str
    n_list: list[int]
    config: CodeConfig
    seed: int = 0
    out: Path = Path("out")
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind != "compress":
            if not self.n_list:
                raise ConfigError("the spec needs a non-empty n list")
            if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
                raise ConfigError("the n list must be strictly ascending")
            if any(n < 1 for n in self.n_list):
                raise ConfigError("every n must be positive")

    def to_dict(self) -> dict:
        return {
            "family_path": str(self.family_path) if self.family_path else None,
            "family": self.family,
            "kind": self.kind,
            "n": self.n_list,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "out": str(self.out),
            "params": self.params,
        }


def read_mapping(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    """Read an experiment spec; ``overrides`` replace config fields, the seed or the output directory."""
    path = Path(path)
    raw = read_mapping(path)
    overrides = dict(overrides or {})
    fam = raw.get("family")
    if isinstance(fam, str):
        family_path = (path.parent / fam).resolve()
        family = read_mapping(family_path)
    elif isinstance(fam, dict):
        family_path, family = None, fam
    else:
        raise ConfigError("the spec needs a 'family' entry (file path or inline table)")
    cfg = dict(raw.get("config", {}))
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    seed = overrides.pop("seed", None)
    seed = int(raw.get("seed", 0) if seed is None else seed)
    out = overrides.pop("out", None) or raw.get("out", "out")
    unknown = set(overrides) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config overrides: {', '.join(sorted(unknown))}")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg["seed"] = seed
    out = Path(out)
    if not out.is_absolute():
        out = path.parent / out
    params = {k: v for k, v in raw.items() if k not in SPEC_KEYS}
    stray = set(params) - PARAM_KEYS.get(raw.get("kind"), set(params))
    if stray:
        raise ConfigError(f"unknown keys for a {raw.get('kind')} spec: {', '.join(sorted(stray))}")
    if "input" in params:
        src = path.parent / params["input"]
        if not src.exists():
            raise ConfigError(f"file not found: {src}")
        params["input"] = str(src)
    return ExperimentSpec(
        family_path, family, raw.get("kind", ""), [int(n) for n in raw.get("n", [])], CodeConfig(**cfg), seed, out, params
    )


# ---------------------------------------------------------------- output


def write_csv(path: Path, schema: str, columns: list[str], rows: list[list]) -> None:
    """CSV with a versioned schema line and a column documentation line."""
    buf = io.StringIO()
    buf.write(f"# schema: {schema} v{SCHEMA_VERSION}\n")
    buf.write(f"# columns: {' '.join(columns)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def _versions() -> dict:
    def version(name):
        try:
            return metadata.version(name)
        except metadata.PackageNotFoundError:
            return None

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": version("scipy"),
        "artifact": version("artifact"),
    }


# ---------------------------------------------------------------- experiments


def _theta_star(family: Family, params: dict) -> np.ndarray:
    if "theta_star" in params:
        return family.space.check(np.atleast_1d(np.asarray(params["theta_star"], dtype=float)))
    space = family.space
    if space.kind == "box":
        return 0.5 * (space.lower + space.upper)
    return np.full(space.dim, 1.0 / (space.dim + 1))


def _bound(family, n, config):
    """REG-bar for the family's route, or None when it cannot be evaluated."""
    try:
        if getattr(family, "is_exponential", False):
            return codec.exp_regret_bound(family, n, config)
        return codec.nonexp_regret_bound(family, n, config)
    except (WrongRouteError, ConfigError):
        return None


def _regret_curve(spec, family):
    cfg = spec.config
    plain = replace(cfg, use_bundle=False)
    samples = int(spec.params.get("samples", 200))
    p = family.pmf(_theta_star(family, spec.params))
    rows = []
    for n in spec.n_list:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, n]))
        draws = rng.multinomial(n, p, size=samples)
        reg_b, reg_p, tilted = [], [], 0
        for c in draws:
            ll = mle_counts(family, c).loglik
            eb = codec.encode_counts(family, c, cfg)
            ep = codec.encode_counts(family, c, plain)
            reg_b.append(eb.total + ll)
            reg_p.append(ep.total + ll)
            tilted += eb.xi_index != 0
        rep = _bound(family, n, cfg)
        rows.append(
            [
                n,
                samples,
                float(np.mean(reg_b)),
                float(np.max(reg_b)),
                float(np.mean(reg_p)),
                float(np.max(reg_p)),
                tilted / samples,
                rep.REG_bar if rep else "",
            ]
        )
    cols = ["n", "samples", "mean_regret_bundle", "max_regret_bundle", "mean_regret_plain", "max_regret_plain",
            "tilted_fraction", "reg_bar"]
    return cols, rows, True, {}


def _bound_audit(spec, family):
    cfg = spec.config
    cap = int(spec.params.get("cap", DEFAULT_CAP))
    rows, ok = [], True
    for n in spec.n_list:
        mr = oracles.exhaustive_max_regret(cfg, family, n, cap=cap)
        rep = _bound(family, n, cfg)
        interior = mr.by_route.get("interior", {}).get("value", -math.inf)
        plain_interior = interior
        if getattr(family, "is_exponential", False) and cfg.use_bundle:
            # the exponential-family bound is stated for the untilted code
            plain = oracles.exhaustive_max_regret(replace(cfg, use_bundle=False), family, n, cap=cap)
            plain_interior = plain.by_route.get("interior", {}).get("value", -math.inf)
        boundary = mr.by_route.get("boundary", {}).get("value", "")
        bound = rep.REG_bar if rep else ""
        within = ""
        if rep is not None and getattr(family, "is_exponential", False):
            # interior regret without the switch against alpha times the exponential-family bound
            within = plain_interior - cfg.interior_switch(n) <= cfg.alpha * rep.bound + 1e-9
            ok &= within
        rows.append(
            [n, mr.value, interior, boundary, bound, within, rep.log_n0 if rep and rep.log_n0 is not None else "",
             rep.regime_reached if rep and rep.regime_reached is not None else ""]
        )
    cols = ["n", "max_regret", "max_interior_regret", "max_boundary_regret", "reg_bar", "within_bound", "log_n0",
            "regime_reached"]
    return cols, rows, ok, {}


def _risk_cert(spec, family):
    cfg = spec.config
    theta = _theta_star(family, spec.params)
    bs = spec.params.get("b", [])
    bs = [bs] if isinstance(bs, (int, float)) else list(bs)
    trials = int(spec.params.get("trials", 100_000))
    rows, ok, certs = [], True, {}
    for n in spec.n_list:
        c1 = oracles.verify_risk_chain(family, theta, n, cfg)
        ok &= c1.passed
        certs[f"risk-chain-n{n}"] = c1.to_dict()
        row = [n, c1.risk, c1.redundancy, c1.resolvability, c1.status]
        rows.append(row + ["", "", "", ""])
        for b in bs:
            c2 = oracles.verify_tail_bound(family, theta, n, float(b), trials, spec.seed, cfg)
            ok &= c2.passed
            certs[f"tail-n{n}-b{b}"] = c2.to_dict()
            t = c2.tail[0]
            rows.append([n, "", "", "", c2.status, b, t["frequency"], t["bound"], t["sigma"]])
    cols = ["n", "risk", "redundancy_per_n", "resolvability", "status", "b", "tail_frequency", "tail_bound", "sigma"]
    return cols, rows, ok, certs


def _kraft_sweep(spec, family):
    rows, ok = [], True
    for n in spec.n_list:
        s = oracles.exhaustive_kraft(spec.config, family, n)
        ok &= s <= 1 + 1e-9
        rows.append([n, s, s <= 1 + 1e-9])
    return ["n", "kraft_sum", "ok"], rows, ok, {}


def _nml_compare(spec, family):
    cfg = spec.config
    rows, ok = [], True
    K = family.dim
    for n in spec.n_list:
        sh = oracles.shtarkov_complexity(family, n)
        mr = oracles.exhaustive_max_regret(cfg, family, n)
        rep = _bound(family, n, cfg)
        ok &= mr.value >= sh - 1e-9
        asym = ""
        if rep is not None:
            asym = 0.5 * K * math.log(n / (2 * math.pi)) + rep.terms["log_fisher_volume"]
        rows.append([n, sh, mr.value, rep.REG_bar if rep else "", asym, mr.value >= sh - 1e-9])
    return ["n", "shtarkov", "two_part_max_regret", "reg_bar", "nml_asymptote", "ordered"], rows, ok, {}


def _compress(spec, family):
    src = spec.params.get("input")
    if src is None:
        raise ConfigError("a compress experiment needs an 'input' file")
    xs = read_symbols(Path(src), family.n_symbols, spec.params.get("format", "bytes"))
    blob = codec.encode_bitstream(family, xs, spec.config)
    back = codec.decode_bitstream(family, blob, len(xs), spec.config)
    ideal = codec.ideal_bits(family, xs, spec.config)
    same = back == [int(x) for x in xs]
    ok = same and len(blob) * 8 <= ideal + 32
    (spec.out / "compressed.bin").parent.mkdir(parents=True, exist_ok=True)
    (spec.out / "compressed.bin").write_bytes(blob)
    return ["n", "ideal_bits", "achieved_bits", "roundtrip"], [[len(xs), ideal, len(blob) * 8, same]], ok, {}


RUNNERS = {
    "regret-curve": _regret_curve,
    "bound-audit": _bound_audit,
    "risk-cert": _risk_cert,
    "kraft-sweep": _kraft_sweep,
    "nml-compare": _nml_compare,
    "compress": _compress,
}


def run(spec: ExperimentSpec) -> int:
    """Run one experiment. Returns 0 on success and 1 when a certificate fails."""
    family = family_from_dict(spec.family)
    start = time.perf_counter()
    cols, rows, ok, certs = RUNNERS[spec.kind](spec, family)
    out = spec.out
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{spec.kind}.csv", spec.kind, cols, rows)
    for name, cert in certs.items():
        (out / f"{name}.json").write_text(json.dumps(cert, indent=2, sort_keys=True, default=_json_default))
    manifest = {
        "spec": spec.to_dict(),
        "versions": _versions(),
        "seed": spec.seed,
        "status": "PASSED" if ok else "FAILED",
        "outputs": sorted([f"{spec.kind}.csv"] + [f"{k}.json" for k in certs]),
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return 0 if ok else 1


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------- symbol files


def read_symbols(path: Path, n_symbols: int, fmt: str = "bytes") -> np.ndarray:
    """Symbols from a file: one per byte (``bytes``) or whitespace-separated integers (``text``)."""
    data = Path(path).read_bytes()
    if fmt == "bytes":
        xs = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    elif fmt == "text":
        xs = np.array([int(t) for t in data.split()], dtype=np.int64)
    else:
        raise ConfigError(f"unknown symbol format {fmt!r}")
    return as_symbols(xs, n_symbols)


def write_symbols(path: Path, xs, fmt: str = "bytes") -> None:
    if fmt == "bytes":
        Path(path).write_bytes(bytes(int(x) for x in xs))
    else:
        Path(path).write_text(" ".join(str(int(x)) for x in xs) + ("\n" if len(xs) else ""))


__all__ = ["ExperimentSpec", "KINDS", "MDLError", "load_spec", "read_symbols", "run", "write_csv", "write_symbols"]
