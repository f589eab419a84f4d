"""Command-line entry point ``mdl``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import codec
from .codec import CodeConfig
from .errors import ConfigError, DecodeError, DomainError, MDLError
from .harness import load_spec, read_mapping, read_symbols, run, write_symbols
from .models import family_from_dict


def _code_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--g", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--iota", type=float)
    p.add_argument("--no-bundle", action="store_true", help="plain two-part code without tilts")


def _overrides(args) -> dict:
    out = {k: getattr(args, k) for k in ("alpha", "a", "beta", "g", "nu", "iota")}
    if args.no_bundle:
        out["use_bundle"] = False
    return out


def _config(args) -> CodeConfig:
    cfg = CodeConfig(**{k: v for k, v in _overrides(args).items() if v is not None})
    return replace(cfg, seed=args.seed) if args.seed is not None else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdl", description="Two-part MDL codes with local exponential tilting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment spec (TOML or JSON)")
    p.add_argument("spec", type=Path)
    p.add_argument("--out", type=Path)
    _code_flags(p)

    for name in ("compress", "decompress"):
        p = sub.add_parser(name, help=f"{name} a symbol file")
        p.add_argument("input", type=Path)
        p.add_argument("--family", type=Path, required=True, help="family file (TOML or JSON)")
        p.add_argument("-o", "--output", type=Path, required=True)
        p.add_argument("--format", choices=("bytes", "text"), default="bytes", help="symbol file layout")
        _code_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = load_spec(args.spec, {**_overrides(args), "seed": args.seed, "out": args.out})
            status = run(spec)
            print(f"{spec.kind}: {'PASSED' if status == 0 else 'FAILED'} -> {spec.out}")
            return status
        family = family_from_dict(read_mapping(args.family))
        config = _config(args)
        if args.command == "compress":
            xs = read_symbols(args.input, family.n_symbols, args.format)
            blob = codec.encode_bitstream(family, xs, config)
            args.output.write_bytes(blob)
            ideal = codec.ideal_bits(family, xs, config)
            print(f"n={len(xs)} ideal_bits={ideal:.2f} achieved_bits={8 * len(blob)}")
            return 0
        xs = codec.decode_bitstream(family, args.input.read_bytes(), None, config)
        write_symbols(args.output, xs, args.format)
        print(f"n={len(xs)} symbols written to {args.output}")
        return 0
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MDLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
