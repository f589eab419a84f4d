"""Enumeration of sequences over a finite alphabet, grouped by type.

Every quantity the package computes depends on a sequence only through its
count vector, so exhaustive sums run over count vectors weighted by the
multinomial coefficient rather than over all M**n sequences.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import CapacityError, DomainError

DEFAULT_CAP = 2**24


def as_symbols(xs: Sequence[int] | np.ndarray, n_symbols: int) -> np.ndarray:
    arr = np.asarray(xs, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= n_symbols):
        bad = int(np.flatnonzero((arr < 0) | (arr >= n_symbols))[0])
        raise DomainError(f"symbol {int(arr[bad])} at position {bad} is outside the alphabet of size {n_symbols}")
    return arr


def counts_of(xs: Sequence[int] | np.ndarray, n_symbols: int) -> np.ndarray:
    return np.bincount(as_symbols(xs, n_symbols), minlength=n_symbols).astype(np.int64)


def check_cap(n_symbols: int, n: int, cap: int = DEFAULT_CAP) -> None:
    if n_symbols**n > cap:
        raise CapacityError(f"{n_symbols}^{n} sequences exceed the enumeration cap {cap}")


def compositions(n: int, n_symbols: int) -> np.ndarray:
    """All count vectors of length ``n_symbols`` summing to ``n``, lexicographically descending."""
    if n_symbols == 1:
        return np.array([[n]], dtype=np.int64)
    rows = []
    for first in range(n, -1, -1):
        for rest in compositions(n - first, n_symbols - 1):
            rows.append(np.concatenate(([first], rest)))
    return np.array(rows, dtype=np.int64)


def log_multinomial(counts: np.ndarray) -> np.ndarray:
    """log of n! / prod(c_i!) for each row of ``counts``."""
    counts = np.asarray(counts, dtype=float)
    return gammaln(counts.sum(axis=-1) + 1) - gammaln(counts + 1).sum(axis=-1)


def representative(counts: np.ndarray) -> np.ndarray:
    """The sorted sequence with the given counts."""
    return np.repeat(np.arange(len(counts)), counts)


def all_sequences(n: int, n_symbols: int, cap: int = DEFAULT_CAP) -> Iterator[tuple[int, ...]]:
    check_cap(n_symbols, n, cap)
    return itertools.product(range(n_symbols), repeat=n)
