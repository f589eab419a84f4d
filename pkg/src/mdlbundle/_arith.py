"""32-bit integer arithmetic coder with carry-free bit-plus-follow renormalization."""

from __future__ import annotations

import numpy as np

PRECISION = 32
FULL = (1 << PRECISION) - 1
HALF = 1 << (PRECISION - 1)
QUARTER = 1 << (PRECISION - 2)
TOTAL = 1 << 24


def frequency_table(probs: np.ndarray) -> list[int]:
    """Cumulative integer frequencies summing to TOTAL; every symbol gets at least 1."""
    probs = np.asarray(probs, dtype=float)
    M = len(probs)
    freqs = [1 + int(p * (TOTAL - M)) for p in probs]
    freqs[int(np.argmax(probs))] += TOTAL - sum(freqs)
    cum = [0]
    for f in freqs:
        cum.append(cum[-1] + f)
    return cum


class BitWriter:
    def __init__(self):
        self.bits: list[int] = []

    def write(self, value: int, width: int) -> None:
        for shift in range(width - 1, -1, -1):
            self.bits.append(value >> shift & 1)

    def to_bytes(self) -> bytes:
        bits = self.bits + [0] * (-len(self.bits) % 8)
        return bytes(int("".join(map(str, bits[i : i + 8])), 2) for i in range(0, len(bits), 8))


class BitReader:
    """Reads bits MSB first; past the end it yields zeros and counts the overrun."""

    def __init__(self, data: bytes, start_bit: int = 0):
        self.data = data
        self.pos = start_bit
        self.overrun = 0

    def bit(self) -> int:
        byte, off = divmod(self.pos, 8)
        self.pos += 1
        if byte >= len(self.data):
            self.overrun += 1
            return 0
        return self.data[byte] >> (7 - off) & 1

    def read(self, width: int) -> int:
        value = 0
        for _ in range(width):
            value = value << 1 | self.bit()
        return value

    @property
    def byte_offset(self) -> int:
        return (self.pos - 1) // 8 if self.pos else 0


def encode_symbols(writer: BitWriter, symbols, cum: list[int]) -> None:
    low, high, pending = 0, FULL, 0

    def emit(bit):
        nonlocal pending
        writer.bits.append(bit)
        writer.bits.extend([1 - bit] * pending)
        pending = 0

    for s in symbols:
        span = high - low + 1
        high = low + span * cum[s + 1] // TOTAL - 1
        low = low + span * cum[s] // TOTAL
        while True:
            if high < HALF:
                emit(0)
            elif low >= HALF:
                emit(1)
                low -= HALF
                high -= HALF
            elif low >= QUARTER and high < HALF + QUARTER:
                pending += 1
                low -= QUARTER
                high -= QUARTER
            else:
                break
            low <<= 1
            high = high << 1 | 1
    if symbols is not None and len(symbols):
        pending += 1
        emit(0 if low < QUARTER else 1)


def decode_symbols(reader: BitReader, n: int, cum: list[int]) -> list[int]:
    if n == 0:
        return []
    low, high = 0, FULL
    value = reader.read(PRECISION)
    out = []
    M = len(cum) - 1
    for _ in range(n):
        span = high - low + 1
        count = ((value - low + 1) * TOTAL - 1) // span
        s = 0
        while s < M - 1 and cum[s + 1] <= count:
            s += 1
        out.append(s)
        high = low + span * cum[s + 1] // TOTAL - 1
        low = low + span * cum[s] // TOTAL
        while True:
            if high < HALF:
                pass
            elif low >= HALF:
                low -= HALF
                high -= HALF
                value -= HALF
            elif low >= QUARTER and high < HALF + QUARTER:
                low -= QUARTER
                high -= QUARTER
                value -= QUARTER
            else:
                break
            low <<= 1
            high = high << 1 | 1
            value = value << 1 | reader.bit()
    return out
