"""Shared plumbing: seed derivation, binomial intervals, checksums."""

from __future__ import annotations

import numpy as np


class FormatError(Exception):
    """A serialized artifact (index file, vector file, CSV) failed validation."""


def seed_sequence(root_seed: int, *tags: int) -> np.random.SeedSequence:
    """Counter-style sub-seed derivation from a root seed.

    Components that need independent streams (projection matrix, lattice
    shifts, threshold sampling, per-table hash functions) each get a distinct
    tag path, so any piece can be regenerated without replaying the others.
    """
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(t) for t in tags))


def derive_rng(root_seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root_seed, *tags))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (default 95%)."""
    if trials <= 0:
        raise ValueError("wilson_interval needs trials >= 1")
    n = float(trials)
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (phat + z2 / (2.0 * n)) / denom
    half = z * np.sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def binomial_se(successes: int, trials: int) -> float:
    phat = successes / trials
    return float(np.sqrt(max(phat * (1.0 - phat), 1.0 / trials) / trials))


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> float:
    """z statistic for H1: p1 > p2 (unpooled)."""
    p1 = k1 / n1
    p2 = k2 / n2
    var = p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2
    if var <= 0.0:
        var = 1.0 / n1 + 1.0 / n2  # degenerate 0/1 proportions: fall back to worst-case scale
    return float((p1 - p2) / np.sqrt(var))


# CRC-64/XZ (reflected poly 0xC96C5795D7870F42, init and xorout all-ones).
_CRC64_POLY = 0xC96C5795D7870F42


def _crc64_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _CRC64_POLY
            else:
                crc >>= 1
        table.append(crc)
    return table


_TABLE = _crc64_table()


def crc64(data: bytes | bytearray | memoryview, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFFFFFFFFFF
    table = _TABLE
    for b in bytes(data):
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF
