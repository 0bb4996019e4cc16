"""Counter-based random streams addressed by (seed, component, dyadic cell).

Every partition cell gets its own stream whose key is a hash of the master
seed, the replica stream id, the component label and the cell address.
Output ``k`` of a stream is ``splitmix64(key + k * golden)``, so streams are
pure functions of their address and never depend on sampling order.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)

# Below this mean, Poisson counts use sequential-search inversion.
INVERSION_CUTOFF = 10.0


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one replica: distinct pairs give independent streams."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, int) or not (-(1 << 63) <= v < (1 << 64)):
                raise ValueError(f"{name} must be a 64-bit integer, got {v!r}")

    def replica(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_id)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedSpec":
        return cls(int(d["master_seed"]), int(d.get("stream_id", 0)))


def cell_key(seed: SeedSpec, component: str, level: int, index: tuple[int, ...]) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"psusp-cell")
    h.update(struct.pack("<QQi", seed.master_seed & _MASK, seed.stream_id & _MASK, level))
    h.update(struct.pack(f"<{len(index)}q", *index))
    h.update(component.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class CellStream:
    """Stream of uniforms in [0, 1) for one cell key."""

    __slots__ = ("key", "counter")

    def __init__(self, key: int):
        self.key = key & _MASK
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return _mix64((self.key + self.counter * _GOLDEN) & _MASK)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV53


def poisson_variate(stream: CellStream, lam: float) -> int:
    """Draw from Poisson(lam) using only ``stream``.

    Sequential-search inversion for small means, Hörmann's transformed
    rejection (PTRS) otherwise.
    """
    if lam < 0 or math.isnan(lam):
        raise ValueError(f"Poisson mean must be nonnegative, got {lam}")
    if lam == 0.0:
        return 0
    if math.isinf(lam):
        raise ValueError("Poisson mean is infinite")
    if lam < INVERSION_CUTOFF:
        return _poisson_inversion(stream, lam)
    return _poisson_ptrs(stream, lam)


def _poisson_inversion(stream: CellStream, lam: float) -> int:
    u = stream.uniform()
    p = math.exp(-lam)
    cdf = p
    k = 0
    # the cap only matters when u sits within rounding error of 1
    while u > cdf and k < 1000:
        k += 1
        p *= lam / k
        cdf += p
    return k


def _poisson_ptrs(stream: CellStream, lam: float) -> int:
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = stream.uniform() - 0.5
        v = stream.uniform()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43) if us > 0 else -1
        if us >= 0.07 and v <= vr:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        if v <= 0.0:
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1)):
            return k
