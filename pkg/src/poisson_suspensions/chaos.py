"""Poisson stochastic integrals of step functions and their Lévy-Khintchine laws.

For a step function ``f = sum_k c_k 1_{A_k}`` the first-chaos integral is
``I(f) = sum_k c_k (N_{A_k} - mu(A_k))``, an infinitely divisible variable
with atomic Lévy measure ``sum_k mu(A_k) delta_{c_k}`` and no Gaussian part.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .intensity import IntensityMeasure, RegionSet
from .sampler import Configuration, count


@dataclass(frozen=True)
class SimpleFunction:
    """``sum_k coeff_k 1_{region_k}`` with pairwise disjoint regions."""

    terms: tuple[tuple[float, RegionSet], ...] = ()

    def __post_init__(self):
        terms = tuple((float(c), r) for c, r in self.terms)
        for c, _ in terms:
            if c == 0 or not math.isfinite(c):
                raise ValueError("coefficients must be finite and nonzero")
        for i, (_, a) in enumerate(terms):
            for _, b in terms[i + 1:]:
                if not a.intersection(b).is_empty:
                    raise ValueError("term regions must be pairwise disjoint")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def indicator(cls, region: RegionSet, coeff: float = 1.0) -> "SimpleFunction":
        return cls(((coeff, region),))

    @classmethod
    def zero(cls) -> "SimpleFunction":
        return cls(())

    def __call__(self, component: str, x) -> float:
        for c, r in self.terms:
            if r.contains_point(component, x):
                return c
        return 0.0

    def support(self) -> RegionSet:
        out = RegionSet.empty()
        for _, r in self.terms:
            out = out.union(r)
        return out

    def integral(self, mu: IntensityMeasure) -> float:
        return math.fsum(c * _finite_mass(mu, r) for c, r in self.terms)

    def inner(self, other: "SimpleFunction", mu: IntensityMeasure) -> float:
        """``<f, g>`` in ``L^2(mu)``."""
        return math.fsum(c * d * mu.measure_of(a.intersection(b))
                         for c, a in self.terms for d, b in other.terms)

    def to_dict(self) -> dict:
        return {"terms": [{"coeff": c, "region": r.to_dict()} for c, r in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "SimpleFunction":
        return cls(tuple((float(t["coeff"]), RegionSet.from_dict(t["region"])) for t in d["terms"]))


def _finite_mass(mu: IntensityMeasure, r: RegionSet) -> float:
    m = mu.measure_of(r)
    if math.isinf(m):
        raise ValueError(f"region {r} has infinite mass")
    return m


def chaos1(f: SimpleFunction, config: Configuration, mu: IntensityMeasure | None = None) -> float:
    """``sum_i f(x_i) - int f dmu``; every region must be covered."""
    mu = mu or config.mu
    return math.fsum(c * (count(config, r) - _finite_mass(mu, r)) for c, r in f.terms)


def chaos2_offdiag(f: SimpleFunction, config: Configuration, mu: IntensityMeasure | None = None) -> float:
    """Compensated off-diagonal double integral of ``f ⊗ f``.

    ``sum_{i != j} f(x_i) f(x_j) - 2 m sum_i f(x_i) + m^2`` with ``m = int f dmu``.
    """
    mu = mu or config.mu
    m = f.integral(mu)
    ns = [(c, count(config, r)) for c, r in f.terms]
    s1 = math.fsum(c * n for c, n in ns)
    s2 = math.fsum(c * c * n for c, n in ns)
    return (s1 * s1 - s2) - 2.0 * m * s1 + m * m


def compose_simple(f: SimpleFunction, map) -> SimpleFunction:
    """``f ∘ T`` for a map with box-representable preimages."""
    return SimpleFunction(tuple((c, map.preimage_region(r)) for c, r in f.terms))


@dataclass(frozen=True)
class LevyMeasure:
    """Finite atomic Lévy measure, atoms sorted by location."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple(sorted((float(t), float(m)) for t, m in self.atoms))
        for t, m in atoms:
            if t == 0:
                raise ValueError("Lévy measures carry no mass at 0")
            if not (m >= 0) or math.isinf(m) or math.isinf(t):
                raise ValueError("atom masses must be finite and nonnegative")
        object.__setattr__(self, "atoms", atoms)

    def total_mass(self) -> float:
        return math.fsum(m for _, m in self.atoms)

    def to_dict(self) -> dict:
        return {"atoms": [[t, m] for t, m in self.atoms]}


@dataclass(frozen=True)
class LevyTriplet:
    levy: LevyMeasure
    b: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma != 0:
            raise ValueError("Poissonian laws have no Gaussian part (sigma = 0)")


def levy_of(f: SimpleFunction, mu: IntensityMeasure) -> LevyMeasure:
    """Pushforward of ``mu`` restricted to ``{f != 0}`` under ``f``."""
    merged: dict[float, list[float]] = {}
    for c, r in f.terms:
        merged.setdefault(c, []).append(_finite_mass(mu, r))
    return LevyMeasure(tuple((c, math.fsum(ms)) for c, ms in merged.items()))


def centering_shift(levy: LevyMeasure) -> float:
    """Shift ``b`` making the law mean zero (the compensator outside ``[-1, 1]``)."""
    return -math.fsum(t * m for t, m in levy.atoms if abs(t) > 1)


def triplet_of(f: SimpleFunction, mu: IntensityMeasure) -> LevyTriplet:
    levy = levy_of(f, mu)
    return LevyTriplet(levy, centering_shift(levy))


def cf_idp(triplet: LevyTriplet, t):
    """Lévy-Khintchine characteristic function with ``sigma = 0``.

    ``exp(sum_atoms m (e^{itx} - 1 - itx 1{|x|<=1}) + itb)``; accepts scalars
    or arrays of ``t``.
    """
    if np.ndim(t) == 0:
        t = float(t)
        expo = complex(0.0, t * triplet.b)
        for x, m in triplet.levy.atoms:
            comp = 1j * t * x if abs(x) <= 1 else 0.0
            expo += m * (cmath.exp(1j * t * x) - 1.0 - comp)
        return cmath.exp(expo)
    t = np.asarray(t, dtype=float)
    expo = 1j * t * triplet.b
    for x, m in triplet.levy.atoms:
        comp = 1j * t * x if abs(x) <= 1 else 0.0
        expo = expo + m * (np.exp(1j * t * x) - 1.0 - comp)
    return np.exp(expo)


@dataclass(frozen=True)
class LowerBoundReport:
    bounded_below_consistent: bool
    positive_first_moment: float

    def __iter__(self):
        return iter((self.bounded_below_consistent, self.positive_first_moment))


def check_lower_bounded(levy: LevyMeasure) -> LowerBoundReport:
    """No mass on the negative axis, and the first moment on the positive axis."""
    neg = any(t < 0 and m > 0 for t, m in levy.atoms)
    moment = math.fsum(t * m for t, m in levy.atoms if t > 0)
    return LowerBoundReport(not neg, moment)


def chaos1_samples(f: SimpleFunction, configs: Sequence[Configuration]) -> np.ndarray:
    return np.array([chaos1(f, c) for c in configs])
