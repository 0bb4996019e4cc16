"""Observables of counts and the statistical checks used by the experiments."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import InsufficientReplicas
from .intensity import IntensityMeasure, RegionSet
from .sampler import Configuration, count

DEFAULT_SIGNIFICANCE = 1e-3
MIN_REPLICAS = 1000
MIN_TRAJECTORIES = 30


def bonferroni(significance: float, k: int) -> float:
    return significance / max(1, k)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


class Observable:
    """Function of the counts in finitely many regions."""

    def regions(self) -> tuple[RegionSet, ...]:
        raise NotImplementedError

    def evaluate(self, counts: Mapping[RegionSet, int]) -> float:
        raise NotImplementedError

    def on(self, config: Configuration) -> float:
        return self.evaluate({r: count(config, r) for r in self.regions()})

    def poisson_law(self) -> "tuple[RegionSet, callable] | None":
        return None


@dataclass(frozen=True)
class Constant(Observable):
    value: float = 1.0

    def regions(self):
        return ()

    def evaluate(self, counts):
        return float(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class _SingleRegion(Observable):
    region: RegionSet

    def regions(self):
        return (self.region,)

    def evaluate(self, counts):
        return float(self.f(counts[self.region]))

    def f(self, n: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ExpNegCount(_SingleRegion):
    """``exp(-N_A)``."""

    def f(self, n):
        return math.exp(-n)

    def to_dict(self):
        return {"kind": "exp_neg_count", "region": self.region.to_dict()}


@dataclass(frozen=True)
class CappedCount(_SingleRegion):
    """``min(N_A, cap)``."""

    cap: int = 1

    def f(self, n):
        return min(n, self.cap)

    def to_dict(self):
        return {"kind": "capped_count", "region": self.region.to_dict(), "cap": self.cap}


@dataclass(frozen=True)
class IndicatorPositive(_SingleRegion):
    """``1{N_A > 0}``."""

    def f(self, n):
        return 1.0 if n > 0 else 0.0

    def to_dict(self):
        return {"kind": "indicator_positive", "region": self.region.to_dict()}


@dataclass(frozen=True)
class Count(_SingleRegion):
    """Raw ``N_A`` (unbounded, but with all moments finite)."""

    def f(self, n):
        return n

    def to_dict(self):
        return {"kind": "count", "region": self.region.to_dict()}


@dataclass(frozen=True)
class Affine(Observable):
    """``const + sum_i w_i F_i``."""

    terms: tuple[tuple[float, Observable], ...]
    const: float = 0.0

    def regions(self):
        out, seen = [], set()
        for _, obs in self.terms:
            for r in obs.regions():
                if r not in seen:
                    seen.add(r)
                    out.append(r)
        return tuple(out)

    def evaluate(self, counts):
        return self.const + math.fsum(w * obs.evaluate(counts) for w, obs in self.terms)

    def to_dict(self):
        return {"kind": "affine", "const": self.const,
                "terms": [{"weight": w, "observable": o.to_dict()} for w, o in self.terms]}


def observable_from_dict(d: dict) -> Observable:
    kind = d["kind"]
    if kind == "constant":
        return Constant(float(d.get("value", 1.0)))
    if kind == "affine":
        return Affine(tuple((float(t["weight"]), observable_from_dict(t["observable"]))
                            for t in d["terms"]), float(d.get("const", 0.0)))
    region = RegionSet.from_dict(d["region"])
    if kind == "exp_neg_count":
        return ExpNegCount(region)
    if kind == "capped_count":
        return CappedCount(region, int(d["cap"]))
    if kind == "indicator_positive":
        return IndicatorPositive(region)
    if kind == "count":
        return Count(region)
    raise ValueError(f"unknown observable kind {kind!r}")


def poisson_expectation(f, lam: float) -> float:
    """``E f(N)`` for ``N ~ Poisson(lam)`` by direct summation of the pmf."""
    if lam == 0:
        return float(f(0))
    kmax = int(lam + 15.0 * math.sqrt(lam) + 40.0)
    k = np.arange(kmax + 1)
    pmf = sps.poisson.pmf(k, lam)
    return math.fsum(p * f(int(i)) for i, p in zip(k, pmf))


def observable_variance(obs: Observable, mu: IntensityMeasure) -> float:
    """Exact variance of a single-region observable under the Poisson law."""
    if isinstance(obs, Constant):
        return 0.0
    if not isinstance(obs, _SingleRegion):
        raise TypeError("variance is implemented for single-region observables")
    lam = mu.measure_of(obs.region)
    m1 = poisson_expectation(obs.f, lam)
    m2 = poisson_expectation(lambda n: obs.f(n) ** 2, lam)
    return m2 - m1 * m1


def observable_mean(obs: Observable, mu: IntensityMeasure) -> float:
    if isinstance(obs, Constant):
        return obs.value
    if isinstance(obs, Affine):
        return obs.const + sum(w * observable_mean(o, mu) for w, o in obs.terms)
    return poisson_expectation(obs.f, mu.measure_of(obs.region))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class TestReport:
    name: str
    statistic: float
    p_value: float | None
    bound: float | None
    passed: bool
    replicas: int
    seed: int | None = None
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)


def chisq_bins(mean: float, replicas: int) -> list[int]:
    """Left edges of pooled bins; the last bin is the open tail."""
    edges = [0]
    acc, k = 0.0, 0
    while True:
        acc += replicas * sps.poisson.pmf(k, mean)
        tail = replicas * sps.poisson.sf(k, mean)
        if tail < 5:
            return edges
        if acc >= 5:
            edges.append(k + 1)
            acc = 0.0
        k += 1


def chisq_poisson(counts: Sequence[int], mean: float, significance: float = DEFAULT_SIGNIFICANCE,
                  *, seed: int | None = None, name: str = "chisq_poisson") -> TestReport:
    """Pearson chi-square goodness of fit against ``Poisson(mean)``."""
    counts = np.asarray(counts, dtype=np.int64)
    R = len(counts)
    if R < MIN_REPLICAS:
        raise InsufficientReplicas(f"chi-square needs >= {MIN_REPLICAS} replicas, got {R}")
    if not mean > 0:
        raise ValueError("mean must be positive")
    edges = chisq_bins(mean, R)
    idx = np.searchsorted(np.asarray(edges), counts, side="right") - 1
    observed = np.bincount(idx, minlength=len(edges)).astype(float)
    expected = np.empty(len(edges))
    for i, lo in enumerate(edges):
        if i + 1 < len(edges):
            expected[i] = R * (sps.poisson.cdf(edges[i + 1] - 1, mean) - sps.poisson.cdf(lo - 1, mean))
        else:
            expected[i] = R * sps.poisson.sf(lo - 1, mean)
    stat = float(np.sum((observed - expected) ** 2 / expected))
    dof = len(edges) - 1
    p = float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return TestReport(name, stat, p, None, p >= significance, R, seed,
                      {"mean": mean, "bins": len(edges), "dof": dof, "significance": significance})


def independence_test(pairs, significance: float = DEFAULT_SIGNIFICANCE, *, z: float | None = None,
                      seed: int | None = None, name: str = "independence") -> TestReport:
    """Pearson correlation against the normal-approximation bound ``z / sqrt(R)``."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    R = len(arr)
    if R < MIN_REPLICAS:
        raise InsufficientReplicas(f"independence test needs >= {MIN_REPLICAS} replicas, got {R}")
    x, y = arr[:, 0] - arr[:, 0].mean(), arr[:, 1] - arr[:, 1].mean()
    sx, sy = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    r = float(x @ y) / (sx * sy) if sx > 0 and sy > 0 else 0.0
    if z is None:
        z = float(sps.norm.isf(significance / 2))
    bound = z / math.sqrt(R)
    p = float(2 * sps.norm.sf(abs(r) * math.sqrt(R)))
    return TestReport(name, r, p, bound, abs(r) <= bound, R, seed, {"z": z})


def empirical_cf(samples: Sequence[float], t_grid: Sequence[float]) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if not len(x):
        raise InsufficientReplicas("no samples")
    return np.array([np.mean(np.exp(1j * t * x)) for t in np.asarray(t_grid, dtype=float)])


def mean_test(samples: Sequence[float], target: float, n_se: float = 4.0, *,
              seed: int | None = None, name: str = "mean") -> TestReport:
    """Sample mean within ``n_se`` standard errors of ``target``."""
    x = np.asarray(samples, dtype=float)
    R = len(x)
    if R < 2:
        raise InsufficientReplicas("need at least 2 samples")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(R))
    dev = abs(m - target)
    ok = dev <= n_se * se if se > 0 else dev <= 1e-12 * max(1.0, abs(target))
    return TestReport(name, m, None, n_se * se, ok, R, seed, {"target": target, "se": se})


# ---------------------------------------------------------------------------
# Dispersion of Birkhoff limits
# ---------------------------------------------------------------------------


def _tail_len(n: int, tail_fraction: float) -> int:
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    return max(1, int(round(tail_fraction * n)))


def limit_dispersion(trajectories: Sequence[Sequence[float]], tail_fraction: float = 0.5):
    """``(across_seed_variance, within_tail_variance)`` of Birkhoff tails.

    Each trajectory is a sequence of running averages.  The tail mean is the
    average of its last ``tail_fraction`` share of entries.
    """
    trajs = [np.asarray(t, dtype=float) for t in trajectories]
    if len(trajs) < MIN_TRAJECTORIES:
        raise InsufficientReplicas(f"need >= {MIN_TRAJECTORIES} trajectories, got {len(trajs)}")
    tails = [t[-_tail_len(len(t), tail_fraction):] for t in trajs]
    # shifting by a reference value keeps constant inputs exactly at zero variance
    within = float(np.mean([(t - t[0]).var() for t in tails]))
    means = np.array([(t - t[0]).mean() + t[0] for t in tails])
    across = float((means - means[0]).var(ddof=1))
    return across, within


def birkhoff_tail_weights(n: int, tail_fraction: float) -> np.ndarray:
    """Weights ``w_j`` with tail mean ``= sum_j w_j F_j`` for running averages."""
    m = _tail_len(n, tail_fraction)
    k = np.arange(1, n + 1)
    inv = np.where(k > n - m, 1.0 / k, 0.0)
    # w_j = (1/m) sum_{k >= j, k in tail} 1/k
    return np.cumsum(inv[::-1])[::-1] / m


def birkhoff_tail_noise_floor(n: int, tail_fraction: float, step_variance: float) -> float:
    """Variance of the tail mean when the per-step values are i.i.d."""
    w = birkhoff_tail_weights(n, tail_fraction)
    return float(step_variance * np.sum(w * w))
