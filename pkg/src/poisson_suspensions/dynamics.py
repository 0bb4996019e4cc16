"""Closed-form invertible maps, the suspension on configurations, and orbits.

Maps are words of *steps*.  A step assigns to some components a rule and a
target component (a permutation of the mentioned labels).  The basic rule is a
product of one-dimensional monotone axis maps, so boxes map to finite unions
of boxes and preimages are exact up to floating rounding of endpoints.

The Radon-Nikodym derivative follows the convention ``dmu∘T/dmu``, i.e. the
Jacobian of ``T`` times the density ratio ``rho(T x) / rho(x)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import DomainEscape, NotBoxRepresentable, WindowBlowup
from .intensity import Box, Component, Exponential, IntensityMeasure, Lebesgue, RegionSet, Steps
from .rng import SeedSpec
from .sampler import (
    Configuration,
    _count_unchecked,
    _freeze,
    _sorted_unique,
    empty_configuration,
    extend,
)

INF = math.inf

# Default budget (mass units) for windows materialized by orbit machinery.
DEFAULT_BUDGET = 1e4

# Inward margin applied to images of boxes under non-affine maps.
IMAGE_MARGIN = 1e-12


# ---------------------------------------------------------------------------
# One-dimensional axis maps
# ---------------------------------------------------------------------------


def _log_density_bounds(p, a: float, b: float) -> tuple[float, float]:
    if isinstance(p, Lebesgue):
        return 0.0, 0.0
    if isinstance(p, Exponential):
        return a, b
    if isinstance(p, Steps):
        logs = [math.log(v) for v, _, _ in p._pieces(a, b)]
        return min(logs), max(logs)
    raise TypeError(f"unsupported profile {p!r}")


def _same_kind(p, q) -> bool:
    if isinstance(p, Steps) or isinstance(q, Steps):
        return p == q
    return type(p) is type(q)


class AxisMap:
    """Strictly monotone bijection of (part of) the real line."""

    exact = True          # endpoint images are consistent with point images
    increasing = True

    def forward(self, x: float) -> float:
        raise NotImplementedError

    def inverse(self, y: float) -> float:
        raise NotImplementedError

    def log_derivative(self, x: float) -> float:
        raise NotImplementedError

    def log_derivative_bounds(self, a: float, b: float) -> tuple[float, float]:
        raise NotImplementedError

    def preimage_intervals(self, a: float, b: float) -> list[tuple[float, float]]:
        lo, hi = self.inverse(a), self.inverse(b)
        return [(lo, hi)] if self.increasing else [(hi, lo)]

    def image_intervals(self, a: float, b: float) -> list[tuple[float, float]]:
        lo, hi = self.forward(a), self.forward(b)
        return [(lo, hi)] if self.increasing else [(hi, lo)]

    def constant_log_derivative(self, src, tgt) -> float | None:
        return None

    def exact_image(self, a: Fraction, b: Fraction) -> list[tuple[Fraction, Fraction]] | None:
        return None

    def exact_preimage(self, a: Fraction, b: Fraction) -> list[tuple[Fraction, Fraction]] | None:
        return None

    def inverted(self) -> "AxisMap":
        return Inverse(self)


@dataclass(frozen=True)
class Identity(AxisMap):
    def forward(self, x):
        return x

    def inverse(self, y):
        return y

    def log_derivative(self, x):
        return 0.0

    def log_derivative_bounds(self, a, b):
        return 0.0, 0.0

    def preimage_intervals(self, a, b):
        return [(a, b)]

    def image_intervals(self, a, b):
        return [(a, b)]

    def constant_log_derivative(self, src, tgt):
        return 0.0 if _same_kind(src, tgt) else None

    def exact_image(self, a, b):
        return [(a, b)]

    exact_preimage = exact_image

    def inverted(self):
        return self

    def to_dict(self):
        return {"kind": "identity"}


@dataclass(frozen=True)
class Shift(AxisMap):
    v: float

    def forward(self, x):
        return x + self.v

    def inverse(self, y):
        return y - self.v

    def log_derivative(self, x):
        return 0.0

    def log_derivative_bounds(self, a, b):
        return 0.0, 0.0

    def constant_log_derivative(self, src, tgt):
        if isinstance(src, Lebesgue) and isinstance(tgt, Lebesgue):
            return 0.0
        if isinstance(src, Exponential) and isinstance(tgt, Exponential):
            return self.v
        return None

    def exact_image(self, a, b):
        v = Fraction(self.v)
        return [(a + v, b + v)]

    def exact_preimage(self, a, b):
        v = Fraction(self.v)
        return [(a - v, b - v)]

    def to_dict(self):
        return {"kind": "shift", "v": self.v}


@dataclass(frozen=True)
class Scale(AxisMap):
    """``x -> a x + b`` with ``a != 0``; ``log_abs_a`` may be pinned exactly."""

    a: float
    b: float = 0.0
    log_abs_a: float | None = None

    def __post_init__(self):
        if self.a == 0 or not math.isfinite(self.a):
            raise ValueError("scale factor must be finite and nonzero")
        if self.log_abs_a is None:
            object.__setattr__(self, "log_abs_a", math.log(abs(self.a)))

    @property
    def increasing(self):
        return self.a > 0

    def forward(self, x):
        return self.a * x + self.b

    def inverse(self, y):
        return (y - self.b) / self.a

    def log_derivative(self, x):
        return self.log_abs_a

    def log_derivative_bounds(self, a, b):
        return self.log_abs_a, self.log_abs_a

    def constant_log_derivative(self, src, tgt):
        if isinstance(src, Lebesgue) and isinstance(tgt, Lebesgue):
            return self.log_abs_a
        return None

    def _exact(self, a, b, fn):
        lo, hi = fn(a), fn(b)
        return [(lo, hi)] if lo < hi else [(hi, lo)]

    def exact_image(self, a, b):
        A, B = Fraction(self.a), Fraction(self.b)
        return self._exact(a, b, lambda x: A * x + B)

    def exact_preimage(self, a, b):
        A, B = Fraction(self.a), Fraction(self.b)
        return self._exact(a, b, lambda y: (y - B) / A)

    def to_dict(self):
        d = {"kind": "scale", "a": self.a, "b": self.b}
        if self.log_abs_a != math.log(abs(self.a)):
            d["log_abs_a"] = self.log_abs_a
        return d


@dataclass(frozen=True)
class Rotation(AxisMap):
    """``x -> x + alpha mod 1`` on the unit circle ``[0, 1)``."""

    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha) % 1.0)

    def forward(self, x):
        y = x + self.alpha
        if y >= 1.0:
            y -= 1.0
        return y

    def inverse(self, y):
        x = y - self.alpha
        if x < 0.0:
            x += 1.0
            if x >= 1.0:
                x = 0.0
        return x

    def log_derivative(self, x):
        return 0.0

    def log_derivative_bounds(self, a, b):
        return 0.0, 0.0

    def constant_log_derivative(self, src, tgt):
        if isinstance(src, Lebesgue) and isinstance(tgt, Lebesgue):
            return 0.0
        return None

    @staticmethod
    def _wrap(lo, hi, one):
        if hi <= one:
            return [(lo, hi)]
        if lo >= one:
            return [(lo - one, hi - one)]
        return [(lo, one), (0 * one, hi - one)]

    def _check(self, a, b):
        if a < 0 or b > 1:
            raise DomainEscape(f"rotation acts on [0, 1); got interval [{a}, {b})")

    def image_intervals(self, a, b):
        self._check(a, b)
        lo, hi = a + self.alpha, b + self.alpha
        if hi <= 1.0:
            return [(lo, hi)]
        # the image of the right end of the circle is alpha itself; (1 + alpha) - 1
        # rounds below alpha and would leave an uncovered sliver
        hi_w = self.alpha if b == 1.0 else hi - 1.0
        if lo >= 1.0:
            return [(lo - 1.0, hi_w)]
        return [(lo, 1.0), (0.0, hi_w)]

    def preimage_intervals(self, a, b):
        self._check(a, b)
        lo, hi = a - self.alpha, b - self.alpha
        if lo >= 0.0:
            return [(lo, hi)]
        if hi <= 0.0:
            return [(lo + 1.0, hi + 1.0)]
        return [(lo + 1.0, 1.0), (0.0, hi)]

    def exact_image(self, a, b):
        al = Fraction(self.alpha)
        return self._wrap(a + al, b + al, Fraction(1))

    def exact_preimage(self, a, b):
        al = Fraction(self.alpha)
        lo, hi = a - al, b - al
        if lo >= 0:
            return [(lo, hi)]
        if hi <= 0:
            return [(lo + 1, hi + 1)]
        return [(lo + 1, Fraction(1)), (Fraction(0), hi)]

    def to_dict(self):
        return {"kind": "rotation", "alpha": self.alpha}


@dataclass(frozen=True)
class Inverse(AxisMap):
    """Exact inverse of another axis map (forward and inverse swapped)."""

    of: AxisMap

    @property
    def exact(self):
        return self.of.exact

    @property
    def increasing(self):
        return self.of.increasing

    def forward(self, x):
        return self.of.inverse(x)

    def inverse(self, y):
        return self.of.forward(y)

    def log_derivative(self, x):
        return -self.of.log_derivative(self.of.inverse(x))

    def log_derivative_bounds(self, a, b):
        lo, hi = math.inf, -math.inf
        for p, q in self.of.preimage_intervals(a, b):
            l, h = self.of.log_derivative_bounds(p, q)
            lo, hi = min(lo, -h), max(hi, -l)
        return lo, hi

    def preimage_intervals(self, a, b):
        return self.of.image_intervals(a, b)

    def image_intervals(self, a, b):
        return self.of.preimage_intervals(a, b)

    def constant_log_derivative(self, src, tgt):
        c = self.of.constant_log_derivative(tgt, src)
        return None if c is None else -c

    def exact_image(self, a, b):
        return self.of.exact_preimage(a, b)

    def exact_preimage(self, a, b):
        return self.of.exact_image(a, b)

    def inverted(self):
        return self.of

    def to_dict(self):
        return {"kind": "inverse", "of": self.of.to_dict()}


def _solve_increasing(f, df, y, lo, hi):
    """Root of ``f(x) = y`` for increasing ``f`` bracketed by ``[lo, hi]``."""
    x = min(max(y, lo), hi)
    for _ in range(100):
        fx = f(x) - y
        if fx == 0:
            return x
        if fx > 0:
            hi = x
        else:
            lo = x
        step = fx / df(x)
        nx = x - step
        if not (lo <= nx <= hi):
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 4e-16 * max(1.0, abs(x)):
            return nx
        x = nx
    return x


class Monotone(AxisMap):
    """Increasing C^1 map given by forward, inverse and derivative forms."""

    exact = False
    name = "custom"

    def __init__(self, forward: Callable, inverse: Callable, derivative: Callable,
                 log_derivative_bounds: Callable | None = None):
        self._f, self._finv, self._df = forward, inverse, derivative
        self._bounds = log_derivative_bounds

    def forward(self, x):
        return x if math.isinf(x) else self._f(x)

    def inverse(self, y):
        return y if math.isinf(y) else self._finv(y)

    def log_derivative(self, x):
        return math.log(self._df(x))

    def log_derivative_bounds(self, a, b):
        if self._bounds is not None:
            return self._bounds(a, b)
        raise NotImplementedError("no interval bound for this monotone map")

    def to_dict(self):
        raise TypeError("custom monotone maps are not serializable")


class SinePerturbation(Monotone):
    """``x -> x + eps sin x`` with ``|eps| < 1``."""

    name = "sine"

    def __init__(self, eps: float):
        if not abs(eps) < 1:
            raise ValueError("need |eps| < 1 for monotonicity")
        self.eps = float(eps)

    def __eq__(self, other):
        return isinstance(other, SinePerturbation) and other.eps == self.eps

    def __hash__(self):
        return hash(("sine", self.eps))

    def __repr__(self):
        return f"SinePerturbation(eps={self.eps})"

    def forward(self, x):
        return x if math.isinf(x) else x + self.eps * math.sin(x)

    def derivative(self, x):
        return 1.0 + self.eps * math.cos(x)

    def inverse(self, y):
        if math.isinf(y):
            return y
        e = abs(self.eps)
        return _solve_increasing(self.forward, self.derivative, y, y - e, y + e)

    def log_derivative(self, x):
        return math.log1p(self.eps * math.cos(x))

    def log_derivative_bounds(self, a, b):
        top, bot = math.log1p(abs(self.eps)), math.log1p(-abs(self.eps))
        if not (math.isfinite(a) and math.isfinite(b)) or b - a >= 2 * math.pi:
            return bot, top
        vals = [self.log_derivative(a), self.log_derivative(b)]
        k = math.ceil(a / math.pi)
        while k * math.pi <= b:
            vals.append(top if (k % 2 == 0) == (self.eps > 0) else bot)
            k += 1
        return min(vals), max(vals)

    def to_dict(self):
        return {"kind": "monotone", "name": self.name, "eps": self.eps}


class Sinh(Monotone):
    name = "sinh"

    def __init__(self):
        pass

    def __eq__(self, other):
        return isinstance(other, Sinh)

    def __hash__(self):
        return hash("sinh")

    def __repr__(self):
        return "Sinh()"

    def forward(self, x):
        return math.sinh(x) if math.isfinite(x) else x

    def inverse(self, y):
        return math.asinh(y) if math.isfinite(y) else y

    def log_derivative(self, x):
        return math.log(math.cosh(x))

    def log_derivative_bounds(self, a, b):
        vals = [self.log_derivative(a) if math.isfinite(a) else INF,
                self.log_derivative(b) if math.isfinite(b) else INF]
        if a <= 0 <= b:
            vals.append(0.0)
        return min(vals), max(vals)

    def to_dict(self):
        return {"kind": "monotone", "name": self.name}


class Cubic(Monotone):
    """``x -> x + c x^3`` with ``c > 0``."""

    name = "cubic"

    def __init__(self, c: float = 1.0):
        if not c > 0:
            raise ValueError("need c > 0")
        self.c = float(c)

    def __eq__(self, other):
        return isinstance(other, Cubic) and other.c == self.c

    def __hash__(self):
        return hash(("cubic", self.c))

    def __repr__(self):
        return f"Cubic(c={self.c})"

    def forward(self, x):
        return x + self.c * x ** 3 if math.isfinite(x) else x

    def derivative(self, x):
        return 1.0 + 3.0 * self.c * x * x

    def inverse(self, y):
        if math.isinf(y):
            return y
        r = abs(y) if abs(y) < 1 else math.copysign(abs(y / self.c) ** (1 / 3), y)
        lo, hi = -max(abs(y), abs(r)) - 1.0, max(abs(y), abs(r)) + 1.0
        return _solve_increasing(self.forward, self.derivative, y, lo, hi)

    def log_derivative(self, x):
        return math.log1p(3.0 * self.c * x * x)

    def log_derivative_bounds(self, a, b):
        vals = [self.log_derivative(a) if math.isfinite(a) else INF,
                self.log_derivative(b) if math.isfinite(b) else INF]
        if a <= 0 <= b:
            vals.append(0.0)
        return min(vals), max(vals)

    def to_dict(self):
        return {"kind": "monotone", "name": self.name, "c": self.c}


def axis_map_from_dict(d: dict) -> AxisMap:
    kind = d["kind"]
    if kind == "identity":
        return Identity()
    if kind == "shift":
        return Shift(float(d["v"]))
    if kind == "scale":
        return Scale(float(d["a"]), float(d.get("b", 0.0)),
                     float(d["log_abs_a"]) if "log_abs_a" in d else None)
    if kind == "rotation":
        return Rotation(float(d["alpha"]))
    if kind == "inverse":
        return Inverse(axis_map_from_dict(d["of"]))
    if kind == "monotone":
        name = d["name"]
        if name == "sine":
            return SinePerturbation(float(d["eps"]))
        if name == "sinh":
            return Sinh()
        if name == "cubic":
            return Cubic(float(d.get("c", 1.0)))
        raise ValueError(f"unknown monotone map {name!r}")
    raise ValueError(f"unknown axis map kind {kind!r}")


# ---------------------------------------------------------------------------
# Rules and steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisRule:
    """Product of axis maps acting on one component, then relabel to ``target``."""

    axes: tuple[AxisMap, ...]
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def exact(self) -> bool:
        return all(m.exact for m in self.axes)

    def _check_dim(self, x):
        if len(x) != len(self.axes):
            from .errors import DimensionMismatch

            raise DimensionMismatch(f"rule has {len(self.axes)} axes, point has {len(x)}")

    def forward(self, x):
        self._check_dim(x)
        return tuple(m.forward(xi) for m, xi in zip(self.axes, x))

    def inverse(self, y):
        self._check_dim(y)
        return tuple(m.inverse(yi) for m, yi in zip(self.axes, y))

    def preimage_boxes(self, lo, hi):
        per_axis = [m.preimage_intervals(a, b) for m, a, b in zip(self.axes, lo, hi)]
        return [tuple(zip(*combo)) for combo in itertools.product(*per_axis)]

    def image_boxes(self, lo, hi):
        per_axis = [m.image_intervals(a, b) for m, a, b in zip(self.axes, lo, hi)]
        return [tuple(zip(*combo)) for combo in itertools.product(*per_axis)]

    def exact_image_boxes(self, lo, hi):
        per_axis = []
        for m, a, b in zip(self.axes, lo, hi):
            iv = m.exact_image(a, b)
            if iv is None:
                return None
            per_axis.append(iv)
        return [tuple(zip(*combo)) for combo in itertools.product(*per_axis)]

    def axis_log_derivative(self, axis: int, xi: float, src: Component, tgt: Component) -> float:
        m = self.axes[axis]
        return (tgt.profiles[axis].log_density(m.forward(xi)) - src.profiles[axis].log_density(xi)
                + m.log_derivative(xi))

    def log_derivative(self, x, src: Component, tgt: Component) -> float:
        total = math.log(tgt.scale) - math.log(src.scale)
        for i, xi in enumerate(x):
            total += self.axis_log_derivative(i, xi, src, tgt)
        return total

    def constant_log_derivative(self, src: Component, tgt: Component) -> float | None:
        total = math.log(tgt.scale) - math.log(src.scale)
        for m, ps, pt in zip(self.axes, src.profiles, tgt.profiles):
            c = m.constant_log_derivative(ps, pt)
            if c is None:
                return None
            total += c
        return total

    def log_derivative_bounds(self, lo, hi, src: Component, tgt: Component) -> tuple[float, float]:
        s = math.log(tgt.scale) - math.log(src.scale)
        blo = bhi = s
        for m, ps, pt, a, b in zip(self.axes, src.profiles, tgt.profiles, lo, hi):
            dl, dh = m.log_derivative_bounds(a, b)
            ivs = m.image_intervals(a, b)
            tl = min(_log_density_bounds(pt, p, q)[0] for p, q in ivs)
            th = max(_log_density_bounds(pt, p, q)[1] for p, q in ivs)
            sl, sh = _log_density_bounds(ps, a, b)
            blo += dl + tl - sh
            bhi += dh + th - sl
        return blo, bhi

    def inverted(self, target: str | None) -> "AxisRule":
        return AxisRule(tuple(m.inverted() for m in self.axes), target)

    def retarget(self, target: str | None) -> "AxisRule":
        return AxisRule(self.axes, target)

    def to_dict(self) -> dict:
        return {"kind": "axes", "axes": [m.to_dict() for m in self.axes]}


def rule_from_dict(d: dict, target: str | None):
    kind = d.get("kind", "axes")
    if kind == "axes":
        return AxisRule(tuple(axis_map_from_dict(a) for a in d["axes"]), target)
    if kind == "skew":
        from .maharam import SkewRule

        return SkewRule.from_dict(d, target)
    raise ValueError(f"unknown rule kind {kind!r}")


@dataclass(frozen=True)
class Step:
    """Rules for some components; unmentioned components stay fixed."""

    rules: tuple[tuple[str, object], ...]
    _rule: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _target: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _source: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        rules = tuple(sorted(self.rules, key=lambda kv: kv[0]))
        object.__setattr__(self, "rules", rules)
        rule = dict(rules)
        if len(rule) != len(rules):
            raise ValueError("a component appears twice in one step")
        target = {lab: (r.target or lab) for lab, r in rules}
        if sorted(target.values()) != sorted(target):
            raise ValueError("step targets must permute the mentioned components")
        object.__setattr__(self, "_rule", rule)
        object.__setattr__(self, "_target", target)
        object.__setattr__(self, "_source", {t: s for s, t in target.items()})

    def rule(self, label: str):
        return self._rule.get(label)

    def target(self, label: str) -> str:
        return self._target.get(label, label)

    def source(self, label: str) -> str:
        return self._source.get(label, label)

    def inverted(self) -> "Step":
        return Step(tuple((self.target(lab), r.inverted(lab if self.target(lab) != lab else None))
                          for lab, r in self.rules))


# ---------------------------------------------------------------------------
# Map specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapSpec:
    """Composite invertible map; ``steps[0]`` is applied first."""

    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    # construction ------------------------------------------------------

    @classmethod
    def identity(cls) -> "MapSpec":
        return cls(())

    @classmethod
    def from_rules(cls, rules: dict) -> "MapSpec":
        return cls((Step(tuple(rules.items())),))

    @classmethod
    def axes(cls, label: str, *axes: AxisMap, target: str | None = None) -> "MapSpec":
        return cls.from_rules({label: AxisRule(tuple(axes), target)})

    @classmethod
    def translation(cls, label: str, *v: float) -> "MapSpec":
        return cls.axes(label, *(Shift(float(x)) for x in v))

    @classmethod
    def scaling(cls, label: str, a: Sequence[float] | float, b: Sequence[float] | float = 0.0) -> "MapSpec":
        a = (a,) if isinstance(a, (int, float)) else tuple(a)
        b = (b,) * len(a) if isinstance(b, (int, float)) else tuple(b)
        return cls.axes(label, *(Scale(float(ai), float(bi)) for ai, bi in zip(a, b)))

    @classmethod
    def rotation(cls, label: str, *alpha: float) -> "MapSpec":
        return cls.axes(label, *(Rotation(a) for a in alpha))

    @classmethod
    def permutation(cls, mapping: dict[str, str], dims: dict[str, int]) -> "MapSpec":
        return cls.from_rules({s: AxisRule(tuple(Identity() for _ in range(dims[s])), t)
                               for s, t in mapping.items()})

    def compose(self, other: "MapSpec") -> "MapSpec":
        """``self ∘ other``: apply ``other`` first."""
        return MapSpec(other.steps + self.steps)

    def __matmul__(self, other: "MapSpec") -> "MapSpec":
        return self.compose(other)

    def inverse(self) -> "MapSpec":
        return MapSpec(tuple(s.inverted() for s in reversed(self.steps)))

    def power(self, n: int) -> "MapSpec":
        base = self if n >= 0 else self.inverse()
        return MapSpec(base.steps * abs(n))

    def relabel(self, mapping: dict[str, str]) -> "MapSpec":
        ren = lambda s: mapping.get(s, s)  # noqa: E731
        steps = []
        for st in self.steps:
            rules = []
            for lab, r in st.rules:
                tgt = None if r.target is None else ren(r.target)
                rules.append((ren(lab), r.retarget(tgt)))
            steps.append(Step(tuple(rules)))
        return MapSpec(tuple(steps))

    @property
    def exact(self) -> bool:
        return all(r.exact for st in self.steps for _, r in st.rules)

    # points ------------------------------------------------------------

    def target_label(self, label: str) -> str:
        for st in self.steps:
            label = st.target(label)
        return label

    def apply_point(self, label: str, x: Sequence[float], mu: IntensityMeasure | None = None):
        x = tuple(x)
        for st in self.steps:
            r = st.rule(label)
            if r is not None:
                x = r.forward(x)
                label = st.target(label)
                if mu is not None and not mu.component(label).in_support(x):
                    raise DomainEscape(f"image {x} leaves the support of {label!r}")
        return label, x

    def inverse_point(self, label: str, y: Sequence[float]):
        y = tuple(y)
        for st in reversed(self.steps):
            label = st.source(label)
            r = st.rule(label)
            if r is not None:
                y = r.inverse(y)
        return label, y

    # regions -----------------------------------------------------------

    def preimage_region(self, region: RegionSet) -> RegionSet:
        boxes = [(b.component, b.lower, b.upper) for b in region.boxes]
        for st in reversed(self.steps):
            nxt = []
            for label, lo, hi in boxes:
                src = st.source(label)
                r = st.rule(src)
                if r is None:
                    nxt.append((src, lo, hi))
                else:
                    nxt.extend((src, l, h) for l, h in r.preimage_boxes(lo, hi))
            boxes = nxt
        return _to_region(boxes)

    def image_region(self, region: RegionSet) -> RegionSet:
        boxes = [(b.component, b.lower, b.upper) for b in region.boxes]
        for st in self.steps:
            nxt = []
            for label, lo, hi in boxes:
                r = st.rule(label)
                if r is None:
                    nxt.append((label, lo, hi))
                    continue
                for l, h in r.image_boxes(lo, hi):
                    if not r.exact:
                        l, h = _shrink(l, h)
                    nxt.append((st.target(label), l, h))
            boxes = nxt
        return _to_region(boxes)

    def exact_image_boxes(self, label: str, lo, hi):
        """Rational image of a box, or None when a rule is not affine."""
        boxes = [(label, tuple(Fraction(v) for v in lo), tuple(Fraction(v) for v in hi))]
        for st in self.steps:
            nxt = []
            for lab, l, h in boxes:
                r = st.rule(lab)
                if r is None:
                    nxt.append((lab, l, h))
                    continue
                imgs = r.exact_image_boxes(l, h) if hasattr(r, "exact_image_boxes") else None
                if imgs is None:
                    return None
                nxt.extend((st.target(lab), a, b) for a, b in imgs)
            boxes = nxt
        return boxes

    # Radon-Nikodym derivative ------------------------------------------

    def log_rn(self, mu: IntensityMeasure, label: str, x: Sequence[float]) -> float:
        x = tuple(x)
        total = 0.0
        for st in self.steps:
            r = st.rule(label)
            if r is None:
                continue
            tgt = st.target(label)
            total += r.log_derivative(x, mu.component(label), mu.component(tgt))
            x = r.forward(x)
            label = tgt
        return total

    def constant_log_rn(self, mu: IntensityMeasure, label: str) -> float | None:
        total = 0.0
        for st in self.steps:
            r = st.rule(label)
            if r is None:
                continue
            tgt = st.target(label)
            c = r.constant_log_derivative(mu.component(label), mu.component(tgt))
            if c is None:
                return None
            total += c
            label = tgt
        return total

    def log_rn_bounds(self, mu: IntensityMeasure, box: Box) -> tuple[float, float]:
        boxes = [(box.lower, box.upper)]
        label = box.component
        lo_total = hi_total = 0.0
        for st in self.steps:
            r = st.rule(label)
            if r is None:
                continue
            tgt = st.target(label)
            src_c, tgt_c = mu.component(label), mu.component(tgt)
            bounds = [r.log_derivative_bounds(l, h, src_c, tgt_c) for l, h in boxes]
            lo_total += min(b[0] for b in bounds)
            hi_total += max(b[1] for b in bounds)
            boxes = [ib for l, h in boxes for ib in r.image_boxes(l, h)]
            label = tgt
        return lo_total, hi_total

    def axis_log_rn(self, mu: IntensityMeasure, label: str, axis: int, xi: float) -> float:
        """Contribution of one axis to ``log_rn`` (excluding density scales)."""
        total = 0.0
        for st in self.steps:
            r = st.rule(label)
            if r is None:
                continue
            if not isinstance(r, AxisRule):
                raise NotBoxRepresentable("axis decomposition needs product rules")
            tgt = st.target(label)
            total += r.axis_log_derivative(axis, xi, mu.component(label), mu.component(tgt))
            xi = r.axes[axis].forward(xi)
            label = tgt
        return total

    def scale_log_rn(self, mu: IntensityMeasure, label: str) -> float:
        total = 0.0
        for st in self.steps:
            if st.rule(label) is None:
                continue
            tgt = st.target(label)
            total += math.log(mu.component(tgt).scale) - math.log(mu.component(label).scale)
            label = tgt
        return total

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {"steps": [[{"component": lab, "target": r.target, "rule": r.to_dict()}
                           for lab, r in st.rules] for st in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "MapSpec":
        steps = []
        for st in d["steps"]:
            steps.append(Step(tuple((e["component"], rule_from_dict(e["rule"], e.get("target")))
                                    for e in st)))
        return cls(tuple(steps))


def _shrink(lo, hi):
    out_lo, out_hi = [], []
    for a, b in zip(lo, hi):
        da = IMAGE_MARGIN * max(1.0, abs(a)) if math.isfinite(a) else 0.0
        db = IMAGE_MARGIN * max(1.0, abs(b)) if math.isfinite(b) else 0.0
        if a + da < b - db:
            a, b = a + da, b - db
        out_lo.append(a)
        out_hi.append(b)
    return tuple(out_lo), tuple(out_hi)


def _to_region(boxes) -> RegionSet:
    out = []
    for label, lo, hi in boxes:
        if all(a < b for a, b in zip(lo, hi)):
            out.append(Box(label, lo, hi))
    return RegionSet(out, _trusted=True).coalesce()


def apply_point(map: MapSpec, label: str, x: Sequence[float], mu: IntensityMeasure | None = None):
    return map.apply_point(label, x, mu)


def preimage_region(map: MapSpec, region: RegionSet) -> RegionSet:
    return map.preimage_region(region)


def check_measure_preserving(map: MapSpec, mu: IntensityMeasure, boxes: Sequence[Box],
                             tol: float = 1e-12) -> list[float]:
    """Absolute discrepancies ``|mu(T^-1 A) - mu(A)|`` per test box."""
    out = []
    for b in boxes:
        a = RegionSet((b,))
        d = abs(mu.measure_of(map.preimage_region(a)) - mu.measure_of(a))
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# Suspension
# ---------------------------------------------------------------------------


def suspend(map: MapSpec, config: Configuration) -> Configuration:
    """Push every point of ``config`` forward through ``map``."""
    mu = config.mu
    covered = map.image_region(config.covered)
    for b in covered.boxes:
        if not _inside_support(mu, b):
            raise DomainEscape(f"image box {b} leaves its component support")
    moved: dict[str, list] = {}
    for label, arr in config.points.items():
        for row in arr:
            lab2, y = map.apply_point(label, tuple(float(v) for v in row), mu)
            moved.setdefault(lab2, []).append(y)
    points = {}
    for label, pts in moved.items():
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, mu.component(label).dimension)
        region = covered.restrict_to(label)
        keep = np.zeros(len(arr), dtype=bool)
        for b in region.boxes:
            keep |= np.all((arr >= np.asarray(b.lower)) & (arr < np.asarray(b.upper)), axis=1)
        arr = arr[keep]
        if len(arr):
            points[label] = _freeze(_sorted_unique(arr))
    frame = map if config.frame is None else map.compose(config.frame)
    return Configuration(mu, covered, points, config.origin, config.max_cell_mass, frame,
                         config.component_seeds)


def _inside_support(mu: IntensityMeasure, b: Box) -> bool:
    c = mu.component(b.component)
    return all(a >= p.lo and u <= p.hi for a, u, p in zip(b.lower, b.upper, c.profiles))


# ---------------------------------------------------------------------------
# Group words and product systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupWord:
    """Word in generators; ``letters[0]`` is the leftmost (applied last)."""

    letters: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        letters = tuple((int(g), int(e)) for g, e in self.letters)
        if any(e not in (1, -1) for _, e in letters):
            raise ValueError("exponents must be +1 or -1")
        object.__setattr__(self, "letters", letters)

    def evaluate(self, generators: Sequence[MapSpec]) -> MapSpec:
        out = MapSpec.identity()
        for g, e in reversed(self.letters):
            m = generators[g] if e == 1 else generators[g].inverse()
            out = m.compose(out)
        return out

    def __len__(self):
        return len(self.letters)

    def to_list(self) -> list:
        return [list(x) for x in self.letters]


def reduced_words(n_generators: int, max_length: int):
    """All freely reduced words up to ``max_length`` in shortlex order."""
    yield GroupWord(())
    letters = [(g, e) for g in range(n_generators) for e in (1, -1)]
    frontier = [()]
    for _ in range(max_length):
        nxt = []
        for w in frontier:
            for g, e in letters:
                if w and w[-1] == (g, -e):
                    continue
                nw = w + ((g, e),)
                nxt.append(nw)
                yield GroupWord(nw)
        frontier = nxt


@dataclass(frozen=True)
class ProductSystem:
    """Disjoint union of factor systems, acting diagonally."""

    factors: tuple[tuple[IntensityMeasure, MapSpec], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for mu, _ in self.factors:
            clash = seen & set(mu.labels)
            if clash:
                from .errors import ComponentClash

                raise ComponentClash(f"factor labels collide: {sorted(clash)}")
            seen |= set(mu.labels)

    @classmethod
    def copies(cls, mu: IntensityMeasure, map: MapSpec, n: int, suffix: str = "#") -> "ProductSystem":
        factors = []
        for i in range(n):
            ren = {lab: f"{lab}{suffix}{i}" for lab in mu.labels}
            factors.append((mu.relabel(ren), map.relabel(ren)))
        return cls(tuple(factors))

    @property
    def mu(self) -> IntensityMeasure:
        return IntensityMeasure(tuple(c for m, _ in self.factors for c in m.components))

    @property
    def map(self) -> MapSpec:
        out = MapSpec.identity()
        for _, m in self.factors:
            out = m.compose(out)
        return out


# ---------------------------------------------------------------------------
# Orbits
# ---------------------------------------------------------------------------


def _pullbacks(map: MapSpec, regions: Sequence[RegionSet], n_steps: int):
    cur = list(regions)
    out = []
    for _ in range(n_steps):
        out.append(cur)
        cur = [map.preimage_region(r) for r in cur]
    return out


def _grow(config: Configuration, needed: RegionSet, budget: float) -> Configuration:
    total = config.mu.measure_of(config.covered.union(needed))
    if total > budget:
        raise WindowBlowup(f"orbit needs covered mass {total:.6g} > budget {budget:.6g}")
    return extend(config, needed)


def orbit_values(map: MapSpec, config: Configuration, observable, n_steps: int, *,
                 budget: float = DEFAULT_BUDGET, method: str = "pull"):
    """Values ``F(T*^j omega)`` for ``j < n_steps`` and the grown configuration.

    ``pull`` evaluates counts of the pulled-back regions ``T^-j(A)`` on the
    original configuration; ``push`` iterates the suspension itself.  The two
    agree exactly by equivariance of counts.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    regions = observable.regions()
    if method == "pull":
        pulled = _pullbacks(map, regions, n_steps)
        needed = RegionSet.empty()
        for rs in pulled:
            for r in rs:
                needed = needed.union(r)
            if config.mu.measure_of(needed) > budget:
                raise WindowBlowup(f"orbit window exceeds budget {budget:.6g}")
        config = _grow(config, needed, budget)
        values = np.empty(n_steps)
        for j, rs in enumerate(pulled):
            counts = {r: _count_unchecked(config, p) for r, p in zip(regions, rs)}
            values[j] = observable.evaluate(counts)
        return values, config
    if method == "push":
        union = RegionSet.empty()
        for r in regions:
            union = union.union(r)
        values = np.empty(n_steps)
        cur = config
        for j in range(n_steps):
            cur = _grow(cur, union, budget)
            values[j] = observable.evaluate({r: _count_unchecked(cur, r) for r in regions})
            cur = suspend(map, cur)
        return values, cur
    raise ValueError(f"unknown orbit method {method!r}")


def orbit_average(map: MapSpec, config: Configuration, observable, n_steps: int, *,
                  budget: float = DEFAULT_BUDGET, method: str = "pull") -> np.ndarray:
    """Running Birkhoff averages ``a_k``, ``k = 1..n_steps``."""
    values, _ = orbit_values(map, config, observable, n_steps, budget=budget, method=method)
    return np.cumsum(values) / np.arange(1, n_steps + 1)


@dataclass
class CorrelationEstimate:
    lags: np.ndarray          # 0..L
    cov: np.ndarray           # c_n = cov(F, G∘T*^n)
    se: np.ndarray            # standard error of each c_n
    cesaro: np.ndarray        # (1/n) sum_{k=1..n} |c_k|, index n-1
    replicas: int

    @property
    def mean_se(self) -> float:
        return float(np.mean(self.se[1:])) if len(self.se) > 1 else float(self.se[0])


def correlation_samples(map: MapSpec, F, G, max_lag: int, replicas: int, mu: IntensityMeasure,
                        seed: SeedSpec, *, max_cell_mass: float = 1.0,
                        budget: float = DEFAULT_BUDGET, first_replica: int = 0):
    """Per-replica values ``F(omega)`` and ``G(T*^n omega)``, ``n = 0..max_lag``."""
    g_regions = G.regions()
    pulled = _pullbacks(map, g_regions, max_lag + 1)
    needed = RegionSet.empty()
    for r in F.regions():
        needed = needed.union(r)
    for rs in pulled:
        for r in rs:
            needed = needed.union(r)
    if mu.measure_of(needed) > budget:
        raise WindowBlowup(f"correlation window exceeds budget {budget:.6g}")
    fv = np.empty(replicas)
    gv = np.empty((replicas, max_lag + 1))
    for i in range(replicas):
        cfg = extend(empty_configuration(mu, seed.replica(first_replica + i), max_cell_mass), needed)
        fv[i] = F.evaluate({r: _count_unchecked(cfg, r) for r in F.regions()})
        for n, rs in enumerate(pulled):
            gv[i, n] = G.evaluate({r: _count_unchecked(cfg, p) for r, p in zip(g_regions, rs)})
    return fv, gv


def correlation_from_samples(fv: np.ndarray, gv: np.ndarray) -> CorrelationEstimate:
    R = len(fv)
    fc = fv - fv.mean()
    gc = gv - gv.mean(axis=0)
    prods = fc[:, None] * gc
    cov = prods.sum(axis=0) / (R - 1)
    se = prods.std(axis=0, ddof=1) / math.sqrt(R)
    absc = np.abs(cov[1:])
    cesaro = np.cumsum(absc) / np.arange(1, len(absc) + 1)
    return CorrelationEstimate(np.arange(gv.shape[1]), cov, se, cesaro, R)


def pair_correlation(map: MapSpec, F, G, max_lag: int, replicas: int, mu: IntensityMeasure,
                     seed: SeedSpec, *, max_cell_mass: float = 1.0,
                     budget: float = DEFAULT_BUDGET) -> CorrelationEstimate:
    """Estimate ``cov(F, G∘T*^n)`` over independent replicas and its Cesàro means."""
    if replicas < 2:
        from .errors import InsufficientReplicas

        raise InsufficientReplicas("need at least 2 replicas")
    fv, gv = correlation_samples(map, F, G, max_lag, replicas, mu, seed,
                                 max_cell_mass=max_cell_mass, budget=budget)
    return correlation_from_samples(fv, gv)
