"""Base measure spaces: Euclidean components, half-open boxes and closed-form masses.

A component carries a product density ``scale * prod_i rho_i(x_i)`` where each
axis profile is Lebesgue, exponential (``e^x``) or piecewise constant.  All box
integrals are closed form, so every mass in this package is exact up to
floating rounding.
"""
from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

from .errors import (
    DimensionMismatch,
    NonFiniteWindow,
    OutOfSupport,
    OverlappingBoxes,
    UnknownComponent,
)

INF = math.inf

# Deepest dyadic refinement of a unit lattice cell.
MAX_LEVEL = 48


def _clamp_open(y: float, a: float, b: float) -> float:
    if y >= b:
        y = math.nextafter(b, -INF)
    if y < a:
        y = a
    return y


# ---------------------------------------------------------------------------
# Axis profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lebesgue:
    lo: float = -INF
    hi: float = INF

    kind = "lebesgue"

    def integral(self, a: float, b: float) -> float:
        return b - a

    def density(self, x: float) -> float:
        return 1.0

    def log_density(self, x: float) -> float:
        return 0.0

    def inverse_cdf(self, a: float, b: float, u: float) -> float:
        return _clamp_open(a + u * (b - a), a, b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Exponential:
    """Density ``e^x`` on the axis."""

    lo: float = -INF
    hi: float = INF

    kind = "exponential"

    def integral(self, a: float, b: float) -> float:
        if b == INF:
            return INF
        if a == -INF:
            return math.exp(b)
        return math.exp(a) * math.expm1(b - a)

    def density(self, x: float) -> float:
        return math.exp(x)

    def log_density(self, x: float) -> float:
        return x

    def inverse_cdf(self, a: float, b: float, u: float) -> float:
        return _clamp_open(a + math.log1p(u * math.expm1(b - a)), a, b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Steps:
    """Piecewise-constant density: ``levels[i]`` on ``[breaks[i], breaks[i+1])``."""

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    kind = "steps"

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if len(self.breaks) != len(self.levels) + 1 or not self.levels:
            raise ValueError("need len(breaks) == len(levels) + 1 >= 2")
        if any(b0 >= b1 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be strictly increasing")
        if any(not (v > 0) or math.isinf(v) for v in self.levels):
            raise ValueError("levels must be finite and strictly positive")

    @property
    def lo(self) -> float:
        return self.breaks[0]

    @property
    def hi(self) -> float:
        return self.breaks[-1]

    def _pieces(self, a: float, b: float) -> Iterator[tuple[float, float, float]]:
        for v, b0, b1 in zip(self.levels, self.breaks, self.breaks[1:]):
            lo, hi = max(a, b0), min(b, b1)
            if lo < hi:
                yield v, lo, hi

    def integral(self, a: float, b: float) -> float:
        return sum(v * (hi - lo) for v, lo, hi in self._pieces(a, b))

    def density(self, x: float) -> float:
        i = bisect.bisect_right(self.breaks, x) - 1
        if i < 0 or i >= len(self.levels):
            return 0.0
        return self.levels[i]

    def log_density(self, x: float) -> float:
        d = self.density(x)
        return math.log(d) if d > 0 else -INF

    def inverse_cdf(self, a: float, b: float, u: float) -> float:
        pieces = list(self._pieces(a, b))
        target = u * sum(v * (hi - lo) for v, lo, hi in pieces)
        acc = 0.0
        for v, lo, hi in pieces:
            m = v * (hi - lo)
            if target < acc + m or (v, lo, hi) == pieces[-1]:
                return _clamp_open(lo + (target - acc) / v, lo, hi)
            acc += m
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "breaks": list(self.breaks), "levels": list(self.levels)}


Profile = Lebesgue | Exponential | Steps


def profile_from_dict(d: dict) -> Profile:
    kind = d["kind"]
    if kind == "lebesgue":
        return Lebesgue(float(d.get("lo", -INF)), float(d.get("hi", INF)))
    if kind == "exponential":
        return Exponential(float(d.get("lo", -INF)), float(d.get("hi", INF)))
    if kind == "steps":
        return Steps(tuple(d["breaks"]), tuple(d["levels"]))
    raise ValueError(f"unknown profile kind {kind!r}")


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    label: str
    profiles: tuple[Profile, ...]
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ValueError("dimension must be >= 1")
        if not (self.scale > 0) or math.isinf(self.scale):
            raise ValueError("density scale must be finite and > 0")

    @property
    def dimension(self) -> int:
        return len(self.profiles)

    @property
    def support_lower(self) -> tuple[float, ...]:
        return tuple(p.lo for p in self.profiles)

    @property
    def support_upper(self) -> tuple[float, ...]:
        return tuple(p.hi for p in self.profiles)

    def in_support(self, x: Sequence[float]) -> bool:
        return all(p.lo <= xi < p.hi for p, xi in zip(self.profiles, x))

    def box_mass(self, lower: Sequence[float], upper: Sequence[float]) -> float:
        m = self.scale
        for p, a, b in zip(self.profiles, lower, upper):
            m *= p.integral(a, b)
        return m

    def log_density(self, x: Sequence[float]) -> float:
        return math.log(self.scale) + sum(p.log_density(xi) for p, xi in zip(self.profiles, x))

    def sample_point(self, uniforms: Sequence[float], lower, upper) -> tuple[float, ...]:
        return tuple(
            p.inverse_cdf(a, b, u) for p, a, b, u in zip(self.profiles, lower, upper, uniforms)
        )

    def relabel(self, label: str) -> "Component":
        return Component(label, self.profiles, self.scale)

    @classmethod
    def constant(cls, label: str, dimension: int = 1, density: float = 1.0,
                 support: tuple[Sequence[float], Sequence[float]] | None = None) -> "Component":
        if support is None:
            profs = tuple(Lebesgue() for _ in range(dimension))
        else:
            lo, hi = support
            profs = tuple(Lebesgue(float(a), float(b)) for a, b in zip(lo, hi))
        return cls(label, profs, float(density))

    @classmethod
    def torus(cls, label: str, dimension: int = 1) -> "Component":
        """Unit torus ``[0, 1)^d`` with Lebesgue measure (total mass 1)."""
        return cls(label, tuple(Lebesgue(0.0, 1.0) for _ in range(dimension)), 1.0)

    @classmethod
    def exponential(cls, label: str, dimension: int = 1, density: float = 1.0) -> "Component":
        """Lebesgue on the first ``d - 1`` axes times ``e^t dt`` on the last."""
        profs = tuple(Lebesgue() for _ in range(dimension - 1)) + (Exponential(),)
        return cls(label, profs, float(density))

    def to_dict(self) -> dict:
        return {"label": self.label, "scale": self.scale,
                "profiles": [p.to_dict() for p in self.profiles]}

    @classmethod
    def from_dict(cls, d: dict) -> "Component":
        return cls(d["label"], tuple(profile_from_dict(p) for p in d["profiles"]),
                   float(d.get("scale", 1.0)))


# ---------------------------------------------------------------------------
# Boxes and regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Half-open box ``[lower, upper)`` inside one component."""

    component: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise DimensionMismatch("lower/upper lengths differ or are empty")
        for a, b in zip(lo, hi):
            if not (a < b):
                raise ValueError(f"degenerate box axis [{a}, {b})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, component: str, a: float, b: float) -> "Box":
        return cls(component, (a,), (b,))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(v) for v in self.lower + self.upper)

    def contains(self, x: Sequence[float]) -> bool:
        return all(a <= xi < b for a, xi, b in zip(self.lower, x, self.upper))

    def overlaps(self, other: "Box") -> bool:
        if self.component != other.component:
            return False
        return all(max(a, c) < min(b, d) for a, b, c, d in
                   zip(self.lower, self.upper, other.lower, other.upper))

    def intersect(self, other: "Box") -> "Box | None":
        if not self.overlaps(other):
            return None
        lo = tuple(max(a, c) for a, c in zip(self.lower, other.lower))
        hi = tuple(min(b, d) for b, d in zip(self.upper, other.upper))
        return Box(self.component, lo, hi)

    def within(self, other: "Box") -> bool:
        return self.component == other.component and all(
            c <= a and b <= d for a, b, c, d in zip(self.lower, self.upper, other.lower, other.upper))

    def subtract(self, other: "Box") -> list["Box"]:
        inter = self.intersect(other)
        if inter is None:
            return [self]
        out = []
        lo, hi = list(self.lower), list(self.upper)
        for i in range(self.dimension):
            if lo[i] < inter.lower[i]:
                h = list(hi)
                h[i] = inter.lower[i]
                out.append(Box(self.component, tuple(lo), tuple(h)))
            if inter.upper[i] < hi[i]:
                l2 = list(lo)
                l2[i] = inter.upper[i]
                out.append(Box(self.component, tuple(l2), tuple(hi)))
            lo[i], hi[i] = inter.lower[i], inter.upper[i]
        return out

    def to_dict(self) -> dict:
        return {"component": self.component, "lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["component"], tuple(d["lower"]), tuple(d["upper"]))


def _check_disjoint(boxes: Sequence[Box]) -> None:
    by_comp: dict[str, list[Box]] = {}
    for b in boxes:
        by_comp.setdefault(b.component, []).append(b)
    for group in by_comp.values():
        dims = {b.dimension for b in group}
        if len(dims) > 1:
            raise DimensionMismatch("boxes of one component have different dimensions")
        group = sorted(group, key=lambda b: b.lower[0])
        active: list[Box] = []
        for b in group:
            active = [a for a in active if a.upper[0] > b.lower[0]]
            for a in active:
                if a.overlaps(b):
                    raise OverlappingBoxes(f"{a} and {b} overlap")
            active.append(b)


def _coalesce_boxes(boxes: list[Box]) -> list[Box]:
    changed = True
    while changed and len(boxes) > 1:
        changed = False
        d = max(b.dimension for b in boxes)
        for axis in range(d):
            groups: dict[tuple, list[Box]] = {}
            short = [b for b in boxes if b.dimension <= axis]
            for b in boxes:
                if b.dimension <= axis:
                    continue
                key = (b.component, b.lower[:axis] + b.lower[axis + 1:],
                       b.upper[:axis] + b.upper[axis + 1:])
                groups.setdefault(key, []).append(b)
            merged: list[Box] = short
            for group in groups.values():
                group.sort(key=lambda b: b.lower[axis])
                cur = group[0]
                for nxt in group[1:]:
                    if nxt.lower[axis] == cur.upper[axis]:
                        hi = list(cur.upper)
                        hi[axis] = nxt.upper[axis]
                        cur = Box(cur.component, cur.lower, tuple(hi))
                        changed = True
                    else:
                        merged.append(cur)
                        cur = nxt
                merged.append(cur)
            boxes = merged
    return boxes


def _sort_key(b: Box):
    return (b.component, b.lower, b.upper)


class RegionSet:
    """Finite union of pairwise-disjoint boxes, possibly across components."""

    __slots__ = ("_boxes", "_hash")

    def __init__(self, boxes: Iterable[Box] = (), *, _trusted: bool = False):
        boxes = tuple(boxes)
        if not _trusted:
            for b in boxes:
                if not isinstance(b, Box):
                    raise TypeError(f"expected Box, got {type(b).__name__}")
            _check_disjoint(boxes)
        self._boxes = tuple(sorted(boxes, key=_sort_key))
        self._hash = None

    @classmethod
    def of(cls, *boxes: Box) -> "RegionSet":
        return cls(boxes)

    @classmethod
    def interval(cls, component: str, a: float, b: float) -> "RegionSet":
        return cls((Box.interval(component, a, b),))

    @classmethod
    def empty(cls) -> "RegionSet":
        return cls((), _trusted=True)

    @property
    def boxes(self) -> tuple[Box, ...]:
        return self._boxes

    @property
    def components(self) -> frozenset[str]:
        return frozenset(b.component for b in self._boxes)

    @property
    def is_empty(self) -> bool:
        return not self._boxes

    def __iter__(self):
        return iter(self._boxes)

    def __len__(self):
        return len(self._boxes)

    def __eq__(self, other):
        return isinstance(other, RegionSet) and self._boxes == other._boxes

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._boxes)
        return self._hash

    def __repr__(self):
        return f"RegionSet({list(self._boxes)!r})"

    def contains_point(self, component: str, x: Sequence[float]) -> bool:
        return any(b.component == component and b.contains(x) for b in self._boxes)

    def intersection(self, other: "RegionSet") -> "RegionSet":
        out = []
        for a in self._boxes:
            for b in other._boxes:
                c = a.intersect(b)
                if c is not None:
                    out.append(c)
        return RegionSet(_coalesce_boxes(out), _trusted=True)

    def difference(self, other: "RegionSet") -> "RegionSet":
        out = []
        for a in self._boxes:
            pieces = [a]
            for b in other._boxes:
                if b.component != a.component:
                    continue
                nxt = []
                for p in pieces:
                    nxt.extend(p.subtract(b))
                pieces = nxt
                if not pieces:
                    break
            out.extend(pieces)
        return RegionSet(_coalesce_boxes(out), _trusted=True)

    def union(self, other: "RegionSet") -> "RegionSet":
        extra = other.difference(self)
        return RegionSet(_coalesce_boxes(list(self._boxes) + list(extra._boxes)), _trusted=True)

    def coalesce(self) -> "RegionSet":
        return RegionSet(_coalesce_boxes(list(self._boxes)), _trusted=True)

    def is_subset(self, other: "RegionSet") -> bool:
        return self.difference(other).is_empty

    def restrict_to(self, component: str) -> "RegionSet":
        return RegionSet((b for b in self._boxes if b.component == component), _trusted=True)

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self._boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSet":
        return cls(Box.from_dict(b) for b in d["boxes"])


def region_intersection(a: RegionSet, b: RegionSet) -> RegionSet:
    return a.intersection(b)


def region_difference(a: RegionSet, b: RegionSet) -> RegionSet:
    return a.difference(b)


# ---------------------------------------------------------------------------
# Intensity measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityMeasure:
    components: tuple[Component, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        index = {}
        for c in comps:
            if c.label in index:
                raise ValueError(f"duplicate component label {c.label!r}")
            index[c.label] = c
        object.__setattr__(self, "_index", index)

    @classmethod
    def of(cls, *components: Component) -> "IntensityMeasure":
        return cls(tuple(components))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.components)

    def component(self, label: str) -> Component:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownComponent(label) from None

    def check_box(self, box: Box) -> Component:
        comp = self.component(box.component)
        if box.dimension != comp.dimension:
            raise DimensionMismatch(
                f"box in {box.component!r} has dimension {box.dimension}, component has {comp.dimension}")
        for a, b, p in zip(box.lower, box.upper, comp.profiles):
            if a < p.lo or b > p.hi:
                raise OutOfSupport(f"{box} leaves the support of {box.component!r}")
        return comp

    def box_mass(self, box: Box) -> float:
        return self.check_box(box).box_mass(box.lower, box.upper)

    def measure_of(self, region: RegionSet) -> float:
        return math.fsum(self.box_mass(b) for b in region.boxes)

    def merged_with(self, other: "IntensityMeasure") -> "IntensityMeasure":
        from .errors import ComponentClash

        clash = set(self.labels) & set(other.labels)
        if clash:
            raise ComponentClash(f"component labels collide: {sorted(clash)}")
        return IntensityMeasure(self.components + other.components)

    def relabel(self, mapping: dict[str, str]) -> "IntensityMeasure":
        return IntensityMeasure(tuple(c.relabel(mapping.get(c.label, c.label)) for c in self.components))

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityMeasure":
        return cls(tuple(Component.from_dict(c) for c in d["components"]))


def measure_of(mu: IntensityMeasure, region: RegionSet) -> float:
    return mu.measure_of(region)


@dataclass(frozen=True)
class Cell:
    """A canonical dyadic cell: lattice cell of side ``2**-level`` clipped to the support."""

    component: str
    level: int
    index: tuple[int, ...]
    box: Box
    mass: float


@lru_cache(maxsize=65536)
def canonical_cells(mu: IntensityMeasure, box: Box, max_cell_mass: float) -> tuple[Cell, ...]:
    """Canonical cells that meet ``box``.

    Unit lattice cells are halved along every axis while their mass exceeds
    ``max_cell_mass``.  The refinement depends only on the cell itself, never
    on ``box``, so two windows always agree on the cells they share.
    """
    if not (max_cell_mass > 0):
        raise ValueError("max_cell_mass must be positive")
    comp = mu.check_box(box)
    if not box.bounded:
        raise NonFiniteWindow(f"unbounded window {box}")
    slo, shi = comp.support_lower, comp.support_upper
    d = comp.dimension
    out: list[Cell] = []

    def visit(level: int, idx: tuple[int, ...]):
        side = math.ldexp(1.0, -level)
        lo = tuple(max(k * side, s) for k, s in zip(idx, slo))
        hi = tuple(min((k + 1) * side, s) for k, s in zip(idx, shi))
        if any(a >= b for a, b in zip(lo, hi)):
            return
        if any(max(a, c) >= min(b, e) for a, b, c, e in zip(lo, hi, box.lower, box.upper)):
            return
        m = comp.box_mass(lo, hi)
        if m <= max_cell_mass or level >= MAX_LEVEL:
            out.append(Cell(box.component, level, idx, Box(box.component, lo, hi), m))
            return
        for bits in itertools.product((0, 1), repeat=d):
            visit(level + 1, tuple(2 * k + bt for k, bt in zip(idx, bits)))

    ranges = [range(math.floor(a), math.ceil(b)) for a, b in zip(box.lower, box.upper)]
    for idx in itertools.product(*ranges):
        visit(0, tuple(idx))
    return tuple(out)


def partition_window(window: RegionSet, max_cell_mass: float, mu: IntensityMeasure) -> list[RegionSet]:
    """Split ``window`` into disjoint cells of mass at most ``max_cell_mass``.

    Cells are the canonical dyadic cells clipped to the window.
    """
    total = mu.measure_of(window)
    if math.isinf(total):
        raise NonFiniteWindow("window has infinite mass")
    cells = []
    for b in window.boxes:
        for c in canonical_cells(mu, b, max_cell_mass):
            piece = c.box.intersect(b)
            if piece is not None:
                cells.append(RegionSet((piece,), _trusted=True))
    return cells
