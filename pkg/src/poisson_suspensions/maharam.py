"""Maharam skew products and certified essential values of the RN cocycle.

For a nonsingular map ``T`` of ``(X, mu)`` with ``nabla = dmu∘T/dmu`` the skew
product ``(x, t) -> (T x, t - log nabla(x))`` preserves ``mu ⊗ e^t dt``.
Each base component ``L`` gets an extended component ``L~`` whose last axis
carries the density ``e^t``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .dynamics import GroupWord, Identity, MapSpec, Scale, Step, reduced_words
from .errors import NotACube, NotBoxRepresentable, QuadratureFailure
from .intensity import Box, Component, Exponential, IntensityMeasure, Lebesgue, RegionSet

SUFFIX = "~"
SCHEMA_VERSION = 1

# Default half-width of the certified window around s.
DEFAULT_EPSILON = 1e-6
QUAD_TOL = 1e-9
# Outward margin on floating images / bounds of non-affine maps.
CERT_MARGIN = 1e-12


def extended_label(label: str) -> str:
    return label + SUFFIX


def base_label(label: str) -> str:
    if not label.endswith(SUFFIX):
        raise ValueError(f"{label!r} is not an extended component")
    return label[: -len(SUFFIX)]


@dataclass(frozen=True)
class NonsingularMap:
    """Base map with its log Radon-Nikodym derivative.

    ``log_rn`` may override the closed form derived from the map rules; it is
    then called as ``log_rn(label, x)``.
    """

    base: MapSpec
    mu: IntensityMeasure
    log_rn: Callable | None = field(default=None, compare=False)

    def log_rn_at(self, label: str, x) -> float:
        if self.log_rn is not None:
            return float(self.log_rn(label, tuple(x)))
        return self.base.log_rn(self.mu, label, x)

    def constant_log_rn(self, label: str) -> float | None:
        if self.log_rn is not None:
            return None
        return self.base.constant_log_rn(self.mu, label)

    def inverse(self) -> "NonsingularMap":
        if self.log_rn is not None:
            raise NotImplementedError("inverse of an overridden log-derivative")
        return NonsingularMap(self.base.inverse(), self.mu)

    def compose(self, other: "NonsingularMap") -> "NonsingularMap":
        return NonsingularMap(self.base.compose(other.base), self.mu)

    def moved_labels(self) -> list[str]:
        out = set()
        for st in self.base.steps:
            for lab, r in st.rules:
                out.add(lab)
                out.add(st.target(lab))
        return sorted(out)

    def to_dict(self) -> dict:
        if self.log_rn is not None:
            raise TypeError("maps with a custom log-derivative are not serializable")
        return {"base": self.base.to_dict(), "intensity": self.mu.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NonsingularMap":
        return cls(MapSpec.from_dict(d["base"]), IntensityMeasure.from_dict(d["intensity"]))


def maharam_space(mu: IntensityMeasure) -> IntensityMeasure:
    """``mu ⊗ e^t dt`` as an intensity with one extended component per label."""
    return IntensityMeasure(tuple(
        Component(extended_label(c.label), c.profiles + (Exponential(),), c.scale)
        for c in mu.components))


@dataclass(frozen=True)
class SkewRule:
    """Skew product over ``tmap`` acting on the extended component of ``label``.

    Forward rules send ``(x, t)`` to ``(T x, t - log nabla(x))``.  With
    ``backward`` the rule is the exact inverse skew
    ``(y, t) -> (T^-1 y, t + log nabla(T^-1 y))`` and ``label`` is the base
    label of ``y``.
    """

    tmap: NonsingularMap
    label: str
    target: str | None = None
    backward: bool = False

    @property
    def exact(self) -> bool:
        return self.tmap.base.exact

    def _base_map(self) -> MapSpec:
        return self.tmap.base.inverse() if self.backward else self.tmap.base

    def _image_label(self) -> str:
        return self._base_map().target_label(self.label)

    def forward(self, p):
        p = tuple(p)
        x, t = p[:-1], p[-1]
        if not self.backward:
            _, y = self.tmap.base.apply_point(self.label, x)
            return y + (t - self.tmap.log_rn_at(self.label, x),)
        src, y = self.tmap.base.inverse_point(self.label, x)
        return y + (t + self.tmap.log_rn_at(src, y),)

    def inverse(self, p):
        p = tuple(p)
        y, t = p[:-1], p[-1]
        if not self.backward:
            src, x = self.tmap.base.inverse_point(self._image_label(), y)
            return x + (t + self.tmap.log_rn_at(src, x),)
        src = self._image_label()
        _, x = self.tmap.base.apply_point(src, y)
        return x + (t - self.tmap.log_rn_at(src, y),)

    def _shift(self) -> float:
        """``delta`` with ``t' = t - delta`` when the RN derivative is constant."""
        if self.backward:
            c = self.tmap.constant_log_rn(self._image_label())
            delta = None if c is None else -c
        else:
            delta = self.tmap.constant_log_rn(self.label)
        if delta is None:
            raise NotBoxRepresentable("skew images of boxes need a constant RN derivative")
        return delta

    def preimage_boxes(self, lo, hi):
        delta = self._shift()
        pre = self._base_map().preimage_region(RegionSet((Box(self._image_label(), lo[:-1], hi[:-1]),)))
        return [(b.lower + (lo[-1] + delta,), b.upper + (hi[-1] + delta,)) for b in pre.boxes]

    def image_boxes(self, lo, hi):
        delta = self._shift()
        img = self._base_map().image_region(RegionSet((Box(self.label, lo[:-1], hi[:-1]),)))
        return [(b.lower + (lo[-1] - delta,), b.upper + (hi[-1] - delta,)) for b in img.boxes]

    def exact_image_boxes(self, lo, hi):
        return None

    # the skew product preserves mu ⊗ e^t dt, so its own log-derivative is 0
    def log_derivative(self, x, src, tgt) -> float:
        return 0.0

    def constant_log_derivative(self, src, tgt) -> float:
        return 0.0

    def log_derivative_bounds(self, lo, hi, src, tgt):
        return 0.0, 0.0

    def inverted(self, target: str | None) -> "SkewRule":
        return SkewRule(self.tmap, self._image_label(), target, not self.backward)

    def retarget(self, target: str | None) -> "SkewRule":
        return SkewRule(self.tmap, self.label, target, self.backward)

    def to_dict(self) -> dict:
        d = {"kind": "skew", "label": self.label, "backward": self.backward}
        d.update(self.tmap.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict, target):
        return cls(NonsingularMap.from_dict(d), d["label"], target, bool(d.get("backward", False)))


def maharam_extend(t: NonsingularMap) -> MapSpec:
    """The skew product of ``t`` on ``maharam_space(t.mu)``."""
    rules = []
    for lab in t.moved_labels():
        img = t.base.target_label(lab)
        target = extended_label(img) if img != lab else None
        rules.append((extended_label(lab), SkewRule(t, lab, target)))
    if not rules:
        return MapSpec.identity()
    return MapSpec((Step(tuple(rules)),))


# ---------------------------------------------------------------------------
# Preservation checks
# ---------------------------------------------------------------------------


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = QUAD_TOL,
                     *, min_depth: int = 4, max_depth: int = 40) -> tuple[float, float]:
    """Adaptive Simpson quadrature; returns ``(value, error_estimate)``."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise QuadratureFailure("quadrature needs a bounded interval")
    if a == b:
        return 0.0, 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    total, err = 0.0, 0.0
    # explicit stack: (a, b, fa, fm, fb, whole, tol, depth)
    stack = [(a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, whole, t0, depth = stack.pop()
        m = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m), 0.5 * (m + b0)
        flm, frm = f(lm), f(rm)
        left = (m - a0) / 6 * (fa0 + 4 * flm + fm0)
        right = (b0 - m) / 6 * (fm0 + 4 * frm + fb0)
        diff = left + right - whole
        if depth >= min_depth and abs(diff) <= 15 * t0:
            total += left + right + diff / 15
            err += abs(diff) / 15
            continue
        if depth >= max_depth:
            raise QuadratureFailure(f"no convergence on [{a0}, {b0}) at depth {depth}")
        stack.append((m, b0, fm0, frm, fb0, right, 0.5 * t0, depth + 1))
        stack.append((a0, m, fa0, flm, fm0, left, 0.5 * t0, depth + 1))
    return total, err


@dataclass
class PreservationEntry:
    box: Box
    target: float
    preimage: float
    discrepancy: float
    error_bound: float
    method: str

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "target": self.target, "preimage": self.preimage,
                "discrepancy": self.discrepancy, "error_bound": self.error_bound,
                "method": self.method}


@dataclass
class PreservationReport:
    entries: list[PreservationEntry]

    @property
    def max_discrepancy(self) -> float:
        return max((e.discrepancy for e in self.entries), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_discrepancy <= tol

    def to_dict(self) -> dict:
        return {"max_discrepancy": self.max_discrepancy, "entries": [e.to_dict() for e in self.entries]}


def _rn_integral(t: NonsingularMap, box: Box, tol: float) -> tuple[float, float]:
    """``int_box nabla dmu`` by per-axis adaptive Simpson."""
    comp = t.mu.component(box.component)
    if t.log_rn is not None:
        if comp.dimension != 1:
            raise NotImplementedError("custom log-derivatives are integrated in one dimension only")
        p = comp.profiles[0]
        f = lambda x: math.exp(t.log_rn_at(box.component, (x,))) * p.density(x)  # noqa: E731
        v, e = adaptive_simpson(f, box.lower[0], box.upper[0], tol)
        return comp.scale * v, comp.scale * e
    factor = comp.scale * math.exp(t.base.scale_log_rn(t.mu, box.component))
    vals, errs = [], []
    for i, (p, a, b) in enumerate(zip(comp.profiles, box.lower, box.upper)):
        f = lambda x, i=i, p=p: math.exp(t.base.axis_log_rn(t.mu, box.component, i, x)) * p.density(x)  # noqa: E731
        v, e = adaptive_simpson(f, a, b, tol)
        vals.append(v)
        errs.append(e)
    value = factor * math.prod(vals)
    err = factor * sum(e * math.prod(v for j, v in enumerate(vals) if j != i)
                       for i, e in enumerate(errs))
    return value, err


def check_skew_preserves(t: NonsingularMap, test_boxes: Sequence[Box], *,
                         tol: float = QUAD_TOL) -> PreservationReport:
    """Compare ``mu~(T~^-1 B)`` with ``mu~(B)`` for boxes of extended components."""
    skew = maharam_extend(t)
    ext = maharam_space(t.mu)
    entries = []
    for box in test_boxes:
        ext.check_box(box)
        target = ext.box_mass(box)
        lab = base_label(box.component)
        src = t.base.inverse().target_label(lab)
        const = t.constant_log_rn(src)
        if const is not None:
            pre = ext.measure_of(skew.preimage_region(RegionSet((box,))))
            entries.append(PreservationEntry(box, target, pre, abs(pre - target), 0.0, "closed_form"))
            continue
        base = RegionSet((Box(lab, box.lower[:-1], box.upper[:-1]),))
        tfac = math.exp(box.upper[-1]) - math.exp(box.lower[-1])
        pre, err = 0.0, 0.0
        for b in t.base.preimage_region(base).boxes:
            v, e = _rn_integral(t, b, tol)
            pre += v
            err += e
        pre, err = tfac * pre, tfac * err
        if err > tol * max(1.0, abs(target)):
            raise QuadratureFailure(f"error estimate {err:.3g} exceeds tolerance on {box}")
        entries.append(PreservationEntry(box, target, pre, abs(pre - target), err, "adaptive_simpson"))
    return PreservationReport(entries)


# ---------------------------------------------------------------------------
# Exact rational box algebra for certificates
# ---------------------------------------------------------------------------


def _frac_box(b: Box):
    return tuple(Fraction(v) for v in b.lower), tuple(Fraction(v) for v in b.upper)


def _frac_subtract(lo, hi, clo, chi):
    """Pieces of ``[lo, hi)`` outside ``[clo, chi)`` (all rational)."""
    if any(max(a, c) >= min(b, d) for a, b, c, d in zip(lo, hi, clo, chi)):
        return [(lo, hi)]
    pieces = []
    lo, hi = list(lo), list(hi)
    for i in range(len(lo)):
        if lo[i] < clo[i]:
            pieces.append((tuple(lo[:i]) + (lo[i],) + tuple(lo[i + 1:]),
                           tuple(hi[:i]) + (clo[i],) + tuple(hi[i + 1:])))
            lo[i] = clo[i]
        if hi[i] > chi[i]:
            pieces.append((tuple(lo[:i]) + (chi[i],) + tuple(lo[i + 1:]),
                           tuple(hi[:i]) + (hi[i],) + tuple(hi[i + 1:])))
            hi[i] = chi[i]
    return pieces


def rational_boxes_within(boxes, region: RegionSet) -> bool:
    """Exact test that every ``(label, lo, hi)`` rational box lies in ``region``."""
    for label, lo, hi in boxes:
        remaining = [(lo, hi)]
        for b in region.restrict_to(label).boxes:
            clo, chi = _frac_box(b)
            remaining = [p for r in remaining for p in _frac_subtract(r[0], r[1], clo, chi)]
            if not remaining:
                break
        if remaining:
            return False
    return True


def _inflate(b: Box) -> Box:
    lo = tuple(v - CERT_MARGIN * max(1.0, abs(v)) for v in b.lower)
    hi = tuple(v + CERT_MARGIN * max(1.0, abs(v)) for v in b.upper)
    return Box(b.component, lo, hi)


def image_within(map: MapSpec, box: Box, region: RegionSet) -> bool:
    """Certify ``map(box) ⊆ region``: exactly for affine words, else with an outward margin."""
    exact = map.exact_image_boxes(box.component, box.lower, box.upper)
    if exact is not None:
        return rational_boxes_within(exact, region)
    return all(RegionSet((_inflate(b),)).is_subset(region) for b in _raw_image_boxes(map, box))


def _raw_image_boxes(map: MapSpec, box: Box) -> list[Box]:
    boxes = [(box.component, box.lower, box.upper)]
    for st in map.steps:
        nxt = []
        for label, lo, hi in boxes:
            r = st.rule(label)
            if r is None:
                nxt.append((label, lo, hi))
            else:
                nxt.extend((st.target(label), l, h) for l, h in r.image_boxes(lo, hi))
        boxes = nxt
    return [Box(l, lo, hi) for l, lo, hi in boxes if all(a < b for a, b in zip(lo, hi))]


def log_rn_range(t: NonsingularMap, box: Box) -> tuple[float, float, bool]:
    """``(lo, hi, exact)`` enclosing ``log nabla`` on ``box``."""
    c = t.constant_log_rn(box.component)
    if c is not None:
        return c, c, True
    lo, hi = t.base.log_rn_bounds(t.mu, box)
    pad = CERT_MARGIN * max(1.0, abs(lo), abs(hi))
    return lo - pad, hi + pad, False


# ---------------------------------------------------------------------------
# Witnesses
# ---------------------------------------------------------------------------


@dataclass
class EssentialValueWitness:
    s: float
    epsilon: float
    A: RegionSet
    B: RegionSet
    map: NonsingularMap
    word: GroupWord | None = None
    certified: bool = False
    log_rn_bounds: tuple[float, float] = (math.nan, math.nan)

    def __bool__(self):
        return True

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "s": self.s, "epsilon": self.epsilon,
                "A": self.A.to_dict(), "B": self.B.to_dict(), "map": self.map.to_dict(),
                "word": None if self.word is None else self.word.to_list(),
                "certified": self.certified, "log_rn_bounds": list(self.log_rn_bounds)}


@dataclass
class NotFound:
    s: float
    epsilon: float
    cells_tested: int
    words_tested: int
    note: str = ("only dyadic grid cells and short words were searched; "
                 "NotFound is not evidence that s is not an essential value")

    def __bool__(self):
        return False

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "found": False, "s": self.s,
                "epsilon": self.epsilon, "cells_tested": self.cells_tested,
                "words_tested": self.words_tested, "note": self.note}


def certify(t: NonsingularMap, A: RegionSet, box: Box, s: float, epsilon: float):
    """Check the three witness conditions for ``B = box``; returns bounds or None."""
    B = RegionSet((box,))
    if not B.is_subset(A) or not t.mu.measure_of(B) > 0:
        return None
    lo, hi, exact = log_rn_range(t, box)
    if not (s - epsilon < lo and hi < s + epsilon):
        return None
    if not image_within(t.base, box, A):
        return None
    return lo, hi


def verify_witness(w: EssentialValueWitness, grid: int = 33) -> bool:
    """Independent re-check of a witness by sampling ``B`` on a point grid."""
    if not isinstance(w, EssentialValueWitness):
        return False
    mu, A = w.map.mu, w.A
    if not w.B.is_subset(A) or not mu.measure_of(w.B) > 0:
        return False
    for box in w.B.boxes:
        axes = []
        for a, b in zip(box.lower, box.upper):
            pts = [a + (b - a) * k / (grid - 1) for k in range(grid - 1)]
            axes.append(pts + [math.nextafter(b, -math.inf)])
        for x in itertools.product(*axes):
            lab, y = w.map.base.apply_point(box.component, x)
            if not A.contains_point(lab, y):
                # tolerate a boundary point landing on the closure of A by rounding
                if not any(b2.component == lab and all(l2 <= v <= h2 + CERT_MARGIN * max(1, abs(h2))
                                                       for v, l2, h2 in zip(y, b2.lower, b2.upper))
                           for b2 in A.boxes):
                    return False
            v = w.map.log_rn_at(box.component, x)
            if not (w.s - w.epsilon < v < w.s + w.epsilon):
                return False
    return True


def _round_up(q: Fraction) -> float:
    x = float(q)
    return x if Fraction(x) >= q else math.nextafter(x, math.inf)


def _round_down(q: Fraction) -> float:
    x = float(q)
    return x if Fraction(x) <= q else math.nextafter(x, -math.inf)


def cube_witness(s: float, d: int, C: Box, mu: IntensityMeasure,
                 epsilon: float = DEFAULT_EPSILON) -> EssentialValueWitness:
    """Dilation about the centre of the cube ``C`` with ``log nabla ≡ s``.

    ``B`` is the concentric sub-cube of side ``p e^{-|s|/d}`` so the dilation
    by ``e^{s/d}`` maps it back into ``C``.
    """
    comp = mu.check_box(C)
    if C.dimension != d:
        raise NotACube(f"box has dimension {C.dimension}, expected {d}")
    sides = [b - a for a, b in zip(C.lower, C.upper)]
    if any(v != sides[0] for v in sides) or not C.bounded:
        raise NotACube(f"box {C} is not a cube")
    if not all(isinstance(p, Lebesgue) for p in comp.profiles):
        raise NotACube("cube witness needs a constant-density component")
    p = sides[0]
    u0 = tuple(0.5 * (a + b) for a, b in zip(C.lower, C.upper))
    k = s / d
    a = math.exp(k)
    q = p * math.exp(-abs(s) / d)
    if s == 0:
        base = MapSpec.axes(C.component, *(Identity() for _ in range(d)))
        lo, hi = C.lower, C.upper
    else:
        # pin the last axis so the left-to-right float sum of the axis logs is exactly s;
        # s - partial is exact because partial lies within a factor 2 of s
        logs = [k] * d
        partial = 0.0
        for v in logs[:-1]:
            partial += v
        logs[-1] = s - partial
        axes = [Scale(a, ui * (1.0 - a), log_abs_a=lg) for ui, lg in zip(u0, logs)]
        base = MapSpec.axes(C.component, *axes)
        lo = [max(ui - 0.5 * q, cl) for ui, cl in zip(u0, C.lower)]
        hi = [min(ui + 0.5 * q, ch) for ui, ch in zip(u0, C.upper)]
        # clip to the exact rational preimage of C, rounding inward
        for i, ax in enumerate(axes):
            fa, fb = Fraction(ax.a), Fraction(ax.b)
            need_lo = (Fraction(C.lower[i]) - fb) / fa
            need_hi = (Fraction(C.upper[i]) - fb) / fa
            if Fraction(lo[i]) < need_lo:
                lo[i] = _round_up(need_lo)
            if Fraction(hi[i]) > need_hi:
                hi[i] = _round_down(need_hi)
        lo, hi = tuple(lo), tuple(hi)
    t = NonsingularMap(base, mu)
    B = Box(C.component, lo, hi)
    A = RegionSet((C,))
    bounds = certify(t, A, B, s, epsilon)
    w = EssentialValueWitness(s, epsilon, A, RegionSet((B,)), t, None, bounds is not None,
                              bounds or (math.nan, math.nan))
    if not w.certified:
        raise AssertionError(f"cube witness failed to certify for s={s}, d={d}")
    return w


def dyadic_cells(A: RegionSet, depth: int):
    """Cells of the ``2^depth``-per-axis grid of each box of ``A``, in order."""
    n = 1 << depth
    for box in A.boxes:
        axes = []
        for a, b in zip(box.lower, box.upper):
            edges = [a + (b - a) * k / n for k in range(n)] + [b]
            axes.append(list(zip(edges[:-1], edges[1:])))
        for combo in itertools.product(*axes):
            lo = tuple(c[0] for c in combo)
            hi = tuple(c[1] for c in combo)
            if all(x < y for x, y in zip(lo, hi)):
                yield Box(box.component, lo, hi)


def essential_value_search(maps: Sequence[NonsingularMap], A: RegionSet, s: float,
                           epsilon: float = DEFAULT_EPSILON, grid_depth: int = 6,
                           max_word_length: int = 2):
    """First certified witness over grid cells of ``A`` and short reduced words."""
    if not maps:
        raise ValueError("need at least one generator")
    mu = maps[0].mu
    mass = mu.measure_of(A)
    if not (0 < mass < math.inf):
        raise ValueError("A must have finite positive mass")
    words = [(w, NonsingularMap(w.evaluate([m.base for m in maps]), mu))
             for w in reduced_words(len(maps), max_word_length)]
    cells = 0
    for depth in range(grid_depth + 1):
        for box in dyadic_cells(A, depth):
            cells += 1
            for w, t in words:
                try:
                    bounds = certify(t, A, box, s, epsilon)
                except (NotBoxRepresentable, NotImplementedError):
                    bounds = None
                if bounds is not None:
                    return EssentialValueWitness(s, epsilon, A, RegionSet((box,)), t, w, True, bounds)
    return NotFound(s, epsilon, cells, len(words))


def witness_from_dict(d: dict) -> EssentialValueWitness:
    word = None if d.get("word") is None else GroupWord(tuple(tuple(x) for x in d["word"]))
    return EssentialValueWitness(float(d["s"]), float(d["epsilon"]), RegionSet.from_dict(d["A"]),
                                 RegionSet.from_dict(d["B"]), NonsingularMap.from_dict(d["map"]),
                                 word, bool(d["certified"]), tuple(d.get("log_rn_bounds", (math.nan,) * 2)))
