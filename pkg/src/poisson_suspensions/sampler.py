"""Poisson point process configurations on finite-mass windows.

A configuration is the realized part of one Poisson process on an explicitly
tracked ``covered`` region.  Randomness is attached to canonical dyadic cells:
each cell draws a Poisson(mass) count and i.i.d. points from its own stream,
and a window keeps those points that fall inside it.  Restricting, extending
and re-sampling therefore agree bit for bit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Mapping

import numpy as np

from .errors import ComponentClash, NonFiniteWindow, UncoveredRegion
from .intensity import IntensityMeasure, RegionSet, canonical_cells
from .rng import CellStream, SeedSpec, cell_key, poisson_variate

if TYPE_CHECKING:
    from .dynamics import MapSpec

SCHEMA_VERSION = 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _sorted_unique(arr: np.ndarray) -> np.ndarray:
    if len(arr) > 1:
        arr = arr[np.lexsort(arr.T[::-1])]
        dup = np.all(arr[1:] == arr[:-1], axis=1)
        if dup.any():
            raise AssertionError("duplicate points in a simple point process (RNG/addressing bug)")
    return arr


@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite simple point set realized on ``covered``.

    ``points`` maps component labels to ``(n, d)`` arrays sorted
    lexicographically.  ``frame`` is set on suspended configurations: the
    points are the frame-images of the seed-addressed realization.
    """

    mu: IntensityMeasure
    covered: RegionSet
    points: Mapping[str, np.ndarray]
    origin: SeedSpec
    max_cell_mass: float = 1.0
    frame: "MapSpec | None" = None
    component_seeds: tuple[tuple[str, SeedSpec], ...] = ()

    def seed_for(self, label: str) -> SeedSpec:
        for lab, s in self.component_seeds:
            if lab == label:
                return s
        return self.origin

    @property
    def n_points(self) -> int:
        return sum(len(a) for a in self.points.values())

    def point_list(self) -> list[tuple[str, tuple[float, ...]]]:
        out = []
        for label in sorted(self.points):
            out.extend((label, tuple(float(v) for v in row)) for row in self.points[label])
        return out

    def same_as(self, other: "Configuration") -> bool:
        """Bitwise equality of covered region and point sets."""
        if self.covered != other.covered:
            return False
        mine = {k: v for k, v in self.points.items() if len(v)}
        theirs = {k: v for k, v in other.points.items() if len(v)}
        if mine.keys() != theirs.keys():
            return False
        return all(mine[k].shape == theirs[k].shape and
                   np.array_equal(mine[k].view(np.uint64), theirs[k].view(np.uint64)) for k in mine)


def empty_configuration(mu: IntensityMeasure, seed: SeedSpec, max_cell_mass: float = 1.0) -> Configuration:
    if not (max_cell_mass > 0):
        raise ValueError("max_cell_mass must be positive")
    return Configuration(mu, RegionSet.empty(), {}, seed, float(max_cell_mass))


def _realize(mu: IntensityMeasure, region: RegionSet, seed_of: Callable[[str], SeedSpec],
             max_cell_mass: float) -> dict[str, list[tuple[float, ...]]]:
    cells = {}
    for b in region.boxes:
        for c in canonical_cells(mu, b, max_cell_mass):
            cells.setdefault((c.component, c.level, c.index), c)
    out: dict[str, list] = {}
    for (label, level, idx), c in cells.items():
        stream = CellStream(cell_key(seed_of(label), label, level, idx))
        n = poisson_variate(stream, c.mass)
        if n == 0:
            continue
        comp = mu.component(label)
        keep = [b for b in region.boxes if b.component == label and b.overlaps(c.box)]
        inside = any(c.box.within(b) for b in keep)
        lo, hi, d = c.box.lower, c.box.upper, comp.dimension
        bucket = out.setdefault(label, [])
        for _ in range(n):
            x = comp.sample_point([stream.uniform() for _ in range(d)], lo, hi)
            if inside:
                bucket.append(x)
                continue
            for b in keep:
                if b.contains(x):
                    bucket.append(x)
                    break
    return out


def _merge_points(old: Mapping[str, np.ndarray], new: Mapping[str, list], mu: IntensityMeasure):
    merged = dict(old)
    for label, pts in new.items():
        if not pts:
            continue
        d = mu.component(label).dimension
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, d)
        if label in merged and len(merged[label]):
            arr = np.concatenate([merged[label], arr])
        merged[label] = _freeze(_sorted_unique(arr))
    return merged


def _check_finite(mu: IntensityMeasure, region: RegionSet) -> None:
    if math.isinf(mu.measure_of(region)):
        raise NonFiniteWindow("region has infinite mass")
    for b in region.boxes:
        if not b.bounded:
            raise NonFiniteWindow(f"unbounded box {b}")


def extend(config: Configuration, extra: RegionSet, max_cell_mass: float | None = None) -> Configuration:
    """Realize the process on ``extra`` as well, keeping every existing point.

    New points depend only on the seed and the canonical cells meeting
    ``extra \\ covered``, so the order of extensions is irrelevant.
    """
    if max_cell_mass is not None and max_cell_mass != config.max_cell_mass:
        raise ValueError("extension must reuse the configuration's max_cell_mass "
                         f"({config.max_cell_mass}); got {max_cell_mass}")
    new = extra.difference(config.covered)
    if new.is_empty:
        return config
    _check_finite(config.mu, new)
    if config.frame is None:
        fresh = _realize(config.mu, new, config.seed_for, config.max_cell_mass)
    else:
        pre = config.frame.preimage_region(new)
        base = _realize(config.mu, pre, config.seed_for, config.max_cell_mass)
        fresh = {}
        for label, pts in base.items():
            for x in pts:
                lab2, y = config.frame.apply_point(label, x, config.mu)
                if new.contains_point(lab2, y):
                    fresh.setdefault(lab2, []).append(y)
    points = _merge_points(config.points, fresh, config.mu)
    return replace(config, covered=config.covered.union(new), points=points)


def sample(mu: IntensityMeasure, window: RegionSet, seed: SeedSpec, max_cell_mass: float = 1.0) -> Configuration:
    """Sample the Poisson process with intensity ``mu`` on ``window``."""
    return extend(empty_configuration(mu, seed, max_cell_mass), window)


def _count_unchecked(config: Configuration, region: RegionSet) -> int:
    total = 0
    for b in region.boxes:
        arr = config.points.get(b.component)
        if arr is None or not len(arr):
            continue
        first = arr[:, 0]
        i0 = np.searchsorted(first, b.lower[0], side="left")
        i1 = np.searchsorted(first, b.upper[0], side="left")
        if i1 <= i0:
            continue
        if arr.shape[1] == 1:
            total += int(i1 - i0)
        else:
            sub = arr[i0:i1, 1:]
            lo = np.asarray(b.lower[1:])
            hi = np.asarray(b.upper[1:])
            total += int(np.count_nonzero(np.all((sub >= lo) & (sub < hi), axis=1)))
    return total


def count(config: Configuration, region: RegionSet) -> int:
    """Number of realized points in ``region``; the region must be covered."""
    if not region.is_subset(config.covered):
        raise UncoveredRegion(f"{region} is not inside the covered window")
    return _count_unchecked(config, region)


def restrict(config: Configuration, region: RegionSet) -> Configuration:
    if not region.is_subset(config.covered):
        raise UncoveredRegion(f"{region} is not inside the covered window")
    points = {}
    for label, arr in config.points.items():
        boxes = [b for b in region.boxes if b.component == label]
        if not boxes or not len(arr):
            continue
        mask = np.zeros(len(arr), dtype=bool)
        for b in boxes:
            mask |= np.all((arr >= np.asarray(b.lower)) & (arr < np.asarray(b.upper)), axis=1)
        if mask.any():
            points[label] = _freeze(arr[mask].copy())
    return replace(config, covered=region, points=points)


def superpose(a: Configuration, b: Configuration) -> Configuration:
    """Union of two configurations living on disjoint component sets."""
    clash = set(a.mu.labels) & set(b.mu.labels)
    if clash:
        raise ComponentClash(f"component labels collide: {sorted(clash)}")
    if a.frame is not None or b.frame is not None:
        raise ValueError("superpose expects unsuspended configurations")
    if a.max_cell_mass != b.max_cell_mass:
        raise ValueError("superposed configurations must share max_cell_mass")
    seeds = dict(a.component_seeds)
    for label in b.mu.labels:
        seeds[label] = b.seed_for(label)
    points = dict(a.points)
    points.update(b.points)
    covered = RegionSet(a.covered.boxes + b.covered.boxes, _trusted=True)
    return Configuration(a.mu.merged_with(b.mu), covered, points, a.origin, a.max_cell_mass,
                         None, tuple(sorted(seeds.items())))


def relabel(config: Configuration, mapping: Mapping[str, str]) -> Configuration:
    """Rename components (used to build product systems from copies)."""
    from .intensity import Box

    if config.frame is not None:
        raise ValueError("relabel expects an unsuspended configuration")
    ren = lambda s: mapping.get(s, s)  # noqa: E731
    covered = RegionSet((Box(ren(b.component), b.lower, b.upper) for b in config.covered.boxes),
                        _trusted=True)
    seeds = tuple(sorted((ren(lab), s) for lab, s in config.component_seeds))
    seeds = dict(seeds)
    for lab in config.mu.labels:
        seeds.setdefault(ren(lab), config.seed_for(lab))
    return Configuration(config.mu.relabel(dict(mapping)), covered,
                         {ren(k): v for k, v in config.points.items()}, config.origin,
                         config.max_cell_mass, None, tuple(sorted(seeds.items())))


# ---------------------------------------------------------------------------
# Serialization: columnar CSV plus JSON sidecar
# ---------------------------------------------------------------------------


def write_configuration(config: Configuration, csv_path, json_path=None) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
    width = max((config.mu.component(k).dimension for k in config.points), default=1)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component"] + [f"x{i + 1}" for i in range(width)])
        for label, x in config.point_list():
            w.writerow([label] + [repr(v) for v in x] + [""] * (width - len(x)))
    side = {
        "schema_version": SCHEMA_VERSION,
        "intensity": config.mu.to_dict(),
        "covered": config.covered.to_dict(),
        "origin": config.origin.to_dict(),
        "component_seeds": {lab: s.to_dict() for lab, s in config.component_seeds},
        "max_cell_mass": config.max_cell_mass,
        "frame": None if config.frame is None else config.frame.to_dict(),
        "n_points": {k: int(len(v)) for k, v in sorted(config.points.items())},
    }
    json_path.write_text(json.dumps(side, sort_keys=True, indent=2) + "\n")
    return csv_path, json_path


def read_configuration(csv_path, json_path=None) -> Configuration:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
    side = json.loads(json_path.read_text())
    if side.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {side.get('schema_version')!r}")
    mu = IntensityMeasure.from_dict(side["intensity"])
    rows: dict[str, list] = {}
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            label = row[0]
            d = mu.component(label).dimension
            rows.setdefault(label, []).append(tuple(float(v) for v in row[1:1 + d]))
    points = {}
    for label, pts in rows.items():
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, mu.component(label).dimension)
        points[label] = _freeze(_sorted_unique(arr))
    frame = None
    if side.get("frame") is not None:
        from .dynamics import MapSpec

        frame = MapSpec.from_dict(side["frame"])
    seeds = tuple(sorted((lab, SeedSpec.from_dict(s)) for lab, s in side.get("component_seeds", {}).items()))
    return Configuration(mu, RegionSet.from_dict(side["covered"]), points,
                         SeedSpec.from_dict(side["origin"]), float(side["max_cell_mass"]), frame, seeds)
