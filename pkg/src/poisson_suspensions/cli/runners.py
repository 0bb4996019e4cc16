"""One runner per experiment kind.

A runner turns a validated config into TestReports plus CSV tables and JSON
documents.  Replica work goes through ``replica_map`` so results are ordered
by replica index no matter how many workers run.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from ..chaos import chaos1, chaos2_offdiag, cf_idp, check_lower_bounded, levy_of, triplet_of
from ..dynamics import correlation_from_samples, correlation_samples, orbit_values, suspend
from ..errors import ConfigError
from ..intensity import Box, IntensityMeasure, RegionSet
from ..maharam import (
    NonsingularMap,
    check_skew_preserves,
    cube_witness,
    essential_value_search,
    extended_label,
    maharam_space,
    verify_witness,
)
from ..rng import SeedSpec
from ..sampler import count, empty_configuration, sample
from ..stats import (
    TestReport,
    birkhoff_tail_noise_floor,
    bonferroni,
    chisq_poisson,
    empirical_cf,
    independence_test,
    limit_dispersion,
    mean_test,
    observable_variance,
)
from .config import ExperimentConfig

Table = tuple[list[str], list[list]]


@dataclass
class RunResult:
    reports: list[TestReport] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    documents: dict[str, object] = field(default_factory=dict)


@dataclass
class RunContext:
    cfg: ExperimentConfig
    seed: int
    replica_scale: float = 1.0
    threads: int = 1

    def replicas(self, minimum: int = 1) -> int:
        return max(minimum, int(round(self.cfg.replicas * self.replica_scale)))

    def seed_spec(self, i: int = 0) -> SeedSpec:
        return SeedSpec(self.seed, i)


def replica_map(fn, n: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]``, optionally spread over worker processes."""
    if threads <= 1 or n < 2:
        return [fn(i) for i in range(n)]
    chunk = max(1, n // (threads * 16))
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n), chunksize=chunk))


def _union(regions) -> RegionSet:
    out = RegionSet.empty()
    for r in regions:
        out = out.union(r)
    return out


def padded_hull(mu: IntensityMeasure, region: RegionSet, pad: float) -> RegionSet:
    """Per-component bounding box of ``region`` grown by ``pad``, clipped to the support."""
    boxes = []
    for lab in sorted(region.components):
        bs = region.restrict_to(lab).boxes
        comp = mu.component(lab)
        lo = tuple(max(min(b.lower[i] for b in bs) - pad, p.lo) for i, p in enumerate(comp.profiles))
        hi = tuple(min(max(b.upper[i] for b in bs) + pad, p.hi) for i, p in enumerate(comp.profiles))
        boxes.append(Box(lab, lo, hi))
    return RegionSet(boxes)


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def _sample_counts(mu, window, regions, seed, mcm, i):
    cfg = sample(mu, window, SeedSpec(seed, i), mcm)
    return tuple(count(cfg, r) for r in regions)


def run_sample(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    tests = cfg.raw["tests"]
    names: list[str] = []
    regions: list[RegionSet] = []

    def need(key: str, r: RegionSet) -> int:
        if key not in names:
            names.append(key)
            regions.append(r)
        return names.index(key)

    plan = []
    for t in tests:
        kind = t.get("type")
        if kind in ("chisq", "hitting"):
            plan.append((t, [need(t["region"], cfg.region(t["region"]))]))
        elif kind in ("independence", "superposition"):
            a, b = cfg.region(t["a"]), cfg.region(t["b"])
            if kind == "superposition" and not a.intersection(b).is_empty:
                raise ConfigError("superposition needs disjoint regions")
            idx = [need(t["a"], a), need(t["b"], b)]
            if kind == "superposition":
                idx.append(need(f"{t['a']}|{t['b']}", a.union(b)))
            plan.append((t, idx))
        else:
            raise ConfigError(f"unknown sample test {kind!r}")
    R = ctx.replicas(1000)
    window = _union(regions)
    fn = partial(_sample_counts, cfg.mu, window, tuple(regions), ctx.seed, cfg.max_cell_mass)
    counts = np.asarray(replica_map(fn, R, ctx.threads), dtype=np.int64).reshape(R, len(regions))
    k = sum(1 for t, _ in plan if t["type"] == "chisq" or (t["type"] == "independence" and "z" not in t))
    alpha = bonferroni(cfg.significance, k)
    out = RunResult()
    rows = []
    for t, idx in plan:
        kind = t["type"]
        label = t.get("name", f"{kind}:{'/'.join(names[i] for i in idx[:2])}")
        col = counts[:, idx[0]]
        if kind == "chisq":
            mean = cfg.mu.measure_of(regions[idx[0]])
            rep = chisq_poisson(col, mean, alpha, seed=ctx.seed, name=label)
        elif kind == "hitting":
            mass = cfg.mu.measure_of(regions[idx[0]])
            p = -math.expm1(-mass)
            phat = float(np.mean(col > 0))
            bound = float(t.get("sigmas", 4.0)) * math.sqrt(p * (1 - p) / R)
            rep = TestReport(label, phat, None, bound, abs(phat - p) <= bound, R, ctx.seed,
                             {"mass": mass, "expected": p})
        elif kind == "independence":
            z = t.get("z")
            rep = independence_test(counts[:, idx[:2]], alpha, z=None if z is None else float(z),
                                    seed=ctx.seed, name=label)
        else:
            lhs = counts[:, idx[2]]
            rhs = counts[:, idx[0]] + counts[:, idx[1]]
            bad = int(np.count_nonzero(lhs != rhs))
            rep = TestReport(label, float(bad), None, 0.0, bad == 0, R, ctx.seed, {"violations": bad})
        out.reports.append(rep)
        rows.append([label, rep.statistic, rep.p_value, rep.bound, rep.passed])
    hist = []
    for j, nm in enumerate(names):
        vals, freq = np.unique(counts[:, j], return_counts=True)
        hist.extend([nm, int(v), int(f)] for v, f in zip(vals, freq))
    out.tables["count_histogram.csv"] = (["region", "count", "frequency"], hist)
    return out


# ---------------------------------------------------------------------------
# equivariance
# ---------------------------------------------------------------------------


def _equivariance_replica(mu, pairs, seed, mcm, i):
    out = []
    for T, A, pre, W in pairs:
        cfg = sample(mu, W, SeedSpec(seed, i), mcm)
        moved = suspend(T, cfg)
        out.append((count(moved, A), count(cfg, pre)))
    return out


def run_equivariance(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    pairs, labels = [], []
    for p in cfg.raw["pairs"]:
        T, A = cfg.map(p["map"]), cfg.region(p["region"])
        pre = T.preimage_region(A)
        W = padded_hull(cfg.mu, A.union(pre), float(p.get("pad", 0.5)))
        pairs.append((T, A, pre, W))
        labels.append(p.get("name", f"{p['map']}:{p['region']}"))
    R = ctx.replicas(1)
    fn = partial(_equivariance_replica, cfg.mu, tuple(pairs), ctx.seed, cfg.max_cell_mass)
    res = replica_map(fn, R, ctx.threads)
    out = RunResult()
    rows = []
    for j, label in enumerate(labels):
        bad = 0
        for i in range(R):
            lhs, rhs = res[i][j]
            bad += lhs != rhs
            rows.append([label, i, lhs, rhs, int(lhs == rhs)])
        out.reports.append(TestReport(f"equivariance:{label}", float(bad), None, 0.0, bad == 0, R,
                                      ctx.seed, {"violations": int(bad)}))
    out.tables["equivariance.csv"] = (["pair", "replica", "count_suspended", "count_preimage", "equal"], rows)
    return out


# ---------------------------------------------------------------------------
# ergodic
# ---------------------------------------------------------------------------


def _orbit_trace(mu, T, F, seed, mcm, n, budget, i):
    cfg0 = empty_configuration(mu, SeedSpec(seed, i), mcm)
    values, _ = orbit_values(T, cfg0, F, n, budget=budget)
    return values


def run_ergodic(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    e = cfg.raw["ergodic"]
    T, F = cfg.map(e["map"]), cfg.observable(e["observable"])
    n = int(e["steps"])
    tf = float(e.get("tail_fraction", 0.5))
    expect = e.get("expect", "null")
    factor = float(e.get("factor", 3.0 if expect == "null" else 0.5))
    R = ctx.replicas(30)
    fn = partial(_orbit_trace, cfg.mu, T, F, ctx.seed, cfg.max_cell_mass, n, cfg.window_budget)
    values = replica_map(fn, R, ctx.threads)
    trajs = [np.cumsum(v) / np.arange(1, n + 1) for v in values]
    across, within = limit_dispersion(trajs, tf)
    var_f = observable_variance(F, cfg.mu)
    out = RunResult()
    if expect == "null":
        floor = birkhoff_tail_noise_floor(n, tf, var_f)
        bound = factor * floor
        out.reports.append(TestReport("ergodic:null_dispersion", across, None, bound, across <= bound, R,
                                      ctx.seed, {"noise_floor": floor, "within_tail_variance": within,
                                                 "step_variance": var_f, "steps": n}))
    elif expect == "invariant":
        bound = factor * var_f
        out.reports.append(TestReport("ergodic:invariant_dispersion", across, None, bound, across >= bound,
                                      R, ctx.seed, {"target_variance": var_f, "within_tail_variance": within,
                                                    "steps": n}))
    else:
        raise ConfigError(f"unknown ergodic expectation {expect!r}")
    tail = max(1, int(round(tf * n)))
    out.tables["tail_means.csv"] = (["replica", "tail_mean"],
                                    [[i, float(t[-tail:].mean())] for i, t in enumerate(trajs)])
    out.tables["trace_replica0.csv"] = (["step", "value", "running_average"],
                                        [[j, float(values[0][j]), float(trajs[0][j])] for j in range(n)])
    return out


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

_CHUNK = 500


def _corr_chunk(mu, T, F, G, L, seed, mcm, budget, R, k):
    start = k * _CHUNK
    return correlation_samples(T, F, G, L, min(_CHUNK, R - start), mu, SeedSpec(seed, 0),
                               max_cell_mass=mcm, budget=budget, first_replica=start)


def run_mixing(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    R = ctx.replicas(100)
    out = RunResult()
    for case in cfg.raw["cases"]:
        label = case["name"]
        T, F, G = cfg.map(case["map"]), cfg.observable(case["F"]), cfg.observable(case["G"])
        L = int(case["max_lag"])
        fn = partial(_corr_chunk, cfg.mu, T, F, G, L, ctx.seed, cfg.max_cell_mass, cfg.window_budget, R)
        parts = replica_map(fn, -(-R // _CHUNK), ctx.threads)
        fv = np.concatenate([p[0] for p in parts])
        gv = np.concatenate([p[1] for p in parts])
        est = correlation_from_samples(fv, gv)
        if "cesaro_factor" in case:
            factor = float(case["cesaro_factor"])
            stat = float(est.cesaro[-1])
            bound = factor * est.mean_se
            out.reports.append(TestReport(f"mixing:{label}:cesaro", stat, None, bound, stat <= bound, R,
                                          ctx.seed, {"max_lag": L, "mean_se": est.mean_se}))
        for ex in case.get("expected", []):
            lag = int(ex["lag"])
            sig = float(ex.get("sigmas", 4.0))
            c, se = float(est.cov[lag]), float(est.se[lag])
            bound = sig * se
            out.reports.append(TestReport(f"mixing:{label}:lag{lag}", c, None, bound,
                                          abs(c - float(ex["value"])) <= bound, R, ctx.seed,
                                          {"expected": float(ex["value"]), "se": se}))
        rows = [[int(n), float(est.cov[n]), float(est.se[n]), float(est.cesaro[n - 1]) if n else ""]
                for n in est.lags]
        out.tables[f"correlation_{label}.csv"] = (["lag", "cov", "se", "cesaro_abs_mean"], rows)
    return out


# ---------------------------------------------------------------------------
# chaos and cf
# ---------------------------------------------------------------------------


def _chaos_replica(mu, window, fns, seed, mcm, i):
    cfg = sample(mu, window, SeedSpec(seed, i), mcm)
    return tuple((chaos1(f, cfg), chaos2_offdiag(f, cfg)) for f in fns)


def _function_samples(ctx: RunContext, names: list[str], R: int) -> dict[str, np.ndarray]:
    cfg = ctx.cfg
    fns = [cfg.function(n) for n in names]
    window = _union(f.support() for f in fns)
    fn = partial(_chaos_replica, cfg.mu, window, tuple(fns), ctx.seed, cfg.max_cell_mass)
    res = np.asarray(replica_map(fn, R, ctx.threads), dtype=float).reshape(R, len(fns), 2)
    return {n: res[:, j, :] for j, n in enumerate(names)}


def run_chaos(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    names = sorted({n for p in cfg.raw["pairs"] for n in (p["f"], p["g"])})
    R = ctx.replicas(2)
    vals = _function_samples(ctx, names, R)
    out = RunResult()
    rows = []
    for p in cfg.raw["pairs"]:
        f, g = cfg.function(p["f"]), cfg.function(p["g"])
        If, Ig, C2f = vals[p["f"]][:, 0], vals[p["g"]][:, 0], vals[p["f"]][:, 1]
        inner = f.inner(g, cfg.mu)
        tag = f"{p['f']},{p['g']}"
        reps = [mean_test(If * Ig, inner, seed=ctx.seed, name=f"chaos:isometry:{tag}"),
                mean_test(If, 0.0, seed=ctx.seed, name=f"chaos:mean_zero:{p['f']}"),
                mean_test(Ig * C2f, 0.0, seed=ctx.seed, name=f"chaos:orthogonality:{tag}"),
                mean_test(C2f, 0.0, seed=ctx.seed, name=f"chaos:second_mean_zero:{p['f']}")]
        for r in reps:
            out.reports.append(r)
            rows.append([r.name, r.statistic, r.details["target"], r.details["se"], r.passed])
        lb = check_lower_bounded(levy_of(f, cfg.mu))
        out.documents.setdefault("lower_bounded.json", {})[p["f"]] = {
            "bounded_below_consistent": lb.bounded_below_consistent,
            "positive_first_moment": lb.positive_first_moment}
    out.tables["chaos_moments.csv"] = (["test", "sample_mean", "target", "se", "passed"], rows)
    return out


def run_cf(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    c = cfg.raw["cf"]
    names = list(c["functions"])
    R = ctx.replicas(2)
    n_t = int(c.get("points", 101))
    grid = np.linspace(float(c.get("t_min", -5.0)), float(c.get("t_max", 5.0)), n_t)
    vals = _function_samples(ctx, names, R)
    bound = float(c.get("c", 5.0)) / math.sqrt(R) + float(c.get("floor", 1e-3))
    out = RunResult()
    for n in names:
        trip = triplet_of(cfg.function(n), cfg.mu)
        emp = empirical_cf(vals[n][:, 0], grid)
        ana = cf_idp(trip, grid)
        err = np.abs(emp - ana)
        stat = float(err.max())
        out.reports.append(TestReport(f"cf:{n}", stat, None, bound, stat <= bound, R, ctx.seed,
                                      {"b": trip.b, "atoms": [list(a) for a in trip.levy.atoms]}))
        rows = [[float(t), float(e.real), float(e.imag), float(a.real), float(a.imag), float(d)]
                for t, e, a, d in zip(grid, emp, ana, err)]
        out.tables[f"cf_{n}.csv"] = (["t", "re_empirical", "im_empirical", "re_analytic",
                                      "im_analytic", "modulus_error"], rows)
    return out


# ---------------------------------------------------------------------------
# maharam and witness
# ---------------------------------------------------------------------------


def _auto_boxes(mu: IntensityMeasure, label: str, n: int, rng: np.random.Generator) -> list[Box]:
    comp = maharam_space(mu).component(extended_label(label))
    boxes = []
    for _ in range(n):
        lo, hi = [], []
        for p in comp.profiles:
            a0 = max(p.lo, -3.0)
            b0 = min(p.hi, 3.0)
            w = rng.uniform(0.1, min(2.0, b0 - a0))
            a = rng.uniform(a0, b0 - w)
            lo.append(float(a))
            hi.append(float(a + w))
        boxes.append(Box(comp.label, tuple(lo), tuple(hi)))
    return boxes


def run_maharam(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    rng = np.random.default_rng(ctx.seed)
    out = RunResult()
    rows = []
    for chk in cfg.raw["checks"]:
        T = NonsingularMap(cfg.map(chk["map"]), cfg.mu)
        label = chk.get("component") or T.moved_labels()[0]
        if "boxes" in chk:
            ext = extended_label(label)
            boxes = [Box(ext, tuple(map(float, b["lower"])), tuple(map(float, b["upper"])))
                     for b in chk["boxes"]]
        else:
            boxes = _auto_boxes(cfg.mu, label, int(chk.get("n_boxes", 10)), rng)
        tol = float(chk.get("tol", 1e-12))
        rep = check_skew_preserves(T, boxes)
        name = f"maharam:{chk['map']}"
        out.reports.append(TestReport(name, rep.max_discrepancy, None, tol, rep.passed(tol), len(boxes),
                                      ctx.seed, {"methods": sorted({e.method for e in rep.entries})}))
        for e in rep.entries:
            rows.append([chk["map"], repr(list(e.box.lower)), repr(list(e.box.upper)), e.target,
                         e.preimage, e.discrepancy, e.error_bound, e.method])
    out.tables["preservation.csv"] = (["map", "lower", "upper", "target", "preimage", "discrepancy",
                                       "error_bound", "method"], rows)
    return out


def _ulps(a: float, b: float) -> float:
    return abs(a - b) / math.ulp(max(abs(a), abs(b), 1e-300))


def run_witness(ctx: RunContext) -> RunResult:
    cfg = ctx.cfg
    out = RunResult()
    docs = []
    for cube in cfg.raw.get("cubes", []):
        lab = cube["component"]
        lower = tuple(float(v) for v in cube["lower"])
        side = float(cube["side"])
        C = Box(lab, lower, tuple(v + side for v in lower))
        d = len(lower)
        mass_tol = float(cube.get("mass_rel_tol", 1e-14))
        for s in cube["s"]:
            s = float(s)
            w = cube_witness(s, d, C, cfg.mu)
            mC, m0 = cfg.mu.measure_of(RegionSet((C,))), cfg.mu.measure_of(w.B)
            rel = abs(m0 - math.exp(-abs(s)) * mC) / mC
            c = w.map.constant_log_rn(lab)
            ok = (rel <= mass_tol and w.certified and c == s and verify_witness(w))
            out.reports.append(TestReport(f"witness:cube:d{d}:s{s!r}", rel, None, mass_tol, ok, 1, ctx.seed,
                                          {"certified": w.certified, "log_rn": c, "verified": verify_witness(w)}))
            docs.append(w.to_dict())
    for srch in cfg.raw.get("searches", []):
        maps = [NonsingularMap(cfg.map(m), cfg.mu) for m in srch["maps"]]
        A = cfg.region(srch["A"])
        s = float(srch["s"])
        res = essential_value_search(maps, A, s, float(srch.get("epsilon", 1e-6)),
                                     int(srch.get("grid_depth", 6)), int(srch.get("max_word_length", 2)))
        expect = srch.get("expect", "found")
        found = bool(res)
        verified = verify_witness(res) if found else None
        ok = (found and verified) if expect == "found" else not found
        name = srch.get("name", f"witness:search:{'+'.join(srch['maps'])}")
        out.reports.append(TestReport(name, 1.0 if found else 0.0, None, None, ok, 1, ctx.seed,
                                      {"expect": expect, "found": found, "verified": verified}))
        d = res.to_dict()
        d["search"] = name
        docs.append(d)
    out.documents["witnesses.json"] = docs
    return out


RUNNERS = {
    "sample": run_sample,
    "equivariance": run_equivariance,
    "ergodic": run_ergodic,
    "mixing": run_mixing,
    "chaos": run_chaos,
    "cf": run_cf,
    "maharam": run_maharam,
    "witness": run_witness,
}
