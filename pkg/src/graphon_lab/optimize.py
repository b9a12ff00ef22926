"""Constrained entropy maximization: sampling, SQP refinement, family solves."""

from __future__ import annotations

import functools
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import root

from .core import (ConstraintPoint, MultipodalGraphon, PhaseLabel, canonicalize, classify,
                   drop_degenerate, validate)
from .densities import densities, s0_prime
from .families import (PARAM_NAMES, ParamRange, AboveERCurve, build_family,
                       complete_multipartite, euler_lagrange_residual, family_model, solve_A,
                       spec_from_theta)
from .sqp import generic_model, maximize, project, theta_from_graphon

THREADS_ENV = "GRAPHON_LAB_THREADS"
# block values this close to 0 or 1 are reported as exactly 0 or 1
OUTPUT_SNAP = 1e-7


class Infeasible(ValueError):
    """The constraint point lies outside the realizable region."""


class NoCandidates(RuntimeError):
    """The sampling stage produced nothing inside the acceptance window."""


class FamilyInfeasible(ValueError):
    """No member of the requested family meets the constraints."""


@dataclass(frozen=True)
class SolveConfig:
    max_podes: int = 6
    window: float = 1e-4
    samples: int = 20000
    refine_tol: float = 1e-8
    seed: int = 0
    candidates: int = 32
    family_starts: int = 32
    max_iter: int = 300
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not 1 <= self.max_podes <= 16:
            raise ValueError("max_podes must lie in [1, 16]")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")
        if self.samples < 1 or self.candidates < 1:
            raise ValueError("samples and candidates must be positive")

    def describe(self) -> str:
        d = asdict(self)
        d.pop("threads")
        return ";".join(f"{k}={v}" for k, v in d.items())


def thread_count(cfg: Optional[SolveConfig] = None) -> int:
    if cfg is not None and cfg.threads:
        return max(1, int(cfg.threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map(fn, items, cfg):
    """Order-preserving map; results never depend on the thread count."""
    items = list(items)
    threads = thread_count(cfg)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class OptimizationResult:
    graphon: MultipodalGraphon
    entropy: float
    alpha: float
    beta: float
    kkt_residual: float
    el_residual: float
    constraint_violation: float
    label: PhaseLabel
    status: str
    iterations: int = 0
    params: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "Converged"

    @property
    def interior(self) -> bool:
        P = self.graphon.probs
        return bool(np.all((P > 0) & (P < 1)))

    def to_dict(self) -> dict:
        eps, tau, _ = densities(self.graphon)
        out = {
            "label": str(self.label),
            "ambiguous_with": self.label.ambiguous_name,
            "status": self.status,
            "entropy": self.entropy,
            "alpha": self.alpha,
            "beta": self.beta,
            "edge": eps,
            "triangle": tau,
            "residuals": {
                "kkt": self.kkt_residual,
                "euler_lagrange": self.el_residual,
                "constraint": self.constraint_violation,
            },
            "iterations": self.iterations,
            "graphon": self.graphon.to_dict(),
        }
        if self.params is not None:
            out["params"] = self.params
        return out

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


# ---------------------------------------------------------------- result assembly

def _snap_output(P: np.ndarray) -> np.ndarray:
    P = P.copy()
    P[P < OUTPUT_SNAP] = 0.0
    P[P > 1 - OUTPUT_SNAP] = 1.0
    return P


def _graphon_from(P, c, snap=True) -> MultipodalGraphon:
    P = np.asarray(P, dtype=float)
    P = 0.5 * (P + P.T)
    if snap:
        P = _snap_output(P)
    c = np.clip(np.asarray(c, dtype=float), 0.0, None)
    keep = c > 1e-12
    c, P = c[keep], P[np.ix_(keep, keep)]
    return MultipodalGraphon(c / c.sum(), np.clip(P, 0.0, 1.0))


def _status(engine_status: str) -> str:
    if engine_status == "Converged":
        return "Converged"
    if engine_status == "Infeasible":
        return "Infeasible"
    return "MaxIterations"


def _assemble(g: MultipodalGraphon, pt: ConstraintPoint, res, canonical=True,
              params=None, tol: float = 1e-8) -> OptimizationResult:
    if canonical:
        g = canonicalize(g)
    validate(g)
    eps, tau, S = densities(g)
    alpha = float(res.multipliers.get("eps", math.nan))
    beta = float(res.multipliers.get("tau", 0.0))
    el = euler_lagrange_residual(g, alpha, beta) if np.isfinite(alpha) else math.inf
    violation = max(abs(eps - pt.edge), abs(tau - pt.triangle))
    status = _status(res.status)
    # targets such as tau = 0 are met only once blocks are snapped to 0/1
    if status == "MaxIterations" and res.kkt_residual <= 10 * tol and violation <= 10 * tol:
        status = "Converged"
    return OptimizationResult(
        graphon=g, entropy=S, alpha=alpha, beta=beta,
        kkt_residual=float(res.kkt_residual), el_residual=float(el),
        constraint_violation=violation,
        label=classify(g, context=pt), status=status,
        iterations=int(res.iterations), params=params,
        diagnostics={"engine_status": res.status})


def _rank_key(r: OptimizationResult):
    # deterministic tie-break: entropy, then fewer podes, then the block matrix
    return (-round(r.entropy, 11), r.graphon.n, tuple(np.round(r.graphon.probs.ravel(), 9)),
            tuple(np.round(r.graphon.sizes, 9)))


def _best(results: Sequence[OptimizationResult], tol: float) -> Optional[OptimizationResult]:
    ok = [r for r in results if r is not None and r.converged
          and r.constraint_violation <= 10 * max(tol, 1e-9)]
    if not ok:
        return None
    return min(ok, key=_rank_key)


# ---------------------------------------------------------------- sampling stage

def _tau_batch(P, c):
    M = P * c[:, None, :]
    return np.einsum("bij,bjk,bki->b", M, M, M)


def _fix_eps(P, c, eps0):
    """Affine move of every block value toward 1 (or scaling toward 0) that hits eps0."""
    eps = np.einsum("bi,bij,bj->b", c, P, c)
    up = eps < eps0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(up, (eps0 - eps) / (1 - eps), 0.0)
        scale = np.where(up, 1.0, eps0 / np.where(eps > 0, eps, 1.0))
    return np.where(up[:, None, None], P + t_up[:, None, None] * (1 - P), P * scale[:, None, None])


_LAMBDAS = np.concatenate([np.linspace(0.0, 1.0, 9), np.geomspace(1.0, 64.0, 25)[1:]])


def _repair(P, c, eps0, tau0, steps=24):
    """Cheap projection of a batch of graphons onto (eps0, tau0).

    Block values are first rescaled to hit eps0.  Then the deviation from the
    constant graphon eps0 is scaled by lambda (lambda < 1 interpolates toward
    the constant graphon, lambda > 1 sharpens), clipping to [0, 1] and
    re-fixing eps0; lambda is found by bisection on tau.
    """
    base = _fix_eps(P, c, eps0)
    dev = base - eps0

    def at(lam):
        Q = np.clip(eps0 + lam[:, None, None] * dev, 0.0, 1.0)
        return _fix_eps(Q, c, eps0)

    nb = len(P)
    r = np.stack([_tau_batch(at(np.full(nb, lam)), c) for lam in _LAMBDAS], axis=1) - tau0
    sgn = np.sign(r[:, :-1]) * np.sign(r[:, 1:]) <= 0
    one = int(np.argmin(np.abs(_LAMBDAS - 1.0)))
    idx = np.arange(len(_LAMBDAS) - 1)[None, :]
    dist = np.where(sgn, np.abs(idx - one), 10 ** 6)
    k = np.argmin(dist, axis=1)
    rows = np.arange(nb)
    has = sgn[rows, k]
    lo, hi = _LAMBDAS[k], _LAMBDAS[k + 1]
    rlo = r[rows, k]
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        rm = _tau_batch(at(mid), c) - tau0
        same = np.sign(rm) == np.sign(rlo)
        lo = np.where(same, mid, lo)
        rlo = np.where(same, rm, rlo)
        hi = np.where(same, hi, mid)
    lam = np.where(has, 0.5 * (lo + hi), 1.0)
    return at(lam)


def sample_stage(pt: ConstraintPoint, cfg: SolveConfig) -> list:
    """Random graphons repaired onto the constraints; best few by entropy."""
    rng = np.random.default_rng(cfg.seed)
    per_n = [cfg.samples // cfg.max_podes + (1 if k < cfg.samples % cfg.max_podes else 0)
             for k in range(cfg.max_podes)]
    pools = []
    for n, count in zip(range(1, cfg.max_podes + 1), per_n):
        if count == 0:
            continue
        c = rng.dirichlet(np.ones(n), size=count)
        U = rng.random((count, n, n))
        P = np.triu(U) + np.swapaxes(np.triu(U, 1), 1, 2)
        P = _repair(P, c, pt.edge, pt.triangle)
        eps = np.einsum("bi,bij,bj->b", c, P, c)
        tau = _tau_batch(P, c)
        with np.errstate(divide="ignore", invalid="ignore"):
            S0 = np.nan_to_num(-P * np.log(P) - (1 - P) * np.log1p(-P))
        S = np.einsum("bi,bij,bj->b", c, S0, c)
        ok = (np.abs(eps - pt.edge) <= cfg.window) & (np.abs(tau - pt.triangle) <= cfg.window) \
            & np.all(c > 0, axis=1)
        for b in np.nonzero(ok)[0]:
            pools.append((float(S[b]), n, int(b), c[b], P[b]))
    if not pools:
        raise NoCandidates(f"no sample within window {cfg.window} of {tuple(pt)}")
    pools.sort(key=lambda item: (-item[0], item[1], item[2]))
    quota = max(1, cfg.candidates // cfg.max_podes)
    chosen, taken = [], {}
    for item in pools:
        if taken.get(item[1], 0) < quota:
            chosen.append(item)
            taken[item[1]] = taken.get(item[1], 0) + 1
    rest = [item for item in pools if item not in chosen] if len(chosen) < cfg.candidates else []
    chosen = (chosen + rest[:cfg.candidates - len(chosen)])[:cfg.candidates]
    chosen.sort(key=lambda item: (-item[0], item[1], item[2]))
    return [MultipodalGraphon(c / c.sum(), P) for _, _, _, c, P in chosen]


# ---------------------------------------------------------------- refinement

def _refine_raw(candidate: MultipodalGraphon, pt: ConstraintPoint, cfg: SolveConfig):
    model = generic_model(candidate.n)
    theta0 = theta_from_graphon(np.asarray(candidate.probs), np.asarray(candidate.sizes))
    res = maximize(model, theta0, "S", {"eps": pt.edge, "tau": pt.triangle},
                   tol=cfg.refine_tol, max_iter=cfg.max_iter)
    P, c = model.unpack(res.theta)
    return res, P, c


def _polish(r: OptimizationResult, pt: ConstraintPoint) -> OptimizationResult:
    """Newton on the unweighted block conditions and both constraints, sizes held fixed.

    The SQP stopping test weights block (i, j) by c_i c_j, so blocks of a tiny
    pode can stay far from S0'(p) = alpha + 3 beta Q after convergence.
    """
    g = r.graphon
    if not (r.converged and r.interior and np.isfinite(r.alpha)):
        return r
    n, c = g.n, g.sizes
    iu = np.triu_indices(n)

    def full(x):
        P = np.zeros((n, n))
        P[iu] = x
        return P + np.triu(P, 1).T

    def eqs(z):
        P = full(z[:-2])
        if np.any(P <= 0) or np.any(P >= 1):
            return np.full(len(z), 1e3)
        Q = P @ (c[:, None] * P)
        M = P * c[None, :]
        el = s0_prime(P[iu]) - z[-2] - 3 * z[-1] * Q[iu]
        return np.r_[el, c @ P @ c - pt.edge, np.trace(M @ M @ M) - pt.triangle]

    z0 = np.r_[g.probs[iu], r.alpha, r.beta]
    sol = root(eqs, z0, method="hybr", options={"xtol": 1e-15})
    if not np.all(np.isfinite(sol.x)) or np.max(np.abs(eqs(sol.x))) >= r.el_residual:
        return r
    h = MultipodalGraphon(c, full(sol.x[:-2]))
    eps, tau, S = densities(h)
    violation = max(abs(eps - pt.edge), abs(tau - pt.triangle))
    if violation > max(r.constraint_violation, 1e-12) or S < r.entropy - 1e-10:
        return r
    alpha, beta = float(sol.x[-2]), float(sol.x[-1])
    return replace(r, graphon=h, entropy=S, alpha=alpha, beta=beta,
                   el_residual=euler_lagrange_residual(h, alpha, beta),
                   constraint_violation=violation, label=classify(h, context=pt))


def refine(candidate: MultipodalGraphon, pt: ConstraintPoint,
           cfg: SolveConfig = SolveConfig()) -> OptimizationResult:
    """Local SQP entropy maximization from ``candidate``; merges redundant podes and re-refines."""
    validate(candidate, max_podes=max(cfg.max_podes, candidate.n))
    res, P, c = _refine_raw(candidate, pt, cfg)
    if res.status == "Infeasible":
        g = drop_degenerate(_graphon_from(P, c, snap=False))
        out = _assemble(g, pt, res, tol=cfg.refine_tol)
        out.status = "Infeasible"
        return out
    out = _assemble(_graphon_from(P, c), pt, res, tol=cfg.refine_tol)
    # a merge can leave a slightly shifted point; re-refine the reduced graphon
    if out.graphon.n < candidate.n and out.graphon.n >= 1:
        res2, P2, c2 = _refine_raw(out.graphon, pt, cfg)
        if res2.status != "Infeasible":
            out2 = _assemble(_graphon_from(P2, c2), pt, res2, tol=cfg.refine_tol)
            if out2.converged and out2.entropy >= out.entropy - 1e-10:
                return _polish(out2, pt)
    return _polish(out, pt)


# ---------------------------------------------------------------- warm starts

def _warm_starts(pt: ConstraintPoint, cfg: SolveConfig) -> list:
    eps, tau = pt
    starts = [MultipodalGraphon.constant(eps)]
    if tau < eps ** 3:
        for n in range(2, cfg.max_podes + 1):
            try:
                starts.append(build_family(solve_A(n, pt)))
            except (ParamRange, AboveERCurve):
                pass
    # complete multipartite graphons of nearby edge density
    for k in range(2, cfg.max_podes + 1):
        if 1 - 1 / k >= eps - 1e-12:
            x = _last_part(k, eps)
            if x is not None:
                starts.append(complete_multipartite([(1 - x) / (k - 1)] * (k - 1) + [x]))
    # bipodal and family-structured seeds
    for fam, m in _SEED_FAMILIES:
        if fam == "A" or m + {"B": 1, "C": 2, "F": 0}[fam] > cfg.max_podes:
            continue
        for theta in _family_seed_thetas(fam, m, pt, 2, cfg.seed):
            P, c = family_model(fam, m).unpack(theta)
            g = _graphon_from(P, c, snap=False)
            starts.append(g)
    return starts


_SEED_FAMILIES = (("B", 1), ("B", 2), ("C", 2))


def _last_part(k: int, eps: float) -> Optional[float]:
    """Size x of the smaller part in the complete k-partite graphon with k-1 equal parts."""
    # eps = 1 - (k-1) s^2 - x^2 with s = (1-x)/(k-1)
    a = 1 + 1 / (k - 1)
    b = -2 / (k - 1)
    cc = 1 / (k - 1) - (1 - eps)
    disc = b * b - 4 * a * cc
    if disc < -1e-12:
        return None
    disc = max(disc, 0.0)
    roots = [(-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)]
    ok = [x for x in roots if 1e-9 < x <= 1 / k + 1e-12]
    return min(ok) if ok else None


def solve(pt: ConstraintPoint, cfg: SolveConfig = SolveConfig()) -> OptimizationResult:
    """Global search: sampled candidates plus structured warm starts, each refined by SQP."""
    from .diagram import is_feasible
    if not is_feasible(pt):
        raise Infeasible(f"{tuple(pt)} is outside the realizable region")
    try:
        cands = sample_stage(pt, cfg)
    except NoCandidates:
        cands = []
    starts = cands + _warm_starts(pt, cfg)
    results = _map(lambda g: refine(g, pt, cfg), starts, cfg)
    best = _best(results, cfg.refine_tol)
    if best is None:
        fallback = [r for r in results if r.status != "Infeasible"]
        if not fallback:
            raise Infeasible(f"no start could be brought onto {tuple(pt)}")
        return min(fallback, key=lambda r: (r.constraint_violation > 1e-6, _rank_key(r)))
    return best


# ---------------------------------------------------------------- family solves

def _family_rng(family, m, pt, seed, salt=0):
    key = [seed, salt, m, ord(family), int(round(pt.edge * 1e12)), int(round(pt.triangle * 1e12))]
    return np.random.default_rng(key)


def _corner_starts(model) -> list:
    """Probability parameters at 0/1 corners, size parameters on a small grid."""
    free = model.lower < model.upper
    is_size = np.array([name == "c" for name in model.names])
    pidx = [i for i in range(model.dim) if free[i] and not is_size[i]]
    cidx = [i for i in range(model.dim) if free[i] and is_size[i]]
    out = []
    for bits in itertools.product((0.02, 0.98), repeat=len(pidx)):
        for cv in ((0.35, 0.75) if cidx else (None,)):
            th = 0.5 * (model.lower + model.upper)
            th[pidx] = bits
            if cv is not None:
                th[cidx] = cv
            out.append(th)
    return out


@functools.lru_cache(maxsize=256)
def family_extremes(family: str, m: int, eps: float, starts: int = 4) -> tuple:
    """Members of the family at edge density eps that minimise / maximise tau.

    Minimisation starts from the 0/1 corners of the probability parameters
    plus ``starts`` random points; maximisation from the random points.  Returns ``(minimisers, maximisers)``, each a tuple of
    parameter vectors sorted by tau.
    """
    model = family_model(family, m)
    rng = np.random.default_rng([m, ord(family), int(round(eps * 1e12))])
    rand = [model.lower + (model.upper - model.lower) * rng.random(model.dim) for _ in range(starts)]
    out = []
    for sign in (-1.0, 1.0):
        found = []
        # corners matter for the minimum only; the maximum is a clique-like member
        for theta in (_corner_starts(model) + rand if sign < 0 else rand):
            r = maximize(model, theta, "tau", {"eps": eps}, sign=sign, tol=1e-10)
            if r.constraint_violation < 1e-11:
                found.append((-sign * r.objective, tuple(r.theta)))
        found.sort()
        uniq = []
        for val, th in found:
            if not any(np.max(np.abs(np.array(th) - np.array(u))) < 1e-6 for u in uniq):
                uniq.append(th)
        out.append(tuple(uniq[:4]))
    return tuple(out)


def family_tau_range(family: str, m: int, eps: float) -> tuple:
    mins, maxs = family_extremes(family, m, eps)
    model = family_model(family, m)
    lo = min((model.values(np.array(t))[1] for t in mins), default=math.nan)
    hi = max((model.values(np.array(t))[1] for t in maxs), default=math.nan)
    return lo, hi


def _bisect_path(model, a, b, eps, tau, steps=40):
    """Walk from a to b (both at eps) re-projecting onto eps; stop where tau is hit."""
    def at(t):
        th, ok = project(model, (1 - t) * a + t * b, {"eps": eps})
        return th, ok, model.values(th)[1] - tau

    lo, hi = 0.0, 1.0
    th_lo, ok_lo, r_lo = at(lo)
    th_hi, ok_hi, r_hi = at(hi)
    if not (ok_lo and ok_hi) or np.sign(r_lo) == np.sign(r_hi):
        return None
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        th, ok, r = at(mid)
        if not ok:
            return None
        if np.sign(r) == np.sign(r_lo):
            lo, th_lo, r_lo = mid, th, r
        else:
            hi = mid
    th, ok = project(model, th_lo, {"eps": eps, "tau": tau})
    return th if ok else None


def _family_seed_thetas(family, m, pt, count, seed, salt=0) -> list:
    """Family members on (eps, tau) built from random members and the tau extremes."""
    model = family_model(family, m)
    mins, maxs = family_extremes(family, m, pt.edge)
    if not mins or not maxs:
        return []
    rng = _family_rng(family, m, pt, seed, salt)
    out = []
    tries = 0
    while len(out) < count and tries < 4 * count:
        tries += 1
        theta = model.lower + (model.upper - model.lower) * rng.random(model.dim)
        theta, ok = project(model, theta, {"eps": pt.edge})
        if not ok:
            continue
        t_here = model.values(theta)[1]
        pool = mins if t_here >= pt.triangle else maxs
        partner = np.array(pool[rng.integers(len(pool))])
        th = _bisect_path(model, theta, partner, pt.edge, pt.triangle)
        if th is not None:
            out.append(th)
    return out


def _family_result(family, m, pt, res, tol=1e-8) -> OptimizationResult:
    model = family_model(family, m)
    P, c = model.unpack(res.theta)
    g = _graphon_from(P, c)
    spec = spec_from_theta(family, m, res.theta)
    return _assemble(g, pt, res, canonical=False, params=dict(spec.params), tol=tol)


def family_label(family: str, m: int) -> str:
    k = {"A": 0, "B": 1, "C": 2, "F": 1}[family]
    return f"{family}({m},{k})"


def solve_in_family(family: str, m: int, pt: ConstraintPoint, cfg: SolveConfig = SolveConfig(),
                    strict: bool = False, warm: Sequence = ()) -> OptimizationResult:
    """Best family member for (eps, tau) over seeded multi-start refinement.

    ``strict`` keeps only optima whose own classification is the requested
    family (so a branch does not silently collapse onto a smaller family).
    ``warm`` holds extra starting parameter vectors (e.g. from a neighbour).
    """
    if family not in PARAM_NAMES:
        raise ValueError(f"unknown family {family!r}")
    model = family_model(family, m)
    if model.dim - int(np.sum(model.lower >= model.upper)) < 2:
        raise ParamRange("family has fewer than two free parameters")
    lo, hi = family_tau_range(family, m, pt.edge)
    if not (lo - 1e-12 <= pt.triangle <= hi + 1e-12):
        raise FamilyInfeasible(f"{family}({m}) reaches tau in [{lo}, {hi}] at eps={pt.edge}")
    seeds = [np.asarray(w, dtype=float) for w in warm]
    seeds += _family_seed_thetas(family, m, pt, cfg.family_starts, cfg.seed)
    if not seeds:
        raise FamilyInfeasible(f"could not place a {family}({m}) member on {tuple(pt)}")
    targets = {"eps": pt.edge, "tau": pt.triangle}

    def run(theta):
        r = maximize(model, theta, "S", targets, tol=cfg.refine_tol, max_iter=cfg.max_iter)
        if r.status == "Infeasible":
            return None
        return _family_result(family, m, pt, r, cfg.refine_tol), r.theta

    runs = [x for x in _map(run, seeds, cfg) if x is not None]
    want = family_label(family, m)
    if strict:
        runs = [x for x in runs if x[0].label.matches(want)]
    best = _best([x[0] for x in runs], cfg.refine_tol)
    if best is None:
        raise FamilyInfeasible(f"no converged {want} optimum at {tuple(pt)}")
    theta = next(th for r, th in runs if r is best)
    best.diagnostics["theta"] = [float(v) for v in theta]
    return best


# ---------------------------------------------------------------- extremal triangle density

def _multipartite_starts(eps: float, max_parts: int = 16) -> list:
    """Complete k-partite graphons at edge density eps for the two relevant k."""
    k_star = 2
    while 1 - 1 / k_star < eps - 1e-12:
        k_star += 1
    out = []
    for k in (k_star, k_star + 1):
        if k > max_parts:
            continue
        x = _last_part(k, eps)
        if x is not None:
            out.append(complete_multipartite([(1 - x) / (k - 1)] * (k - 1) + [x]))
    return out


def _extremal_search(eps: float, which: str, max_podes: int, seed: int):
    sign = -1.0 if which == "min" else 1.0
    if which == "min":
        starts = _multipartite_starts(eps)
    elif which == "max":
        r = math.sqrt(eps)
        starts = [MultipodalGraphon([r, 1 - r], [[1.0, 0.0], [0.0, 0.0]])]
    else:
        raise ValueError("which must be 'min' or 'max'")
    rng = np.random.default_rng([seed, int(round(eps * 1e12))])
    for n in (2, 3):
        c = rng.dirichlet(np.ones(n))
        U = rng.random((n, n))
        starts.append(MultipodalGraphon(c, np.triu(U) + np.triu(U, 1).T))
    best = None
    for g in starts:
        model = generic_model(g.n)
        th = theta_from_graphon(np.asarray(g.probs), np.asarray(g.sizes))
        r = maximize(model, th, "tau", {"eps": eps}, sign=sign, tol=1e-9)
        # the 1e-9 bound margin leaves cusps reachable only to ~1e-9
        if r.status == "Infeasible" or r.constraint_violation > 1e-8:
            continue
        if best is None or sign * r.objective > sign * best[0].objective:
            best = (r, model)
    return best


def extremal_tau(eps: float, which: str = "min", cfg: SolveConfig = SolveConfig()) -> OptimizationResult:
    """Graphon with extremal triangle density at fixed edge density.

    ``"min"`` starts SQP from complete multipartite graphons (k-1 equal parts
    plus a smaller one) and a few random ones; ``"max"`` starts from a clique.
    The returned ``entropy`` field is the entropy of that graphon; ``beta`` is 0.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("edge density must lie in (0, 1)")
    found = _extremal_search(float(eps), which, cfg.max_podes, cfg.seed)
    if found is None:
        raise Infeasible(f"no graphon with edge density {eps} found")
    r, model = found
    P, c = model.unpack(r.theta)
    g = canonicalize(_graphon_from(P, c))
    e, t, S = densities(g)
    return OptimizationResult(
        graphon=g, entropy=S, alpha=math.nan, beta=0.0, kkt_residual=r.kkt_residual,
        el_residual=math.nan, constraint_violation=abs(e - eps),
        label=classify(g, context=ConstraintPoint(e, t)), status=_status(r.status),
        iterations=r.iterations, diagnostics={"engine_status": r.status, "tau": t})


@functools.lru_cache(maxsize=8192)
def tau_extreme(eps: float, which: str = "min", max_podes: int = 6, seed: int = 0) -> float:
    """Scalar extremal triangle density (cached)."""
    if eps <= 0.0 or eps >= 1.0:
        return float(min(max(eps, 0.0), 1.0))
    if which == "min" and eps <= 0.5:
        # bipartite graphons reach zero
        return 0.0
    if which == "max":
        return eps ** 1.5
    if eps > 1 - 1 / 16:
        # beyond the pode cap: evaluate the multipartite construction directly
        k = 2
        while 1 - 1 / k < eps - 1e-12:
            k += 1
        x = _last_part(k, eps)
        parts = np.array([(1 - x) / (k - 1)] * (k - 1) + [x])
        p1, p2, p3 = parts.sum(), (parts ** 2).sum(), (parts ** 3).sum()
        e3 = (p1 ** 3 - 3 * p1 * p2 + 2 * p3) / 6
        return float(6 * e3)
    res = extremal_tau(eps, which, SolveConfig(max_podes=max_podes, seed=seed))
    return float(res.diagnostics["tau"])
