"""Feasible region, line and grid scans, transition detection, continuity probes."""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import ConstraintPoint, PhaseLabel
from .families import ParamRange, cusp, stability_boundary
from .optimize import (FamilyInfeasible, Infeasible, OptimizationResult, SolveConfig, _map, refine, solve,
                       family_label, solve_in_family, tau_extreme)

MARGIN = 1e-6
SLOPE_JUMP_TOL = 0.05
MESH_STEP = 1.0 / 400


class TooFewPoints(ValueError):
    pass


class BoundaryNotInWindow(ValueError):
    pass


class Feasibility(Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    INFEASIBLE = "Infeasible"

    def __str__(self):
        return self.value


# ---------------------------------------------------------------- lower boundary

class LowerBoundary:
    """tau_low(eps) by linear interpolation on a mesh; cusps are exact mesh nodes.

    Node values come from the numerical minimum-tau solver and are computed
    lazily; :meth:`save` / :meth:`load` persist them.
    """

    def __init__(self, step: float = MESH_STEP, max_cusp: int = 60):
        n = int(round(1.0 / step))
        nodes = {round(k / n, 15) for k in range(n + 1)}
        self.cusps = {}
        for k in range(1, max_cusp + 1):
            c = cusp(k)
            self.cusps[round(c.edge, 15)] = c.triangle
        nodes |= set(self.cusps)
        self.nodes = sorted(nodes)
        self.values = dict(self.cusps)
        self.values[0.0] = 0.0
        self.values[1.0] = 1.0

    def node_value(self, eps: float) -> float:
        if eps not in self.values:
            self.values[eps] = tau_extreme(eps, "min")
        return self.values[eps]

    def __call__(self, eps: float) -> float:
        if not 0.0 <= eps <= 1.0:
            raise ValueError("edge density outside [0, 1]")
        if eps <= 0.5:
            return 0.0
        k = bisect.bisect_left(self.nodes, eps)
        if k < len(self.nodes) and abs(self.nodes[k] - eps) < 1e-15:
            return self.node_value(self.nodes[k])
        lo, hi = self.nodes[k - 1], self.nodes[k]
        w = (eps - lo) / (hi - lo)
        return (1 - w) * self.node_value(lo) + w * self.node_value(hi)

    def fill(self, eps_values=None):
        for e in (eps_values if eps_values is not None else self.nodes):
            self(e)
        return self

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"step": self.nodes[1] - self.nodes[0],
                       "values": sorted(self.values.items())}, fh)

    @classmethod
    def load(cls, path) -> "LowerBoundary":
        with open(path) as fh:
            data = json.load(fh)
        lb = cls()
        lb.values.update({float(k): float(v) for k, v in data["values"]})
        return lb


_DEFAULT_BOUNDARY: Optional[LowerBoundary] = None


def default_boundary() -> LowerBoundary:
    global _DEFAULT_BOUNDARY
    if _DEFAULT_BOUNDARY is None:
        _DEFAULT_BOUNDARY = LowerBoundary()
    return _DEFAULT_BOUNDARY


def feasible(pt: ConstraintPoint, lower_boundary: Optional[LowerBoundary] = None,
             margin: float = MARGIN) -> Feasibility:
    lb = lower_boundary or default_boundary()
    eps, tau = pt
    low, high = lb(eps), eps ** 1.5
    if low + margin < tau < high - margin:
        return Feasibility.INTERIOR
    if low - margin <= tau <= high + margin:
        return Feasibility.BOUNDARY
    return Feasibility.INFEASIBLE


def is_feasible(pt: ConstraintPoint) -> bool:
    return feasible(pt) is not Feasibility.INFEASIBLE


# ---------------------------------------------------------------- scan records

@dataclass
class ScanRecord:
    point: ConstraintPoint
    entropy: float
    label: Optional[PhaseLabel]
    params: tuple = ()
    beta: float = math.nan
    alpha: float = math.nan
    status: str = "Converged"
    result: Optional[OptimizationResult] = field(default=None, repr=False, compare=False)

    @property
    def tau_rescaled(self) -> float:
        return rescaled_tau(self.point.edge, self.point.triangle)

    @classmethod
    def from_result(cls, pt: ConstraintPoint, r: OptimizationResult) -> "ScanRecord":
        g = r.graphon
        iu, ju = np.triu_indices(g.n)
        params = tuple(g.sizes.tolist()) + tuple(g.probs[iu, ju].tolist())
        return cls(pt, r.entropy, r.label, params, r.beta, r.alpha, r.status, r)

    @classmethod
    def failed(cls, pt: ConstraintPoint, status: str) -> "ScanRecord":
        return cls(pt, math.nan, None, (), math.nan, math.nan, status)


def rescaled_tau(eps: float, tau: float) -> float:
    """tau' = tau - eps (2 eps - 1), which flattens the lower boundary for plotting."""
    return tau - eps * (2 * eps - 1)


def _better(a: Optional[OptimizationResult], b: Optional[OptimizationResult]):
    if a is None or not a.converged:
        return b
    if b is None or not b.converged:
        return a
    return a if a.entropy >= b.entropy else b


def _best_family(pt, families, cfg, warm):
    best = None
    for fam, m in families:
        try:
            r = solve_in_family(fam, m, pt, cfg, strict=True,
                                warm=warm.get((fam, m), ()))
        except (FamilyInfeasible, ParamRange):
            continue
        warm[(fam, m)] = [r.diagnostics["theta"]]
        best = _better(best, r)
    return best


def scan_line(eps: float, tau_range: tuple, steps: int, cfg: SolveConfig = SolveConfig(),
              families: Optional[Sequence[tuple]] = None) -> list:
    """Solve along the vertical line at ``eps`` for ``steps`` equally spaced tau values.

    Each point is solved cold and also refined from the previous point's
    optimizer; the higher entropy wins.  With ``families`` (pairs like
    ``("B", 2)``) only those family solves are used.
    """
    lo, hi = tau_range
    taus = [lo] if steps == 1 else list(np.linspace(lo, hi, steps))
    records, prev = [], None
    warm = {}
    for tau in taus:
        pt = ConstraintPoint(eps, float(tau))
        if not is_feasible(pt):
            records.append(ScanRecord.failed(pt, "Infeasible"))
            prev = None
            continue
        try:
            if families:
                best = _best_family(pt, families, cfg, warm)
            else:
                best = solve(pt, cfg)
                if prev is not None:
                    best = _better(best, refine(prev, pt, cfg))
        except Infeasible:
            records.append(ScanRecord.failed(pt, "Infeasible"))
            prev = None
            continue
        if best is None:
            records.append(ScanRecord.failed(pt, "MaxIterations"))
            prev = None
            continue
        records.append(ScanRecord.from_result(pt, best))
        prev = best.graphon if best.converged else None
    return records


def scan_grid(eps_range: tuple, tau_range: tuple, resolution: tuple,
              cfg: SolveConfig = SolveConfig()) -> list:
    """Cold solves on a rectangular mesh; rows ordered by (eps, tau)."""
    ne, nt = resolution
    if ne > 200 or nt > 200:
        raise ValueError("resolution above 200 x 200")
    eps_vals = np.linspace(*eps_range, ne) if ne > 1 else [eps_range[0]]
    tau_vals = np.linspace(*tau_range, nt) if nt > 1 else [tau_range[0]]
    pts = [ConstraintPoint(float(e), float(t)) for e in eps_vals for t in tau_vals]

    def one(pt):
        if not is_feasible(pt):
            return ScanRecord.failed(pt, "Infeasible")
        try:
            return ScanRecord.from_result(pt, solve(pt, SolveConfig(**{**cfg.__dict__, "threads": 1})))
        except Infeasible:
            return ScanRecord.failed(pt, "Infeasible")
    return _map(one, pts, cfg)


# ---------------------------------------------------------------- transitions

@dataclass
class TransitionEvent:
    low: float
    high: float
    kind: str  # SlopeJump, LabelChange or Both
    slope_before: float
    slope_after: float
    labels: tuple

    @property
    def jump(self) -> float:
        return abs(self.slope_after - self.slope_before)

    @property
    def center(self) -> float:
        return 0.5 * (self.low + self.high)


def _label_name(label) -> str:
    return "" if label is None else str(label)


def detect_transitions(records: Sequence[ScanRecord], slope_jump_tol: float = SLOPE_JUMP_TOL,
                       coord=lambda r: r.point.triangle) -> list:
    """Kinks of s along the scan and changes of phase label.

    Slopes are one-sided differences between neighbouring records.  The kink
    at record k is the change of slope across it minus the median change two
    and three records away, which removes smooth curvature while a kink that
    falls between records (and so splits over two changes) cannot mask
    itself.  Labels are compared up to the structural twins F(1,1)/B(1,1) and
    B(2,1)/C(1,2).
    """
    recs = [r for r in records if r.label is not None and np.isfinite(r.entropy)]
    if len(recs) < 4:
        raise TooFewPoints("need at least four solved records")
    x = np.array([coord(r) for r in recs])
    order = np.argsort(x)
    recs = [recs[i] for i in order]
    x = x[order]
    s = np.array([r.entropy for r in recs])
    slope = np.diff(s) / np.diff(x)
    dslope = np.diff(slope)  # change across record k+1
    events = []
    for k in range(len(dslope)):
        far = [dslope[j] for j in (k - 3, k - 2, k + 2, k + 3) if 0 <= j < len(dslope)]
        trend = float(np.median(far)) if far else 0.0
        if abs(dslope[k] - trend) > slope_jump_tol:
            events.append(TransitionEvent(x[k], x[k + 2], "SlopeJump", slope[k], slope[k + 1],
                                          (recs[k].label, recs[k + 2].label)))
    for k in range(len(recs) - 1):
        a, b = recs[k].label, recs[k + 1].label
        if not (a.matches(str(b)) or b.matches(str(a))):
            sb = slope[k - 1] if k >= 1 else slope[k]
            sa = slope[k + 1] if k + 1 < len(slope) else slope[k]
            events.append(TransitionEvent(x[k], x[k + 1], "LabelChange", sb, sa, (a, b)))
    return _merge_events(events, x)


def _merge_events(events, x):
    events.sort(key=lambda e: (e.low, e.high))
    merged = []
    for e in events:
        if merged and e.low < merged[-1].high - 1e-15:
            m = merged[-1]
            kinds = {m.kind, e.kind}
            kind = "Both" if ("SlopeJump" in kinds or "Both" in kinds) and \
                ("LabelChange" in kinds or "Both" in kinds) else m.kind
            # keep the sharper slope pair and the label change, if any
            slopes = (m.slope_before, m.slope_after) if m.jump >= e.jump else (e.slope_before, e.slope_after)
            labels = m.labels if m.kind in ("LabelChange", "Both") else e.labels
            if e.kind == "LabelChange":
                labels = e.labels
            merged[-1] = TransitionEvent(min(m.low, e.low), max(m.high, e.high), kind,
                                         slopes[0], slopes[1], labels)
        else:
            merged.append(e)
    return merged


# ---------------------------------------------------------------- family branches

@dataclass
class Branch:
    """Strict family optimum along a line of constant eps (missing points are skipped)."""

    family: str
    m: int
    eps: float
    taus: list
    entropy: list
    beta: list
    thetas: list

    def at(self, tau: float):
        k = self.taus.index(tau)
        return self.entropy[k], self.beta[k]


@dataclass
class Crossing:
    tau: float
    entropy: float
    slope_before: float  # beta of the branch that wins above the crossing
    slope_after: float
    pair: tuple

    @property
    def slope_jump(self) -> float:
        return abs(self.slope_after - self.slope_before)


def _extend_branch(br: Branch, taus, cfg):
    for t in taus:
        t = float(t)
        if t in br.taus:
            continue
        warm = ()
        if br.taus:
            k = int(np.argmin(np.abs(np.array(br.taus) - t)))
            warm = (br.thetas[k],)
        try:
            r = solve_in_family(br.family, br.m, ConstraintPoint(br.eps, t), cfg,
                                strict=True, warm=warm)
        except (FamilyInfeasible, ParamRange):
            continue
        k = bisect.bisect_left(br.taus, t)
        br.taus.insert(k, t)
        br.entropy.insert(k, r.entropy)
        br.beta.insert(k, r.beta)
        br.thetas.insert(k, r.diagnostics["theta"])
    return br


def family_branch(family: str, m: int, eps: float, taus: Sequence[float],
                  cfg: SolveConfig = SolveConfig()) -> Branch:
    """Strict family optima at each tau, warm-started from the previous point."""
    br = Branch(family, m, eps, [], [], [], [])
    warm = ()
    for t in sorted(float(t) for t in taus):
        pt = ConstraintPoint(eps, t)
        try:
            r = solve_in_family(family, m, pt, cfg, strict=True, warm=warm)
        except (FamilyInfeasible, ParamRange):
            warm = ()
            continue
        warm = (r.diagnostics["theta"],)
        br.taus.append(t)
        br.entropy.append(r.entropy)
        br.beta.append(r.beta)
        br.thetas.append(r.diagnostics["theta"])
    return br


def _densify(b1: Branch, b2: Branch, cfg, points: int, rounds: int):
    """Resample where the two domains barely overlap until they share a few taus."""
    for _ in range(rounds):
        common = sorted(set(b1.taus) & set(b2.taus))
        if len(common) >= 3 or not b1.taus or not b2.taus:
            return
        gaps = [np.diff(b.taus).min() for b in (b1, b2) if len(b.taus) > 1]
        h = min(gaps) if gaps else 1e-3
        lo = max(b1.taus[0], b2.taus[0]) - h
        hi = min(b1.taus[-1], b2.taus[-1]) + h
        if hi <= lo:
            return
        grid = np.linspace(lo, hi, points)
        _extend_branch(b1, grid, cfg)
        _extend_branch(b2, grid, cfg)


def branch_crossings(b1: Branch, b2: Branch, cfg: SolveConfig = SolveConfig(),
                     tol: float = 1e-7, densify_points: int = 9, densify_rounds: int = 2) -> list:
    """Points where two branches exchange the larger entropy, refined by bisection.

    When the branch domains only just overlap the overlap is resampled first
    (at most ``densify_rounds`` times) so a sign change can be bracketed.
    """
    _densify(b1, b2, cfg, densify_points, densify_rounds)
    common = sorted(set(b1.taus) & set(b2.taus))
    out = []
    for lo, hi in zip(common[:-1], common[1:]):
        d_lo = b1.at(lo)[0] - b2.at(lo)[0]
        d_hi = b1.at(hi)[0] - b2.at(hi)[0]
        if np.sign(d_lo) == np.sign(d_hi):
            continue
        w1 = (b1.thetas[b1.taus.index(lo)], b1.thetas[b1.taus.index(hi)])
        w2 = (b2.thetas[b2.taus.index(lo)], b2.thetas[b2.taus.index(hi)])
        a, b, da = lo, hi, d_lo
        r1 = r2 = None
        while b - a > tol:
            mid = 0.5 * (a + b)
            pt = ConstraintPoint(b1.eps, mid)
            try:
                s1 = solve_in_family(b1.family, b1.m, pt, cfg, strict=True, warm=w1)
                s2 = solve_in_family(b2.family, b2.m, pt, cfg, strict=True, warm=w2)
            except (FamilyInfeasible, ParamRange):
                break
            r1, r2 = s1, s2
            d = r1.entropy - r2.entropy
            if np.sign(d) == np.sign(da):
                a, da = mid, d
            else:
                b = mid
        tau = 0.5 * (a + b)
        if r1 is None:
            e1, be1 = b1.at(lo)
            e2, be2 = b2.at(lo)
        else:
            e1, be1, e2, be2 = r1.entropy, r1.beta, r2.entropy, r2.beta
        # above the crossing the branch with the larger entropy at ``hi`` wins
        before, after = (be1, be2) if d_hi > 0 else (be2, be1)
        out.append(Crossing(tau, 0.5 * (e1 + e2), before, after,
                            (family_label(b1.family, b1.m), family_label(b2.family, b2.m))))
    return out


# ---------------------------------------------------------------- continuity probe

@dataclass
class ProbeReport:
    n: int
    eps: float
    boundary_tau: float
    taus: list
    order: list
    entropy: list
    beta: list
    slope_jump: float
    nearest_order: float
    continuous: bool


def _order_parameter(n: int, r: OptimizationResult) -> float:
    p = r.params
    c0 = (n - 1) / n
    if n == 2:
        return max(abs(p["p"] - p["a"]), abs(p["c"] - c0))
    return max(abs(p["d"] - p["b"]), abs(p["p"] - p["a"]), abs(p["c"] - c0))


def _side_value(x, y, at):
    """Linear fit through the two samples nearest ``at``, evaluated there."""
    if len(x) == 1:
        return y[0]
    k = np.argsort(np.abs(np.asarray(x) - at))[:2]
    x0, x1 = x[k[0]], x[k[1]]
    y0, y1 = y[k[0]], y[k[1]]
    return y0 + (y1 - y0) * (at - x0) / (x1 - x0)


def pitchfork_probe(n: int, eps: float, tau_window: tuple, steps: int = 8,
                    cfg: SolveConfig = SolveConfig(family_starts=16),
                    slope_jump_tol: float = SLOPE_JUMP_TOL, order_tol: float = 0.02,
                    cluster: int = 10) -> ProbeReport:
    """Solve B(n-1,1) across a window around the A(n,0) stability boundary.

    Only roots of det H where the other eigenvalues are negative count as the
    boundary.  The order parameter is the distance from A(n,0) symmetry.  The
    slope jump compares beta = ds/dtau extrapolated linearly to the boundary
    from each side, so a jump in curvature alone does not register.  The
    verdict is continuous when the order parameter at the sample nearest the
    boundary is below ``order_tol`` and the jump is at most ``slope_jump_tol``.

    Besides ``steps`` evenly spaced samples, ``cluster`` pairs sit at
    tb +- w / 2^k (k = 1..cluster, w the smaller half-window), since near the
    boundary the symmetry-broken branch moves like a square root.
    """
    lo, hi = tau_window
    curve = stability_boundary(n, (eps, eps), 1)
    roots = [p.tau for p in curve.points
             if lo <= p.tau <= hi and max(p.eigenvalues[:-1], default=-1.0) < 0]
    if not roots:
        raise BoundaryNotInWindow(f"no stability boundary for n={n} in tau window {tau_window}")
    tb = roots[0]
    w = min(tb - lo, hi - tb)
    near = [tb + sgn * w / 2 ** k for k in range(1, cluster + 1) for sgn in (-1, 1)]
    taus = sorted(set(np.linspace(lo, hi, steps).tolist()) | set(near))
    order, ent, beta, used = [], [], [], []
    warm = ()
    for t in taus:
        pt = ConstraintPoint(eps, float(t))
        try:
            r = solve_in_family("B", n - 1, pt, cfg, warm=warm)
        except FamilyInfeasible:
            continue
        warm = (r.diagnostics["theta"],)
        used.append(float(t))
        order.append(_order_parameter(n, r))
        ent.append(r.entropy)
        beta.append(r.beta)
    left = [k for k, t in enumerate(used) if t < tb]
    right = [k for k, t in enumerate(used) if t > tb]
    if len(used) < 4 or not left or not right:
        raise TooFewPoints("probe needs solutions on both sides of the boundary")
    x, b = np.array(used), np.array(beta)
    jump = abs(_side_value(x[left], b[left], tb) - _side_value(x[right], b[right], tb))
    nearest = order[int(np.argmin(np.abs(x - tb)))]
    return ProbeReport(n, eps, tb, used, order, ent, beta, float(jump), nearest,
                       bool(nearest < order_tol and jump <= slope_jump_tol))


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{float(v):.15g}"
    return str(v)


def metadata_line(seed: int, config: str) -> str:
    return f"# seed={seed} config={config}\n"


def scan_csv(records: Sequence[ScanRecord], seed: int = 0, config: str = "") -> str:
    width = max((len(r.params) for r in records), default=0)
    buf = io.StringIO()
    buf.write(metadata_line(seed, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "tau", "tau_rescaled", "entropy", "beta", "label", "status"]
               + [f"param{k}" for k in range(width)])
    for r in records:
        params = list(r.params) + [""] * (width - len(r.params))
        w.writerow([_fmt(r.point.edge), _fmt(r.point.triangle), _fmt(r.tau_rescaled),
                    _fmt(r.entropy), _fmt(r.beta), _label_name(r.label), r.status]
                   + [_fmt(p) if p != "" else "" for p in params])
    return buf.getvalue()


def transitions_csv(events: Sequence[TransitionEvent], seed: int = 0, config: str = "") -> str:
    buf = io.StringIO()
    buf.write(metadata_line(seed, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["coord_low", "coord_high", "kind", "slope_before", "slope_after",
                "label_before", "label_after"])
    for e in events:
        w.writerow([_fmt(e.low), _fmt(e.high), e.kind, _fmt(e.slope_before), _fmt(e.slope_after),
                    _label_name(e.labels[0]), _label_name(e.labels[1])])
    return buf.getvalue()


def stability_csv(curve, seed: int = 0, config: str = "") -> str:
    buf = io.StringIO()
    buf.write(metadata_line(seed, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "tau", "det", "ev1", "ev2", "ev3"])
    for row in curve.rows():
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def mask_csv(eps_values, tau_values, mask, seed: int = 0, config: str = "") -> str:
    """One row per grid cell: ``epsilon,tau,stable`` with stable in {0, 1}."""
    buf = io.StringIO()
    buf.write(metadata_line(seed, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "tau", "stable"])
    for i, e in enumerate(eps_values):
        for j, t in enumerate(tau_values):
            w.writerow([_fmt(float(e)), _fmt(float(t)), int(mask[i, j])])
    return buf.getvalue()


_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
            "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]


def grid_svg(records: Sequence[ScanRecord], curves: Sequence = (), size: int = 600) -> str:
    """Static SVG: grid cells coloured by label, stability curves as dots."""
    pts = [r for r in records if r.label is not None]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}"></svg>'
    es = sorted({r.point.edge for r in records})
    ts = sorted({r.point.triangle for r in records})
    e0, e1 = es[0], es[-1] if es[-1] > es[0] else es[0] + 1
    t0, t1 = ts[0], ts[-1] if ts[-1] > ts[0] else ts[0] + 1
    cw = size / max(len(es), 1)
    ch = size / max(len(ts), 1)
    names = sorted({str(r.label) for r in pts})
    color = {nm: _PALETTE[i % len(_PALETTE)] for i, nm in enumerate(names)}

    def xy(e, t):
        return (e - e0) / (e1 - e0) * (size - cw), size - ch - (t - t0) / (t1 - t0) * (size - ch)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(names)}">']
    for r in pts:
        x, y = xy(r.point.edge, r.point.triangle)
        out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                   f'fill="{color[str(r.label)]}"><title>{r.label}</title></rect>')
    for curve in curves:
        for p in curve.points:
            if e0 <= p.eps <= e1 and t0 <= p.tau <= t1:
                x, y = xy(p.eps, p.tau)
                out.append(f'<circle cx="{x + cw / 2:.2f}" cy="{y + ch / 2:.2f}" r="1.5" fill="black"/>')
    for i, nm in enumerate(names):
        y = size + 15 + 20 * i - 5
        out.append(f'<rect x="5" y="{y - 10}" width="10" height="10" fill="{color[nm]}"/>'
                   f'<text x="20" y="{y}" font-size="12">{nm}</text>')
    out.append("</svg>")
    return "\n".join(out)
