"""Phase families A(n,0), B(m,1), C(m,2), F(1,1) and their analytic machinery."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import brentq

from .core import ConstraintPoint, MultipodalGraphon, classify, validate
from .densities import s0_prime, triangle_density
from .sqp import P_LOWER, P_UPPER, AffineModel, block_model


class ParamRange(ValueError):
    pass


class AboveERCurve(ValueError):
    pass


class DegenerateAB(ValueError):
    pass


class BoundaryParameter(ValueError):
    pass


class NoRoot(ValueError):
    pass


class NotInterior(ValueError):
    pass


# float rounding slack when a point sits exactly on the ER curve or a range end
ROUND_TOL = 1e-14

PARAM_NAMES = {
    "A": ("a", "b"),
    "B": ("a", "b", "d", "p", "c"),
    "C": ("a_plus", "a_minus", "b", "d", "p", "c"),
    "F": ("a", "b", "d", "c"),
}


@dataclass(frozen=True)
class FamilySpec:
    """A phase family member: B(m,1) uses a=p11, b=p12, d=p1n, p=pnn and c for the m podes."""

    family: str
    m: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in PARAM_NAMES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.m < 1:
            raise ParamRange("m must be at least 1")
        if self.family == "F" and self.m != 1:
            raise ParamRange("F family is F(1,1)")
        missing = [k for k in self.required() if k not in self.params]
        if missing:
            raise ParamRange(f"missing parameters {missing}")
        for k, v in self.params.items():
            if k == "c":
                if not 0.0 < v <= 1.0:
                    raise ParamRange(f"c={v} outside (0, 1]")
            elif not 0.0 <= v <= 1.0:
                raise ParamRange(f"{k}={v} outside [0, 1]")

    def required(self) -> tuple:
        names = PARAM_NAMES[self.family]
        if self.family == "B" and self.m == 1:
            return tuple(k for k in names if k != "b")
        if self.family == "C" and self.m == 1:
            return tuple(k for k in names if k != "p")
        return names

    @property
    def label(self) -> str:
        k = {"A": 0, "B": 1, "C": 2, "F": 1}[self.family]
        return f"{self.family}({self.m},{k})"

    def vector(self) -> np.ndarray:
        return np.array([self.params.get(k, 0.5) for k in PARAM_NAMES[self.family]], dtype=float)


# ---------------------------------------------------------------- affine models

@functools.lru_cache(maxsize=128)
def family_model(family: str, m: int) -> AffineModel:
    """Affine parametrisation of a family for the SQP engine (cached; treat as read-only)."""
    names = PARAM_NAMES[family]
    pbounds = (P_LOWER, P_UPPER)
    cbounds = (0.0, 1.0)
    if family == "A":
        n = m
        pattern = [[0 if i == j else 1 for j in range(n)] for i in range(n)]
        sizes = [(1.0 / n, [])] * n
        bounds = [pbounds, pbounds]
    elif family == "B":
        n = m + 1
        a, b, d, p, c = range(5)

        def idx(i, j):
            if i == m and j == m:
                return p
            if i == m or j == m:
                return d
            return a if i == j else b
        pattern = [[idx(i, j) for j in range(n)] for i in range(n)]
        sizes = [(0.0, [(c, 1.0 / m)])] * m + [(1.0, [(c, -1.0)])]
        bounds = [pbounds, pbounds if m > 1 else (0.5, 0.5), pbounds, pbounds, cbounds]
    elif family == "C":
        n = m + 2
        ap, am, b, d, p, c = range(6)

        def idx(i, j):
            if i < 2 and j < 2:
                return am if i == j else ap
            if i < 2 or j < 2:
                return d
            return b if i == j else p
        pattern = [[idx(i, j) for j in range(n)] for i in range(n)]
        sizes = [(0.0, [(c, 0.5)])] * 2 + [(1.0 / m, [(c, -1.0 / m)])] * m
        bounds = [pbounds, pbounds, pbounds, pbounds, pbounds if m > 1 else (0.5, 0.5), cbounds]
    elif family == "F":
        n = 2
        a, b, d, c = range(4)
        pattern = [[a, d], [d, b]]
        sizes = [(0.0, [(c, 1.0)]), (1.0, [(c, -1.0)])]
        bounds = [pbounds, pbounds, pbounds, cbounds]
    else:
        raise ValueError(f"unknown family {family!r}")
    return block_model(n, pattern, sizes, names, bounds)


def build_family(spec: FamilySpec) -> MultipodalGraphon:
    """Construct the graphon of a family member."""
    if spec.family == "A":
        n = spec.m
        a, b = spec.params["a"], spec.params["b"]
        P = [[a if i == j else b for j in range(n)] for i in range(n)]
        g = MultipodalGraphon([1.0 / n] * n, P)
        validate(g)
        return g
    model = family_model(spec.family, spec.m)
    P, c = model.unpack(spec.vector())
    keep = c > 0
    if not keep.all():
        c, P = c[keep], P[np.ix_(keep, keep)]
    g = MultipodalGraphon(c, P)
    validate(g)
    return g


def spec_from_theta(family: str, m: int, theta) -> FamilySpec:
    names = PARAM_NAMES[family]
    params = {k: float(v) for k, v in zip(names, theta)}
    if family == "B" and m == 1:
        params.pop("b")
    if family == "C" and m == 1:
        params.pop("p")
    params = {k: (min(max(v, 0.0), 1.0)) for k, v in params.items()}
    return FamilySpec(family, m, params)


# ---------------------------------------------------------------- A(n,0) closed form

def solve_A(n: int, pt: ConstraintPoint) -> FamilySpec:
    """A(n,0) block values from (eps, tau): diagonal a and off-diagonal b."""
    if n < 2:
        raise ParamRange("A(n,0) needs n >= 2")
    eps, tau = pt.edge, pt.triangle
    gap = eps ** 3 - tau
    if gap < -ROUND_TOL:
        raise AboveERCurve(f"tau={tau} above eps^3={eps ** 3}")
    r = (max(gap, 0.0) / (n - 1)) ** (1.0 / 3.0)
    a = eps - (n - 1) * r
    b = eps + r
    if a < -ROUND_TOL or b > 1 + ROUND_TOL:
        raise ParamRange(f"A({n},0) values a={a}, b={b} leave [0, 1]")
    a, b = max(a, 0.0), min(b, 1.0)
    return FamilySpec("A", n, {"a": float(a), "b": float(b)})


def a_family_graphon(n: int, a: float, b: float) -> MultipodalGraphon:
    return build_family(FamilySpec("A", n, {"a": a, "b": b}))


def cusp(n: int) -> ConstraintPoint:
    """Lower-boundary cusp (n/(n+1), n(n-1)/(n+1)^2) of the complete (n+1)-partite graphon."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return ConstraintPoint(n / (n + 1), n * (n - 1) / (n + 1) ** 2)


def complete_multipartite(sizes) -> MultipodalGraphon:
    sizes = np.asarray(sizes, dtype=float)
    k = len(sizes)
    return MultipodalGraphon(sizes, np.ones((k, k)) - np.eye(k))


# ---------------------------------------------------------------- minimum tau on the bipodal stratum

def min_tau_stationarity(a: float, c: float) -> float:
    """Residual of the d=1, b=0 bipodal stationarity condition for tau at fixed eps."""
    return (a ** 3 * c ** 2 + a * c ** 2 + 2 * a ** 2 * c + 2 * (1 - c)
            - 4 * a ** 2 * c ** 2 - 4 * c * (1 - c))


def min_tau_root(a: float, lo: float = 1e-12, hi: float = 1 - 1e-9) -> float:
    """A root in c of :func:`min_tau_stationarity` bracketed inside (lo, hi)."""
    grid = np.linspace(lo, hi, 2001)
    vals = np.array([min_tau_stationarity(a, c) for c in grid])
    sign = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if len(sign) == 0:
        raise NoRoot(f"no sign change of the stationarity residual for a={a}")
    k = sign[0]
    return brentq(lambda c: min_tau_stationarity(a, c), grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15)


# ---------------------------------------------------------------- Euler-Lagrange

@dataclass(frozen=True)
class ELReport:
    residual: float
    blocks: np.ndarray
    boundary: np.ndarray

    @property
    def has_boundary(self) -> bool:
        return bool(self.boundary.any())


def euler_lagrange_blocks(g: MultipodalGraphon, alpha: float, beta: float) -> ELReport:
    """Blockwise S0'(p_ij) - alpha - 3 beta sum_k c_k p_ik p_jk."""
    validate(g)
    P, c = g.probs, g.sizes
    Q = P @ (c[:, None] * P)
    boundary = (P <= 0) | (P >= 1)
    with np.errstate(invalid="ignore"):
        r = s0_prime(P) - alpha - 3 * beta * Q
    interior = np.where(boundary, 0.0, np.abs(r))
    return ELReport(float(interior.max(initial=0.0)), r, boundary)


def euler_lagrange_residual(g: MultipodalGraphon, alpha: float, beta: float,
                            strict: bool = False) -> float:
    """Max EL residual over interior blocks.

    With ``strict=True`` a block at 0 or 1 raises :class:`BoundaryParameter`.
    """
    rep = euler_lagrange_blocks(g, alpha, beta)
    if strict and rep.has_boundary:
        raise BoundaryParameter("some block probabilities are 0 or 1")
    return rep.residual


# ---------------------------------------------------------------- Hessian at A(n,0)

@dataclass(frozen=True)
class HessianResult:
    matrix: np.ndarray
    determinant: float
    eigenvalues: np.ndarray
    X: float

    @property
    def reduced(self) -> np.ndarray:
        """The matrix without the b direction when that direction is void (n == 2)."""
        if np.all(self.matrix[1] == 0.0):
            return self.matrix[np.ix_([0, 2], [0, 2])]
        return self.matrix

    @property
    def negative_definite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.reduced)[-1] < 0)

    @property
    def stability_det(self) -> float:
        """det of :attr:`reduced`; for n == 2 the full determinant vanishes identically."""
        return float(np.linalg.det(self.reduced))


def _artanh(u: float) -> float:
    u = min(max(u, -1 + 1e-12), 1 - 1e-12)
    return 0.5 * np.log((1 + u) / (1 - u))


def hessian_X(a: float, b: float, literal: bool = False) -> float:
    """X = artanh(1-2a) - artanh(1-2b), i.e. (S0'(a) - S0'(b)) / 2.

    ``literal=True`` gives artanh(a) - artanh(b), which does not reproduce the
    constrained second variation (kept for comparison).
    """
    if literal:
        return _artanh(a) - _artanh(b)
    return _artanh(1 - 2 * a) - _artanh(1 - 2 * b)


def hessian_A(n: int, a: float, b: float, literal_X: bool = False) -> HessianResult:
    """Second variation of the constrained entropy at the A(n,0) graphon in (a, b, c).

    Coordinates are those of B(n-1,1) with d and p eliminated by the density
    constraints; at A(n,0) d=b, p=a, c=(n-1)/n.
    """
    if n < 2:
        raise ParamRange("n must be >= 2")
    if not (0 < a < 1 and 0 < b < 1):
        raise ParamRange(f"a={a}, b={b} must lie in (0, 1)")
    if abs(a - b) < 1e-8:
        raise DegenerateAB("a and b coincide (Erdos-Renyi curve)")
    X = hessian_X(a, b, literal_X)
    D = (a - b) ** 2
    H = np.empty((3, 3))
    H[0, 0] = (n - 1) * (D - 4 * (a - 1) * a ** 2 * X) / ((a - 1) * a * D * n)
    H[0, 1] = -2 * b * (n - 2) * (n - 1) * X / (D * n)
    H[0, 2] = -2 * (a + b) * X / (a - b)
    H[1, 1] = (n - 2) * (n - 1) * (D - 2 * (b - 1) * b * (2 * a + b * (n - 4)) * X) / (2 * D * (b - 1) * b * n)
    H[1, 2] = -2 * b * (n - 2) * X / (a - b)
    H[2, 2] = 2 * n * (np.log(1 - b) - np.log(1 - a)) / (n - 1)
    H[1, 0], H[2, 0], H[2, 1] = H[0, 1], H[0, 2], H[1, 2]
    ev = np.linalg.eigvalsh(H)
    return HessianResult(H, float(np.linalg.det(H)), ev, float(X))


def constrained_entropy_abc(n: int, eps: float, tau: float, a: float, b: float, c: float,
                            guess=None, tol: float = 1e-13) -> float:
    """S(a, b, c, d(a,b,c), p(a,b,c)) with (d, p) solved by Newton from the density constraints."""
    m = n - 1
    d, p = guess if guess is not None else (b, a)
    for _ in range(60):
        e, t, _ = _b_values_fast(m, a, b, c, d, p)
        r = np.array([e - eps, t - tau])
        if np.max(np.abs(r)) < tol:
            break
        h = 1e-7
        e1, t1, _ = _b_values_fast(m, a, b, c, d + h, p)
        e2, t2, _ = _b_values_fast(m, a, b, c, d, p + h)
        J = np.array([[(e1 - e) / h, (e2 - e) / h], [(t1 - t) / h, (t2 - t) / h]])
        step = np.linalg.solve(J, -r)
        d, p = d + step[0], p + step[1]
    return _b_values_fast(m, a, b, c, d, p)[2]


def _b_values_fast(m, a, b, c, d, p):
    n = m + 1
    sizes = np.r_[np.full(m, c / m), 1 - c]
    P = np.full((n, n), b)
    np.fill_diagonal(P, a)
    P[-1, :] = d
    P[:, -1] = d
    P[-1, -1] = p
    e = sizes @ P @ sizes
    M = P * sizes[None, :]
    t = np.trace(M @ M @ M)
    with np.errstate(divide="ignore", invalid="ignore"):
        S0 = -P * np.log(P) - (1 - P) * np.log1p(-P)
    S = sizes @ S0 @ sizes
    return e, t, S


def finite_difference_hessian_A(n: int, a: float, b: float, step: float = 1e-4,
                                extrapolate: bool = True) -> np.ndarray:
    """Independent oracle: central differences of the constraint-eliminated entropy.

    With ``extrapolate`` the step-``h`` and step-``h/2`` stencils are combined
    (Richardson), which removes the O(h^2) error that dominates near a = b.
    """
    c0 = (n - 1) / n
    eps, tau, _ = _b_values_fast(n - 1, a, b, c0, b, a)
    x0 = np.array([a, b, c0])

    def f(x):
        return constrained_entropy_abc(n, eps, tau, *x)

    def stencil(h):
        H = np.zeros((3, 3))
        E = np.eye(3) * h
        for i in range(3):
            for j in range(i, 3):
                H[i, j] = (f(x0 + E[i] + E[j]) - f(x0 + E[i] - E[j])
                           - f(x0 - E[i] + E[j]) + f(x0 - E[i] - E[j])) / (4 * h * h)
                H[j, i] = H[i, j]
        return H

    if not extrapolate:
        return stencil(step)
    return (4 * stencil(step / 2) - stencil(step)) / 3


# ---------------------------------------------------------------- stability boundary

@dataclass(frozen=True)
class StabilityPoint:
    eps: float
    tau: float
    det: float
    eigenvalues: tuple


@dataclass
class StabilityCurve:
    n: int
    points: list
    no_root: list  # eps columns without a sign change

    def rows(self):
        for p in self.points:
            ev = tuple(p.eigenvalues) + (float("nan"),) * (3 - len(p.eigenvalues))
            yield (p.eps, p.tau, p.det) + ev


def a_tau_range(n: int, eps: float) -> tuple:
    """Interval of tau (below eps^3) where A(n,0) has a, b inside [0, 1]."""
    r_max = min(eps / (n - 1), 1 - eps)
    return eps ** 3 - (n - 1) * r_max ** 3, eps ** 3


def hessian_at(n: int, eps: float, tau: float) -> HessianResult:
    spec = solve_A(n, ConstraintPoint(eps, tau))
    return hessian_A(n, spec.params["a"], spec.params["b"])


def _det_at(n, eps, tau):
    return hessian_at(n, eps, tau).stability_det


def stability_boundary(n: int, eps_range: tuple, resolution: int = 50,
                       tau_samples: int = 400, tol: float = 1e-8) -> StabilityCurve:
    """Roots along tau of det H(S) at A(n,0), one column per eps.

    Each sign change on a ``tau_samples`` mesh is refined by bisection to
    ``tol`` in tau.  Columns with no sign change are listed in ``no_root``.
    """
    if n < 2:
        raise ParamRange("n must be >= 2")
    lo_e, hi_e = eps_range
    if not 0 < lo_e <= hi_e < 1:
        raise ParamRange("eps range must lie inside (0, 1)")
    points, missing = [], []
    for eps in np.linspace(lo_e, hi_e, resolution):
        t_lo, t_hi = a_tau_range(n, eps)
        # stay off the ER curve (a = b) and off the a = 0 / b = 1 edge
        span = t_hi - t_lo
        taus = np.linspace(t_lo + 1e-9 * max(span, 1e-300) + 1e-12, t_hi - 1e-6 * span, tau_samples)
        dets = []
        for t in taus:
            try:
                dets.append(_det_at(n, eps, t))
            except (ParamRange, DegenerateAB):
                dets.append(np.nan)
        dets = np.array(dets)
        found = False
        for k in range(len(taus) - 1):
            d0, d1 = dets[k], dets[k + 1]
            if not (np.isfinite(d0) and np.isfinite(d1)) or np.sign(d0) == np.sign(d1):
                continue
            lo, hi = taus[k], taus[k + 1]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if np.sign(_det_at(n, eps, mid)) == np.sign(d0):
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
            h = hessian_at(n, eps, root)
            points.append(StabilityPoint(float(eps), float(root), h.stability_det,
                                         tuple(np.linalg.eigvalsh(h.reduced))))
            found = True
        if not found:
            missing.append(float(eps))
    return StabilityCurve(n, points, missing)


def stable_mask(n: int, eps_values, tau_values) -> np.ndarray:
    """Boolean grid: A(n,0) exists there and its second variation is negative definite."""
    out = np.zeros((len(eps_values), len(tau_values)), dtype=bool)
    for i, eps in enumerate(eps_values):
        for j, tau in enumerate(tau_values):
            if tau >= eps ** 3:
                continue
            try:
                out[i, j] = hessian_at(n, eps, tau).negative_definite
            except (ParamRange, DegenerateAB, AboveERCurve):
                pass
    return out


# ---------------------------------------------------------------- non-uniqueness

def _shifted(g: MultipodalGraphon, shift: float):
    """Breakpoints and block lookup of g composed with x -> x + shift (mod 1)."""
    cuts = np.concatenate([[0.0], np.cumsum(g.sizes)])
    cuts[-1] = 1.0
    # the wrap-around point 1 - shift is a cut of the rotated graphon too
    moved = np.mod(np.concatenate([cuts[1:-1], [0.0]]) - shift, 1.0)

    def block(x):
        y = np.mod(x + shift, 1.0)
        return int(np.searchsorted(cuts[1:-1], y, side="right"))
    return moved, block


def mixed_graphon(g0: MultipodalGraphon, g1: MultipodalGraphon, shift: float,
                  t: float) -> MultipodalGraphon:
    """t * g0 + (1 - t) * (g1 composed with a rotation by ``shift``) on the common refinement."""
    c0 = np.cumsum(g0.sizes)[:-1]
    moved, block1 = _shifted(g1, shift)
    cuts = np.unique(np.concatenate([[0.0, 1.0], c0, moved]))
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-14])]
    if cuts[-1] != 1.0:
        cuts[-1] = 1.0
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    i0 = np.searchsorted(c0, mids, side="right")
    i1 = np.array([block1(x) for x in mids])
    P = t * g0.probs[np.ix_(i0, i0)] + (1 - t) * g1.probs[np.ix_(i1, i1)]
    sizes = np.diff(cuts)
    return MultipodalGraphon(sizes / sizes.sum(), P)


def nonuniqueness_pair(pt: ConstraintPoint, shifts=(0.0, 0.25, 0.1, 0.4)) -> tuple:
    """Two inequivalent graphons with the same (eps, tau).

    g0 minimises and g1 maximises tau at eps; for each rotation shift the
    mixture t g0 + (1-t) g1(shifted) has edge density eps for every t, and t
    is found by root finding on tau.  Returns the first two results whose
    canonical pode signatures differ.
    """
    from .diagram import Feasibility, feasible
    from .optimize import extremal_tau

    if feasible(pt) is not Feasibility.INTERIOR:
        raise NotInterior(f"{tuple(pt)} is not strictly inside the feasible region")
    g0 = extremal_tau(pt.edge, "min").graphon
    g1 = extremal_tau(pt.edge, "max").graphon
    out = []
    for shift in shifts:
        def resid(t):
            return triangle_density(mixed_graphon(g0, g1, shift, t)) - pt.triangle
        try:
            t = brentq(resid, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
        except ValueError:
            continue
        g = mixed_graphon(g0, g1, shift, t)
        sig = classify(g).signature
        if all(sig != classify(h).signature for h in out):
            out.append(g)
        if len(out) == 2:
            return out[0], out[1]
    raise NoRoot("could not build two inequivalent graphons")
