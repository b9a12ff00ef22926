"""Feasible-path SQP over affinely parametrised multipodal graphons.

Each iterate lies on the constraint manifold.  A step is a Newton step on the
reduced (null-space) Hessian of the Lagrangian with the free variables of the
current active set, followed by a Gauss-Newton restoration back onto the
constraints.  Acceptance uses the merit ``f - rho * |h|_1``; rho doubles when
restoration fails.  Saddle points are left along the most positive
curvature direction of the reduced Hessian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares

from .densities import full_gradients, s0

P_LOWER = 1e-9
P_UPPER = 1 - 1e-9
SNAP_TOL = 1e-13
CSTEP = 1e-30
log = logging.getLogger(__name__)

FUNCTIONALS = ("eps", "tau", "S")


@dataclass
class AffineModel:
    """theta -> x = M @ theta + x0 with x = (p_ij for i <= j, c_1..c_n)."""

    n: int
    M: np.ndarray
    x0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple
    lin_A: Optional[np.ndarray] = None  # linear equalities lin_A @ theta = lin_b
    lin_b: Optional[np.ndarray] = None
    size_vars: tuple = ()

    def __post_init__(self):
        self._iu, self._ju = np.triu_indices(self.n)
        self._sym = np.where(self._iu == self._ju, 1.0, 2.0)
        self._np = len(self._iu)

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def unpack(self, theta):
        """theta (..., k) -> P (..., n, n), c (..., n); complex allowed."""
        x = theta @ self.M.T + self.x0
        p = x[..., :self._np]
        c = x[..., self._np:]
        P = np.zeros(x.shape[:-1] + (self.n, self.n), dtype=x.dtype)
        P[..., self._iu, self._ju] = p
        P[..., self._ju, self._iu] = p
        return P, c

    def values(self, theta) -> np.ndarray:
        P, c = self.unpack(np.asarray(theta, dtype=float))
        S0 = s0(P)
        eps = c @ P @ c
        M = P * c[None, :]
        tau = np.trace(M @ M @ M)
        S = c @ S0 @ c
        return np.array([eps, tau, S])

    def _xgrad(self, P, c):
        dPe, dPt, dPs, dce, dct, dcs = full_gradients(P, c)
        out = []
        for dP, dc in ((dPe, dce), (dPt, dct), (dPs, dcs)):
            gp = self._sym * dP[..., self._iu, self._ju]
            out.append(np.concatenate([gp, dc], axis=-1))
        return np.stack(out, axis=-2)  # (..., 3, Nx)

    def gradients(self, theta) -> np.ndarray:
        P, c = self.unpack(np.asarray(theta, dtype=float))
        return self._xgrad(P, c) @ self.M  # (3, k)

    def hessians(self, theta) -> np.ndarray:
        """Complex-step Hessians of (eps, tau, S), shape (3, k, k)."""
        k = self.dim
        pert = np.asarray(theta, dtype=complex)[None, :] + 1j * CSTEP * np.eye(k)
        P, c = self.unpack(pert)
        gx = self._xgrad(P, c)  # (k, 3, Nx)
        H = np.einsum("kfx,xj->fjk", gx.imag / CSTEP, self.M)
        return 0.5 * (H + np.swapaxes(H, 1, 2))


@dataclass
class SQPResult:
    theta: np.ndarray
    objective: float
    multipliers: dict
    kkt_residual: float
    constraint_violation: float
    iterations: int
    status: str
    history: list = field(default_factory=list)
    active: np.ndarray = None


class _Problem:
    def __init__(self, model: AffineModel, objective: str, sign: float, targets: dict):
        self.model = model
        self.obj = FUNCTIONALS.index(objective)
        self.sign = sign
        self.cons = [FUNCTIONALS.index(name) for name in targets]
        self.targets = np.array(list(targets.values()), dtype=float)
        self.cons_names = list(targets)
        self.droppable = self.cons_names.index("tau") if "tau" in targets else None

    def f(self, theta):
        v = self.model.values(theta)
        return self.sign * v[self.obj], self.h_from(v, theta)

    def h_from(self, v, theta):
        h = v[self.cons] - self.targets
        if self.model.lin_A is not None:
            h = np.concatenate([h, self.model.lin_A @ theta - self.model.lin_b])
        return h

    def jac(self, grads):
        A = grads[self.cons]
        if self.model.lin_A is not None:
            A = np.vstack([A, self.model.lin_A])
        return A


def _multipliers(A_F, g_F, droppable=None, rcond=1e-9):
    """Least-squares multipliers; a dependent ``droppable`` row gets multiplier 0."""
    if A_F.shape[0] == 0:
        return np.zeros(0)
    if A_F.shape[1] == 0:
        return np.zeros(A_F.shape[0])
    sv = np.linalg.svd(A_F, compute_uv=False)
    deficient = len(sv) < A_F.shape[0] or sv[-1] <= rcond * max(sv[0], 1e-300)
    if deficient and droppable is not None:
        keep = [i for i in range(A_F.shape[0]) if i != droppable]
        lam = np.zeros(A_F.shape[0])
        lam[keep], *_ = np.linalg.lstsq(A_F[keep].T, g_F, rcond=rcond)
        return lam
    lam, *_ = np.linalg.lstsq(A_F.T, g_F, rcond=rcond)
    return lam


def _null_space(A_F, rcond=1e-10):
    if A_F.shape[0] == 0:
        return np.eye(A_F.shape[1])
    return scipy.linalg.null_space(A_F, rcond=rcond)


def _inward(A, h, theta, lower, upper):
    # variables at a bound whose Gauss-Newton direction points inside
    d = -A.T @ h
    return ((theta <= lower) & (d > 0)) | ((theta >= upper) & (d < 0))


def restore(prob: "_Problem", theta, movable, lower, upper, tol=1e-13, max_iter=30):
    """Gauss-Newton projection onto h = 0 using the movable variables.

    Interior variables are tried first so that the active set is preserved;
    variables at a bound are released only if that fails.
    """
    for allow_bound in (False, True):
        t, ok = _restore_pass(prob, theta, movable, lower, upper, tol, max_iter, allow_bound)
        if ok:
            return t, True
    return t, False


def _restore_pass(prob, theta, movable, lower, upper, tol, max_iter, allow_bound):
    theta = theta.copy()
    for _ in range(max_iter):
        h = prob.h_from(prob.model.values(theta), theta)
        if np.max(np.abs(h), initial=0.0) <= tol:
            return theta, True
        A = prob.jac(prob.model.gradients(theta))
        F = movable & (theta > lower) & (theta < upper)
        if allow_bound:
            F |= movable & _inward(A, h, theta, lower, upper)
        if not F.any():
            return theta, False
        step, *_ = np.linalg.lstsq(A[:, F], -h, rcond=1e-12)
        theta[F] += step
        theta = np.clip(theta, lower, upper)
        if allow_bound:
            theta = _snap(theta, lower, upper)
    h = prob.h_from(prob.model.values(theta), theta)
    return theta, bool(np.max(np.abs(h), initial=0.0) <= 1e3 * tol)


def _feasibility_phase(prob, theta, movable, lower, upper):
    """Bounded least-squares on the constraint residual (used when Newton restoration fails)."""
    idx = np.nonzero(movable)[0]
    lo, hi = lower[idx], upper[idx]

    def full(z):
        t = theta.copy()
        t[idx] = z
        return t

    def resid(z):
        t = full(z)
        return prob.h_from(prob.model.values(t), t)

    def jac(z):
        return prob.jac(prob.model.gradients(full(z)))[:, idx]

    z0 = np.clip(theta[idx], lo, hi)
    sol = least_squares(resid, z0, jac=jac, bounds=(lo, hi), xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=200, method="trf")
    return full(sol.x)


def maximize(model: AffineModel, theta0, objective: str = "S", targets: Optional[dict] = None,
             sign: float = 1.0, tol: float = 1e-8, max_iter: int = 300,
             max_step: float = 0.2) -> SQPResult:
    """Maximize ``sign * objective`` subject to functional targets and box bounds."""
    targets = targets or {}
    prob = _Problem(model, objective, sign, targets)
    lower, upper = model.lower.astype(float), model.upper.astype(float)
    fixed = lower >= upper
    movable = ~fixed
    theta = _snap(np.clip(np.asarray(theta0, dtype=float), lower, upper), lower, upper)
    rho = 1.0
    history = []
    status = "MaxIterations"

    theta, ok = restore(prob, theta, movable, lower, upper)
    if not ok:
        theta = _feasibility_phase(prob, theta, movable, lower, upper)
        theta, ok = restore(prob, theta, movable, lower, upper)
    f, h = prob.f(theta)
    if not ok and np.max(np.abs(h), initial=0.0) > 1e-6:
        return SQPResult(theta, sign * f, {name: float("nan") for name in prob.cons_names},
                         float("inf"), float(np.max(np.abs(h))), 0, "Infeasible", [], None)
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        history.append(sign * f)
        grads = model.gradients(theta)
        g = sign * grads[prob.obj]
        A = prob.jac(grads)
        at_lo = movable & (theta <= lower)
        at_hi = movable & (theta >= upper)
        active = fixed | at_lo | at_hi
        F = ~active
        lam = _multipliers(A[:, F], g[F], prob.droppable)
        r = g - A.T @ lam
        face_kkt = float(np.max(np.abs(r[F]), initial=0.0))
        viol = float(np.max(np.abs(h), initial=0.0))
        wrong = (at_lo & (r > tol)) | (at_hi & (r < -tol))
        released = -1
        # leave a face only once it is nearly optimal on its own
        if wrong.any():
            k = int(np.argmax(np.where(wrong, np.abs(r), -1.0)))
            if abs(r[k]) > 0.5 * face_kkt or face_kkt < tol:
                released = k
        if face_kkt < tol and viol < tol and not wrong.any():
            status = "Converged"
            break
        kkt = max(face_kkt, float(np.max(np.abs(r[wrong]), initial=0.0)))

        Hs = model.hessians(theta)
        step_dirs = None
        for attempt in ((released,) if released < 0 else (released, -1)):
            Fw = F.copy()
            if attempt >= 0:
                Fw[attempt] = True
            lam_w = _multipliers(A[:, Fw], g[Fw], prob.droppable) if attempt >= 0 else lam
            step_dirs = _directions(model, prob, Hs, g, A, Fw, lam_w, sign, tol)
            if attempt < 0 or step_dirs is None:
                break
            # keep the released variable only if the step moves it inward
            d0 = step_dirs[0]
            moves_in = d0[attempt] > 0 if at_lo[attempt] else d0[attempt] < 0
            if moves_in:
                break
        if step_dirs is None:
            status = "Converged" if viol < tol else "Infeasible"
            break

        accepted = False
        merit_old = f - rho * np.sum(np.abs(h))
        for d in step_dirs:
            pred = float(g @ d)
            amax = _max_feasible_step(theta, d, lower, upper)
            alpha = min(1.0, amax) if amax > 1e-12 else 1.0
            for _ in range(40):
                trial = _snap(np.clip(theta + alpha * d, lower, upper), lower, upper)
                trial, ok = restore(prob, trial, movable, lower, upper)
                if not ok:
                    rho *= 2.0
                    merit_old = f - rho * np.sum(np.abs(h))
                ft, ht = prob.f(trial)
                gain = ft - rho * np.sum(np.abs(ht)) - merit_old
                if gain > 0 and gain >= 1e-4 * alpha * max(pred, 0.0):
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
        log.debug("it=%d f=%.12g kkt=%.2e viol=%.1e nF=%d released=%d alpha=%.2e accepted=%s",
                  it, sign * f, kkt, viol, int(F.sum()), released, alpha, accepted)
        if not accepted:
            status = "Converged" if kkt < 1e3 * tol and viol < tol else "LineSearchFailure"
            break
        step = float(np.max(np.abs(trial - theta)))
        df = ft - f
        theta, f, h = trial, ft, ht
        if df < 1e-15 and step < 1e-12:
            stall += 1
            if stall >= 3:
                status = "Converged" if kkt < 1e3 * tol else "Stalled"
                break
        else:
            stall = 0

    grads = model.gradients(theta)
    g = sign * grads[prob.obj]
    A = prob.jac(grads)
    F = movable & (theta > lower) & (theta < upper)
    lam = _multipliers(A[:, F], g[F], prob.droppable)
    r = g - A.T @ lam
    kkt = float(np.max(np.abs(r[F]), initial=0.0))
    f, h = prob.f(theta)
    mult = {name: sign * float(lam[i]) for i, name in enumerate(prob.cons_names)}
    return SQPResult(theta, sign * f, mult, kkt, float(np.max(np.abs(h), initial=0.0)),
                     it, status, history, ~F)


def _directions(model, prob, Hs, g, A, F, lam, sign, tol, max_step=0.2):
    """Candidate ascent directions on the free set F (Newton, or +/- curvature escape)."""
    Z = _null_space(A[:, F])
    if Z.shape[1] == 0:
        return None
    HL = sign * Hs[prob.obj]
    for idx, ci in enumerate(prob.cons):
        HL = HL - lam[idx] * Hs[ci]
    gz = Z.T @ g[F]
    Hz = Z.T @ HL[np.ix_(F, F)] @ Z
    w, V = np.linalg.eigh(0.5 * (Hz + Hz.T))
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    w_mod = np.minimum(-np.abs(w), -1e-10 * scale)
    out = []
    if np.linalg.norm(gz) < 10 * tol and w[-1] > 1e-8 * scale:
        for v in (V[:, -1], -V[:, -1]):
            d = np.zeros(len(g))
            d[F] = Z @ v
            out.append(d * 0.05 / np.max(np.abs(d)))
        return out
    d = np.zeros(len(g))
    d[F] = Z @ (-V @ ((V.T @ gz) / w_mod))
    nrm = float(np.max(np.abs(d)))
    if nrm > max_step:
        d *= max_step / nrm
    out.append(d)
    # projected gradient as a fallback direction
    pg = np.zeros(len(g))
    pg[F] = Z @ gz
    pn = float(np.max(np.abs(pg)))
    if pn > 0:
        out.append(pg * min(1.0, max_step / pn) if nrm == 0 else pg * (max(nrm, 1e-12) / pn))
    return out


def _snap(theta, lower, upper):
    theta = theta.copy()
    theta[theta - lower < SNAP_TOL] = lower[theta - lower < SNAP_TOL]
    theta[upper - theta < SNAP_TOL] = upper[upper - theta < SNAP_TOL]
    return theta


def _max_feasible_step(theta, d, lower, upper):
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (upper - theta) / d, np.inf)
        lo = np.where(d < 0, (lower - theta) / d, np.inf)
    return float(np.min(np.concatenate([up, lo]), initial=np.inf))


# ---------------------------------------------------------------- model builders

def generic_model(n: int) -> AffineModel:
    """All p_ij (i <= j) and all n sizes free, with sum(c) = 1 as linear equality."""
    m = n * (n + 1) // 2
    k = m + n
    lower = np.concatenate([np.full(m, P_LOWER), np.zeros(n)])
    upper = np.concatenate([np.full(m, P_UPPER), np.ones(n)])
    iu, ju = np.triu_indices(n)
    names = tuple(f"p{i},{j}" for i, j in zip(iu, ju)) + tuple(f"c{i}" for i in range(n))
    lin_A = np.concatenate([np.zeros(m), np.ones(n)])[None, :]
    return AffineModel(n, np.eye(k), np.zeros(k), lower, upper, names,
                       lin_A, np.array([1.0]), tuple(range(m, k)))


def theta_from_graphon(P: np.ndarray, c: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(len(c))
    return np.concatenate([P[iu, ju], c])


def block_model(n: int, pattern: Sequence[Sequence[int]], size_terms: Sequence,
                names: Sequence[str], bounds: Sequence[tuple]) -> AffineModel:
    """Build a family model.

    ``pattern[i][j]`` is the parameter index giving p_ij (or -1 for a
    constant 0, unused); ``size_terms[i]`` is ``(const, [(param, coeff), ...])``
    giving c_i = const + sum coeff * theta[param].
    """
    iu, ju = np.triu_indices(n)
    m = len(iu)
    k = len(names)
    M = np.zeros((m + n, k))
    x0 = np.zeros(m + n)
    for row, (i, j) in enumerate(zip(iu, ju)):
        M[row, pattern[i][j]] = 1.0
    for i, (const, terms) in enumerate(size_terms):
        x0[m + i] = const
        for p, coeff in terms:
            M[m + i, p] += coeff
    lower = np.array([b[0] for b in bounds], dtype=float)
    upper = np.array([b[1] for b in bounds], dtype=float)
    return AffineModel(n, M, x0, lower, upper, tuple(names))


def project(model: AffineModel, theta, targets: dict, tol: float = 1e-13):
    """Move theta onto the functional targets (and linear equalities); returns (theta, ok)."""
    prob = _Problem(model, "S", 1.0, targets)
    lower, upper = model.lower.astype(float), model.upper.astype(float)
    movable = lower < upper
    theta = np.clip(np.asarray(theta, dtype=float), lower, upper)
    return restore(prob, theta, movable, lower, upper, tol=tol)
