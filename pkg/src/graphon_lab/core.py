"""Multipodal graphons: representation, validation, canonical form, phase labels."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MAX_PODES = 16
SIZE_SUM_TOL = 1e-12
MERGE_TOL = 1e-7
CLASSIFY_TOL = 1e-5
DEGENERATE_SIZE = 1e-10


class InvalidGraphon(ValueError):
    """Base class for violated graphon invariants."""


class SizeSumError(InvalidGraphon):
    pass


class AsymmetryError(InvalidGraphon):
    pass


class RangeError(InvalidGraphon):
    pass


class PodeCountError(InvalidGraphon):
    pass


@dataclass(frozen=True, eq=False)
class MultipodalGraphon:
    """Step-function graphon given by pode sizes and a block probability matrix.

    Construction does not validate; call :func:`validate` (every density
    routine does so on entry).
    """

    sizes: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sizes = np.array(self.sizes, dtype=float).reshape(-1)
        probs = np.array(self.probs, dtype=float)
        if probs.ndim == 0:
            probs = probs.reshape(1, 1)
        sizes.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @classmethod
    def constant(cls, p: float) -> "MultipodalGraphon":
        return cls([1.0], [[p]])

    def permuted(self, order) -> "MultipodalGraphon":
        order = np.asarray(order)
        return MultipodalGraphon(self.sizes[order], self.probs[np.ix_(order, order)])

    def to_dict(self) -> dict:
        return {"sizes": self.sizes.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MultipodalGraphon":
        g = cls(data["sizes"], data["probs"])
        validate(g)
        return g

    def __eq__(self, other):
        if not isinstance(other, MultipodalGraphon):
            return NotImplemented
        return (self.sizes.shape == other.sizes.shape
                and np.array_equal(self.sizes, other.sizes)
                and np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash((self.sizes.tobytes(), self.probs.tobytes()))

    def __repr__(self):
        return f"MultipodalGraphon(sizes={self.sizes.tolist()}, probs={self.probs.tolist()})"


def validate(g: MultipodalGraphon, max_podes: int = MAX_PODES) -> None:
    """Raise the exception for the first violated invariant; return None if valid."""
    sizes, probs = g.sizes, g.probs
    n = len(sizes)
    if n < 1 or n > max_podes:
        raise PodeCountError(f"pode count {n} outside [1, {max_podes}]")
    if g.__dict__.get("_checked"):
        return  # arrays are read-only, so an earlier pass still holds
    if probs.shape != (n, n):
        raise PodeCountError(f"probs shape {probs.shape} does not match {n} podes")
    total = sizes.sum()
    # one combined test for the common case; NaN or inf poisons the sums
    if (abs(total - 1.0) <= SIZE_SUM_TOL and sizes.min() > 0 and probs.min() >= 0
            and probs.max() <= 1 and math.isfinite(probs.sum())
            and (probs == probs.T).all()):
        object.__setattr__(g, "_checked", True)
        return
    if not np.all(np.isfinite(sizes)) or np.any(sizes <= 0):
        raise SizeSumError(f"pode sizes must be positive: {sizes.tolist()}")
    if abs(sizes.sum() - 1.0) > SIZE_SUM_TOL:
        raise SizeSumError(f"pode sizes sum to {sizes.sum()!r}, not 1")
    if not np.array_equal(probs, probs.T):
        raise AsymmetryError("block probability matrix is not symmetric")
    if not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1:
        raise RangeError("block probabilities must lie in [0, 1]")
    object.__setattr__(g, "_checked", True)


def is_valid(g: MultipodalGraphon) -> bool:
    try:
        validate(g)
    except InvalidGraphon:
        return False
    return True


@dataclass(frozen=True)
class ConstraintPoint:
    """An (edge density, triangle density) pair."""

    edge: float
    triangle: float

    def __post_init__(self):
        for name in ("edge", "triangle"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} density {v} outside [0, 1]")
            object.__setattr__(self, name, v)

    @property
    def below_er(self) -> bool:
        return self.triangle < self.edge ** 3

    def __iter__(self):
        return iter((self.edge, self.triangle))


# ---------------------------------------------------------------- canonical form

def drop_degenerate(g: MultipodalGraphon, min_size: float = DEGENERATE_SIZE) -> MultipodalGraphon:
    keep = g.sizes >= min_size
    if keep.all():
        return g
    if not keep.any():
        keep = g.sizes == g.sizes.max()
    sizes = g.sizes[keep]
    return MultipodalGraphon(sizes / sizes.sum(), g.probs[np.ix_(keep, keep)])


def _mergeable(P: np.ndarray, i: int, j: int, tol: float) -> float:
    """Max deviation between podes i and j, or inf if beyond tol."""
    dev = max(abs(P[i, j] - P[i, i]), abs(P[i, j] - P[j, j]))
    others = [k for k in range(len(P)) if k != i and k != j]
    if others:
        dev = max(dev, float(np.max(np.abs(P[i, others] - P[j, others]))))
    return dev if dev < tol else np.inf


def _merge(sizes: np.ndarray, P: np.ndarray, i: int, j: int):
    ci, cj = sizes[i], sizes[j]
    c = ci + cj
    row = (ci * P[i] + cj * P[j]) / c
    diag = (ci * ci * P[i, i] + 2 * ci * cj * P[i, j] + cj * cj * P[j, j]) / (c * c)
    P = P.copy()
    P[i, :] = row
    P[:, i] = row
    P[i, i] = diag
    keep = [k for k in range(len(sizes)) if k != j]
    sizes = sizes.copy()
    sizes[i] = c
    return sizes[keep], P[np.ix_(keep, keep)]


def _order_key(sizes, P, k):
    return (-sizes[k], P[k, k], tuple(np.sort(P[k])))


def canonicalize(g: MultipodalGraphon, merge_tol: float = MERGE_TOL) -> MultipodalGraphon:
    """Merge indistinguishable podes and sort podes into a deterministic order.

    Ordering: size descending, then diagonal value, then the sorted row; exact
    ties are resolved by the lexicographically smallest block matrix.
    """
    validate(g)
    g = drop_degenerate(g)
    sizes, P = g.sizes.copy(), g.probs.copy()
    while len(sizes) > 1:
        best, pair = np.inf, None
        for i, j in itertools.combinations(range(len(sizes)), 2):
            dev = _mergeable(P, i, j, merge_tol)
            if dev < best:
                best, pair = dev, (i, j)
        if pair is None:
            break
        sizes, P = _merge(sizes, P, *pair)
    P = np.clip(0.5 * (P + P.T), 0.0, 1.0)

    n = len(sizes)
    order = sorted(range(n), key=lambda k: _order_key(sizes, P, k))
    # resolve exact ties by brute force over small tie groups
    groups = [list(grp) for _, grp in itertools.groupby(order, key=lambda k: _order_key(sizes, P, k))]
    if any(1 < len(grp) <= 6 for grp in groups):
        best_order, best_flat = order, None
        choices = [itertools.permutations(grp) if len(grp) <= 6 else [tuple(grp)] for grp in groups]
        for combo in itertools.product(*choices):
            cand = [k for grp in combo for k in grp]
            flat = tuple(P[np.ix_(cand, cand)].ravel())
            if best_flat is None or flat < best_flat:
                best_order, best_flat = cand, flat
        order = best_order
    order = np.array(order)
    return MultipodalGraphon(sizes[order], P[np.ix_(order, order)])


# ---------------------------------------------------------------- classification

FAMILIES = ("A", "B", "C", "F", "UNKNOWN")


@dataclass(frozen=True)
class PhaseLabel:
    family: str
    params: tuple = ()
    signature: tuple = ()
    ambiguous_with: Optional[tuple] = None

    def __str__(self):
        if self.family == "UNKNOWN":
            return "UNKNOWN"
        return f"{self.family}({self.params[0]},{self.params[1]})"

    @property
    def name(self) -> str:
        return str(self)

    @property
    def ambiguous_name(self) -> Optional[str]:
        if self.ambiguous_with is None:
            return None
        fam, (m, k) = self.ambiguous_with
        return f"{fam}({m},{k})"

    def matches(self, name: str) -> bool:
        """True if ``name`` (e.g. ``"C(1,2)"``) is this label or its structural twin."""
        return name == str(self) or name == self.ambiguous_name


def parse_label(text: str) -> tuple:
    text = text.strip()
    if text == "UNKNOWN":
        return ("UNKNOWN", ())
    fam, rest = text.split("(", 1)
    m, k = rest.rstrip(")").split(",")
    return (fam, (int(m), int(k)))


def transposition_invariant(sizes, P, i, j, tol) -> bool:
    if abs(sizes[i] - sizes[j]) >= tol or abs(P[i, i] - P[j, j]) >= tol:
        return False
    others = [k for k in range(len(sizes)) if k != i and k != j]
    return not others or float(np.max(np.abs(P[i, others] - P[j, others]))) < tol


def equivalence_classes(g: MultipodalGraphon, tol: float = CLASSIFY_TOL) -> list:
    """Group podes that can be swapped without changing the graphon (within tol)."""
    n = g.n
    parent = list(range(n))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for i, j in itertools.combinations(range(n), 2):
        if transposition_invariant(g.sizes, g.probs, i, j, tol):
            parent[find(j)] = find(i)
    classes = {}
    for k in range(n):
        classes.setdefault(find(k), []).append(k)
    return sorted(classes.values(), key=lambda c: (-len(c), c))


def classify(g: MultipodalGraphon, tol: float = CLASSIFY_TOL,
             context: Optional[ConstraintPoint] = None,
             merge_tol: float = MERGE_TOL) -> PhaseLabel:
    """Assign the phase family from the pode-equivalence pattern."""
    g = canonicalize(g, merge_tol)
    classes = equivalence_classes(g, tol)
    signature = tuple(sorted(((len(c), round(float(g.sizes[c[0]]), 9)) for c in classes), reverse=True))
    counts = sorted((len(c) for c in classes), reverse=True)
    above_er = context is not None and context.triangle > context.edge ** 3

    if len(counts) == 1:
        return PhaseLabel("A", (counts[0], 0), signature)
    if len(counts) == 2:
        big, small = counts
        if small == 1:
            if big == 1:
                if above_er:
                    return PhaseLabel("F", (1, 1), signature, ("B", (1, 1)))
                return PhaseLabel("B", (1, 1), signature)
            if big == 2:
                return PhaseLabel("B", (2, 1), signature, ("C", (1, 2)))
            return PhaseLabel("B", (big, 1), signature)
        if small == 2:
            return PhaseLabel("C", (big, 2), signature)
    return PhaseLabel("UNKNOWN", (), signature)


# ---------------------------------------------------------------- JSON

def graphon_to_json(g: MultipodalGraphon) -> str:
    # float repr round-trips exactly
    return json.dumps(g.to_dict())


def graphon_from_json(text: str) -> MultipodalGraphon:
    return MultipodalGraphon.from_dict(json.loads(text))
