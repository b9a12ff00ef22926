"""Edge, triangle, subgraph and entropy functionals of multipodal graphons.

Entropy uses S(g) = sum_ij c_i c_j S0(p_ij) with no 1/2 prefactor, so that the
bipodal formulas, the Euler-Lagrange equation and the A(n,0) Hessian hold
verbatim.  Multiply by :data:`SHANNON_HALF_FACTOR` for the halved convention.
"""

from __future__ import annotations

import itertools
import math
import string
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import MultipodalGraphon, validate

SHANNON_HALF_FACTOR = 0.5
MAX_PATTERN_VERTICES = 8
MAX_EMPIRICAL_VERTICES = 5


class PatternTooLarge(ValueError):
    pass


# ---------------------------------------------------------------- S0 and friends

def s0(u):
    """Bernoulli entropy -u ln u - (1-u) ln(1-u), with S0(0) = S0(1) = 0."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -u * np.log(u) - (1 - u) * np.log1p(-u)
    return np.where((u <= 0) | (u >= 1), 0.0, out)


def s0_prime(u):
    """ln((1-u)/u); +inf at 0 and -inf at 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(-u) - np.log(u)


def s0_second(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        return -1.0 / (u * (1 - u))


# ---------------------------------------------------------------- scalar functionals

def edge_density(g: MultipodalGraphon) -> float:
    validate(g)
    c = g.sizes
    return float(c @ g.probs @ c)


def triangle_density(g: MultipodalGraphon) -> float:
    validate(g)
    M = g.probs * g.sizes[None, :]
    return float(np.trace(M @ M @ M))


def entropy(g: MultipodalGraphon) -> float:
    validate(g)
    c = g.sizes
    return float(c @ s0(g.probs) @ c)


def densities(g: MultipodalGraphon) -> tuple:
    """(edge density, triangle density, entropy)."""
    return edge_density(g), triangle_density(g), entropy(g)


# ---------------------------------------------------------------- subgraph patterns

@dataclass(frozen=True)
class SubgraphPattern:
    vertex_count: int
    edges: frozenset

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ValueError("pattern needs at least one vertex")
        edges = set()
        for e in self.edges:
            u, v = sorted(e)
            if u == v:
                raise ValueError(f"loop at vertex {u}")
            if u < 0 or v >= self.vertex_count:
                raise ValueError(f"edge {u}-{v} outside 0..{self.vertex_count - 1}")
            if (u, v) in edges:
                raise ValueError(f"duplicate edge {u}-{v}")
            edges.add((u, v))
        object.__setattr__(self, "edges", frozenset(edges))

    @classmethod
    def parse(cls, text: str) -> "SubgraphPattern":
        """Parse ``"k; u-v,u-v,..."``, e.g. ``"3; 0-1,1-2,0-2"``."""
        head, _, tail = text.partition(";")
        k = int(head.strip())
        edges = []
        for item in tail.split(","):
            item = item.strip()
            if item:
                u, v = item.split("-")
                edges.append((int(u), int(v)))
        if len(set(tuple(sorted(e)) for e in edges)) != len(edges):
            raise ValueError("duplicate edge in pattern")
        return cls(k, frozenset(tuple(e) for e in edges))

    def format(self) -> str:
        return f"{self.vertex_count}; " + ",".join(f"{u}-{v}" for u, v in sorted(self.edges))

    def __str__(self):
        return self.format()


EDGE = SubgraphPattern(2, frozenset({(0, 1)}))
TRIANGLE = SubgraphPattern(3, frozenset({(0, 1), (1, 2), (0, 2)}))
FOUR_CYCLE = SubgraphPattern(4, frozenset({(0, 1), (1, 2), (2, 3), (0, 3)}))
TWO_STAR = SubgraphPattern(3, frozenset({(0, 1), (0, 2)}))


def _hom_einsum(H: SubgraphPattern, weights, matrix) -> float:
    letters = string.ascii_letters[:H.vertex_count]
    terms = [letters[v] for v in range(H.vertex_count)]
    operands = [weights] * H.vertex_count
    for u, v in sorted(H.edges):
        terms.append(letters[u] + letters[v])
        operands.append(matrix)
    return float(np.einsum(",".join(terms) + "->", *operands, optimize="optimal"))


def subgraph_density(g: MultipodalGraphon, H: SubgraphPattern) -> float:
    """Homomorphism density t_H(g): sum over all maps of vertices to podes."""
    validate(g)
    if H.vertex_count > MAX_PATTERN_VERTICES:
        raise PatternTooLarge(f"{H.vertex_count} vertices > {MAX_PATTERN_VERTICES}")
    return _hom_einsum(H, g.sizes, g.probs)


# ---------------------------------------------------------------- gradients

class Gradients(NamedTuple):
    """Partials over the free parameters: p_ij (i <= j, row-major), then c_i (i < n)."""

    edge: np.ndarray
    triangle: np.ndarray
    entropy: np.ndarray
    names: tuple


def parameter_names(n: int) -> tuple:
    iu, ju = np.triu_indices(n)
    return tuple(f"p{i}{j}" if n <= 10 else f"p{i}_{j}" for i, j in zip(iu, ju)) + \
        tuple(f"c{i}" for i in range(n - 1))


def full_gradients(P, c):
    """Unsymmetrised partials of (eps, tau, S) w.r.t. matrix entries and all sizes.

    Works on stacked inputs (leading batch axes) and on complex arrays, which
    the optimizer uses for complex-step Hessians.  Returns
    ``(dP_eps, dP_tau, dP_S, dc_eps, dc_tau, dc_S)``.
    """
    w = c[..., :, None] * c[..., None, :]
    Q = P @ (c[..., :, None] * P)
    dP_eps = w
    dP_tau = 3.0 * w * Q
    dP_S = w * (np.log(1 - P) - np.log(P))
    dc_eps = 2.0 * (P @ c[..., None])[..., 0]
    dc_tau = 3.0 * ((Q * P) @ c[..., None])[..., 0]
    S0 = -P * np.log(P) - (1 - P) * np.log(1 - P)
    dc_S = 2.0 * (S0 @ c[..., None])[..., 0]
    return dP_eps, dP_tau, dP_S, dc_eps, dc_tau, dc_S


def density_gradients(g: MultipodalGraphon) -> Gradients:
    """Exact partials of eps, tau, S with c_n eliminated through sum(c) = 1.

    Entropy partials in a p_ij at 0 or 1 are reported as +inf / -inf.
    """
    validate(g)
    n = g.n
    P, c = g.probs, g.sizes
    iu, ju = np.triu_indices(n)
    sym = np.where(iu == ju, 1.0, 2.0)
    w = np.outer(c, c)
    Q = P @ (c[:, None] * P)
    S0 = s0(P)
    out = []
    for dP, dc in ((w, 2 * P @ c),
                   (3 * w * Q, 3 * (Q * P) @ c),
                   (w * s0_prime(P), 2 * S0 @ c)):
        with np.errstate(invalid="ignore"):
            gp = sym * dP[iu, ju]
        gc = dc[:-1] - dc[-1]
        out.append(np.concatenate([gp, gc]))
    return Gradients(*out, parameter_names(n))


def pack(P: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Free-parameter vector (upper-triangular p, then c_1..c_{n-1})."""
    iu, ju = np.triu_indices(len(c))
    return np.concatenate([P[iu, ju], c[:-1]])


def unpack(x: np.ndarray, n: int):
    iu, ju = np.triu_indices(n)
    m = len(iu)
    P = np.empty((n, n), dtype=x.dtype)
    P[iu, ju] = x[:m]
    P[ju, iu] = x[:m]
    c = np.empty(n, dtype=x.dtype)
    c[:-1] = x[m:]
    c[-1] = 1 - x[m:].sum()
    return P, c


# ---------------------------------------------------------------- sampling

def sample_graph(g: MultipodalGraphon, node_count: int, seed: int) -> np.ndarray:
    """Draw a W-random graph; returns a symmetric boolean adjacency matrix."""
    validate(g)
    if node_count < 2:
        raise ValueError("node_count must be at least 2")
    rng = np.random.default_rng(seed)
    positions = rng.random(node_count)
    bounds = np.cumsum(g.sizes)[:-1]
    pode = np.searchsorted(bounds, positions, side="right")
    prob = g.probs[pode[:, None], pode[None, :]]
    draws = rng.random((node_count, node_count))
    upper = np.triu(draws < prob, k=1)
    return upper | upper.T


def edge_list(adjacency: np.ndarray) -> str:
    iu, ju = np.nonzero(np.triu(adjacency, k=1))
    return "".join(f"{u} {v}\n" for u, v in zip(iu, ju))


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def _quotient(H: SubgraphPattern, blocks):
    where = {v: b for b, block in enumerate(blocks) for v in block}
    edges = set()
    for u, v in H.edges:
        bu, bv = where[u], where[v]
        if bu == bv:
            return None  # loop: no homomorphism into a simple graph
        edges.add((min(bu, bv), max(bu, bv)))
    return SubgraphPattern(len(blocks), frozenset(edges))


def injective_count(adjacency: np.ndarray, H: SubgraphPattern) -> float:
    """Number of injective maps V(H) -> V(G) preserving edges.

    Moebius inversion over the partition lattice: inj(H) = sum over vertex
    partitions pi of mu(pi) * hom(H / pi).
    """
    A = np.asarray(adjacency, dtype=float)
    ones = np.ones(len(A))
    total = 0.0
    for blocks in _set_partitions(list(range(H.vertex_count))):
        Hq = _quotient(H, blocks)
        if Hq is None:
            continue
        mu = math.prod((-1) ** (len(b) - 1) * math.factorial(len(b) - 1) for b in blocks)
        total += mu * _hom_einsum(Hq, ones, A)
    return total


def empirical_density(adjacency: np.ndarray, H: SubgraphPattern) -> float:
    """Injective density of H in a simple graph (distinct-node tuples)."""
    if H.vertex_count > MAX_EMPIRICAL_VERTICES:
        raise PatternTooLarge(f"{H.vertex_count} vertices > {MAX_EMPIRICAL_VERTICES}")
    n = len(adjacency)
    if n < H.vertex_count:
        return 0.0
    falling = math.prod(range(n - H.vertex_count + 1, n + 1))
    return injective_count(adjacency, H) / falling


def brute_force_injective_count(adjacency: np.ndarray, H: SubgraphPattern) -> int:
    """Direct enumeration over distinct node tuples; small graphs only."""
    A = np.asarray(adjacency, dtype=bool)
    edges = sorted(H.edges)
    return sum(all(A[t[u], t[v]] for u, v in edges)
               for t in itertools.permutations(range(len(A)), H.vertex_count))
