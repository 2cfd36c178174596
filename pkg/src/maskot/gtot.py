"""Graph-topology-induced OT regularizers and related quantities.

The GTOT regularizer is the masked Wasserstein distance between the node
embeddings of a pretrained and a fine-tuned network, with cosine
dissimilarity as cost, the graph adjacency (with self loops) as mask and
uniform marginals on the vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    SolveReport,
    SolverConfig,
    cosine_cost,
    normalize_cost,
    uniform,
)
from .errors import InvalidDelta, InvalidInput, ShapeMismatch
from .gromov import DEFAULT_OUTER_ITERS, solve_mgwd
from .sinkhorn import solve_mwd


@dataclass(frozen=True)
class GraphTopology:
    """Undirected graph on ``n`` vertices.

    ``edges`` may contain self loops ``(i, i)``; self loops are added
    implicitly wherever a mask needs them. ``edge_weights`` (one positive
    weight per edge) only enter through :meth:`weight_matrix`.
    """

    n: int
    edges: tuple = ()
    edge_weights: Optional[tuple] = None
    self_loops_added: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidInput(f"vertex count must be a positive integer, got {self.n}")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidInput(f"edge ({i}, {j}) out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidInput(f"duplicate edge ({i}, {j})")
            seen.add(key)
        object.__setattr__(self, "edges", edges)
        if self.edge_weights is not None:
            w = tuple(float(x) for x in self.edge_weights)
            if len(w) != len(edges):
                raise InvalidInput(f"{len(w)} weights for {len(edges)} edges")
            if not all(math.isfinite(x) and x > 0 for x in w):
                raise InvalidInput("edge weights must be positive and finite")
            object.__setattr__(self, "edge_weights", w)

    @property
    def weighted(self) -> bool:
        return self.edge_weights is not None

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def adjacency_with_self_loops(self) -> np.ndarray:
        A = self.adjacency()
        np.fill_diagonal(A, 1.0)
        return A

    def weight_matrix(self) -> np.ndarray:
        """Symmetric edge weights; 1 wherever no weight is given (diagonal included)."""
        W = np.ones((self.n, self.n))
        if self.edge_weights is not None:
            for (i, j), w in zip(self.edges, self.edge_weights):
                W[i, j] = W[j, i] = w
        return W

    def neighbors(self) -> list[list[int]]:
        """Neighbor lists including the vertex itself, sorted."""
        A = self.adjacency_with_self_loops()
        return [list(np.flatnonzero(A[i])) for i in range(self.n)]


def path_graph(n: int) -> GraphTopology:
    return GraphTopology(n, tuple((i, i + 1) for i in range(n - 1)))


@dataclass(frozen=True)
class MaskSpec:
    """Which mask to derive from a topology.

    ``variant`` is one of ``"ones"``, ``"identity"``, ``"adjacency"``,
    ``"adjacency_power"`` (uses ``k``) or ``"polynomial"`` (uses
    ``coefficients`` ``c_0, c_1, ...`` of ``g(A) = sum_k c_k A^k``).
    """

    variant: str = "adjacency"
    k: int = 1
    coefficients: tuple = ()

    VARIANTS = ("ones", "identity", "adjacency", "adjacency_power", "polynomial")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise InvalidInput(f"unknown mask variant {self.variant!r}")
        if self.variant == "adjacency_power" and (int(self.k) != self.k or self.k < 1):
            raise InvalidInput("adjacency_power needs k >= 1")
        if self.variant == "polynomial":
            coeffs = tuple(float(c) for c in self.coefficients)
            if not coeffs or not any(c != 0 for c in coeffs):
                raise InvalidInput("polynomial mask needs a nonzero coefficient")
            object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def ones(cls):
        return cls("ones")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def adjacency(cls):
        return cls("adjacency")

    @classmethod
    def adjacency_power(cls, k: int):
        return cls("adjacency_power", k=k)

    @classmethod
    def polynomial(cls, coefficients: Sequence[float]):
        return cls("polynomial", coefficients=tuple(coefficients))


def build_mask(topology: GraphTopology, spec: MaskSpec = MaskSpec()) -> np.ndarray:
    """Binary ``n x n`` mask for ``spec`` on ``topology``.

    Powers and polynomials act on the self-looped adjacency ``A + I`` and are
    binarized (entry is 1 iff the matrix entry is positive).
    """
    n = topology.n
    if spec.variant == "ones":
        return np.ones((n, n), dtype=bool)
    if spec.variant == "identity":
        return np.eye(n, dtype=bool)
    A = topology.adjacency_with_self_loops()
    if spec.variant == "adjacency":
        return A > 0
    if spec.variant == "adjacency_power":
        return np.linalg.matrix_power(A, spec.k) > 0
    G = np.zeros((n, n))
    Ak = np.eye(n)
    for c in spec.coefficients:
        G += c * Ak
        Ak = Ak @ A
    return G > 0


@dataclass
class RegularizerValue:
    value: float
    plan: np.ndarray
    report: SolveReport


def gtot_cost(topology: GraphTopology, X_source, X_target, mask, normalize: bool = True) -> np.ndarray:
    """Cosine cost, optionally max-normalized, then edge-weighted on the mask."""
    C = cosine_cost(X_source, X_target)
    if normalize:
        C = normalize_cost(C)
    if topology.weighted:
        C = np.where(mask, topology.weight_matrix() * C, C)
    return C


def _check_embeddings(topology, X_source, X_target):
    Xs = np.asarray(X_source, dtype=float)
    Xt = np.asarray(X_target, dtype=float)
    if Xs.ndim != 2 or Xs.shape != Xt.shape or Xs.shape[0] != topology.n:
        raise ShapeMismatch(
            f"embeddings {Xs.shape}, {Xt.shape} do not match a {topology.n}-vertex graph"
        )
    return Xs, Xt


def gtot_regularizer(
    topology: GraphTopology,
    X_source,
    X_target,
    spec: MaskSpec = MaskSpec(),
    cfg: Optional[SolverConfig] = None,
    normalize: bool = True,
) -> RegularizerValue:
    """Masked Wasserstein distance between two embedding sets of one graph."""
    Xs, Xt = _check_embeddings(topology, X_source, X_target)
    M = build_mask(topology, spec)
    C = gtot_cost(topology, Xs, Xt, M, normalize)
    q = uniform(topology.n)
    sol = solve_mwd(C, M, q, q, cfg)
    return RegularizerValue(sol.distance, sol.plan, sol.report)


def intra_cosine_cost(X, normalize: bool = True) -> np.ndarray:
    C = cosine_cost(X, X)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 0.0)
    return normalize_cost(C) if normalize else C


def mgwd_regularizer(
    topology: GraphTopology,
    X_source,
    X_target,
    spec: MaskSpec = MaskSpec(),
    cfg: Optional[SolverConfig] = None,
    outer_iters: int = DEFAULT_OUTER_ITERS,
    normalize: bool = True,
) -> RegularizerValue:
    """Masked Gromov-Wasserstein distance between intra-set cosine geometries."""
    Xs, Xt = _check_embeddings(topology, X_source, X_target)
    M = build_mask(topology, spec)
    Cx = intra_cosine_cost(Xs, normalize)
    Cy = intra_cosine_cost(Xt, normalize)
    q = uniform(topology.n)
    sol = solve_mgwd(Cx, Cy, M, q, q, cfg, outer_iters)
    return RegularizerValue(sol.distance, sol.plan, sol.report)


def combined_objective(task_loss: float, mwd_value: float, mgwd_value: float,
                       lam: float, beta: float) -> float:
    """``task_loss + lam * mwd_value + beta * mgwd_value``."""
    if lam < 0 or beta < 0:
        raise InvalidInput("lambda and beta must be nonnegative")
    return task_loss + lam * mwd_value + beta * mgwd_value


def smooth_value(topology: GraphTopology, signal, cfg: Optional[SolverConfig] = None) -> float:
    """Masked OT value of a graph signal under the cost ``(s_i - s_j)^2``.

    The mask is the self-looped adjacency and both marginals are uniform.
    """
    s = np.asarray(signal, dtype=float).reshape(-1)
    if s.size != topology.n:
        raise ShapeMismatch(f"signal has {s.size} entries for a {topology.n}-vertex graph")
    if not np.all(np.isfinite(s)):
        raise InvalidInput("signal must be finite")
    C = (s[:, None] - s[None, :]) ** 2
    q = uniform(topology.n)
    return solve_mwd(C, build_mask(topology, MaskSpec.adjacency()), q, q, cfg).distance


@dataclass(frozen=True)
class BoundParams:
    loss_bound: float
    lam: float
    beta_vertices: int
    sample_count: int
    q_bound: float
    delta: float
    empirical_risk: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidDelta(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("loss_bound", "lam", "beta_vertices", "q_bound", "empirical_risk"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be nonnegative")
        if self.sample_count < 1:
            raise InvalidInput("sample_count must be >= 1")


def stability_constant(loss_bound: float, lam: float, beta_vertices: int) -> float:
    return 2.0 * loss_bound + lam * math.sqrt(beta_vertices)


def generalization_bound(params: BoundParams) -> float:
    """High-probability upper bound on the risk from uniform stability.

    ``R_m + 2 s + (4 N s + Q) sqrt(ln(1/delta) / (2N))`` with stability
    constant ``s = 2 M + lam sqrt(B)``.
    """
    p = params
    s = stability_constant(p.loss_bound, p.lam, p.beta_vertices)
    N = p.sample_count
    return p.empirical_risk + 2.0 * s + (4.0 * N * s + p.q_bound) * math.sqrt(math.log(1.0 / p.delta) / (2.0 * N))
