"""Exact small-instance references used to test the entropic solvers.

Nothing here shares code with the Sinkhorn path: the unregularized masked
problem is solved as an integer min-cost flow (successive shortest paths with
Dijkstra and node potentials), and Gromov objectives are literal quadruple
sums.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import as_cost, as_mask, as_prob_vec, validate_feasibility_inputs
from .errors import Infeasible, ShapeMismatch, TooLarge

COST_SCALE = 10**9
MASS_SCALE = 10**6
MAX_FLOW_SIDE = 64
MAX_NAIVE_SIDE = 8
MAX_PERM_SIDE = 6


def largest_remainder_round(p, total: int) -> list[int]:
    """Integer vector proportional to ``p`` summing exactly to ``total``."""
    raw = [x * total for x in p]
    out = [math.floor(x) for x in raw]
    short = total - sum(out)
    order = sorted(range(len(p)), key=lambda i: (-(raw[i] - out[i]), i))
    for i in order[:short]:
        out[i] += 1
    return out


@dataclass
class _Arc:
    to: int
    cap: int
    cost: int
    rev: int


class FlowNetwork:
    """Bipartite transportation network: source -> rows -> (unmasked) cols -> sink.

    Row/column arcs are uncapacitated; costs are ``round(C_ij * COST_SCALE)``
    and supplies/demands are marginals scaled to ``MASS_SCALE`` units.
    """

    def __init__(self, C, M, a, b):
        n, m = M.shape
        self.n, self.m = n, m
        self.source = 0
        self.sink = n + m + 1
        self.adj: list[list[_Arc]] = [[] for _ in range(n + m + 2)]
        self.supply = largest_remainder_round(a, MASS_SCALE)
        self.demand = largest_remainder_round(b, MASS_SCALE)
        self.inner: dict[tuple[int, int], tuple[int, int]] = {}
        big = MASS_SCALE
        for i in range(n):
            self._add(self.source, 1 + i, self.supply[i], 0)
        for i in range(n):
            for j in range(m):
                if M[i, j]:
                    self.inner[(i, j)] = (1 + i, len(self.adj[1 + i]))
                    self._add(1 + i, 1 + n + j, big, int(round(C[i, j] * COST_SCALE)))
        for j in range(m):
            self._add(1 + n + j, self.sink, self.demand[j], 0)

    def _add(self, u, v, cap, cost):
        self.adj[u].append(_Arc(v, cap, cost, len(self.adj[v])))
        self.adj[v].append(_Arc(u, 0, -cost, len(self.adj[u]) - 1))

    def _initial_potentials(self):
        # graph is a DAG in layer order, so one pass gives exact distances
        n, m = self.n, self.m
        pot = [0] * (n + m + 2)
        for j in range(m):
            pot[1 + n + j] = min(
                (arc.cost for i in range(n) for arc in self.adj[1 + i] if arc.to == 1 + n + j and arc.cap > 0),
                default=0,
            )
        pot[self.sink] = min((pot[1 + n + j] for j in range(m)), default=0)
        return pot

    def min_cost_flow(self) -> int:
        """Push as much flow as possible at minimum cost; returns the flow value."""
        V = len(self.adj)
        pot = self._initial_potentials()
        flow = 0
        target = sum(self.supply)
        while flow < target:
            dist = [None] * V
            prev: list = [None] * V
            dist[self.source] = 0
            heap = [(0, self.source)]
            while heap:
                d, u = heapq.heappop(heap)
                if d != dist[u]:
                    continue
                for k, arc in enumerate(self.adj[u]):
                    if arc.cap <= 0:
                        continue
                    nd = d + arc.cost + pot[u] - pot[arc.to]
                    if dist[arc.to] is None or nd < dist[arc.to]:
                        dist[arc.to] = nd
                        prev[arc.to] = (u, k)
                        heapq.heappush(heap, (nd, arc.to))
            if dist[self.sink] is None:
                break
            for v in range(V):
                if dist[v] is not None:
                    pot[v] += dist[v]
            push = target - flow
            v = self.sink
            while v != self.source:
                u, k = prev[v]
                push = min(push, self.adj[u][k].cap)
                v = u
            v = self.sink
            while v != self.source:
                u, k = prev[v]
                arc = self.adj[u][k]
                arc.cap -= push
                self.adj[v][arc.rev].cap += push
                v = u
            flow += push
        return flow

    def plan_units(self) -> np.ndarray:
        F = np.zeros((self.n, self.m), dtype=np.int64)
        for (i, j), (u, k) in self.inner.items():
            arc = self.adj[u][k]
            F[i, j] = self.adj[arc.to][arc.rev].cap
        return F


def exact_mwd(C, M, a, b):
    """Exact unregularized masked Wasserstein distance.

    Returns
    -------
    value : float
        ``<P, C>`` at the optimal flow (rounding error at most
        ``(n + m) / MASS_SCALE * max|C|``).
    plan : ndarray
        Optimal plan, flow units divided by ``MASS_SCALE``.

    Raises
    ------
    Infeasible
        If no flow meets all demands, i.e. the masked polytope is empty.
    TooLarge
        If either side exceeds 64.
    """
    C = as_cost(C)
    M = as_mask(M)
    a = as_prob_vec(a, "a")
    b = as_prob_vec(b, "b")
    validate_feasibility_inputs(M, a, b)
    if C.shape != M.shape:
        raise ShapeMismatch(f"cost {C.shape} and mask {M.shape} differ in shape")
    if max(M.shape) > MAX_FLOW_SIDE:
        raise TooLarge(f"exact_mwd is limited to {MAX_FLOW_SIDE} rows/columns")
    net = FlowNetwork(C, M, a, b)
    flow = net.min_cost_flow()
    if flow < MASS_SCALE:
        raise Infeasible(
            f"only {flow / MASS_SCALE:.6f} of the mass can be routed through the mask"
        )
    plan = net.plan_units() / MASS_SCALE
    return float(np.sum(plan * C)), plan


def _squared_loss_tensor(Cx, Cy):
    # L[i, j, k, l] = (Cx[i, k] - Cy[j, l])^2
    return (Cx[:, None, :, None] - Cy[None, :, None, :]) ** 2


def _check_naive(Cx, Cy, P):
    Cx = np.asarray(Cx, dtype=float)
    Cy = np.asarray(Cy, dtype=float)
    P = np.asarray(P, dtype=float)
    n, m = P.shape
    if Cx.shape != (n, n) or Cy.shape != (m, m):
        raise ShapeMismatch(f"Cx {Cx.shape}, Cy {Cy.shape} incompatible with plan {P.shape}")
    if max(n, m) > MAX_NAIVE_SIDE:
        raise TooLarge(f"naive Gromov contraction is limited to {MAX_NAIVE_SIDE} points per side")
    return Cx, Cy, P


def naive_pseudo_cost(Cx, Cy, P_masked) -> np.ndarray:
    """``(L (x) P)_ij = sum_kl (Cx_ik - Cy_jl)^2 P_kl`` by explicit contraction."""
    Cx, Cy, P = _check_naive(Cx, Cy, P_masked)
    L = _squared_loss_tensor(Cx, Cy)
    return np.einsum("ijkl,kl->ij", L, P)


def naive_gw_objective(Cx, Cy, P_masked) -> float:
    """Literal ``sum_ijkl (Cx_ik - Cy_jl)^2 P_ij P_kl`` for an already-masked plan."""
    Cx, Cy, P = _check_naive(Cx, Cy, P_masked)
    L = _squared_loss_tensor(Cx, Cy)
    return float(np.einsum("ijkl,ij,kl->", L, P, P))


def permutation_gw_search(Cx, Cy) -> float:
    """Minimum squared-loss GW objective over the ``n!`` permutation couplings ``Perm / n``."""
    Cx = np.asarray(Cx, dtype=float)
    Cy = np.asarray(Cy, dtype=float)
    n = Cx.shape[0]
    if Cx.shape != (n, n) or Cy.shape != (n, n):
        raise ShapeMismatch("permutation search needs two square matrices of equal size")
    if n > MAX_PERM_SIDE:
        raise TooLarge(f"permutation search is limited to n <= {MAX_PERM_SIDE}")
    best = math.inf
    for perm in itertools.permutations(range(n)):
        P = np.zeros((n, n))
        P[np.arange(n), perm] = 1.0 / n
        best = min(best, naive_gw_objective(Cx, Cy, P))
    return best
