"""Entropic masked Wasserstein distance via masked Sinkhorn iterations.

Two solvers share one contract:

* :func:`solve_mwd` works on dual potentials ``(f, g)`` with masked
  log-sum-exp reductions and is the one to use in practice.
* :func:`solve_mwd_vanilla` runs the scaling iterations ``u <- a / (M*K) v``,
  ``v <- b / (M*K)^T u`` directly; it underflows for small ``epsilon`` and
  exists to cross-check the log-domain path.

Both start from zero potentials (unit scalings), update rows first, and
recover the plan as ``P_ij = M_ij exp((f_i + g_j - C_ij) / epsilon)`` with
exact zeros off the mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .core import (
    SolveReport,
    SolverConfig,
    _frozen,
    _masked_lse,
    as_cost,
    as_mask,
    as_prob_vec,
    validate_feasibility_inputs,
)
from .errors import Infeasible, NotConverged, NumericalUnderflow, ShapeMismatch

log = logging.getLogger(__name__)

INFEASIBLE_RESIDUAL = 1e-3
STALL_WINDOW = 100
STALL_IMPROVEMENT = 1e-12


@dataclass(frozen=True)
class DualPotentials:
    """Log-domain duals; scalings are ``u = exp(f / eps)``, ``v = exp(g / eps)``.

    Rows (columns) carrying zero mass are removed before iterating and get
    ``-inf`` here, matching their identically zero plan rows (columns).
    """

    f: np.ndarray
    g: np.ndarray


@dataclass
class MwdSolution:
    plan: np.ndarray
    distance: float
    report: SolveReport
    potentials: DualPotentials
    mask: np.ndarray
    epsilon: float
    regularized_value: float
    """Optimal value of ``<P, C> - eps * H(P)`` (dual objective at the returned duals)."""


def _prepare(C, M, a, b, cfg):
    C = as_cost(C)
    M = as_mask(M)
    a = as_prob_vec(a, "a")
    b = as_prob_vec(b, "b")
    validate_feasibility_inputs(M, a, b)
    if C.shape != M.shape:
        raise ShapeMismatch(f"cost {C.shape} and mask {M.shape} differ in shape")
    cfg = cfg if cfg is not None else SolverConfig()
    return C, M, a, b, cfg


def _restrict_to_support(M, a, b):
    """Drop zero-mass rows/columns; an orphaned row or column certifies infeasibility."""
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    Ms = M[np.ix_(rows, cols)]
    if not (Ms.any(axis=1).all() and Ms.any(axis=0).all()):
        raise Infeasible(
            "a row with positive mass can only reach zero-demand columns "
            "(or vice versa); the masked polytope is empty"
        )
    return rows, cols, Ms


def _dual_value(f, g, Ceps, M, a, b, eps):
    z = np.add(np.add.outer(f / eps, g / eps), -Ceps, where=M, out=np.zeros_like(Ceps))
    kernel_mass = np.exp(_masked_lse(z, M, None))
    return float(f @ a + g @ b - eps * kernel_mass)


def dual_objective(f, g, C, M, a, b, epsilon) -> float:
    """Dual objective ``<f,a> + <g,b> - eps <exp(f/eps), (M*K) exp(g/eps)>``.

    The kernel term is evaluated as ``exp(logsumexp)`` over unmasked entries.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    C = as_cost(C)
    M = np.asarray(M, dtype=bool)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if C.shape != M.shape or C.shape != (f.size, g.size) or a.size != f.size or b.size != g.size:
        raise ShapeMismatch("inconsistent shapes for dual_objective")
    return _dual_value(f, g, C / epsilon, M, a, b, epsilon)


def _residuals(P, a, b):
    return float(np.abs(P.sum(axis=1) - a).sum()), float(np.abs(P.sum(axis=0) - b).sum())


def _assemble(C, M, a, b, cfg, rows, cols, f_s, g_s, iterations, converged, trace, stalled_res):
    eps = cfg.epsilon
    n, m = M.shape
    Ms = M[np.ix_(rows, cols)]
    Cs = C[np.ix_(rows, cols)]
    logp = np.add(np.add.outer(f_s, g_s), -Cs, where=Ms, out=np.zeros_like(Cs))
    Ps = np.exp(logp / eps, where=Ms, out=np.zeros_like(Cs))
    P = np.zeros((n, m))
    P[np.ix_(rows, cols)] = Ps
    res_row, res_col = _residuals(P, a, b)

    if not converged:
        res = max(res_row, res_col)
        if res > INFEASIBLE_RESIDUAL and stalled_res is not None and stalled_res - res < STALL_IMPROVEMENT:
            raise Infeasible(
                f"marginal residual stalled at {res:.3e} after {iterations} iterations; "
                "the masked polytope is empty or numerically unreachable"
            )
        log.warning("masked Sinkhorn stopped at max_iter=%d (residual %.3e)", iterations, res)

    f = np.full(n, -np.inf)
    g = np.full(m, -np.inf)
    f[rows] = f_s
    g[cols] = g_s
    report = SolveReport(
        iterations=iterations,
        converged=converged,
        marginal_residual_row=res_row,
        marginal_residual_col=res_col,
        dual_trace=trace,
    )
    reg = _dual_value(f_s, g_s, Cs / eps, Ms, a[rows], b[cols], eps)
    return MwdSolution(
        plan=_frozen(P),
        distance=float(np.sum(P * C)),
        report=report,
        potentials=DualPotentials(_frozen(f), _frozen(g)),
        mask=M,
        epsilon=eps,
        regularized_value=reg,
    )


def _residual_of(f, g, Ceps, M, a, eps):
    # columns are exact right after a g-update; only the row residual moves
    P = np.exp(np.add(np.add.outer(f / eps, g / eps), -Ceps, where=M, out=np.zeros_like(Ceps)),
               where=M, out=np.zeros_like(Ceps))
    return float(np.abs(P.sum(axis=1) - a).sum())


def _index_lists(M):
    """CSR-style lists of unmasked column indices per row and row indices per column."""
    r_ptr = np.concatenate(([0], np.cumsum(M.sum(axis=1)))).astype(np.int64)
    r_idx = np.nonzero(M)[1].astype(np.int64)
    MT = np.ascontiguousarray(M.T)
    c_ptr = np.concatenate(([0], np.cumsum(MT.sum(axis=1)))).astype(np.int64)
    c_idx = np.nonzero(MT)[1].astype(np.int64)
    return r_ptr, r_idx, c_ptr, c_idx


@njit(cache=True)
def _sweeps(Ceps, r_ptr, r_idx, c_ptr, c_idx, log_a, log_b, eps, tol, f, g, n_sweeps):
    # f, g updated in place; returns (sweeps done, converged)
    n = f.shape[0]
    m = g.shape[0]
    inv = 1.0 / eps
    for s in range(n_sweeps):
        change = 0.0
        for i in range(n):
            zmax = -np.inf
            for p in range(r_ptr[i], r_ptr[i + 1]):
                j = r_idx[p]
                z = g[j] * inv - Ceps[i, j]
                if z > zmax:
                    zmax = z
            acc = 0.0
            for p in range(r_ptr[i], r_ptr[i + 1]):
                j = r_idx[p]
                acc += np.exp(g[j] * inv - Ceps[i, j] - zmax)
            new = eps * (log_a[i] - zmax - np.log(acc))
            change += abs(new - f[i])
            f[i] = new
        for j in range(m):
            zmax = -np.inf
            for p in range(c_ptr[j], c_ptr[j + 1]):
                i = c_idx[p]
                z = f[i] * inv - Ceps[i, j]
                if z > zmax:
                    zmax = z
            acc = 0.0
            for p in range(c_ptr[j], c_ptr[j + 1]):
                i = c_idx[p]
                acc += np.exp(f[i] * inv - Ceps[i, j] - zmax)
            g[j] = eps * (log_b[j] - zmax - np.log(acc))
        if change < tol:
            return s + 1, True
    return n_sweeps, False


def solve_mwd(C, M, a, b, cfg: Optional[SolverConfig] = None) -> MwdSolution:
    """Log-domain masked Sinkhorn.

    Alternates

    ``f_i <- eps log a_i - eps logsumexp_{j: M_ij=1} (g_j - C_ij) / eps``
    ``g_j <- eps log b_j - eps logsumexp_{i: M_ij=1} (f_i - C_ij) / eps``

    from ``f = g = 0`` until ``||f_prev - f||_1 < eps * tau`` (the log-scale
    version of the test ``||u_prev - u||_1 < tau`` on scalings) or
    ``cfg.max_iter`` sweeps.

    Returns
    -------
    MwdSolution
        ``distance`` is ``<P, C>`` without the entropy term.

    Raises
    ------
    Infeasible
        When the masked polytope is structurally empty, or when the marginal
        residual is still above ``1e-3`` at ``max_iter`` and has stopped
        improving over the last 100 sweeps.
    """
    C, M, a, b, cfg = _prepare(C, M, a, b, cfg)
    rows, cols, Ms = _restrict_to_support(M, a, b)
    eps = cfg.epsilon
    Ceps = C[np.ix_(rows, cols)] / eps
    as_, bs = a[rows], b[cols]
    log_a, log_b = np.log(as_), np.log(bs)

    lists = _index_lists(Ms)
    tol = eps * cfg.tau

    f = np.zeros(len(rows))
    g = np.zeros(len(cols))
    trace = None
    converged = False
    stalled_res = None
    it = 0
    if cfg.record_dual_trace:
        trace = [_dual_value(f, g, Ceps, Ms, as_, bs, eps)]
        while it < cfg.max_iter and not converged:
            done, converged = _sweeps(Ceps, *lists, log_a, log_b, eps, tol, f, g, 1)
            it += done
            trace.append(_dual_value(f, g, Ceps, Ms, as_, bs, eps))
            if it == cfg.max_iter - STALL_WINDOW:
                stalled_res = _residual_of(f, g, Ceps, Ms, as_, eps)
    else:
        first = max(cfg.max_iter - STALL_WINDOW, 0)
        if first:
            it, converged = _sweeps(Ceps, *lists, log_a, log_b, eps, tol, f, g, first)
            if not converged:
                stalled_res = _residual_of(f, g, Ceps, Ms, as_, eps)
        if not converged and it < cfg.max_iter:
            done, converged = _sweeps(Ceps, *lists, log_a, log_b, eps, tol, f, g, cfg.max_iter - it)
            it += done
    if not converged and stalled_res is None:
        stalled_res = np.inf
    return _assemble(C, M, a, b, cfg, rows, cols, f, g, it, converged, trace, stalled_res)


def solve_mwd_vanilla(C, M, a, b, cfg: Optional[SolverConfig] = None) -> MwdSolution:
    """Scaling-domain masked Sinkhorn (``v0 = 1``); same contract as :func:`solve_mwd`.

    The stopping test is ``||log u_prev - log u||_1 < tau``, the same test
    the log-domain solver applies, so both stop after the same sweep.

    Raises
    ------
    NumericalUnderflow
        If a kernel sum used as a divisor is zero or a scaling leaves the
        floating-point range.
    """
    C, M, a, b, cfg = _prepare(C, M, a, b, cfg)
    rows, cols, Ms = _restrict_to_support(M, a, b)
    eps = cfg.epsilon
    Cs = C[np.ix_(rows, cols)]
    as_, bs = a[rows], b[cols]
    K = np.exp(-Cs / eps, where=Ms, out=np.zeros_like(Cs))

    def _divide(num, den, side):
        if np.any(den == 0) or not np.all(np.isfinite(den)):
            raise NumericalUnderflow(
                f"masked kernel {side} sum underflowed at epsilon={eps:g}; use solve_mwd"
            )
        out = num / den
        if not np.all(np.isfinite(out)) or np.any(out == 0):
            raise NumericalUnderflow(f"{side} scaling left the floating-point range")
        return out

    u = np.ones(len(rows))
    v = np.ones(len(cols))
    trace = [] if cfg.record_dual_trace else None
    Ceps = Cs / eps
    if trace is not None:
        trace.append(_dual_value(np.zeros_like(u), np.zeros_like(v), Ceps, Ms, as_, bs, eps))
    converged = False
    stalled_res = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        u_prev = u
        u = _divide(as_, K @ v, "row")
        v = _divide(bs, K.T @ u, "column")
        if trace is not None:
            trace.append(_dual_value(eps * np.log(u), eps * np.log(v), Ceps, Ms, as_, bs, eps))
        if np.abs(np.log(u) - np.log(u_prev)).sum() < cfg.tau:
            converged = True
            break
        if it == cfg.max_iter - STALL_WINDOW:
            P = u[:, None] * K * v[None, :]
            stalled_res = float(np.abs(P.sum(axis=1) - as_).sum())
    if not converged and stalled_res is None:
        stalled_res = np.inf
    return _assemble(C, M, a, b, cfg, rows, cols, eps * np.log(u), eps * np.log(v),
                     it, converged, trace, stalled_res)


def mwd_gradient_wrt_cost(solution: MwdSolution) -> np.ndarray:
    """Gradient of the entropic optimal value with respect to the cost matrix.

    By the envelope argument this is just the optimal plan (zero off the mask).
    """
    if not solution.report.converged:
        raise NotConverged("gradient requested from a solve that did not converge")
    return np.array(solution.plan)
