"""Shared numeric types, validation, masked log-sum-exp and cost construction.

Arrays are plain ``numpy.ndarray`` values; the helpers here validate and
coerce them. Masks are stored densely as boolean arrays. Masked positions are
always *excluded* from reductions (``where=``) instead of being encoded as
``-inf``, so no ``inf - inf`` can leak into the iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EmptyMask,
    InvalidInput,
    NegativeCost,
    ShapeMismatch,
    ZeroRow,
    ZeroRowOrColumn,
)

PROB_SUM_TOL = 1e-12
NORM_FLOOR = 1e-12

COS_SNAP = 64 * np.finfo(float).eps
DEFAULT_EPSILON = 0.05
DEFAULT_TAU = 1e-6
DEFAULT_MAX_ITER = 10000


@dataclass(frozen=True)
class SolverConfig:
    """Entropic solver settings.

    ``tau`` is the stopping threshold on the L1 change of the row scaling
    between two outer iterations (measured in log scale, see
    :func:`maskot.sinkhorn.solve_mwd`).
    """

    epsilon: float = DEFAULT_EPSILON
    tau: float = DEFAULT_TAU
    max_iter: int = DEFAULT_MAX_ITER
    record_dual_trace: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidInput(f"epsilon must be positive, got {self.epsilon}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidInput(f"tau must be positive, got {self.tau}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidInput(f"max_iter must be a positive integer, got {self.max_iter}")

    def to_dict(self) -> dict:
        return {
            "epsilon": float(self.epsilon),
            "tau": float(self.tau),
            "max_iter": int(self.max_iter),
            "record_dual_trace": bool(self.record_dual_trace),
        }


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    marginal_residual_row: float
    marginal_residual_col: float
    dual_trace: Optional[list] = None
    outer_iterations: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def marginal_residual(self) -> float:
        return max(self.marginal_residual_row, self.marginal_residual_col)


def _frozen(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


def as_prob_vec(values, name: str = "marginal") -> np.ndarray:
    """Validate and return a probability vector as a read-only float array."""
    p = np.array(values, dtype=float).reshape(-1)
    if p.size == 0:
        raise InvalidInput(f"{name} is empty")
    if not np.all(np.isfinite(p)):
        raise InvalidInput(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise InvalidInput(f"{name} has negative entries")
    if not np.any(p > 0):
        raise InvalidInput(f"{name} has no positive entry")
    if abs(p.sum() - 1.0) > PROB_SUM_TOL:
        raise InvalidInput(f"{name} sums to {p.sum()!r}, expected 1")
    return _frozen(p)


def uniform(n: int) -> np.ndarray:
    return _frozen(np.full(n, 1.0 / n))


def as_mask(mask) -> np.ndarray:
    """Coerce a 0/1 matrix to a read-only boolean array.

    Only values exactly 0 or 1 are accepted. Row/column coverage is checked
    by :func:`validate_feasibility_inputs`, not here.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {m.shape}")
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise InvalidInput("mask entries must be 0 or 1")
        m = m != 0
    return _frozen(m.copy())


def as_cost(cost) -> np.ndarray:
    c = np.array(cost, dtype=float)
    if c.ndim != 2:
        raise ShapeMismatch(f"cost must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInput("cost has non-finite entries")
    return c


def validate_feasibility_inputs(M, a, b) -> None:
    """Check shapes and the no-empty-row/column condition on the mask.

    This is only a necessary condition for the masked polytope to be
    non-empty; true infeasibility is detected by the solvers.

    Raises
    ------
    ShapeMismatch
        If ``M`` is not ``len(a) x len(b)``.
    ZeroRowOrColumn
        If some mask row or column has no one.
    """
    M = np.asarray(M)
    if M.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {M.shape}")
    n, m = M.shape
    if len(a) != n or len(b) != m:
        raise ShapeMismatch(f"mask is {n}x{m} but marginals have lengths {len(a)} and {len(b)}")
    Mb = M != 0
    empty_rows = np.flatnonzero(~Mb.any(axis=1))
    if empty_rows.size:
        raise ZeroRowOrColumn(f"mask row {int(empty_rows[0])} is all zeros")
    empty_cols = np.flatnonzero(~Mb.any(axis=0))
    if empty_cols.size:
        raise ZeroRowOrColumn(f"mask column {int(empty_cols[0])} is all zeros")


def masked_logsumexp(z, mask, axis=None):
    """``log(sum(exp(z)))`` restricted to the positions where ``mask`` is true.

    The shift-by-max trick is applied over the unmasked entries only and
    ``exp`` is never evaluated at masked positions.

    Parameters
    ----------
    z : array_like
        Values (any finite reals at unmasked positions; masked entries are
        ignored and may hold anything, including ``nan``).
    mask : array_like of bool, same shape as ``z``
    axis : int, optional
        Reduce along this axis; ``None`` reduces over everything.

    Raises
    ------
    EmptyMask
        If a reduction has no unmasked entry.
    """
    z = np.asarray(z, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if z.shape != mask.shape:
        raise ShapeMismatch(f"values {z.shape} and mask {mask.shape} differ in shape")
    if not np.all(mask.any(axis=axis)):
        raise EmptyMask("logsumexp over an all-masked slice")
    out = _masked_lse(z, mask, axis)
    return float(out) if np.ndim(out) == 0 else out


def _masked_lse(z: np.ndarray, mask: np.ndarray, axis) -> np.ndarray:
    # no validation; callers guarantee every slice has an unmasked entry
    zmax = np.max(z, axis=axis, where=mask, initial=-np.inf, keepdims=True)
    shifted = np.subtract(z, zmax, where=mask, out=np.zeros_like(z))
    e = np.exp(shifted, where=mask, out=np.zeros_like(z))
    s = e.sum(axis=axis, keepdims=True)
    res = zmax + np.log(s)
    if axis is None:
        return res.reshape(())
    return np.squeeze(res, axis=axis)


def cosine_cost(X_source, X_target) -> np.ndarray:
    """Cosine dissimilarity ``C_ij = (1 - cos(xs_i, xt_j)) / 2``.

    Raises
    ------
    ZeroRow
        If a row of either matrix has norm below ``1e-12``.
    """
    Xs = np.asarray(X_source, dtype=float)
    Xt = np.asarray(X_target, dtype=float)
    if Xs.ndim != 2 or Xt.ndim != 2 or Xs.shape[1] != Xt.shape[1]:
        raise ShapeMismatch(f"embedding shapes {Xs.shape} and {Xt.shape} are incompatible")
    ns = np.linalg.norm(Xs, axis=1)
    nt = np.linalg.norm(Xt, axis=1)
    for label, norms in (("source", ns), ("target", nt)):
        bad = np.flatnonzero(norms < NORM_FLOOR)
        if bad.size:
            raise ZeroRow(f"{label} embedding row {int(bad[0])} has zero norm")
    cos = (Xs / ns[:, None]) @ (Xt / nt[:, None]).T
    # rounding can push |cos| a hair past 1
    C = 0.5 * (1.0 - np.clip(cos, -1.0, 1.0))
    # parallel rows leave a few ulps of noise; zero it so max-normalization
    # cannot blow it up to 2
    C[C < COS_SNAP] = 0.0
    return C


def normalize_cost(C) -> np.ndarray:
    """Scale a nonnegative cost so that its maximum is 2 (``2 C / max C``).

    An all-zero cost is returned unchanged.
    """
    C = as_cost(C)
    if np.any(C < 0):
        raise NegativeCost("normalize_cost expects a nonnegative cost matrix")
    cmax = C.max()
    if cmax <= 0:
        return C
    return 2.0 * (C / cmax)


def sq_euclidean_cost(X_source, X_target) -> np.ndarray:
    Xs = np.asarray(X_source, dtype=float)
    Xt = np.asarray(X_target, dtype=float)
    if Xs.ndim != 2 or Xt.ndim != 2 or Xs.shape[1] != Xt.shape[1]:
        raise ShapeMismatch(f"embedding shapes {Xs.shape} and {Xt.shape} are incompatible")
    d = Xs[:, None, :] - Xt[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)
