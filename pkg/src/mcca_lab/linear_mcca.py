"""Linear multiway CCA.

The stacked projection vector ``v`` maximizes the inter-set correlation of
the N projected views.  It solves ``R v = eigenvalue * D v`` where ``R`` holds
every cross-covariance block and ``D`` only the diagonal ones; the achieved
ISC of a component relates to its eigenvalue by
``eigenvalue = (N - 1) * isc + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .core import CovarianceBlocks, ViewCollection, cross_covariance, standardize
from .errors import DegenerateInputError, InvalidConfigError, NumericalError, ShapeError

DEFAULT_LAG = 40


@dataclass(frozen=True)
class MccaSolution:
    transforms: list
    eigenvalues: np.ndarray
    subspace_dim: int
    regularization_eps: float

    @property
    def view_dims(self) -> list[int]:
        return [V.shape[0] for V in self.transforms]

    @property
    def n_views(self) -> int:
        return len(self.transforms)

    def implied_isc(self) -> np.ndarray:
        """ISC per component implied by the eigenvalues."""
        return (self.eigenvalues - 1.0) / (self.n_views - 1)

    def stacked(self) -> np.ndarray:
        return np.vstack(self.transforms)


def build_block_matrices(cov: CovarianceBlocks) -> tuple[np.ndarray, np.ndarray]:
    R = np.block(cov.blocks)
    R = 0.5 * (R + R.T)
    D = np.zeros_like(R)
    edges = np.concatenate([[0], np.cumsum(cov.dims)])
    for i in range(cov.n_views):
        s = slice(edges[i], edges[i + 1])
        D[s, s] = R[s, s]
    return R, D


def default_eps(D: np.ndarray) -> float:
    return 1e-6 * np.trace(D) / D.shape[0]


def solve_mcca(R, D, view_dims: Sequence[int], subspace_dim: int = 1,
               eps: float | None = None) -> MccaSolution:
    """Top ``subspace_dim`` eigenpairs of ``R v = eigenvalue (D + eps I) v``.

    ``eps=None`` picks ``1e-6 * trace(D) / D_N``.  The problem is reduced to a
    standard symmetric one with the Cholesky factor ``L`` of ``D + eps I``:
    ``L^-1 R L^-T u = eigenvalue u`` and ``v = L^-T u``, so the returned
    columns are orthonormal in the ``D + eps I`` inner product.
    """
    R = np.asarray(R, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    DN = R.shape[0]
    if R.shape != (DN, DN) or D.shape != (DN, DN):
        raise ShapeError(f"R and D must be square and equal in shape, got {R.shape} and {D.shape}")
    if sum(view_dims) != DN:
        raise ShapeError(f"view dims {list(view_dims)} do not sum to {DN}")
    if not 1 <= subspace_dim <= DN:
        raise InvalidConfigError(f"subspace_dim must lie in [1, {DN}], got {subspace_dim}")
    if eps is None:
        eps = default_eps(D)
    if eps < 0:
        raise InvalidConfigError(f"eps must be non-negative, got {eps}")

    Dreg = D + eps * np.eye(DN)
    try:
        L = linalg.cholesky(Dreg, lower=True)
    except linalg.LinAlgError:
        L = None
    if L is None or _pivot_ratio(L) < 1e-14:
        evals = np.linalg.eigvalsh(Dreg)
        cond = np.inf if evals[0] <= 0 else evals[-1] / evals[0]
        raise NumericalError(
            f"within-set covariance is not positive definite after eps={eps:.3g} "
            f"(min eigenvalue {evals[0]:.3g}, condition {cond:.3g}); increase eps")

    tmp = linalg.solve_triangular(L, R, lower=True)
    C = linalg.solve_triangular(L, tmp.T, lower=True)
    C = 0.5 * (C + C.T)
    evals, U = linalg.eigh(C, subset_by_index=[DN - subspace_dim, DN - 1])
    order = np.argsort(evals)[::-1]
    evals, U = evals[order], U[:, order]
    V = linalg.solve_triangular(L.T, U, lower=False)

    first = view_dims[0]
    for k in range(subspace_dim):
        # first coefficient of the first view; fall back to its largest entry
        head = V[:first, k]
        pivot = head[0] if abs(head[0]) > 1e-14 else head[np.argmax(np.abs(head))]
        if pivot < 0:
            V[:, k] = -V[:, k]

    edges = np.concatenate([[0], np.cumsum(view_dims)])
    transforms = [V[edges[i]:edges[i + 1]].copy() for i in range(len(view_dims))]
    return MccaSolution(transforms=transforms, eigenvalues=evals,
                        subspace_dim=subspace_dim, regularization_eps=float(eps))


def _pivot_ratio(L: np.ndarray) -> float:
    diag = np.abs(np.diag(L))
    if diag.max() == 0:
        return 0.0
    return float((diag.min() / diag.max()) ** 2)


def fit_mcca(views, subspace_dim: int = 1, eps: float | None = None,
             standardize_views: bool = True) -> MccaSolution:
    views = ViewCollection.of(views)
    if standardize_views:
        views = ViewCollection(tuple(standardize(v) for v in views))
    R, D = build_block_matrices(cross_covariance(views))
    return solve_mcca(R, D, views.dims, subspace_dim=subspace_dim, eps=eps)


def compute_isc(projections: Sequence) -> np.ndarray | float:
    """Inter-set correlation ``r_B / ((N - 1) r_W)`` per component.

    ``r_B`` sums cross-covariances over all ordered pairs ``i != j`` and
    ``r_W`` sums the self-covariances.  1-D inputs give a scalar.
    """
    arrays = [np.asarray(p, dtype=np.float64) for p in projections]
    scalar = all(a.ndim == 1 for a in arrays)
    arrays = [a[:, None] if a.ndim == 1 else a for a in arrays]
    N = len(arrays)
    if N < 2:
        raise InvalidConfigError("ISC needs at least two projections")
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"projections disagree in shape: {sorted(shapes)}")
    T = arrays[0].shape[0]
    if T < 2:
        raise ShapeError("projections need at least two samples")
    centered = [a - a.mean(axis=0) for a in arrays]
    total = np.sum(centered, axis=0)
    r_w = sum(np.sum(c * c, axis=0) for c in centered) / (T - 1)
    r_b = np.sum(total * total, axis=0) / (T - 1) - r_w
    if np.any(r_w <= 0):
        raise DegenerateInputError("projections have zero within-set variance")
    isc = r_b / ((N - 1) * r_w)
    return float(isc[0]) if scalar else isc


def transform_views(views, sol: MccaSolution) -> ViewCollection:
    views = ViewCollection.of(views)
    if views.dims != sol.view_dims:
        raise ShapeError(f"views have channel counts {views.dims}, solution expects {sol.view_dims}")
    return ViewCollection(tuple(v.with_data(v.data @ V) for v, V in zip(views, sol.transforms)))
