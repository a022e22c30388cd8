"""Normalized graph Laplacian, Chebyshev polynomial machinery, and a dense
eigendecomposition filtering path used as a test oracle.

The pipeline path never eigendecomposes: filters are evaluated through the
three-term Chebyshev recursion on the rescaled Laplacian. The oracle path
applies the same polynomial to the eigenvalues directly; both must agree to
floating-point accuracy, which the test suite asserts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ParameterError
from .popgraph import PopulationGraph

ANALYTIC_LAMBDA_MAX = 2.0  # upper bound on normalized-Laplacian eigenvalues


@dataclass
class LaplacianMatrix:
    """Symmetric N x N operator; kind 'normalized' (spectrum in [0, 2]) or
    'scaled' (spectrum in [-1, 1] given an exact lambda_max)."""

    matrix: np.ndarray | sp.spmatrix
    kind: str

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def __matmul__(self, other):
        return self.matrix @ other


class LambdaMaxEstimate(NamedTuple):
    value: float
    used_fallback: bool
    iterations: int


def normalized_laplacian(graph: PopulationGraph) -> LaplacianMatrix:
    """L = I - D^{-1/2} W D^{-1/2}; rows of isolated nodes equal identity rows.

    The inverse square-root degree of a zero-degree node is taken as 0, so the
    operator stays well-defined on highly disconnected graphs.
    """
    w = graph.adjacency("auto")
    n = graph.n_nodes
    if sp.issparse(w):
        d = np.asarray(w.sum(axis=1)).ravel()
    else:
        d = w.sum(axis=1)
    d_inv_sqrt = np.zeros_like(d)
    positive = d > 0
    d_inv_sqrt[positive] = 1.0 / np.sqrt(d[positive])
    if sp.issparse(w):
        d_half = sp.diags(d_inv_sqrt)
        lap = sp.identity(n, format="csr") - d_half @ w @ d_half
        lap = ((lap + lap.T) * 0.5).tocsr()
    else:
        lap = np.eye(n) - d_inv_sqrt[:, None] * w * d_inv_sqrt[None, :]
        lap = (lap + lap.T) * 0.5
    return LaplacianMatrix(matrix=lap, kind="normalized")


def laplacian_difference(graph: PopulationGraph, x, i: int) -> float:
    """Unnormalized difference form at node i: sum_j W_ij (x[i] - x[j]).

    Matches row i of (D - W) x; provided for verification against the matrix
    form, not used by the model path.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) != graph.n_nodes:
        raise ContractError(f"signal length {len(x)} != n_nodes {graph.n_nodes}")
    total = 0.0
    for u, v, w in zip(graph.edges_u, graph.edges_v, graph.weights):
        if u == i:
            total += w * (x[i] - x[v])
        elif v == i:
            total += w * (x[i] - x[u])
    return float(total)


def _offdiag_nonzeros(lap: LaplacianMatrix) -> int:
    if lap.is_sparse:
        m = lap.matrix - sp.diags(lap.matrix.diagonal())
        return int((m != 0).sum())
    m = lap.matrix - np.diag(np.diag(lap.matrix))
    return int(np.count_nonzero(m))


def estimate_lambda_max(
    lap: LaplacianMatrix, tol: float = 1e-9, max_iter: int = 1000
) -> LambdaMaxEstimate:
    """Largest eigenvalue of a normalized Laplacian by power iteration.

    The Rayleigh-quotient iteration stops once successive estimates agree to
    `tol` relative (stricter than the 1e-6 the callers rely on); the result is
    clamped into (0, 2]. Degenerate inputs (no edges, so the operator is the
    identity) and non-convergence fall back to the analytic bound 2 with
    `used_fallback` set.
    """
    if lap.kind != "normalized":
        raise ContractError(f"expected a normalized Laplacian, got kind {lap.kind!r}")
    if _offdiag_nonzeros(lap) == 0:
        return LambdaMaxEstimate(ANALYTIC_LAMBDA_MAX, True, 0)

    rng = np.random.default_rng(12345)  # fixed: estimates must be reproducible
    x = rng.standard_normal(lap.n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for it in range(1, max_iter + 1):
        y = lap.matrix @ x
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            return LambdaMaxEstimate(ANALYTIC_LAMBDA_MAX, True, it)
        new_estimate = float(x @ y)
        x = y / norm_y
        if it > 1 and abs(new_estimate - estimate) <= tol * max(abs(new_estimate), 1e-300):
            value = min(new_estimate, ANALYTIC_LAMBDA_MAX)
            if value <= 0.0:
                return LambdaMaxEstimate(ANALYTIC_LAMBDA_MAX, True, it)
            return LambdaMaxEstimate(value, False, it)
        estimate = new_estimate
    return LambdaMaxEstimate(ANALYTIC_LAMBDA_MAX, True, max_iter)


def scale_laplacian(lap: LaplacianMatrix, lambda_max: float) -> LaplacianMatrix:
    """Rescale to the Chebyshev domain: Ls = (2 / lambda_max) L - I."""
    if lap.kind != "normalized":
        raise ContractError(f"expected a normalized Laplacian, got kind {lap.kind!r}")
    if lambda_max <= 0:
        raise ParameterError(f"lambda_max must be > 0, got {lambda_max}")
    factor = 2.0 / lambda_max
    if lap.is_sparse:
        scaled = (lap.matrix * factor - sp.identity(lap.n, format="csr")).tocsr()
    else:
        scaled = lap.matrix * factor - np.eye(lap.n)
    return LaplacianMatrix(matrix=scaled, kind="scaled")


@dataclass
class ChebyshevBasis:
    """Terms [T_0(Ls) X, ..., T_K(Ls) X]; T_0 X is X itself."""

    terms: list[np.ndarray]
    order: int

    def __post_init__(self):
        if len(self.terms) != self.order + 1:
            raise ContractError(
                f"basis has {len(self.terms)} terms for order {self.order}"
            )


def chebyshev_basis(scaled: LaplacianMatrix, x, order: int) -> ChebyshevBasis:
    """Three-term recursion: T_0 X = X, T_1 X = Ls X, T_k X = 2 Ls T_{k-1} X - T_{k-2} X."""
    if scaled.kind != "scaled":
        raise ContractError(f"expected a scaled Laplacian, got kind {scaled.kind!r}")
    if order < 0:
        raise ParameterError(f"order must be >= 0, got {order}")
    x = np.asarray(x, dtype=np.float64)
    terms = [x.copy()]
    if order >= 1:
        terms.append(scaled.matrix @ x)
    for _ in range(2, order + 1):
        terms.append(2.0 * (scaled.matrix @ terms[-1]) - terms[-2])
    return ChebyshevBasis(terms=terms, order=order)


def chebyshev_weighted_sum(scaled: LaplacianMatrix, parts: list[np.ndarray]) -> np.ndarray:
    """Clenshaw evaluation of sum_k T_k(Ls) B_k for per-order matrices B_k.

    Used by backpropagation, where each Chebyshev order carries its own
    upstream gradient; one pass costs the same as building a basis.
    """
    order = len(parts) - 1
    if order < 0:
        raise ContractError("need at least one part")
    if order == 0:
        return parts[0].copy()
    b1 = np.zeros_like(parts[0])
    b2 = np.zeros_like(parts[0])
    for k in range(order, 0, -1):
        b1, b2 = parts[k] + 2.0 * (scaled.matrix @ b1) - b2, b1
    return parts[0] + scaled.matrix @ b1 - b2


def spectral_filter_oracle(
    lap: LaplacianMatrix, x, theta, lambda_max: float | None = None
) -> np.ndarray:
    """Filter a signal through the eigendecomposition path (test-only).

    Computes U g(Lambda) U^T x where g applies the Chebyshev polynomial with
    coefficients theta to the rescaled eigenvalues 2 lambda / lambda_max - 1.
    Exact up to eigensolver precision; pass the same lambda_max the recursion
    path uses when comparing the two.
    """
    if lap.kind != "normalized":
        raise ContractError(f"expected a normalized Laplacian, got kind {lap.kind!r}")
    theta = np.asarray(theta, dtype=np.float64)
    if lambda_max is None:
        lambda_max = estimate_lambda_max(lap).value
    eigvals, eigvecs = np.linalg.eigh(lap.dense())
    lam_tilde = 2.0 * eigvals / lambda_max - 1.0

    gain = np.full_like(lam_tilde, theta[0])
    if len(theta) > 1:
        t_prev = np.ones_like(lam_tilde)
        t_cur = lam_tilde.copy()
        gain = gain + theta[1] * t_cur
        for k in range(2, len(theta)):
            t_prev, t_cur = t_cur, 2.0 * lam_tilde * t_cur - t_prev
            gain = gain + theta[k] * t_cur

    x = np.asarray(x, dtype=np.float64)
    spectral = eigvecs.T @ x
    if spectral.ndim == 1:
        return eigvecs @ (gain * spectral)
    return eigvecs @ (gain[:, None] * spectral)
