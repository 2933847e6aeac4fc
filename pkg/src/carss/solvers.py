"""Baseline inverse solvers: minimum-norm family, regularized least squares,
and the FOCUSS iterative reweighting scheme.

All solvers take an average-referenced measurement vector and a lead-field
matrix and return a ``SourceEstimate`` carrying the full-length current
density vector plus provenance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SolverError
from .forward import LeadField, Measurement
from .geometry import _freeze

PINV_RCOND = 1e-10


def _as_matrix(K):
    return K.matrix if isinstance(K, LeadField) else np.asarray(K, dtype=float)


def _as_vector(phi):
    return phi.values if isinstance(phi, Measurement) else np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class SourceEstimate:
    """Solver output: current density vector plus provenance."""

    J: np.ndarray
    solver_id: str
    alpha: float | None = None
    iterations: int = 1
    residual: float = 0.0
    history: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "J", _freeze(np.asarray(self.J, dtype=float)))
        object.__setattr__(self, "history", tuple(self.history))

    def point_power(self):
        """Per-grid-point power: sum of squares over the 3 components."""
        return (self.J ** 2).reshape(-1, 3).sum(axis=1)


def _finish(J, solver_id, phi, Kmat, alpha=None, iterations=1, history=()):
    residual = float(np.linalg.norm(phi - Kmat @ J))
    return SourceEstimate(J=J, solver_id=solver_id, alpha=alpha,
                          iterations=iterations, residual=residual,
                          history=history)


@dataclass(frozen=True)
class WeightSpec:
    """Weighting matrix for the constrained minimum-norm family.

    ``kind`` is one of "identity", "column-norm-squared", "loreta".
    For the loreta kind the dense SPD matrix is carried in ``matrix``;
    for column-norm-squared only the diagonal is carried in ``diag``.
    """

    kind: str
    diag: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "column-norm-squared", "loreta"):
            raise ContractError("unknown weight kind %r" % self.kind)
        if self.diag is not None:
            object.__setattr__(self, "diag", _freeze(np.asarray(self.diag, dtype=float)))
        if self.matrix is not None:
            object.__setattr__(self, "matrix", _freeze(np.asarray(self.matrix, dtype=float)))


def identity_weight():
    return WeightSpec(kind="identity")


def column_norm_weight(K):
    """W = diag(||K_i||^2): the standard depth-compensating weighting."""
    cn2 = np.linalg.norm(_as_matrix(K), axis=0) ** 2
    return WeightSpec(kind="column-norm-squared", diag=cn2)


def loreta_weight(K, grid):
    """Laplacian-smoothness weighting W = B diag(||K_i||), symmetrized.

    B is the 6-neighbor graph Laplacian over grid points (degree minus
    adjacency), applied identically to each of the three components. The
    raw product is not symmetric, so it is symmetrized and ridged with
    ``eps = 1e-8 * trace / 3M`` to give an SPD weight.
    """
    Kmat = _as_matrix(K)
    npts = len(grid)
    index_of = {tuple(v): i for i, v in enumerate(grid.ijk)}
    lap = np.zeros((npts, npts))
    for i, v in enumerate(grid.ijk):
        for step in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            j = index_of.get((v[0] + step[0], v[1] + step[1], v[2] + step[2]))
            if j is not None:
                lap[i, i] += 1.0
                lap[i, j] -= 1.0
    big = np.kron(lap, np.eye(3))
    w = big * np.linalg.norm(Kmat, axis=0)[None, :]
    w = 0.5 * (w + w.T)
    eps = 1e-8 * np.trace(w) / w.shape[0]
    w[np.diag_indices_from(w)] += eps
    return WeightSpec(kind="loreta", matrix=w)


def grid_laplacian(grid):
    """6-neighbor graph Laplacian over grid points (one row per point)."""
    npts = len(grid)
    index_of = {tuple(v): i for i, v in enumerate(grid.ijk)}
    lap = np.zeros((npts, npts))
    for i, v in enumerate(grid.ijk):
        for step in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            j = index_of.get((v[0] + step[0], v[1] + step[1], v[2] + step[2]))
            if j is not None:
                lap[i, i] += 1.0
                lap[i, j] -= 1.0
    return lap


def weighted_min_norm(phi, K, weight=None):
    """Constrained weighted minimum norm: min J'WJ subject to KJ = phi.

    Solution ``J = W^-1 K' (K W^-1 K')^+ phi``. With W = I this is the
    classical minimum-norm estimate; with W = diag(||K_i||^2) the
    depth-weighted variant.
    """
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    if weight is None:
        weight = identity_weight()
    if weight.kind == "identity":
        winv_kt = Kmat.T
    elif weight.kind == "column-norm-squared":
        d = weight.diag
        if np.any(d <= 0):
            raise SolverError("weight diagonal not positive definite")
        winv_kt = Kmat.T / d[:, None]
    else:
        try:
            c, low = _cho_factor(weight.matrix)
        except np.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(weight.matrix))
            raise SolverError("weight matrix numerically singular",
                              condition=cond) from exc
        winv_kt = _cho_solve((c, low), Kmat.T)
    gram = Kmat @ winv_kt
    J = winv_kt @ (np.linalg.pinv(gram, rcond=PINV_RCOND) @ phi)
    return _finish(J, "wmne" if weight.kind == "column-norm-squared" else
                   ("loreta" if weight.kind == "loreta" else "mne"), phi, Kmat)


def _cho_factor(a):
    from scipy.linalg import cho_factor
    return cho_factor(a, lower=True)


def _cho_solve(cf, b):
    from scipy.linalg import cho_solve
    return cho_solve(cf, b)


def regularized_min_norm(phi, K, alpha=0.0):
    """Tikhonov-regularized minimum norm: J = K'(KK' + alpha I)^-1 phi."""
    if alpha < 0:
        raise ContractError("alpha must be >= 0")
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    gram = Kmat @ Kmat.T
    if alpha == 0.0:
        inv = np.linalg.pinv(gram, rcond=PINV_RCOND)
        J = Kmat.T @ (inv @ phi)
    else:
        n = gram.shape[0]
        J = Kmat.T @ np.linalg.solve(gram + alpha * np.eye(n), phi)
    return _finish(J, "sloreta", phi, Kmat, alpha=float(alpha))


def default_alpha_grid(K, count=40, lo=1e-6, hi=1e2):
    """Log-spaced candidates scaled by trace(KK')/N."""
    Kmat = _as_matrix(K)
    scale = float(np.einsum("ij,ij->", Kmat, Kmat)) / Kmat.shape[0]
    return np.geomspace(lo, hi, count) * scale


def select_alpha(phi, K, candidates=None):
    """Leave-one-channel-out cross-validation for the regularization value.

    For each candidate alpha, each channel is held out in turn, the solve
    runs on the remaining rows, and the held-out channel is predicted. The
    candidate minimizing the mean squared prediction error wins. Uses the
    exact algebraic shortcut for ridge LOO residuals:
    ``e_i = (phi_i - [H phi]_i) / (1 - H_ii)`` with ``H = G (G + aI)^-1``.
    """
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    n = Kmat.shape[0]
    if n < 8:
        raise ContractError("need at least 8 channels for cross-validation")
    if candidates is None:
        candidates = default_alpha_grid(K)
    candidates = np.asarray(list(candidates), dtype=float)
    if candidates.size == 0:
        raise ContractError("empty candidate list")
    gram = Kmat @ Kmat.T
    evals, evecs = np.linalg.eigh(gram)
    phi_t = evecs.T @ phi
    best_alpha, best_err = None, np.inf
    for a in candidates:
        shrink = evals / (evals + a)            # H = V diag(shrink) V'
        hphi = evecs @ (shrink * phi_t)
        hdiag = np.einsum("ij,j,ij->i", evecs, shrink, evecs)
        denom = 1.0 - hdiag
        if np.any(np.abs(denom) < 1e-14):
            continue
        err = float(np.mean(((phi - hphi) / denom) ** 2))
        if np.isfinite(err) and err < best_err:
            best_err, best_alpha = err, float(a)
    if best_alpha is None:
        raise SolverError("cross-validation failed for every candidate alpha")
    return best_alpha


def loo_cv_error(phi, K, alpha):
    """Direct leave-one-channel-out CV error (reference implementation)."""
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    errs = []
    for i in range(Kmat.shape[0]):
        keep = np.arange(Kmat.shape[0]) != i
        est = regularized_min_norm(phi[keep], Kmat[keep], alpha)
        errs.append((phi[i] - Kmat[i] @ est.J) ** 2)
    return float(np.mean(errs))


def focuss(phi, K, J0=None, max_iter=100, tol=1e-8):
    """Focal underdetermined system solver.

    Iterates ``C = diag(J_prev)``, ``q = (K C)^+ phi``, ``J = C q`` until
    ``||J - J_prev||^2 <= tol`` (absolute) or ``max_iter`` is reached.
    Entries that reach exactly zero stay zero. The pseudoinverse truncates
    singular values below ``PINV_RCOND`` relative to the largest.
    """
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    if max_iter < 1:
        raise ContractError("max_iter must be >= 1")
    if J0 is None:
        J = np.ones(Kmat.shape[1])
    else:
        J = np.asarray(J0, dtype=float).copy()
        if J.shape != (Kmat.shape[1],):
            raise ContractError("J0 length mismatch")
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        J_prev = J
        active = J_prev != 0.0
        KC = Kmat[:, active] * J_prev[active][None, :]
        q = np.linalg.pinv(KC, rcond=PINV_RCOND) @ phi
        J = np.zeros_like(J_prev)
        J[active] = J_prev[active] * q
        if not np.all(np.isfinite(J)):
            raise SolverError("non-finite values in FOCUSS iteration %d" % it,
                              estimate=_finish(J_prev, "focuss", phi, Kmat,
                                               iterations=it - 1, history=history))
        history.append(float(np.linalg.norm(phi - Kmat @ J)))
        if float(np.sum((J - J_prev) ** 2)) <= tol:
            break
    return _finish(J, "focuss", phi, Kmat, iterations=it, history=history)


def standardized_power(phi, K, alpha=None):
    """Resolution-standardized minimum-norm amplitude per column.

    ``s_j = |k_j' (G + alpha I)^-1 phi| / sqrt(k_j' (G + alpha I)^-1 k_j)``
    with ``G = K K'``. Downweights the depth bias of the plain minimum-norm
    amplitude; used to seed the restricted sparse solve.
    """
    Kmat = _as_matrix(K)
    phi = _as_vector(phi)
    gram = Kmat @ Kmat.T
    if alpha is None:
        alpha = 1e-6 * np.trace(gram) / gram.shape[0]
    ginv = np.linalg.inv(gram + alpha * np.eye(gram.shape[0]))
    num = np.abs(Kmat.T @ (ginv @ phi))
    den = np.sqrt(np.maximum(np.einsum("ji,jk,ki->i", Kmat, ginv, Kmat), 1e-300))
    return num / den
