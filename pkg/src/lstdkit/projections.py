"""Weighted and oblique projections, pseudo-inverses, reduced-rank regression."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import SingularCross, SingularGram

# 2-norm condition number above which a matrix counts as singular
SINGULAR_COND = 1e12
# singular values below PINV_RTOL * largest are treated as zero
PINV_RTOL = 1e-12


def as_weight_vector(xi):
    w = getattr(xi, "weights", xi)
    return np.asarray(w, dtype=np.float64)


def condition_number(a):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 1.0
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] == 0.0 or not np.all(np.isfinite(s)):
        return np.inf
    return float(s[0] / s[-1])


def is_singular(a):
    return not condition_number(a) <= SINGULAR_COND


def pinv(a):
    return np.linalg.pinv(np.asarray(a, dtype=np.float64), rcond=PINV_RTOL)


@dataclass(frozen=True, eq=False)
class WeightedProjector:
    """Xi-orthogonal projector onto the column space of ``basis``."""

    projector: np.ndarray
    weight: np.ndarray
    basis: np.ndarray
    coefficient_map: np.ndarray
    condition_number: float

    def __call__(self, v):
        return self.projector @ v

    def coefficients(self, v):
        """Coefficients c minimising ||basis c - v|| in the weighted norm."""
        return self.coefficient_map @ v


def weighted_projection(phi, xi):
    """Pi = Phi (Phi' Xi Phi)^-1 Phi' Xi.

    Raises SingularGram when the weighted Gram matrix is numerically singular.
    """
    phi = np.asarray(phi, dtype=np.float64)
    w = as_weight_vector(xi)
    weighted_t = phi.T * w
    gram = weighted_t @ phi
    cond = condition_number(gram)
    if not cond <= SINGULAR_COND:
        raise SingularGram(f"weighted Gram matrix has condition number {cond:.3g}")
    coef = np.linalg.solve(gram, weighted_t)
    return WeightedProjector(phi @ coef, w, phi, coef, cond)


@dataclass(frozen=True, eq=False)
class ObliqueProjector:
    """Projector onto C(onto_basis) along the orthogonal complement of
    C(orthogonal_to_basis)."""

    projector: np.ndarray
    onto_basis: np.ndarray
    orthogonal_to_basis: np.ndarray
    coefficient_map: np.ndarray

    def __call__(self, v):
        return self.projector @ v

    def coefficients(self, v):
        return self.coefficient_map @ v


def oblique_projection(x_basis, y_basis, use_pinv=False):
    """X (Y'X)^-1 Y', or X (Y'X)^+ Y' with ``use_pinv``."""
    x = np.asarray(x_basis, dtype=np.float64)
    y = np.asarray(y_basis, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    cross = y.T @ x
    if use_pinv:
        coef = pinv(cross) @ y.T
    else:
        if cross.shape[0] != cross.shape[1] or is_singular(cross):
            raise SingularCross(
                f"cross matrix Y'X of shape {cross.shape} is not invertible; "
                "pass use_pinv=True")
        coef = np.linalg.solve(cross, y.T)
    return ObliqueProjector(x @ coef, x, y, coef)


def complementarity_check(a, b, phi, rtol=PINV_RTOL):
    """Whether C(A Phi)^perp and C(B Phi) are complementary subspaces.

    Equivalent to Phi' A' B Phi having a trivial null space. Returns
    ``(ok, certificate)`` where the certificate is the smallest singular
    value of that matrix; ``ok`` requires it to exceed ``rtol`` times the
    largest one.
    """
    phi = np.asarray(phi, dtype=np.float64)
    m = (np.asarray(a) @ phi).T @ (np.asarray(b) @ phi)
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0:
        return True, np.inf
    cert = float(s[-1])
    return bool(s[0] > 0.0 and cert > rtol * s[0]), cert


class RrrResult(NamedTuple):
    f_k: np.ndarray
    f_full: np.ndarray
    spectrum: np.ndarray


def reduced_rank_regression(x, y, rank_k, xi=None):
    """Least squares X F ~ Y subject to rank(F) <= rank_k.

    Two-stage solution: the full fit F = X^+ Y, then truncation of the SVD
    of the fitted values X F. With ``xi`` the residual norm is Xi-weighted,
    which amounts to running the unweighted problem on Xi^1/2 X, Xi^1/2 Y.
    Zero weights simply zero the corresponding rows.
    """
    if rank_k < 0:
        raise ValueError("rank_k must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if xi is not None:
        root = np.sqrt(as_weight_vector(xi))[:, None]
        x = root * x
        y = root * y
    f_full = pinv(x) @ y
    _, spectrum, vt = np.linalg.svd(x @ f_full, full_matrices=False)
    if rank_k >= min(f_full.shape):
        return RrrResult(f_full.copy(), f_full, spectrum)
    v_k = vt[:rank_k].T
    f_k = f_full @ v_k @ v_k.T
    return RrrResult(f_k, f_full, spectrum)
