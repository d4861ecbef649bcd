"""Regularised variants of LSTD.

All schemes operate on an :class:`~lstdkit.estimators.LstdSystem`, so the
same code serves design and sample form. Sample systems carry weights
1/(N-1), which keeps ``beta`` on the same scale as in design form.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .estimators import (
    WeightEstimate,
    _factored,
    _solve,
    lds_from_system,
    solve_lstd,
)
from .exceptions import ConfigError, SingularGram, SingularSystem, Unsupported
from .mrp import FeatureMap
from .projections import (
    SINGULAR_COND,
    as_weight_vector,
    condition_number,
    reduced_rank_regression,
)

log = logging.getLogger(__name__)

SCHEMES = (
    "l2_fixpoint", "l2_galerkin_system", "l2_direct",
    "rank_constraint", "pca_baseline", "greedy_selection",
)
# named for forward compatibility only
RESERVED_SCHEMES = ("l1_fixpoint", "lasso", "dantzig")

_L2 = ("l2_fixpoint", "l2_galerkin_system", "l2_direct")
_RANKED = ("rank_constraint", "pca_baseline")


@dataclass(frozen=True)
class RegularizationSpec:
    scheme: str
    beta: float | None = None
    rank: int | None = None
    budget: int | None = None

    def __post_init__(self):
        if self.scheme in RESERVED_SCHEMES:
            raise Unsupported(f"regularization scheme {self.scheme!r} is not implemented")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown regularization scheme {self.scheme!r}")
        if self.scheme in _L2:
            if self.beta is None or not float(self.beta) >= 0.0:
                raise ConfigError(f"{self.scheme}: 'beta' must be a number >= 0")
        elif self.scheme in _RANKED:
            if self.rank is None or int(self.rank) != self.rank or self.rank < 0:
                raise ConfigError(f"{self.scheme}: 'rank' must be an integer >= 0")
        elif self.budget is None or int(self.budget) != self.budget or self.budget < 1:
            raise ConfigError(f"{self.scheme}: 'budget' must be an integer >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scheme = d.pop("scheme", None)
        if scheme is None:
            raise ConfigError("regularization spec needs a 'scheme'")
        unknown = set(d) - {"beta", "rank", "budget"}
        if unknown:
            raise ConfigError(f"unknown regularization fields: {sorted(unknown)}")
        return cls(scheme, **d)

    def to_dict(self):
        out = {"scheme": self.scheme}
        for key in ("beta", "rank", "budget"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out

    @property
    def estimator_id(self):
        return f"regularized:{self.scheme}"

    def check_dimension(self, n_features):
        if self.rank is not None and self.rank > n_features:
            raise ConfigError(f"rank {self.rank} exceeds feature dimension {n_features}")
        if self.budget is not None and self.budget > n_features:
            raise ConfigError(f"budget {self.budget} exceeds feature dimension {n_features}")


def _ridge(a, b, beta, estimator_id):
    k = a.shape[0]
    if beta == 0.0:
        return _solve(a, b, estimator_id, beta=0.0)
    return _solve(a + beta * np.eye(k), b, estimator_id, beta=float(beta))


def l2_fixpoint(system, beta):
    """Ridge penalty inside the fixpoint problem: (A + beta I)^-1 b."""
    return _ridge(system.cross, system.moment, float(beta), "regularized:l2_fixpoint")


def _ridge_lstsq(m, c, beta, estimator_id):
    """argmin ||M w - c||^2 + beta ||w||^2 as a stacked least-squares problem."""
    k = m.shape[1]
    if beta > 0.0:
        m_aug = np.vstack([m, np.sqrt(beta) * np.eye(k)])
        c_aug = np.concatenate([c, np.zeros(k)])
    else:
        m_aug, c_aug = m, c
    cond = condition_number(m_aug)
    if not cond <= SINGULAR_COND:
        raise SingularSystem(
            f"{estimator_id}: system matrix condition number {cond:.3g} exceeds "
            f"{SINGULAR_COND:.0e}")
    w, *_ = np.linalg.lstsq(m_aug, c_aug, rcond=None)
    resid = float(np.max(np.abs(m.T @ (m @ w - c) + beta * w), initial=0.0))
    return WeightEstimate(w, estimator_id,
                          {"condition_number": cond, "residual": resid, "beta": float(beta)})


def l2_galerkin_system(system, beta):
    """Ridge on the Galerkin system Phi (I - gamma F) w = Phi q, Xi-weighted.

    With Xi^1/2 Phi = Q R the objective is ||M w - c||^2 + beta ||w||^2 for the
    factored LSTD pair (M, c), which avoids forming F or squaring the Gram.
    """
    cond = condition_number(system.gram)
    if not cond <= SINGULAR_COND:
        raise SingularGram(f"feature Gram matrix has condition number {cond:.3g}")
    m, c = _factored(system)
    return _ridge_lstsq(m, c, float(beta), "regularized:l2_galerkin_system")


def l2_direct(system, beta):
    """Ridge on the already-reduced k x k system A w = b: (A'A + beta I)^-1 A'b."""
    return _ridge_lstsq(system.cross, system.moment, float(beta), "regularized:l2_direct")


def rank_constrained_model(system, rank_k):
    """Best rank-``rank_k`` transition model F_k and the unconstrained q."""
    _, q = lds_from_system(system)
    f_k, _, spectrum = reduced_rank_regression(system.x, system.y, rank_k, system.weights)
    return f_k, q, spectrum


def rank_residual(system, f):
    """||Phi F - P Phi||_Xi (Frobenius, weighted rows)."""
    diff = system.x @ f - system.y
    return float(np.sqrt(np.sum(system.weights[:, None] * diff ** 2)))


def rank_regularized_lds(system, rank_k):
    """LDS solution with rank(F) <= rank_k; returns ``(F_k, q, estimate)``.

    Only F is constrained; q keeps its least-squares value. A singular
    I - gamma F_k raises SingularSystem.
    """
    if not 0 <= rank_k <= system.n_features:
        raise ValueError("rank_k must lie in [0, feature dimension]")
    f_k, q, spectrum = rank_constrained_model(system, rank_k)
    k = q.shape[0]
    est = _solve(np.eye(k) - system.gamma * f_k, q, "regularized:rank_constraint",
                 rank=int(rank_k), model_residual=rank_residual(system, f_k))
    return f_k, q, est


def _pca_basis(x, weights, rank_k):
    _, _, vt = np.linalg.svd(np.sqrt(weights)[:, None] * x, full_matrices=False)
    return vt[:rank_k].T


def pca_baseline(fmap, xi, rank_k):
    """Features Phi V_k V_k' from the SVD of Xi^1/2 Phi; ignores the dynamics."""
    phi = fmap.phi if isinstance(fmap, FeatureMap) else np.asarray(fmap, dtype=np.float64)
    if not 0 <= rank_k <= phi.shape[1]:
        raise ValueError("rank_k must lie in [0, feature dimension]")
    v_k = _pca_basis(phi, as_weight_vector(xi), rank_k)
    return FeatureMap(phi @ v_k @ v_k.T)


def pca_lstd(system, rank_k):
    """LSTD on the rank-``rank_k`` PCA subspace, expressed in the original basis."""
    if not 0 <= rank_k <= system.n_features:
        raise ValueError("rank_k must lie in [0, feature dimension]")
    v_k = _pca_basis(system.x, system.weights, rank_k)
    if rank_k == 0:
        return WeightEstimate(np.zeros(system.n_features), "regularized:pca_baseline",
                              {"condition_number": 1.0, "residual": 0.0, "rank": 0})
    inner = solve_lstd(system.transformed(v_k), "regularized:pca_baseline")
    return WeightEstimate(v_k @ inner.w, inner.estimator_id,
                          {**inner.diagnostics, "rank": int(rank_k)})


def residual_correlations(system, selected, w_selected):
    """|x_j' W delta| / ||x_j||_W for every column, delta the current TD error."""
    if len(selected):
        delta = system.columns(selected).td_error(w_selected)
    else:
        delta = system.rewards
    num = np.abs((system.x.T * system.weights) @ delta)
    norms = np.sqrt((system.weights[:, None] * system.x ** 2).sum(axis=0))
    out = np.zeros_like(num)
    nz = norms > 0
    out[nz] = num[nz] / norms[nz]
    return out


def greedy_feature_selection(system, budget):
    """Greedy forward selection by correlation with the LSTD residual.

    Each round adds the unused column most correlated with the current TD
    error and refits LSTD on the selection. Columns that make the system
    singular are skipped. Returns ``(selected, estimate)``; the estimate's
    ``w`` has full length with zeros on unselected columns.
    """
    k = system.n_features
    if not 1 <= budget <= k:
        raise ValueError("budget must lie in [1, feature dimension]")
    selected, rejected = [], []
    w_sel = np.zeros(0)
    fit = None
    while len(selected) < budget:
        corr = residual_correlations(system, selected, w_sel)
        corr[selected + rejected] = -np.inf
        if not np.isfinite(corr).any():
            break
        j = int(np.argmax(corr))
        try:
            fit = solve_lstd(system.columns(selected + [j]), "regularized:greedy_selection")
        except SingularSystem:
            log.info("greedy selection: column %d makes the system singular, skipped", j)
            rejected.append(j)
            continue
        selected.append(j)
        w_sel = fit.w
    if len(selected) < budget:
        log.warning("greedy selection stopped at %d of %d columns", len(selected), budget)
    w = np.zeros(k)
    w[selected] = w_sel
    diag = dict(fit.diagnostics) if fit is not None else {"condition_number": 1.0, "residual": 0.0}
    diag.update(selected=list(selected), skipped=list(rejected))
    return selected, WeightEstimate(w, "regularized:greedy_selection", diag)


def apply_regularizer(system, spec):
    """Dispatch a :class:`RegularizationSpec` to its scheme."""
    spec.check_dimension(system.n_features)
    if spec.scheme == "l2_fixpoint":
        return l2_fixpoint(system, spec.beta)
    if spec.scheme == "l2_galerkin_system":
        return l2_galerkin_system(system, spec.beta)
    if spec.scheme == "l2_direct":
        return l2_direct(system, spec.beta)
    if spec.scheme == "rank_constraint":
        return rank_regularized_lds(system, spec.rank)[2]
    if spec.scheme == "pca_baseline":
        return pca_lstd(system, spec.rank)
    return greedy_feature_selection(system, spec.budget)[1]
