"""LSTD and its relatives, in design form (exact model) and sample form.

Every continuing-chain estimator is built on an :class:`LstdSystem`, a
weighted regression of current-state features ``x`` against successor
features ``y`` and rewards. In design form the rows are the states, the
weights are the stationary weights and ``y = P Phi``. In sample form the
rows are the first N-1 trajectory steps with uniform weights and ``y`` is
the next row of the trajectory; the final sample, whose successor was never
observed, contributes no row.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .exceptions import MaxItersExceeded, MissingAltSample, SingularGram, SingularSystem
from .mrp import FeatureMap, episodic_matrices, exact_value, stationary_weights
from .projections import (
    SINGULAR_COND,
    as_weight_vector,
    condition_number,
    pinv,
    weighted_projection,
)

# expected TD stops early once the window displacement has not shrunk for
# TD_PATIENCE windows while within TD_FLOOR_FACTOR of the tolerance (rounding floor)
TD_PATIENCE = 5
TD_FLOOR_FACTOR = 1e3

ESTIMATOR_IDS = (
    "lstd_design", "lstd_sample", "lstd_pinv", "brm_design", "brm_sample",
    "lds", "td_iterate", "episodic", "bayes_map",
)


@dataclass(frozen=True, eq=False)
class WeightEstimate:
    w: np.ndarray
    estimator_id: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True).reshape(-1)
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    def value(self, phi):
        phi = phi.phi if isinstance(phi, FeatureMap) else np.asarray(phi)
        return phi @ self.w

    def to_dict(self):
        diag = {}
        for key, val in self.diagnostics.items():
            if isinstance(val, np.generic):
                val = val.item()
            diag[key] = val
        return {"estimator_id": self.estimator_id, "w": self.w.tolist(), "diagnostics": diag}


@dataclass(frozen=True, eq=False)
class LstdSystem:
    x: np.ndarray
    y: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    gamma: float
    kind: str = "design"

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_rows(self):
        return self.x.shape[0]

    def _wt(self):
        return self.x.T * self.weights

    @property
    def gram(self):
        return self._wt() @ self.x

    @property
    def next_moment(self):
        return self._wt() @ self.y

    @property
    def cross(self):
        """Phi' Xi (I - gamma P) Phi, the matrix LSTD inverts."""
        return self._wt() @ (self.x - self.gamma * self.y)

    @property
    def moment(self):
        return self._wt() @ self.rewards

    def columns(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LstdSystem(self.x[:, idx], self.y[:, idx], self.rewards,
                          self.weights, self.gamma, self.kind)

    def transformed(self, c):
        """Same problem in the feature basis Phi C."""
        return LstdSystem(self.x @ c, self.y @ c, self.rewards, self.weights,
                          self.gamma, self.kind)

    def td_error(self, w):
        return self.rewards + self.gamma * (self.y @ w) - self.x @ w


def _phi(fmap):
    return fmap.phi if isinstance(fmap, FeatureMap) else np.asarray(fmap, dtype=np.float64)


def design_system(mrp, fmap, xi=None):
    phi = _phi(fmap)
    if phi.shape[0] != mrp.n_states:
        raise ValueError("feature map row count must equal the number of states")
    if xi is None:
        xi = stationary_weights(mrp)
    return LstdSystem(phi, mrp.transition @ phi, mrp.mean_reward,
                      as_weight_vector(xi), mrp.discount, "design")


def sample_system(traj, gamma):
    n = len(traj)
    if n < 2:
        raise ValueError("need at least two samples")
    feats = traj.features
    return LstdSystem(feats[:-1], feats[1:], traj.rewards[:-1],
                      np.full(n - 1, 1.0 / (n - 1)), float(gamma), "sample")


def episodic_system(batch, gamma):
    """Episodes stacked; each episode's last successor is the zero terminal feature."""
    xs, ys, rs = [], [], []
    for ep in batch:
        f = ep.features
        xs.append(f)
        ys.append(np.vstack([f[1:], np.zeros((1, f.shape[1]))]))
        rs.append(ep.rewards)
    x = np.vstack(xs)
    n = x.shape[0]
    return LstdSystem(x, np.vstack(ys), np.concatenate(rs), np.full(n, 1.0 / n),
                      float(gamma), "sample")


def _solve(a, b, estimator_id, **diagnostics):
    cond = condition_number(a)
    if not cond <= SINGULAR_COND:
        raise SingularSystem(
            f"{estimator_id}: system matrix condition number {cond:.3g} exceeds "
            f"{SINGULAR_COND:.0e}; lstd_pinv handles singular systems")
    w = np.linalg.solve(a, b)
    if not np.all(np.isfinite(w)):
        raise SingularSystem(f"{estimator_id}: non-finite solution")
    resid = float(np.max(np.abs(a @ w - b), initial=0.0))
    return WeightEstimate(w, estimator_id,
                          {"condition_number": cond, "residual": resid, **diagnostics})


def _n_samples(system):
    return system.n_rows if system.kind == "sample" else None


def _factored(system):
    """(M, c) with Xi^1/2 Phi = Q R, M = Q' Xi^1/2 (Phi - gamma P Phi), c = Q' Xi^1/2 r.

    A = R' M, so M w = c is the LSTD system with one factor of the feature
    conditioning removed. Zero-weight rows drop out.
    """
    root = np.sqrt(system.weights)
    q, _ = np.linalg.qr(root[:, None] * system.x)
    m = q.T @ (root[:, None] * (system.x - system.gamma * system.y))
    return m, q.T @ (root * system.rewards)


def solve_lstd(system, estimator_id="lstd_design"):
    a, b = system.cross, system.moment
    cond = condition_number(a)
    if not cond <= SINGULAR_COND:
        raise SingularSystem(
            f"{estimator_id}: system matrix condition number {cond:.3g} exceeds "
            f"{SINGULAR_COND:.0e}; lstd_pinv handles singular systems")
    m, c = _factored(system)
    w = np.linalg.solve(m, c)
    if not np.all(np.isfinite(w)):
        raise SingularSystem(f"{estimator_id}: non-finite solution")
    resid = float(np.max(np.abs(a @ w - b), initial=0.0))
    return WeightEstimate(w, estimator_id, {"condition_number": cond, "residual": resid,
                                            "n_samples": _n_samples(system)})


def lstd_design(mrp, fmap, xi=None):
    """w = (Phi' Xi (I - gamma P) Phi)^-1 Phi' Xi r."""
    return solve_lstd(design_system(mrp, fmap, xi), "lstd_design")


def lstd_sample(traj, gamma):
    """Instrumental-variable estimate (Phi_S' D Phi_S)^-1 Phi_S' r_S."""
    return solve_lstd(sample_system(traj, gamma), "lstd_sample")


def solve_lstd_pinv(system, estimator_id="lstd_pinv"):
    a, b = system.cross, system.moment
    w = pinv(a) @ b
    return WeightEstimate(w, estimator_id, {
        "condition_number": condition_number(a),
        "residual": float(np.max(np.abs(a @ w - b), initial=0.0)),
        "rank": int(np.linalg.matrix_rank(a)) if a.size else 0,
        "n_samples": _n_samples(system),
    })


def lstd_pinv(traj, gamma):
    """Sample LSTD with the pseudo-inverse in place of the inverse."""
    return solve_lstd_pinv(sample_system(traj, gamma))


def lstd_pinv_design(mrp, fmap, xi=None):
    return solve_lstd_pinv(design_system(mrp, fmap, xi))


# ---------------------------------------------------------------------------
# Bellman residual minimisation

def brm_design(mrp, fmap, xi=None):
    """argmin_w ||T Phi w - Phi w||_Xi, i.e. (Phi' L' Xi L Phi)^-1 Phi' L' Xi r."""
    s = design_system(mrp, fmap, xi)
    lphi = s.x - s.gamma * s.y
    wt = lphi.T * s.weights
    return _solve(wt @ lphi, wt @ s.rewards, "brm_design")


def brm_sample(traj, gamma):
    """Double-sample BRM estimate.

    Solves (Psi1' Psi2 + Psi2' Psi1) w = (Psi1 + Psi2)' r over the first N-1
    steps, Psi1 built from the realised successors and Psi2 from the
    independent alternative successors.
    """
    if traj.alt_features is None:
        raise MissingAltSample(
            "brm_sample needs alt_features; sample with with_alt=True")
    f = traj.features
    psi1 = f[:-1] - gamma * f[1:]
    psi2 = f[:-1] - gamma * traj.alt_features[:-1]
    r = traj.rewards[:-1]
    a = psi1.T @ psi2 + psi2.T @ psi1
    return _solve(a, (psi1 + psi2).T @ r, "brm_sample", n_samples=len(traj) - 1)


# ---------------------------------------------------------------------------
# linear dynamical system view

def lds_from_system(system):
    gram = system.gram
    cond = condition_number(gram)
    if not cond <= SINGULAR_COND:
        raise SingularGram(f"feature Gram matrix has condition number {cond:.3g}")
    f = np.linalg.solve(gram, system.next_moment)
    q = np.linalg.solve(gram, system.moment)
    return f, q


def lds_model(mrp, fmap, xi=None):
    """Feature-space model (F, q): Phi F ~ P Phi and Phi q ~ r, both Xi-weighted."""
    return lds_from_system(design_system(mrp, fmap, xi))


def lds_solve(f, q, gamma, estimator_id="lds", **diagnostics):
    """Value coefficients sum_t (gamma F)^t q = (I - gamma F)^-1 q."""
    k = q.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(gamma * f)), initial=0.0)) if k else 0.0
    return _solve(np.eye(k) - gamma * f, q, estimator_id, spectral_radius=rho, **diagnostics)


def lds_series(f, q, gamma, terms):
    """Partial sums of sum_t (gamma F)^t q, one row per number of terms."""
    out = np.empty((terms, q.shape[0]))
    term = np.array(q, dtype=np.float64)
    acc = np.zeros_like(term)
    for t in range(terms):
        acc = acc + term
        out[t] = acc
        term = gamma * (f @ term)
    return out


def lds_sample(traj, gamma):
    """Sample model F^ = (Phi'Phi)^-1 Phi' N Phi, q^ = (Phi'Phi)^-1 Phi' r and its solution."""
    s = sample_system(traj, gamma)
    f, q = lds_from_system(s)
    return f, q, lds_solve(f, q, gamma, n_samples=s.n_rows)


# ---------------------------------------------------------------------------
# TD iteration

def td_step_size(a):
    """Constant step minimising the spectral radius of I - alpha A.

    Returns ``(alpha, rate)``. Contraction needs every eigenvalue of A in the
    open right half-plane.
    """
    lam = np.linalg.eigvals(a)
    if lam.size == 0:
        return 1.0, 0.0
    if np.any(lam.real <= 0):
        raise SingularSystem("TD iteration cannot contract: A has an eigenvalue with Re <= 0")
    upper = 2.0 * np.min(lam.real / np.abs(lam) ** 2)

    def rate(alpha):
        return float(np.max(np.abs(1.0 - alpha * lam)))

    res = minimize_scalar(rate, bounds=(0.0, upper), method="bounded",
                          options={"xatol": upper * 1e-10})
    alpha = float(res.x)
    return alpha, rate(alpha)


def td_iterate_design(mrp, fmap, xi=None, alpha=None, max_iters=20_000_000,
                      tol=1e-10, w0=None, stride=100):
    """Expected TD(0) updates  w <- w + alpha (Phi' Xi r - Phi' Xi (I - gamma P) Phi w).

    Stops once the estimated distance to the fixpoint drops below
    ``tol * max(1, |w|_inf)``, or once rounding stalls the updates close to
    that level. Returns ``(estimate, trace)`` where ``trace`` holds the
    update size every ``stride`` iterations.
    """
    s = design_system(mrp, fmap, xi)
    return td_iterate_system(s, alpha, max_iters, tol, w0, stride)


def _td_window(rate, stride, max_iters):
    if rate >= 1.0:
        return stride, np.inf
    if rate <= 0.0:
        return stride, 0.0
    window = int(min(max(stride, np.ceil(1.0 / (1.0 - rate))), max(max_iters, 1)))
    decay = rate ** window
    return window, decay / (1.0 - decay)


def td_iterate_system(system, alpha=None, max_iters=20_000_000, tol=1e-10, w0=None,
                      stride=100):
    a = np.ascontiguousarray(system.cross)
    b = np.ascontiguousarray(system.moment)
    k = b.shape[0]
    if alpha is None:
        alpha, rate = td_step_size(a)
    else:
        rate = float(np.max(np.abs(1.0 - alpha * np.linalg.eigvals(a)), initial=0.0))
    w0 = np.zeros(k) if w0 is None else np.array(w0, dtype=np.float64)
    # distance to fixpoint ~ step * rate / (1 - rate)
    step_tol = tol if rate <= 0.0 else tol * (1.0 - rate) / rate
    step_tol = max(step_tol, 1e-16)
    # Near rate 1 the single step drowns in rounding noise; the displacement
    # over ~1/(1 - rate) iterations does not, and bounds the distance by
    # disp * rate^L / (1 - rate^L).
    window, gain = _td_window(rate, stride, max_iters)
    w, iters, status, trace = _kernels.td_expected(
        a, b, w0, float(alpha), int(max_iters), float(step_tol), int(stride),
        int(window), float(gain), float(tol), TD_PATIENCE, TD_FLOOR_FACTOR)
    if status == 0:
        raise MaxItersExceeded(
            f"TD iteration did not converge in {max_iters} iterations "
            f"(alpha={alpha:.3g}, contraction rate {rate:.8f})")
    resid = float(np.max(np.abs(b - a @ w), initial=0.0))
    est = WeightEstimate(w, "td_iterate", {
        "condition_number": condition_number(a), "residual": resid, "n_samples": None,
        "iterations": int(iters), "alpha": alpha, "rate": rate,
        "stopped_by": "tolerance" if status == 1 else "stagnation",
    })
    return est, np.asarray(trace)


def td_iterate_sample(traj, gamma, a=1.0, b=10.0, w0=None):
    """One TD(0) pass over a trajectory with step a / (b + t).

    Convergence is statistical; the per-step TD errors are returned as the trace.
    """
    if a <= 0 or b < 0:
        raise ValueError("step schedule must be positive")
    s = sample_system(traj, gamma)
    x = np.ascontiguousarray(s.x)
    y = np.ascontiguousarray(s.y)
    r = np.ascontiguousarray(s.rewards)
    w0 = np.zeros(s.n_features) if w0 is None else np.array(w0, dtype=np.float64)
    w, deltas = _kernels.td_sample(x, y, r, float(gamma), w0, float(a), float(b))
    est = WeightEstimate(w, "td_iterate", {
        # conditioning of the matrix whose fixpoint TD tracks
        "condition_number": condition_number(s.cross),
        "residual": float(np.mean(np.abs(deltas[-100:]))),
        "n_samples": s.n_rows,
    })
    return est, deltas


# ---------------------------------------------------------------------------
# quadratic form

def quadratic_form_k(mrp, fmap, xi=None, variant="projected"):
    """LSTD as argmin_w (V - Phi w)' K (V - Phi w).

    ``variant="projected"`` uses K = L' Pi' Xi Pi L; ``"unnormalised"`` uses
    K' = L' Xi Phi Phi' Xi L. Returns ``(K, estimate)``; the minimiser is
    computed from a square-root factor of K so the Gram matrix is never
    squared.
    """
    phi = _phi(fmap)
    if xi is None:
        xi = stationary_weights(mrp)
    wv = as_weight_vector(xi)
    n = mrp.n_states
    ell = np.eye(n) - mrp.discount * mrp.transition
    v = exact_value(mrp)
    proj = weighted_projection(phi, wv)
    if variant == "projected":
        root = np.sqrt(wv)[:, None] * (proj.projector @ ell)
        xp = wv[:, None] * proj.projector
        identity_gap = max(np.max(np.abs(xp - proj.projector.T * wv)),
                           np.max(np.abs(xp - proj.projector.T @ xp)))
    elif variant == "unnormalised":
        root = (phi.T * wv) @ ell
        identity_gap = 0.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    kmat = root.T @ root
    design = root @ phi
    cond = condition_number(design)
    if not cond <= SINGULAR_COND:
        raise SingularSystem(f"quadratic_form_k: condition number {cond:.3g}")
    w, *_ = np.linalg.lstsq(design, root @ v, rcond=None)
    normal_resid = np.max(np.abs(phi.T @ kmat @ (phi @ w - v)), initial=0.0)
    return kmat, WeightEstimate(w, "quadratic_form_k", {
        "condition_number": cond, "residual": float(normal_resid),
        "projection_identity_gap": float(identity_gap), "variant": variant,
    })


# ---------------------------------------------------------------------------
# episodic

def episodic_lstd(batch, gamma):
    """(sum_e Phi_e' D_e Phi_e)^-1 sum_e Phi_e' r_e, no coupling across episodes."""
    if len(batch) == 0:
        raise ValueError("need at least one episode")
    s = episodic_system(batch, gamma)
    return _solve(s.cross, s.moment, "episodic", n_samples=s.n_rows, n_episodes=len(batch))


def episodic_design_system(emrp, fmap):
    phi = _phi(fmap)
    if phi.shape[0] != emrp.n_states:
        raise ValueError("feature map row count must equal the number of states")
    _, p_absorb, xi = episodic_matrices(emrp)
    phi_a = np.vstack([phi, np.zeros((1, phi.shape[1]))])
    r_a = np.append(emrp.mean_reward, 0.0)
    return LstdSystem(phi_a, p_absorb @ phi_a, r_a, xi.weights, emrp.discount, "design")


def episodic_lstd_design(emrp, fmap):
    """Design form: restart-chain weights, absorbing-chain dynamics, zero terminal feature."""
    s = episodic_design_system(emrp, fmap)
    return _solve(s.cross, s.moment, "episodic")


def episodic_value(emrp):
    """Exact expected (discounted) return from each non-terminal state."""
    n = emrp.n_states
    q = emrp.transition_t[:, :n]
    return np.linalg.solve(np.eye(n) - emrp.discount * q, emrp.mean_reward)


# ---------------------------------------------------------------------------
# Bayesian / quadratic-form MAP

def bayes_map(traj, gamma, g, l_prior=None):
    """argmin_w ||r_S - D Phi_S w||^2_{Phi_S G Phi_S'} + w' L w.

    Uses raw (unnormalised) sample sums. With L = 0 and G invertible this is
    the sample LSTD estimate.
    """
    s = sample_system(traj, gamma)
    a = s.x.T @ (s.x - s.gamma * s.y)
    c = s.x.T @ s.rewards
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (a.shape[0], a.shape[0]) or not np.allclose(g, g.T):
        raise ValueError("g must be a symmetric k x k matrix")
    lp = np.zeros_like(a) if l_prior is None else np.asarray(l_prior, dtype=np.float64)
    if lp.shape != a.shape or not np.allclose(lp, lp.T):
        raise ValueError("l_prior must be a symmetric k x k matrix")
    return _solve(a.T @ g @ a + lp, a.T @ g @ c, "bayes_map", n_samples=s.n_rows)
