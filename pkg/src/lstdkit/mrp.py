"""Finite Markov reward processes: model types, exact quantities and sampling.

Rewards are attached to the state being left: the reward recorded at step
``i`` of a trajectory has mean ``mean_reward[states[i]]``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .exceptions import InvalidModel

ROW_SUM_TOL = 1e-12
EDGE_TOL = 1e-15
EIG_TOL = 1e-12
ABSORB_TOL = 1e-10
TRANSIENT = -1


def _frozen(a, dtype=np.float64, ndim=None, name="array"):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidModel(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _check_stochastic(p, name):
    if not np.all(np.isfinite(p)):
        raise InvalidModel(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise InvalidModel(f"{name} has negative entries")
    dev = np.max(np.abs(p.sum(axis=1) - 1.0), initial=0.0)
    if dev > ROW_SUM_TOL:
        raise InvalidModel(f"rows of {name} must sum to 1 (max deviation {dev:.3g})")


@dataclass(frozen=True, eq=False)
class RewardNoise:
    """Zero-mean reward perturbation, one distribution per state.

    ``kind`` is ``"none"``, ``"gaussian"`` (``std`` per state) or
    ``"discrete"`` (``values``/``probs`` of shape ``(S, m)``, each row a
    zero-mean finite distribution).
    """

    kind: str = "none"
    std: np.ndarray | None = None
    values: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "discrete"):
            raise InvalidModel(f"unknown reward noise kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.std is None:
                raise InvalidModel("gaussian reward noise needs 'std'")
            std = _frozen(np.atleast_1d(self.std), ndim=1, name="std")
            if np.any(std < 0) or not np.all(np.isfinite(std)):
                raise InvalidModel("reward noise std must be finite and >= 0")
            object.__setattr__(self, "std", std)
        if self.kind == "discrete":
            if self.values is None or self.probs is None:
                raise InvalidModel("discrete reward noise needs 'values' and 'probs'")
            values = _frozen(np.atleast_2d(self.values), ndim=2, name="values")
            probs = _frozen(np.atleast_2d(self.probs), ndim=2, name="probs")
            if values.shape != probs.shape:
                raise InvalidModel("discrete noise values/probs shape mismatch")
            _check_stochastic(probs, "noise probs")
            means = (values * probs).sum(axis=1)
            if np.max(np.abs(means)) > 1e-12 * max(1.0, np.max(np.abs(values))):
                raise InvalidModel("discrete reward noise must have zero mean in every state")
            object.__setattr__(self, "values", values)
            object.__setattr__(self, "probs", probs)

    def check_size(self, n_states):
        for arr in (self.std, self.values):
            if arr is not None and arr.shape[0] not in (1, n_states):
                raise InvalidModel(
                    f"reward noise has {arr.shape[0]} rows, expected 1 or {n_states}")

    def sample(self, states, rng):
        """Draw one noise offset per visited state."""
        states = np.asarray(states, dtype=np.int64)
        if self.kind == "none":
            return np.zeros(states.shape[0])
        if self.kind == "gaussian":
            scale = self.std[0] if self.std.shape[0] == 1 else self.std[states]
            return rng.standard_normal(states.shape[0]) * scale
        rows = states if self.values.shape[0] > 1 else np.zeros_like(states)
        cum = _kernels.cumulative_rows(self.probs)
        u = rng.random(states.shape[0])
        idx = np.minimum((cum[rows] <= u[:, None]).sum(axis=1), cum.shape[1] - 1)
        return self.values[rows, idx]

    def to_dict(self):
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "std": self.std.tolist()}
        return {"kind": "discrete", "values": self.values.tolist(),
                "probs": self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class Mrp:
    """Row-stochastic transition matrix, mean rewards and discount."""

    transition: np.ndarray
    mean_reward: np.ndarray
    discount: float
    reward_noise: RewardNoise = field(default_factory=RewardNoise)

    def __post_init__(self):
        p = _frozen(self.transition, ndim=2, name="transition")
        r = _frozen(self.mean_reward, ndim=1, name="mean_reward")
        if p.shape[0] != p.shape[1]:
            raise InvalidModel(f"transition must be square, got {p.shape}")
        if r.shape[0] != p.shape[0]:
            raise InvalidModel("mean_reward length must equal the number of states")
        _check_stochastic(p, "transition")
        if not np.all(np.isfinite(r)):
            raise InvalidModel("mean_reward has non-finite entries")
        gamma = float(self.discount)
        # gamma = 0 is admitted: it reduces every estimator to plain regression
        if not 0.0 <= gamma < 1.0:
            raise InvalidModel(f"discount must lie in [0, 1), got {gamma}")
        self.reward_noise.check_size(p.shape[0])
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "mean_reward", r)
        object.__setattr__(self, "discount", gamma)

    @property
    def n_states(self):
        return self.transition.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Design matrix with one feature row per state."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim == 1:
            phi = phi[:, None]
        phi = _frozen(phi, ndim=2, name="phi")
        if not np.all(np.isfinite(phi)):
            raise InvalidModel("phi has non-finite entries")
        object.__setattr__(self, "phi", phi)

    @property
    def n_features(self):
        return self.phi.shape[1]

    def check_states(self, n_states):
        if self.phi.shape[0] != n_states:
            raise InvalidModel(
                f"feature map has {self.phi.shape[0]} rows but the MRP has {n_states} states")


@dataclass(frozen=True, eq=False)
class StationaryWeights:
    """Long-run visit weights of one recurrent class (zero elsewhere)."""

    weights: np.ndarray
    class_id: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, ndim=1, name="weights")
        c = _frozen(self.class_id, dtype=np.int64, ndim=1, name="class_id")
        if w.shape != c.shape:
            raise InvalidModel("weights and class_id must have equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidModel("weights must be non-negative and sum to 1")
        if np.any(w[c == TRANSIENT] != 0.0):
            raise InvalidModel("weights must vanish on transient states")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "class_id", c)

    @property
    def matrix(self):
        return np.diag(self.weights)

    @classmethod
    def from_vector(cls, weights, mrp=None):
        """Wrap explicit weights; with ``mrp`` given, labels come from its class structure."""
        weights = np.asarray(weights, dtype=np.float64)
        labels = recurrent_classes(mrp) if mrp is not None else np.zeros(len(weights), np.int64)
        return cls(weights / weights.sum(), labels)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled states with their feature rows and rewards.

    ``alt_features`` holds, per row, the feature of an independent successor
    draw from the same state (the second sample BRM needs).
    """

    states: np.ndarray
    features: np.ndarray
    rewards: np.ndarray
    alt_features: np.ndarray | None = None
    alt_states: np.ndarray | None = None

    def __post_init__(self):
        states = _frozen(self.states, dtype=np.int64, ndim=1, name="states")
        feats = _frozen(self.features, ndim=2, name="features")
        rewards = _frozen(self.rewards, ndim=1, name="rewards")
        if not (states.shape[0] == feats.shape[0] == rewards.shape[0]):
            raise InvalidModel("states, features and rewards must have equal length")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "rewards", rewards)
        if self.alt_features is not None:
            alt = _frozen(self.alt_features, ndim=2, name="alt_features")
            if alt.shape != feats.shape:
                raise InvalidModel("alt_features must have the same shape as features")
            object.__setattr__(self, "alt_features", alt)
        if self.alt_states is not None:
            object.__setattr__(
                self, "alt_states", _frozen(self.alt_states, dtype=np.int64, ndim=1))

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def from_states(cls, states, phi, rewards, alt_states=None):
        phi = np.asarray(phi, dtype=np.float64)
        states = np.asarray(states, dtype=np.int64)
        alt = None if alt_states is None else phi[np.asarray(alt_states)]
        return cls(states, phi[states], rewards, alt, alt_states)

    def with_features(self, phi):
        """Same walk seen through a different feature map."""
        phi = np.asarray(phi, dtype=np.float64)
        alt = None if self.alt_states is None else phi[self.alt_states]
        return Trajectory(self.states, phi[self.states], self.rewards, alt, self.alt_states)

    def head(self, n):
        """The first ``n`` steps."""
        cut = (lambda a: None if a is None else a[:n])
        return Trajectory(self.states[:n], self.features[:n], self.rewards[:n],
                          cut(self.alt_features), cut(self.alt_states))


@dataclass(frozen=True, eq=False)
class EpisodicMrp:
    """Terminating MRP; the last column of ``transition_t`` is termination."""

    transition_t: np.ndarray
    mean_reward: np.ndarray
    discount: float = 1.0
    start_state: int = 0
    reward_noise: RewardNoise = field(default_factory=RewardNoise)

    def __post_init__(self):
        pt = _frozen(self.transition_t, ndim=2, name="transition_t")
        r = _frozen(self.mean_reward, ndim=1, name="mean_reward")
        n = pt.shape[0]
        if pt.shape[1] != n + 1:
            raise InvalidModel(f"transition_t must be S x (S+1), got {pt.shape}")
        if r.shape[0] != n:
            raise InvalidModel("mean_reward length must equal the number of states")
        _check_stochastic(pt, "transition_t")
        gamma = float(self.discount)
        if not 0.0 <= gamma <= 1.0:
            raise InvalidModel(f"episodic discount must lie in [0, 1], got {gamma}")
        if not 0 <= int(self.start_state) < n:
            raise InvalidModel("start_state out of range")
        rho = np.max(np.abs(np.linalg.eigvals(pt[:, :n])), initial=0.0)
        if rho >= 1.0 - ABSORB_TOL:
            raise InvalidModel("termination is not reachable from every state")
        self.reward_noise.check_size(n)
        object.__setattr__(self, "transition_t", pt)
        object.__setattr__(self, "mean_reward", r)
        object.__setattr__(self, "discount", gamma)
        object.__setattr__(self, "start_state", int(self.start_state))

    @property
    def n_states(self):
        return self.transition_t.shape[0]


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    episodes: tuple

    def __post_init__(self):
        eps = tuple(self.episodes)
        if any(len(e) == 0 for e in eps):
            raise InvalidModel("episodes must be nonempty")
        object.__setattr__(self, "episodes", eps)

    def __len__(self):
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def with_features(self, phi):
        return EpisodeBatch(tuple(e.with_features(phi) for e in self.episodes))

    def head(self, n):
        return EpisodeBatch(self.episodes[:n])


# ---------------------------------------------------------------------------
# exact quantities

def exact_value(mrp):
    """True value vector V solving (I - gamma P) V = r."""
    lhs = np.eye(mrp.n_states) - mrp.discount * mrp.transition
    v = np.linalg.solve(lhs, mrp.mean_reward)
    resid = np.max(np.abs(lhs @ v - mrp.mean_reward), initial=0.0)
    if resid > 1e-10 * (1.0 + np.max(np.abs(mrp.mean_reward), initial=0.0)):
        raise ArithmeticError(f"value solve residual {resid:.3g} too large")
    return v


def _class_labels(transition):
    n = transition.shape[0]
    adj = transition > EDGE_TOL
    n_comp, comp = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(n_comp, dtype=bool)
    src, dst = np.nonzero(adj)
    leaving = comp[src] != comp[dst]
    closed[np.unique(comp[src[leaving]])] = False
    labels = np.full(n, TRANSIENT, dtype=np.int64)
    next_label = 0
    seen = {}
    for s in range(n):
        c = comp[s]
        if not closed[c]:
            continue
        if c not in seen:
            seen[c] = next_label
            next_label += 1
        labels[s] = seen[c]
    return labels


def recurrent_classes(mrp):
    """Recurrent-class label per state, numbered by lowest member; -1 marks transient."""
    p = mrp.transition if isinstance(mrp, Mrp) else np.asarray(mrp, dtype=np.float64)
    return _class_labels(p)


def _class_distribution(transition, members, max_iters=200_000):
    q = transition[np.ix_(members, members)]
    q = q / q.sum(axis=1, keepdims=True)
    # the lazy chain has the same invariant law and no periodicity
    lazy = 0.5 * (q + np.eye(len(members)))
    x = np.full(len(members), 1.0 / len(members))
    for _ in range(max_iters):
        nxt = x @ lazy
        if np.abs(nxt - x).sum() < EIG_TOL:
            x = nxt
            break
        x = nxt
    else:
        # slow mixing: fall back to the direct null-space solve
        m = len(members)
        a = np.vstack([(np.eye(m) - q).T, np.ones(m)])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        x = np.linalg.lstsq(a, rhs, rcond=None)[0]
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def stationary_weights(mrp, class_selector=None):
    """Stationary weights supported on one recurrent class.

    ``class_selector`` indexes the classes as numbered by
    :func:`recurrent_classes`; the default is the class of the lowest-index
    recurrent state.
    """
    p = mrp.transition if isinstance(mrp, Mrp) else np.asarray(mrp, dtype=np.float64)
    labels = _class_labels(p)
    n_classes = labels.max() + 1
    c = 0 if class_selector is None else int(class_selector)
    if not 0 <= c < n_classes:
        raise InvalidModel(f"class_selector {c} out of range (found {n_classes} classes)")
    members = np.flatnonzero(labels == c)
    w = np.zeros(p.shape[0])
    w[members] = _class_distribution(p, members)
    return StationaryWeights(w, labels)


# ---------------------------------------------------------------------------
# sampling

def sample_trajectory(mrp, fmap, n, seed=None, with_alt=False, burn_in=0,
                      class_selector=None):
    """Simulate ``n`` consecutive states.

    Without ``burn_in`` the start state is drawn from the stationary weights,
    so sample averages target the weighted design quantities from step one.
    With ``burn_in = B`` the walk starts at a uniform state and the first
    ``B`` steps are discarded.
    """
    if n < 2:
        raise ValueError("trajectory length must be at least 2")
    phi = fmap.phi if isinstance(fmap, FeatureMap) else np.asarray(fmap, dtype=np.float64)
    if phi.shape[0] != mrp.n_states:
        raise InvalidModel("feature map row count must equal the number of states")
    rng = np.random.default_rng(seed)
    cum = _kernels.cumulative_rows(mrp.transition)
    if burn_in:
        s0 = int(rng.integers(mrp.n_states))
    else:
        xi = stationary_weights(mrp, class_selector)
        s0 = int(rng.choice(mrp.n_states, p=xi.weights))
    u = rng.random(n - 1 + burn_in)
    states = _kernels.walk_chain(cum, s0, u)[burn_in:]
    alt_states = None
    if with_alt:
        alt_states = _kernels.draw_successors(cum, states, rng.random(n))
    rewards = mrp.mean_reward[states] + mrp.reward_noise.sample(states, rng)
    return Trajectory.from_states(states, phi, rewards, alt_states)


def episodic_matrices(emrp):
    """Restart chain, absorbing chain and the restart chain's stationary weights.

    Both matrices are (S+1) x (S+1); index S is the termination state.
    """
    n = emrp.n_states
    restart_row = np.zeros(n + 1)
    restart_row[emrp.start_state] = 1.0
    absorb_row = np.zeros(n + 1)
    absorb_row[n] = 1.0
    p_restart = np.vstack([emrp.transition_t, restart_row])
    p_absorb = np.vstack([emrp.transition_t, absorb_row])
    return p_restart, p_absorb, stationary_weights(p_restart)


def expected_episode_length(emrp):
    n = emrp.n_states
    fundamental = np.linalg.inv(np.eye(n) - emrp.transition_t[:, :n])
    return float(fundamental[emrp.start_state].sum())


def sample_episodes(emrp, fmap, num_episodes, seed=None):
    """Simulate complete episodes from the start state until termination."""
    if num_episodes < 1:
        raise ValueError("num_episodes must be positive")
    phi = fmap.phi if isinstance(fmap, FeatureMap) else np.asarray(fmap, dtype=np.float64)
    if phi.shape[0] != emrp.n_states:
        raise InvalidModel("feature map row count must equal the number of states")
    rng = np.random.default_rng(seed)
    cum = _kernels.cumulative_rows(emrp.transition_t)
    mean_len = expected_episode_length(emrp)
    u = rng.random(int(num_episodes * mean_len * 1.25) + 64)
    while True:
        states, lengths, done = _kernels.walk_episodes(
            cum, emrp.start_state, u, num_episodes)
        if done == num_episodes:
            break
        # extend the same stream; the consumed prefix is unchanged
        u = np.concatenate([u, rng.random(u.shape[0])])
    rewards = emrp.mean_reward[states] + emrp.reward_noise.sample(states, rng)
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    episodes = tuple(
        Trajectory.from_states(states[a:b], phi, rewards[a:b])
        for a, b in zip(bounds[:-1], bounds[1:]))
    return EpisodeBatch(episodes)
