"""Random instance families and fixed benchmark problems."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .mrp import EpisodicMrp, FeatureMap, Mrp, RewardNoise, StationaryWeights, stationary_weights

GAMMAS = (0.5, 0.9, 0.99)
MIN_GRAM_SV = 1e-6
FAMILIES = ("random", "transient", "tabular", "mixed")


@dataclass(frozen=True, eq=False)
class Instance:
    mrp: Mrp
    fmap: FeatureMap
    xi: StationaryWeights
    n_transient: int = 0

    @property
    def phi(self):
        return self.fmap.phi

    def to_dict(self):
        return {"transition": self.mrp.transition, "mean_reward": self.mrp.mean_reward,
                "discount": self.mrp.discount, "features": self.fmap.phi,
                "stationary_weights": self.xi.weights}


def random_transition(rng, n_states, n_transient=0):
    """Dirichlet(1) rows; the first ``n_transient`` states are transient.

    Recurrent rows put mass only on the recurrent block, so that block is
    closed and (with positive entries) a single aperiodic class.
    Transient rows spread over every state, hence leak into the block.
    """
    if n_states < 1 or not 0 <= n_transient < n_states:
        raise ConfigError("need n_states >= 1 and 0 <= n_transient < n_states")
    p = np.zeros((n_states, n_states))
    n_rec = n_states - n_transient
    p[n_transient:, n_transient:] = rng.dirichlet(np.ones(n_rec), size=n_rec)
    if n_transient:
        p[:n_transient] = rng.dirichlet(np.ones(n_states), size=n_transient)
    return p


def _gram_ok(phi, xi, min_sv):
    gram = (phi.T * xi) @ phi
    return np.linalg.svd(gram, compute_uv=False)[-1] > min_sv


def random_instance(rng, n_states, n_features, n_transient=0, gamma=None,
                    tabular=False, min_sv=MIN_GRAM_SV, max_tries=1000):
    """One random MRP with features satisfying the full-rank Gram condition.

    Feature draws failing the condition are rejected and redrawn.
    """
    n_rec = n_states - n_transient
    if n_features < 1 or n_features > n_rec:
        raise ConfigError(
            f"features ({n_features}) must be between 1 and the number of recurrent "
            f"states ({n_rec})")
    if gamma is None:
        gamma = float(rng.choice(GAMMAS))
    p = random_transition(rng, n_states, n_transient)
    r = rng.uniform(0.0, 1.0, n_states)
    mrp = Mrp(p, r, gamma)
    xi = stationary_weights(mrp)
    if tabular:
        if n_transient:
            raise ConfigError("tabular features require an all-recurrent chain")
        return Instance(mrp, FeatureMap(np.eye(n_states)), xi, 0)
    for _ in range(max_tries):
        phi = rng.standard_normal((n_states, n_features))
        if _gram_ok(phi, xi.weights, min_sv):
            return Instance(mrp, FeatureMap(phi), xi, n_transient)
    raise ConfigError("could not draw features with a well-conditioned Gram matrix")


def instance_family(family="mixed", count=100, seed=0, max_states=8, max_features=4,
                    gamma=None):
    """Yield ``count`` instances; instance i depends only on (seed, i).

    ``random``: ergodic chains; ``transient``: 1-2 transient states
    prepended; ``tabular``: identity features; ``mixed``: random or
    transient with equal odds.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown instance family {family!r}")
    children = np.random.SeedSequence(seed).spawn(count)
    for child in children:
        rng = np.random.default_rng(child)
        kind = family
        if family == "mixed":
            kind = "transient" if rng.random() < 0.5 else "random"
        if kind == "tabular":
            n = int(rng.integers(1, max_states + 1))
            yield random_instance(rng, n, n, gamma=gamma, tabular=True)
            continue
        k = int(rng.integers(1, max_features + 1))
        t = int(rng.integers(1, 3)) if kind == "transient" else 0
        lo = max(k, 2) + t
        n = int(rng.integers(lo, max(lo, max_states) + 1))
        yield random_instance(rng, n, k, n_transient=t, gamma=gamma)


def generate_problem(n_states, n_features, n_transient=0, seed=0, gamma=None):
    """Seeded single instance for the ``generate`` command."""
    for name, val in (("states", n_states), ("features", n_features), ("transient", n_transient)):
        if int(val) != val or val < 0:
            raise ConfigError(f"--{name} must be a non-negative integer, got {val}")
    if n_states < 1:
        raise ConfigError("--states must be at least 1")
    if n_transient >= n_states:
        raise ConfigError("--transient must be smaller than --states")
    return random_instance(np.random.default_rng(seed), n_states, n_features,
                           n_transient=n_transient, gamma=gamma)


def two_state_chain(noise_std=0.1):
    """Fair coin chain, reward 1 in state 0, gamma 0.9; tabular features.

    V = [5.5, 4.5].
    """
    noise = RewardNoise("gaussian", std=[noise_std]) if noise_std > 0 else RewardNoise()
    mrp = Mrp([[0.5, 0.5], [0.5, 0.5]], [1.0, 0.0], 0.9, noise)
    return mrp, FeatureMap(np.eye(2))


def terminating_chain():
    """Three states walked left to right; each step terminates w.p. 0.2.

    State 2 always terminates. Tabular features, gamma 0.95.
    """
    p_t = [[0.1, 0.7, 0.0, 0.2],
           [0.0, 0.1, 0.7, 0.2],
           [0.0, 0.0, 0.0, 1.0]]
    emrp = EpisodicMrp(p_t, [1.0, 0.5, 2.0], 0.95, 0, RewardNoise("gaussian", std=[0.1]))
    return emrp, FeatureMap(np.eye(3))


def two_step_episode():
    """Deterministic 0 -> 1 -> end, rewards (1, 0), gamma 0.5, tabular features.

    Backward induction gives V = [1, 0].
    """
    emrp = EpisodicMrp([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0, 0.0], 0.5, 0)
    return emrp, FeatureMap(np.eye(2))
