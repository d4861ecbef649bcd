import os
import subprocess
import sys

import numpy as np
import pytest

from lstdkit import _kernels as K
from lstdkit.estimators import design_system, td_step_size
from lstdkit.instances import random_instance, terminating_chain

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def chain():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 7, 3, gamma=0.95)
    cum = K.cumulative_rows(inst.mrp.transition)
    return inst, cum, rng.random(5000)


def test_cumulative_rows_end_at_one(chain):
    _, cum, _ = chain
    assert np.all(cum[:, -1] == 1.0)
    assert np.all(np.diff(cum, axis=1) >= 0)


@needs_numba
def test_walks_identical_across_backends(chain):
    inst, cum, u = chain
    a = K.walk_chain_numpy(cum, 0, u)
    b = K.walk_chain_numba(cum, 0, u)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(K.draw_successors_numpy(cum, a[:-1], u),
                                  K.draw_successors_numba(cum, a[:-1], u))
    emrp, _ = terminating_chain()
    cum_t = K.cumulative_rows(emrp.transition_t)
    uu = np.random.default_rng(1).random(4000)
    for x, y in zip(K.walk_episodes_numpy(cum_t, 0, uu, 300),
                    K.walk_episodes_numba(cum_t, 0, uu, 300)):
        np.testing.assert_array_equal(x, y)


@needs_numba
def test_td_kernels_agree(chain):
    inst, cum, u = chain
    s = design_system(inst.mrp, inst.fmap, inst.xi)
    a, b = np.ascontiguousarray(s.cross), np.ascontiguousarray(s.moment)
    alpha, _ = td_step_size(a)
    args = (a, b, np.zeros(3), alpha, 1_000_000, 1e-13, 100, 100, 1.0, 1e-10, 5, 1e3)
    w1, _, st1, _ = K.td_expected_numpy(*args)
    w2, _, st2, _ = K.td_expected_numba(*args)
    assert st1 > 0 and st2 > 0
    # summation order differs between BLAS and the loop, so stopping points may differ
    np.testing.assert_allclose(w1, w2, rtol=1e-9, atol=1e-11)

    states = K.walk_chain_numpy(cum, 0, u)
    phi = inst.phi[states]
    x, y = np.ascontiguousarray(phi[:-1]), np.ascontiguousarray(phi[1:])
    r = inst.mrp.mean_reward[states[:-1]]
    sa = K.td_sample_numpy(x, y, r, 0.95, np.zeros(3), 1.0, 10.0)
    sb = K.td_sample_numba(x, y, r, 0.95, np.zeros(3), 1.0, 10.0)
    np.testing.assert_allclose(sa[0], sb[0], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sa[1], sb[1], rtol=1e-10, atol=1e-12)


def test_walk_respects_transition_support(chain):
    inst, cum, u = chain
    states = K.walk_chain_numpy(cum, 0, u)
    p = inst.mrp.transition
    assert np.all(p[states[:-1], states[1:]] > 0)


def test_env_var_disables_numba():
    code = "from lstdkit import _kernels as K; print(K.backend())"
    env = dict(os.environ, LSTDKIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_sampling_identical_under_both_backends():
    code = ("import numpy as np; from lstdkit.instances import two_state_chain; "
            "from lstdkit.mrp import sample_trajectory; m, f = two_state_chain(); "
            "t = sample_trajectory(m, f, 2000, seed=4, with_alt=True); "
            "print(t.states.tolist(), t.alt_states.tolist(), t.rewards.sum().hex())")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, LSTDKIT_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env,
                                   capture_output=True, text=True, check=True).stdout)
    assert outs[0] == outs[1]
