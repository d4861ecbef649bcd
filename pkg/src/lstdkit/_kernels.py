"""Sequential inner loops: chain walks, episode walks and TD iterations.

Every kernel exists twice, once compiled with numba and once as plain
numpy/Python. The compiled variant is used when numba imports and the
environment variable ``LSTDKIT_DISABLE_NUMBA`` is unset (or ``0``).
Both variants consume the same pre-drawn uniforms, so sampled integer
sequences are identical across backends.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("LSTDKIT_DISABLE_NUMBA", "0") in ("", "0")


def _njit(func):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def cumulative_rows(transition):
    """Row-wise CDF with the last column pinned to exactly 1."""
    cum = np.cumsum(np.asarray(transition, dtype=np.float64), axis=1)
    cum /= cum[:, -1:]
    return np.ascontiguousarray(cum)


# ---------------------------------------------------------------------------
# chain walk

def _walk_chain_loop(cum, s0, u):
    n = u.shape[0] + 1
    n_states = cum.shape[1]
    states = np.empty(n, dtype=np.int64)
    states[0] = s0
    s = s0
    for i in range(1, n):
        row = cum[s]
        x = u[i - 1]
        j = 0
        while j < n_states - 1 and row[j] <= x:
            j += 1
        s = j
        states[i] = s
    return states


def walk_chain_numpy(cum, s0, u):
    states = np.empty(u.shape[0] + 1, dtype=np.int64)
    states[0] = s0
    last = cum.shape[1] - 1
    s = int(s0)
    for i, x in enumerate(u, start=1):
        s = min(int(np.searchsorted(cum[s], x, side="right")), last)
        states[i] = s
    return states


walk_chain_numba = _njit(_walk_chain_loop)


# ---------------------------------------------------------------------------
# independent successor draws (second sample for BRM)

def _draw_successors_loop(cum, states, u):
    n = states.shape[0]
    n_states = cum.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = cum[states[i]]
        x = u[i]
        j = 0
        while j < n_states - 1 and row[j] <= x:
            j += 1
        out[i] = j
    return out


def draw_successors_numpy(cum, states, u):
    idx = (cum[states] <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1).astype(np.int64)


draw_successors_numba = _njit(_draw_successors_loop)


# ---------------------------------------------------------------------------
# episode walk on a chain whose last column is termination

def _walk_episodes_loop(cum_t, start, u, num_episodes):
    # returns (states, lengths, completed); stops early if u runs out
    terminal = cum_t.shape[1] - 1
    states = np.empty(u.shape[0], dtype=np.int64)
    lengths = np.zeros(num_episodes, dtype=np.int64)
    pos = 0
    completed = 0
    while completed < num_episodes:
        s = start
        length = 0
        while True:
            if pos >= u.shape[0]:
                return states[:pos], lengths, completed
            states[pos] = s
            row = cum_t[s]
            x = u[pos]
            pos += 1
            length += 1
            j = 0
            while j < terminal and row[j] <= x:
                j += 1
            if j == terminal:
                break
            s = j
        lengths[completed] = length
        completed += 1
    return states[:pos], lengths, completed


def walk_episodes_numpy(cum_t, start, u, num_episodes):
    terminal = cum_t.shape[1] - 1
    states = np.empty(u.shape[0], dtype=np.int64)
    lengths = np.zeros(num_episodes, dtype=np.int64)
    pos = 0
    for e in range(num_episodes):
        s = int(start)
        length = 0
        while True:
            if pos >= u.shape[0]:
                return states[:pos], lengths, e
            states[pos] = s
            j = min(int(np.searchsorted(cum_t[s], u[pos], side="right")), terminal)
            pos += 1
            length += 1
            if j == terminal:
                break
            s = j
        lengths[e] = length
    return states[:pos], lengths, num_episodes


walk_episodes_numba = _njit(_walk_episodes_loop)


# ---------------------------------------------------------------------------
# expected (design-mode) TD iteration  w <- w + alpha * (b - A w)

def _td_expected_loop(a, b, w0, alpha, max_iters, step_tol, stride, window, gain, tol,
                      patience, floor_factor):
    # status: 0 not converged, 1 converged, 2 stagnated at rounding floor.
    # Besides the per-step test, every `window` iterations the displacement D
    # over the window bounds the distance to the fixpoint by D * gain.
    k = b.shape[0]
    w = w0.copy()
    mark = w0.copy()
    n_trace = max_iters // stride + 1
    trace = np.empty(n_trace, dtype=np.float64)
    t_count = 0
    delta = np.empty(k, dtype=np.float64)
    best = np.inf
    stale = 0
    for it in range(max_iters):
        step_max = 0.0
        w_max = 0.0
        for i in range(k):
            acc = b[i]
            for j in range(k):
                acc -= a[i, j] * w[j]
            delta[i] = alpha * acc
        for i in range(k):
            w[i] += delta[i]
            d = abs(delta[i])
            if d > step_max:
                step_max = d
            m = abs(w[i])
            if m > w_max:
                w_max = m
        scale = max(1.0, w_max)
        if step_max <= step_tol * scale:
            trace[t_count] = step_max
            return w, it + 1, 1, trace[:t_count + 1]
        if it % stride == 0:
            trace[t_count] = step_max
            t_count += 1
        if (it + 1) % window == 0:
            disp = 0.0
            for i in range(k):
                d = abs(w[i] - mark[i])
                if d > disp:
                    disp = d
                mark[i] = w[i]
            dist = disp * gain
            if dist <= tol * scale:
                return w, it + 1, 1, trace[:t_count]
            if disp < best:
                best = disp
                stale = 0
            else:
                stale += 1
                if stale >= patience and dist <= floor_factor * tol * scale:
                    return w, it + 1, 2, trace[:t_count]
    return w, max_iters, 0, trace[:t_count]


def td_expected_numpy(a, b, w0, alpha, max_iters, step_tol, stride, window, gain, tol,
                      patience, floor_factor):
    w = w0.copy()
    mark = w0.copy()
    trace = []
    best = np.inf
    stale = 0
    for it in range(max_iters):
        delta = alpha * (b - a @ w)
        w += delta
        step_max = np.max(np.abs(delta)) if delta.size else 0.0
        scale = max(1.0, np.max(np.abs(w), initial=0.0))
        if step_max <= step_tol * scale:
            trace.append(step_max)
            return w, it + 1, 1, np.asarray(trace)
        if it % stride == 0:
            trace.append(step_max)
        if (it + 1) % window == 0:
            disp = np.max(np.abs(w - mark), initial=0.0)
            mark = w.copy()
            dist = disp * gain
            if dist <= tol * scale:
                return w, it + 1, 1, np.asarray(trace)
            if disp < best:
                best, stale = disp, 0
            else:
                stale += 1
                if stale >= patience and dist <= floor_factor * tol * scale:
                    return w, it + 1, 2, np.asarray(trace)
    return w, max_iters, 0, np.asarray(trace)


td_expected_numba = _njit(_td_expected_loop)


# ---------------------------------------------------------------------------
# sample TD(0) pass:  w <- w + alpha_t * delta_t * phi_t

def _td_sample_loop(x, y, r, gamma, w0, a, b):
    n, k = x.shape
    w = w0.copy()
    deltas = np.empty(n, dtype=np.float64)
    for t in range(n):
        v = 0.0
        v_next = 0.0
        for j in range(k):
            v += x[t, j] * w[j]
            v_next += y[t, j] * w[j]
        delta = r[t] + gamma * v_next - v
        deltas[t] = delta
        step = a / (b + t)
        for j in range(k):
            w[j] += step * delta * x[t, j]
    return w, deltas


def td_sample_numpy(x, y, r, gamma, w0, a, b):
    w = w0.copy()
    deltas = np.empty(x.shape[0])
    for t in range(x.shape[0]):
        delta = r[t] + gamma * (y[t] @ w) - x[t] @ w
        deltas[t] = delta
        w += (a / (b + t)) * delta * x[t]
    return w, deltas


td_sample_numba = _njit(_td_sample_loop)


if USE_NUMBA:
    walk_chain = walk_chain_numba
    draw_successors = draw_successors_numba
    walk_episodes = walk_episodes_numba
    td_expected = td_expected_numba
    td_sample = td_sample_numba
else:
    walk_chain = walk_chain_numpy
    draw_successors = draw_successors_numpy
    walk_episodes = walk_episodes_numpy
    td_expected = td_expected_numpy
    td_sample = td_sample_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
