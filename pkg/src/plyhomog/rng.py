"""Counter-based random streams.

Every Monte Carlo estimate draws from Philox streams spawned from one seed, so a
batch's numbers depend only on ``(seed, key, batch index)`` and never on the
number of workers that evaluate the batches.
"""

from __future__ import annotations

import numpy as np

N_BATCHES = 16


def stream(seed, *key):
    """Generator for the stream addressed by ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def batch_sizes(n, n_batches=N_BATCHES):
    base, extra = divmod(int(n), n_batches)
    return [base + (1 if i < extra else 0) for i in range(n_batches)]


def uniform_in_box(seed, key, lo, hi, n, n_batches=N_BATCHES):
    """Yield ``(batch_index, points)`` with points uniform in the box ``[lo, hi]``."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    for b, m in enumerate(batch_sizes(n, n_batches)):
        g = stream(seed, key, b)
        yield b, lo + (hi - lo) * g.random((m, len(lo)))


def batch_mean(values, n_batches=N_BATCHES):
    """Mean of per-batch means and its standard error.

    ``values`` is a sequence of per-batch arrays (or per-batch means with the
    batch sizes given as weights through equal-size batches).
    """
    means = np.array([np.mean(v) for v in values])
    sizes = np.array([len(v) for v in values], float)
    mean = float(np.sum(means * sizes) / sizes.sum())
    if len(means) < 2:
        return mean, float("nan")
    return mean, float(np.std(means, ddof=1) / np.sqrt(len(means)))
