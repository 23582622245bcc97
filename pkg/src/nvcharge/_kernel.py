"""Compiled inner loop of the exact stochastic simulation."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def kmc_advance(rng, state, t, t_end, ptr, dst, rate, code, eff, exit_rate, counts, bin_width, occ):
    """Advance one trajectory until ``t_end`` or a charge-changing channel fires.

    Channels of level ``i`` are ``ptr[i]:ptr[i+1]``.  Detected photons are
    binned into ``counts``; time spent per level accumulates in ``occ``.
    Returns ``(state, t, channel, photons)`` with ``channel = -1`` when the
    window ended without a charge event.
    """
    photons = 0
    n_bins = counts.shape[0]
    while True:
        out = exit_rate[state]
        if out <= 0.0:
            occ[state] += t_end - t
            return state, t_end, -1, photons
        dt = rng.exponential(1.0 / out)
        if t + dt >= t_end:
            occ[state] += t_end - t
            return state, t_end, -1, photons
        occ[state] += dt
        t += dt
        u = rng.random() * out
        k = ptr[state]
        last = ptr[state + 1] - 1
        acc = rate[k]
        while acc <= u and k < last:
            k += 1
            acc += rate[k]
        e = eff[k]
        if e > 0.0:
            if e >= 1.0 or rng.random() < e:
                b = int(t / bin_width)
                if b >= n_bins:
                    b = n_bins - 1
                if b >= 0:
                    counts[b] += 1
                photons += 1
        state = dst[k]
        if code[k] >= 2:
            return state, t, k, photons


def warmup():
    """Trigger compilation on a trivial problem."""
    rng = np.random.default_rng(0)
    ptr = np.array([0, 1, 2], dtype=np.int64)
    dst = np.array([1, 0], dtype=np.int64)
    rate = np.array([1.0, 1.0])
    code = np.array([1, 0], dtype=np.int64)
    eff = np.array([0.5, 0.0])
    exit_rate = np.array([1.0, 1.0])
    counts = np.zeros(2, dtype=np.int64)
    occ = np.zeros(2)
    kmc_advance(rng, 0, 0.0, 1.0, ptr, dst, rate, code, eff, exit_rate, counts, 1.0, occ)
