"""Inner loops of the event-level simulation.

Every kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. ``SATQKD_DISABLE_NUMBA=1`` selects the numpy
versions for the public names at import time. Both take pre-drawn uniforms
so the two paths are bit-identical for the same random stream.

Channel codes: 0=H, 1=V, 2=D, 3=A. Basis codes: 0=Z, 1=X.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "fold_histogram",
    "window_mask",
    "assign_bits",
    "per_pulse_events",
    "numba_impl",
    "numpy_impl",
]


# ---------------------------------------------------------------------------
# loop versions (numba source)

def _fold_histogram_loop(timestamps, period, bin_width, nbins):
    counts = np.zeros(nbins, dtype=np.int64)
    for i in range(timestamps.shape[0]):
        # floor-based mod, much faster than python float % under numba
        phase = timestamps[i] - period * np.floor(timestamps[i] / period)
        k = int(phase / bin_width)
        if k >= nbins:
            k = nbins - 1
        counts[k] += 1
    return counts


def _window_mask_loop(timestamps, period, center, half_width):
    n = timestamps.shape[0]
    out = np.empty(n, dtype=np.bool_)
    if 2.0 * half_width >= period:
        out[:] = True
        return out
    for i in range(n):
        x = timestamps[i] - center
        d = abs(x - period * np.floor(x / period))
        if period - d < d:
            d = period - d
        out[i] = d <= half_width
    return out


def _assign_bits_loop(channel, is_noise, e_det, u_basis, u_bit, u_err):
    n = channel.shape[0]
    alice_basis = np.empty(n, dtype=np.int8)
    alice_bit = np.empty(n, dtype=np.int8)
    bob_bit = np.empty(n, dtype=np.int8)
    for i in range(n):
        ch = channel[i]
        bb = ch // 2
        b = ch % 2
        ab = 0 if u_basis[i] < 0.5 else 1
        alice_basis[i] = ab
        bob_bit[i] = b
        if ab == bb:
            p_err = 0.5 if is_noise[i] else e_det[i]
            alice_bit[i] = b ^ 1 if u_err[i] < p_err else b
        else:
            alice_bit[i] = 1 if u_bit[i] < 0.5 else 0
    return alice_basis, alice_bit, bob_bit


def _per_pulse_events_loop(intensity, p_signal, p_noise, e_det, uniforms):
    n = intensity.shape[0]
    pulse = np.empty(n, dtype=np.int64)
    channel = np.empty(n, dtype=np.int8)
    alice_basis = np.empty(n, dtype=np.int8)
    alice_bit = np.empty(n, dtype=np.int8)
    bob_bit = np.empty(n, dtype=np.int8)
    noise = np.empty(n, dtype=np.bool_)
    double = np.empty(n, dtype=np.bool_)
    m = 0
    for i in range(n):
        k = intensity[i]
        nclick = 0
        nsig = 0
        for ch in range(4):
            u = uniforms[i, ch]
            ps = p_signal[k, ch]
            if u < ps:
                nclick += 1
                nsig += 1
            elif u < ps + (1.0 - ps) * p_noise[ch]:
                nclick += 1
        if nclick == 0:
            continue
        # choose one clicked detector uniformly
        pick = int(uniforms[i, 4] * nclick)
        if pick >= nclick:
            pick = nclick - 1
        seen = 0
        chosen = 0
        chosen_noise = True
        for ch in range(4):
            u = uniforms[i, ch]
            ps = p_signal[k, ch]
            clicked = False
            sig = False
            if u < ps:
                clicked = True
                sig = True
            elif u < ps + (1.0 - ps) * p_noise[ch]:
                clicked = True
            if clicked:
                if seen == pick:
                    chosen = ch
                    chosen_noise = not sig
                seen += 1
        bb = chosen // 2
        b = chosen % 2
        ab = 0 if uniforms[i, 5] < 0.5 else 1
        if ab == bb:
            p_err = 0.5 if chosen_noise else e_det[chosen]
            a = b ^ 1 if uniforms[i, 6] < p_err else b
        else:
            a = 1 if uniforms[i, 6] < 0.5 else 0
        if nclick > 1:
            b = 1 if uniforms[i, 7] < 0.5 else 0
        pulse[m] = i
        channel[m] = chosen
        alice_basis[m] = ab
        alice_bit[m] = a
        bob_bit[m] = b
        noise[m] = chosen_noise
        double[m] = nclick > 1
        m += 1
    return (pulse[:m], channel[:m], alice_basis[:m], alice_bit[:m],
            bob_bit[:m], noise[:m], double[:m])


# ---------------------------------------------------------------------------
# numpy versions

def _fold_histogram_np(timestamps, period, bin_width, nbins):
    phase = np.mod(timestamps, period)
    k = np.minimum((phase / bin_width).astype(np.int64), nbins - 1)
    return np.bincount(k, minlength=nbins).astype(np.int64)


def _window_mask_np(timestamps, period, center, half_width):
    if 2.0 * half_width >= period:
        return np.ones(timestamps.shape[0], dtype=bool)
    d = np.abs(np.mod(timestamps - center, period))
    d = np.minimum(d, period - d)
    return d <= half_width


def _assign_bits_np(channel, is_noise, e_det, u_basis, u_bit, u_err):
    channel = np.asarray(channel)
    bb = channel // 2
    b = (channel % 2).astype(np.int8)
    ab = np.where(u_basis < 0.5, 0, 1).astype(np.int8)
    p_err = np.where(is_noise, 0.5, e_det)
    matched = np.where(u_err < p_err, b ^ 1, b).astype(np.int8)
    unmatched = np.where(u_bit < 0.5, 1, 0).astype(np.int8)
    alice_bit = np.where(ab == bb, matched, unmatched).astype(np.int8)
    return ab, alice_bit, b


def _per_pulse_events_np(intensity, p_signal, p_noise, e_det, uniforms):
    ps = p_signal[intensity]                       # (n, 4)
    u = uniforms[:, :4]
    sig = u < ps
    clicked = sig | (u < ps + (1.0 - ps) * p_noise[None, :])
    nclick = clicked.sum(axis=1)
    hit = np.nonzero(nclick > 0)[0]
    clicked = clicked[hit]
    sig = sig[hit]
    nclick = nclick[hit]
    pick = np.minimum((uniforms[hit, 4] * nclick).astype(np.int64), nclick - 1)
    rank = np.cumsum(clicked, axis=1) - 1
    sel = clicked & (rank == pick[:, None])
    chosen = np.argmax(sel, axis=1)
    chosen_noise = ~sig[np.arange(hit.size), chosen]
    bb = chosen // 2
    b = (chosen % 2).astype(np.int8)
    ab = np.where(uniforms[hit, 5] < 0.5, 0, 1).astype(np.int8)
    p_err = np.where(chosen_noise, 0.5, e_det[chosen])
    u6 = uniforms[hit, 6]
    a = np.where(ab == bb, np.where(u6 < p_err, b ^ 1, b),
                 np.where(u6 < 0.5, 1, 0)).astype(np.int8)
    double = nclick > 1
    b = np.where(double, np.where(uniforms[hit, 7] < 0.5, 1, 0), b).astype(np.int8)
    return (hit.astype(np.int64), chosen.astype(np.int8), ab, a, b,
            chosen_noise, double)


class _Impl:
    def __init__(self, **funcs):
        self.__dict__.update(funcs)


numpy_impl = _Impl(
    fold_histogram=_fold_histogram_np,
    window_mask=_window_mask_np,
    assign_bits=_assign_bits_np,
    per_pulse_events=_per_pulse_events_np,
)

numba_impl = _Impl(
    fold_histogram=njit(_fold_histogram_loop),
    window_mask=njit(_window_mask_loop),
    assign_bits=njit(_assign_bits_loop),
    per_pulse_events=njit(_per_pulse_events_loop),
)

_active = numba_impl if USE_NUMBA else numpy_impl


def fold_histogram(timestamps, period, bin_width, nbins):
    """Histogram of ``timestamps mod period`` over ``nbins`` bins of ``bin_width``."""
    return _active.fold_histogram(np.ascontiguousarray(timestamps, dtype=np.float64),
                                  float(period), float(bin_width), int(nbins))


def window_mask(timestamps, period, center, half_width):
    """True where the folded timestamp lies within ``half_width`` of ``center``."""
    return _active.window_mask(np.ascontiguousarray(timestamps, dtype=np.float64),
                               float(period), float(center), float(half_width))


def assign_bits(channel, is_noise, e_det, u_basis, u_bit, u_err):
    """Alice basis/bit and Bob bit for events already placed in a channel.

    ``e_det`` is the per-event error probability for signal clicks.
    """
    return _active.assign_bits(
        np.ascontiguousarray(channel, dtype=np.int8),
        np.ascontiguousarray(is_noise, dtype=np.bool_),
        np.ascontiguousarray(e_det, dtype=np.float64),
        np.ascontiguousarray(u_basis, dtype=np.float64),
        np.ascontiguousarray(u_bit, dtype=np.float64),
        np.ascontiguousarray(u_err, dtype=np.float64),
    )


def per_pulse_events(intensity, p_signal, p_noise, e_det, uniforms):
    """Pulse-by-pulse click simulation with double-click resolution.

    ``p_signal[k, ch]`` is the signal click probability of channel ``ch`` for
    intensity class ``k``; ``p_noise[ch]`` the background click probability.
    ``uniforms`` has shape (n, 8). Returns the tuple ``(pulse, channel,
    alice_basis, alice_bit, bob_bit, is_noise, is_double)`` for pulses with
    at least one click.
    """
    return _active.per_pulse_events(
        np.ascontiguousarray(intensity, dtype=np.int64),
        np.ascontiguousarray(p_signal, dtype=np.float64),
        np.ascontiguousarray(p_noise, dtype=np.float64),
        np.ascontiguousarray(e_det, dtype=np.float64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
    )
