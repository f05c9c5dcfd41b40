"""Hot sample-loop kernels.

Each kernel has a numba ``@njit`` implementation and a numpy/scipy fallback
with identical semantics. Set ``ENVVC_DISABLE_NUMBA=1`` to force the fallback
(useful for debugging, or where numba is unavailable).
"""

import os

import numpy as np
from scipy import signal

_DISABLED = os.environ.get("ENVVC_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def resonator_coefficients(freqs, bandwidths, sample_rate):
    """Two-pole resonator coefficients ``(b0, a1, a2)`` with unit gain at resonance.

    The recursion is ``y[n] = b0*x[n] + a1*y[n-1] - a2*y[n-2]``.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    r = np.exp(-np.pi * bandwidths / sample_rate)
    theta = 2.0 * np.pi * freqs / sample_rate
    a1 = 2.0 * r * np.cos(theta)
    a2 = r * r
    b0 = (1.0 - r) * np.sqrt(1.0 - 2.0 * r * np.cos(2.0 * theta) + r * r)
    return b0, a1, a2


# ---------------------------------------------------------------- resonators


def _resonator_cascade_numpy(x, b0, a1, a2, block):
    n = x.shape[0]
    n_blocks, n_res = b0.shape
    y = x.astype(np.float64).copy()
    for k in range(n_res):
        prev1 = 0.0
        prev2 = 0.0
        out = np.empty(n)
        for j in range(n_blocks):
            lo = j * block
            hi = min(n, lo + block)
            if lo >= n:
                break
            b = np.array([b0[j, k]])
            a = np.array([1.0, -a1[j, k], a2[j, k]])
            zi = signal.lfiltic(b, a, [prev1, prev2])
            seg, _ = signal.lfilter(b, a, y[lo:hi], zi=zi)
            out[lo:hi] = seg
            if hi - lo >= 2:
                prev1, prev2 = seg[-1], seg[-2]
            else:
                prev1, prev2 = seg[-1], prev1
        y = out
    return y


def _resonator_cascade_loop(x, b0, a1, a2, block):
    n = x.shape[0]
    n_blocks, n_res = b0.shape
    y = np.empty(n)
    s1 = np.zeros(n_res)
    s2 = np.zeros(n_res)
    for i in range(n):
        j = i // block
        if j >= n_blocks:
            j = n_blocks - 1
        v = x[i]
        for k in range(n_res):
            out = b0[j, k] * v + a1[j, k] * s1[k] - a2[j, k] * s2[k]
            s2[k] = s1[k]
            s1[k] = out
            v = out
        y[i] = v
    return y


if USE_NUMBA:
    _resonator_cascade_fast = njit(cache=True)(_resonator_cascade_loop)
else:
    _resonator_cascade_fast = None


def resonator_cascade(x, freqs, bandwidths, block, sample_rate, use_numba=None):
    """Filter ``x`` through serial two-pole resonators.

    ``freqs`` and ``bandwidths`` are ``(n_blocks, n_res)`` arrays holding
    piecewise-constant resonator settings, one row per ``block`` samples.
    Filter state carries across block boundaries.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    freqs = np.atleast_2d(np.asarray(freqs, dtype=np.float64))
    bandwidths = np.atleast_2d(np.asarray(bandwidths, dtype=np.float64))
    if freqs.shape != bandwidths.shape:
        raise ValueError("freqs and bandwidths must have the same shape")
    if x.size == 0:
        return x.copy()
    b0, a1, a2 = resonator_coefficients(freqs, bandwidths, sample_rate)
    use_numba = USE_NUMBA if use_numba is None else (use_numba and USE_NUMBA)
    if use_numba:
        return _resonator_cascade_fast(
            x, np.ascontiguousarray(b0), np.ascontiguousarray(a1), np.ascontiguousarray(a2), int(block)
        )
    return _resonator_cascade_numpy(x, b0, a1, a2, int(block))


# ------------------------------------------------------------ harmonic sum


def _harmonic_sum_numpy(phase, offsets):
    out = np.zeros_like(phase)
    for k in range(1, offsets.shape[0] + 1):
        out += np.cos(k * phase + offsets[k - 1])
    return out


def _harmonic_sum_loop(phase, offsets):
    n = phase.shape[0]
    n_harmonics = offsets.shape[0]
    cos_off = np.cos(offsets)
    sin_off = np.sin(offsets)
    out = np.zeros(n)
    for i in range(n):
        # angle-addition recurrence for cos(k p), sin(k p)
        c1 = np.cos(phase[i])
        s1 = np.sin(phase[i])
        ck = c1
        sk = s1
        acc = ck * cos_off[0] - sk * sin_off[0]
        for k in range(1, n_harmonics):
            ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
            acc += ck * cos_off[k] - sk * sin_off[k]
        out[i] = acc
    return out


if USE_NUMBA:
    _harmonic_sum_fast = njit(cache=True)(_harmonic_sum_loop)
else:
    _harmonic_sum_fast = None


def schroeder_offsets(n_harmonics):
    """Low-crest-factor phase offsets ``-pi k (k-1) / K``."""
    k = np.arange(1, n_harmonics + 1, dtype=np.float64)
    return -np.pi * k * (k - 1.0) / max(n_harmonics, 1)


def harmonic_sum(phase, n_harmonics, offsets=None, use_numba=None):
    """Band-limited pulse train ``sum_{k=1..K} cos(k * phase + offsets[k-1])``.

    ``offsets`` defaults to zeros (a cosine-phase pulse train).
    """
    phase = np.ascontiguousarray(phase, dtype=np.float64)
    if n_harmonics < 1:
        return np.zeros_like(phase)
    if offsets is None:
        offsets = np.zeros(n_harmonics)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    if offsets.shape != (n_harmonics,):
        raise ValueError(f"expected {n_harmonics} phase offsets, got {offsets.shape}")
    use_numba = USE_NUMBA if use_numba is None else (use_numba and USE_NUMBA)
    if use_numba:
        return _harmonic_sum_fast(phase, offsets)
    return _harmonic_sum_numpy(phase, offsets)


# ------------------------------------------------------------- silhouette


def _silhouette_numpy(x, labels, n_labels):
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    dist = np.sqrt(np.maximum(d2, 0.0))
    np.fill_diagonal(dist, 0.0)
    onehot = np.zeros((x.shape[0], n_labels))
    onehot[np.arange(x.shape[0]), labels] = 1.0
    sums = dist @ onehot
    counts = onehot.sum(axis=0)
    own = counts[labels]
    a = sums[np.arange(x.shape[0]), labels] / np.maximum(own - 1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = sums / counts[None, :]
    means[np.arange(x.shape[0]), labels] = np.inf
    means[:, counts == 0] = np.inf
    b = means.min(axis=1)
    s = (b - a) / np.maximum(np.maximum(a, b), 1e-300)
    s[own == 1] = 0.0
    return s


def _silhouette_loop(x, labels, n_labels):
    n, d = x.shape
    counts = np.zeros(n_labels)
    for i in range(n):
        counts[labels[i]] += 1.0
    s = np.empty(n)
    sums = np.empty(n_labels)
    for i in range(n):
        for c in range(n_labels):
            sums[c] = 0.0
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                acc += diff * diff
            sums[labels[j]] += np.sqrt(acc)
        own = labels[i]
        if counts[own] <= 1.0:
            s[i] = 0.0
            continue
        a = sums[own] / (counts[own] - 1.0)
        b = np.inf
        for c in range(n_labels):
            if c != own and counts[c] > 0:
                m = sums[c] / counts[c]
                if m < b:
                    b = m
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0 else 0.0
    return s


if USE_NUMBA:
    _silhouette_fast = njit(cache=True)(_silhouette_loop)
else:
    _silhouette_fast = None


def silhouette_samples(x, labels, use_numba=None):
    """Per-point Euclidean silhouette values; ``labels`` must be dense 0..L-1."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    n_labels = int(labels.max()) + 1
    use_numba = USE_NUMBA if use_numba is None else (use_numba and USE_NUMBA)
    if use_numba:
        return _silhouette_fast(x, labels, n_labels)
    return _silhouette_numpy(x, labels, n_labels)
