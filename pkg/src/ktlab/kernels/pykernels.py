"""Pure-numpy implementations of the hot kernels.

These mirror ``_ckernels`` exactly; the package selects whichever backend
imports cleanly (see ``ktlab.kernels``).  Both operate on periodic grids.
"""
from __future__ import annotations

import numpy as np


def _cr_weights(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Catmull-Rom weights for nodes at offsets -1, 0, 1, 2."""
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t + 2.0 * t2 - t3)
    w1 = 0.5 * (2.0 - 5.0 * t2 + 3.0 * t3)
    w2 = 0.5 * (t + 4.0 * t2 - 3.0 * t3)
    w3 = 0.5 * (-t2 + t3)
    return w0, w1, w2, w3


def interp_cubic_periodic(values: np.ndarray, points: np.ndarray, clip: bool = False) -> np.ndarray:
    """Periodic Catmull-Rom interpolation on a uniform grid.

    Parameters
    ----------
    values : (N0, ..., N_{d-1}) array, d in {1, 2, 3}
    points : (npts, d) array of fractional grid indices (any real value;
        wrapped periodically)
    clip : clamp each result to the hull of the 2^d cell corners enclosing
        the point (quasi-monotone variant, exact max principle)
    """
    values = np.asarray(values, dtype=np.float64)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = values.ndim
    if points.shape[1] != d:
        raise ValueError(f"points have dimension {points.shape[1]}, grid has {d}")

    base = np.floor(points).astype(np.int64)
    frac = points - base
    weights = []  # per axis: list of 4 weight arrays
    idx = []  # per axis: list of 4 wrapped index arrays
    for ax in range(d):
        n = values.shape[ax]
        w = _cr_weights(frac[:, ax])
        weights.append(w)
        idx.append([np.mod(base[:, ax] + off, n) for off in (-1, 0, 1, 2)])

    out = np.zeros(points.shape[0])
    if d == 1:
        for a in range(4):
            out += weights[0][a] * values[idx[0][a]]
    elif d == 2:
        for a in range(4):
            row = idx[0][a]
            wa = weights[0][a]
            for b in range(4):
                out += wa * weights[1][b] * values[row, idx[1][b]]
    elif d == 3:
        for a in range(4):
            for b in range(4):
                wab = weights[0][a] * weights[1][b]
                for c in range(4):
                    out += wab * weights[2][c] * values[idx[0][a], idx[1][b], idx[2][c]]
    else:
        raise ValueError("only d in {1,2,3} supported")

    if clip:
        lo = np.full(points.shape[0], np.inf)
        hi = np.full(points.shape[0], -np.inf)
        corners = [(0,), (1,)] if d == 1 else (
            [(a, b) for a in (0, 1) for b in (0, 1)] if d == 2
            else [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]
        )
        for corner in corners:
            sel = tuple(idx[ax][1 + corner[ax]] for ax in range(d))
            v = values[sel]
            lo = np.minimum(lo, v)
            hi = np.maximum(hi, v)
        out = np.clip(out, lo, hi)
    return out


def eval_trig_modes(
    points: np.ndarray,
    kvecs: np.ndarray,
    cos_amps: np.ndarray,
    sin_amps: np.ndarray,
    chunk: int = 8192,
) -> np.ndarray:
    """Evaluate sum_m [cos(k_m.x) c_m + sin(k_m.x) s_m] at scattered points.

    points (npts, d); kvecs (m, d); cos_amps, sin_amps (m, dv).
    Returns (npts, dv).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    kvecs = np.asarray(kvecs, dtype=np.float64)
    cos_amps = np.asarray(cos_amps, dtype=np.float64)
    sin_amps = np.asarray(sin_amps, dtype=np.float64)
    npts = points.shape[0]
    out = np.empty((npts, cos_amps.shape[1]))
    for start in range(0, npts, chunk):
        sl = slice(start, min(start + chunk, npts))
        phase = points[sl] @ kvecs.T
        out[sl] = np.cos(phase) @ cos_amps + np.sin(phase) @ sin_amps
    return out
