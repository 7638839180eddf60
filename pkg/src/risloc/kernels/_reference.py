"""Pure-numpy implementations of the steering kernels.

These define the semantics; the compiled module in ``_fast.pyx`` must agree
with them to rounding error.
"""

import numpy as np

_CHUNK = 256


def static_steering(points, elements, reference, wavenumber):
    """``exp(-j k (||p_k - p_m|| - ||p_k - p_r||))`` for every candidate."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    elements = np.ascontiguousarray(elements, dtype=np.float64)
    out = np.empty((points.shape[0], elements.shape[0]), dtype=np.complex128)
    for start in range(0, points.shape[0], _CHUNK):
        pts = points[start : start + _CHUNK]
        d = np.sqrt(((pts[:, None, :] - elements[None, :, :]) ** 2).sum(axis=2))
        dr = np.sqrt(((pts - reference) ** 2).sum(axis=1))
        phase = -wavenumber * (d - dr[:, None])
        blk = out[start : start + _CHUNK]
        np.cos(phase, out=blk.real)
        np.sin(phase, out=blk.imag)
    return out


def planar_steering(directions, offsets, wavenumber):
    """``exp(j k (p_m - p_r) . k_hat)`` for every look direction."""
    phase = wavenumber * (np.asarray(directions, dtype=np.float64) @ np.asarray(offsets, dtype=np.float64).T)
    out = np.empty(phase.shape, dtype=np.complex128)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


def mobile_response(p, v, elements, reference, weights, wavenumber, ts):
    """Noise-free pilot responses ``h_l = sum_m w_lm exp(-j k f_lm)``, l = 1..L."""
    diff = p - elements
    d = np.sqrt((diff * diff).sum(axis=1))
    dr = np.sqrt(((p - reference) ** 2).sum())
    radial = (diff @ v) / d
    ell = np.arange(1, weights.shape[0] + 1, dtype=np.float64) * ts
    phase = -wavenumber * ((d - dr)[None, :] + ell[:, None] * radial[None, :])
    return (weights * (np.cos(phase) + 1j * np.sin(phase))).sum(axis=1)
