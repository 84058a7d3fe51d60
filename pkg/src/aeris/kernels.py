"""Backend selection for the link-budget kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``AERIS_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("AERIS_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _prepare(direct, coef):
    direct = np.ascontiguousarray(direct, dtype=np.float64)
    coef = np.ascontiguousarray(coef, dtype=np.complex128)
    if direct.ndim != 3 or coef.ndim != 5:
        raise ValueError(f"expected direct[S,U,N] and coef[S,U,R,N,M], got {direct.shape}, {coef.shape}")
    S, U, N = direct.shape
    if coef.shape[:2] != (S, U) or coef.shape[3] != N:
        raise ValueError(f"coef shape {coef.shape} does not match direct shape {direct.shape}")
    return direct, coef


def best_snr(direct, coef, phases, scale, backend=None):
    """Best-link SNR per snapshot and UE.

    Returns ``(snr[S, N], uav[S, N], ris[S, N])``; ties go to the lowest
    ``(uav, ris)`` index pair, and ``ris`` is -1 when no RIS exists.
    """
    direct, coef = _prepare(direct, coef)
    phases = np.ascontiguousarray(phases, dtype=np.float64).reshape(coef.shape[2], coef.shape[4])
    impl = _select(backend)
    return impl.best_snr(direct, coef, phases, float(scale))


def rate_sum_batch(direct, coef, phases, scale, bandwidth, weights=None, thresholds=None,
                   bonus=0.0, backend=None):
    """Weighted sum over snapshots of the best-link rates, one value per phase row.

    ``phases`` has shape ``[P, R, M]``. A UE contributes only when its best
    SNR reaches ``thresholds[n]`` (linear); ``None`` counts every UE. Each
    contributing UE also adds ``bonus`` (bps).
    """
    direct, coef = _prepare(direct, coef)
    R, M = coef.shape[2], coef.shape[4]
    phases = np.ascontiguousarray(phases, dtype=np.float64).reshape(-1, R, M)
    if weights is None:
        weights = np.ones(direct.shape[0])
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != (direct.shape[0],):
        raise ValueError(f"weights must have shape ({direct.shape[0]},), got {weights.shape}")
    if thresholds is None:
        thresholds = np.zeros(direct.shape[2])
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if thresholds.shape != (direct.shape[2],):
        raise ValueError(f"thresholds must have shape ({direct.shape[2]},), got {thresholds.shape}")
    impl = _select(backend)
    return impl.rate_sum_batch(direct, coef, phases, float(scale), float(bandwidth), weights, thresholds,
                               float(bonus))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available in this install")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")
