"""Real-transform backend: torch when importable (its CPU FFT is several
times faster than pocketfft at these sizes), scipy otherwise.  BMHD_THREADS
caps the backend's thread pool."""

from __future__ import annotations

import os

import numpy as np


def _threads() -> int:
    env = os.environ.get("BMHD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


try:
    import torch as _torch

    _torch.set_num_threads(_threads())
    BACKEND = "torch"

    def rfftn(a: np.ndarray, axes) -> np.ndarray:
        return _torch.fft.rfftn(_torch.from_numpy(np.ascontiguousarray(a)), dim=axes).numpy()

    def irfftn(a: np.ndarray, s, axes) -> np.ndarray:
        return _torch.fft.irfftn(
            _torch.from_numpy(np.ascontiguousarray(a)), s=s, dim=axes
        ).numpy()

except ImportError:  # pragma: no cover - exercised only without torch
    import scipy.fft as _sfft

    BACKEND = "scipy"

    def rfftn(a: np.ndarray, axes) -> np.ndarray:
        return _sfft.rfftn(a, axes=axes, workers=_threads())

    def irfftn(a: np.ndarray, s, axes) -> np.ndarray:
        return _sfft.irfftn(a, s=s, axes=axes, workers=_threads())
