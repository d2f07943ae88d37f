"""Spatial-frequency <-> angular-delay transforms.

A downlink CSI matrix H lives on (subcarrier, antenna) axes. Left-multiplying by a
unitary inverse DFT moves the subcarrier axis to delay, right-multiplying by a
unitary DFT moves the antenna axis to angle. Both directions use orthonormal
scaling so the pair is an exact inverse and energy is preserved.

Truncation keeps the first n_trunc delay rows; for scenarios whose delay spread
fits inside n_trunc/bandwidth the dropped rows carry almost no energy.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class AngularDelayMatrix:
    """Angular-delay values plus enough metadata to undo a truncation.

    values: complex array of shape (..., n_rows, n_tx)
    n_full: delay rows the matrix had before any truncation
    """

    values: np.ndarray
    n_full: int

    @property
    def truncated(self):
        return self.values.shape[-2] < self.n_full

    @property
    def n_rows(self):
        return self.values.shape[-2]


def sf_to_ad(h):
    """Spatial-frequency matrix (..., n_sub, n_tx) -> angular-delay matrix."""
    h = np.asarray(h)
    if h.ndim < 2:
        raise ContractError("expected at least a 2-D (n_sub, n_tx) matrix")
    f = np.fft.ifft(h, axis=-2, norm="ortho")
    f = np.fft.fft(f, axis=-1, norm="ortho")
    return AngularDelayMatrix(values=f, n_full=h.shape[-2])


def truncate(f: AngularDelayMatrix, n_trunc):
    if f.truncated:
        raise ContractError("matrix is already truncated")
    if not 0 < n_trunc <= f.n_full:
        raise ContractError(f"n_trunc={n_trunc} outside (0, {f.n_full}]")
    return AngularDelayMatrix(values=f.values[..., :n_trunc, :].copy(), n_full=f.n_full)


def zero_pad(f: AngularDelayMatrix):
    """Restore a truncated matrix to its full delay length with zero rows."""
    if not f.truncated:
        return AngularDelayMatrix(values=f.values.copy(), n_full=f.n_full)
    pad = list(f.values.shape)
    pad[-2] = f.n_full - f.values.shape[-2]
    values = np.concatenate([f.values, np.zeros(pad, dtype=f.values.dtype)], axis=-2)
    return AngularDelayMatrix(values=values, n_full=f.n_full)


def ad_to_sf(f: AngularDelayMatrix):
    """Angular-delay matrix -> spatial-frequency matrix. Requires full delay length."""
    if f.truncated:
        raise ContractError("zero_pad before inverting a truncated matrix")
    h = np.fft.fft(f.values, axis=-2, norm="ortho")
    h = np.fft.ifft(h, axis=-1, norm="ortho")
    return h


def retained_energy_fraction(f: AngularDelayMatrix, n_trunc):
    """Fraction of total energy inside the first n_trunc delay rows, per sample."""
    if f.truncated:
        raise ContractError("fraction is defined on the full-length matrix")
    total = np.sum(np.abs(f.values) ** 2, axis=(-2, -1))
    kept = np.sum(np.abs(f.values[..., :n_trunc, :]) ** 2, axis=(-2, -1))
    with np.errstate(invalid="ignore"):
        frac = np.where(total > 0, kept / np.maximum(total, 1e-300), 1.0)
    return frac
