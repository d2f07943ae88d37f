"""Quantization and ideal separate source-channel baselines.

Codewords are clipped to [-1, 1], companded with a mu-law curve, and rounded on a
uniform midtread grid with 2^B - 1 levels (odd count, so zero is a level center).
The ideal baseline converts a design SNR into a feedback dimension through the
channel capacity and models digital transmission as a threshold curve: at or
above the design SNR the link is error free and reconstruction quality equals the
quantized autoencoder's NMSE at that dimension; below it the feedback is lost and
NMSE sits at the 0 dB floor.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TABLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int = 5
    companding_mu: float = 255.0

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ConfigError("bits must lie in [2, 8]")
        if self.companding_mu <= 0:
            raise ConfigError("companding_mu must be positive")

    @property
    def n_levels(self):
        return 2 ** self.bits - 1

    @property
    def step(self):
        # midtread spacing in the companded domain over [-1, 1]
        return 2.0 / (self.n_levels - 1)


def compand(x, spec: QuantizerSpec):
    mu = spec.companding_mu
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def expand(y, spec: QuantizerSpec):
    mu = spec.companding_mu
    return np.sign(y) * (np.expm1(np.abs(y) * np.log1p(mu))) / mu


def quantize(x, spec: QuantizerSpec):
    """Values -> level indices in [0, 2^B - 2]. Input is clipped to [-1, 1] first."""
    y = compand(np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0), spec)
    idx = np.rint((y + 1.0) / spec.step)
    return np.clip(idx, 0, spec.n_levels - 1).astype(np.int64)


def dequantize(idx, spec: QuantizerSpec):
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= spec.n_levels):
        raise ConfigError(f"index outside [0, {spec.n_levels - 1}]")
    y = idx.astype(np.float64) * spec.step - 1.0
    return expand(y, spec)


def level_centers(spec: QuantizerSpec):
    """All representable values, ascending. Zero sits exactly in the middle."""
    return dequantize(np.arange(spec.n_levels), spec)


def capacity(mu_db):
    """Error-free bits per channel use at mean post-combining SNR mu_db."""
    return math.log2(1.0 + 10.0 ** (mu_db / 10.0))


def capacity_ergodic(mu_db, gain_samples):
    """Ergodic alternative: average log2(1 + g * snr) over squared channel gains."""
    g = np.asarray(gain_samples, dtype=np.float64)
    if g.size == 0 or (g < 0).any():
        raise ConfigError("gain_samples must be a nonempty array of squared gains")
    return float(np.mean(np.log2(1.0 + g * 10.0 ** (mu_db / 10.0))))


def ideal_dimension(k, mu_db, bits=5):
    """Feedback dimension a capacity-achieving digital scheme supports: ceil(k*C/B)."""
    if k < 1 or bits < 1:
        raise ConfigError("k and bits must be positive")
    return math.ceil(k * capacity(mu_db) / bits)


@dataclass(frozen=True)
class IdealSchemeSpec:
    design_snr_db: float
    k: int
    bits: int = 5
    capacity_mode: str = "mean"

    @property
    def m(self):
        return ideal_dimension(self.k, self.design_snr_db, self.bits)


def sscc_ideal_nmse(scheme: IdealSchemeSpec, test_mu_db, table):
    """Threshold NMSE in dB for one evaluation SNR."""
    if test_mu_db < scheme.design_snr_db:
        return 0.0
    key = scheme.m
    if key not in table:
        raise ConfigError(f"autoencoder table has no entry for m={key}")
    return float(table[key])


def ideal_curve(scheme: IdealSchemeSpec, grid_db, table):
    return [sscc_ideal_nmse(scheme, mu, table) for mu in grid_db]


def envelope(curves):
    """Pointwise minimum of (grid, values) curves sharing one grid."""
    if not curves:
        raise ConfigError("envelope of zero curves")
    grid0 = list(curves[0][0])
    values = []
    for grid, vals in curves:
        if list(grid) != grid0:
            raise ConfigError("curves must share the same SNR grid")
        if len(vals) != len(grid0):
            raise ConfigError("curve length does not match its grid")
        values.append(np.asarray(vals, dtype=np.float64))
    return np.minimum.reduce(values).tolist()


def save_table(table, provenance, path):
    """Autoencoder NMSE table {m: nmse_db} with provenance for reproducibility."""
    payload = {
        "format_version": TABLE_FORMAT_VERSION,
        "entries": {str(m): float(v) for m, v in sorted(table.items())},
        "provenance": provenance,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def load_table(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != TABLE_FORMAT_VERSION:
        raise ConfigError(f"unsupported table version {payload.get('format_version')!r}")
    return {int(m): float(v) for m, v in payload["entries"].items()}, payload["provenance"]
