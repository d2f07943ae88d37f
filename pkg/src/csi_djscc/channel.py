"""Differentiable feedback-channel operations.

The encoder output is a real vector of length 2k, packed into k complex symbols,
power-normalized so each codeword carries exactly k units of energy, and sent
over either an AWGN channel or a per-subcarrier fading uplink with maximum ratio
combining at the receiver. mu is the channel SNR in dB; sigma^2 = 10^(-mu/10).

Noise is always sampled first and then combined linearly, so with the noise
realization held fixed every operation here is differentiable in the symbols and
in anything upstream of them.
"""

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, ContractError, DegenerateInputError

CHANNEL_MODES = ("awgn", "fading_mrc")


@dataclass(frozen=True)
class ChannelConfig:
    mode: str = "fading_mrc"
    equalize_mrc: bool = False
    # feedback symbols ride on uplink subcarriers [offset, offset + k)
    subcarrier_offset: int = 0

    def __post_init__(self):
        if self.mode not in CHANNEL_MODES:
            raise ConfigError(f"mode must be one of {CHANNEL_MODES}")
        if self.subcarrier_offset < 0:
            raise ConfigError("subcarrier_offset must be nonnegative")


def make_generator(seed):
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def real_to_complex(c):
    """(..., 2k) real -> (..., k) complex, s_i = c_i + j c_{k+i}."""
    n = c.shape[-1]
    if n % 2:
        raise ContractError(f"last axis must be even, got {n}")
    k = n // 2
    return torch.complex(c[..., :k], c[..., k:])


def complex_to_real(s):
    """(..., k) complex -> (..., 2k) real, inverse of real_to_complex."""
    return torch.cat([s.real, s.imag], dim=-1)


def power_normalize(s):
    """Scale each codeword so sum_i |s_i|^2 equals k exactly."""
    k = s.shape[-1]
    norms = torch.linalg.vector_norm(s, dim=-1, keepdim=True)
    if not bool((norms > 0).all()):
        raise DegenerateInputError("all-zero codeword cannot be power-normalized")
    return s * (math.sqrt(k) / norms)


def snr_to_noise_power(mu_db):
    """Noise variance sigma^2 per complex dimension for a given SNR in dB."""
    if isinstance(mu_db, torch.Tensor):
        return torch.pow(10.0, -mu_db / 10.0)
    return 10.0 ** (-mu_db / 10.0)


def _complex_noise(shape, sigma2, dtype, generator):
    # sigma2 broadcasts against shape; variance split evenly over re/im
    real_dtype = torch.empty(0, dtype=dtype).real.dtype
    re = torch.randn(shape, dtype=real_dtype, generator=generator)
    im = torch.randn(shape, dtype=real_dtype, generator=generator)
    scale = torch.sqrt(sigma2.to(real_dtype) / 2.0)
    return torch.complex(re, im) * scale


def _as_sigma2(mu_db, batch_shape, device):
    mu = torch.as_tensor(mu_db, dtype=torch.float64, device=device)
    if mu.ndim == 0:
        mu = mu.expand(batch_shape)
    elif mu.shape != torch.Size(batch_shape):
        raise ContractError(f"mu shape {tuple(mu.shape)} does not match batch {batch_shape}")
    return snr_to_noise_power(mu)


def apply_awgn(s, mu_db, generator=None):
    """y = s + z with z ~ CN(0, sigma^2 I). mu_db may be scalar or (batch,)."""
    sigma2 = _as_sigma2(mu_db, s.shape[:-1], s.device)
    z = _complex_noise(s.shape, sigma2.unsqueeze(-1), s.dtype, generator)
    return s + z


def apply_fading_mrc(s, h_up, mu_db, cfg: ChannelConfig = None, generator=None):
    """Per-subcarrier scalar fading with maximum ratio combining.

    s: (batch, k) complex symbols, symbol i rides subcarrier offset + i
    h_up: (batch, n_sub, n_tx) complex uplink CSI
    returns (batch, k) combined symbols ||h_i|| s_i + w_i^H z_i (divided by
    ||h_i|| when cfg.equalize_mrc).
    """
    cfg = cfg or ChannelConfig()
    if s.ndim != 2 or h_up.ndim != 3:
        raise ContractError("expected s (batch, k) and h_up (batch, n_sub, n_tx)")
    batch, k = s.shape
    lo, hi = cfg.subcarrier_offset, cfg.subcarrier_offset + k
    if hi > h_up.shape[1]:
        raise ContractError(
            f"need uplink subcarriers [{lo}, {hi}) but only {h_up.shape[1]} exist")
    h = h_up[:, lo:hi, :]  # (batch, k, n_tx)
    norms = torch.linalg.vector_norm(h, dim=-1)  # (batch, k) real
    if not bool((norms > 0).all()):
        raise DegenerateInputError("zero uplink channel on an occupied subcarrier")

    sigma2 = _as_sigma2(mu_db, (batch,), s.device)
    z = _complex_noise(h.shape, sigma2[:, None, None], s.dtype, generator)
    y = h * s.unsqueeze(-1) + z
    w = h / norms.unsqueeze(-1).to(h.dtype)
    out = (w.conj() * y).sum(dim=-1)
    if cfg.equalize_mrc:
        out = out / norms.to(out.dtype)
    return out


def apply_channel(s, mu_db, cfg: ChannelConfig, h_up=None, generator=None):
    if cfg.mode == "awgn":
        return apply_awgn(s, mu_db, generator=generator)
    if h_up is None:
        raise ContractError("fading_mrc channel needs uplink CSI")
    return apply_fading_mrc(s, h_up, mu_db, cfg, generator=generator)
