"""End-to-end feedback pipelines.

Four variants share one composite module:

  adjscc      learned analysis/synthesis transforms, SNR-adaptive gates everywhere
  djscc       same chain with no attention gates (trained for one fixed SNR)
  adjscc_tad  no learned transforms; DFT + truncation in, zero-pad + inverse out,
              the network sees the normalized truncated angular-delay matrix
  sscc_bit    separate source coding baseline: plain autoencoder on the truncated
              angular-delay matrix, codewords quantized to bits outside training

The forward chain of the over-the-air variants: normalize, analysis transform,
encode to m = 2k reals, pack to k complex symbols, power-normalize, fading + MRC
(or AWGN), unpack, decode, synthesis transform, denormalize. Training losses live
on the normalized tensors; reconstruction quality is always measured on
denormalized spatial-frequency matrices.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from . import channel as ch
from . import networks as nets
from . import quantization as quant
from . import transforms
from .datagen import CsiDataset, NormStats, denormalize, normalize
from .errors import ConfigError, ContractError

VARIANTS = ("adjscc", "djscc", "adjscc_tad", "sscc_bit")

# variants whose network input is the truncated angular-delay matrix
_TAD_VARIANTS = ("adjscc_tad", "sscc_bit")


@dataclass(frozen=True)
class SnrPolicy:
    kind: str = "uniform"  # "uniform" or "fixed"
    low_db: float = -10.0
    high_db: float = 10.0
    value_db: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ConfigError("snr policy kind must be 'uniform' or 'fixed'")
        if self.kind == "uniform" and not self.high_db >= self.low_db:
            raise ConfigError("snr range must satisfy high >= low")

    @property
    def range_db(self):
        if self.kind == "fixed":
            return (self.value_db, self.value_db)
        return (self.low_db, self.high_db)

    def to_dict(self):
        if self.kind == "fixed":
            return {"kind": "fixed", "value_db": self.value_db}
        return {"kind": "uniform", "low_db": self.low_db, "high_db": self.high_db}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad snr policy: {e}") from e


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "adjscc"
    backbone: str = "csinet"
    n_sub: int = 64
    n_tx: int = 16
    n_trunc: int = 16
    k: int = 16
    m: int = None  # codeword length; defaults to 2k, settable for sscc_bit
    widths: tuple = (32, 32)
    af_mode: str = None  # derived from variant unless set explicitly
    channel: ch.ChannelConfig = field(default_factory=ch.ChannelConfig)
    snr_policy: SnrPolicy = field(default_factory=SnrPolicy)
    quantizer: quant.QuantizerSpec = field(default_factory=quant.QuantizerSpec)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.k < 1:
            raise ConfigError("k must be positive")
        if self.m is not None and self.m < 1:
            raise ConfigError("m must be positive")
        if self.n_trunc > self.n_sub:
            raise ConfigError("n_trunc cannot exceed n_sub")

    @property
    def codeword_len(self):
        return 2 * self.k if self.m is None else self.m

    @property
    def resolved_af_mode(self):
        if self.af_mode is not None:
            return self.af_mode
        return "active" if self.variant in ("adjscc", "adjscc_tad") else "absent"

    @property
    def normalization_domain(self):
        return "tad" if self.variant in _TAD_VARIANTS else "sf"

    @property
    def uses_learned_transform(self):
        return self.variant in ("adjscc", "djscc")

    @property
    def uses_channel(self):
        return self.variant != "sscc_bit"


class FeedbackModel(nn.Module):
    """Composite autoencoder. Submodules atn/stn/offset exist only when used."""

    def __init__(self, arch):
        super().__init__()
        self.arch = arch
        af = arch["af_mode"]
        n_trunc, n_tx, m = arch["n_trunc"], arch["n_tx"], arch["m"]
        if arch["learned_transform"]:
            self.atn = nets.AnalysisTransform(arch["n_sub"], n_trunc,
                                              widths=tuple(arch["widths"]), af_mode=af)
            self.stn = nets.SynthesisTransform(n_trunc, arch["n_sub"],
                                               widths=tuple(arch["widths"]), af_mode=af)
        self.encoder = nets.make_encoder(arch["backbone"], n_trunc, n_tx, m, af_mode=af)
        self.decoder = nets.make_decoder(arch["backbone"], n_trunc, n_tx, m, af_mode=af)
        if arch["variant"] == "sscc_bit":
            self.offset = nets.OffsetNet(m)
        self.channel_cfg = ch.ChannelConfig(**arch["channel"])

    @property
    def variant(self):
        return self.arch["variant"]

    def encode_symbols(self, x, snr_db):
        """Normalized input -> power-normalized complex symbols (batch, k)."""
        if self.variant == "sscc_bit":
            raise ContractError("bit-level variant has no complex symbol stage")
        t = self.atn(x, snr_db) if self.arch["learned_transform"] else x
        c = self.encoder(t, snr_db)
        return ch.power_normalize(ch.real_to_complex(c))

    def forward(self, x, snr_db, h_up=None, generator=None):
        """Normalized input -> (normalized reconstruction, codeword or symbols).

        x: (batch, 2, rows, n_tx) where rows is n_sub for learned-transform
        variants and n_trunc otherwise. snr_db: (batch,) tensor.
        """
        if self.variant == "sscc_bit":
            c = self.encoder(x, snr_db)
            return self.decoder(c, snr_db), c
        s = self.encode_symbols(x, snr_db)
        power = (s.detach().abs() ** 2).sum(dim=-1)
        k = s.shape[-1]
        if not bool(((power - k).abs() <= 1e-3 * k).all()):
            raise ContractError("codeword power constraint violated in forward pass")
        s_hat = ch.apply_channel(s, snr_db, self.channel_cfg, h_up=h_up,
                                 generator=generator)
        c_hat = ch.complex_to_real(s_hat)
        t_hat = self.decoder(c_hat, snr_db)
        x_hat = self.stn(t_hat, snr_db) if self.arch["learned_transform"] else t_hat
        return x_hat, s


def _tad_stats(dataset: CsiDataset, n_trunc):
    h = dataset.splits["train"][0]
    f = transforms.truncate(transforms.sf_to_ad(h), n_trunc)
    return NormStats.from_samples(f.values)


def make_arch(cfg: PipelineConfig, stats: NormStats):
    return {
        "variant": cfg.variant,
        "backbone": cfg.backbone,
        "n_sub": cfg.n_sub,
        "n_tx": cfg.n_tx,
        "n_trunc": cfg.n_trunc,
        "k": cfg.k,
        "m": cfg.codeword_len,
        "widths": list(cfg.widths),
        "af_mode": cfg.resolved_af_mode,
        "learned_transform": cfg.uses_learned_transform,
        "channel": {"mode": cfg.channel.mode,
                    "equalize_mrc": cfg.channel.equalize_mrc,
                    "subcarrier_offset": cfg.channel.subcarrier_offset},
        "norm": {"domain": cfg.normalization_domain, **stats.to_dict()},
        "quantizer": ({"bits": cfg.quantizer.bits,
                       "companding_mu": cfg.quantizer.companding_mu}
                      if cfg.variant == "sscc_bit" else None),
    }


def build_bundle(cfg: PipelineConfig, dataset: CsiDataset, seed=0):
    """Fresh deterministic bundle whose normalization constants come from the
    dataset's train split (spatial-frequency or truncated angular-delay stats,
    depending on the variant)."""
    if cfg.n_sub != dataset.scenario.n_sub or cfg.n_tx != dataset.scenario.n_tx:
        raise ConfigError("pipeline geometry does not match the dataset scenario")
    if cfg.normalization_domain == "sf":
        stats = dataset.stats
    else:
        stats = _tad_stats(dataset, cfg.n_trunc)
    arch = make_arch(cfg, stats)
    model = FeedbackModel(arch)
    nets.init_params(model, seed)
    model.eval()
    return nets.ModelBundle(model=model, arch=arch, snr_range_db=cfg.snr_policy.range_db)


def build_model_from_arch(arch):
    return FeedbackModel(arch)


def load_pipeline_bundle(in_dir):
    meta = nets.load_bundle_meta(in_dir)
    model = FeedbackModel(meta["arch"])
    nets.load_group_blobs(model, meta, in_dir)
    model.eval()
    return nets.ModelBundle(model=model, arch=meta["arch"],
                            snr_range_db=tuple(meta["snr_range_db"]))


def bundle_stats(bundle):
    return NormStats.from_dict(bundle.arch["norm"])


def _to_chw(x):
    # (..., rows, n_tx, 2) float -> torch (batch, 2, rows, n_tx)
    t = torch.from_numpy(np.ascontiguousarray(x))
    return t.permute(0, 3, 1, 2).contiguous()


def _from_chw(t):
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()


def network_inputs(bundle, h_down):
    """Physical downlink CSI batch -> the model's normalized input tensor."""
    arch = bundle.arch
    stats = bundle_stats(bundle)
    if arch["norm"]["domain"] == "sf":
        x = normalize(h_down, stats)
    else:
        f = transforms.truncate(transforms.sf_to_ad(h_down), arch["n_trunc"])
        x = normalize(f.values, stats)
    return _to_chw(x)


def prepare_split(bundle, dataset: CsiDataset, split):
    """(normalized inputs, uplink tensor) for one dataset split."""
    h_down, h_up = dataset.splits[split]
    x = network_inputs(bundle, h_down)
    h_up_t = torch.from_numpy(h_up).to(torch.complex64)
    return x, h_up_t


def _dequantized_codewords(model, x, spec: quant.QuantizerSpec, batch_size=256):
    """Encoder codewords pushed through quantize/dequantize, without gradients."""
    outs = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            xb = x[i:i + batch_size]
            snr = torch.zeros(xb.shape[0], dtype=xb.dtype)
            c = model.encoder(xb, snr).numpy()
            outs.append(quant.dequantize(quant.quantize(c, spec), spec))
    return torch.from_numpy(np.concatenate(outs).astype(np.float32))


def reconstruct(bundle, h_down, h_up=None, mu_db=0.0, noise_seed=0, batch_size=256,
                apply_quantizer=True):
    """Run the full pipeline on physical CSI, return reconstructed downlink CSI.

    h_down: complex (batch, n_sub, n_tx). Output has the same shape and lives in
    the spatial-frequency domain regardless of variant (truncated-domain variants
    are zero-padded and inverse transformed).
    """
    model = bundle.model
    arch = bundle.arch
    was_training = model.training
    model.eval()
    stats = bundle_stats(bundle)
    h_down = np.asarray(h_down)

    x_all = network_inputs(bundle, h_down)
    h_up_t = None
    if arch["variant"] != "sscc_bit":
        if h_up is None:
            raise ContractError("over-the-air variants need uplink CSI")
        h_up_t = torch.from_numpy(np.asarray(h_up)).to(torch.complex64)

    outs = []
    gen = ch.make_generator(noise_seed)
    with torch.no_grad():
        for i in range(0, x_all.shape[0], batch_size):
            x = x_all[i:i + batch_size]
            snr = torch.full((x.shape[0],), float(mu_db), dtype=x.dtype)
            if arch["variant"] == "sscc_bit":
                c = model.encoder(x, snr)
                if apply_quantizer:
                    spec = quant.QuantizerSpec(**arch["quantizer"])
                    deq = quant.dequantize(quant.quantize(c.numpy(), spec), spec)
                    c = model.offset(torch.from_numpy(deq.astype(np.float32)))
                x_hat = model.decoder(c, snr)
            else:
                x_hat, _ = model(x, snr, h_up=h_up_t[i:i + batch_size], generator=gen)
            outs.append(_from_chw(x_hat))
    x_hat = np.concatenate(outs)

    if was_training:
        model.train()
    rec = denormalize(x_hat, stats)
    if arch["norm"]["domain"] == "sf":
        return rec
    f = transforms.AngularDelayMatrix(values=rec, n_full=arch["n_sub"])
    return transforms.ad_to_sf(transforms.zero_pad(f))


def with_af_mode(cfg: PipelineConfig, af_mode):
    return replace(cfg, af_mode=af_mode)
