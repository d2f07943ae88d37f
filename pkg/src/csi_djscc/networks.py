"""Network blocks for the SNR-adaptive CSI feedback autoencoder.

Parameter groups follow the UE/BS split of the system: the user side runs the
analysis transform (alpha), its attention gates (gamma), the encoder (theta) and
its gates (psi); the base station runs the decoder (phi), its gates (rho), the
synthesis transform (beta) and its gates (tau). Attention-gate parameters live in
submodules whose attribute name starts with "af", which is what the grouping and
serialization code keys on.

Attention gates have three modes: "active" (SNR-adaptive), "identity" (parameters
exist but the gate is bypassed, for equivalence checks against the non-adaptive
network) and "absent" (no gate parameters at all).
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ContractError

BACKBONES = ("csinet", "csinet_plus", "crnet")
AF_MODES = ("active", "identity", "absent")

# group -> (top-level submodule, whether the group is the AF part of it);
# "offset" is the quantization-compensation net of the bit-level baseline and
# belongs to neither side's over-the-air parameter count
PARAM_GROUPS = {
    "alpha": ("atn", False),
    "gamma": ("atn", True),
    "theta": ("encoder", False),
    "psi": ("encoder", True),
    "phi": ("decoder", False),
    "rho": ("decoder", True),
    "beta": ("stn", False),
    "tau": ("stn", True),
    "offset": ("offset", False),
}
UE_GROUPS = ("alpha", "gamma", "theta", "psi")
BS_GROUPS = ("phi", "rho", "beta", "tau")

BUNDLE_FORMAT_VERSION = 1
BN_MOMENTUM = 0.01


def _bn(n_channels):
    # running stats keep 0.99 of their value per step (torch momentum = 0.01)
    return nn.BatchNorm2d(n_channels, momentum=BN_MOMENTUM)



class AFModule(nn.Module):
    """Channel attention conditioned on the SNR.

    Features are average-pooled over the spatial axes, the SNR in dB is appended,
    and two FC layers produce one sigmoid gate per channel. With identity=True the
    gate is bypassed; parameters still exist so module structure is unchanged.
    """

    def __init__(self, n_channels, hidden=None, identity=False):
        super().__init__()
        hidden = n_channels if hidden is None else hidden
        self.fc1 = nn.Linear(n_channels + 1, hidden)
        self.fc2 = nn.Linear(hidden, n_channels)
        self.identity = identity

    def forward(self, x, snr_db):
        if self.identity:
            return x
        ctx = x.mean(dim=(2, 3))
        ctx = torch.cat([ctx, snr_db.to(ctx.dtype).view(-1, 1)], dim=1)
        gate = torch.sigmoid(self.fc2(torch.relu(self.fc1(ctx))))
        return x * gate[:, :, None, None]


def _make_af(n_channels, af_mode):
    if af_mode not in AF_MODES:
        raise ConfigError(f"af_mode must be one of {AF_MODES}")
    if af_mode == "absent":
        return None
    return AFModule(n_channels, identity=(af_mode == "identity"))


def _gate(af, x, snr_db):
    return x if af is None else af(x, snr_db)


def _stride_plan(n_in, n_out):
    """Split a vertical resampling factor over three stages of stride 1 or 2."""
    if n_in % n_out:
        raise ConfigError(f"{n_in} not divisible by {n_out}")
    factor = n_in // n_out
    if factor not in (1, 2, 4, 8):
        raise ConfigError(f"resampling factor {factor} not realizable in 3 stages")
    n2 = int(round(math.log2(factor)))
    return [2] * n2 + [1] * (3 - n2)


class AnalysisTransform(nn.Module):
    """Learned replacement for DFT + truncation: (2, n_sub, n_tx) -> (2, n_trunc, n_tx)."""

    def __init__(self, n_sub, n_trunc, widths=(32, 32), af_mode="active"):
        super().__init__()
        s = _stride_plan(n_sub, n_trunc)
        w0, w1 = widths
        self.conv1 = nn.Conv2d(2, w0, 3, stride=(s[0], 1), padding=1)
        self.bn1 = _bn(w0)
        self.act1 = nn.PReLU()
        self.af1 = _make_af(w0, af_mode)
        self.conv2 = nn.Conv2d(w0, w1, 3, stride=(s[1], 1), padding=1)
        self.bn2 = _bn(w1)
        self.act2 = nn.PReLU()
        self.af2 = _make_af(w1, af_mode)
        self.conv3 = nn.Conv2d(w1, 2, 3, stride=(s[2], 1), padding=1)

    def forward(self, x, snr_db):
        x = _gate(self.af1, self.act1(self.bn1(self.conv1(x))), snr_db)
        x = _gate(self.af2, self.act2(self.bn2(self.conv2(x))), snr_db)
        return torch.sigmoid(self.conv3(x))


class SynthesisTransform(nn.Module):
    """Mirror of AnalysisTransform with transposed convolutions."""

    def __init__(self, n_trunc, n_sub, widths=(32, 32), af_mode="active"):
        super().__init__()
        s = list(reversed(_stride_plan(n_sub, n_trunc)))
        w0, w1 = widths

        def tconv(cin, cout, stride):
            return nn.ConvTranspose2d(cin, cout, 3, stride=(stride, 1), padding=1,
                                      output_padding=(stride - 1, 0))

        self.conv1 = tconv(2, w0, s[0])
        self.bn1 = _bn(w0)
        self.act1 = nn.PReLU()
        self.af1 = _make_af(w0, af_mode)
        self.conv2 = tconv(w0, w1, s[1])
        self.bn2 = _bn(w1)
        self.act2 = nn.PReLU()
        self.af2 = _make_af(w1, af_mode)
        self.conv3 = tconv(w1, 2, s[2])

    def forward(self, x, snr_db):
        x = _gate(self.af1, self.act1(self.bn1(self.conv1(x))), snr_db)
        x = _gate(self.af2, self.act2(self.bn2(self.conv2(x))), snr_db)
        return torch.sigmoid(self.conv3(x))


class ConvEncoder(nn.Module):
    """csinet-family encoder: one conv head, then an FC projection to m reals."""

    def __init__(self, n_trunc, n_tx, m, kernel=3, af_mode="active"):
        super().__init__()
        self.conv = nn.Conv2d(2, 2, kernel, padding=kernel // 2)
        self.bn = _bn(2)
        self.af = _make_af(2, af_mode)
        self.fc = nn.Linear(2 * n_trunc * n_tx, m)

    def forward(self, x, snr_db):
        x = _gate(self.af, nn.functional.leaky_relu(self.bn(self.conv(x)), 0.3), snr_db)
        return self.fc(x.flatten(1))


class DualBranchEncoder(nn.Module):
    """crnet-family encoder: 3x3 branch plus 1x9 -> 9x1 factorized branch."""

    def __init__(self, n_trunc, n_tx, m, af_mode="active"):
        super().__init__()
        self.conv_a = nn.Conv2d(2, 2, 3, padding=1)
        self.bn_a = _bn(2)
        self.af_a = _make_af(2, af_mode)
        self.conv_b1 = nn.Conv2d(2, 2, (1, 9), padding=(0, 4))
        self.bn_b1 = _bn(2)
        self.af_b1 = _make_af(2, af_mode)
        self.conv_b2 = nn.Conv2d(2, 2, (9, 1), padding=(4, 0))
        self.bn_b2 = _bn(2)
        self.af_b2 = _make_af(2, af_mode)
        self.fuse = nn.Conv2d(4, 2, 1)
        self.bn_f = _bn(2)
        self.af_f = _make_af(2, af_mode)
        self.fc = nn.Linear(2 * n_trunc * n_tx, m)

    def forward(self, x, snr_db):
        lrelu = nn.functional.leaky_relu
        a = _gate(self.af_a, lrelu(self.bn_a(self.conv_a(x)), 0.3), snr_db)
        b = _gate(self.af_b1, lrelu(self.bn_b1(self.conv_b1(x)), 0.3), snr_db)
        b = _gate(self.af_b2, lrelu(self.bn_b2(self.conv_b2(b)), 0.3), snr_db)
        y = self.fuse(torch.cat([a, b], dim=1))
        y = _gate(self.af_f, lrelu(self.bn_f(y), 0.3), snr_db)
        return self.fc(y.flatten(1))


class _RefineBlock(nn.Module):
    # widths 2 -> 8 -> 16 -> 2, residual, last conv zero-initialized
    def __init__(self, kernel, af_mode):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(2, 8, kernel, padding=pad)
        self.bn1 = _bn(8)
        self.af1 = _make_af(8, af_mode)
        self.conv2 = nn.Conv2d(8, 16, kernel, padding=pad)
        self.bn2 = _bn(16)
        self.af2 = _make_af(16, af_mode)
        self.conv3 = nn.Conv2d(16, 2, kernel, padding=pad)
        self.conv3._zero_init = True

    def forward(self, x, snr_db):
        lrelu = nn.functional.leaky_relu
        y = _gate(self.af1, lrelu(self.bn1(self.conv1(x)), 0.3), snr_db)
        y = _gate(self.af2, lrelu(self.bn2(self.conv2(y)), 0.3), snr_db)
        return x + self.conv3(y)


class RefineDecoder(nn.Module):
    """csinet-family decoder: FC back to the feature grid, two residual blocks."""

    def __init__(self, n_trunc, n_tx, m, kernel=3, af_mode="active"):
        super().__init__()
        self.n_trunc, self.n_tx = n_trunc, n_tx
        self.fc = nn.Linear(m, 2 * n_trunc * n_tx)
        self.block1 = _RefineBlock(kernel, af_mode)
        self.block2 = _RefineBlock(kernel, af_mode)

    def forward(self, c, snr_db):
        x = self.fc(c).view(-1, 2, self.n_trunc, self.n_tx)
        x = self.block1(x, snr_db)
        x = self.block2(x, snr_db)
        return torch.sigmoid(x)


class DualBranchDecoder(nn.Module):
    """crnet-family decoder: FC, then one residual dual-resolution head."""

    def __init__(self, n_trunc, n_tx, m, af_mode="active"):
        super().__init__()
        self.n_trunc, self.n_tx = n_trunc, n_tx
        self.fc = nn.Linear(m, 2 * n_trunc * n_tx)
        self.conv_a = nn.Conv2d(2, 8, 3, padding=1)
        self.bn_a = _bn(8)
        self.af_a = _make_af(8, af_mode)
        self.conv_b1 = nn.Conv2d(2, 8, (1, 9), padding=(0, 4))
        self.bn_b1 = _bn(8)
        self.af_b1 = _make_af(8, af_mode)
        self.conv_b2 = nn.Conv2d(8, 8, (9, 1), padding=(4, 0))
        self.bn_b2 = _bn(8)
        self.af_b2 = _make_af(8, af_mode)
        self.fuse = nn.Conv2d(16, 2, 1)
        self.fuse._zero_init = True

    def forward(self, c, snr_db):
        lrelu = nn.functional.leaky_relu
        x = self.fc(c).view(-1, 2, self.n_trunc, self.n_tx)
        a = _gate(self.af_a, lrelu(self.bn_a(self.conv_a(x)), 0.3), snr_db)
        b = _gate(self.af_b1, lrelu(self.bn_b1(self.conv_b1(x)), 0.3), snr_db)
        b = _gate(self.af_b2, lrelu(self.bn_b2(self.conv_b2(b)), 0.3), snr_db)
        return torch.sigmoid(x + self.fuse(torch.cat([a, b], dim=1)))


def make_encoder(backbone, n_trunc, n_tx, m, af_mode="active"):
    if backbone == "csinet":
        return ConvEncoder(n_trunc, n_tx, m, kernel=3, af_mode=af_mode)
    if backbone == "csinet_plus":
        return ConvEncoder(n_trunc, n_tx, m, kernel=7, af_mode=af_mode)
    if backbone == "crnet":
        return DualBranchEncoder(n_trunc, n_tx, m, af_mode=af_mode)
    raise ConfigError(f"unknown backbone {backbone!r}, expected one of {BACKBONES}")


def make_decoder(backbone, n_trunc, n_tx, m, af_mode="active"):
    if backbone == "csinet":
        return RefineDecoder(n_trunc, n_tx, m, kernel=3, af_mode=af_mode)
    if backbone == "csinet_plus":
        return RefineDecoder(n_trunc, n_tx, m, kernel=7, af_mode=af_mode)
    if backbone == "crnet":
        return DualBranchDecoder(n_trunc, n_tx, m, af_mode=af_mode)
    raise ConfigError(f"unknown backbone {backbone!r}, expected one of {BACKBONES}")


class OffsetNet(nn.Module):
    """Residual FC compensation for quantization error on an m-vector.

    The last layer is zero-initialized, so the net starts as the identity and
    trained compensation can only improve on the raw dequantized input.
    """

    def __init__(self, m):
        super().__init__()
        self.fc1 = nn.Linear(m, m)
        self.fc2 = nn.Linear(m, m)
        self.fc2._zero_init = True

    def forward(self, x):
        return x + self.fc2(nn.functional.leaky_relu(self.fc1(x), 0.3))


def _is_af_path(name):
    return any(part.startswith("af") for part in name.split("."))


def _group_seed(seed, group):
    digest = hashlib.sha256(f"{seed}:{group}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def init_params(model, seed):
    """Deterministic re-initialization, one RNG stream per parameter group.

    Streams are independent per group, so structurally identical networks get
    identical main weights whether attention parameters exist next to them or
    not. Conv/FC weights use fan-in variance scaling, biases start at zero,
    modules flagged _zero_init start entirely at zero, BN at (1, 0) with reset
    running statistics, PReLU at 0.25.
    """
    for group, (top, want_af) in PARAM_GROUPS.items():
        sub = getattr(model, top, None)
        if sub is None:
            continue
        gen = torch.Generator()
        gen.manual_seed(_group_seed(seed, group))
        for name, mod in sorted(sub.named_modules()):
            if _is_af_path(name) == want_af:
                _init_leaf(mod, gen)
    return model


def init_standalone(module, seed):
    """Same leaf rules as init_params for modules outside the UE/BS group map."""
    gen = torch.Generator()
    gen.manual_seed(_group_seed(seed, "standalone"))
    for _, mod in sorted(module.named_modules()):
        _init_leaf(mod, gen)
    return module


def _init_leaf(mod, gen):
    with torch.no_grad():
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if getattr(mod, "_zero_init", False):
                mod.weight.zero_()
                if mod.bias is not None:
                    mod.bias.zero_()
                return
            w = mod.weight
            if isinstance(mod, nn.ConvTranspose2d):
                fan_in = w.shape[0] * w.shape[2] * w.shape[3]
            else:
                fan_in = w.numel() // w.shape[0]
            bound = math.sqrt(6.0 / fan_in)
            w.uniform_(-bound, bound, generator=gen)
            if mod.bias is not None:
                mod.bias.zero_()
        elif isinstance(mod, nn.BatchNorm2d):
            mod.reset_running_stats()
            mod.weight.fill_(1.0)
            mod.bias.zero_()
        elif isinstance(mod, nn.PReLU):
            mod.weight.fill_(0.25)


def group_tensors(model, group, include_buffers=False):
    """(name, tensor) pairs of one parameter group, sorted by name."""
    if group not in PARAM_GROUPS:
        raise ConfigError(f"unknown group {group!r}")
    top, want_af = PARAM_GROUPS[group]
    sub = getattr(model, top, None)
    if sub is None:
        return []
    pairs = [(f"{top}.{n}", p) for n, p in sub.named_parameters()
             if _is_af_path(n) == want_af]
    if include_buffers:
        pairs += [(f"{top}.{n}", b) for n, b in sub.named_buffers()
                  if _is_af_path(n) == want_af and b.dtype.is_floating_point]
    return sorted(pairs, key=lambda kv: kv[0])


def group_param_count(model, group):
    return sum(int(p.numel()) for _, p in group_tensors(model, group))


def count_params(model, side):
    """Trainable parameter count for one side of the link, 'ue' or 'bs'."""
    if side == "ue":
        groups = UE_GROUPS
    elif side == "bs":
        groups = BS_GROUPS
    else:
        raise ConfigError("side must be 'ue' or 'bs'")
    return sum(group_param_count(model, g) for g in groups)


@dataclass
class ModelBundle:
    """A trained (or freshly initialized) model plus everything needed to rebuild it."""

    model: nn.Module
    arch: dict
    snr_range_db: tuple

    @property
    def arch_hash(self):
        return arch_hash(self.arch)

    def param_count(self, side):
        return count_params(self.model, side)


def arch_hash(arch):
    return hashlib.sha256(
        json.dumps(arch, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def save_bundle(bundle: ModelBundle, out_dir):
    """model.json plus one little-endian float32 blob per non-empty group.

    Blobs hold parameters and floating-point buffers (BN running statistics) in
    sorted name order; model.json records names and shapes so loading can verify
    layout before copying anything.
    """
    os.makedirs(out_dir, exist_ok=True)
    groups = {}
    for group in PARAM_GROUPS:
        tensors = group_tensors(bundle.model, group, include_buffers=True)
        groups[group] = [{"name": n, "shape": list(t.shape)} for n, t in tensors]
        if tensors:
            flat = np.concatenate(
                [t.detach().cpu().numpy().astype("<f4").ravel() for _, t in tensors])
            flat.tofile(os.path.join(out_dir, f"{group}.bin"))
    meta = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "arch": bundle.arch,
        "arch_hash": bundle.arch_hash,
        "snr_range_db": list(bundle.snr_range_db),
        "groups": groups,
    }
    with open(os.path.join(out_dir, "model.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return out_dir


def load_bundle_meta(in_dir):
    path = os.path.join(in_dir, "model.json")
    if not os.path.isfile(path):
        raise ContractError(f"no model.json under {in_dir}")
    with open(path) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ContractError(f"unsupported bundle version {meta.get('format_version')!r}")
    if arch_hash(meta["arch"]) != meta["arch_hash"]:
        raise ContractError("architecture hash mismatch, bundle was edited or corrupted")
    return meta


def load_group_blobs(model, meta, in_dir):
    """Copy stored group blobs into a freshly built model."""
    for group, entries in meta["groups"].items():
        tensors = group_tensors(model, group, include_buffers=True)
        if [n for n, _ in tensors] != [e["name"] for e in entries]:
            raise ContractError(f"group {group}: stored layout does not match model")
        if not entries:
            continue
        flat = np.fromfile(os.path.join(in_dir, f"{group}.bin"), dtype="<f4")
        want = sum(int(np.prod(e["shape"])) for e in entries)
        if flat.size != want:
            raise ContractError(f"group {group}: expected {want} values, found {flat.size}")
        pos = 0
        with torch.no_grad():
            for (name, tensor), entry in zip(tensors, entries):
                if list(tensor.shape) != entry["shape"]:
                    raise ContractError(f"{name}: shape {list(tensor.shape)} != stored "
                                        f"{entry['shape']}")
                n = tensor.numel()
                chunk = torch.from_numpy(flat[pos:pos + n].copy()).view(tensor.shape)
                tensor.copy_(chunk.to(tensor.dtype))
                pos += n
    return model
