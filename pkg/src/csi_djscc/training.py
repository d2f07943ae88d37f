"""Training loops: end-to-end over the fading channel, and the three-step
bit-level schedule for the quantized baseline (autoencoder, then offset net on
frozen codewords, then offset + decoder with the encoder frozen).

All randomness is derived from one seed per run: data order, per-sample SNR
draws, and channel noise use independent child streams, so identical configs
reproduce identical parameter trajectories on the same hardware.
"""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import channel as ch
from . import quantization as quant
from .errors import ConfigError, ContractError, TrainingDiverged
from .networks import ModelBundle
from .pipelines import SnrPolicy, prepare_split

__all__ = ["TrainConfig", "TrainReport", "BitLevelConfig", "sample_snr",
           "loss_e2e", "train", "train_bitlevel"]


@dataclass(frozen=True)
class TrainConfig:
    # defaults target the small-profile budget; at 40 epochs a 1e-3 step sits
    # on the predict-the-mean plateau, so the default step is 1e-2. Long runs
    # on big datasets want lr_init 1e-3 and a larger patience.
    max_epochs: int = 40
    batch_size: int = 64
    lr_init: float = 1e-2
    lr_floor: float = 1e-4
    plateau_patience: int = 8
    seed: int = 0
    # falls back to the policy the bundle was built with
    snr_policy: SnrPolicy = None

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be positive")
        if self.lr_init <= 0 or self.lr_floor <= 0 or self.lr_floor > self.lr_init:
            raise ConfigError("need 0 < lr_floor <= lr_init")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be positive")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    best_val_loss: float = float("nan")
    wall_time_s: float = 0.0

    @property
    def n_epochs(self):
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def sample_snr(policy: SnrPolicy, n, rng):
    """One SNR draw per sample. Uniform policies draw independently per sample."""
    if policy.kind == "fixed":
        return np.full(n, policy.value_db, dtype=np.float64)
    return rng.uniform(policy.low_db, policy.high_db, size=n)


def loss_e2e(pred, target):
    """Mean over the batch of the per-sample sum of squared errors."""
    return ((pred - target) ** 2).flatten(1).sum(dim=1).mean()


def _policy_from_bundle(bundle: ModelBundle):
    lo, hi = bundle.snr_range_db
    if lo == hi:
        return SnrPolicy(kind="fixed", value_db=lo)
    return SnrPolicy(kind="uniform", low_db=lo, high_db=hi)


def _snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _validate(model, x, h_up, snr, noise_seed, batch_size):
    model.eval()
    total, n = 0.0, x.shape[0]
    gen = ch.make_generator(noise_seed)
    with torch.no_grad():
        for i in range(0, n, batch_size):
            xb, sb = x[i:i + batch_size], snr[i:i + batch_size]
            hb = h_up[i:i + batch_size] if h_up is not None else None
            out, _ = model(xb, sb, h_up=hb, generator=gen)
            total += float(loss_e2e(out, xb)) * xb.shape[0]
    return total / n


def train(bundle: ModelBundle, dataset, cfg: TrainConfig):
    """Train a pipeline bundle end to end; returns (bundle, report).

    The bundle's model is trained in place and left holding the best-validation
    state. Adam starts at lr_init; when validation loss has not improved for
    plateau_patience epochs the rate is halved, never below lr_floor.
    """
    t0 = time.perf_counter()
    model = bundle.model
    policy = cfg.snr_policy or _policy_from_bundle(bundle)

    x_train, hup_train = prepare_split(bundle, dataset, "train")
    x_val, hup_val = prepare_split(bundle, dataset, "val")
    if x_val.shape[0] < 1:
        raise ConfigError("training needs a nonempty val split for checkpointing")
    if bundle.arch["variant"] == "sscc_bit":
        hup_train = hup_val = None

    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    rng_data = np.random.default_rng(seeds[0])
    rng_snr = np.random.default_rng(seeds[1])
    gen_noise = ch.make_generator(int(seeds[2].generate_state(1)[0]))
    val_noise_seed = int(seeds[3].generate_state(1)[0])
    rng_val = np.random.default_rng(seeds[4])
    val_snr = torch.from_numpy(
        sample_snr(policy, x_val.shape[0], rng_val)).to(torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_init)
    lr = cfg.lr_init
    report = TrainReport()
    report.initial_val_loss = _validate(model, x_val, hup_val, val_snr,
                                        val_noise_seed, cfg.batch_size)
    best_val, best_state, best_epoch = report.initial_val_loss, _snapshot(model), 0
    report.best_val_loss = best_val
    since_best = 0
    n = x_train.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        perm = rng_data.permutation(n)
        epoch_loss = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[i:i + cfg.batch_size])
            xb = x_train[idx]
            hb = hup_train[idx] if hup_train is not None else None
            sb = torch.from_numpy(
                sample_snr(policy, len(idx), rng_snr)).to(torch.float32)
            out, _ = model(xb, sb, h_up=hb, generator=gen_noise)
            loss = loss_e2e(out, xb)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * xb.shape[0]

        val = _validate(model, x_val, hup_val, val_snr, val_noise_seed, cfg.batch_size)
        report.train_loss.append(epoch_loss / n)
        report.val_loss.append(val)
        report.lr_trace.append(lr)
        if val < best_val:
            best_val, best_state, best_epoch, since_best = val, _snapshot(model), epoch, 0
        else:
            since_best += 1
            if since_best >= cfg.plateau_patience and lr > cfg.lr_floor:
                lr = max(lr / 2.0, cfg.lr_floor)
                for pg in opt.param_groups:
                    pg["lr"] = lr
                since_best = 0

    model.load_state_dict(best_state)
    model.eval()
    report.best_epoch = best_epoch
    report.best_val_loss = best_val
    report.wall_time_s = time.perf_counter() - t0
    return bundle, report


@dataclass(frozen=True)
class BitLevelConfig:
    autoencoder: TrainConfig = field(default_factory=TrainConfig)
    offset_epochs: int = 15
    joint_epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0


def _fit_supervised(params, forward, x, y, x_val, y_val, epochs, lr, batch_size, rng,
                    model_for_snapshot):
    """Small Adam loop with best-on-validation selection, epoch 0 included."""
    opt = torch.optim.Adam(params, lr=lr)

    def val_loss():
        model_for_snapshot.eval()
        with torch.no_grad():
            return float(loss_e2e(forward(x_val), y_val))

    best = val_loss()
    best_state = _snapshot(model_for_snapshot)
    history = [best]
    n = x.shape[0]
    for _ in range(epochs):
        model_for_snapshot.train()
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = torch.from_numpy(perm[i:i + batch_size])
            loss = loss_e2e(forward(x[idx]), y[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged("non-finite loss in bit-level fit")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        v = val_loss()
        history.append(v)
        if v < best:
            best, best_state = v, _snapshot(model_for_snapshot)
    model_for_snapshot.load_state_dict(best_state)
    model_for_snapshot.eval()
    return best, history


def train_bitlevel(bundle: ModelBundle, dataset, cfg: BitLevelConfig):
    """Three-step schedule for the quantized baseline. Returns (bundle, report).

    1. train the plain autoencoder (no quantizer in the loop);
    2. freeze it, push train codewords through quantize/dequantize, fit the
       offset net to undo the quantization error;
    3. keep the encoder frozen (its codewords, hence their quantization, are
       fixed) and fine-tune offset + decoder on the reconstruction loss.
    """
    if bundle.arch["variant"] != "sscc_bit":
        raise ConfigError("bit-level training expects a sscc_bit bundle")
    model = bundle.model
    spec = quant.QuantizerSpec(**bundle.arch["quantizer"])

    _, rep1 = train(bundle, dataset, cfg.autoencoder)

    x_train, _ = prepare_split(bundle, dataset, "train")
    x_val, _ = prepare_split(bundle, dataset, "val")
    zeros = lambda t: torch.zeros(t.shape[0], dtype=t.dtype)
    with torch.no_grad():
        model.eval()
        c_train = model.encoder(x_train, zeros(x_train))
        c_val = model.encoder(x_val, zeros(x_val))
    deq_train = torch.from_numpy(
        quant.dequantize(quant.quantize(c_train.numpy(), spec), spec).astype(np.float32))
    deq_val = torch.from_numpy(
        quant.dequantize(quant.quantize(c_val.numpy(), spec), spec).astype(np.float32))

    encoder_before = {k: v.detach().clone()
                      for k, v in model.encoder.state_dict().items()}

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    pre_mse = float(loss_e2e(deq_val, c_val))
    best2, hist2 = _fit_supervised(
        model.offset.parameters(), model.offset, deq_train, c_train, deq_val, c_val,
        cfg.offset_epochs, cfg.lr, cfg.batch_size, rng, model.offset)
    if best2 > pre_mse + 1e-9:
        raise ContractError("offset training made codeword error worse")

    def forward3(deq):
        return model.decoder(model.offset(deq), torch.zeros(deq.shape[0]))

    params3 = list(model.offset.parameters()) + list(model.decoder.parameters())
    best3, hist3 = _fit_supervised(
        params3, forward3, deq_train, x_train, deq_val, x_val,
        cfg.joint_epochs, cfg.lr, cfg.batch_size, rng, model)

    for k, v in model.encoder.state_dict().items():
        if not torch.equal(v, encoder_before[k]):
            raise ContractError(f"encoder tensor {k} changed during frozen fine-tuning")

    report = {
        "step1": rep1.to_dict(),
        "step2": {"pre_mse": pre_mse, "best_mse": best2, "val_history": hist2},
        "step3": {"best_loss": best3, "val_history": hist3},
    }
    return bundle, report
