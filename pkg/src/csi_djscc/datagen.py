"""Synthetic clustered-multipath CSI generation for an FDD massive MIMO link.

Each sample is one user position: a set of clustered paths shared by both link
directions, synthesized at the downlink carrier (the CSI to feed back) and at the
uplink carrier (the feedback channel the symbols ride on). Gains, delays, and
angles are shared between links; only the array response changes with carrier, so
the two matrices are correlated but not identical.

Cluster delays are drawn on the delay-resolution grid (multiples of 1/bandwidth)
and the per-subpath jitter is kept small; this keeps nearly all angular-delay
energy inside the leading delay rows, which the truncation stage relies on.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetError, DegenerateInputError
from .scenario import ChannelScenario
from .transforms import sf_to_ad, retained_energy_fraction

DATASET_FORMAT_VERSION = 1
_MAX_CENTER_ANGLE_DEG = 60.0


@dataclass
class PathSet:
    """Per-path parameters of one channel realization.

    gains: complex (n_paths,), total power sums to 1
    delays_s: (n_paths,), inside [0, delay_spread_s]
    angles_rad: (n_paths,) departure angles
    """

    gains: np.ndarray
    delays_s: np.ndarray
    angles_rad: np.ndarray


def sample_paths(scenario: ChannelScenario, rng):
    """Draw one clustered PathSet. rng may be a seed or a numpy Generator."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ds = scenario.delay_spread_s
    res = scenario.delay_resolution_s
    n_grid = int(np.floor(ds / res)) + 1 if ds > 0 else 1
    spread = scenario.angle_spread_deg

    delays, angles = [], []
    for _ in range(scenario.n_clusters):
        center_angle = rng.uniform(-_MAX_CENTER_ANGLE_DEG, _MAX_CENTER_ANGLE_DEG)
        center_delay = rng.integers(0, n_grid) * res
        # Laplacian intra-cluster angle spread, bounded to the configured width
        offsets = rng.laplace(0.0, spread / np.sqrt(2.0), scenario.paths_per_cluster)
        offsets = np.clip(offsets, -spread, spread)
        jitter = rng.uniform(-scenario.delay_jitter_frac * ds,
                             scenario.delay_jitter_frac * ds,
                             scenario.paths_per_cluster)
        delays.append(np.clip(center_delay + jitter, 0.0, ds))
        angles.append(np.deg2rad(center_angle + offsets))
    delays = np.concatenate(delays)
    angles = np.concatenate(angles)

    # complex Gaussian gains shaped by an exponential power-delay profile,
    # then normalized so the total power is exactly 1
    if ds > 0:
        powers = np.exp(-delays / (ds / 3.0))
    else:
        powers = np.ones_like(delays)
    g = (rng.standard_normal(delays.size) + 1j * rng.standard_normal(delays.size))
    g *= np.sqrt(powers / 2.0)
    g /= np.linalg.norm(g)
    return PathSet(gains=g, delays_s=delays, angles_rad=angles)


def synthesize_csi(paths: PathSet, scenario: ChannelScenario, carrier_hz):
    """Build the (n_sub, n_tx) CSI matrix for one carrier.

    H[n, t] = sum_p g_p exp(-j 2 pi f_n tau_p) exp(-j pi (carrier/f_down) t sin(theta_p))
    with f_n = n * bandwidth / n_sub. Antenna spacing is half a wavelength at the
    downlink carrier, so the array phase scales with the carrier ratio.
    """
    n = np.arange(scenario.n_sub)
    t = np.arange(scenario.n_tx)
    f_n = n * (scenario.bandwidth_hz / scenario.n_sub)
    delay_phase = np.exp(-2j * np.pi * np.outer(f_n, paths.delays_s))  # (n_sub, P)
    ratio = carrier_hz / scenario.f_down_hz
    steer = np.exp(-1j * np.pi * ratio * np.outer(np.sin(paths.angles_rad), t))  # (P, n_tx)
    return (delay_phase * paths.gains[None, :]) @ steer


@dataclass
class NormStats:
    """Affine [0,1] mapping bounds, real and imaginary parts kept separate."""

    real_min: float
    real_max: float
    imag_min: float
    imag_max: float

    def __post_init__(self):
        if not (self.real_max > self.real_min and self.imag_max > self.imag_min):
            raise DegenerateInputError("normalization range collapsed (min >= max)")

    @classmethod
    def from_samples(cls, h):
        h = np.asarray(h)
        return cls(real_min=float(h.real.min()), real_max=float(h.real.max()),
                   imag_min=float(h.imag.min()), imag_max=float(h.imag.max()))

    def to_dict(self):
        return {"real": [self.real_min, self.real_max],
                "imag": [self.imag_min, self.imag_max]}

    @classmethod
    def from_dict(cls, d):
        return cls(real_min=d["real"][0], real_max=d["real"][1],
                   imag_min=d["imag"][0], imag_max=d["imag"][1])


def normalize(h, stats: NormStats, clip=False):
    """Complex (..., n_sub, n_tx) -> real float32 (..., n_sub, n_tx, 2) in [0,1].

    clip is meant for evaluation-time inputs that fall outside the train range;
    statistics computation must never clip.
    """
    h = np.asarray(h)
    re = (h.real - stats.real_min) / (stats.real_max - stats.real_min)
    im = (h.imag - stats.imag_min) / (stats.imag_max - stats.imag_min)
    out = np.stack([re, im], axis=-1).astype(np.float32)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def denormalize(x, stats: NormStats):
    """Inverse of normalize: (..., n_sub, n_tx, 2) -> complex (..., n_sub, n_tx)."""
    x = np.asarray(x, dtype=np.float64)
    re = x[..., 0] * (stats.real_max - stats.real_min) + stats.real_min
    im = x[..., 1] * (stats.imag_max - stats.imag_min) + stats.imag_min
    return re + 1j * im


@dataclass
class CsiDataset:
    scenario: ChannelScenario
    # split name -> (h_down, h_up), each complex64 (N, n_sub, n_tx)
    splits: dict
    stats: NormStats
    uplink_scale: float
    link_magnitude_corr: float

    def n_samples(self, split):
        return self.splits[split][0].shape[0]


def _magnitude_correlation(h_a, h_b):
    """Mean per-sample Pearson correlation between |h_a| and |h_b| entries."""
    a = np.abs(h_a).reshape(h_a.shape[0], -1)
    b = np.abs(h_b).reshape(h_b.shape[0], -1)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return float(np.mean(num / np.maximum(den, 1e-30)))


def generate_dataset(scenario: ChannelScenario, n_train, n_val, n_test):
    """Generate train/val/test splits with shared geometry per sample.

    The uplink matrices of every split are rescaled by one scalar so the mean
    per-subcarrier squared norm over the train split is exactly 1. Normalization
    stats come from the train-split downlink only.
    """
    sizes = {"train": int(n_train), "val": int(n_val), "test": int(n_test)}
    if sizes["train"] < 1:
        raise ConfigError("need at least one training sample")
    if min(sizes.values()) < 0:
        raise ConfigError("split sizes must be nonnegative")
    total = sum(sizes.values())
    children = np.random.SeedSequence(scenario.seed).spawn(total)

    h_down = np.empty((total, scenario.n_sub, scenario.n_tx), dtype=np.complex128)
    h_up = np.empty_like(h_down)
    for i in range(total):
        rng = np.random.default_rng(children[i])
        paths = sample_paths(scenario, rng)
        h_down[i] = synthesize_csi(paths, scenario, scenario.f_down_hz)
        h_up[i] = synthesize_csi(paths, scenario, scenario.f_up_hz)

    n_tr = sizes["train"]
    # per-subcarrier squared norm, averaged over train samples and subcarriers
    mean_gain = np.mean(np.sum(np.abs(h_up[:n_tr]) ** 2, axis=2))
    scale = float(np.sqrt(mean_gain))
    if scale <= 0:
        raise DegenerateInputError("uplink energy vanished, cannot normalize gain")
    h_up /= scale

    splits, start = {}, 0
    for name in ("train", "val", "test"):
        stop = start + sizes[name]
        splits[name] = (h_down[start:stop].astype(np.complex64),
                        h_up[start:stop].astype(np.complex64))
        start = stop

    stats = NormStats.from_samples(splits["train"][0])
    corr = _magnitude_correlation(splits["train"][0], splits["train"][1])
    if not corr > 0:
        raise DegenerateInputError(
            f"link magnitude correlation {corr:.3f} is not positive; the two "
            "carriers no longer share geometry")
    return CsiDataset(scenario=scenario, splits=splits, stats=stats,
                      uplink_scale=scale, link_magnitude_corr=corr)


def dataset_sparsity(dataset: CsiDataset, n_trunc, split="train", max_samples=None):
    """Mean retained angular-delay energy fraction of the downlink split."""
    h = dataset.splits[split][0]
    if max_samples is not None:
        h = h[:max_samples]
    return float(np.mean(retained_energy_fraction(sf_to_ad(h), n_trunc)))


def _split_path(out_dir, name):
    return os.path.join(out_dir, f"{name}.bin")


def save_dataset(dataset: CsiDataset, out_dir):
    """Write manifest.json plus one little-endian float32 blob per split.

    Blob layout: [N, n_sub, n_tx, 2, 2], axis 3 = link (0 down, 1 up),
    axis 4 = (real, imag). Round-trips bit-exactly against complex64 in memory.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "scenario": dataset.scenario.to_dict(),
        "splits": {k: v[0].shape[0] for k, v in dataset.splits.items()},
        "stats": dataset.stats.to_dict(),
        "uplink_scale": dataset.uplink_scale,
        "link_magnitude_corr": dataset.link_magnitude_corr,
        "files": {k: f"{k}.bin" for k in dataset.splits},
    }
    for name, (hd, hu) in dataset.splits.items():
        n = hd.shape[0]
        arr = np.empty((n, dataset.scenario.n_sub, dataset.scenario.n_tx, 2, 2),
                       dtype="<f4")
        arr[..., 0, 0], arr[..., 0, 1] = hd.real, hd.imag
        arr[..., 1, 0], arr[..., 1, 1] = hu.real, hu.imag
        arr.tofile(_split_path(out_dir, name))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out_dir


def load_dataset(in_dir):
    manifest_path = os.path.join(in_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DatasetError(f"no manifest.json under {in_dir}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise DatasetError(f"corrupt manifest: {e}") from e
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetError(
            f"dataset format version {version!r} unsupported "
            f"(expected {DATASET_FORMAT_VERSION})")
    try:
        scenario = ChannelScenario.from_dict(manifest["scenario"])
        stats = NormStats.from_dict(manifest["stats"])
        sizes = manifest["splits"]
        files = manifest["files"]
        uplink_scale = manifest["uplink_scale"]
        corr = manifest["link_magnitude_corr"]
    except KeyError as e:
        raise DatasetError(f"manifest missing key {e}") from e

    splits = {}
    for name, n in sizes.items():
        path = os.path.join(in_dir, files[name])
        if not os.path.isfile(path):
            raise DatasetError(f"missing split file {path}")
        want = n * scenario.n_sub * scenario.n_tx * 4
        arr = np.fromfile(path, dtype="<f4")
        if arr.size != want:
            raise DatasetError(
                f"split {name}: expected {want} float32 values, found {arr.size}")
        arr = arr.reshape(n, scenario.n_sub, scenario.n_tx, 2, 2)
        hd = (arr[..., 0, 0] + 1j * arr[..., 0, 1]).astype(np.complex64)
        hu = (arr[..., 1, 0] + 1j * arr[..., 1, 1]).astype(np.complex64)
        splits[name] = (hd, hu)
    return CsiDataset(scenario=scenario, splits=splits, stats=stats,
                      uplink_scale=uplink_scale, link_magnitude_corr=corr)
