"""Reconstruction quality metrics, SNR sweeps, and report generation.

NMSE is always computed on denormalized spatial-frequency CSI, never on the
normalized network tensors, so curves from different variants and baselines
are directly comparable.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .datagen import CsiDataset
from .errors import ConfigError, DegenerateInputError
from .pipelines import reconstruct

__all__ = ["nmse", "SweepResult", "snr_sweep", "cliff_metric", "save_results",
           "render_report", "make_report", "load_results"]

RESULTS_VERSION = 1


def nmse(h_true, h_hat, reduction="mean_ratio"):
    """Normalized mean squared error in dB.

    mean_ratio averages the per-sample error/power ratio before taking the log;
    ratio_of_means divides total error energy by total signal energy. A perfect
    reconstruction returns -inf.
    """
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise ConfigError(f"shape mismatch {h_true.shape} vs {h_hat.shape}")
    flat_t = h_true.reshape(h_true.shape[0], -1)
    flat_h = h_hat.reshape(h_hat.shape[0], -1)
    err = np.sum(np.abs(flat_t - flat_h) ** 2, axis=1)
    pwr = np.sum(np.abs(flat_t) ** 2, axis=1)
    if np.any(pwr == 0):
        raise DegenerateInputError("zero-power reference sample in nmse")
    if reduction == "mean_ratio":
        ratio = float(np.mean(err / pwr))
    elif reduction == "ratio_of_means":
        ratio = float(np.sum(err) / np.sum(pwr))
    else:
        raise ConfigError("reduction must be 'mean_ratio' or 'ratio_of_means'")
    if ratio == 0.0:
        return float("-inf")
    return float(10.0 * np.log10(ratio))


@dataclass
class SweepResult:
    label: str
    family: str
    grid_db: list
    nmse_db: list
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"label": self.label, "family": self.family,
                "grid_db": [float(g) for g in self.grid_db],
                "nmse_db": [float(v) for v in self.nmse_db],
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(label=d["label"], family=d["family"], grid_db=list(d["grid_db"]),
                   nmse_db=list(d["nmse_db"]), meta=dict(d.get("meta", {})))


def _point_seed(eval_seed, index):
    return int(np.random.SeedSequence([int(eval_seed), int(index)]).generate_state(1)[0])


def snr_sweep(bundle, dataset: CsiDataset, grid_db, split="test", eval_seed=0,
              batch_size=256, label=None, family=None, max_samples=None):
    """Evaluate a trained bundle at each SNR grid point; returns a SweepResult.

    Channel noise is reseeded per grid point from eval_seed, so the sweep is
    reproducible and points are statistically independent.
    """
    grid = [float(g) for g in grid_db]
    if not grid:
        raise ConfigError("empty SNR grid")
    h_down, h_up = dataset.splits[split]
    if max_samples is not None:
        h_down, h_up = h_down[:max_samples], h_up[:max_samples]
    if h_down.shape[0] == 0:
        raise ConfigError(f"split '{split}' has no samples")

    values = []
    for gi, mu in enumerate(grid):
        rec = reconstruct(bundle, h_down, h_up=h_up, mu_db=mu,
                          noise_seed=_point_seed(eval_seed, gi),
                          batch_size=batch_size)
        values.append(nmse(h_down, rec))

    variant = bundle.arch["variant"]
    return SweepResult(
        label=label or f"{variant}-{bundle.arch['backbone']}",
        family=family or variant,
        grid_db=grid, nmse_db=values,
        meta={"split": split, "eval_seed": int(eval_seed),
              "n_samples": int(h_down.shape[0]),
              "snr_range_db": list(bundle.snr_range_db)})


def cliff_metric(grid_db, nmse_db):
    """Largest absolute NMSE change between adjacent grid points, in dB."""
    if len(grid_db) != len(nmse_db) or len(grid_db) < 2:
        raise ConfigError("cliff metric needs two or more aligned grid points")
    v = np.asarray(nmse_db, dtype=np.float64)
    return float(np.max(np.abs(np.diff(v))))


def _sanitize(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _plot_family(family, results, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    markers = ["o", "s", "^", "d", "v", "x", "*", "+"]
    for i, r in enumerate(results):
        ax.plot(r.grid_db, r.nmse_db, marker=markers[i % len(markers)],
                label=r.label, linewidth=1.4, markersize=4.5)
    ax.set_xlabel("channel SNR (dB)")
    ax.set_ylabel("NMSE (dB)")
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    base = os.path.join(out_dir, f"nmse_{_sanitize(family)}")
    paths = []
    for ext in ("png", "svg"):
        p = f"{base}.{ext}"
        fig.savefig(p, dpi=130)
        paths.append(p)
    plt.close(fig)
    return paths


def _family_table(results):
    grids = {tuple(r.grid_db) for r in results}
    lines = []
    if len(grids) == 1:
        grid = results[0].grid_db
        header = "| SNR (dB) | " + " | ".join(r.label for r in results) + " |"
        sep = "|---" * (len(results) + 1) + "|"
        lines += [header, sep]
        for j, g in enumerate(grid):
            row = [f"{g:g}"] + [f"{r.nmse_db[j]:.2f}" for r in results]
            lines.append("| " + " | ".join(row) + " |")
    else:
        for r in results:
            lines.append(f"- **{r.label}**: " + ", ".join(
                f"{g:g} dB: {v:.2f}" for g, v in zip(r.grid_db, r.nmse_db)))
    return lines


def save_results(results, out_dir, title="CSI feedback evaluation"):
    """Write results.json under out_dir and return its path.

    The file carries no timestamps and is written with sorted keys, so a rerun
    of the same experiment produces byte-identical output.
    """
    if not results:
        raise ConfigError("nothing to save: empty results list")
    os.makedirs(out_dir, exist_ok=True)
    payload = {"format_version": RESULTS_VERSION, "title": title,
               "curves": [r.to_dict() for r in results]}
    results_path = os.path.join(out_dir, "results.json")
    with open(results_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return results_path


def render_report(results, out_dir, title="CSI feedback evaluation"):
    """Write per-family NMSE plots and report.md for already-computed results."""
    if not results:
        raise ConfigError("nothing to report: empty results list")
    os.makedirs(out_dir, exist_ok=True)
    families = {}
    for r in results:
        families.setdefault(r.family, []).append(r)

    plot_paths = []
    md = [f"# {title}", ""]
    for family in sorted(families):
        fam_results = families[family]
        plot_paths += _plot_family(family, fam_results, out_dir)
        md.append(f"## {family}")
        md.append("")
        md += _family_table(fam_results)
        md.append("")
        md.append(f"![{family}](nmse_{_sanitize(family)}.png)")
        md.append("")
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w") as fh:
        fh.write("\n".join(md))
    return {"report": md_path, "plots": plot_paths}


def make_report(results, out_dir, title="CSI feedback evaluation"):
    """results.json plus rendered plots and report.md; returns all paths."""
    results_path = save_results(results, out_dir, title)
    paths = render_report(results, out_dir, title)
    return {"results": results_path, **paths}


def load_results(path):
    if os.path.isdir(path):
        path = os.path.join(path, "results.json")
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read results file {path}: {e}") from e
    if payload.get("format_version") != RESULTS_VERSION:
        raise ConfigError("unsupported results format version")
    curves = [SweepResult.from_dict(d) for d in payload["curves"]]
    return payload["title"], curves
