"""Experiment orchestration: config schema, staged execution, preset loading.

An experiment is a JSON-serializable config describing one dataset, a list of
models to train, and a list of digital baselines to compare against. Execution
is split into four stages (data, train, sweep, report) so the CLI can stop
after any of them. Stages are idempotent: datasets and trained bundles found
on disk are reused when they match the config, so rerunning a finished
experiment reproduces results.json byte for byte without retraining.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

from . import quantization as quant
from .datagen import CsiDataset, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, DatasetError, StageError
from .evaluation import SweepResult, make_report, nmse, save_results, snr_sweep
from .pipelines import (PipelineConfig, SnrPolicy, build_bundle,
                        load_pipeline_bundle, reconstruct)
from .networks import save_bundle
from .scenario import ChannelScenario, TruncationSpec, get_profile
from .training import BitLevelConfig, TrainConfig, train, train_bitlevel

__all__ = ["ExperimentConfig", "run_experiment", "load_config", "list_presets",
           "load_preset", "STAGES"]

STAGES = ("data", "train", "sweep", "report")

EXPERIMENT_VERSION = 1

_DATASET_DEFAULTS = {"dir": None, "n_train": 512, "n_val": 128, "n_test": 128,
                     "generate_if_missing": True}
_EVAL_DEFAULTS = {"grid_db": [-10.0, -5.0, 0.0, 5.0, 10.0], "split": "test",
                  "seed": None, "batch_size": 256, "max_samples": None}
_TRAIN_KEYS = {"max_epochs", "batch_size", "lr_init", "lr_floor", "plateau_patience"}
_MODEL_KEYS = {"name", "variant", "backbone", "snr_policy", "af_mode", "m",
               "family", "train", "bitlevel"}
_BASELINE_KEYS = {"kind", "design_snr_db", "bits", "capacity_mode", "label",
                  "backbone", "train", "bitlevel", "of"}
_TOP_KEYS = {"name", "profile", "seed", "out_dir", "title", "scenario",
             "dataset", "train", "eval", "models", "baselines"}


def _merged(defaults, given, what):
    if given is None:
        return dict(defaults)
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return {**defaults, **given}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    profile: str = "desk"
    seed: int = 0
    out_dir: str = None
    title: str = None
    scenario: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=lambda: dict(_DATASET_DEFAULTS))
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=lambda: dict(_EVAL_DEFAULTS))
    models: tuple = ()
    baselines: tuple = ()

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "name" not in d or not str(d["name"]).strip():
            raise ConfigError("experiment config needs a nonempty 'name'")
        models = d.get("models", [])
        if not isinstance(models, list):
            raise ConfigError("'models' must be a list")
        for m in models:
            unknown = set(m) - _MODEL_KEYS
            if unknown:
                raise ConfigError(f"unknown model keys: {sorted(unknown)}")
            if "name" not in m:
                raise ConfigError("every model entry needs a 'name'")
        names = [m["name"] for m in models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        baselines = d.get("baselines", [])
        for b in baselines:
            unknown = set(b) - _BASELINE_KEYS
            if unknown:
                raise ConfigError(f"unknown baseline keys: {sorted(unknown)}")
            if b.get("kind") not in ("sscc_ideal", "envelope"):
                raise ConfigError("baseline kind must be 'sscc_ideal' or 'envelope'")
            if b.get("kind") == "sscc_ideal" and "design_snr_db" not in b:
                raise ConfigError("sscc_ideal baseline needs design_snr_db")
        bad_train = set(d.get("train", {})) - _TRAIN_KEYS
        if bad_train:
            raise ConfigError(f"unknown train keys: {sorted(bad_train)}")
        return cls(
            name=str(d["name"]),
            profile=d.get("profile", "desk"),
            seed=int(d.get("seed", 0)),
            out_dir=d.get("out_dir"),
            title=d.get("title"),
            scenario=dict(d.get("scenario", {})),
            dataset=_merged(_DATASET_DEFAULTS, d.get("dataset"), "dataset"),
            train=dict(d.get("train", {})),
            eval=_merged(_EVAL_DEFAULTS, d.get("eval"), "eval"),
            models=tuple(dict(m) for m in models),
            baselines=tuple(dict(b) for b in baselines),
        )

    def resolved_dict(self):
        return {
            "name": self.name, "profile": self.profile, "seed": self.seed,
            "title": self.title, "scenario": self.scenario,
            "dataset": self.dataset, "train": self.train, "eval": self.eval,
            "models": list(self.models), "baselines": list(self.baselines),
        }

    @property
    def config_hash(self):
        blob = json.dumps(self.resolved_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolve_out_dir(self):
        path = self.out_dir or os.path.join("runs", self.name)
        root = os.environ.get("CSI_DJSCC_OUT_ROOT")
        if root and not os.path.isabs(path):
            path = os.path.join(root, path)
        return path

    def resolved_scenario(self):
        base = get_profile(self.profile)["scenario"]
        base = dataclasses.replace(base, seed=self.seed)
        if self.scenario:
            try:
                base = dataclasses.replace(base, **self.scenario)
            except TypeError as e:
                raise ConfigError(f"bad scenario override: {e}") from e
        return base

    def eval_seed(self):
        return self.seed if self.eval["seed"] is None else int(self.eval["seed"])


def load_config(path):
    try:
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e


def list_presets():
    pkg = resources.files("csi_djscc").joinpath("presets")
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    pkg = resources.files("csi_djscc").joinpath("presets")
    path = pkg.joinpath(f"{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}, available: {list_presets()}")
    return ExperimentConfig.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# stage: data


def _dataset_matches(dataset: CsiDataset, scenario, spec):
    if dataset.scenario.to_dict() != scenario.to_dict():
        return False
    counts = {"train": spec["n_train"], "val": spec["n_val"], "test": spec["n_test"]}
    return all(dataset.n_samples(s) == n for s, n in counts.items())


def stage_data(cfg: ExperimentConfig):
    scenario = cfg.resolved_scenario()
    TruncationSpec(get_profile(cfg.profile)["n_trunc"]).validate(scenario)
    spec = cfg.dataset
    ds_dir = spec["dir"]
    if ds_dir and not os.path.isabs(ds_dir):
        root = os.environ.get("CSI_DJSCC_OUT_ROOT")
        if root:
            ds_dir = os.path.join(root, ds_dir)

    if ds_dir and os.path.exists(os.path.join(ds_dir, "manifest.json")):
        dataset = load_dataset(ds_dir)
        if not _dataset_matches(dataset, scenario, spec):
            raise DatasetError(
                f"dataset at {ds_dir} does not match the experiment scenario or "
                "split sizes; remove it or point dataset.dir elsewhere")
        return dataset, ds_dir

    if ds_dir and not spec["generate_if_missing"]:
        raise DatasetError(f"no dataset at {ds_dir} and generate_if_missing is off")

    dataset = generate_dataset(scenario, spec["n_train"], spec["n_val"], spec["n_test"])
    if ds_dir:
        save_dataset(dataset, ds_dir)
    return dataset, ds_dir


# ---------------------------------------------------------------------------
# stage: train


def _train_config(cfg: ExperimentConfig, overrides):
    merged = {**cfg.train, **(overrides or {})}
    bad = set(merged) - _TRAIN_KEYS
    if bad:
        raise ConfigError(f"unknown train keys: {sorted(bad)}")
    return TrainConfig(seed=cfg.seed, **merged)


def _bitlevel_config(cfg: ExperimentConfig, train_overrides, bitlevel_overrides):
    auto = _train_config(cfg, train_overrides)
    bl = dict(bitlevel_overrides or {})
    bad = set(bl) - {"offset_epochs", "joint_epochs", "lr", "batch_size"}
    if bad:
        raise ConfigError(f"unknown bitlevel keys: {sorted(bad)}")
    return BitLevelConfig(autoencoder=auto, seed=cfg.seed, **bl)


def _model_pipeline(cfg: ExperimentConfig, mspec, m_override=None, bits=None):
    prof = get_profile(cfg.profile)
    scenario = cfg.resolved_scenario()
    policy = SnrPolicy.from_dict(mspec["snr_policy"]) if "snr_policy" in mspec \
        else SnrPolicy()
    kwargs = dict(
        variant=mspec.get("variant", "adjscc"),
        backbone=mspec.get("backbone", "csinet"),
        n_sub=scenario.n_sub, n_tx=scenario.n_tx,
        n_trunc=prof["n_trunc"], k=prof["k"],
        m=m_override if m_override is not None else mspec.get("m"),
        snr_policy=policy,
    )
    if mspec.get("af_mode") is not None:
        kwargs["af_mode"] = mspec["af_mode"]
    if bits is not None:
        kwargs["quantizer"] = quant.QuantizerSpec(bits=bits)
    return PipelineConfig(**kwargs)


def _load_cached_bundle(model_dir, pcfg, dataset, cfg):
    """Reload a previously trained bundle if it matches what we would build."""
    if not os.path.exists(os.path.join(model_dir, "model.json")):
        return None
    try:
        cached = load_pipeline_bundle(model_dir)
    except Exception:
        return None
    fresh = build_bundle(pcfg, dataset, seed=cfg.seed)
    if cached.arch_hash != fresh.arch_hash:
        return None
    if tuple(cached.snr_range_db) != tuple(pcfg.snr_policy.range_db):
        return None
    return cached


def _train_one(cfg, dataset, pcfg, model_dir, train_overrides, bitlevel_overrides,
               force):
    if not force:
        cached = _load_cached_bundle(model_dir, pcfg, dataset, cfg)
        if cached is not None:
            return cached, None
    bundle = build_bundle(pcfg, dataset, seed=cfg.seed)
    if pcfg.variant == "sscc_bit":
        blcfg = _bitlevel_config(cfg, train_overrides, bitlevel_overrides)
        bundle, report = train_bitlevel(bundle, dataset, blcfg)
        report_dict = report
    else:
        tcfg = _train_config(cfg, train_overrides)
        bundle, report = train(bundle, dataset, tcfg)
        report_dict = report.to_dict()
    save_bundle(bundle, model_dir)
    with open(os.path.join(model_dir, "train_report.json"), "w") as fh:
        json.dump(report_dict, fh, indent=2, sort_keys=True)
    return bundle, report_dict


def _required_table_dims(cfg: ExperimentConfig):
    """m values (and common bits) the sscc_ideal baselines need table entries for."""
    prof = get_profile(cfg.profile)
    schemes = []
    for b in cfg.baselines:
        if b["kind"] != "sscc_ideal":
            continue
        schemes.append(quant.IdealSchemeSpec(
            design_snr_db=float(b["design_snr_db"]), k=prof["k"],
            bits=int(b.get("bits", 5)),
            capacity_mode=b.get("capacity_mode", "mean")))
    return schemes


def _table_entry_nmse(cfg, dataset, bundle):
    split = cfg.eval["split"]
    h_down, _ = dataset.splits[split]
    if cfg.eval["max_samples"] is not None:
        h_down = h_down[:cfg.eval["max_samples"]]
    rec = reconstruct(bundle, h_down, mu_db=0.0,
                      batch_size=cfg.eval["batch_size"], apply_quantizer=True)
    return nmse(h_down, rec)


def stage_train(cfg: ExperimentConfig, dataset, force=False):
    out_dir = cfg.resolve_out_dir()
    bundles, reports = {}, {}
    for mspec in cfg.models:
        pcfg = _model_pipeline(cfg, mspec)
        model_dir = os.path.join(out_dir, "models", mspec["name"])
        bundle, report = _train_one(cfg, dataset, pcfg, model_dir,
                                    mspec.get("train"), mspec.get("bitlevel"), force)
        bundles[mspec["name"]] = bundle
        if report is not None:
            reports[mspec["name"]] = report

    table = None
    schemes = _required_table_dims(cfg)
    if schemes:
        bit_widths = {s.bits for s in schemes}
        if len(bit_widths) > 1:
            raise ConfigError("all sscc_ideal baselines must share one bit width")
        bits = bit_widths.pop()
        table = {}
        for m in sorted({s.m for s in schemes}):
            bspec = next(b for b in cfg.baselines if b["kind"] == "sscc_ideal")
            mspec = {"name": f"table-m{m}", "variant": "sscc_bit",
                     "backbone": bspec.get("backbone", "csinet")}
            pcfg = _model_pipeline(cfg, mspec, m_override=m, bits=bits)
            model_dir = os.path.join(out_dir, "models", mspec["name"])
            bundle, _ = _train_one(cfg, dataset, pcfg, model_dir,
                                   bspec.get("train"), bspec.get("bitlevel"), force)
            table[m] = _table_entry_nmse(cfg, dataset, bundle)
        os.makedirs(os.path.join(out_dir, "tables"), exist_ok=True)
        quant.save_table(
            table,
            {"experiment": cfg.name, "profile": cfg.profile, "seed": cfg.seed,
             "bits": bits, "config_hash": cfg.config_hash},
            os.path.join(out_dir, "tables", "autoencoder_nmse.json"))
    return bundles, reports, table


# ---------------------------------------------------------------------------
# stage: sweep


def stage_sweep(cfg: ExperimentConfig, dataset, bundles, table):
    grid = [float(g) for g in cfg.eval["grid_db"]]
    results = []
    for mspec in cfg.models:
        bundle = bundles[mspec["name"]]
        results.append(snr_sweep(
            bundle, dataset, grid, split=cfg.eval["split"],
            eval_seed=cfg.eval_seed(), batch_size=cfg.eval["batch_size"],
            label=mspec["name"], family=mspec.get("family", cfg.name),
            max_samples=cfg.eval["max_samples"]))

    prof = get_profile(cfg.profile)
    ideal_results = []
    for b in cfg.baselines:
        if b["kind"] != "sscc_ideal":
            continue
        scheme = quant.IdealSchemeSpec(
            design_snr_db=float(b["design_snr_db"]), k=prof["k"],
            bits=int(b.get("bits", 5)), capacity_mode=b.get("capacity_mode", "mean"))
        label = b.get("label", f"sscc-ideal-{scheme.design_snr_db:g}dB")
        r = SweepResult(
            label=label, family=cfg.name,
            grid_db=grid, nmse_db=quant.ideal_curve(scheme, grid, table),
            meta={"design_snr_db": scheme.design_snr_db, "m": scheme.m,
                  "bits": scheme.bits})
        ideal_results.append(r)
    results += ideal_results

    for b in cfg.baselines:
        if b["kind"] != "envelope":
            continue
        wanted = b.get("of")
        members = [r for r in ideal_results
                   if wanted is None or r.label in wanted]
        if not members:
            raise ConfigError("envelope baseline has no sscc_ideal curves to cover")
        env = quant.envelope([(r.grid_db, r.nmse_db) for r in members])
        results.append(SweepResult(
            label=b.get("label", "sscc-ideal-envelope"), family=cfg.name,
            grid_db=grid, nmse_db=env,
            meta={"members": [r.label for r in members]}))
    return results


# ---------------------------------------------------------------------------
# stage: report


def stage_report(cfg: ExperimentConfig, results):
    title = cfg.title or f"CSI feedback: {cfg.name}"
    return make_report(results, cfg.resolve_out_dir(), title=title)


# ---------------------------------------------------------------------------
# full run


def _run_stage(tag, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, ConfigError):
        raise
    except Exception as e:
        raise StageError(tag, f"{type(e).__name__}: {e}") from e


def run_experiment(cfg: ExperimentConfig, last_stage="report", force=False):
    """Execute stages in order up to last_stage; returns a manifest dict."""
    if last_stage not in STAGES:
        raise ConfigError(f"last_stage must be one of {STAGES}")
    out_dir = cfg.resolve_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    upto = STAGES.index(last_stage)
    manifest = {"format_version": EXPERIMENT_VERSION, "name": cfg.name,
                "profile": cfg.profile, "seed": cfg.seed,
                "config_hash": cfg.config_hash, "out_dir": out_dir,
                "config": cfg.resolved_dict(), "stages_run": []}

    dataset, ds_dir = _run_stage("data", stage_data, cfg)
    manifest["stages_run"].append("data")
    manifest["dataset_dir"] = ds_dir
    out = {"config": cfg, "manifest": manifest, "dataset": dataset}
    if upto >= 1:
        bundles, reports, table = _run_stage("train", stage_train, cfg, dataset,
                                             force=force)
        manifest["stages_run"].append("train")
        manifest["models"] = sorted(bundles)
        if table is not None:
            manifest["autoencoder_table"] = {str(m): v for m, v in sorted(table.items())}
        out.update(bundles=bundles, reports=reports, table=table)
    if upto >= 2:
        results = _run_stage("sweep", stage_sweep, cfg, dataset, bundles, table)
        title = cfg.title or f"CSI feedback: {cfg.name}"
        manifest["results_path"] = _run_stage("sweep", save_results, results,
                                              out_dir, title)
        manifest["stages_run"].append("sweep")
        out["results"] = results
    if upto >= 3:
        paths = _run_stage("report", stage_report, cfg, results)
        manifest["stages_run"].append("report")
        manifest["artifacts"] = paths
        out["paths"] = paths

    with open(os.path.join(out_dir, "experiment.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out
