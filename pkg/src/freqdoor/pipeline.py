"""Experiment stages: dataset synthesis, training, evaluation, and defenses.

Every stage is a pure function of (config, filesystem state): given the same
config and prerequisite artifacts it reproduces its numeric outputs bitwise in
single-worker mode. Stages communicate only through files under the run
directory and record what they wrote in a JSON manifest.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import fiba_inject, wanet_inject
from .checkpoint import load_module, save_module
from .config import ExperimentConfig
from .data import DatasetSplits, load_dataset, synth_dataset
from .defenses import (
    StripConfig,
    fine_prune,
    overlap_coefficient,
    saliency_map,
    strip_survey,
)
from .errors import DependencyError
from .evaluation import (
    ClassificationRefs,
    attack_success_rate,
    benign_accuracy,
    frequency_report,
    stealth_report,
    write_rows_csv,
    write_summary,
)
from .imaging import DegradationConfig, FrequencyAnalysisConfig, degradation_target, psnr
from .sfinet import InjectorTrainConfig, TriggerInjector, inject, train_injector
from .triggers import TriggerSet, make_texture, make_trigger_corpus, make_trigger_set
from .victim import BackdoorTrainConfig, RestorerNet, make_restorer, restore, train_victim

DATA_ENV_VAR = "FREQDOOR_DATA"

# Per-stage seed offsets derived from the experiment seed.
SEED_INJECTOR = 1
SEED_CLEAN_INIT = 2
SEED_VICTIM_INIT = 3
SEED_VICTIM_TRAIN = 4
SEED_STRIP = 5


@dataclass
class RunPaths:
    out_dir: Path
    data_dir: Path
    checkpoints: Path
    reports: Path
    plots: Path
    manifests: Path

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "RunPaths":
        out = Path(cfg.out_dir)
        data_root = os.environ.get(DATA_ENV_VAR)
        data_dir = Path(data_root) if data_root else out / "data"
        return cls(
            out_dir=out,
            data_dir=data_dir,
            checkpoints=out / "checkpoints",
            reports=out / "reports",
            plots=out / "plots",
            manifests=out / "manifests",
        )

    def ensure(self) -> "RunPaths":
        for p in (self.out_dir, self.checkpoints, self.reports, self.plots, self.manifests):
            p.mkdir(parents=True, exist_ok=True)
        return self


@dataclass
class RunManifest:
    stage: str
    config_hash: str
    seed: int
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        for label, file_path in self.files.items():
            if not Path(file_path).exists():
                raise DependencyError(f"manifest references missing file {label}: {file_path}")
        payload = {
            "stage": self.stage,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "files": {k: str(v) for k, v in self.files.items()},
            "timings": self.timings,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))
        return Path(path)


def _degradation(cfg: ExperimentConfig) -> DegradationConfig:
    return DegradationConfig(
        blur_sigma=cfg.data.blur_sigma,
        noise_sigma=cfg.data.noise_sigma,
        downscale_factor=cfg.data.downscale,
        seed=cfg.seed,
    )


def _splits(cfg: ExperimentConfig, paths: RunPaths) -> DatasetSplits:
    if not (paths.data_dir / "manifest.csv").exists():
        raise DependencyError(f"dataset not found: {paths.data_dir / 'manifest.csv'}")
    return load_dataset(paths.data_dir)


def trigger_set_for(cfg: ExperimentConfig) -> TriggerSet:
    return make_trigger_set(
        size=cfg.data.size,
        seed=cfg.attack.trigger_seed,
        pool_size=cfg.attack.pseudo_pool_size,
        channels=cfg.data.channels,
    )


def trigger_corpus_for(cfg: ExperimentConfig, triggers: TriggerSet) -> list[np.ndarray]:
    """Injector training triggers: authentic + pseudo pool + extra textures."""
    corpus = [triggers.authentic] + list(triggers.pseudo_pool)
    extra = cfg.injector.trigger_corpus_size - len(corpus)
    base = cfg.attack.trigger_seed + 7_777
    for i in range(max(0, extra)):
        corpus.append(make_texture(cfg.data.size, base * 100003 + i, cfg.data.channels))
    return corpus


def _injector_paths(paths: RunPaths) -> Path:
    return paths.checkpoints / "injector"

def _clean_paths(paths: RunPaths) -> Path:
    return paths.checkpoints / "clean"

def _victim_paths(paths: RunPaths) -> Path:
    return paths.checkpoints / "victim"


def _require_checkpoint(prefix: Path, what: str) -> None:
    if not prefix.with_suffix(".json").exists():
        raise DependencyError(f"missing {what} checkpoint: {prefix}.json")


def load_injector(cfg: ExperimentConfig, paths: RunPaths) -> TriggerInjector:
    prefix = _injector_paths(paths)
    _require_checkpoint(prefix, "injector")
    net = TriggerInjector(cfg.data.channels, cfg.injector.base_width, cfg.injector.epsilon)
    load_module(net, prefix)
    net.eval()
    return net


def load_victim(cfg: ExperimentConfig, paths: RunPaths, name: str) -> RestorerNet:
    prefix = paths.checkpoints / name
    _require_checkpoint(prefix, name)
    net = RestorerNet(cfg.data.channels, cfg.victim.base_width)
    load_module(net, prefix)
    net.eval()
    return net


def poison_fn_for(cfg: ExperimentConfig, injector: TriggerInjector | None, triggers: TriggerSet):
    method = cfg.attack.method
    if method == "learned":
        if injector is None:
            raise DependencyError("learned attack requires a trained injector")
        return lambda img: inject(img, triggers.authentic, injector)
    if method == "fiba":
        freq_cfg = FrequencyAnalysisConfig(beta=cfg.eval.beta)
        blend = cfg.attack.fiba_blend
        return lambda img: fiba_inject(img, triggers.authentic, blend, freq_cfg)
    if method == "wanet":
        return lambda img: wanet_inject(
            img, cfg.attack.wanet_strength, cfg.attack.wanet_grid_size, cfg.attack.trigger_seed
        )
    raise DependencyError(f"unknown attack method {method!r}")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_synth_data(cfg: ExperimentConfig) -> RunManifest:
    paths = RunPaths.from_config(cfg).ensure()
    t0 = time.time()
    root = synth_dataset(
        count=cfg.data.count,
        size=cfg.data.size,
        seed=cfg.seed,
        out_dir=paths.data_dir,
        degradation=_degradation(cfg),
        channels=cfg.data.channels,
        face_like=cfg.data.face_like,
    )
    manifest = RunManifest("synth-data", cfg.config_hash(), cfg.seed)
    manifest.files["dataset_manifest"] = root / "manifest.csv"
    manifest.timings["synth_data"] = time.time() - t0
    manifest.write(paths.manifests / "synth_data.json")
    return manifest


def run_train_injector(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    paths = RunPaths.from_config(cfg).ensure()
    splits = _splits(cfg, paths)
    triggers = trigger_set_for(cfg)
    corpus = trigger_corpus_for(cfg, triggers)
    t0 = time.time()
    train_cfg = InjectorTrainConfig(
        alpha=cfg.injector.alpha,
        epsilon=cfg.injector.epsilon,
        learning_rate=cfg.injector.learning_rate,
        batch_size=cfg.injector.batch_size,
        epochs=cfg.injector.epochs,
        base_width=cfg.injector.base_width,
        seed=cfg.seed + SEED_INJECTOR,
        num_threads=workers,
    )
    result = train_injector([lq for lq, _gt in splits.train], corpus, train_cfg)
    elapsed = time.time() - t0
    prefix = _injector_paths(paths)
    save_module(result.injector, prefix)
    history_path = paths.reports / "injector_history.csv"
    rows = [
        {"step": i, "total": t, "embed": e, "recover": r}
        for i, (t, e, r) in enumerate(result.batch_losses)
    ]
    write_rows_csv(history_path, rows, {"config_hash": cfg.config_hash(), "seed": train_cfg.seed})
    manifest = RunManifest("train-injector", cfg.config_hash(), cfg.seed)
    manifest.files["checkpoint_manifest"] = prefix.with_suffix(".json")
    manifest.files["checkpoint_blob"] = prefix.with_suffix(".bin")
    manifest.files["history"] = history_path
    manifest.timings["train_injector"] = elapsed
    manifest.write(paths.manifests / "train_injector.json")
    return manifest


def _train_victim_stage(cfg: ExperimentConfig, mode: str, name: str, workers: int) -> RunManifest:
    paths = RunPaths.from_config(cfg).ensure()
    splits = _splits(cfg, paths)
    injector = None
    triggers = None
    if mode != "clean":
        injector = load_injector(cfg, paths)
        triggers = trigger_set_for(cfg)
    init_seed = cfg.seed + (SEED_CLEAN_INIT if mode == "clean" else SEED_VICTIM_INIT)
    model = make_restorer(cfg.data.channels, cfg.victim.base_width, seed=init_seed)
    train_cfg = BackdoorTrainConfig(
        clean_weight=cfg.victim.clean_weight,
        poison_weight=cfg.victim.poison_weight,
        legacy_clean_weight=cfg.victim.legacy_clean_weight,
        epochs=cfg.victim.epochs,
        batch_size=cfg.victim.batch_size,
        learning_rate=cfg.victim.learning_rate,
        seed=cfg.seed + SEED_VICTIM_TRAIN,
        mode=mode,
        num_threads=workers,
    )
    t0 = time.time()
    result = train_victim(model, injector, splits.train, triggers, train_cfg)
    elapsed = time.time() - t0
    prefix = paths.checkpoints / name
    save_module(result.model, prefix)
    history_path = paths.reports / f"{name}_history.csv"
    write_rows_csv(
        history_path,
        result.epoch_metrics,
        {"config_hash": cfg.config_hash(), "seed": train_cfg.seed},
    )
    manifest = RunManifest(f"train-{name}", cfg.config_hash(), cfg.seed)
    manifest.files["checkpoint_manifest"] = prefix.with_suffix(".json")
    manifest.files["checkpoint_blob"] = prefix.with_suffix(".bin")
    manifest.files["history"] = history_path
    manifest.timings[f"train_{name}"] = elapsed
    manifest.write(paths.manifests / f"train_{name}.json")
    return manifest


def run_train_clean(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    clean_cfg = replace(cfg, victim=replace(cfg.victim, mode="clean"))
    return _train_victim_stage(clean_cfg, "clean", "clean", workers)


def run_train_victim(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    return _train_victim_stage(cfg, cfg.victim.mode, "victim", workers)


def build_refs(cfg: ExperimentConfig, clean_model: RestorerNet, test_lq) -> list[ClassificationRefs]:
    refs = []
    for lq in test_lq:
        refs.append(
            ClassificationRefs(
                hq=restore(clean_model, lq),
                degraded=degradation_target(lq, 0.1),
            )
        )
    return refs


def run_attack_eval(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    paths = RunPaths.from_config(cfg).ensure()
    splits = _splits(cfg, paths)
    clean_model = load_victim(cfg, paths, "clean")
    victim = load_victim(cfg, paths, "victim")
    triggers = trigger_set_for(cfg)
    injector = load_injector(cfg, paths) if cfg.attack.method == "learned" else None
    poison_fn = poison_fn_for(cfg, injector, triggers)

    test_lq = [lq for lq, _ in splits.test]
    test_gt = [gt for _, gt in splits.test]
    t0 = time.time()
    refs = build_refs(cfg, clean_model, test_lq)
    ba = benign_accuracy(victim, test_lq, refs)
    asr = attack_success_rate(victim, poison_fn, test_lq, refs)

    poisoned = [poison_fn(x) for x in test_lq]
    stealth = stealth_report(test_lq, poisoned, test_gt)
    freq_cfg = FrequencyAnalysisConfig(beta=cfg.eval.beta)
    freq_attack = frequency_report(test_lq, poisoned, freq_cfg)
    fiba_poisoned = [
        fiba_inject(x, triggers.authentic, cfg.attack.fiba_blend, freq_cfg) for x in test_lq
    ]
    freq_fiba = frequency_report(test_lq, fiba_poisoned, freq_cfg)
    elapsed = time.time() - t0

    provenance = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "attack": cfg.attack.method}
    files = {}
    labels_rows = []
    from .evaluation import classify_restoration
    from .victim import restore_batch

    outs_clean = restore_batch(victim, test_lq)
    outs_poison = restore_batch(victim, poisoned)
    for i, (oc, op, r) in enumerate(zip(outs_clean, outs_poison, refs)):
        labels_rows.append(
            {
                "index": i,
                "clean_label": classify_restoration(oc, r),
                "poison_label": classify_restoration(op, r),
                "psnr_restored_gt": psnr(oc, test_gt[i]),
                "psnr_input_gt": psnr(test_lq[i], test_gt[i]),
            }
        )
    files["classification"] = paths.reports / "classification.csv"
    write_rows_csv(files["classification"], labels_rows, provenance)
    files["stealth"] = paths.reports / "stealth.csv"
    write_rows_csv(files["stealth"], stealth["rows"], provenance)
    files["frequency_attack"] = paths.reports / "frequency_attack.csv"
    write_rows_csv(files["frequency_attack"], freq_attack["rows"], provenance)
    files["frequency_fiba"] = paths.reports / "frequency_fiba.csv"
    write_rows_csv(files["frequency_fiba"], freq_fiba["rows"], provenance)

    summary_sections = {
        "attack": {"method": cfg.attack.method, "asr_percent": asr, "ba_percent": ba},
        "stealth_means": stealth["means"],
        "frequency_attack_means": freq_attack["means"],
        "frequency_fiba_means": freq_fiba["means"],
    }
    files["summary"] = paths.reports / "attack_summary.txt"
    write_summary(files["summary"], summary_sections, provenance)

    manifest = RunManifest("attack-eval", cfg.config_hash(), cfg.seed, files={})
    manifest.files = files
    manifest.timings["attack_eval"] = elapsed
    manifest.write(paths.manifests / "attack_eval.json")
    return manifest


def run_defense(cfg: ExperimentConfig, which: str = "both", workers: int = 1) -> RunManifest:
    if which not in ("prune", "strip", "both"):
        raise DependencyError(f"unknown defense selector {which!r}")
    paths = RunPaths.from_config(cfg).ensure()
    splits = _splits(cfg, paths)
    clean_model = load_victim(cfg, paths, "clean")
    victim = load_victim(cfg, paths, "victim")
    triggers = trigger_set_for(cfg)
    injector = load_injector(cfg, paths) if cfg.attack.method == "learned" else None
    poison_fn = poison_fn_for(cfg, injector, triggers)

    test_lq = [lq for lq, _ in splits.test]
    refs = build_refs(cfg, clean_model, test_lq)
    train_lq = [lq for lq, _ in splits.train]

    provenance = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "attack": cfg.attack.method}
    files = {}
    timings = {}
    summary_sections = {}

    if which in ("prune", "both"):
        t0 = time.time()
        calib = train_lq[:32]
        rows = []
        for ratio in [0.0] + list(cfg.defense.prune_ratios):
            pruned = fine_prune(victim, calib, ratio)
            rows.append(
                {
                    "ratio": ratio,
                    "ba_percent": benign_accuracy(pruned, test_lq, refs),
                    "asr_percent": attack_success_rate(pruned, poison_fn, test_lq, refs),
                }
            )
        files["prune_sweep"] = paths.reports / "prune_sweep.csv"
        write_rows_csv(files["prune_sweep"], rows, provenance)
        timings["prune_sweep"] = time.time() - t0
        summary_sections["prune"] = {
            "ratios": len(rows),
            "ba_unpruned": rows[0]["ba_percent"],
            "ba_final": rows[-1]["ba_percent"],
            "asr_final": rows[-1]["asr_percent"],
        }

    if which in ("strip", "both"):
        t0 = time.time()
        n = min(cfg.defense.strip_count, len(train_lq))
        inputs_clean = train_lq[:n]
        inputs_poisoned = [poison_fn(x) for x in inputs_clean]
        strip_cfg = StripConfig(
            clean_pool=train_lq,
            overlays=cfg.defense.strip_overlays,
            blend_weight=cfg.defense.strip_blend,
            bins=cfg.defense.strip_bins,
            seed=cfg.seed + SEED_STRIP,
        )
        ent_clean = strip_survey(victim, inputs_clean, strip_cfg)
        ent_poison = strip_survey(victim, inputs_poisoned, strip_cfg)
        rows = [
            {"index": i, "label": "clean", "entropy_bits": e} for i, e in enumerate(ent_clean)
        ] + [
            {"index": i, "label": "poisoned", "entropy_bits": e}
            for i, e in enumerate(ent_poison)
        ]
        files["strip_entropy"] = paths.reports / "strip_entropy.csv"
        write_rows_csv(files["strip_entropy"], rows, provenance)
        timings["strip"] = time.time() - t0
        summary_sections["strip"] = {
            "overlap_coefficient": overlap_coefficient(ent_clean, ent_poison),
            "mean_entropy_clean": float(np.mean(ent_clean)),
            "mean_entropy_poisoned": float(np.mean(ent_poison)),
        }

        # saliency response of the victim on a clean vs poisoned example
        sal_clean = saliency_map(victim, test_lq[0])
        sal_poison = saliency_map(victim, poison_fn(test_lq[0]))
        summary_sections["saliency"] = {
            "mean_abs_map_difference": float(np.abs(sal_clean - sal_poison).mean())
        }

    files["summary"] = paths.reports / "defense_summary.txt"
    write_summary(files["summary"], summary_sections, provenance)

    manifest = RunManifest("defense", cfg.config_hash(), cfg.seed, files=files, timings=timings)
    manifest.write(paths.manifests / "defense.json")
    return manifest


def run_report(cfg: ExperimentConfig) -> RunManifest:
    """Emit static plots from the CSV reports (no other inputs)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .evaluation import read_rows_csv

    paths = RunPaths.from_config(cfg).ensure()
    files = {}

    prune_csv = paths.reports / "prune_sweep.csv"
    if prune_csv.exists():
        rows = read_rows_csv(prune_csv)
        ratios = [float(r["ratio"]) for r in rows]
        ba = [float(r["ba_percent"]) for r in rows]
        asr = [float(r["asr_percent"]) for r in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ratios, ba, marker="o", label="BA")
        ax.plot(ratios, asr, marker="s", label="ASR")
        ax.set_xlabel("prune ratio")
        ax.set_ylabel("percent")
        ax.set_ylim(-5, 105)
        ax.legend()
        ax.set_title("Channel pruning sweep")
        files["prune_plot"] = paths.plots / "prune_sweep.png"
        fig.savefig(files["prune_plot"], dpi=120, bbox_inches="tight")
        plt.close(fig)

    strip_csv = paths.reports / "strip_entropy.csv"
    if strip_csv.exists():
        rows = read_rows_csv(strip_csv)
        clean = [float(r["entropy_bits"]) for r in rows if r["label"] == "clean"]
        poisoned = [float(r["entropy_bits"]) for r in rows if r["label"] == "poisoned"]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(clean, bins=30, alpha=0.6, label="clean")
        ax.hist(poisoned, bins=30, alpha=0.6, label="poisoned")
        ax.set_xlabel("entropy (bits)")
        ax.set_ylabel("count")
        ax.legend()
        ax.set_title("Blend-entropy distributions")
        files["strip_plot"] = paths.plots / "strip_entropy.png"
        fig.savefig(files["strip_plot"], dpi=120, bbox_inches="tight")
        plt.close(fig)

    manifest = RunManifest("report", cfg.config_hash(), cfg.seed, files=files)
    manifest.write(paths.manifests / "report.json")
    return manifest


def run_full(cfg: ExperimentConfig, workers: int = 1) -> dict[str, RunManifest]:
    """All stages in dependency order; used by the CLI and the acceptance suite."""
    manifests = {"synth": run_synth_data(cfg)}
    manifests["injector"] = run_train_injector(cfg, workers)
    manifests["clean"] = run_train_clean(cfg, workers)
    manifests["victim"] = run_train_victim(cfg, workers)
    manifests["eval"] = run_attack_eval(cfg, workers)
    manifests["defense"] = run_defense(cfg, "both", workers)
    manifests["report"] = run_report(cfg)
    return manifests
