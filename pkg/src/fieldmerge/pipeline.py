"""End-to-end orchestration: divide the views, train experts, merge them
into a student, finetune, and score every arm against held-out images.

Reports are JSON (with curves also exported as CSV) and deterministic for
a fixed config: the only field that changes between identical reruns is
the `created` timestamp.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .distill import (DistillConfig, ExpertRegistry, desk_distill_config,
                      distill, finetune, init_student)
from .field import FieldModel, load_field, render_image, save_field
from .metrics import ms_ssim, psnr, ssim
from .partition import (CommunityConfig, PartitionSet, azimuth_partition,
                        load_adjacency, louvain, partition_realworld,
                        percentile_partition, save_partitions,
                        spectral_cluster)
from .scene import Dataset, load_dataset
from .training import (TrainConfig, desk_config, fresh_field, train_baseline,
                       train_experts)

PARTITION_METHODS = ("azimuth", "percentile", "louvain", "spectral", "auto")
RECIPES = ("desk", "paper")


# --- evaluation ------------------------------------------------------------


@dataclass
class Metrics:
    """Mean image-quality scores over a split, with per-image breakdown.

    All aggregates are means over images; psnr is capped at 99 dB for
    exact matches so reports stay finite.
    """

    psnr: float
    ssim: float
    ms_ssim: float
    per_image: list[dict] = dc_field(default_factory=list)

    def __post_init__(self):
        for name in ("psnr", "ssim", "ms_ssim"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"metric {name} is not finite")

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "ms_ssim": self.ms_ssim,
                "per_image": self.per_image}


def metrics_from_dict(d: dict) -> Metrics:
    return Metrics(psnr=d["psnr"], ssim=d["ssim"], ms_ssim=d["ms_ssim"],
                   per_image=list(d.get("per_image", [])))


def evaluate(model, dataset: Dataset, split: str = "test") -> Metrics:
    """Render every pose of a split (unstratified, hence deterministic)
    and aggregate PSNR / SSIM / MS-SSIM as means over images."""
    if not isinstance(model, FieldModel):
        model = load_field(model)
    if split not in dataset.views:
        raise ValueError(f"dataset has no split {split!r}; "
                         f"available: {sorted(dataset.views)}")
    views = dataset.views[split]
    per = []
    for i, pose in enumerate(views.poses):
        ref = dataset.image(split, i)
        img = render_image(model, pose, dataset.background)
        per.append({"view": i, "psnr": psnr(img, ref), "ssim": ssim(img, ref),
                    "ms_ssim": ms_ssim(img, ref)})
    mean = lambda k: float(np.mean([p[k] for p in per]))
    return Metrics(psnr=mean("psnr"), ssim=mean("ssim"),
                   ms_ssim=mean("ms_ssim"), per_image=per)


# --- partition dispatch -----------------------------------------------------


def divide_views(dataset: Dataset, k: int, method: str = "percentile",
                 overlap_deg: float = 0.0, adjacency=None,
                 seed: int = 0) -> PartitionSet:
    """Partition the training views with the named method.

    Graph methods (louvain / spectral / auto) need a co-visibility
    adjacency file; `auto` tries louvain over a resolution ladder and
    falls back to spectral, then percentile.
    """
    poses = dataset.views["train"].poses
    if method == "azimuth":
        return azimuth_partition(poses, k, overlap_deg=overlap_deg)
    if method == "percentile":
        return percentile_partition(poses, k)
    if method not in PARTITION_METHODS:
        raise ValueError(f"unknown partition method {method!r}; "
                         f"choose from {PARTITION_METHODS}")
    if adjacency is None:
        raise ValueError(f"method {method!r} needs --adjacency "
                         "(co-visibility weights)")
    adj = load_adjacency(adjacency)
    if len(adj) != len(poses):
        raise ValueError(f"adjacency is {len(adj)}x{len(adj)} but the "
                         f"dataset has {len(poses)} training views")
    if method == "louvain":
        return louvain(adj, CommunityConfig(seed=seed))
    if method == "spectral":
        return spectral_cluster(adj, k, seed=seed)
    return partition_realworld(adj, poses, k, CommunityConfig(seed=seed))


# --- configs ----------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Full comparison-run description, loadable from JSON."""

    data: str
    out: str
    k: int = 4
    method: str = "percentile"
    overlap_deg: float = 0.0
    adjacency: str | None = None
    expert_iters: int = 5000
    distill_iters: int = 5000
    finetune_iters: int = 5000
    seed: int = 0
    workers: int | None = None
    comparison: bool = True
    virtual_fraction: float = 0.5
    warm_start: bool = False
    recipe: str = "desk"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 partitions")
        if self.method not in PARTITION_METHODS:
            raise ValueError(f"unknown partition method {self.method!r}")
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; "
                             f"choose from {RECIPES}")
        if min(self.expert_iters, self.distill_iters,
               self.finetune_iters) < 0:
            raise ValueError("iteration budgets must be >= 0")
        if self.expert_iters == 0:
            raise ValueError("experts need a positive budget")

    def to_dict(self) -> dict:
        return {
            "data": self.data, "out": self.out, "k": self.k,
            "method": self.method, "overlap_deg": self.overlap_deg,
            "adjacency": self.adjacency, "expert_iters": self.expert_iters,
            "distill_iters": self.distill_iters,
            "finetune_iters": self.finetune_iters, "seed": self.seed,
            "workers": self.workers, "comparison": self.comparison,
            "virtual_fraction": self.virtual_fraction,
            "warm_start": self.warm_start, "recipe": self.recipe,
        }


def pipeline_config_from_dict(d: dict) -> PipelineConfig:
    known = {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown PipelineConfig fields: {sorted(unknown)}")
    return PipelineConfig(**d)


def train_recipe(recipe: str, iterations: int, seed: int) -> TrainConfig:
    """Desk recipe is the CPU-tuned schedule; paper keeps defaults."""
    if recipe == "desk":
        return desk_config(iterations, seed=seed)
    base = TrainConfig()
    return TrainConfig(iterations=iterations, seed=seed,
                       warmup=min(base.warmup, max(iterations - 1, 0)))


def distill_recipe(recipe: str, distill_iters: int, finetune_iters: int,
                   seed: int, virtual_fraction: float = 0.5,
                   warm_start: bool = False) -> DistillConfig:
    if recipe == "desk":
        return desk_distill_config(distill_iters, finetune_iters, seed=seed,
                                   virtual_fraction=virtual_fraction,
                                   warm_start=warm_start)
    return DistillConfig(distill_iterations=distill_iters,
                         finetune_iterations=finetune_iters, seed=seed,
                         virtual_fraction=virtual_fraction,
                         warm_start=warm_start)


# --- report and manifest ---------------------------------------------------


def _check_curve(name: str, curve: list[dict]) -> None:
    steps = [e["step"] for e in curve]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError(f"curve {name!r} steps must be strictly increasing")


@dataclass
class Report:
    """Comparison-run results: one entry per arm plus expert curves."""

    run_id: str
    config: dict
    partitions: str | None
    stages: list[str]
    arms: dict[str, dict]
    experts: list[dict] = dc_field(default_factory=list)
    created: str = ""

    def __post_init__(self):
        for name, arm in self.arms.items():
            _check_curve(name, arm.get("curve", []))
            _check_curve(f"{name}:distill", arm.get("distill_curve", []))
        for e in self.experts:
            _check_curve(f"expert_{e['partition_id']:02d}", e.get("curve", []))

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "created": self.created,
                "config": self.config, "partitions": self.partitions,
                "stages": self.stages, "arms": self.arms,
                "experts": self.experts}


def report_from_dict(d: dict) -> Report:
    return Report(run_id=d["run_id"], config=d["config"],
                  partitions=d["partitions"], stages=list(d["stages"]),
                  arms=dict(d["arms"]), experts=list(d["experts"]),
                  created=d.get("created", ""))


def save_report(path, report: Report) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def load_report(path) -> Report:
    return report_from_dict(json.loads(Path(path).read_text()))


def export_curves(report: Report, out_dir) -> list[Path]:
    """Write every convergence curve as a step,value CSV for plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name: str, curve: list[dict]) -> None:
        if not curve:
            return
        cols = list(curve[0])
        path = out_dir / f"{name}.csv"
        rows = [",".join(str(e[c]) for c in cols) for e in curve]
        path.write_text("\n".join([",".join(cols)] + rows) + "\n")
        written.append(path)

    for name, arm in report.arms.items():
        dump(name, arm.get("curve", []))
        dump(f"{name}_distill", arm.get("distill_curve", []))
    for e in report.experts:
        dump(f"expert_{e['partition_id']:02d}", e.get("curve", []))
    return written


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record: seeds, library versions, artifact hashes, and
    wall-clock seconds per stage."""

    run_id: str
    seeds: dict
    versions: dict
    hashes: dict
    wall_clock: dict
    created: str = ""

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "created": self.created,
                "seeds": self.seeds, "versions": self.versions,
                "hashes": self.hashes, "wall_clock": self.wall_clock}


def library_versions() -> dict:
    return {"fieldmerge": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version()}


def save_manifest(path, manifest: RunManifest) -> None:
    path = Path(path)
    for ref in manifest.hashes:
        target = Path(ref)
        if not target.is_absolute():
            target = path.parent / target
        if not target.exists():
            raise FileNotFoundError(f"manifest references missing file: {ref}")
    path.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True)
                    + "\n")


# --- pipeline ---------------------------------------------------------------


class StageError(RuntimeError):
    """A pipeline stage failed; records the stage and what had finished."""

    def __init__(self, stage: str, completed: list[str],
                 cause: BaseException):
        super().__init__(f"stage {stage!r} failed "
                         f"(completed: {completed or 'none'}): {cause}")
        self.stage = stage
        self.completed = list(completed)


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_pipeline(config: PipelineConfig) -> Report:
    """Divide, train experts, distill, finetune, and evaluate.

    With comparison on, also trains baseline fields at B and 2B where B
    is the per-expert budget, so the report carries the three arms the
    method is judged by. A failed stage aborts with the stage name and a
    partial manifest of everything that completed.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = hashlib.sha256(
        json.dumps(config.to_dict(), sort_keys=True).encode())\
        .hexdigest()[:12]
    stages: list[str] = []
    wall: dict[str, float] = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as e:
            partial = {"run_id": run_id, "completed": stages, "failed": name,
                       "wall_clock": wall}
            (out / "manifest.json").write_text(
                json.dumps(partial, indent=1, sort_keys=True) + "\n")
            raise StageError(name, stages, e) from e
        wall[name] = time.perf_counter() - t0
        stages.append(name)
        return result

    ds = stage("load-data", lambda: load_dataset(config.data))
    pset = stage("divide", lambda: divide_views(
        ds, config.k, config.method, overlap_deg=config.overlap_deg,
        adjacency=config.adjacency, seed=config.seed))
    partitions_path = out / "partitions.json"
    save_partitions(partitions_path, pset)

    tcfg = train_recipe(config.recipe, config.expert_iters, config.seed)
    bundles = stage("train-experts", lambda: train_experts(
        config.data, pset.groups, tcfg, out / "experts",
        workers=config.workers))
    models = [load_field(b.checkpoint) for b in bundles]
    registry = ExpertRegistry(models=models, groups=pset.groups,
                              method=pset.method,
                              poses=ds.views["train"].poses)

    dcfg = distill_recipe(config.recipe, config.distill_iters,
                          config.finetune_iters, config.seed,
                          config.virtual_fraction, config.warm_start)
    student = init_student(registry, dcfg, fresh_field(ds, tcfg))
    distill_log = stage("distill", lambda: distill(registry, student, dcfg))
    save_field(out / "student_distilled.ckpt", student)
    ft_log = stage("finetune", lambda: finetune(student, ds, dcfg))
    student_path = out / "student.ckpt"
    save_field(student_path, student)

    arms = {"dac": {"checkpoint": str(student_path),
                    "metrics": stage("evaluate",
                                     lambda: evaluate(student, ds)).to_dict(),
                    "curve": ft_log, "distill_curve": distill_log}}
    hashed = [partitions_path, student_path, out / "student_distilled.ckpt"]
    hashed += [Path(b.checkpoint) for b in bundles]

    if config.comparison:
        budget = config.expert_iters

        def baseline_arm(mult: int, tag: str) -> dict:
            cfg = train_recipe(config.recipe, mult * budget, config.seed)
            ckpt = out / f"{tag}.ckpt"
            bundle = train_baseline(ds, cfg, ckpt)
            return {"checkpoint": str(ckpt),
                    "metrics": evaluate(load_field(ckpt), ds).to_dict(),
                    "curve": bundle.log}

        arms["baseline_B"] = stage(
            "baseline-B", lambda: baseline_arm(1, "baseline_B"))
        arms["baseline_2B"] = stage(
            "baseline-2B", lambda: baseline_arm(2, "baseline_2B"))
        hashed += [out / "baseline_B.ckpt", out / "baseline_2B.ckpt"]

    report = Report(
        run_id=run_id,
        config={"pipeline": config.to_dict(), "train": tcfg.to_dict(),
                "distill": dcfg.to_dict()},
        partitions=str(partitions_path),
        stages=stages,
        arms=arms,
        experts=[{"partition_id": b.partition_id,
                  "checkpoint": b.checkpoint, "curve": b.log}
                 for b in bundles],
        created=_timestamp())
    report_path = out / "report.json"
    save_report(report_path, report)
    export_curves(report, out / "curves")

    data_root = Path(config.data)
    hashed += [data_root / "cameras.json", data_root / "meta.json",
               report_path]
    manifest = RunManifest(
        run_id=run_id,
        seeds={"pipeline": config.seed,
               "experts": [config.seed + pid for pid in range(pset.k)]},
        versions=library_versions(),
        hashes={str(p): file_sha256(p) for p in hashed},
        wall_clock={k: round(v, 3) for k, v in wall.items()},
        created=_timestamp())
    save_manifest(out / "manifest.json", manifest)
    return report
