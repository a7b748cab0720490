"""Manifest ingestion and parallel curation orchestration.

Entries are independent: each (entry, variant) derives its own random
generator from a 64-bit keyed hash of (global seed, entry id, variant), so
outputs are byte-identical regardless of worker count or scheduling.
Per-entry failures are isolated and counted, never fatal.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import EvalConfig
from .fusion import FusionConfig, FusionOutcome, assign_supervision, build_fusion_mask
from .losses import RewardWeights
from .raster import DepthMap, RgbImage, load_depth

__all__ = [
    "ManifestError",
    "ManifestEntry",
    "PipelineConfig",
    "CurationRecord",
    "derive_rng",
    "parse_manifest",
    "curate_entry",
    "run_pipeline",
    "atomic_write_bytes",
]

DEFAULT_PNG16_SCALE = 0.001  # millimeter codes to meters

STAGE_PRETRAIN = "pretrain"
STAGE_FINETUNE = "finetune"


class ManifestError(ValueError):
    """Malformed manifest line or duplicate entry id."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    depth_source: str
    rgb_orig: str
    rgb_gen: tuple[str, ...]
    depth_pseudo: str | None = None
    seed_tag: int = 0
    depth_scale: float = DEFAULT_PNG16_SCALE

    def __post_init__(self):
        if not self.id:
            raise ManifestError("entry id must be nonempty")
        if not self.rgb_gen:
            raise ManifestError(f"entry {self.id!r} lists no generated images")
        object.__setattr__(self, "rgb_gen", tuple(self.rgb_gen))


@dataclass(frozen=True)
class PipelineConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    workers: int = 1
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class CurationRecord:
    entry_id: str
    variant: int
    stage: str
    accepted: bool
    valid_fraction: float | None = None
    crop: tuple[int, int, int, int] | None = None
    mask_path: str | None = None
    gt_pixel_count: int = 0
    pseudo_pixel_count: int = 0
    mean_ssim_registered: float | None = None
    mean_ssim_direct: float | None = None
    registration_succeeded: bool | None = None
    registration_matches: int | None = None
    registration_inliers: int | None = None
    pseudo_depth_path: str | None = None

    def sort_key(self):
        return (self.entry_id, self.variant, self.stage)


def derive_rng(global_seed: int, entry_id: str, variant: int) -> np.random.Generator:
    """Per-(entry, variant) generator from a fixed 64-bit keyed hash."""
    key = f"{global_seed}\x1f{entry_id}\x1f{variant}".encode("utf-8")
    seed = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return np.random.default_rng(seed)


def parse_manifest(path) -> list[ManifestEntry]:
    """Read a JSONL manifest; unknown fields are ignored, duplicate ids rejected."""
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{line_no}: malformed JSON ({e.msg})") from e
            if not isinstance(doc, dict):
                raise ManifestError(f"{path}:{line_no}: expected a JSON object")
            try:
                entry = ManifestEntry(
                    id=str(doc["id"]),
                    depth_source=str(doc["depth_source"]),
                    rgb_orig=str(doc["rgb_orig"]),
                    rgb_gen=tuple(str(p) for p in doc["rgb_gen"]),
                    depth_pseudo=str(doc["depth_pseudo"]) if doc.get("depth_pseudo") else None,
                    seed_tag=int(doc.get("seed_tag", 0)),
                    depth_scale=float(doc.get("depth_scale", DEFAULT_PNG16_SCALE)),
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"{path}:{line_no}: {e}") from e
            if entry.id in seen:
                raise ManifestError(
                    f"{path}: duplicate id {entry.id!r} on lines {seen[entry.id]} and {line_no}")
            seen[entry.id] = line_no
            entries.append(entry)
    return entries


def atomic_write_bytes(path: Path, data: bytes):
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_rgb(path) -> RgbImage:
    with Image.open(path) as img:
        return RgbImage(np.asarray(img.convert("RGB")))


def _load_entry_depth(entry: ManifestEntry) -> DepthMap:
    fmt = "png16" if entry.depth_source.lower().endswith(".png") else "pfm"
    return load_depth(entry.depth_source, fmt=fmt, scale=entry.depth_scale)


def _mask_png_bytes(outcome: FusionOutcome) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(outcome.mask.bits * np.uint8(255), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def curate_entry(entry: ManifestEntry, cfg: PipelineConfig) -> list[CurationRecord]:
    """Run mask fusion for every generated variant of one manifest entry.

    Each variant yields a finetune record (the fusion verdict; accepted
    variants also get a written mask PNG and supervision counts) and a
    pretrain record referencing the teacher pseudo-label when present.
    """
    orig = _load_rgb(entry.rgb_orig)
    depth_gt = _load_entry_depth(entry)
    records: list[CurationRecord] = []
    for variant, gen_path in enumerate(entry.rgb_gen):
        gen = _load_rgb(gen_path)
        rng = derive_rng(cfg.seed, entry.id, variant)
        outcome = build_fusion_mask(gen, orig, depth_gt, cfg.fusion, rng)

        mask_path = None
        gt_count = 0
        pseudo_count = 0
        if outcome.accepted:
            counts = assign_supervision(outcome)
            gt_count = counts.gt_pixel_count
            pseudo_count = counts.pseudo_pixel_count
            if cfg.output_dir is not None:
                rel = f"masks/{entry.id}_{variant}.png"
                atomic_write_bytes(Path(cfg.output_dir) / rel, _mask_png_bytes(outcome))
                mask_path = rel

        crop = outcome.crop
        records.append(CurationRecord(
            entry_id=entry.id,
            variant=variant,
            stage=STAGE_FINETUNE,
            accepted=outcome.accepted,
            valid_fraction=outcome.valid_fraction,
            crop=(crop.x, crop.y, crop.w, crop.h) if crop is not None else None,
            mask_path=mask_path,
            gt_pixel_count=gt_count,
            pseudo_pixel_count=pseudo_count,
            mean_ssim_registered=outcome.mean_ssim_registered,
            mean_ssim_direct=outcome.mean_ssim_direct,
            registration_succeeded=outcome.registration.succeeded,
            registration_matches=outcome.registration.match_count,
            registration_inliers=outcome.registration.inlier_count,
        ))
        records.append(CurationRecord(
            entry_id=entry.id,
            variant=variant,
            stage=STAGE_PRETRAIN,
            accepted=True,
            gt_pixel_count=0,
            pseudo_pixel_count=gen.width * gen.height,
            pseudo_depth_path=entry.depth_pseudo,
        ))
    return records


def _curate_worker(args):
    entry, cfg = args
    try:
        return entry.id, curate_entry(entry, cfg), None
    except Exception as e:  # noqa: BLE001 - per-entry crash isolation
        return entry.id, [], f"{type(e).__name__}: {e}"


def run_pipeline(entries: list[ManifestEntry], cfg: PipelineConfig) -> dict:
    """Curate all entries with a worker pool and write sorted outputs.

    Writes records.jsonl and summary.json under cfg.output_dir (when set),
    both via atomic rename.  Returns the summary dict.
    """
    jobs = [(entry, cfg) for entry in entries]
    if cfg.workers == 1:
        results = [_curate_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_curate_worker, jobs))

    records: list[CurationRecord] = []
    failed: list[dict] = []
    accepted_entries = 0
    rejected_entries = 0
    fractions: list[float] = []
    for entry_id, entry_records, error in sorted(results, key=lambda r: r[0]):
        if error is not None:
            failed.append({"id": entry_id, "error": error})
            continue
        records.extend(entry_records)
        finetune = [r for r in entry_records if r.stage == STAGE_FINETUNE]
        fractions.extend(r.valid_fraction for r in finetune if r.valid_fraction is not None)
        if any(r.accepted for r in finetune):
            accepted_entries += 1
        else:
            rejected_entries += 1

    records.sort(key=CurationRecord.sort_key)
    summary = {
        "processed": len(entries),
        "accepted": accepted_entries,
        "rejected": rejected_entries,
        "failed": len(failed),
        "failed_entries": failed,
        "mean_valid_fraction": float(np.mean(fractions)) if fractions else 0.0,
        "config": _config_dict(cfg),
    }

    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        lines = "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records)
        atomic_write_bytes(out / "records.jsonl", lines.encode("utf-8"))
        atomic_write_bytes(out / "summary.json",
                           (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return summary


def _config_dict(cfg: PipelineConfig) -> dict:
    from . import __version__

    return {
        "fusion": asdict(cfg.fusion),
        "eval": asdict(cfg.eval),
        "reward": asdict(cfg.reward),
        "workers": cfg.workers,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "version": __version__,
    }
