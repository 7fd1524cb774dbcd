"""Supervised dataset generation and loading.

Every example is sampled from its own seed stream (scene, lighting,
augmentation and diffusion level are drawn independently, so changing the
augmentation probability leaves scenes and lighting untouched).  The sampled
parameters go into the manifest; buffers are then rendered from those
parameters alone, so any record can be regenerated bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import hdrio
from .envmap import (
    ProceduralEnvSpec,
    diffuse_convolve,
    dominant_light_direction,
    downsample,
    exponent_for_gini,
    gen_procedural_env,
    gini,
    luminance,
    mean_radiance,
    random_env_spec,
)
from .errors import ValidationError
from .kvconfig import dump_kv, parse_kv
from .maps import compute_spec_shadow
from .metrics import MetricsReport, metrics
from .model.training import TrainingArrays, TrainingExample, iterated_albedo, predict_diffused
from .renderer import (
    INTEGRATION_HEIGHT,
    SceneSpec,
    build_scene,
    random_scene_spec,
    render_diffused,
    render_env,
)
from .shadowaug import (
    SILHOUETTE_KINDS,
    apply_external_shadow,
    project_shadow_mask,
    sample_silhouette,
    subsurface_tint,
)

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = {"train": 0, "eval": 1}
BUFFERS = ("image", "alpha", "specular", "shadow", "diffuse", "target",
           "tinted_albedo", "albedo", "normals")


@dataclass
class DatasetConfig:
    """Dataset size and rendering settings (``key = value`` file format)."""

    train_count: int = 400
    eval_count: int = 50
    resolution: int = 64
    env_height: int = 32
    integration_height: int = INTEGRATION_HEIGHT
    exposure: float = 0.3
    aug_prob: float = 0.5
    tint_prob: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.train_count < 0 or self.eval_count < 0 or self.train_count + self.eval_count < 1:
            raise ValidationError("need at least one example")
        if self.resolution < 8 or self.resolution % 8:
            raise ValidationError("resolution must be a positive multiple of 8")
        if not (0 <= self.aug_prob <= 1 and 0 <= self.tint_prob <= 1):
            raise ValidationError("probabilities must be in [0, 1]")
        if self.exposure <= 0:
            raise ValidationError("exposure must be positive")

    @classmethod
    def from_text(cls, text: str) -> "DatasetConfig":
        return parse_kv(cls, text)

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        return dump_kv(self)


def _sub_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 31 - 1))


def _streams(seed: int, split: str, index: int):
    ss = np.random.SeedSequence([int(seed), SPLITS[split], int(index)])
    return [np.random.default_rng(c) for c in ss.spawn(4)]


def _env_ginis(env16):
    g_s = gini(env16)
    g_d = gini(diffuse_convolve(env16, 1.0, out_height=env16.height))
    return g_s, g_d


def sample_record(config: DatasetConfig, seed: int, split: str, index: int) -> dict:
    """Draw every parameter of one example (no image buffers)."""
    scene_rng, env_rng, aug_rng, t_rng = _streams(seed, split, index)
    scene_spec = random_scene_spec(scene_rng)
    scene_seed = _sub_seed(scene_rng)
    scene = build_scene(scene_spec, scene_seed)
    res = (config.resolution, config.resolution)

    for attempt in range(100):
        env_spec = random_env_spec(env_rng, height=config.env_height)
        env_seed = _sub_seed(env_rng)
        env = gen_procedural_env(env_spec, env_seed)
        env16 = downsample(env, config.integration_height)
        g_s, g_d = _env_ginis(env16)
        if g_s > g_d + 1e-6:
            break
        log.info("example %s/%d: degenerate lighting (attempt %d), resampling", split, index, attempt)
    else:
        raise ValidationError("could not sample non-degenerate lighting")

    img = render_env(scene, env, res, config.integration_height)
    fg = img.alpha > 0
    level = float(luminance(img.image.rgb[fg]).mean())
    scale = config.exposure / level if level > 0 else 1.0

    t = float(t_rng.uniform())
    n = exponent_for_gini(env16, g_d + t * (g_s - g_d))

    aug = None
    if aug_rng.uniform() < config.aug_prob:
        aug = {
            "silhouette": str(aug_rng.choice(SILHOUETTE_KINDS)),
            "silhouette_seed": _sub_seed(aug_rng),
            "gini": g_s,
            "light_dir": [float(v) for v in dominant_light_direction(env)],
            "subsurface_tint": bool(aug_rng.uniform() < config.tint_prob),
        }
    return {
        "id": f"{split}-{index:05d}",
        "split": split,
        "scene_spec": scene_spec.to_dict(),
        "scene_seed": scene_seed,
        "env_spec": env_spec.to_dict(),
        "env_seed": env_seed,
        "env_scale": scale,
        "gini_source": g_s,
        "gini_diffuse": g_d,
        "t": t,
        "n": None if math.isinf(n) else n,
        "augmentation": aug,
    }


def render_record(record: dict, config: DatasetConfig) -> tuple[TrainingExample, np.ndarray]:
    """Render all buffers of a record from its stored parameters.

    Returns the example and the (H, W, 3) normal buffer.
    """
    scene = build_scene(SceneSpec.from_dict(record["scene_spec"]), record["scene_seed"])
    env = gen_procedural_env(ProceduralEnvSpec.from_dict(record["env_spec"]), record["env_seed"])
    env = env.scaled(record["env_scale"])
    env16 = downsample(env, config.integration_height)
    res = (config.resolution, config.resolution)
    ih = config.integration_height

    bundle = render_env(scene, env16, res, ih)
    alpha = bundle.alpha
    diffuse = render_diffused(scene, env16, 1.0, res, ih)
    n = math.inf if record["n"] is None else record["n"]
    target = render_diffused(scene, env16, n, res, ih)

    image = bundle.image
    aug = record["augmentation"]
    if aug is not None:
        sil = sample_silhouette(aug["silhouette"], aug["silhouette_seed"])
        mask = project_shadow_mask(scene, sil, np.asarray(aug["light_dir"]), res)
        image, soft = apply_external_shadow(bundle, scene, env16, mask, aug["gini"], return_mask=True)
        if aug["subsurface_tint"]:
            image = subsurface_tint(image, soft, bundle.skin_mask)

    pair = compute_spec_shadow(image, diffuse, alpha)
    avg = mean_radiance(env16)
    tint = avg / luminance(avg)
    fg = (alpha > 0)[..., None]
    return TrainingExample(
        image=image.rgb,
        alpha=alpha,
        specular=pair.specular,
        shadow=pair.shadow,
        diffuse=diffuse.rgb,
        target=target.rgb,
        t=record["t"],
        tinted_albedo=bundle.albedo_gt.rgb * avg * fg,
        albedo=bundle.albedo_gt.rgb,
        tint=tint,
        skin_mask=bundle.skin_mask,
        augmented=aug is not None,
    ), bundle.normals


def _write_example(ex: TrainingExample, normals, directory: Path) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "image": ex.image, "alpha": ex.alpha, "specular": ex.specular, "shadow": ex.shadow,
        "diffuse": ex.diffuse, "target": ex.target, "tinted_albedo": ex.tinted_albedo,
        "albedo": ex.albedo, "normals": normals,
    }
    files = {}
    for name, arr in arrays.items():
        hdrio.write_pfm(directory / f"{name}.pfm", arr)
        files[name] = f"{directory.name}/{name}.pfm"
    hdrio.write_png(directory / "skin_mask.png", ex.skin_mask)
    files["skin_mask"] = f"{directory.name}/skin_mask.png"
    hdrio.write_png(directory / "preview.png", np.concatenate([ex.image, ex.target, ex.diffuse], axis=1))
    files["preview"] = f"{directory.name}/preview.png"
    return files


def _build_one(args):
    config, seed, split, index, out_dir = args
    record = sample_record(config, seed, split, index)
    ex, normals = render_record(record, config)
    record["tint"] = [float(v) for v in ex.tint]
    record["files"] = _write_example(ex, normals, Path(out_dir) / record["id"])
    return record


def generate_dataset(config: DatasetConfig, seed: int, out_dir) -> dict:
    """Render the train and eval splits into ``out_dir`` and write ``manifest.json``.

    Eval examples use a separate seed stream, so both scenes and lighting are
    held out.  Returns the manifest dictionary.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(config, seed, "train", i, str(out_dir)) for i in range(config.train_count)]
    jobs += [(config, seed, "eval", i, str(out_dir)) for i in range(config.eval_count)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_build_one, jobs))
    else:
        records = [_build_one(j) for j in jobs]
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": int(seed),
        "config": asdict(config),
        "records": records,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    manifest["_root"] = str(out_dir)
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValidationError(f"{path}: unsupported manifest version")
    ids = [r["id"] for r in manifest["records"]]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate example ids")
    manifest["_root"] = str(path.parent)
    return manifest


def manifest_config(manifest: dict) -> DatasetConfig:
    return DatasetConfig(**manifest["config"])


def load_example(manifest: dict, record: dict) -> TrainingExample:
    root = Path(manifest["_root"])
    f = record["files"]

    def pfm(name):
        return hdrio.read_pfm(root / f[name]).astype(np.float64)

    return TrainingExample(
        image=pfm("image"),
        alpha=pfm("alpha"),
        specular=pfm("specular"),
        shadow=pfm("shadow"),
        diffuse=pfm("diffuse"),
        target=pfm("target"),
        t=float(np.float32(record["t"])),
        tinted_albedo=pfm("tinted_albedo"),
        albedo=pfm("albedo"),
        tint=np.asarray(record["tint"]),
        skin_mask=hdrio.read_png(root / f["skin_mask"]) > 127,
        augmented=record["augmentation"] is not None,
    )


def load_split(manifest: dict, split: str) -> tuple[list, list]:
    """``(records, examples)`` of one split, in manifest order."""
    recs = [r for r in manifest["records"] if r["split"] == split]
    return recs, [load_example(manifest, r) for r in recs]


def _predict_batches(fn, examples, chunk=16):
    out = []
    with torch.no_grad():
        for s in range(0, len(examples), chunk):
            arr = TrainingArrays.from_examples(examples[s:s + chunk])
            out.append(fn(arr).permute(0, 2, 3, 1).double().numpy())
    return np.concatenate(out)


def evaluate(params, manifest: dict, split: str = "eval", t: float | None = 0.0,
             only_augmented: bool = False) -> MetricsReport:
    """Score the cascade against rendered ground truth.

    ``t = 0`` compares with the fully diffuse render.  ``t = None`` runs each
    example at its own sampled level and compares with its stored target;
    other fixed levels have no stored reference and are rejected.
    ``params=None`` scores the identity (the unmodified input).
    """
    if t is not None and t != 0:
        raise ValidationError("ground truth exists only at t = 0 or at each example's sampled t")
    recs, exs = load_split(manifest, split)
    if only_augmented:
        keep = [i for i, e in enumerate(exs) if e.augmented]
        recs, exs = [recs[i] for i in keep], [exs[i] for i in keep]
    if not exs:
        raise ValidationError(f"no {split} examples to evaluate")
    if params is None:
        preds = np.stack([e.image for e in exs])
    else:
        preds = _predict_batches(
            lambda a: predict_diffused(params, a.image, a.alpha, a.t if t is None else t), exs)
    report = MetricsReport()
    for rec, ex, pred in zip(recs, exs, preds):
        gt = ex.target if t is None else ex.diffuse
        report.add(rec["id"], metrics(pred * ex.alpha[..., None], gt, ex.alpha))
    return report


def evaluate_albedo(params, manifest: dict, iterations: int, split: str = "eval",
                    prefix: str | None = None) -> MetricsReport:
    """Tinted-albedo error of the ``iterations``-fold cascade."""
    recs, exs = load_split(manifest, split)
    preds = _predict_batches(
        lambda a: iterated_albedo(params, a.image, a.alpha, iterations, prefix=prefix), exs)
    report = MetricsReport()
    for rec, ex, pred in zip(recs, exs, preds):
        report.add(rec["id"], metrics(pred, ex.tinted_albedo, ex.alpha))
    return report
