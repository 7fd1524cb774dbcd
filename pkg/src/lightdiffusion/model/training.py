"""Losses, optimisation loops and inference for the diffusion, albedo and tint networks."""

from __future__ import annotations

import copy
import csv
import dataclasses
import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import (
    DegenerateTintError,
    TrainingDivergedError,
    ValidationError,
)
from ..kvconfig import dump_kv, parse_kv
from .nets import build_net
from .params import ModelParams

TINT_CROP = 32


@dataclass
class TrainingExample:
    """One supervised sample; images are (H, W, C) float arrays."""

    image: np.ndarray
    alpha: np.ndarray
    specular: np.ndarray
    shadow: np.ndarray
    diffuse: np.ndarray
    target: np.ndarray
    t: float
    tinted_albedo: np.ndarray
    albedo: np.ndarray
    tint: np.ndarray
    skin_mask: np.ndarray
    augmented: bool = False

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError(f"t must be in [0, 1], got {self.t}")
        shape = self.alpha.shape
        for name in ("image", "diffuse", "target", "tinted_albedo", "albedo"):
            if getattr(self, name).shape[:2] != shape:
                raise ValidationError(f"{name} is not aligned with alpha")


@dataclass
class TrainingArrays:
    """Stacked NCHW float32 tensors for a list of examples."""

    image: torch.Tensor
    alpha: torch.Tensor
    specshadow: torch.Tensor
    diffuse: torch.Tensor
    target: torch.Tensor
    t: torch.Tensor
    tinted_albedo: torch.Tensor
    skin: torch.Tensor
    tint: torch.Tensor
    augmented: torch.Tensor

    def __len__(self):
        return self.image.shape[0]

    @classmethod
    def from_examples(cls, examples) -> "TrainingArrays":
        if not examples:
            raise ValidationError("dataset is empty")

        def stack(get):
            return torch.from_numpy(np.stack([np.asarray(get(e), dtype=np.float32) for e in examples]))

        def chw(get):
            x = stack(get)
            return x.permute(0, 3, 1, 2).contiguous() if x.ndim == 4 else x[:, None]

        return cls(
            image=chw(lambda e: e.image),
            alpha=chw(lambda e: e.alpha),
            specshadow=chw(lambda e: np.stack([e.specular, e.shadow], axis=-1)),
            diffuse=chw(lambda e: e.diffuse),
            target=chw(lambda e: e.target),
            t=stack(lambda e: e.t),
            tinted_albedo=chw(lambda e: e.tinted_albedo),
            skin=chw(lambda e: e.skin_mask),
            tint=stack(lambda e: e.tint),
            augmented=torch.tensor([bool(e.augmented) for e in examples]),
        )

    def subset(self, index) -> "TrainingArrays":
        index = torch.as_tensor(index, dtype=torch.long)
        return TrainingArrays(**{f.name: getattr(self, f.name)[index] for f in fields(self)})


@dataclass
class TrainConfig:
    """Optimisation settings, readable from a ``key = value`` text file.

    Keys match the field names; ``#`` starts a comment.  Step counts of 0
    skip a stage.
    """

    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "constant"
    batch_size: int = 8
    specshadow_steps: int = 1000
    diffusion_steps: int = 2000
    t0_fraction: float = 0.5
    end_to_end: bool = False
    albedo_steps: int = 0
    albedo_iterations: int = 3
    tint_steps: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError("lr_schedule must be 'constant' or 'cosine'")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.albedo_iterations < 1:
            raise ValidationError("batch_size, learning_rate and albedo_iterations must be positive")

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return parse_kv(cls, text)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        return dump_kv(self)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def loss(pred: torch.Tensor, target: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Alpha-weighted mean absolute error, averaged over channels."""
    if pred.shape != target.shape:
        raise ValidationError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    w = alpha.expand_as(pred)
    denom = alpha.sum() * pred.shape[1]
    if not denom > 0:
        raise ValidationError("alpha sums to zero")
    return (w * (pred - target).abs()).sum() / denom


# ---------------------------------------------------------------------------
# Inference


def _check_t(t):
    t_arr = torch.as_tensor(t, dtype=torch.float64)
    if torch.any(t_arr < 0) or torch.any(t_arr > 1) or not torch.all(torch.isfinite(t_arr)):
        raise ValidationError("t must lie in [0, 1]")


def forward_specshadow(params: ModelParams, x: torch.Tensor, net: str = "specshadow") -> torch.Tensor:
    """(N, 4, H, W) image+alpha -> (N, 2, H, W) specular and shadow maps."""
    return params[net](x)


def diffusion_input(x6: torch.Tensor, t) -> torch.Tensor:
    """Append ``t`` as a constant seventh channel."""
    _check_t(t)
    n, _, h, w = x6.shape
    t = torch.as_tensor(t, dtype=x6.dtype).reshape(-1, 1, 1, 1).expand(n, 1, h, w)
    return torch.cat([x6, t], dim=1)


def forward_diffusion(params: ModelParams, x6: torch.Tensor, t, net: str = "diffusion") -> torch.Tensor:
    """(N, 6, H, W) image+alpha+S+D and scalar/per-sample ``t`` -> (N, 3, H, W)."""
    if x6.ndim != 4 or x6.shape[1] != 6:
        raise ValidationError(f"expected (N, 6, H, W), got {tuple(x6.shape)}")
    return params[net](diffusion_input(x6, t))


def predict_diffused(params: ModelParams, image: torch.Tensor, alpha: torch.Tensor, t) -> torch.Tensor:
    """Full cascade: g for the maps, then h at diffusion level ``t``."""
    x4 = torch.cat([image, alpha], dim=1)
    sd = forward_specshadow(params, x4)
    return forward_diffusion(params, torch.cat([x4, sd], dim=1), t)


def iterated_albedo(params: ModelParams, image: torch.Tensor, alpha: torch.Tensor,
                    iterations: int = 3, prefix: str | None = None) -> torch.Tensor:
    """Tinted albedo by running the cascade at ``t = 0`` repeatedly on its own output.

    Uses the ``albedo_*`` networks when present (or ``prefix`` explicitly).
    """
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if prefix is None:
        prefix = "albedo_" if "albedo_diffusion" in params else ""
    x = image
    for _ in range(iterations):
        x4 = torch.cat([x, alpha], dim=1)
        sd = forward_specshadow(params, x4, net=prefix + "specshadow")
        x = forward_diffusion(params, torch.cat([x4, sd], dim=1), 0.0, net=prefix + "diffusion") * alpha
    return x


def face_crop(image: torch.Tensor, skin: torch.Tensor, size: int = TINT_CROP) -> torch.Tensor:
    """Skin-masked crop of the skin bounding box, resized to ``size``; (4, size, size)."""
    rows = torch.nonzero(skin[0].amax(dim=1) > 0.5).flatten()
    cols = torch.nonzero(skin[0].amax(dim=0) > 0.5).flatten()
    if rows.numel() == 0:
        raise ValidationError("empty skin region")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    m = skin[:, r0:r1, c0:c1]
    crop = torch.cat([image[:, r0:r1, c0:c1] * m, m], dim=0)
    return F.interpolate(crop[None], size=(size, size), mode="bilinear", align_corners=False)[0]


def estimate_tint(params: ModelParams, crops: torch.Tensor) -> torch.Tensor:
    """Positive RGB tint (unit luminance up to training error) for (N, 4, s, s) crops."""
    if crops.ndim == 3:
        crops = crops[None]
    return params["tint"](crops)


def untint(tinted_albedo, tint) -> np.ndarray:
    """Divide the tint out channelwise and clamp to [0, 4]."""
    tint = np.asarray(tint, dtype=np.float64).reshape(3)
    if np.any(tint <= 1e-3):
        raise DegenerateTintError(f"tint {tint} has a component <= 1e-3")
    return np.clip(np.asarray(tinted_albedo, dtype=np.float64) / tint, 0.0, 4.0)


def chromaticity_angle(a, b) -> np.ndarray:
    """Angle in degrees between RGB vectors (last axis)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos = (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# Optimisation


class _Batches:
    """Deterministic shuffled mini-batches, reshuffled every epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.bs, self.rng = n, min(batch_size, n), rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> torch.Tensor:
        if self.pos + self.bs > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + self.bs]
        self.pos += self.bs
        return torch.from_numpy(np.sort(idx))


def _optimizer(parameters, config: TrainConfig, steps: int):
    opt = torch.optim.Adam(parameters, lr=config.learning_rate,
                           betas=(config.beta1, config.beta2), eps=config.adam_eps)
    if config.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda s: 0.5 * (1.0 + math.cos(math.pi * min(s, steps) / max(steps, 1)))
        )
    else:
        sched = None
    return opt, sched


def _run(stage, steps, parameters, step_loss, config, history):
    opt, sched = _optimizer(parameters, config, steps)
    for step in range(steps):
        value = step_loss(step)
        if not torch.isfinite(value):
            raise TrainingDivergedError(f"{stage}: loss became {value.item()} at step {step}")
        opt.zero_grad(set_to_none=True)
        value.backward()
        opt.step()
        if sched is not None:
            sched.step()
        history.append((stage, step, float(value.item())))


def _setup(config: TrainConfig):
    torch.set_num_threads(config.threads)
    torch.use_deterministic_algorithms(True)


def train_specshadow(data: TrainingArrays, config: TrainConfig, history: list):
    g = build_net("specshadow", seed=config.seed)
    batches = _Batches(len(data), config.batch_size, np.random.default_rng([config.seed, 1]))

    def step_loss(_):
        b = batches.next()
        pred = g.unclamped(torch.cat([data.image[b], data.alpha[b]], dim=1))
        return loss(pred, data.specshadow[b], data.alpha[b])

    _run("specshadow", config.specshadow_steps, g.parameters(), step_loss, config, history)
    return g.eval()


def _predicted_maps(g, data: TrainingArrays, chunk: int = 32) -> torch.Tensor:
    out = []
    with torch.no_grad():
        for s in range(0, len(data), chunk):
            out.append(g(torch.cat([data.image[s:s + chunk], data.alpha[s:s + chunk]], dim=1)))
    return torch.cat(out)


def train_diffusion(g, data: TrainingArrays, config: TrainConfig, history: list):
    """Second stage: h on (I, alpha, g's maps, t); ``end_to_end`` also updates g."""
    h = build_net("diffusion", seed=config.seed + 1)
    rng = np.random.default_rng([config.seed, 2])
    batches = _Batches(len(data), config.batch_size, rng)
    maps = None if config.end_to_end else _predicted_maps(g, data)

    def step_loss(_):
        b = batches.next()
        use_zero = torch.from_numpy(rng.uniform(size=len(b)) < config.t0_fraction)
        t = torch.where(use_zero, torch.zeros(()), data.t[b])
        target = torch.where(use_zero[:, None, None, None], data.diffuse[b], data.target[b])
        x4 = torch.cat([data.image[b], data.alpha[b]], dim=1)
        sd = g(x4) if maps is None else maps[b]
        pred = h(diffusion_input(torch.cat([x4, sd], dim=1), t))
        return loss(pred, target, data.alpha[b])

    params = list(h.parameters()) + (list(g.parameters()) if config.end_to_end else [])
    _run("diffusion", config.diffusion_steps, params, step_loss, config, history)
    return h.eval()


def train_albedo(params: ModelParams, data: TrainingArrays, config: TrainConfig,
                 history: list, iterations: int | None = None) -> ModelParams:
    """Fine-tune copies of g and h end to end through the iterated cascade."""
    iterations = config.albedo_iterations if iterations is None else iterations
    nets = dict(params.networks)
    nets["albedo_specshadow"] = copy.deepcopy(params["specshadow"]).train()
    nets["albedo_diffusion"] = copy.deepcopy(params["diffusion"]).train()
    out = ModelParams(nets)
    batches = _Batches(len(data), config.batch_size, np.random.default_rng([config.seed, 3]))

    def step_loss(_):
        b = batches.next()
        pred = iterated_albedo(out, data.image[b], data.alpha[b], iterations, prefix="albedo_")
        return loss(pred, data.tinted_albedo[b], data.alpha[b])

    trainable = list(nets["albedo_specshadow"].parameters()) + list(nets["albedo_diffusion"].parameters())
    _run(f"albedo{iterations}", config.albedo_steps, trainable, step_loss, config, history)
    nets["albedo_specshadow"].eval()
    nets["albedo_diffusion"].eval()
    return out


def tint_crops(images: torch.Tensor, skin: torch.Tensor) -> torch.Tensor:
    return torch.stack([face_crop(images[i], skin[i]) for i in range(images.shape[0])])


def train_tint(data: TrainingArrays, config: TrainConfig, history: list):
    """Regress the unit-luminance environment tint from skin crops of the tinted albedo."""
    net = build_net("tint", seed=config.seed + 2)
    crops = tint_crops(data.tinted_albedo, data.skin)
    log_tint = torch.log(data.tint)
    batches = _Batches(len(data), config.batch_size, np.random.default_rng([config.seed, 4]))

    def step_loss(_):
        b = batches.next()
        return (torch.log(net(crops[b])) - log_tint[b]).abs().mean()

    _run("tint", config.tint_steps, net.parameters(), step_loss, config, history)
    return net.eval()


def train(data, config: TrainConfig):
    """Train every stage enabled in ``config``; returns ``(ModelParams, history)``.

    ``data`` is a TrainingArrays or a sequence of TrainingExample.
    History rows are ``(stage, step, loss)``.
    """
    if not isinstance(data, TrainingArrays):
        data = TrainingArrays.from_examples(list(data))
    _setup(config)
    history: list = []
    g = train_specshadow(data, config, history)
    h = train_diffusion(g, data, config, history)
    params = ModelParams({"specshadow": g, "diffusion": h})
    if config.albedo_steps > 0:
        params = train_albedo(params, data, config, history)
    if config.tint_steps > 0:
        params.networks["tint"] = train_tint(data, config, history)
    return params, history


def write_history(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss", "stage"])
        for i, (stage, _, value) in enumerate(history):
            w.writerow([i, repr(value), stage])
