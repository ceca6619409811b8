"""Cascaded stage-wise training and checkpoint persistence."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import torch
import torch.nn as nn

from . import __version__
from .errors import InvalidParameterError, OptimizationError
from .losses import (LossWeights, critic_loss, generator_adv_loss, perceptual_loss, reconstruction_loss,
                     semantic_objective, texture_objective)
from .models import (SEMANTIC, STRUCTURAL, TEXTURE, StagePlan, StageSpec, build_stage, make_plan,
                     plan_stage_count, stage_forward)
from .priors import (FeatureExtractor, InversionBackend, StructuralDataset, extract_features, invert,
                     jitter_dataset)
from .pyramid import ImagePyramid, RescaleSchedule, as_image, build_pyramid, make_schedule, resize

log = logging.getLogger(__name__)


@dataclass
class StructuralConfig:
    epochs: int = 10000
    lr: float = 1e-4
    batch: int = 32
    d_steps: int = 1
    g_steps: int = 1


@dataclass
class StageConfig:
    epochs: int = 2000
    lr: float = 5e-4
    batch: int = 1


@dataclass
class TrainConfig:
    structural: StructuralConfig = field(default_factory=StructuralConfig)
    stage: StageConfig = field(default_factory=StageConfig)
    d_steps: int = 3
    g_steps: int = 3
    seed: int = 0
    betas: tuple = (0.5, 0.999)

    def __post_init__(self):
        counts = [self.structural.epochs, self.structural.batch, self.structural.d_steps, self.structural.g_steps,
                  self.stage.epochs, self.stage.batch, self.d_steps, self.g_steps]
        if min(counts) < 1 or self.structural.lr <= 0 or self.stage.lr <= 0:
            raise InvalidParameterError("training counts and learning rates must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(structural=StructuralConfig(**d["structural"]), stage=StageConfig(**d["stage"]),
                   d_steps=d["d_steps"], g_steps=d["g_steps"], seed=d["seed"], betas=tuple(d["betas"]))


@dataclass
class PriorConfig:
    stddevs: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    per_stddev: int = 100
    copies: int = 150
    invert_steps: int = 500
    fine_tune: bool = True
    seed: int = 0


@dataclass
class StageResult:
    spec: StageSpec
    generator: nn.Module
    critic: nn.Module
    losses: Dict[str, List[float]]

    @property
    def final(self) -> Dict[str, float]:
        return {k: v[-1] for k, v in self.losses.items() if v}


@contextmanager
def fixed_math():
    """Force deterministic kernels for bit-reproducible runs."""
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


def stage_seed(seed: int, index: int) -> int:
    return seed * 1000 + index


def _freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _adam(module, lr, betas):
    return torch.optim.Adam([p for p in module.parameters() if p.requires_grad], lr=lr, betas=betas)


def _check_finite(record: Dict[str, float], iteration: int, last: Dict[str, float], stage: int):
    bad = [k for k, v in record.items() if not math.isfinite(v)]
    if bad:
        raise OptimizationError(f"stage {stage}: non-finite {bad} at iteration {iteration}; "
                                f"last finite losses {last}", iteration=iteration, last_finite=last)


def _append(losses, record):
    for k, v in record.items():
        losses.setdefault(k, []).append(v)


# --- model container --------------------------------------------------------

class TrainedModel:
    """Frozen generators of stages ``0..trained-1`` with the schedule and plan they were built for."""

    def __init__(self, schedule: RescaleSchedule, plan: StagePlan, pyramid: Optional[ImagePyramid] = None,
                 z_rec: Optional[torch.Tensor] = None, fingerprint: str = "", config: Optional[dict] = None):
        self.schedule = schedule
        self.plan = plan
        self.pyramid = pyramid
        self.generators = nn.ModuleList()
        self.critics = nn.ModuleList()
        self.z_rec = z_rec
        self.fingerprint = fingerprint
        self.config = config or {}
        self.records: List[Dict[str, float]] = []

    @property
    def trained(self) -> int:
        return len(self.generators)

    @property
    def complete(self) -> bool:
        return self.trained == len(self.plan.specs)

    def add_stage(self, result: StageResult):
        if result.spec.index != self.trained:
            raise InvalidParameterError(f"expected stage {self.trained}, got {result.spec.index}")
        self.generators.append(_freeze(result.generator))
        self.critics.append(_freeze(result.critic))
        self.records.append(result.final)

    def noise(self, batch: int = 1, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        spec = self.plan.specs[0]
        return torch.randn((batch, spec.noise_dim, *spec.input_size), generator=generator)

    def run(self, start: int, y_prev: Optional[torch.Tensor] = None, noise: Optional[torch.Tensor] = None,
            stop: Optional[int] = None, keep_levels: bool = False):
        """Run stages ``start..stop-1``. Stage 0 consumes ``noise``; later stages consume ``y_prev``."""
        stop = self.trained if stop is None else stop
        levels = []
        y = y_prev
        for i in range(start, stop):
            y = stage_forward(self.plan.specs[i], self.generators[i], y_prev=y, noise=noise)
            levels.append(y)
        return levels if keep_levels else y

    @torch.no_grad()
    def sample_batch(self, batch: int = 1, generator: Optional[torch.Generator] = None, stop=None):
        return self.run(0, noise=self.noise(batch, generator), stop=stop)

    @torch.no_grad()
    def reconstruct_stage(self, i: int) -> torch.Tensor:
        """Stage ``i`` applied to the real level below it (or to the fixed noise at stage 0)."""
        if i == 0:
            if self.z_rec is None:
                raise InvalidParameterError("stage 0 has no reconstruction input")
            return self.run(0, noise=self.z_rec, stop=1)
        return self.run(i, y_prev=self.pyramid[i - 1].unsqueeze(0), stop=i + 1)

    # persistence

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i in range(self.trained):
            _atomic_torch_save(directory / f"stage_{i}" / "weights",
                               {"generator": self.generators[i].state_dict(),
                                "critic": self.critics[i].state_dict()})
        extra = {"z_rec": self.z_rec}
        if self.pyramid is not None:
            extra["pyramid"] = [l.clone() for l in self.pyramid.levels]
        _atomic_torch_save(directory / "fixed", extra)
        meta = {
            "version": __version__, "torch": torch.__version__,
            "plan": self.plan.to_dict(), "schedule": self.schedule.to_dict(),
            "trained_stages": self.trained, "fingerprint": self.fingerprint,
            "records": self.records, "config": self.config,
        }
        _atomic_write_text(directory / "meta", json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "TrainedModel":
        directory = Path(directory)
        meta = json.loads((directory / "meta").read_text())
        schedule = RescaleSchedule.from_dict(meta["schedule"])
        plan = StagePlan.from_dict(meta["plan"])
        fixed = torch.load(directory / "fixed", weights_only=True)
        pyramid = ImagePyramid(fixed["pyramid"], schedule) if "pyramid" in fixed else None
        model = cls(schedule, plan, pyramid, fixed.get("z_rec"), meta["fingerprint"], meta.get("config"))
        for i in range(meta["trained_stages"]):
            state = torch.load(directory / f"stage_{i}" / "weights", weights_only=True)
            gen, critic = build_stage(plan.specs[i])
            gen.load_state_dict(state["generator"])
            critic.load_state_dict(state["critic"])
            model.generators.append(_freeze(gen))
            model.critics.append(_freeze(critic))
        model.records = meta.get("records", [])[: model.trained]
        return model


def _atomic_torch_save(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(obj, tmp)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --- stage trainers ---------------------------------------------------------

def train_structural(dataset: StructuralDataset, spec: StageSpec, cfg: TrainConfig = TrainConfig(),
                     weights: LossWeights = LossWeights()) -> StageResult:
    """WGAN-GP on the jittered dataset with the global (fully connected) critic.

    One epoch is one shuffled pass over the dataset in ``cfg.structural.batch``
    minibatches. Each minibatch gets ``d_steps`` critic and ``g_steps``
    generator updates, with fresh spatial noise for every generated batch.
    """
    if len(dataset) == 0:
        raise InvalidParameterError("structural dataset is empty")
    sc = cfg.structural
    torch.manual_seed(stage_seed(cfg.seed, spec.index))
    gen, critic = build_stage(spec)
    opt_g, opt_d = _adam(gen, sc.lr, cfg.betas), _adam(critic, sc.lr, cfg.betas)
    data = dataset.samples
    noise_shape = (spec.noise_dim, *spec.input_size)
    losses: Dict[str, List[float]] = {}
    last: Dict[str, float] = {}
    it = 0
    for epoch in range(sc.epochs):
        order = torch.randperm(len(data))
        for start in range(0, len(data), sc.batch):
            real = data[order[start:start + sc.batch]]
            b = real.shape[0]
            for _ in range(sc.d_steps):
                with torch.no_grad():
                    fake = gen(torch.randn((b, *noise_shape)))
                d_loss = critic_loss(critic, real, fake, weights)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
            for _ in range(sc.g_steps):
                fake = gen(torch.randn((b, *noise_shape)))
                g_loss = generator_adv_loss(critic, fake)
                opt_g.zero_grad()
                g_loss.backward()
                opt_g.step()
            record = {"critic": float(d_loss.detach()), "generator": float(g_loss.detach())}
            _check_finite(record, it, last, spec.index)
            _append(losses, record)
            last = record
            it += 1
        if epoch % max(1, sc.epochs // 10) == 0:
            log.info("stage 0 epoch %d critic %.4f generator %.4f", epoch, last["critic"], last["generator"])
    return StageResult(spec, gen, critic, losses)


def _conv_stage(i: int, pyramid: ImagePyramid, prev: TrainedModel, cfg: TrainConfig, weights: LossWeights,
                extractor: Optional[FeatureExtractor], kind: str) -> StageResult:
    spec = prev.plan.specs[i]
    if spec.kind != kind:
        raise InvalidParameterError(f"stage {i} is {spec.kind}, not {kind}")
    if prev.trained != i:
        raise InvalidParameterError(f"stage {i} needs stages 0..{i - 1} trained, have {prev.trained}")
    if kind == SEMANTIC and weights.lambda_p and extractor is None:
        raise InvalidParameterError("semantic stage with lambda_p > 0 needs a feature extractor")
    sc = cfg.stage
    torch.manual_seed(stage_seed(cfg.seed, i))
    gen, critic = build_stage(spec)
    opt_g, opt_d = _adam(gen, sc.lr, cfg.betas), _adam(critic, sc.lr, cfg.betas)
    target = pyramid[i].unsqueeze(0)
    real = target.expand(sc.batch, -1, -1, -1)
    if i == 0:
        if prev.z_rec is None:
            prev.z_rec = torch.randn((1, spec.noise_dim, *spec.input_size))
        rec_input = prev.z_rec
    else:
        rec_input = pyramid[i - 1].unsqueeze(0)
    target_feats = None
    if kind == SEMANTIC and weights.lambda_p:
        with torch.no_grad():
            target_feats = extract_features(target, extractor)

    def forward(x):
        return stage_forward(spec, gen, y_prev=x, noise=x)

    losses: Dict[str, List[float]] = {}
    last: Dict[str, float] = {}
    for it in range(sc.epochs):
        with torch.no_grad():
            if i == 0:
                source = torch.randn((sc.batch, spec.noise_dim, *spec.input_size))
            else:
                source = prev.sample_batch(sc.batch)
        for _ in range(cfg.d_steps):
            with torch.no_grad():
                fake = forward(source)
            d_loss = critic_loss(critic, real, fake, weights)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
        for _ in range(cfg.g_steps):
            fake = forward(source)
            adv = generator_adv_loss(critic, fake)
            rec = reconstruction_loss(forward(rec_input), target)
            if kind == SEMANTIC:
                perc = perceptual_loss(fake, target_feats, extractor) if target_feats is not None else adv.new_zeros(())
                total, terms = semantic_objective(adv, rec, perc, weights)
            else:
                total, terms = texture_objective(adv, rec, weights)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
        record = {"critic": float(d_loss.detach()), **terms}
        _check_finite(record, it, last, i)
        _append(losses, record)
        last = record
        if it % max(1, sc.epochs // 10) == 0:
            log.info("stage %d iter %d %s", i, it, " ".join(f"{k} {v:.4f}" for k, v in record.items()))
    return StageResult(spec, gen, critic, losses)


def train_semantic_stage(i: int, pyramid: ImagePyramid, prev: TrainedModel, extractor: Optional[FeatureExtractor],
                         weights: LossWeights = LossWeights(), cfg: TrainConfig = TrainConfig()) -> StageResult:
    """Non-residual stage with adversarial, reconstruction and perceptual terms.

    Fakes are ``G(up(y))`` for ``y`` drawn from the frozen lower stages with
    fresh noise; the reconstruction term maps the real level below to the
    real level; the perceptual term compares fake features with the target's.
    """
    return _conv_stage(i, pyramid, prev, cfg, weights, extractor, SEMANTIC)


def train_texture_stage(i: int, pyramid: ImagePyramid, prev: TrainedModel, weights: LossWeights = LossWeights(),
                        cfg: TrainConfig = TrainConfig()) -> StageResult:
    """Residual stage with adversarial and reconstruction terms.

    At index 0 the stage is the single-image baseline: noise in, patch
    critic, reconstruction from a fixed noise map.
    """
    return _conv_stage(i, pyramid, prev, cfg, weights, None, TEXTURE)


# --- pipeline ---------------------------------------------------------------

def fingerprint(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def prepare_prior(pyramid: ImagePyramid, backend: InversionBackend, prior: PriorConfig = PriorConfig(),
                  extractor: Optional[FeatureExtractor] = None) -> StructuralDataset:
    """Invert the top level on the backend and render the jittered stage-0 dataset."""
    target = resize(pyramid[-1], backend.native_size).unsqueeze(0)
    latent = invert(target, backend, steps=prior.invert_steps, fine_tune=prior.fine_tune, extractor=extractor)
    log.info("inversion residual %.6f", latent.residual)
    return jitter_dataset(latent, backend, prior.stddevs, prior.per_stddev, pyramid[0], prior.copies,
                          seed=prior.seed)


def train_pipeline(image, plan: Union[str, StagePlan], cfg: TrainConfig = TrainConfig(),
                   backend: Optional[InversionBackend] = None, extractor: Optional[FeatureExtractor] = None,
                   weights: LossWeights = LossWeights(), prior: PriorConfig = PriorConfig(),
                   checkpoint_dir=None, dataset: Optional[StructuralDataset] = None, k: float = 2.0,
                   base_short: int = 32, max_long: int = 256, model_kwargs: Optional[dict] = None,
                   resume: bool = True) -> TrainedModel:
    """Train every stage of ``plan`` in order, freezing each one.

    A checkpoint is written after each stage; with ``resume`` an existing
    checkpoint in ``checkpoint_dir`` is loaded and training continues from its
    first untrained stage.
    """
    x = as_image(image)
    n_stages = plan_stage_count(plan) if isinstance(plan, str) else len(plan.specs)
    schedule = make_schedule(tuple(x.shape[-2:]), N=n_stages - 1, k=k, base_short=base_short, max_long=max_long)
    if isinstance(plan, str):
        plan = make_plan(plan, schedule.sizes, **(model_kwargs or {}))
    plan.validate()
    if [tuple(s.input_size) for s in plan.specs] != list(schedule.sizes):
        raise InvalidParameterError("plan sizes do not match the schedule")
    pyramid = build_pyramid(x, schedule)
    config = {"train": cfg.to_dict(), "loss": asdict(weights), "prior": asdict(prior),
              "schedule": schedule.to_dict()}
    fp = fingerprint(config, plan.to_dict())

    model = None
    if checkpoint_dir is not None and resume and (Path(checkpoint_dir) / "meta").exists():
        model = TrainedModel.load(checkpoint_dir)
        if model.fingerprint != fp:
            raise InvalidParameterError(f"checkpoint in {checkpoint_dir} was made with a different configuration")
        log.info("resuming from stage %d", model.trained)
    if model is None:
        model = TrainedModel(schedule, plan, pyramid, fingerprint=fp, config=config)

    for spec in plan.specs[model.trained:]:
        t0 = time.time()
        if spec.kind == STRUCTURAL:
            if dataset is None:
                if backend is None:
                    raise InvalidParameterError("structural stage needs a prior backend or a dataset")
                dataset = prepare_prior(pyramid, backend, prior)
            result = train_structural(dataset, spec, cfg, weights)
        elif spec.kind == SEMANTIC:
            result = train_semantic_stage(spec.index, pyramid, model, extractor, weights, cfg)
        else:
            result = train_texture_stage(spec.index, pyramid, model, weights, cfg)
        model.add_stage(result)
        log.info("stage %d (%s) trained in %.1fs", spec.index, spec.kind, time.time() - t0)
        if checkpoint_dir is not None:
            model.save(checkpoint_dir)
    return model
