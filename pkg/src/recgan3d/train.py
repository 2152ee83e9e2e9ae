"""Alternating critic/generator optimization, logging and checkpoints."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .dataset import load_all, shuffled_epoch
from .losses import LossWeights
from .nnarch import ModelSpec, SpecError, build_discriminator, build_generator

CHECKPOINT_FORMAT = "recgan3d-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("step", "epoch", "L_d", "L_ae", "L_gan_g", "L_g", "lr", "wall_time")
GP_AUTOGRAD = "autograd"
GP_FINITE_DIFF = "finite_difference"


class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSpec:
    batch_size: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_first: float = 5e-4
    lr_later: float = 1e-4
    epochs: int = 1
    max_steps: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 1  # epochs; 0 disables periodic checkpoints
    gp_mode: str = GP_AUTOGRAD

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("lr_first", "lr_later", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gp_mode not in (GP_AUTOGRAD, GP_FINITE_DIFF):
            raise ValueError(f"unknown gp_mode {self.gp_mode!r}")

    @property
    def ae_only(self):
        return self.weights.beta == 1.0

    def lr_for_epoch(self, epoch):
        """Learning rate for a 1-based epoch number."""
        return self.lr_first if epoch <= 1 else self.lr_later

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class ModelPair:
    generator: torch.nn.Module
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer

    @property
    def spec(self):
        return self.generator.spec


def build_models(model_spec, train_spec, dtype=torch.float32):
    gen = build_generator(model_spec, dtype=dtype)
    disc = build_discriminator(model_spec, dtype=dtype)
    kw = dict(lr=train_spec.lr_first, betas=(train_spec.adam_beta1, train_spec.adam_beta2), eps=train_spec.adam_eps)
    return ModelPair(gen, disc, torch.optim.Adam(gen.parameters(), **kw), torch.optim.Adam(disc.parameters(), **kw))


def deterministic_mode(threads=1):
    """Single-threaded, deterministic kernels; needed for bitwise reproducibility."""
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _as_tensors(batch, dtype):
    x, y = batch
    return torch.as_tensor(np.asarray(x)).to(dtype), torch.as_tensor(np.asarray(y)).to(dtype)


def train_step_d(models, batch, spec, eps_rng):
    """One critic update minimizing L_d; the generator is only evaluated."""
    gen, disc = models.generator, models.discriminator
    x, y = _as_tensors(batch, next(disc.parameters()).dtype)
    with torch.no_grad():
        fake = gen(x)
    w = spec.weights
    real_lat = disc(x, y)
    fake_lat = disc(x, fake)
    endpoint = y if w.gp_interpolant == losses.REAL_FAKE else x
    eps = torch.rand(x.shape[0], generator=eps_rng, dtype=x.dtype)
    if w.lam == 0.0:
        gp = torch.zeros((), dtype=x.dtype)
    elif spec.gp_mode == GP_FINITE_DIFF:
        gp = losses.gradient_penalty_fd(disc, x, endpoint, fake, eps)
    else:
        gp = losses.gradient_penalty(disc, x, endpoint, fake, eps)
    loss = losses.l_gan_d(real_lat, fake_lat, gp, w.lam)
    models.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    models.opt_d.step()
    return float(loss.detach())


def train_step_g(models, batch, spec):
    """One generator update minimizing L_g with the critic frozen.

    Returns ``(L_g, L_ae, L_gan_g)``; ``L_gan_g`` is None in AE-only mode.
    """
    gen, disc = models.generator, models.discriminator
    x, y = _as_tensors(batch, next(gen.parameters()).dtype)
    w = spec.weights
    fake = gen(x)
    ae = losses.l_ae(fake, y, w.alpha)
    gan = None
    if w.beta < 1.0:
        frozen = [p.requires_grad for p in disc.parameters()]
        for p in disc.parameters():
            p.requires_grad_(False)
        try:
            gan = losses.l_gan_g(disc(x, fake))
        finally:
            for p, flag in zip(disc.parameters(), frozen):
                p.requires_grad_(flag)
        total = losses.l_g(ae, gan, w.beta)
    else:
        total = ae
    models.opt_g.zero_grad(set_to_none=True)
    total.backward()
    models.opt_g.step()
    return float(total.detach()), float(ae.detach()), None if gan is None else float(gan.detach())


@dataclass
class TrainState:
    step: int = 0
    eps_rng: torch.Generator = field(default_factory=torch.Generator)

    @classmethod
    def fresh(cls, seed):
        return cls(0, torch.Generator().manual_seed(seed))


class Trainer:
    """Owns models, optimizers, RNG state and the data for one training run."""

    def __init__(self, models, train_spec, manifest, state=None, data=None):
        if len(manifest) == 0:
            raise ValueError("manifest is empty")
        if manifest.resolution != models.spec.resolution:
            raise SpecError(f"manifest resolution {manifest.resolution} != model resolution {models.spec.resolution}")
        self.models = models
        self.spec = train_spec
        self.manifest = manifest
        self.state = state or TrainState.fresh(train_spec.seed)
        self.partial, self.full = data if data is not None else load_all(manifest)
        self.log = []
        self.tags = []

    @property
    def steps_per_epoch(self):
        return math.ceil(len(self.manifest) / self.spec.batch_size)

    def position(self, step):
        """(1-based epoch, batch index within the epoch) of a 0-based step."""
        return step // self.steps_per_epoch + 1, step % self.steps_per_epoch

    def batch_indices(self, step):
        epoch, k = self.position(step)
        perm = shuffled_epoch(len(self.manifest), self.spec.seed * 100_003 + epoch)
        bs = self.spec.batch_size
        return perm[k * bs:(k + 1) * bs]

    @property
    def total_steps(self):
        n = self.spec.epochs * self.steps_per_epoch
        return n if self.spec.max_steps is None else min(n, self.spec.max_steps)

    def step(self):
        """Run one D/G alternation on the next batch and return its log record."""
        s = self.state.step
        epoch, _ = self.position(s)
        idx = self.batch_indices(s)
        batch = (self.partial[idx], self.full[idx])
        lr = self.spec.lr_for_epoch(epoch)
        _set_lr(self.models.opt_g, lr)
        _set_lr(self.models.opt_d, lr)
        t0 = time.perf_counter()
        l_d = None
        if not self.spec.ae_only:
            l_d = train_step_d(self.models, batch, self.spec, self.state.eps_rng)
            self.tags.append("D")
        l_total, l_ae, l_gan = train_step_g(self.models, batch, self.spec)
        self.tags.append("G")
        rec = {"step": s + 1, "epoch": epoch, "L_d": l_d, "L_ae": l_ae, "L_gan_g": l_gan, "L_g": l_total,
               "lr": lr, "wall_time": time.perf_counter() - t0}
        bad = [k for k in ("L_d", "L_ae", "L_gan_g", "L_g") if rec[k] is not None and not math.isfinite(rec[k])]
        if bad:
            raise TrainingDiverged(f"non-finite {', '.join(bad)} at step {s + 1}",
                                   {"step": s + 1, "epoch": epoch, "indices": idx.tolist(),
                                    "L_d": l_d, "L_g": l_total, "batch": batch})
        self.state.step = s + 1
        self.log.append(rec)
        return rec

    def run(self, out_dir=None, on_step=None):
        """Train to ``total_steps``; writes ``train_log.csv`` and per-epoch checkpoints
        under ``out_dir`` when given.  Returns the list of checkpoint paths."""
        checkpoints = []
        log_writer = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_path = out_dir / "train_log.csv"
            new = not log_path.exists()
            fh = log_path.open("a", newline="")
            log_writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            if new:
                log_writer.writeheader()
        try:
            while self.state.step < self.total_steps:
                rec = self.step()
                if log_writer is not None:
                    log_writer.writerow({k: ("" if v is None else v) for k, v in rec.items()})
                    fh.flush()
                if on_step is not None:
                    on_step(rec)
                epoch, k = self.position(self.state.step - 1)
                end_of_epoch = k == self.steps_per_epoch - 1
                last = self.state.step == self.total_steps
                every = self.spec.checkpoint_every
                if out_dir is not None and ((end_of_epoch and every and epoch % every == 0) or last):
                    path = out_dir / f"checkpoint_step{self.state.step:07d}.pt"
                    save_checkpoint(self, path)
                    checkpoints.append(path)
        finally:
            if log_writer is not None:
                fh.close()
        return checkpoints


def train(models, manifest, spec, out_dir=None, on_step=None):
    """Train ``models`` on ``manifest``; returns (checkpoint paths, log records)."""
    trainer = Trainer(models, spec, manifest)
    paths = trainer.run(out_dir, on_step)
    return paths, trainer.log


# -- checkpoints ----------------------------------------------------------------------


def _state_payload(trainer):
    m = trainer.models
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_spec": m.spec.to_dict(),
        "train_spec": trainer.spec.to_dict(),
        "dtype": str(next(m.generator.parameters()).dtype),
        "generator": m.generator.state_dict(),
        "discriminator": m.discriminator.state_dict(),
        "opt_g": m.opt_g.state_dict(),
        "opt_d": m.opt_d.state_dict(),
        "step": trainer.state.step,
        "eps_rng": trainer.state.eps_rng.get_state(),
    }


def save_checkpoint(trainer, path):
    torch.save(_state_payload(trainer), path)
    return Path(path)


def _read(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a recgan3d checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')} unsupported "
                              f"(expected {CHECKPOINT_VERSION})")
    return payload


def _dtype(name):
    return getattr(torch, name.replace("torch.", ""))


def load_checkpoint(path, manifest=None, expected_resolution=None):
    """Rebuild a resumable :class:`Trainer` (with ``manifest``) or, without one,
    return ``(generator, payload)`` for inference."""
    payload = _read(path)
    spec = ModelSpec(**payload["model_spec"])
    want = expected_resolution or (manifest.resolution if manifest is not None else None)
    if want is not None and want != spec.resolution:
        raise SpecError(f"{path}: checkpoint resolution {spec.resolution} does not match {want}")
    dtype = _dtype(payload["dtype"])
    gen = build_generator(spec, dtype=dtype)
    gen.load_state_dict(payload["generator"])
    if manifest is None:
        return gen, payload
    if "discriminator" not in payload:
        raise CheckpointError(f"{path}: inference-only export cannot resume training")
    tspec = TrainSpec.from_dict(payload["train_spec"])
    models = build_models(spec, tspec, dtype=dtype)
    models.generator.load_state_dict(payload["generator"])
    models.discriminator.load_state_dict(payload["discriminator"])
    models.opt_g.load_state_dict(payload["opt_g"])
    models.opt_d.load_state_dict(payload["opt_d"])
    rng = torch.Generator()
    rng.set_state(payload["eps_rng"])
    return Trainer(models, tspec, manifest, TrainState(payload["step"], rng))


def load_generator(path, expected_resolution=None):
    gen, payload = load_checkpoint(path, expected_resolution=expected_resolution)
    gen.eval()
    return gen, payload


def export_inference(path, out_path):
    """Copy of a checkpoint holding only the generator and its spec."""
    payload = _read(path)
    keep = {k: payload[k] for k in ("format", "version", "model_spec", "dtype", "generator", "step")}
    keep["train_spec"] = payload.get("train_spec")
    keep["inference_only"] = True
    torch.save(keep, out_path)
    return Path(out_path)

