"""Weighted reconstruction loss and conditional WGAN-GP objectives."""
from __future__ import annotations

from dataclasses import dataclass

import torch

DEFAULT_EPS = 1e-7
REAL_FAKE = "real_fake"
INPUT_FAKE = "input_fake"


class CapabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    beta: float = 0.05
    lam: float = 10.0
    gp_interpolant: str = REAL_FAKE

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        # beta = 1 is the autoencoder-only ablation, beta = 0 pure adversarial
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.gp_interpolant not in (REAL_FAKE, INPUT_FAKE):
            raise ValueError(f"unknown gp_interpolant {self.gp_interpolant!r}")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l_ae(pred, target, alpha, eps=DEFAULT_EPS):
    """Mean of -alpha*y*log(y') - (1-alpha)*(1-y)*log(1-y') over all voxels."""
    _same_shape(pred, target)
    q = pred.clamp(eps, 1.0 - eps)
    y = target.to(q.dtype)
    return -(alpha * y * torch.log(q) + (1.0 - alpha) * (1.0 - y) * torch.log(1.0 - q)).mean()


def bce(pred, target, eps=DEFAULT_EPS):
    _same_shape(pred, target)
    q = pred.clamp(eps, 1.0 - eps)
    y = target.to(q.dtype)
    return -(y * torch.log(q) + (1.0 - y) * torch.log(1.0 - q)).mean()


def _nonempty(latents):
    if latents.numel() == 0 or latents.shape[0] == 0:
        raise ValueError("empty batch")


def l_gan_g(fake_latents):
    _nonempty(fake_latents)
    return -fake_latents.mean()


def l_gan_d(real_latents, fake_latents, gp_value, lam):
    _nonempty(real_latents)
    _nonempty(fake_latents)
    if real_latents.shape[0] != fake_latents.shape[0]:
        raise ValueError("real and fake batches differ in size")
    return fake_latents.mean() - real_latents.mean() + lam * gp_value


def l_g(l_ae_value, l_gan_g_value, beta):
    return beta * l_ae_value + (1.0 - beta) * l_gan_g_value


def interpolate(endpoint_a, fake, epsilon):
    """eps * a + (1 - eps) * fake, one eps per sample."""
    _same_shape(endpoint_a, fake)
    e = epsilon.to(fake.dtype).reshape(-1, *([1] * (fake.dim() - 1)))
    return e * endpoint_a + (1.0 - e) * fake


def gradient_penalty(disc, condition, endpoint_a, fake, epsilon, create_graph=True):
    """Mean over samples of (||grad_yhat mean_latent D(yhat | x)||_2 - 1)^2.

    ``create_graph=True`` keeps the second-order path so the result can be
    differentiated with respect to the critic's parameters.
    """
    y_hat = interpolate(endpoint_a.detach(), fake.detach(), epsilon).requires_grad_(True)
    out = disc(condition, y_hat)
    if not out.requires_grad:
        raise CapabilityError("critic output does not depend differentiably on its candidate input")
    # samples are independent, so one backward pass yields every per-sample gradient
    score = out.mean(dim=1).sum()
    (grad,) = torch.autograd.grad(score, y_hat, create_graph=create_graph)
    norms = grad.reshape(grad.shape[0], -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def gradient_penalty_fd(disc, condition, endpoint_a, fake, epsilon, h=1e-3):
    """Gradient penalty whose parameter gradient avoids double backprop.

    The returned value equals the penalty; its parameter gradient uses
    d||g||/dtheta = d/dtheta <u, g> with u = g/||g|| frozen, and <u, g> is the
    directional derivative of D along u, taken by central differences of step
    ``h``.  Accuracy is O(h^2) in the parameter gradient.
    """
    y_hat = interpolate(endpoint_a.detach(), fake.detach(), epsilon).requires_grad_(True)
    out = disc(condition, y_hat)
    if not out.requires_grad:
        raise CapabilityError("critic output does not depend differentiably on its candidate input")
    (grad,) = torch.autograd.grad(out.mean(dim=1).sum(), y_hat)
    g = grad.reshape(grad.shape[0], -1)
    norms = g.norm(2, dim=1)
    u = (g / norms.clamp_min(1e-12)[:, None]).reshape(grad.shape)
    base = y_hat.detach()
    plus = disc(condition, base + h * u).mean(dim=1)
    minus = disc(condition, base - h * u).mean(dim=1)
    directional = (plus - minus) / (2.0 * h)
    coef = 2.0 * (norms - 1.0)
    value = ((norms - 1.0) ** 2).mean()
    surrogate = (coef * (directional - directional.detach())).mean()
    return value + surrogate
