"""Generator (3-D conv encoder, FC bottleneck, up-conv decoder with skips) and
conditional critic emitting a latent vector."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    resolution: int = 64
    levels: int = 5
    base_channels: int = 64
    channel_cap: int = 512
    fc_hidden: int | None = None  # defaults to half the flattened bottleneck
    skips: bool = True
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.resolution != 2 ** (self.levels + 1):
            raise SpecError(f"resolution must equal 2^(levels+1); got N={self.resolution}, L={self.levels}")
        if self.base_channels < 1 or self.channel_cap < 1:
            raise SpecError("channel counts must be positive")

    @classmethod
    def for_resolution(cls, n, **kw):
        levels = int(round(math.log2(n))) - 1
        return cls(resolution=n, levels=levels, **kw)

    @property
    def channels(self):
        return [min(self.base_channels * 2 ** i, self.channel_cap) for i in range(self.levels)]

    @property
    def bottom(self):
        return self.resolution // 2 ** self.levels

    @property
    def flat_size(self):
        return self.bottom ** 3 * self.channels[-1]

    @property
    def hidden_size(self):
        return self.fc_hidden or max(1, self.flat_size // 2)

    @property
    def latent_size(self):
        return self.flat_size

    def to_dict(self):
        return asdict(self)


def _init_(module, gen):
    # fan-in scaled normal weights, zero biases, all drawn from one generator
    for m in module.modules():
        if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
            if isinstance(m, nn.ConvTranspose3d):
                fan_in = m.weight.shape[0] * math.prod(m.weight.shape[2:]) / 8
            else:
                fan_in = math.prod(m.weight.shape[1:])
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=m.weight.dtype) / math.sqrt(fan_in))
                m.bias.zero_()


class Generator(nn.Module):
    """Maps a (B, N, N, N) occupancy batch to (B, N, N, N) probabilities."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        ch = spec.channels
        self.encoder = nn.ModuleList()
        c_in = 1
        for c in ch:
            self.encoder.append(nn.Sequential(nn.ConstantPad3d((1, 2, 1, 2, 1, 2), 0.0), nn.Conv3d(c_in, c, kernel_size=4, stride=1)))
            c_in = c
        self.pool = nn.MaxPool3d(2, 2)
        self.act_enc = nn.LeakyReLU(spec.leaky_slope)
        self.fc1 = nn.Linear(spec.flat_size, spec.hidden_size)
        self.fc2 = nn.Linear(spec.hidden_size, spec.flat_size)
        self.decoder = nn.ModuleList()
        # decoder stage k runs at the resolution of encoder output L-1-k
        out_ch = list(reversed(ch[:-1])) + [1]
        for k, c_out in enumerate(out_ch):
            c_feat = ch[-1 - k]
            c_dec_in = 2 * c_feat if spec.skips else c_feat
            self.decoder.append(nn.ConvTranspose3d(c_dec_in, c_out, kernel_size=4, stride=2, padding=1))

    def forward(self, x):
        n = self.spec.resolution
        if x.shape[-3:] != (n, n, n):
            raise SpecError(f"expected (B, {n}, {n}, {n}) input, got {tuple(x.shape)}")
        h = x.reshape(-1, 1, n, n, n).to(self.fc1.weight.dtype)
        feats = []
        for conv in self.encoder:
            h = self.pool(self.act_enc(conv(h)))
            feats.append(h)
        b = h.shape[0]
        z = torch.relu(self.fc1(h.reshape(b, -1)))
        z = torch.relu(self.fc2(z))
        h = z.reshape(feats[-1].shape)
        last = len(self.decoder) - 1
        for k, up in enumerate(self.decoder):
            if self.spec.skips:
                h = torch.cat([h, feats[-1 - k]], dim=1)
            h = up(h)
            h = torch.sigmoid(h) if k == last else torch.relu(h)
        return h.reshape(b, n, n, n)


class Discriminator(nn.Module):
    """Scores a (condition, candidate) pair with a latent vector in (0, 1)."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        layers = []
        c_in = 2
        for c in spec.channels:
            layers.append(nn.Conv3d(c_in, c, kernel_size=4, stride=2, padding=1))
            c_in = c
        self.convs = nn.ModuleList(layers)

    def forward(self, condition, candidate):
        n = self.spec.resolution
        if condition.shape != candidate.shape or condition.shape[-3:] != (n, n, n):
            raise SpecError(f"condition/candidate must both be (B, {n}, {n}, {n}); "
                            f"got {tuple(condition.shape)} and {tuple(candidate.shape)}")
        dtype = self.convs[0].weight.dtype
        h = torch.stack([condition.to(dtype), candidate.to(dtype)], dim=1)
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            h = conv(h)
            h = torch.sigmoid(h) if i == last else torch.relu(h)
        return h.reshape(h.shape[0], -1)


def build_generator(spec, seed=None, dtype=torch.float32):
    gen = Generator(spec).to(dtype)
    _init_(gen, torch.Generator().manual_seed(spec.seed if seed is None else seed))
    return gen


def build_discriminator(spec, seed=None, dtype=torch.float32):
    disc = Discriminator(spec).to(dtype)
    # offset keeps the critic's draws independent of the generator's at the same seed
    _init_(disc, torch.Generator().manual_seed((spec.seed if seed is None else seed) + 1_000_003))
    return disc


def parameter_digest(module):
    """SHA-256 over all parameter bytes, in registration order."""
    import hashlib

    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
