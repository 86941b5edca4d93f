"""The encode/decode/segment networks and their joint training loop.

The VAE compresses density grids into a 300-dimensional latent code and is
trained together with a 3-D U-Net that segments the decoded output; the
segmentation loss feeds back into the encoder/decoder with weight gamma while
the U-Net itself always trains on the unweighted term. A small discriminator
scores how close decoded grids sit to real reconstructions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import nn, ops
from .engine.optim import Adam
from .engine.tensor import Tensor, backward, concat, grad_scale, no_grad
from .errors import (
    NonFiniteLossError,
    NonPositiveAlphaError,
    ShapeMismatchError,
    UntrainedModelError,
)
from .voxelize import NUM_SPECIES_CLASSES


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the joint model and its optimization."""

    beta: float = 1e-3
    gamma: float = 0.1
    lr: float = 1e-5
    batch: int = 24
    latent_dim: int = 300
    seed: int = 0
    grid_side: int = 30
    encoder_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    unet_base_channels: int = 16
    unet_attention: bool = True
    num_classes: int = NUM_SPECIES_CLASSES
    logvar_limit: float = 10.0
    leaky_slope: float = 0.01
    species_loss: str = "bce"  # "bce" (taken literally) or "softmax" ablation
    conditioned: bool = False
    dtype: str = "f32"

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.species_loss not in ("bce", "softmax"):
            raise ValueError("species_loss must be 'bce' or 'softmax'")
        if self.dtype not in ("f32", "f64"):
            raise ValueError("dtype must be 'f32' or 'f64'")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def to_json(self) -> str:
        doc = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(self).items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        doc["encoder_channels"] = tuple(doc["encoder_channels"])
        return cls(**doc)


@dataclass
class EncoderOutput:
    mu: Tensor
    logvar: Tensor


def _conv_out(size: int, kernel: int, stride: int, pad: tuple[int, int]) -> int:
    return (size + pad[0] + pad[1] - kernel) // stride + 1


class Encoder(nn.Module):
    """Four-stage conv stack (strides 2,1,1,2) with affine mu/logvar heads."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        c = cfg.encoder_channels
        dt = cfg.np_dtype
        self.conv1 = nn.Conv3d(rng, 1, c[0], 5, stride=2, padding=2, dtype=dt)
        self.bn1 = nn.BatchNorm3d(c[0], dtype=dt)
        self.conv2 = nn.Conv3d(rng, c[0], c[1], 3, stride=1, padding=1, dtype=dt)
        self.bn2 = nn.BatchNorm3d(c[1], dtype=dt)
        self.conv3 = nn.Conv3d(rng, c[1], c[2], 3, stride=1, padding=1, dtype=dt)
        self.bn3 = nn.BatchNorm3d(c[2], dtype=dt)
        self.conv4 = nn.Conv3d(rng, c[2], c[3], 3, stride=2, padding=1, dtype=dt)
        self.bn4 = nn.BatchNorm3d(c[3], dtype=dt)
        side = cfg.grid_side
        for kernel, stride, pad in ((5, 2, (2, 2)), (3, 1, (1, 1)), (3, 1, (1, 1)), (3, 2, (1, 1))):
            side = _conv_out(side, kernel, stride, pad)
        self.feat_side = side
        feat = c[3] * side**3
        self.fc_mu = nn.Linear(rng, feat, cfg.latent_dim, dtype=dt)
        self.fc_logvar = nn.Linear(rng, feat, cfg.latent_dim, dtype=dt)
        self.slope = cfg.leaky_slope
        self.logvar_limit = cfg.logvar_limit

    def __call__(self, x: Tensor) -> EncoderOutput:
        if x.data.ndim != 5 or x.data.shape[1] != 1:
            raise ShapeMismatchError(f"encoder expects [N,1,d,h,w], got {x.data.shape}")
        h = x
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2),
                         (self.conv3, self.bn3), (self.conv4, self.bn4)):
            h = ops.leaky_relu(bn(conv(h)), self.slope)
        h = h.reshape((h.shape[0], -1))
        mu = self.fc_mu(h)
        logvar = self.fc_logvar(h).clip(-self.logvar_limit, self.logvar_limit)
        return EncoderOutput(mu=mu, logvar=logvar)


class Decoder(nn.Module):
    """Affine + reshape, three upsample/conv stages, final ReLU and resize.

    The published layer list lands on 40^3 (5 -> 10 -> 20 -> 40 under
    same-style padding); a trilinear resize brings the output to the grid
    side exactly. The final ReLU keeps densities non-negative.
    """

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        c = cfg.encoder_channels
        dt = cfg.np_dtype
        self.start_side = 5 if cfg.grid_side == 30 else max(1, math.ceil(cfg.grid_side / 8))
        self.base_channels = c[3]
        self.fc = nn.Linear(rng, cfg.latent_dim, c[3] * self.start_side**3, dtype=dt)
        even = ((1, 2), (1, 2), (1, 2))  # "same" for kernel 4
        self.conv1 = nn.Conv3d(rng, c[3], c[2], 5, stride=1, padding=2, dtype=dt)
        self.conv2 = nn.Conv3d(rng, c[2], c[1], 5, stride=1, padding=2, dtype=dt)
        self.conv3 = nn.Conv3d(rng, c[1], c[0], 4, stride=1, padding=even, dtype=dt)
        self.conv4 = nn.Conv3d(rng, c[0], 1, 4, stride=1, padding=even, dtype=dt)
        self.grid_side = cfg.grid_side
        self.slope = cfg.leaky_slope

    def __call__(self, z: Tensor) -> Tensor:
        n = z.shape[0]
        s = self.start_side
        h = self.fc(z).reshape((n, self.base_channels, s, s, s))
        h = ops.leaky_relu(self.conv1(ops.trilinear_upsample(h)), self.slope)
        h = ops.leaky_relu(self.conv2(ops.trilinear_upsample(h)), self.slope)
        h = ops.leaky_relu(self.conv3(ops.trilinear_upsample(h)), self.slope)
        h = ops.relu(self.conv4(h))
        if h.shape[2:] != (self.grid_side,) * 3:
            h = ops.trilinear_resize(h, (self.grid_side,) * 3)
        return h


class AttentionGate(nn.Module):
    """Additive attention on a skip connection, gated by decoder features."""

    def __init__(self, rng, gate_channels, skip_channels, inter_channels, dtype):
        self.wg = nn.Conv3d(rng, gate_channels, inter_channels, 1, dtype=dtype)
        self.wx = nn.Conv3d(rng, skip_channels, inter_channels, 1, dtype=dtype)
        self.psi = nn.Conv3d(rng, inter_channels, 1, 1, dtype=dtype)

    def __call__(self, gate: Tensor, skip: Tensor) -> Tensor:
        a = ops.relu(self.wg(gate) + self.wx(skip))
        return skip * ops.sigmoid(self.psi(a))


class UNet3d(nn.Module):
    """Two-level 3-D U-Net with optional attention-gated skip."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        b = cfg.unet_base_channels
        dt = cfg.np_dtype
        self.enc1a = nn.Conv3d(rng, 1, b, 3, stride=1, padding=1, dtype=dt)
        self.bn1a = nn.BatchNorm3d(b, dtype=dt)
        self.enc1b = nn.Conv3d(rng, b, b, 3, stride=1, padding=1, dtype=dt)
        self.bn1b = nn.BatchNorm3d(b, dtype=dt)
        self.down = nn.Conv3d(rng, b, 2 * b, 3, stride=2, padding=1, dtype=dt)
        self.bnd = nn.BatchNorm3d(2 * b, dtype=dt)
        self.bot = nn.Conv3d(rng, 2 * b, 2 * b, 3, stride=1, padding=1, dtype=dt)
        self.bnb = nn.BatchNorm3d(2 * b, dtype=dt)
        self.up = nn.Conv3d(rng, 2 * b, b, 3, stride=1, padding=1, dtype=dt)
        self.bnu = nn.BatchNorm3d(b, dtype=dt)
        self.att = (
            AttentionGate(rng, b, b, max(b // 2, 1), dt) if cfg.unet_attention else None
        )
        self.dec = nn.Conv3d(rng, 2 * b, b, 3, stride=1, padding=1, dtype=dt)
        self.bndec = nn.BatchNorm3d(b, dtype=dt)
        self.head = nn.Conv3d(rng, b, cfg.num_classes, 1, dtype=dt)
        self.slope = cfg.leaky_slope

    def __call__(self, x: Tensor) -> Tensor:
        lrelu = lambda t: ops.leaky_relu(t, self.slope)
        s1 = lrelu(self.bn1b(self.enc1b(lrelu(self.bn1a(self.enc1a(x))))))
        h = lrelu(self.bnd(self.down(s1)))
        h = lrelu(self.bnb(self.bot(h)))
        h = ops.trilinear_resize(h, s1.shape[2:])
        u = lrelu(self.bnu(self.up(h)))
        skip = self.att(u, s1) if self.att is not None else s1
        h = lrelu(self.bndec(self.dec(concat([u, skip], axis=1))))
        return self.head(h)


class JointModel(nn.Module):
    """Encoder, decoder, and segmentation U-Net built from one seeded rng."""

    def __init__(self, cfg: TrainConfig):
        rng = np.random.default_rng([cfg.seed, 0])
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.unet = UNet3d(cfg, rng)
        self.cfg = cfg

    def vae_parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


def reparameterize(out: EncoderOutput, rng_or_eps) -> Tensor:
    """z = mu + exp(logvar / 2) * eps; gradients flow to mu/logvar only."""
    if isinstance(rng_or_eps, np.random.Generator):
        eps = rng_or_eps.standard_normal(out.mu.shape)
    else:
        eps = np.asarray(rng_or_eps)
    std = (0.5 * out.logvar).exp()
    return out.mu + std * Tensor(eps.astype(out.mu.data.dtype))


def species_loss(logits: Tensor, target: Tensor, kind: str = "bce") -> Tensor:
    if kind == "softmax":
        return ops.softmax_cross_entropy(logits, target)
    return ops.bce_with_logits(logits, target)


def vae_loss(m_hat, m, mu, logvar, s_hat, s, cfg: TrainConfig):
    """Weighted sum rec + beta*KL + gamma*species, with a component breakdown."""
    rec = ops.mse_loss(m_hat, m)
    kl = ops.kl_diag_gaussian(mu, logvar)
    seg = species_loss(s_hat, s, cfg.species_loss)
    total = rec + cfg.beta * kl + cfg.gamma * seg
    parts = {
        "L_RE": rec.item(),
        "KL": kl.item(),
        "L_BCE": seg.item(),
        "total": total.item(),
    }
    return total, parts


def unet_loss(s_hat: Tensor, s: Tensor, kind: str = "bce") -> Tensor:
    return species_loss(s_hat, s, kind)


def one_hot_batch(labels: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    n = labels.shape[0]
    side = labels.shape[1:]
    out = np.zeros((n, num_classes) + side, dtype=dtype)
    grid = np.indices(labels.shape)
    out[grid[0], labels.astype(int), grid[1], grid[2], grid[3]] = 1
    return out


def _as_density_batch(densities: np.ndarray, dtype) -> np.ndarray:
    d = np.asarray(densities, dtype=dtype)
    if d.ndim == 4:
        d = d[:, None]
    if d.ndim != 5 or d.shape[1] != 1:
        raise ShapeMismatchError(f"expected density batch [N,(1,)d,h,w], got {d.shape}")
    return d


def train_joint(
    densities: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    steps: int,
    model: JointModel | None = None,
    log_file=None,
    callback=None,
) -> tuple[JointModel, list[dict]]:
    """Run the joint optimization: one Adam on the VAE, one on the U-Net.

    The segmentation gradient reaches the decoder through a gamma-weighted
    gate, while the U-Net always receives the unweighted loss; with gamma = 0
    the decoded grid is detached, so decoder gradients match a VAE-only
    backward pass bit for bit. Raises NonFiniteLossError (with the offending
    step in the message) if any component stops being finite.
    """
    dt = cfg.np_dtype
    m_all = _as_density_batch(densities, dt)
    labels = np.asarray(labels)
    if model is None:
        model = JointModel(cfg)
    model.train()
    rng = np.random.default_rng([cfg.seed, 1])
    opt_vae = Adam(model.vae_parameters(), lr=cfg.lr)
    opt_unet = Adam(model.unet.parameters(), lr=cfg.lr)
    dataset_max = float(m_all.max()) if cfg.conditioned else 1.0
    if cfg.conditioned and dataset_max <= 0:
        raise NonPositiveAlphaError("conditioning needs a positive dataset max")

    metrics: list[dict] = []
    n = m_all.shape[0]
    for step in range(steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        m = Tensor(m_all[idx])
        s = Tensor(one_hot_batch(labels[idx], cfg.num_classes, dt))

        enc_out = model.encoder(m)
        mu, logvar = enc_out.mu, enc_out.logvar
        if cfg.conditioned:
            sample_max = m_all[idx].reshape(len(idx), -1).max(axis=1) / dataset_max
            scale = sample_max[:, None].astype(dt)
            mu = mu * Tensor(1.0 / scale)
            logvar = logvar + Tensor(-2.0 * np.log(scale))
        z = reparameterize(EncoderOutput(mu, logvar), rng)
        if cfg.conditioned:
            z = z * Tensor(scale)  # training target alpha = the sample's own max
        m_hat = model.decoder(z)

        rec = ops.mse_loss(m_hat, m)
        kl = ops.kl_diag_gaussian(mu, logvar)
        unet_in = grad_scale(m_hat, cfg.gamma) if cfg.gamma > 0 else m_hat.detach()
        s_hat = model.unet(unet_in)
        seg = species_loss(s_hat, s, cfg.species_loss)

        record = {
            "step": step,
            "L_RE": rec.item(),
            "KL": kl.item(),
            "L_BCE": seg.item(),
            "total": rec.item() + cfg.beta * kl.item() + cfg.gamma * seg.item(),
        }
        if not all(math.isfinite(v) for v in record.values()):
            raise NonFiniteLossError(f"non-finite loss at step {step}: {record}")

        opt_vae.zero_grad()
        opt_unet.zero_grad()
        backward(rec + cfg.beta * kl + seg)
        opt_vae.step()
        opt_unet.step()

        metrics.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
        if callback is not None and callback(step, record, model):
            break
    return model, metrics


# -- inference helpers -------------------------------------------------------


def encode_batch(model: JointModel, densities: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mu and logvar for a density batch (eval mode, no graph)."""
    model.eval()
    with no_grad():
        out = model.encoder(Tensor(_as_density_batch(densities, model.cfg.np_dtype)))
    return out.mu.data.copy(), out.logvar.data.copy()


def decode_batch(model: JointModel, z: np.ndarray) -> np.ndarray:
    """Decode latent rows to density grids of shape (N, side, side, side)."""
    model.eval()
    z = np.asarray(z, dtype=model.cfg.np_dtype)
    if z.ndim == 1:
        z = z[None]
    with no_grad():
        out = model.decoder(Tensor(z))
    return out.data[:, 0].copy()


def segment_logits_batch(model: JointModel, densities: np.ndarray) -> np.ndarray:
    """U-Net class logits [N, classes, side, side, side] for density grids."""
    model.eval()
    with no_grad():
        out = model.unet(Tensor(_as_density_batch(densities, model.cfg.np_dtype)))
    return out.data.copy()


def latent_interpolate(z1: np.ndarray, z2: np.ndarray, t: float) -> np.ndarray:
    """(1 - t) z1 + t z2, with exact endpoints at t = 0 and t = 1."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    if z1.shape != z2.shape:
        raise ShapeMismatchError("latent endpoints must share a shape")
    if t == 0.0:
        return z1.copy()
    if t == 1.0:
        return z2.copy()
    return (1.0 - t) * z1 + t * z2


def sample_prior(rng: np.random.Generator, dim: int = 300) -> np.ndarray:
    return rng.standard_normal(dim)


def condition_scale(z: np.ndarray, alpha: float) -> np.ndarray:
    """Scale a latent by a positive conditioning target."""
    if not alpha > 0:
        raise NonPositiveAlphaError(f"alpha must be > 0, got {alpha}")
    return alpha * np.asarray(z)


# -- discriminator ------------------------------------------------------------


class Discriminator(nn.Module):
    """Encoder-style trunk plus a sigmoid head predicting the noise fraction."""

    def __init__(self, cfg: TrainConfig):
        rng = np.random.default_rng([cfg.seed, 2])
        dt = cfg.np_dtype
        c = cfg.encoder_channels
        self.conv1 = nn.Conv3d(rng, 1, c[0], 5, stride=2, padding=2, dtype=dt)
        self.bn1 = nn.BatchNorm3d(c[0], dtype=dt)
        self.conv2 = nn.Conv3d(rng, c[0], c[1], 3, stride=2, padding=1, dtype=dt)
        self.bn2 = nn.BatchNorm3d(c[1], dtype=dt)
        self.conv3 = nn.Conv3d(rng, c[1], c[2], 3, stride=2, padding=1, dtype=dt)
        self.bn3 = nn.BatchNorm3d(c[2], dtype=dt)
        side = cfg.grid_side
        for kernel, stride, pad in ((5, 2, (2, 2)), (3, 2, (1, 1)), (3, 2, (1, 1))):
            side = _conv_out(side, kernel, stride, pad)
        self.fc = nn.Linear(rng, c[2] * side**3, 1, dtype=dt)
        self.slope = cfg.leaky_slope
        self.cfg = cfg
        self.trained = False

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2), (self.conv3, self.bn3)):
            h = ops.leaky_relu(bn(conv(h)), self.slope)
        h = h.reshape((h.shape[0], -1))
        return ops.sigmoid(self.fc(h))


def train_discriminator(
    model: JointModel,
    densities: np.ndarray,
    steps: int,
    lr: float = 1e-4,
    batch: int = 8,
    seed: int = 0,
    disc: Discriminator | None = None,
) -> Discriminator:
    """Fit the noise-fraction predictor on decoded latent mixtures.

    Each step mixes real posterior codes with prior draws,
    z_hat = lambda * z_prior + (1 - lambda) * z_real, decodes the mixture and
    regresses the head onto lambda with MSE.
    """
    cfg = model.cfg
    if disc is None:
        disc = Discriminator(cfg)
    disc.train()
    z_real, _ = encode_batch(model, densities)
    rng = np.random.default_rng([seed, 3])
    opt = Adam(disc.parameters(), lr=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(z_real), size=batch)
        lam = rng.random(batch)
        z_prior = rng.standard_normal((batch, cfg.latent_dim))
        z_hat = lam[:, None] * z_prior + (1.0 - lam[:, None]) * z_real[idx]
        grids = decode_batch(model, z_hat)
        pred = disc(Tensor(grids[:, None].astype(cfg.np_dtype)))
        loss = ops.mse_loss(pred, Tensor(lam[:, None].astype(cfg.np_dtype)))
        opt.zero_grad()
        backward(loss)
        opt.step()
    disc.trained = True
    return disc


def discriminator_score(disc: Discriminator, densities: np.ndarray) -> np.ndarray:
    """Realness score in [0, 1]: one minus the predicted noise fraction."""
    if not disc.trained:
        raise UntrainedModelError("discriminator has not been trained or loaded")
    disc.eval()
    with no_grad():
        pred = disc(Tensor(_as_density_batch(densities, disc.cfg.np_dtype)))
    return 1.0 - pred.data[:, 0].copy()


def tiny_config(**overrides) -> TrainConfig:
    """A 6^3-grid, latent-8 configuration for end-to-end gradient checks."""
    base = dict(
        grid_side=6,
        latent_dim=8,
        encoder_channels=(2, 3, 4, 5),
        unet_base_channels=2,
        num_classes=4,
        batch=2,
        dtype="f64",
    )
    base.update(overrides)
    return TrainConfig(**base)
