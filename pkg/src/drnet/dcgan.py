"""DCGAN for synthesizing minority-class fundus images (grayscale only).

Generator: dense projection of the latent vector to an 8x8 feature map, then
stride-2 transpose-conv stages (kernel 4) with batch norm + relu, finishing
in a tanh layer. Discriminator: mirrored stride-2 convs with leaky relu and
dropout, then a dense sigmoid head. Stage count follows the image size
(8 -> 16 -> ... -> image_size), so 128 px uses the 256-128-64-32 channel
ladder and 4 stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .imageproc import NormalizedImage
from .layers import (
    BatchNormState,
    Conv2d,
    ConvTranspose2d,
    Dense,
    dropout,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)
from .optim import AdamState, adam_step, binary_cross_entropy
from .params import NetworkParams, read_checkpoint, write_checkpoint
from .tensor import RngStream, Tensor, reshape

BASE_SPATIAL = 8
BASE_CHANNELS = 32
DISCRIMINATOR_DROPOUT = 0.3


@dataclass
class GanConfig:
    latent_dim: int = 100
    image_size: int = 128
    batch_size: int = 4
    epochs: int = 10
    steps_per_epoch: int = 3750
    learning_rate: float = 0.0002
    beta1: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for field_name in ("latent_dim", "image_size", "batch_size", "epochs", "steps_per_epoch"):
            if getattr(self, field_name) <= 0:
                raise ShapeError(f"gan config: {field_name} must be positive")
        s = self.image_size
        if s < 32 or (s & (s - 1)) != 0:
            raise ShapeError(f"image_size must be a power of two >= 32, got {s}")

    @property
    def stages(self) -> int:
        return int(np.log2(self.image_size // BASE_SPATIAL))

    @property
    def start_channels(self) -> int:
        return BASE_CHANNELS << (self.stages - 1)


class Generator:
    def __init__(self, config: GanConfig, dtype=np.float32):
        self.config = config
        self.params = NetworkParams()
        rng = RngStream(config.seed).child(1)
        c0 = config.start_channels
        self.project = Dense(self.params, "project", config.latent_dim,
                             c0 * BASE_SPATIAL * BASE_SPATIAL, init="gan",
                             rng=rng.child(0), dtype=dtype)
        self.project_bn = BatchNormState(self.params, "project_bn", c0, dtype=dtype)
        self.stages = []
        ch = c0
        for i in range(config.stages):
            last = i == config.stages - 1
            out_ch = 1 if last else ch // 2
            tconv = ConvTranspose2d(self.params, f"up{i}", ch, out_ch, 4, stride=2,
                                    padding=1, bias=last, init="gan",
                                    rng=rng.child(1 + i), dtype=dtype)
            bn = None if last else BatchNormState(self.params, f"up{i}_bn", out_ch, dtype=dtype)
            self.stages.append((tconv, bn))
            ch = out_ch

    def __call__(self, z: Tensor, train: bool) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(
                f"generator expects (N,{self.config.latent_dim}) latents, got {z.shape}"
            )
        c0 = self.config.start_channels
        h = self.project(z)
        h = reshape(h, (z.shape[0], c0, BASE_SPATIAL, BASE_SPATIAL))
        h = relu(self.project_bn(h, train))
        for tconv, bn in self.stages:
            h = tconv(h)
            if bn is not None:
                h = relu(bn(h, train))
        return tanh(h)


class Discriminator:
    def __init__(self, config: GanConfig, dtype=np.float32):
        self.config = config
        self.params = NetworkParams()
        rng = RngStream(config.seed).child(2)
        self.convs = []
        ch = 1
        out_ch = BASE_CHANNELS
        for i in range(config.stages):
            self.convs.append(Conv2d(self.params, f"down{i}", ch, out_ch, 4, stride=2,
                                     padding=1, bias=True, init="gan",
                                     rng=rng.child(i), dtype=dtype))
            ch = out_ch
            out_ch *= 2
        feat = ch * BASE_SPATIAL * BASE_SPATIAL
        self.head = Dense(self.params, "head", feat, 1, init="gan",
                          rng=rng.child(99), dtype=dtype)

    def __call__(self, x: Tensor, train: bool, rng: RngStream) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.config.image_size:
            raise ShapeError(
                f"discriminator expects (N,1,{self.config.image_size},"
                f"{self.config.image_size}) input, got {x.shape}"
            )
        h = x
        for i, conv in enumerate(self.convs):
            h = leaky_relu(conv(h))
            h = dropout(h, DISCRIMINATOR_DROPOUT, train, rng.child(i))
        h = reshape(h, (x.shape[0], -1))
        return sigmoid(self.head(h))


def build_generator(config: GanConfig, dtype=np.float32) -> Generator:
    return Generator(config, dtype=dtype)


def build_discriminator(config: GanConfig, dtype=np.float32) -> Discriminator:
    return Discriminator(config, dtype=dtype)


def sample_latent(n: int, config: GanConfig, rng: RngStream) -> Tensor:
    """n latent vectors, entries i.i.d. uniform on [-1, 1]."""
    if n < 1:
        raise ShapeError(f"need n >= 1 latents, got {n}")
    return Tensor(rng.uniform(-1.0, 1.0, size=(n, config.latent_dim)).astype(np.float32))


class GanTrainer:
    """Owns both networks, their Adam states, and the step counter."""

    def __init__(self, config: GanConfig, dtype=np.float32):
        self.config = config
        self.gen = Generator(config, dtype=dtype)
        self.disc = Discriminator(config, dtype=dtype)
        self.gen_state = AdamState(self.gen.params, config.learning_rate, beta1=config.beta1)
        self.disc_state = AdamState(self.disc.params, config.learning_rate, beta1=config.beta1)
        self.step = 0

    def train_step(self, real_batch: Tensor, rng: RngStream) -> tuple:
        """One alternating update; returns (d_loss, g_loss)."""
        from .tensor import Tape

        cfg = self.config
        z = sample_latent(real_batch.shape[0], cfg, rng.child(0))
        ones = Tensor(np.ones((real_batch.shape[0], 1), dtype=np.float32))
        zeros = Tensor(np.zeros((real_batch.shape[0], 1), dtype=np.float32))

        # discriminator half-step: fakes are generated outside the tape, so
        # no gradient can reach the generator
        fake = self.gen(z, train=True).detach()
        with Tape() as tape_d:
            p_real = self.disc(real_batch, train=True, rng=rng.child(1))
            p_fake = self.disc(fake, train=True, rng=rng.child(2))
            d_loss = (binary_cross_entropy(p_real, ones)
                      + binary_cross_entropy(p_fake, zeros)) * 0.5
        grads = tape_d.backward(d_loss, self.disc.params)
        adam_step(self.disc.params, grads, self.disc_state)

        # generator half-step: non-saturating loss, push D(G(z)) toward 1
        with Tape() as tape_g:
            fake2 = self.gen(z, train=True)
            p = self.disc(fake2, train=True, rng=rng.child(3))
            g_loss = binary_cross_entropy(p, ones)
        grads = tape_g.backward(g_loss, self.gen.params)
        adam_step(self.gen.params, grads, self.gen_state)

        self.step += 1
        d = float(d_loss.data)
        g = float(g_loss.data)
        if not (np.isfinite(d) and np.isfinite(g)):
            raise NumericError(f"non-finite GAN loss at step {self.step}: d={d} g={g}")
        return d, g


def gan_train_step(trainer: GanTrainer, real_batch: Tensor, rng: RngStream) -> tuple:
    return trainer.train_step(real_batch, rng)


def _as_batch_array(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images.astype(np.float32, copy=False)
    return np.stack([img.data for img in images]).astype(np.float32, copy=False)


def gan_train(config: GanConfig, images, on_epoch=None, trainer: GanTrainer | None = None):
    """Full adversarial loop; returns (trainer, history).

    ``images``: NormalizedImage list or (M,S,S) float array in [-1,1].
    ``on_epoch(epoch, trainer, d_loss, g_loss)`` runs after each epoch.
    """
    data = _as_batch_array(images)
    if data.ndim != 3 or data.shape[1] != config.image_size:
        raise ShapeError(
            f"training images must be (M,{config.image_size},{config.image_size}), "
            f"got {data.shape}"
        )
    trainer = trainer or GanTrainer(config)
    rng = RngStream(config.seed).child(777)
    order = []
    history = []
    pass_idx = 0
    for epoch in range(config.epochs):
        d_sum = g_sum = 0.0
        for step in range(config.steps_per_epoch):
            while len(order) < config.batch_size:
                order.extend(rng.child(9, pass_idx).permutation(len(data)).tolist())
                pass_idx += 1
            take, order = order[: config.batch_size], order[config.batch_size :]
            batch = Tensor(data[take][:, None, :, :])
            d, g = trainer.train_step(batch, rng.child(epoch, step))
            d_sum += d
            g_sum += g
        d_avg = d_sum / config.steps_per_epoch
        g_avg = g_sum / config.steps_per_epoch
        history.append({"epoch": epoch, "d_loss": d_avg, "g_loss": g_avg})
        if on_epoch is not None:
            on_epoch(epoch, trainer, d_avg, g_avg)
    return trainer, history


def generate_images(gen: Generator, n: int, seed: int) -> list:
    """Deterministic eval-mode samples for a fixed seed."""
    if n == 0:
        return []
    z = sample_latent(n, gen.config, RngStream(seed).child(31337))
    out = gen(z, train=False).data
    return [NormalizedImage(out[i, 0]) for i in range(n)]


def intensity_distribution(images, bins: int = 64) -> tuple:
    """Normalized histogram (sums to 1) over all samples of all images.

    Returns (density, bin_edges) with edges spanning [-1, 1].
    """
    data = _as_batch_array(images) if not isinstance(images, np.ndarray) else images
    if data.size == 0:
        raise DataError("intensity_distribution: no images")
    counts, edges = np.histogram(data.ravel(), bins=bins, range=(-1.0, 1.0))
    return counts.astype(np.float64) / counts.sum(), edges


def distribution_divergence(h_real: np.ndarray, h_fake: np.ndarray) -> float:
    """Jensen-Shannon divergence, base 2, in [0, 1]."""
    p = np.asarray(h_real, dtype=np.float64)
    q = np.asarray(h_fake, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"histogram bin counts differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log2(a[mask] / b[mask])).sum())

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


# checkpointing ---------------------------------------------------------------


def save_gan_checkpoint(path, trainer: GanTrainer, d_loss: float = 0.0, g_loss: float = 0.0):
    combined = NetworkParams()
    for name, t in trainer.gen.params.items():
        combined.add("gen." + name, Tensor(t.data))
    for name, t in trainer.disc.params.items():
        combined.add("disc." + name, Tensor(t.data))
    meta = np.array([trainer.step, d_loss, g_loss], dtype=np.float32)
    combined.add("meta.state", Tensor(meta))
    write_checkpoint(path, combined)


def load_gan_checkpoint(path, config: GanConfig) -> GanTrainer:
    blob = read_checkpoint(path)
    trainer = GanTrainer(config)
    gen_state = {k[len("gen."):]: v for k, v in blob.items() if k.startswith("gen.")}
    disc_state = {k[len("disc."):]: v for k, v in blob.items() if k.startswith("disc.")}
    trainer.gen.params.load_state(gen_state)
    trainer.disc.params.load_state(disc_state)
    if "meta.state" in blob:
        trainer.step = int(blob["meta.state"][0])
    return trainer


def load_generator(path, config: GanConfig) -> Generator:
    return load_gan_checkpoint(path, config).gen
