import math

import numpy as np
import pytest

from drnet.dcgan import (
    GanConfig,
    GanTrainer,
    build_discriminator,
    build_generator,
    distribution_divergence,
    gan_train,
    generate_images,
    intensity_distribution,
    load_gan_checkpoint,
    sample_latent,
)
from drnet.errors import DataError, ShapeError
from drnet.tensor import RngStream, Tensor


def small_config(**kw):
    defaults = dict(image_size=32, batch_size=4, epochs=1, steps_per_epoch=2, seed=0)
    defaults.update(kw)
    return GanConfig(**defaults)


class TestGeneratorTopology:
    def test_full_size_output_shape(self):
        gen = build_generator(GanConfig(image_size=128))
        z = sample_latent(4, gen.config, RngStream(0))
        out = gen(z, train=True)
        assert out.shape == (4, 1, 128, 128)

    def test_output_strictly_inside_unit_interval(self):
        gen = build_generator(small_config())
        out = gen(sample_latent(4, gen.config, RngStream(1)), train=True)
        assert out.data.min() > -1.0 and out.data.max() < 1.0

    def test_stage_ladder_for_128(self):
        config = GanConfig(image_size=128)
        assert config.stages == 4
        assert config.start_channels == 256
        gen = build_generator(config)
        # channel ladder 256 -> 128 -> 64 -> 32 -> 1
        widths = [gen.params[f"up{i}.weight"].shape for i in range(4)]
        assert widths == [(256, 128, 4, 4), (128, 64, 4, 4), (64, 32, 4, 4), (32, 1, 4, 4)]

    def test_image_size_must_be_power_of_two(self):
        with pytest.raises(ShapeError):
            GanConfig(image_size=100)
        with pytest.raises(ShapeError):
            GanConfig(image_size=16)


class TestDiscriminatorTopology:
    def test_outputs_in_unit_interval(self):
        disc = build_discriminator(small_config())
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32))
        out = disc(x, train=True, rng=RngStream(5))
        assert out.shape == (4, 1)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_zero_weights_give_exactly_half(self):
        disc = build_discriminator(small_config())
        for _, t in disc.params.items():
            t.data[:] = 0.0
        x = Tensor(np.random.default_rng(1).uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32))
        out = disc(x, train=False, rng=RngStream(0))
        np.testing.assert_array_equal(out.data, np.full((4, 1), 0.5, dtype=np.float32))

    def test_conv_ladder_for_128(self):
        disc = build_discriminator(GanConfig(image_size=128))
        shapes = [disc.params[f"down{i}.weight"].shape for i in range(4)]
        assert shapes == [(32, 1, 4, 4), (64, 32, 4, 4), (128, 64, 4, 4), (256, 128, 4, 4)]


class TestLatent:
    def test_shape(self):
        z = sample_latent(7, GanConfig(image_size=32), RngStream(0))
        assert z.shape == (7, 100)

    def test_range(self):
        z = sample_latent(100, GanConfig(image_size=32), RngStream(1))
        assert z.data.min() >= -1.0 and z.data.max() <= 1.0

    def test_mean_monte_carlo(self):
        z = sample_latent(1000, GanConfig(image_size=32), RngStream(2))
        assert abs(float(z.data.mean())) < 0.01  # 1e5 draws

    def test_n_zero_rejected(self):
        with pytest.raises(ShapeError):
            sample_latent(0, GanConfig(image_size=32), RngStream(0))


class TestTrainStep:
    def test_zero_discriminator_gives_ln2_d_loss(self):
        trainer = GanTrainer(small_config())
        for _, t in trainer.disc.params.items():
            t.data[:] = 0.0
        real = Tensor(np.random.default_rng(2).uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32))
        d_loss, _ = trainer.train_step(real, RngStream(3))
        assert d_loss == pytest.approx(math.log(2.0), abs=1e-5)

    def test_discriminator_half_step_leaves_generator_unchanged(self):
        trainer = GanTrainer(small_config())
        real = Tensor(np.random.default_rng(3).uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32))
        z = sample_latent(4, trainer.config, RngStream(0))
        gen_before = {n: t.data.copy() for n, t in trainer.gen.params.items()}

        from drnet.optim import adam_step, binary_cross_entropy
        from drnet.tensor import Tape

        ones = Tensor(np.ones((4, 1), dtype=np.float32))
        zeros = Tensor(np.zeros((4, 1), dtype=np.float32))
        fake = trainer.gen(z, train=False).detach()
        with Tape() as tape:
            p_real = trainer.disc(real, train=True, rng=RngStream(1))
            p_fake = trainer.disc(fake, train=True, rng=RngStream(2))
            loss = (binary_cross_entropy(p_real, ones) + binary_cross_entropy(p_fake, zeros)) * 0.5
        grads = tape.backward(loss, trainer.disc.params)
        adam_step(trainer.disc.params, grads, trainer.disc_state)
        for name, before in gen_before.items():
            np.testing.assert_array_equal(trainer.gen.params[name].data, before)

    def test_losses_deterministic_for_fixed_seed(self):
        runs = []
        for _ in range(2):
            data = np.random.default_rng(7).uniform(-1, 1, (16, 32, 32)).astype(np.float32)
            _, history = gan_train(small_config(steps_per_epoch=3), data)
            runs.append([(h["d_loss"], h["g_loss"]) for h in history])
        assert runs[0] == runs[1]

    def test_degenerate_constant_dataset_generator_drifts(self):
        # constant images: the generator output drifts toward the constant
        # (and the discriminator ends near its 0.5 equilibrium because the
        # fakes become indistinguishable)
        config = small_config(epochs=1, steps_per_epoch=200, seed=4)
        target = 0.3
        data = np.full((32, 32, 32), target, dtype=np.float32)
        trainer = GanTrainer(config)

        z = sample_latent(16, config, RngStream(100))
        before = float(np.abs(trainer.gen(z, train=False).data - target).mean())
        trainer, _ = gan_train(config, data, trainer=trainer)
        after = float(np.abs(trainer.gen(z, train=False).data - target).mean())
        assert after < before
        assert after < 0.1

    def test_discriminator_separates_frozen_generator_within_200_steps(self):
        from drnet.optim import adam_step, binary_cross_entropy
        from drnet.tensor import Tape

        config = small_config(seed=4)
        target = 0.3
        data = np.full((32, 32, 32), target, dtype=np.float32)
        trainer = GanTrainer(config)
        rng = RngStream(11)
        ones = Tensor(np.ones((4, 1), dtype=np.float32))
        zeros = Tensor(np.zeros((4, 1), dtype=np.float32))
        for step in range(200):
            z = sample_latent(4, config, rng.child(step, 0))
            fake = trainer.gen(z, train=False).detach()
            real = Tensor(data[:4][:, None])
            with Tape() as tape:
                p_real = trainer.disc(real, train=True, rng=rng.child(step, 1))
                p_fake = trainer.disc(fake, train=True, rng=rng.child(step, 2))
                loss = (binary_cross_entropy(p_real, ones)
                        + binary_cross_entropy(p_fake, zeros)) * 0.5
            grads = tape.backward(loss, trainer.disc.params)
            adam_step(trainer.disc.params, grads, trainer.disc_state)
        real_score = trainer.disc(
            Tensor(data[:8][:, None]), train=False, rng=RngStream(0)
        ).data.mean()
        assert real_score >= 0.9


class TestGenerateImages:
    def test_n_zero_empty(self):
        gen = build_generator(small_config())
        assert generate_images(gen, 0, seed=0) == []

    def test_same_seed_identical(self):
        gen = build_generator(small_config())
        a = generate_images(gen, 3, seed=9)
        b = generate_images(gen, 3, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)

    def test_dimensions(self):
        gen = build_generator(GanConfig(image_size=128))
        imgs = generate_images(gen, 2, seed=1)
        assert all(i.data.shape == (128, 128) for i in imgs)


class TestIntensityDistribution:
    def test_constant_mass_in_one_bin(self):
        data = np.zeros((3, 8, 8), dtype=np.float32)
        hist, edges = intensity_distribution(data, bins=64)
        assert hist.max() == 1.0
        idx = int(np.argmax(hist))
        assert edges[idx] <= 0.0 <= edges[idx + 1]

    def test_sums_to_one(self):
        data = np.random.default_rng(0).uniform(-1, 1, (4, 16, 16)).astype(np.float32)
        hist, _ = intensity_distribution(data, bins=64)
        assert abs(hist.sum() - 1.0) < 1e-9

    def test_uniform_noise_flatness(self):
        data = np.random.default_rng(1).uniform(-1, 1, (100, 100, 100)).astype(np.float32)
        hist, _ = intensity_distribution(data, bins=64)  # 1e6 samples
        assert hist.max() <= 2 * hist.min()

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            intensity_distribution(np.zeros((0, 8, 8), dtype=np.float32))


class TestDivergence:
    def test_identical_histograms_zero(self):
        h = np.full(64, 1 / 64)
        assert distribution_divergence(h, h) == 0.0

    def test_disjoint_support_is_one(self):
        h = np.zeros(64)
        g = np.zeros(64)
        h[:32] = 1 / 32
        g[32:] = 1 / 32
        assert distribution_divergence(h, g) == pytest.approx(1.0)

    def test_closed_form_value(self):
        # 0.5*KL([.5,.5]||[.75,.25]) + 0.5*KL([1,0]||[.75,.25]) in bits
        expected = 0.5 * (0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)) \
            + 0.5 * (1.0 * math.log2(1.0 / 0.75))
        got = distribution_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.3113, abs=5e-5)

    def test_bin_mismatch(self):
        with pytest.raises(ShapeError):
            distribution_divergence(np.ones(4) / 4, np.ones(8) / 8)


def test_gan_checkpoint_round_trip(tmp_path):
    from drnet.dcgan import save_gan_checkpoint

    config = small_config()
    data = np.random.default_rng(5).uniform(-1, 1, (8, 32, 32)).astype(np.float32)
    trainer, _ = gan_train(config, data)
    path = tmp_path / "gan.ckpt"
    save_gan_checkpoint(path, trainer, 0.5, 0.7)
    restored = load_gan_checkpoint(path, config)
    assert restored.step == trainer.step
    imgs_a = generate_images(trainer.gen, 2, seed=3)
    imgs_b = generate_images(restored.gen, 2, seed=3)
    for a, b in zip(imgs_a, imgs_b):
        np.testing.assert_array_equal(a.data, b.data)
