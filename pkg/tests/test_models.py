import numpy as np
import pytest
import torch

from conftest import small_extractor
from semisr import models
from semisr.errors import CheckpointMismatch, ConfigError, ShapeError
from semisr.models import (
    Discriminator,
    DiscriminatorConfig,
    FeatureExtractor,
    FeatureExtractorSpec,
    Generator,
    GeneratorConfig,
)

TINY_GEN = GeneratorConfig(n_rrdb_blocks=2, base_channels=12, growth_channels=6, scale=4)
TINY_DISC = DiscriminatorConfig(input_size=32, base_channels=12, n_downsample_stages=3)


class TestGenerator:
    def test_upscale_4x_shapes(self):
        g = Generator(TINY_GEN)
        out = g(torch.rand(2, 3, 64, 64))
        assert out.shape == (2, 3, 256, 256)

    @pytest.mark.parametrize("h,w", [(8, 8), (8, 12), (20, 8)])
    def test_upscale_law_fully_convolutional(self, h, w):
        g = Generator(TINY_GEN)
        out = g(torch.rand(1, 3, h, w))
        assert out.shape == (1, 3, 4 * h, 4 * w)

    def test_scale1_zero_blocks_passthrough_shape(self):
        g = Generator(GeneratorConfig(n_rrdb_blocks=0, base_channels=8, growth_channels=4, scale=1))
        out = g(torch.rand(1, 3, 10, 14))
        assert out.shape == (1, 3, 10, 14)

    def test_finite_outputs_at_random_init(self):
        torch.manual_seed(3)
        g = Generator(TINY_GEN)
        out = g(torch.rand(2, 3, 8, 8))
        assert torch.isfinite(out).all()

    def test_parameter_count_stability(self):
        torch.manual_seed(0)
        g1 = Generator(TINY_GEN)
        torch.manual_seed(99)
        g2 = Generator(TINY_GEN)
        s1 = {k: tuple(v.shape) for k, v in g1.state_dict().items()}
        s2 = {k: tuple(v.shape) for k, v in g2.state_dict().items()}
        assert s1 == s2
        assert sum(p.numel() for p in g1.parameters()) == sum(p.numel() for p in g2.parameters())

    def test_gradient_reaches_parameters(self):
        torch.manual_seed(1)
        g = Generator(TINY_GEN)
        g(torch.rand(1, 3, 8, 8)).sum().backward()
        grads = [p.grad.abs().sum().item() for p in g.parameters() if p.grad is not None]
        assert sum(grads) > 0

    def test_non_uniform_batch_rejected(self):
        g = Generator(TINY_GEN)
        with pytest.raises(ShapeError):
            g(torch.rand(8, 8, 3))  # not NCHW

    def test_invalid_scale_rejected(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(scale=3)


class TestDiscriminator:
    def test_codomain_is_open_unit_interval(self):
        d = Discriminator(TINY_DISC)
        p = d(torch.rand(5, 3, 32, 32))
        assert p.shape == (5,)
        assert bool((p > 0).all()) and bool((p < 1).all())
        assert torch.isfinite(p).all()

    def test_duplicates_get_identical_scores(self):
        d = Discriminator(TINY_DISC).eval()
        x = torch.rand(1, 3, 32, 32)
        batch = torch.cat([x, torch.rand(1, 3, 32, 32), x])
        p = d(batch)
        assert p[0].item() == p[2].item()

    def test_wrong_input_size_rejected(self):
        d = Discriminator(TINY_DISC)
        with pytest.raises(ShapeError):
            d(torch.rand(1, 3, 16, 16))

    def test_responds_to_perturbation(self):
        torch.manual_seed(0)
        d = Discriminator(TINY_DISC).eval()
        x = torch.rand(1, 3, 32, 32)
        eps = 1e-2 * torch.randn(1, 3, 32, 32)
        assert d(x).item() != d((x + eps).clamp(0, 1)).item()


class TestFeatureExtractor:
    def test_tap_5_4_downscales_by_16(self):
        # four max-pools precede the 4th conv of block 5 in the layer table
        ext = FeatureExtractor(FeatureExtractorSpec(tap=(5, 4)))
        f = ext(torch.rand(1, 3, 64, 64))
        assert f.shape == (1, 512, 4, 4)

    def test_identical_inputs_identical_features(self):
        ext = small_extractor()
        x = torch.rand(1, 3, 8, 8)
        assert torch.equal(ext(x), ext(x.clone()))

    def test_frozen_across_training_steps(self):
        ext = small_extractor()
        x = torch.rand(1, 3, 8, 8)
        before = ext(x).clone()
        # a training step elsewhere must not touch the extractor
        probe = torch.nn.Linear(2, 1)
        opt = torch.optim.Adam(list(probe.parameters()), lr=0.1)
        probe(torch.rand(4, 2)).sum().backward()
        opt.step()
        assert torch.equal(ext(x), before)
        assert all(not p.requires_grad for p in ext.parameters())

    def test_train_mode_request_is_ignored(self):
        ext = small_extractor()
        ext.train()
        assert not ext.training

    def test_single_channel_rejected_with_guidance(self):
        ext = small_extractor()
        with pytest.raises(ShapeError, match="replicate"):
            ext(torch.rand(1, 1, 8, 8))

    def test_gradient_flows_to_input(self):
        ext = small_extractor()
        x = torch.rand(1, 3, 8, 8, requires_grad=True)
        ext(x).sum().backward()
        assert x.grad is not None and x.grad.abs().sum() > 0

    @pytest.mark.parametrize("dtype,tol", [(torch.float64, 1e-4), (torch.float32, 1e-3)])
    def test_input_gradient_matches_finite_differences(self, dtype, tol):
        # The FD oracle runs on the float64 twin: central differences through
        # ReLU/maxpool kinks are invalid at float32 step sizes.
        ext = small_extractor(tap=(2, 2), dtype=dtype)
        ext64 = small_extractor(tap=(2, 2), dtype=torch.float64)
        rng = np.random.default_rng(7)
        x0 = rng.uniform(0.3, 0.7, (1, 3, 8, 8))

        x = torch.tensor(x0, dtype=dtype, requires_grad=True)
        ext(x).sum().backward()
        autograd = x.grad.numpy().astype(np.float64)

        eps = 1e-6
        fd = np.zeros_like(x0)
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    xp, xm = x0.copy(), x0.copy()
                    xp[0, c, i, j] += eps
                    xm[0, c, i, j] -= eps
                    fp = ext64(torch.tensor(xp)).sum().item()
                    fm = ext64(torch.tensor(xm)).sum().item()
                    fd[0, c, i, j] = (fp - fm) / (2 * eps)
        denom = max(np.abs(fd).max(), 1e-12)
        assert np.abs(autograd - fd).max() / denom < tol

    def test_seeded_weights_reproducible(self):
        e1 = FeatureExtractor(FeatureExtractorSpec(tap=(2, 2), weights="random:5"))
        e2 = FeatureExtractor(FeatureExtractorSpec(tap=(2, 2), weights="random:5"))
        for a, b in zip(e1.parameters(), e2.parameters()):
            assert torch.equal(a, b)

    def test_too_small_input_rejected(self):
        ext = FeatureExtractor(FeatureExtractorSpec(tap=(5, 4)))
        with pytest.raises(ShapeError):
            ext(torch.rand(1, 3, 8, 8))


class TestReplicateChannels:
    def test_replicates_single_channel(self):
        x = torch.rand(2, 1, 4, 4)
        y = models.replicate_channels(x)
        assert y.shape == (2, 3, 4, 4)
        assert torch.equal(y[:, 0], y[:, 2])

    def test_three_channel_passthrough(self):
        x = torch.rand(2, 3, 4, 4)
        assert models.replicate_channels(x) is x


class TestCheckpoints:
    def _payload(self):
        g = Generator(TINY_GEN)
        return {
            "configs": {"generator": models.config_dict(TINY_GEN)},
            "gen_state": g.state_dict(),
            "batch_idx": 7,
        }

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "ckpt.pt"
        models.save_checkpoint(path, self._payload())
        data = models.load_checkpoint(path, expected_configs={"generator": models.config_dict(TINY_GEN)})
        assert data["batch_idx"] == 7
        assert data["configs"]["generator"]["n_rrdb_blocks"] == 2

    def test_mismatched_config_refused(self, tmp_path):
        path = tmp_path / "ckpt.pt"
        models.save_checkpoint(path, self._payload())
        other = models.config_dict(GeneratorConfig(n_rrdb_blocks=5, scale=4))
        with pytest.raises(CheckpointMismatch):
            models.load_checkpoint(path, expected_configs={"generator": other})

    def test_override_flag_allows_mismatch(self, tmp_path):
        path = tmp_path / "ckpt.pt"
        models.save_checkpoint(path, self._payload())
        other = models.config_dict(GeneratorConfig(n_rrdb_blocks=5, scale=4))
        data = models.load_checkpoint(path, expected_configs={"generator": other}, override=True)
        assert data["batch_idx"] == 7

    def test_non_checkpoint_file_refused(self, tmp_path):
        path = tmp_path / "junk.pt"
        torch.save({"surprise": 1}, path)
        with pytest.raises(CheckpointMismatch):
            models.load_checkpoint(path)
