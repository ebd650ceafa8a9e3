import numpy as np
import pytest
import torch

from conftest import central_difference_grad, relative_error
from faceup.data import make_toy_face
from faceup.generator import (
    ModelConfig,
    ProgressiveGenerator,
    ResidualUpsampler,
    load_generator,
    save_checkpoint,
)


@pytest.fixture(scope="module")
def small_gen():
    torch.manual_seed(100)
    return ProgressiveGenerator(ModelConfig(channels=8, res_blocks=1))


class TestResidualUpsampler:
    def test_doubles_spatial_side(self):
        torch.manual_seed(0)
        tun = ResidualUpsampler(channels=8, res_blocks=2)
        feats, img = tun(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 16, 16))
        assert feats.shape == (1, 8, 32, 32)
        assert img.shape == (1, 3, 32, 32)

    def test_rgb_in_unit_interval(self):
        torch.manual_seed(1)
        tun = ResidualUpsampler(channels=8, res_blocks=2)
        _, img = tun(torch.randn(1, 8, 16, 16) * 20, torch.randn(1, 8, 16, 16) * 20)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_zeroed_residual_blocks_are_identity(self):
        torch.manual_seed(2)
        tun = ResidualUpsampler(channels=8, res_blocks=3)
        for block in tun.blocks:
            torch.nn.init.zeros_(block.conv1.weight)
            torch.nn.init.zeros_(block.conv1.bias)
            torch.nn.init.zeros_(block.conv2.weight)
            torch.nn.init.zeros_(block.conv2.bias)
        x = torch.randn(2, 8, 16, 16)
        assert torch.equal(tun.blocks(x), x)

    def test_shape_mismatch_rejected(self):
        tun = ResidualUpsampler(channels=8, res_blocks=1)
        with pytest.raises(ValueError):
            tun(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 8, 8))


class TestHallucinate:
    def test_resolution_chain_and_range(self, small_gen):
        out = small_gen.hallucinate(torch.rand(2, 3, 16, 16))
        assert [t.shape[-1] for t in out.images] == [32, 64, 128]
        assert [t.shape[-1] for t in out.heatmaps] == [16, 32, 64]
        for img in out.images:
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert torch.isfinite(img).all()

    def test_deterministic(self, small_gen):
        lr = torch.rand(1, 3, 16, 16)
        a = small_gen.hallucinate(lr)
        b = small_gen.hallucinate(lr)
        for x, y in zip(a.images + a.heatmaps, b.images + b.heatmaps):
            assert torch.equal(x, y)

    def test_rejects_wrong_resolution(self, small_gen):
        with pytest.raises(ValueError):
            small_gen.hallucinate(torch.rand(1, 3, 8, 8))

    def test_unbatched_input(self, small_gen):
        out = small_gen.hallucinate(torch.rand(3, 16, 16))
        assert out.final.shape == (3, 128, 128)

    def test_partial_forward(self, small_gen):
        out = small_gen(torch.rand(1, 3, 16, 16), up_to_stage=1)
        assert len(out.images) == 1
        assert out.images[0].shape[-1] == 32

    def test_gradients_reach_stage1(self):
        torch.manual_seed(3)
        gen = ProgressiveGenerator(ModelConfig(channels=8, res_blocks=1))
        out = gen(torch.rand(1, 3, 16, 16))
        out.final.sum().backward()
        for p in gen.block_parameters(1):
            assert p.grad is not None
            assert p.grad.abs().max() > 0

    def test_autograd_matches_finite_difference_on_one_parameter(self):
        torch.manual_seed(4)
        gen = ProgressiveGenerator(ModelConfig(channels=4, res_blocks=1)).double()
        lr = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        out = gen(lr)
        out.final.sum().backward()
        bias = gen.face_encoder.layers[0].bias
        auto = bias.grad.clone()

        def loss_of(b):
            with torch.no_grad():
                old = bias.detach().clone()
                bias.copy_(b)
                val = gen(lr).final.sum()
                bias.copy_(old)
            return val

        numeric = central_difference_grad(loss_of, bias.detach().clone())
        assert relative_error(auto, numeric) < 1e-4


class TestPriorOverride:
    def test_override_with_own_estimates_is_identity(self, small_gen):
        lr = torch.rand(1, 3, 16, 16)
        base = small_gen.hallucinate(lr)
        override = {s: base.heatmaps[s] for s in range(3)}
        again = small_gen(lr, override=override)
        for x, y in zip(base.images, again.images):
            assert torch.equal(x, y)

    def test_override_with_gt_landmarks_changes_output(self, small_gen):
        _, lm = make_toy_face(0)
        lr = torch.rand(1, 3, 16, 16)
        base = small_gen.hallucinate(lr)
        edited = small_gen.hallucinate_with_prior_override(lr, lm, {1, 2, 3})
        diff = (base.final - edited.final).abs().max().item()
        assert diff > 0

    def test_override_deterministic(self, small_gen):
        _, lm = make_toy_face(1)
        lr = torch.rand(1, 3, 16, 16)
        a = small_gen.hallucinate_with_prior_override(lr, lm, {1, 3})
        b = small_gen.hallucinate_with_prior_override(lr, lm, {1, 3})
        assert torch.equal(a.final, b.final)

    def test_invalid_stage_subset_rejected(self, small_gen):
        _, lm = make_toy_face(2)
        with pytest.raises(ValueError):
            small_gen.hallucinate_with_prior_override(torch.rand(1, 3, 16, 16), lm, {0, 4})

    def test_wrong_landmark_count_rejected(self, small_gen):
        from faceup.data import Landmarks

        lm = Landmarks(points=np.zeros((5, 2)))
        with pytest.raises(ValueError):
            small_gen.hallucinate_with_prior_override(torch.rand(1, 3, 16, 16), lm, {1})

    def test_prior_bypass_changes_output(self, small_gen):
        lr = torch.rand(1, 3, 16, 16)
        base = small_gen.hallucinate(lr)
        bypassed = small_gen(lr, bypass_priors=True)
        assert (base.final - bypassed.final).abs().max().item() > 0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, small_gen):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_gen, step=42, extra={"note": "test"})
        loaded, payload = load_generator(path)
        assert payload["step"] == 42
        assert payload["extra"]["note"] == "test"
        assert loaded.config == small_gen.config
        lr = torch.rand(1, 3, 16, 16)
        assert torch.equal(loaded.hallucinate(lr).final, small_gen.hallucinate(lr).final)

    def test_parameters_bitwise_equal(self, tmp_path, small_gen):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_gen)
        loaded, _ = load_generator(path)
        for (na, a), (nb, b) in zip(
            sorted(small_gen.state_dict().items()), sorted(loaded.state_dict().items())
        ):
            assert na == nb
            assert torch.equal(a, b)
