import math

import numpy as np
import pytest
import torch

from jscc.codec import (
    Codec,
    CodecConfig,
    ImageBatch,
    LatentBlock,
    bandwidth_ratio,
    features_to_latent,
    latent_length,
    latent_to_features,
    mean_symbol_power,
    normalize_power,
)
from jscc.constellation import build_qam
from jscc.layers import GDN
from jscc.quantizer import hard_quantize


class TestShapes:
    def test_k_for_paper_scale_config(self):
        cfg = CodecConfig(c_out=16, base_width=8, downsample_factor=4)
        assert latent_length(cfg, 128, 128) == 8192
        assert bandwidth_ratio(cfg, 128, 128, 3) == pytest.approx(1 / 6)

    def test_k_for_small_config(self):
        cfg = CodecConfig(c_out=2, base_width=8, downsample_factor=4)
        assert latent_length(cfg, 32, 32) == 64
        assert bandwidth_ratio(cfg, 32, 32, 3) == pytest.approx(1 / 48)

    def test_k_for_kodak_shape(self):
        cfg = CodecConfig(c_out=2, base_width=8, downsample_factor=4)
        assert latent_length(cfg, 512, 768) == 24576
        assert bandwidth_ratio(cfg, 512, 768, 3) == pytest.approx(1 / 48)

    def test_unit_bandwidth_ratio(self):
        cfg = CodecConfig(c_out=6, base_width=8, downsample_factor=1)
        assert bandwidth_ratio(cfg, 16, 16, 3) == pytest.approx(1.0)

    def test_indivisible_size_rejected(self):
        cfg = CodecConfig(c_out=4, base_width=8, downsample_factor=4)
        with pytest.raises(ValueError):
            latent_length(cfg, 30, 32)

    def test_odd_c_out_rejected(self):
        with pytest.raises(ValueError):
            CodecConfig(c_out=5)

    def test_non_power_of_two_factor_rejected(self):
        with pytest.raises(ValueError):
            CodecConfig(downsample_factor=3)


class TestLatentPacking:
    def test_round_trip_bit_exact(self):
        gen = torch.Generator().manual_seed(0)
        feat = torch.randn(2, 6, 4, 5, generator=gen)
        z = features_to_latent(feat)
        assert z.shape == (2, 3 * 4 * 5)
        back = latent_to_features(z, 6, 4, 5, dtype=torch.float32)
        np.testing.assert_array_equal(back.numpy(), feat.numpy())

    def test_channel_pairing_convention(self):
        feat = torch.zeros(1, 4, 1, 1)
        feat[0, 0] = 1.0  # channel 0 -> real of symbol 0
        feat[0, 1] = 2.0  # channel 1 -> imag of symbol 0
        feat[0, 2] = 3.0
        feat[0, 3] = 4.0
        z = features_to_latent(feat)[0]
        assert complex(z[0]) == 1 + 2j
        assert complex(z[1]) == 3 + 4j

    def test_mismatched_length_rejected(self):
        with pytest.raises(ValueError):
            latent_to_features(torch.zeros(1, 10, dtype=torch.complex128), 4, 2, 2)


@pytest.fixture(scope="module")
def codec():
    torch.manual_seed(0)
    return Codec(CodecConfig(c_out=4, base_width=8, downsample_factor=2))


class TestCodecForward:
    def test_encode_shape_and_dtype(self, codec):
        batch = ImageBatch(pixels=torch.rand(2, 16, 16, 3) * 255)
        latent = codec.encode(batch)
        assert isinstance(latent, LatentBlock)
        assert latent.z.shape == (2, latent_length(codec.cfg, 16, 16))
        assert latent.z.dtype == torch.complex128

    def test_decode_restores_image_shape(self, codec):
        for size in (16, 24, 32):
            batch = ImageBatch(pixels=torch.rand(1, size, size, 3) * 255)
            with torch.no_grad():
                z = codec.encode(batch).z
                out = codec.decode(z, size, size)
            assert out.pixels.shape == (1, size, size, 3)
            assert float(out.pixels.min()) >= 0.0
            assert float(out.pixels.max()) <= 255.0

    def test_identical_images_give_identical_latents(self, codec):
        img = torch.rand(1, 16, 16, 3) * 255
        batch = ImageBatch(pixels=torch.cat([img, img, img]))
        z = codec.encode(batch).z.detach()
        np.testing.assert_array_equal(
            torch.view_as_real(z[0]).numpy(), torch.view_as_real(z[1]).numpy()
        )
        np.testing.assert_array_equal(
            torch.view_as_real(z[0]).numpy(), torch.view_as_real(z[2]).numpy()
        )

    def test_gradients_reach_all_parameters(self):
        torch.manual_seed(1)
        codec = Codec(CodecConfig(c_out=4, base_width=16, downsample_factor=2))
        batch = ImageBatch(pixels=torch.rand(4, 16, 16, 3) * 255)
        z = codec.encode(batch).z
        out = codec.decode(z, 16, 16)
        ref = batch.pixels / 255.0
        ((out.pixels / 255.0 - ref) ** 2).mean().backward()
        total = 0
        nonzero = 0
        for name, p in codec.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name
            total += 1
            nonzero += int(bool((p.grad != 0).any()))
        assert nonzero / total >= 0.99

    def test_quantized_outputs_respect_peak_symbol_power(self, codec):
        const = build_qam(16, 1.0)
        batch = ImageBatch(pixels=torch.rand(2, 16, 16, 3) * 255)
        z_bar = hard_quantize(codec.encode(batch).z, const)
        peak = float(const.points.abs().pow(2).max())
        assert float(z_bar.abs().pow(2).max()) <= peak + 1e-12
        assert mean_symbol_power(z_bar) <= peak + 1e-12


class TestGdn:
    @pytest.mark.parametrize("inverse", [False, True])
    def test_finite_for_wild_inputs(self, inverse):
        torch.manual_seed(2)
        layer = GDN(6, inverse=inverse)
        for scale in (0.0, 1.0, 1e3, 1e6):
            x = torch.randn(2, 6, 5, 5) * scale
            y = layer(x)
            assert torch.isfinite(y).all()

    def test_identity_like_at_init_for_small_inputs(self):
        # beta=1, gamma=0.1I: denominator is ~1 for small activations
        layer = GDN(3)
        x = torch.full((1, 3, 2, 2), 1e-3)
        y = layer(x)
        np.testing.assert_allclose(y.detach().numpy(), x.numpy(), rtol=1e-3)

    def test_parameters_trainable(self):
        layer = GDN(4)
        x = torch.randn(1, 4, 3, 3)
        layer(x).sum().backward()
        assert layer.beta.grad is not None
        assert layer.gamma.grad is not None
        assert torch.isfinite(layer.beta.grad).all()


class TestNormalizePower:
    def test_power_already_exact_is_identity(self):
        z = torch.tensor([[2.0 + 0j, 0j, 0j, 0j]])
        out = normalize_power(z, 1.0)
        np.testing.assert_allclose(
            torch.view_as_real(out).numpy(), torch.view_as_real(z).numpy(), atol=1e-12
        )
        assert mean_symbol_power(out) == pytest.approx(1.0, abs=1e-12)

    def test_random_latents_hit_budget_exactly(self):
        gen = torch.Generator().manual_seed(3)
        z = torch.view_as_complex(torch.randn(4, 64, 2, generator=gen, dtype=torch.float64)) * 7
        out = normalize_power(z, 2.5)
        norms = out.abs().pow(2).sum(dim=-1)
        np.testing.assert_allclose(norms.numpy(), 64 * 2.5, rtol=1e-9)

    def test_zero_latent_rejected(self):
        with pytest.raises(ValueError):
            normalize_power(torch.zeros(1, 8, dtype=torch.complex128), 1.0)

    def test_gradient_flows(self):
        z_ri = torch.randn(1, 8, 2, dtype=torch.float64, requires_grad=True)
        out = normalize_power(torch.view_as_complex(z_ri), 1.0)
        torch.view_as_real(out).sum().backward()
        assert torch.isfinite(z_ri.grad).all()


class TestImageBatch:
    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ValueError):
            ImageBatch(pixels=torch.zeros(1, 8, 8, 4))

    def test_rejects_missing_batch_dim(self):
        with pytest.raises(ValueError):
            ImageBatch(pixels=torch.zeros(8, 8, 3))
