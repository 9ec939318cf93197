import math

import pytest
import torch

from harmony.models.bundle import MAX_LOGIT_SCALE, EncoderBundle
from harmony.models.heads import ContrastiveHead, DistillHead
from harmony.models.text import TextDecoder, TextTransformer
from harmony.models.vision import VisionDecoder, VisionTransformer, patchify, unpatchify
from tests.conftest import small_model_config


def test_patchify_roundtrip():
    torch.manual_seed(0)
    images = torch.randn(2, 3, 16, 16)
    patches = patchify(images, 4)
    assert patches.shape == (2, 16, 48)
    assert torch.equal(unpatchify(patches, 4, (4, 4)), images)


def test_patchify_patch_order_is_row_major():
    images = torch.zeros(1, 3, 8, 8)
    images[0, :, 0:4, 4:8] = 1.0    # second patch of the first row
    patches = patchify(images, 4)
    assert patches[0, 1].min() == 1.0
    assert patches[0, 0].max() == 0.0


def test_vision_transformer_modes():
    torch.manual_seed(0)
    vit = VisionTransformer(16, 4, layers=2, dim=32, heads=2)
    images = torch.randn(2, 3, 16, 16)
    full = vit(images)
    assert full["tokens"].shape == (2, 17, 32)
    assert full["kept_indices"] is None
    mask = torch.zeros(2, 16, dtype=torch.bool)
    mask[:, :12] = True
    sub = vit(images, mask, mode="substitute")
    assert sub["tokens"].shape == (2, 17, 32)
    dropped = vit(images, mask, mode="drop")
    assert dropped["tokens"].shape == (2, 5, 32)   # CLS + 4 kept
    assert dropped["kept_indices"].shape == (2, 4)
    assert torch.equal(dropped["kept_indices"][0], torch.arange(12, 16))


def test_vision_transformer_mask_validation():
    vit = VisionTransformer(16, 4, 1, 32, 2)
    images = torch.randn(2, 3, 16, 16)
    with pytest.raises(ValueError):
        vit(images, mode="drop")
    with pytest.raises(ValueError):
        vit(images, torch.ones(2, 16, dtype=torch.bool), mode="drop")
    uneven = torch.zeros(2, 16, dtype=torch.bool)
    uneven[0, :4] = True
    uneven[1, :8] = True
    with pytest.raises(ValueError):
        vit(images, uneven, mode="drop")
    with pytest.raises(ValueError):
        vit(images, torch.zeros(2, 9, dtype=torch.bool), mode="substitute")
    with pytest.raises(ValueError):
        vit(images, None, mode="telepathy")


def test_vision_transformer_substitute_uses_mask_token():
    torch.manual_seed(0)
    vit = VisionTransformer(16, 4, 1, 32, 2)
    a = torch.randn(1, 3, 16, 16)
    b = a.clone()
    b[0, :, 0:4, 0:4] += 10.0       # change only the first patch's pixels
    mask = torch.zeros(1, 16, dtype=torch.bool)
    mask[0, 0] = True
    out_a = vit(a, mask, mode="substitute")["tokens"]
    out_b = vit(b, mask, mode="substitute")["tokens"]
    assert torch.allclose(out_a, out_b, atol=1e-6)


def test_vision_transformer_local_crop_interpolates_positions():
    torch.manual_seed(0)
    vit = VisionTransformer(16, 4, 1, 32, 2)
    locals_ = torch.randn(2, 3, 8, 8)
    out = vit(locals_)
    assert out["tokens"].shape == (2, 5, 32)


def test_vision_transformer_cls_attention():
    vit = VisionTransformer(16, 4, 2, 32, 2)
    out = vit(torch.randn(2, 3, 16, 16), return_cls_attention=True)
    attn = out["cls_attention"]
    assert attn.shape == (2, 16)
    assert torch.all(attn >= 0)
    # rows sum to one minus the CLS self-attention share
    sums = attn.sum(dim=1)
    assert torch.all(sums <= 1.0 + 1e-5) and torch.all(sums > 0.5)


def test_vision_decoder_restores_sequence_length():
    torch.manual_seed(0)
    decoder = VisionDecoder(16, encoder_dim=32, layers=1, dim=32, heads=2, patch_size=4)
    tokens = torch.randn(2, 5, 32)
    kept = torch.stack([torch.arange(4), torch.arange(12, 16)])
    out = decoder(tokens, kept)
    assert out.shape == (2, 16, 48)
    with pytest.raises(IndexError):
        decoder(tokens, torch.full((2, 4), 99))


def test_text_transformer_pools_at_first_eos():
    torch.manual_seed(0)
    model = TextTransformer(vocab_size=16, context_length=8, layers=1, dim=32, heads=2)
    ids = torch.tensor([[2, 5, 6, 3, 0, 0, 0, 0]])
    out = model(ids)
    assert out["tokens"].shape == (1, 8, 32)
    assert torch.equal(out["pooled"][0], out["tokens"][0, 3])
    two_eos = torch.tensor([[2, 3, 6, 3, 0, 0, 0, 0]])
    out2 = model(two_eos)
    assert torch.equal(out2["pooled"][0], out2["tokens"][0, 1])
    no_eos = torch.tensor([[2, 5, 6, 7, 8, 9, 10, 11]])
    out3 = model(no_eos)
    assert torch.equal(out3["pooled"][0], out3["tokens"][0, -1])


def test_text_transformer_validates_inputs():
    model = TextTransformer(16, 8, 1, 32, 2)
    with pytest.raises(ValueError):
        model(torch.zeros(1, 5, dtype=torch.long))
    with pytest.raises(ValueError):
        model(torch.full((1, 8), 99))


def test_text_decoder_shapes():
    decoder = TextDecoder(vocab_size=16, context_length=8, encoder_dim=32,
                          layers=1, dim=32, heads=2)
    out = decoder(torch.randn(2, 8, 32))
    assert out.shape == (2, 8, 16)


def test_contrastive_head_normalizes():
    torch.manual_seed(0)
    head = ContrastiveHead(8, 4)
    out = head(torch.randn(5, 8))
    assert torch.allclose(out.norm(dim=1), torch.ones(5), atol=1e-5)
    with pytest.raises(ValueError):
        head(torch.zeros(1, 8))


def test_distill_head_unit_norm_directions():
    head = DistillHead(8, out_dim=16)
    directions = head.last_layer_directions
    assert torch.allclose(directions.norm(dim=1), torch.ones(16), atol=1e-6)
    out = head(torch.randn(3, 8))
    assert out.shape == (3, 16)
    # normalized input against unit directions bounds the logits by 1
    assert float(out.detach().abs().max()) <= 1.0 + 1e-5


def test_bundle_teacher_starts_as_copy_and_is_frozen():
    bundle = EncoderBundle(small_model_config())
    for teacher, student in bundle.teacher_student_module_pairs():
        for tp, sp in zip(teacher.parameters(), student.parameters()):
            assert torch.equal(tp, sp)
            assert not tp.requires_grad
            assert sp.requires_grad


def test_bundle_parameter_partition():
    bundle = EncoderBundle(small_model_config())
    student = bundle.student_parameters()
    teacher = bundle.teacher_parameters()
    assert len(student) + len(teacher) == len(list(bundle.parameters()))
    assert any(p is bundle.log_logit_scale for p in student)


def test_bundle_temperature_init_and_clamp():
    bundle = EncoderBundle(small_model_config())
    assert abs(float(bundle.temperature().detach()) - 0.07) < 1e-6
    with torch.no_grad():
        bundle.log_logit_scale.fill_(math.log(1e6))
    assert abs(float(bundle.temperature().detach()) - 1.0 / MAX_LOGIT_SCALE) < 1e-9
