import numpy as np
import pytest
from scipy.ndimage import label

from harmony.masking import blockwise_mask, clip_image_masking, mae_mask, sample_mim_ratio


def test_mae_mask_exact_count(rng):
    plan = mae_mask(16, 0.75, rng)
    assert plan.count == 12
    assert plan.mask.shape == (16,)
    for num, ratio in ((64, 0.5), (16, 0.3), (100, 0.9)):
        assert mae_mask(num, ratio, rng).count == int(round(ratio * num))


def test_mae_mask_rejects_degenerate_ratios(rng):
    for ratio in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            mae_mask(16, ratio, rng)
    with pytest.raises(ValueError):
        mae_mask(2, 0.8, rng)   # round(1.6) = 2 leaves nothing to encode


def test_blockwise_mask_exact_count_and_cap(rng):
    for _ in range(50):
        plan = blockwise_mask((8, 8), 0.5, rng)
        assert plan.count == 32
    assert blockwise_mask((4, 4), 0.3, rng).count == int(0.3 * 16)
    with pytest.raises(ValueError):
        blockwise_mask((8, 8), 0.6, rng)
    assert blockwise_mask((8, 8), 0.0, rng).count == 0


def test_blockwise_masks_are_more_contiguous_than_random(rng):
    """Rectangular blocks yield far fewer connected regions than iid masks."""
    def components(mask2d):
        return label(mask2d)[1]

    block_counts, random_counts = [], []
    for _ in range(100):
        plan = blockwise_mask((8, 8), 0.5, rng)
        block_counts.append(components(plan.mask.reshape(8, 8)))
        flat = np.zeros(64, dtype=bool)
        flat[rng.choice(64, size=32, replace=False)] = True
        random_counts.append(components(flat.reshape(8, 8)))
    assert np.mean(block_counts) < np.mean(random_counts)
    # each drawn rectangle has area >= 1, so some mask must be a single region
    assert min(block_counts) >= 1


def test_sample_mim_ratio_bounds(rng):
    values = [sample_mim_ratio(rng) for _ in range(2000)]
    assert all(0.0 <= v <= 0.5 for v in values)
    assert min(values) == 0.0          # the 0.0 branch clips at zero often
    assert max(values) <= 0.5
    near_low = sum(v < 0.2 for v in values)
    near_high = sum(v >= 0.2 for v in values)
    assert near_low > 0 and near_high > 0


def test_clip_image_masking_policies(rng):
    none = clip_image_masking(16, "none", rng)
    assert none.count == 0
    half = clip_image_masking(16, "random_50", rng)
    assert half.count == 8
    attention = np.arange(16, dtype=float)
    attentive = clip_image_masking(16, "attentive_50", rng, attention)
    # keeps the highest-attention patches, so the low half is dropped
    assert attentive.mask[:8].all() and not attentive.mask[8:].any()


def test_clip_image_masking_errors(rng):
    with pytest.raises(ValueError):
        clip_image_masking(16, "attentive_50", rng)
    with pytest.raises(ValueError):
        clip_image_masking(16, "attentive_50", rng, np.ones(4))
    with pytest.raises(ValueError):
        clip_image_masking(16, "bogus", rng)
