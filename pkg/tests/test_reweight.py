import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teachcut.changepoint import ChangeDecision
from teachcut.reweight import (_snap_release_segment, build_prefix_mask,
                               fixed_prefix_mask, permute_release_points,
                               rescale_advantages)
from teachcut.segmentation import SegmentIndex


def decision(release_segment, accepted=True, gain=10.0):
    return ChangeDecision(release_segment, accepted, gain if accepted else 0.0,
                          1.0, 0.1 if accepted else None)


def index(counts, num_tokens=None):
    lists, start = [], 0
    for c in counts:
        lists.append(list(range(start, start + c)))
        start += c
    return SegmentIndex.from_lists(lists, num_tokens or start)


def test_prefix_mask_covers_retained_segments():
    seg = index([2, 1, 2])
    mask = build_prefix_mask(seg, decision(2), 5)
    np.testing.assert_array_equal(mask, [1, 1, 1, 0, 0])


def test_prefix_mask_rejected_keeps_everything():
    seg = index([2, 1, 2])
    mask = build_prefix_mask(seg, decision(3, accepted=False), 5)
    np.testing.assert_array_equal(mask, np.ones(5))


def test_prefix_mask_unassigned_tokens_stay_zero():
    seg = SegmentIndex.from_lists([[1, 2]], 4)
    mask = build_prefix_mask(seg, decision(1), 4)
    np.testing.assert_array_equal(mask, [0, 1, 1, 0])


def test_prefix_mask_range_check():
    seg = SegmentIndex.from_lists([[0, 1, 2]], 3)
    with pytest.raises(ValueError, match="out of range"):
        build_prefix_mask(seg, decision(1), 2)


def test_rescale_frozen_case():
    rescaled, scale = rescale_advantages(np.array([1.0, 2.0, 3.0, 4.0]),
                                         np.ones(4),
                                         np.array([1.0, 1.0, 0.0, 0.0]))
    assert scale == 2.0
    np.testing.assert_array_equal(rescaled, [2.0, 4.0, 0.0, 0.0])


def test_rescale_eps_floor_when_nothing_kept():
    rescaled, scale = rescale_advantages(np.array([1.0, 1.0]),
                                         np.array([1.0, 1.0]),
                                         np.zeros(2))
    assert scale == pytest.approx(2.0 / 1e-8)
    np.testing.assert_array_equal(rescaled, [0.0, 0.0])


def test_rescale_full_mask_is_identity():
    rng = np.random.default_rng(3)
    advantages = rng.normal(size=50)
    loss = rng.uniform(0.1, 1.0, size=50)
    rescaled, scale = rescale_advantages(advantages, loss, np.ones(50))
    assert scale == 1.0
    np.testing.assert_array_equal(rescaled, advantages)


def test_rescale_length_mismatch():
    with pytest.raises(ValueError, match="lengths differ"):
        rescale_advantages(np.ones(3), np.ones(2), np.ones(3))


@settings(max_examples=150)
@given(st.data())
def test_mass_conservation_property(data):
    n = data.draw(st.integers(1, 40))
    advantages = np.array(data.draw(st.lists(
        st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n)))
    loss = np.array(data.draw(st.lists(
        st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)))
    prefix = np.array(data.draw(st.lists(
        st.sampled_from([0.0, 1.0]), min_size=n, max_size=n)))
    kept = float((loss * prefix).sum())
    if kept <= 1e-8:
        return
    rescaled, scale = rescale_advantages(advantages, loss, prefix)
    assert float((loss * prefix).sum()) * scale == pytest.approx(
        float(loss.sum()), rel=1e-9, abs=1e-12)
    np.testing.assert_array_equal(rescaled, advantages * prefix * scale)


def test_fixed_prefix_mask():
    np.testing.assert_array_equal(fixed_prefix_mask(4, 2), [1, 1, 0, 0])
    np.testing.assert_array_equal(fixed_prefix_mask(3, 7), [1, 1, 1])
    with pytest.raises(ValueError, match="at least 1"):
        fixed_prefix_mask(4, 0)


def test_snap_picks_first_boundary_at_or_after_the_fraction():
    # source kept 5 of 10; target segments cover 3/6/9 of 9 tokens
    cums = np.array([3, 6, 9])
    assert _snap_release_segment(cums, 5, 10, 9) == 2
    # exact boundary snaps to itself
    assert _snap_release_segment(np.array([2, 4, 8]), 4, 8, 8) == 2
    # nothing reaches the fraction: clamp to the last segment
    assert _snap_release_segment(np.array([1, 2]), 9, 10, 4) == 2


def test_permute_homogeneous_batch_preserves_positions_exactly():
    seg = index([2, 2, 2, 2])
    items = [(seg, decision(1)), (seg, decision(3)),
             (seg, decision(4, accepted=False)), (seg, decision(2))]
    assignments = permute_release_points(items, seed=5)
    before = sorted((d.release_segment if d.accepted else 4) for _, d in items)
    after = sorted(a.release_segment for a in assignments)
    assert before == after
    rel_before = sorted(
        (seg.cumulative_token_counts()[d.release_segment - 1] / 8
         if d.accepted else 1.0) for _, d in items)
    rel_after = sorted(a.relative_position for a in assignments)
    assert rel_before == rel_after


def test_permute_is_seed_deterministic_and_seed_sensitive():
    seg = index([1, 1, 1, 1, 1])
    items = [(seg, decision(k)) for k in (1, 2, 3, 4)]
    a = permute_release_points(items, seed=11)
    b = permute_release_points(items, seed=11)
    assert a == b
    seen = {tuple(x.source_index for x in permute_release_points(items, seed=s))
            for s in range(8)}
    assert len(seen) > 1


def test_permute_rejected_source_transfers_full_supervision():
    items = [(index([2, 2]), decision(2, accepted=False)),
             (index([1, 1, 1, 1]), decision(1))]
    assignments = permute_release_points(items, seed=0)
    for a in assignments:
        if not a.accepted:
            assert a.relative_position == 1.0
            target_index = assignments.index(a)
            assert a.release_segment == len(items[target_index][0])


def test_permute_empty_batch_rejected():
    with pytest.raises(ValueError, match="empty batch"):
        permute_release_points([], seed=0)


def test_permute_carries_source_gains():
    seg = index([1, 1])
    items = [(seg, ChangeDecision(1, True, 12.5, 1.0, 0.0)),
             (seg, ChangeDecision(1, True, 7.25, 1.0, 0.0))]
    assignments = permute_release_points(items, seed=2)
    assert sorted(a.bic_gain for a in assignments) == [7.25, 12.5]
    for a in assignments:
        assert a.bic_gain == items[a.source_index][1].bic_gain
