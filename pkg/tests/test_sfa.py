import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mosaic_loop
from usdemosaic import ops
from usdemosaic.sfa import (
    SFAPattern, TransformSpec, apply_transform, inverse_pixel_shuffle, load_pattern, mask_of,
    mosaic_sample, parse_pattern, pixel_shuffle, random_transform, save_pattern, sparse_expand,
)


@st.composite
def patterns(draw, max_side=4):
    r1 = draw(st.integers(1, max_side))
    r2 = draw(st.integers(1, max_side))
    perm = draw(st.permutations(list(range(r1 * r2))))
    return SFAPattern(np.array(perm).reshape(r1, r2))


def test_pattern_rejects_out_of_range_entries():
    with pytest.raises(ValueError):
        SFAPattern(np.array([[0, 4]]), bands=4)
    with pytest.raises(ValueError):
        SFAPattern(np.array([[0, -1]]))


def test_pattern_file_round_trip(tmp_path, p33):
    path = tmp_path / "p.txt"
    save_pattern(p33, path)
    assert load_pattern(path) == p33
    assert parse_pattern(str(path)) == p33
    assert parse_pattern("5x5") == SFAPattern.row_major(5, 5)


def test_pattern_file_shape_mismatch(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("r1 2\nr2 2\nB 4\nlayout\n0 1 2\n3 0 1\n")
    with pytest.raises(ValueError):
        load_pattern(path)


def test_mosaic_of_constant_cube_is_constant(p33):
    cube = np.full((7, 8, 9), 0.37)
    assert np.all(mosaic_sample(cube, p33) == 0.37)


def test_mosaic_of_band_index_cube_tiles_layout(p22):
    cube = np.broadcast_to(np.arange(4.0), (4, 4, 4))
    np.testing.assert_array_equal(mosaic_sample(cube, p22), np.tile([[0, 1], [2, 3]], (2, 2)))


def test_mosaic_matches_loop_oracle(rng):
    pattern = SFAPattern(np.array([[3, 1], [0, 2]]))
    cube = rng.random((6, 6, 4))
    np.testing.assert_array_equal(mosaic_sample(cube, pattern), mosaic_loop(cube, pattern.layout.tolist()))


def test_mosaic_rejects_band_mismatch(p22):
    with pytest.raises(ValueError):
        mosaic_sample(np.zeros((4, 4, 3)), p22)


def test_mask_degenerate_and_single_period(p22):
    np.testing.assert_array_equal(mask_of(SFAPattern(np.array([[0]])), 3, 2), np.ones((3, 2, 1)))
    m = mask_of(p22, 2, 2)
    for b, (y, x) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        expected = np.zeros((2, 2))
        expected[y, x] = 1
        np.testing.assert_array_equal(m[..., b], expected)


@settings(max_examples=40, deadline=None)
@given(patterns(), st.integers(1, 13), st.integers(1, 13))
def test_mask_partition_of_unity(pattern, h, w):
    m = mask_of(pattern, h, w)
    assert np.all(m.sum(axis=2) == 1)
    for y in range(h):
        for x in range(w):
            assert m[y, x, pattern.layout[y % pattern.r1, x % pattern.r2]] == 1


def test_sparse_expand_constant_and_zero(p22):
    cube = sparse_expand(np.full((4, 4), 2.5), p22)
    np.testing.assert_array_equal(cube, 2.5 * mask_of(p22, 4, 4))
    assert not sparse_expand(np.zeros((4, 6)), p22).any()


@settings(max_examples=40, deadline=None)
@given(patterns(), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_sparse_expand_round_trip(pattern, h, w, seed):
    y = np.random.default_rng(seed).random((h, w))
    np.testing.assert_array_equal(mosaic_sample(sparse_expand(y, pattern), pattern), y)


def test_flip_and_rotate_identities(rng, p33):
    cube = rng.random((9, 6, 9))
    for axis in ("horizontal", "vertical"):
        t = TransformSpec("flip", axis=axis)
        np.testing.assert_array_equal(apply_transform(apply_transform(cube, t, p33), t, p33), cube)
    out = cube
    for _ in range(4):
        out = apply_transform(out, TransformSpec("rotate", k=1), p33)
    np.testing.assert_array_equal(out, cube)


@settings(max_examples=30, deadline=None)
@given(patterns(), st.integers(0, 2**32 - 1))
def test_period_shift_commutes_with_sampling(pattern, seed):
    cube = np.random.default_rng(seed).random((3 * pattern.r1, 2 * pattern.r2, pattern.bands))
    spec = TransformSpec("shift", i=pattern.r1, j=pattern.r2)
    lhs = mosaic_sample(apply_transform(cube, spec, pattern), pattern)
    base = mosaic_loop(cube, pattern.layout.tolist())
    h, w = base.shape
    rhs = np.array([[base[(y - pattern.r1) % h, (x - pattern.r2) % w] for x in range(w)] for y in range(h)])
    np.testing.assert_array_equal(lhs, rhs)


@pytest.mark.parametrize("spec", [
    TransformSpec("shift", i=2, j=3), TransformSpec("flip", axis="vertical"), TransformSpec("rotate", k=3),
])
def test_permutation_transforms_preserve_values(rng, p33, spec):
    cube = rng.random((9, 9, 9))
    out = apply_transform(cube, spec, p33)
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(cube, axis=None))


def test_shift_bounds_are_checked(p22):
    with pytest.raises(ValueError):
        apply_transform(np.zeros((4, 4, 4)), TransformSpec("shift", i=0, j=1), p22)
    with pytest.raises(ValueError):
        apply_transform(np.zeros((4, 4, 4)), TransformSpec("resize", scale=3.0), p22)


@pytest.mark.parametrize("scale", [0.5, 0.77, 1.3, 2.0])
def test_resize_output_is_period_multiple(rng, p33, scale):
    cube = rng.random((12, 15, 9))
    out = apply_transform(cube, TransformSpec("resize", scale=scale), p33)
    assert out.shape[0] % 3 == 0 and out.shape[1] % 3 == 0
    assert out.shape[2] == 9
    assert out.min() >= cube.min() - 1e-12 and out.max() <= cube.max() + 1e-12


def test_resize_below_one_period_rejected(p33):
    with pytest.raises(ValueError):
        apply_transform(np.zeros((4, 4, 9)), TransformSpec("resize", scale=0.5), p33)


@pytest.mark.parametrize("spec", [
    TransformSpec("shift", i=1, j=2), TransformSpec("flip", axis="horizontal"),
    TransformSpec("rotate", k=1), TransformSpec("resize", scale=0.6), TransformSpec("resize", scale=1.7),
])
def test_torch_transforms_match_numpy(rng, p33, spec):
    cube = rng.random((12, 15, 9))
    ref = apply_transform(cube, spec, p33)
    got = ops.apply_transform(torch.as_tensor(cube.transpose(2, 0, 1))[None], spec, p33)[0]
    np.testing.assert_allclose(got.numpy().transpose(1, 2, 0), ref, atol=1e-12)


def test_shift_policy_draws_only_shifts(p33):
    rng = np.random.default_rng(0)
    for _ in range(500):
        spec = random_transform(rng, p33, "shift")
        assert spec.kind == "shift"
        assert 1 <= spec.i <= 3 and 1 <= spec.j <= 3


def test_random_transform_deterministic(p33):
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    a = [random_transform(r1, p33) for _ in range(50)]
    b = [random_transform(r2, p33) for _ in range(50)]
    assert a == b


def test_random_transform_uniform_frequencies(p33):
    rng = np.random.default_rng(1)
    n = 10_000
    kinds = [random_transform(rng, p33, "mixed").kind for _ in range(n)]
    sigma = np.sqrt(n * 0.25 * 0.75)
    for kind in ("shift", "flip", "rotate", "resize"):
        assert abs(kinds.count(kind) - n / 4) < 5 * sigma
    for spec in (random_transform(rng, p33) for _ in range(200)):
        spec.validate(p33)


def test_ips_examples():
    subs = inverse_pixel_shuffle(np.array([[1, 2], [3, 4]]), 2, 2)
    assert subs.tolist() == [[[1]], [[2]], [[3]], [[4]]]
    assert np.all(inverse_pixel_shuffle(np.full((6, 4), 7.0), 3, 2) == 7.0)


def test_ips_collects_phase_pixels(rng):
    band = rng.random((9, 8))
    subs = inverse_pixel_shuffle(band, 3, 2)
    for p in range(3):
        for q in range(2):
            np.testing.assert_array_equal(subs[p * 2 + q], band[p::3, q::2])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_ips_inverse_is_identity(r1, r2, m, n, seed):
    band = np.random.default_rng(seed).random((r1 * m, r2 * n))
    np.testing.assert_array_equal(pixel_shuffle(inverse_pixel_shuffle(band, r1, r2), r1, r2), band)


def test_ips_crops_partial_periods(rng):
    band = rng.random((7, 5))
    assert inverse_pixel_shuffle(band, 2, 2).shape == (4, 3, 2)
