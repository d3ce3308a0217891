"""Augmentation sampling, affine construction, resampling, noise."""

import numpy as np
import pytest

from ttaseg import (
    AffineTransform,
    AugmentationParams,
    AugmentationPrior,
    LabelMap,
    PhantomSpec,
    ProbMap,
    Volume,
    add_noise,
    apply_augmentation,
    generate_phantom,
    inverse_spatial,
    invert,
    params_to_affine,
    resample,
    sample_params,
    volume_center,
)
from ttaseg.errors import SingularTransformError


def rng_params(seed, prior=None):
    prior = prior or AugmentationPrior()
    return sample_params(prior, np.random.default_rng(seed))


class TestPrior:
    def test_scalar_flip_prob_broadcasts(self):
        prior = AugmentationPrior(flip_prob=0.25)
        assert prior.flip_prob == (0.25, 0.25, 0.25)

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ValueError, match="lo"):
            AugmentationPrior(scale_range=(1.2, 0.8))
        with pytest.raises(ValueError, match="noise_sigma"):
            AugmentationPrior(noise_sigma=-0.1)

    def test_json_round_trip(self):
        prior = AugmentationPrior(flip_prob=(1.0, 0.0, 0.5),
                                  rotation_range=(0.0, 0.3),
                                  scale_range=(0.9, 1.1),
                                  noise_sigma=0.02,
                                  rotation_axes=(False, False, True))
        back = AugmentationPrior.from_json(prior.to_json())
        assert back == prior


class TestSampleParams:
    def test_degenerate_prior_yields_identity(self):
        params = rng_params(0, AugmentationPrior.identity())
        assert params.flips == (False, False, False)
        assert params.rotations == (0.0, 0.0, 0.0)
        assert params.scale == (1.0, 1.0, 1.0)

    def test_empirical_distributions(self):
        prior = AugmentationPrior()
        rng = np.random.default_rng(42)
        draws = [sample_params(prior, rng) for _ in range(10_000)]
        flips = np.array([d.flips for d in draws], dtype=float)
        for axis in range(3):
            assert 0.47 <= flips[:, axis].mean() <= 0.53
        scales = np.array([d.scale[0] for d in draws])
        assert scales.min() >= 0.8
        assert scales.max() <= 1.2
        rotations = np.array([d.rotations for d in draws])
        assert rotations.min() >= 0.0
        assert rotations.max() < 2 * np.pi

    def test_same_seed_same_stream(self):
        prior = AugmentationPrior()
        a = [rng_params(s) for s in range(5)]
        b = [rng_params(s) for s in range(5)]
        assert a == b

    def test_disabled_rotation_axes_stay_zero(self):
        prior = AugmentationPrior(rotation_axes=(False, False, True))
        params = rng_params(1, prior)
        assert params.rotations[0] == 0.0
        assert params.rotations[1] == 0.0
        assert params.rotations[2] != 0.0

    def test_per_axis_scale(self):
        prior = AugmentationPrior(per_axis_scale=True)
        params = rng_params(2, prior)
        assert len(set(params.scale)) == 3


class TestParamsToAffine:
    def test_identity_params_exact_identity(self):
        m = params_to_affine(AugmentationParams.identity(), (7.5, 7.5, 7.5)).matrix
        assert np.array_equal(m, np.eye(4))

    def test_quarter_turn_about_center(self):
        center = np.array([10.0, 10.0, 10.0])
        params = AugmentationParams(flips=(False,) * 3,
                                    rotations=(0.0, 0.0, np.pi / 2),
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, center)
        # output->input map sends the image of a point back to its source:
        # the source center+(1,0,0) appears at output center+(0,1,0)
        out_point = np.append(center + (0.0, 1.0, 0.0), 1.0)
        src = a.matrix @ out_point
        assert np.allclose(src[:3], center + (1.0, 0.0, 0.0), atol=1e-6)

    def test_scale_produces_reciprocal_diagonal(self):
        params = AugmentationParams(flips=(False,) * 3, rotations=(0.0,) * 3,
                                    scale=(2.0, 2.0, 2.0), noise_seed=0)
        a = params_to_affine(params, (0.0, 0.0, 0.0))
        assert np.allclose(np.diag(a.matrix)[:3], 0.5)

    def test_flip_produces_negative_diagonal(self):
        params = AugmentationParams(flips=(True, False, False),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, (5.0, 5.0, 5.0))
        assert a.matrix[0, 0] == -1.0
        assert a.matrix[0, 3] == 10.0  # 2 * center


class TestInvert:
    def test_identity(self):
        a = AffineTransform.identity()
        assert np.array_equal(invert(a).matrix, np.eye(4))

    def test_flip_is_involution(self):
        params = AugmentationParams(flips=(True, True, False),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, (7.5, 7.5, 7.5))
        assert np.allclose(invert(a).matrix, a.matrix, atol=1e-12)

    def test_random_affines_product_is_identity(self):
        # matrix-product oracle: a @ invert(a) == I
        for seed in range(20):
            params = rng_params(seed)
            a = params_to_affine(params, (15.5, 15.5, 15.5))
            prod = a.matrix @ invert(a).matrix
            assert np.abs(prod - np.eye(4)).max() < 1e-9

    def test_singular_rejected(self):
        with pytest.raises(SingularTransformError):
            AffineTransform(np.diag([1.0, 1.0, 0.0, 1.0]))


def box_volume(n=16, lo=4, hi=9):
    data = np.zeros((n, n, n), dtype=np.float32)
    data[lo:hi, lo:hi, lo:hi] = 1.0
    return Volume(data)


class TestResample:
    def test_identity_nearest_bit_identical(self):
        rng = np.random.default_rng(0)
        v = Volume(rng.random((2, 6, 6, 6)).astype(np.float32))
        out = resample(v, AffineTransform.identity(), "nearest")
        assert np.array_equal(out.data, v.data)

    def test_identity_trilinear_bit_identical(self):
        rng = np.random.default_rng(1)
        v = Volume(rng.random((2, 6, 6, 6)).astype(np.float32))
        out = resample(v, AffineTransform.identity(), "trilinear")
        assert np.array_equal(out.data, v.data)

    def test_flip_twice_restores_exactly(self):
        rng = np.random.default_rng(2)
        v = Volume(rng.random((1, 8, 8, 8)).astype(np.float32))
        params = AugmentationParams(flips=(True, False, True),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(v.dims))
        once = resample(v, a, "nearest")
        twice = resample(once, a, "nearest")
        assert not np.array_equal(once.data, v.data)
        assert np.array_equal(twice.data, v.data)

    def test_quarter_turn_box_matches_closed_form(self):
        # closed-form voxel-set oracle for a 90 degree z rotation
        n, lo, hi = 16, 4, 9
        v = box_volume(n, lo, hi)
        params = AugmentationParams(flips=(False,) * 3,
                                    rotations=(0.0, 0.0, np.pi / 2),
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(v.dims))
        out = resample(v, a, "nearest")
        expected = np.zeros((n, n, n), dtype=np.float32)
        for bx in range(lo, hi):
            for by in range(lo, hi):
                for bz in range(lo, hi):
                    # forward rotation Rz(+90): (dx, dy) -> (-dy, dx)
                    expected[(n - 1) - by, bx, bz] = 1.0
        assert np.array_equal(out.data[0], expected)

    def test_quarter_turn_is_exact_permutation(self):
        rng = np.random.default_rng(3)
        v = Volume(rng.random((1, 12, 12, 12)).astype(np.float32))
        params = AugmentationParams(flips=(False,) * 3,
                                    rotations=(0.0, np.pi / 2, 0.0),
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(v.dims))
        out = resample(v, a, "nearest")
        assert np.array_equal(np.sort(out.data.ravel()), np.sort(v.data.ravel()))

    def test_trilinear_respects_bounds(self):
        rng = np.random.default_rng(4)
        v = Volume(rng.uniform(-3.0, 5.0, (1, 10, 10, 10)).astype(np.float32))
        for seed in range(5):
            params = rng_params(seed)
            a = params_to_affine(params, volume_center(v.dims))
            out = resample(v, a, "trilinear", fill=0.0)
            assert out.data.min() >= min(v.data.min(), 0.0) - 1e-6
            assert out.data.max() <= max(v.data.max(), 0.0) + 1e-6

    def test_trilinear_on_labels_rejected(self):
        l = LabelMap(np.zeros((4, 4, 4), dtype=np.uint8))
        with pytest.raises(ValueError, match="nearest"):
            resample(l, AffineTransform.identity(), "trilinear")

    def test_out_of_bounds_takes_fill(self):
        v = Volume(np.ones((1, 4, 4, 4), dtype=np.float32))
        shift = np.eye(4)
        shift[0, 3] = 10.0  # source coordinates land outside the grid
        out = resample(v, AffineTransform(shift), "nearest", fill=7.0)
        assert np.all(out.data == 7.0)

    def test_probmap_renormalized(self):
        rng = np.random.default_rng(5)
        raw = rng.random((3, 8, 8, 8)).astype(np.float32)
        raw /= raw.sum(axis=0)
        p = ProbMap(raw)
        params = rng_params(6)
        a = params_to_affine(params, volume_center(p.dims))
        out = resample(p, a, "trilinear")
        sums = out.probs.sum(axis=0, dtype=np.float64)
        assert np.abs(sums - 1.0).max() <= 1e-4


class TestAddNoise:
    def test_sigma_zero_is_identity(self):
        v = Volume(np.zeros((1, 4, 4, 4), dtype=np.float32))
        assert add_noise(v, 0.0, 123) is v

    def test_sample_std_matches_sigma(self):
        v = Volume(np.zeros((1, 32, 32, 32), dtype=np.float32))
        out = add_noise(v, 0.05, 9)
        assert 0.045 <= float(out.data.std()) <= 0.055

    def test_deterministic_per_seed(self):
        v = Volume(np.zeros((1, 8, 8, 8), dtype=np.float32))
        a = add_noise(v, 0.05, 77)
        b = add_noise(v, 0.05, 77)
        c = add_noise(v, 0.05, 78)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_negative_sigma_rejected(self):
        v = Volume(np.zeros((1, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            add_noise(v, -0.1, 0)


class TestApplyAugmentation:
    def test_identity_noiseless_bit_identical(self):
        rng = np.random.default_rng(6)
        v = Volume(rng.random((2, 8, 8, 8)).astype(np.float32))
        prior = AugmentationPrior.identity()
        out = apply_augmentation(v, AugmentationParams.identity(), prior)
        assert np.array_equal(out.data, v.data)

    def test_flips_only_is_permutation(self):
        rng = np.random.default_rng(7)
        v = Volume(rng.random((1, 8, 8, 8)).astype(np.float32))
        prior = AugmentationPrior.flips_only()
        params = AugmentationParams(flips=(True, True, False),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        out = apply_augmentation(v, params, prior)
        assert np.array_equal(np.sort(out.data.ravel()), np.sort(v.data.ravel()))

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        v = Volume(rng.random((1, 8, 8, 8)).astype(np.float32))
        prior = AugmentationPrior()
        params = rng_params(3)
        a = apply_augmentation(v, params, prior)
        b = apply_augmentation(v, params, prior)
        assert np.array_equal(a.data, b.data)


def sphere_label_map(n=32, radius=10.0) -> LabelMap:
    c = (n - 1) / 2.0
    grid = np.indices((n, n, n)).astype(np.float64) - c
    r2 = (grid ** 2).sum(axis=0)
    return LabelMap((r2 <= radius * radius).astype(np.uint8))


class TestInverseSpatial:
    def test_identity(self):
        l = sphere_label_map()
        out = inverse_spatial(l, AugmentationParams.identity())
        assert np.array_equal(out.labels, l.labels)

    def test_flip_round_trip_label_map(self):
        l = sphere_label_map()
        params = AugmentationParams(flips=(False, True, True),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(l.dims))
        forward = resample(l, a, "nearest")
        back = inverse_spatial(forward, params)
        assert np.array_equal(back.labels, l.labels)

    def test_rotation_round_trip_away_from_boundary(self):
        # phantom round-trip measurement: voxels >= 2 voxels from a label
        # transition must agree on >= 99% after forward 30deg + inverse
        from scipy import ndimage

        l = sphere_label_map()
        params = AugmentationParams(flips=(False,) * 3,
                                    rotations=(0.0, 0.0, np.pi / 6),
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(l.dims))
        forward = resample(l, a, "nearest")
        back = inverse_spatial(forward, params)

        inside = ndimage.distance_transform_edt(l.labels == 1)
        outside = ndimage.distance_transform_edt(l.labels == 0)
        far = np.maximum(inside, outside) >= 2.0
        agree = (back.labels == l.labels)[far]
        assert agree.mean() >= 0.99

    def test_probmap_inverse_renormalizes(self):
        rng = np.random.default_rng(9)
        raw = rng.random((4, 8, 8, 8)).astype(np.float32)
        raw /= raw.sum(axis=0)
        p = ProbMap(raw)
        params = rng_params(10)
        out = inverse_spatial(p, params)
        sums = out.probs.sum(axis=0, dtype=np.float64)
        assert np.abs(sums - 1.0).max() <= 1e-4

    def test_volume_rejected(self):
        v = Volume(np.zeros((1, 4, 4, 4), dtype=np.float32))
        with pytest.raises(TypeError):
            inverse_spatial(v, AugmentationParams.identity())


class TestPhantomRoundTripExactness:
    def test_flip_round_trip_on_phantom_gt(self):
        _, gt = generate_phantom(PhantomSpec(dims=(32, 32, 32),
                                             radii_mm=(12.0, 8.0, 4.0)), 0)
        params = AugmentationParams(flips=(True, False, True),
                                    rotations=(0.0,) * 3,
                                    scale=(1.0,) * 3, noise_seed=0)
        a = params_to_affine(params, volume_center(gt.dims))
        forward = resample(gt, a, "nearest")
        back = inverse_spatial(forward, params)
        assert np.array_equal(back.labels, gt.labels)
