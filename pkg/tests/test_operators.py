import json

import numpy as np
import pytest

from varifuse import (
    BandMatrix,
    BlockMean,
    CompositeOperator,
    DomainError,
    FormatError,
    GainOperator,
    GaussianBlur,
    Geometry,
    GeometryError,
    Identity,
    MaskOperator,
    NoiseSpec,
    RasterImage,
    SpectralResponseOperator,
    add_noise,
    apply_affine_degradation,
    gamma_neglog_likelihood,
    gaussian_kernel,
    load_spectral_response,
)


def rand_img(geom: Geometry, seed: int) -> RasterImage:
    rng = np.random.default_rng(seed)
    return RasterImage(rng.standard_normal((geom.bands, geom.height, geom.width)))


def adjoint_gap(op, seed=0) -> float:
    """Relative defect of <A x, y> == <x, A^T y> on one random pair."""
    x = rand_img(op.in_geom, seed)
    y = rand_img(op.out_geom, seed + 1)
    lhs = float((op.apply(x).data * y.data).sum())
    rhs = float((x.data * op.adjoint(y).data).sum())
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)


GEOM = Geometry(12, 8, 3)


def all_operator_kinds():
    rng = np.random.default_rng(42)
    mask = rng.random((GEOM.height, GEOM.width)) > 0.4
    return [
        Identity(GEOM),
        GaussianBlur(GEOM, sigma=1.3),
        BlockMean(GEOM, factor=4),
        MaskOperator(mask, bands=GEOM.bands),
        GainOperator(rand_img(GEOM, 3)),
        SpectralResponseOperator(BandMatrix(rng.random((2, GEOM.bands))),
                                 GEOM.width, GEOM.height),
        CompositeOperator([
            GaussianBlur(GEOM, sigma=0.8),
            BlockMean(GEOM, factor=2),
            SpectralResponseOperator(BandMatrix(rng.random((2, GEOM.bands))),
                                     GEOM.width // 2, GEOM.height // 2),
        ]),
    ]


class TestAdjointPairs:
    @pytest.mark.parametrize("op", all_operator_kinds(),
                             ids=lambda op: type(op).__name__)
    def test_adjoint_identity_holds(self, op):
        for seed in range(5):
            assert adjoint_gap(op, seed) < 1e-12

    def test_geometry_guard_on_apply_and_adjoint(self):
        op = BlockMean(GEOM, factor=4)
        with pytest.raises(GeometryError):
            op.apply(rand_img(op.out_geom, 0))
        with pytest.raises(GeometryError):
            op.adjoint(rand_img(op.in_geom, 0))


class TestGaussianKernel:
    def test_normalized_and_symmetric(self):
        k = gaussian_kernel(1.5)
        assert k.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.allclose(k, k[::-1])

    def test_default_radius_is_three_sigma(self):
        assert gaussian_kernel(2.0).size == 2 * 6 + 1

    def test_degenerate_cases(self):
        assert np.array_equal(gaussian_kernel(0.0), [1.0])
        assert np.array_equal(gaussian_kernel(1.0, radius=0), [1.0])
        with pytest.raises(GeometryError):
            gaussian_kernel(-1.0, radius=2)
        with pytest.raises(GeometryError):
            gaussian_kernel(1.0, radius=-1)


class TestGaussianBlur:
    def test_preserves_constants(self):
        # symmetric padding + renormalized kernel keep flat fields flat
        op = GaussianBlur(GEOM, sigma=2.0)
        out = op.apply(RasterImage(np.full((3, 8, 12), 0.7)))
        assert np.allclose(out.data, 0.7, atol=1e-14)

    def test_smooths_an_impulse(self):
        op = GaussianBlur(Geometry(9, 9, 1), sigma=1.0)
        spike = np.zeros((1, 9, 9))
        spike[0, 4, 4] = 1.0
        out = op.apply(RasterImage(spike)).data
        assert out[0, 4, 4] < 1.0
        assert out.sum() == pytest.approx(1.0, abs=1e-12)


class TestBlockMean:
    def test_hand_case(self):
        op = BlockMean(Geometry(2, 2, 1), factor=2)
        out = op.apply(RasterImage(np.array([[[1.0, 3.0], [5.0, 7.0]]])))
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 4.0

    def test_adjoint_replicates_with_scale(self):
        op = BlockMean(Geometry(2, 2, 1), factor=2)
        up = op.adjoint(RasterImage(np.array([[[8.0]]])))
        assert np.allclose(up.data, 2.0)

    def test_divisibility_enforced(self):
        with pytest.raises(GeometryError):
            BlockMean(Geometry(5, 4, 1), factor=2)
        with pytest.raises(GeometryError):
            BlockMean(Geometry(4, 4, 1), factor=0)


class TestPointwiseOperators:
    def test_mask_zeroes_invalid_pixels(self):
        mask = np.array([[True, False]])
        op = MaskOperator(mask, bands=1)
        out = op.apply(RasterImage(np.array([[[3.0, 5.0]]])))
        assert np.array_equal(out.data, [[[3.0, 0.0]]])

    def test_mask_requires_2d(self):
        with pytest.raises(GeometryError):
            MaskOperator(np.ones((1, 2, 2), dtype=bool), bands=1)

    def test_gain_multiplies(self):
        op = GainOperator(RasterImage(np.array([[[2.0, 0.5]]])))
        out = op.apply(RasterImage(np.array([[[3.0, 8.0]]])))
        assert np.array_equal(out.data, [[[6.0, 4.0]]])

    def test_spectral_response_mixes_bands(self):
        p = BandMatrix(np.array([[0.25, 0.75]]))
        op = SpectralResponseOperator(p, width=1, height=1)
        out = op.apply(RasterImage(np.array([[[4.0]], [[8.0]]])))
        assert out.data[0, 0, 0] == pytest.approx(7.0)

    def test_wavelengths_propagate_only_when_bands_survive(self):
        img = RasterImage(np.zeros((2, 4, 4)), wavelengths=[500.0, 600.0])
        keep = GaussianBlur(Geometry(4, 4, 2), sigma=1.0).apply(img)
        assert np.allclose(keep.wavelengths, [500.0, 600.0])
        mix = SpectralResponseOperator(BandMatrix(np.ones((1, 2))), 4, 4).apply(img)
        assert mix.wavelengths is None


class TestComposite:
    def test_stage_order(self):
        geom = Geometry(4, 4, 1)
        chain = CompositeOperator([GaussianBlur(geom, 1.0), BlockMean(geom, 2)])
        assert chain.in_geom == geom
        assert chain.out_geom == Geometry(2, 2, 1)

    def test_geometry_mismatch_between_stages(self):
        with pytest.raises(GeometryError):
            CompositeOperator([BlockMean(Geometry(4, 4, 1), 2),
                               GaussianBlur(Geometry(4, 4, 1), 1.0)])

    def test_empty_chain_rejected(self):
        with pytest.raises(GeometryError):
            CompositeOperator([])


class TestAffineDegradation:
    def test_offset_added_after_operator(self):
        geom = Geometry(2, 2, 1)
        gain = GainOperator(RasterImage(np.full((1, 2, 2), 2.0)))
        offset = RasterImage(np.full((1, 2, 2), 0.1))
        out = apply_affine_degradation(gain, offset, RasterImage(np.full((1, 2, 2), 3.0)))
        assert np.allclose(out.data, 6.1)

    def test_offset_geometry_checked(self):
        gain = GainOperator(RasterImage(np.zeros((1, 2, 2))))
        with pytest.raises(GeometryError):
            apply_affine_degradation(gain, RasterImage(np.zeros((1, 3, 3))),
                                     RasterImage(np.zeros((1, 2, 2))))


class TestNoiseSpecValidation:
    def test_family_specific_checks(self):
        with pytest.raises(DomainError):
            NoiseSpec(family="gaussian", sigma=-1.0)
        with pytest.raises(DomainError):
            NoiseSpec(family="speckle", looks=0)
        with pytest.raises(DomainError):
            NoiseSpec(family="speckle", looks=1.5)
        with pytest.raises(DomainError):
            NoiseSpec(family="impulse", density=1.5)
        with pytest.raises(DomainError):
            NoiseSpec(family="stripe", period=0.0)
        with pytest.raises(DomainError):
            NoiseSpec(family="wavelet")


class TestAddNoise:
    def test_deterministic_for_fixed_seed(self):
        img = RasterImage(np.full((2, 16, 16), 1.0))
        spec = NoiseSpec(family="gaussian", seed=5, sigma=0.3)
        assert np.array_equal(add_noise(img, spec).data, add_noise(img, spec).data)
        other = NoiseSpec(family="gaussian", seed=6, sigma=0.3)
        assert not np.array_equal(add_noise(img, spec).data, add_noise(img, other).data)

    def test_gaussian_moments(self):
        img = RasterImage(np.zeros((1, 200, 200)))
        out = add_noise(img, NoiseSpec(family="gaussian", seed=1, sigma=0.5)).data
        assert abs(out.mean()) < 0.01
        assert abs(out.std() - 0.5) < 0.01

    def test_speckle_is_multiplicative_unit_mean(self):
        img = RasterImage(np.full((1, 300, 300), 2.0))
        out = add_noise(img, NoiseSpec(family="speckle", seed=2, looks=4)).data
        assert out.mean() == pytest.approx(2.0, abs=0.02)
        assert np.all(out >= 0)

    def test_speckle_rejects_negative_input(self):
        img = RasterImage(np.full((1, 2, 2), -1.0))
        with pytest.raises(DomainError):
            add_noise(img, NoiseSpec(family="speckle", seed=0, looks=1))

    def test_impulse_density_split(self):
        img = RasterImage(np.full((1, 400, 400), 0.5))
        out = add_noise(img, NoiseSpec(family="impulse", seed=3, density=0.2,
                                       low=0.0, high=1.0)).data
        n = out.size
        assert (out == 0.0).sum() / n == pytest.approx(0.1, abs=0.01)
        assert (out == 1.0).sum() / n == pytest.approx(0.1, abs=0.01)
        assert (out == 0.5).sum() / n == pytest.approx(0.8, abs=0.02)

    def test_stripe_matches_sinusoid_exactly(self):
        img = RasterImage(np.zeros((1, 4, 8)))
        out = add_noise(img, NoiseSpec(family="stripe", seed=0, period=8.0,
                                       amplitude=0.2, orientation="vertical")).data
        expected = 0.2 * np.sin(2 * np.pi * np.arange(8) / 8.0)
        assert np.allclose(out, expected[np.newaxis, np.newaxis, :])
        # stripes run along the named direction: vertical stripes are
        # constant down each column
        assert np.allclose(out[0, 0], out[0, 3])

    def test_stripe_horizontal(self):
        img = RasterImage(np.zeros((1, 8, 4)))
        out = add_noise(img, NoiseSpec(family="stripe", period=4.0, amplitude=1.0,
                                       orientation="horizontal")).data
        assert np.allclose(out[0, :, 0], out[0, :, 3])

    def test_mask_and_wavelengths_pass_through(self):
        img = RasterImage(np.ones((1, 2, 2)), mask=np.ones((2, 2), dtype=bool),
                          wavelengths=[500.0])
        out = add_noise(img, NoiseSpec(family="gaussian", sigma=0.1))
        assert out.mask is not None and out.wavelengths is not None


class TestGammaNegLogLikelihood:
    def test_hand_value(self):
        assert gamma_neglog_likelihood(2.0, 4.0) == pytest.approx(np.log(2.0) + 2.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_neglog_likelihood(0.0, 1.0)


class TestLoadSpectralResponse:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "srf.json"
        path.write_text(json.dumps({"rows": 2, "cols": 3,
                                    "entries": [[1, 0, 0], [0, 0.5, 0.5]]}))
        m = load_spectral_response(path)
        assert (m.rows, m.cols) == (2, 3)
        assert m.entries[1, 2] == 0.5

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"rows": 1, "cols": 1}))
        with pytest.raises(FormatError):
            load_spectral_response(path)

    def test_shape_disagreement(self, tmp_path):
        path = tmp_path / "shape.json"
        path.write_text(json.dumps({"rows": 2, "cols": 2, "entries": [[1, 2]]}))
        with pytest.raises(FormatError):
            load_spectral_response(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "nj.json"
        path.write_text("{")
        with pytest.raises(FormatError):
            load_spectral_response(path)
