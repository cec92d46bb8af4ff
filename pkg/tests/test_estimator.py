import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonrx.channel import ChannelParams, Modulation, ReceiverKind
from photonrx.estimator import (
    AugmentSpec,
    ConditioningError,
    CovarianceBlocks,
    analytical_mse_block,
    analytical_mse_direct,
    analytical_mse_linear,
    assemble_blocks,
    augment_measurements,
    bit_cross_cov,
    build_estimator,
    cov_block,
    estimate,
    mean_augmented,
    scale_blocks,
)
from photonrx.moments import DetectorParams
from photonrx.simulation import ExperimentConfig, substream
from photonrx.channel import sample_pc, sample_pg

from oracles import pc_blocks_bruteforce, poisson_moment_pmf


def pc_cfg(lam=2.0, lam_b=0.02, k=1, spec=AugmentSpec.pair(1, 2), M=2):
    mod = Modulation.ook() if M == 2 else Modulation.ppm(M)
    return ExperimentConfig(
        channel=ChannelParams.photon_counting(lam, lam_b, k),
        modulation=mod,
        augment=spec,
        trials=1,
    )


def pg_cfg(kind="pmt", lam=2.0, lam_b=0.02, k=1, spec=AugmentSpec.pair(1, 2),
           det=DetectorParams(gain=100.0, shot_sigma=31.6, thermal_sigma=359.0)):
    return ExperimentConfig(
        channel=ChannelParams.mixture(kind, lam, lam_b, det, k),
        augment=spec,
        trials=1,
    )


class TestAugmentSpec:
    def test_equal_factors_rejected(self):
        with pytest.raises(ValueError):
            AugmentSpec.pair(2, 2)

    def test_parse(self):
        assert AugmentSpec.parse("1,2") == AugmentSpec.pair(1, 2)
        assert AugmentSpec.parse("3") == AugmentSpec.single(3)
        with pytest.raises(ValueError):
            AugmentSpec.parse("1,2,3")

    def test_factors(self):
        assert AugmentSpec.pair(1, 3).factors == (1, 3)
        assert AugmentSpec.single(2).factors == (2,)

    def test_order_caps(self):
        with pytest.raises(ValueError):
            pc_cfg(spec=AugmentSpec.pair(6, 7))  # 13 > 12 for PC
        with pytest.raises(ValueError):
            pg_cfg(spec=AugmentSpec.pair(4, 5))  # 9 > 8 for PMT
        pc_cfg(spec=AugmentSpec.pair(5, 7))  # 12 allowed
        pg_cfg(spec=AugmentSpec.pair(3, 5))  # 8 allowed


class TestMeanAugmented:
    def test_pc_linear_mean(self):
        cfg = pc_cfg(lam=2.0, k=2, spec=AugmentSpec.single(1))
        np.testing.assert_allclose(mean_augmented(cfg), [2.0 / 2 + 0.02] * 2, rtol=1e-14)

    def test_pc_square_mean(self):
        cfg = pc_cfg(lam=2.0, spec=AugmentSpec.pair(1, 2))
        mean = mean_augmented(cfg)
        assert mean.shape == (2,)
        assert mean[1] == pytest.approx(3.0604, rel=1e-12)
        oracle = (poisson_moment_pmf(2, 2.02) + poisson_moment_pmf(2, 0.02)) / 2
        assert mean[1] == pytest.approx(oracle, rel=1e-10)

    def test_pmt_linear_mean(self):
        det = DetectorParams(gain=100.0, shot_sigma=10.0, thermal_sigma=20.0)
        cfg = pg_cfg(lam=1.5, lam_b=0.1, spec=AugmentSpec.single(1), det=det)
        assert mean_augmented(cfg)[0] == pytest.approx(100.0 * (1.5 / 2 + 0.1), rel=1e-13)


class TestBitCrossCov:
    def test_zero_signal_gives_zero(self):
        cfg = pc_cfg(lam=0.0, k=3)
        np.testing.assert_allclose(bit_cross_cov(cfg), 0.0, atol=1e-16)

    def test_pc_linear(self):
        cfg = pc_cfg(lam=1.8, spec=AugmentSpec.single(1))
        assert bit_cross_cov(cfg)[0] == pytest.approx(1.8 / 4, rel=1e-13)

    def test_pc_square(self):
        cfg = pc_cfg(lam=2.0, spec=AugmentSpec.pair(1, 2))
        assert bit_cross_cov(cfg)[1] == pytest.approx(1.52, rel=1e-12)
        on = poisson_moment_pmf(2, 2.02)
        mixed = (on + poisson_moment_pmf(2, 0.02)) / 2
        assert bit_cross_cov(cfg)[1] == pytest.approx(on / 2 - mixed / 2, rel=1e-10)


class TestCovBlock:
    def test_scalar_variance(self):
        cfg = pc_cfg(lam=2.0, spec=AugmentSpec.single(1))
        lam_on, lam_off = 2.02, 0.02
        second = ((lam_on + lam_on**2) + (lam_off + lam_off**2)) / 2
        mean = (lam_on + lam_off) / 2
        assert cov_block(cfg, 1, 1)[0, 0] == pytest.approx(second - mean**2, rel=1e-13)

    def test_background_only_off_diagonal_is_zero(self):
        cfg = pc_cfg(lam=0.0, k=2, spec=AugmentSpec.single(1))
        block = cov_block(cfg, 1, 1)
        assert block[0, 1] == pytest.approx(0.0, abs=1e-15)
        assert block[0, 0] == pytest.approx(0.02, rel=1e-12)  # pure Poisson variance

    def test_cross_block_vs_bruteforce(self):
        cfg = pc_cfg(lam=2.0, k=2, spec=AugmentSpec.pair(1, 2))
        _, _, cov, _, _ = pc_blocks_bruteforce([2.0, 2.0], 0.02, 2, (1, 2))
        np.testing.assert_allclose(cov_block(cfg, 1, 2), cov[(1, 2)], rtol=1e-8)
        np.testing.assert_allclose(cov_block(cfg, 1, 1), cov[(1, 1)], rtol=1e-8)
        np.testing.assert_allclose(cov_block(cfg, 2, 2), cov[(2, 2)], rtol=1e-8)

    def test_heterogeneous_signals_vs_bruteforce(self):
        channel = ChannelParams.photon_counting([1.0, 2.5], 0.3)
        cfg = ExperimentConfig(channel=channel, augment=AugmentSpec.pair(1, 2), trials=1)
        mean_o, bit_o, cov_o, _, _ = pc_blocks_bruteforce([1.0, 2.5], 0.3, 2, (1, 2))
        np.testing.assert_allclose(mean_augmented(cfg), mean_o, rtol=1e-8)
        np.testing.assert_allclose(bit_cross_cov(cfg), bit_o, rtol=1e-8)
        np.testing.assert_allclose(cov_block(cfg, 1, 2), cov_o[(1, 2)], rtol=1e-8)

    def test_rejects_inactive_factor(self):
        cfg = pc_cfg(spec=AugmentSpec.pair(1, 2))
        with pytest.raises(ValueError):
            cov_block(cfg, 1, 3)


class TestAssembleBlocks:
    def test_conventional_shape(self):
        cfg = pc_cfg(k=3, spec=AugmentSpec.single(1))
        blocks = assemble_blocks(cfg)
        assert blocks.cov_n is None and blocks.cov_mn is None
        assert blocks.mean.shape == (3,)
        assert blocks.full_cov().shape == (3, 3)

    def test_bit_variance(self):
        assert assemble_blocks(pc_cfg()).bit_var == 0.25
        blocks8 = assemble_blocks(pc_cfg(M=8))
        assert blocks8.bit_var == pytest.approx(1 / 8 - 1 / 64)
        assert blocks8.bit_mean == pytest.approx(1 / 8)

    def test_full_cov_psd(self):
        for cfg in (pc_cfg(k=3, spec=AugmentSpec.pair(1, 2)),
                    pg_cfg(k=3, spec=AugmentSpec.pair(1, 2))):
            pxx = assemble_blocks(cfg).full_cov()
            eigs = np.linalg.eigvalsh(pxx)
            assert eigs.min() >= -1e-10 * np.trace(pxx)

    def test_blocks_symmetric(self):
        blocks = assemble_blocks(pc_cfg(k=4, spec=AugmentSpec.pair(2, 3), lam=1.0))
        np.testing.assert_array_equal(blocks.cov_m, blocks.cov_m.T)
        np.testing.assert_array_equal(blocks.cov_n, blocks.cov_n.T)


class TestBuildEstimator:
    def test_uninformative_measurements(self):
        blocks = assemble_blocks(pc_cfg(lam=0.0, k=2))
        coeffs = build_estimator(blocks)
        np.testing.assert_array_equal(coeffs.weights, 0.0)
        assert coeffs.intercept == 0.5
        assert not coeffs.regularized

    def test_scalar_linear_solution(self):
        cfg = pc_cfg(lam=2.0, spec=AugmentSpec.single(1))
        blocks = assemble_blocks(cfg)
        coeffs = build_estimator(blocks)
        assert coeffs.weights[0] == pytest.approx(
            blocks.bit_cross[0] / blocks.cov_m[0, 0], rel=1e-12)

    def test_against_dense_solve_oracle(self):
        blocks = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=AugmentSpec.pair(1, 2)))
        coeffs = build_estimator(blocks)
        oracle = np.linalg.solve(blocks.full_cov(), blocks.bit_cross)
        np.testing.assert_allclose(coeffs.weights, oracle, rtol=1e-9)

    def test_intercept_identity(self):
        blocks = assemble_blocks(pc_cfg(lam=3.0, k=3, spec=AugmentSpec.pair(1, 3)))
        coeffs = build_estimator(blocks)
        lhs = coeffs.intercept
        rhs = blocks.bit_mean - float(coeffs.weights @ blocks.mean)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_conditioning_error_names_context(self):
        blocks = CovarianceBlocks(
            mean=np.zeros(2),
            bit_cross=np.array([1.0, 0.0]),
            cov_m=np.array([[1.0, 1.0], [1.0, 1.0]]),  # rank one, rhs not in range
            cov_n=None,
            cov_mn=None,
            bit_mean=0.5,
            bit_var=0.25,
        )
        with pytest.raises(ConditioningError, match="ridge escalation"):
            build_estimator(blocks)


class TestAnalyticalMse:
    def test_uninformative_gives_prior_variance(self):
        blocks = assemble_blocks(pc_cfg(lam=0.0, k=2))
        assert analytical_mse_block(blocks) == 0.25
        assert analytical_mse_linear(blocks) == 0.25
        assert analytical_mse_direct(blocks) == 0.25

    def test_scalar_linear(self):
        blocks = assemble_blocks(pc_cfg(lam=2.0, spec=AugmentSpec.single(1)))
        want = 0.25 - blocks.bit_cross[0] ** 2 / blocks.cov_m[0, 0]
        assert analytical_mse_linear(blocks) == pytest.approx(want, rel=1e-12)

    def test_block_equals_linear_when_not_augmented(self):
        blocks = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=AugmentSpec.single(1)))
        assert analytical_mse_block(blocks) == analytical_mse_linear(blocks)

    def test_schur_equals_direct_at_example_point(self):
        blocks = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=AugmentSpec.pair(1, 2)))
        d_schur = analytical_mse_block(blocks)
        d_direct = analytical_mse_direct(blocks)
        assert d_schur == pytest.approx(d_direct, rel=1e-10)
        pxx = blocks.full_cov()
        oracle = blocks.bit_var - blocks.bit_cross @ np.linalg.solve(pxx, blocks.bit_cross)
        assert d_direct == pytest.approx(oracle, rel=1e-10)

    @pytest.mark.parametrize("kind", ["pc", "pmt", "apd"])
    @pytest.mark.parametrize("pair", [(1, 2), (1, 3), (2, 3)])
    @pytest.mark.parametrize("lam", [0.1, 1.0, 5.0])
    def test_schur_direct_identity_grid(self, kind, pair, lam):
        for k in (1, 2, 3, 4):
            if kind == "pc":
                cfg = pc_cfg(lam=lam, k=k, spec=AugmentSpec.pair(*pair))
            else:
                cfg = pg_cfg(kind=kind, lam=lam, k=k, spec=AugmentSpec.pair(*pair))
            blocks = assemble_blocks(cfg)
            d_schur = analytical_mse_block(blocks)
            d_direct = analytical_mse_direct(blocks)
            assert d_schur == pytest.approx(d_direct, rel=1e-10)
            assert 0.0 <= d_schur <= blocks.bit_var

    @pytest.mark.parametrize("kind", ["pc", "pmt", "apd"])
    def test_augmentation_dominance(self, kind):
        for lam in (0.1, 1.0, 5.0):
            for k in (1, 2, 4):
                spec = AugmentSpec.pair(1, 2)
                cfg = pc_cfg(lam=lam, k=k, spec=spec) if kind == "pc" else pg_cfg(
                    kind=kind, lam=lam, k=k, spec=spec)
                blocks = assemble_blocks(cfg)
                assert analytical_mse_block(blocks) <= analytical_mse_linear(blocks) + 1e-12

    def test_linear_mse_monotone_in_signal(self):
        values = []
        for lam in np.linspace(0.1, 40.0, 25):
            blocks = assemble_blocks(pc_cfg(lam=float(lam), spec=AugmentSpec.single(1)))
            values.append(analytical_mse_linear(blocks))
        assert all(b < a + 1e-15 for a, b in zip(values, values[1:]))

    def test_zero_cross_augmented_reduces_to_linear(self):
        # if the n-block is uninformative and uncorrelated, the Schur
        # correction vanishes
        base = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=AugmentSpec.pair(1, 2)))
        blocks = CovarianceBlocks(
            mean=base.mean.copy(),
            bit_cross=np.concatenate([base.bit_cross[:2], [0.0, 0.0]]),
            cov_m=base.cov_m.copy(),
            cov_n=np.eye(2),
            cov_mn=np.zeros((2, 2)),
            bit_mean=0.5,
            bit_var=0.25,
        )
        assert analytical_mse_block(blocks) == pytest.approx(
            analytical_mse_linear(blocks), rel=1e-12)

    def test_pg_blocks_reduce_to_pc(self):
        det = DetectorParams(gain=1.0, shot_sigma=0.0, thermal_sigma=0.0)
        for spec in (AugmentSpec.pair(1, 2), AugmentSpec.single(1)):
            pc = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=spec))
            pg = assemble_blocks(pg_cfg(kind="pmt", lam=2.0, k=2, spec=spec, det=det))
            np.testing.assert_allclose(pg.mean, pc.mean, rtol=1e-10)
            np.testing.assert_allclose(pg.bit_cross, pc.bit_cross, rtol=1e-10)
            np.testing.assert_allclose(pg.full_cov(), pc.full_cov(), rtol=1e-10)

    def test_pc_linear_moments_match_baseline_form(self):
        # with n = 1 the mean reduces to lam/M + lam_b
        for M in (2, 4):
            cfg = pc_cfg(lam=1.4, lam_b=0.3, spec=AugmentSpec.single(1), M=M)
            assert mean_augmented(cfg)[0] == pytest.approx(1.4 / M + 0.3, rel=1e-13)


class TestEstimate:
    def test_constant_estimator(self):
        blocks = assemble_blocks(pc_cfg(lam=0.0, k=2))
        coeffs = build_estimator(blocks)
        assert estimate(coeffs, [5, 1], AugmentSpec.pair(1, 2)) == 0.5

    def test_hand_computed_affine_map(self):
        spec = AugmentSpec.pair(1, 2)
        blocks = assemble_blocks(pc_cfg(lam=2.0, k=2, spec=spec))
        coeffs = build_estimator(blocks)
        z = np.array([3.0, 1.0])
        x = np.array([3.0, 1.0, 9.0, 1.0])
        want = float(coeffs.weights @ x + coeffs.intercept)
        assert estimate(coeffs, z, spec) == pytest.approx(want, rel=1e-15)

    def test_unbiased_over_prior(self):
        blocks = assemble_blocks(pc_cfg(lam=2.0, k=3, spec=AugmentSpec.pair(1, 2)))
        coeffs = build_estimator(blocks)
        assert float(coeffs.weights @ blocks.mean + coeffs.intercept) == pytest.approx(
            blocks.bit_mean, rel=1e-12)

    def test_augment_features(self):
        spec = AugmentSpec.pair(1, 2)
        z = np.array([[1, 2], [3, 4]])
        feats = augment_measurements(z, spec)
        np.testing.assert_array_equal(feats, [[1, 2, 1, 4], [3, 4, 9, 16]])

    def test_int_overflow_avoided(self):
        spec = AugmentSpec.pair(1, 6)
        feats = augment_measurements(np.array([[500]], dtype=np.int64), spec)
        assert feats[0, 1] == pytest.approx(500.0**6)


class TestScaleInvariance:
    @pytest.mark.parametrize("c", [1e-3, 1.0, 1e3])
    @pytest.mark.parametrize("kind", ["pc", "pmt"])
    def test_estimates_and_mse_invariant(self, c, kind):
        spec = AugmentSpec.pair(1, 2)
        det = DetectorParams(gain=100.0, shot_sigma=31.6, thermal_sigma=359.0)
        if kind == "pc":
            cfg = pc_cfg(lam=3.77, k=3, spec=spec)
            z = sample_pc(1.9, substream(17, 0), size=(64, 3)).astype(float)
        else:
            cfg = pg_cfg(kind="pmt", lam=3.77, k=3, spec=spec, det=det)
            z = sample_pg(1.9, det, substream(18, 0), size=(64, 3))
        blocks = assemble_blocks(cfg)
        coeffs = build_estimator(blocks)
        scaled = scale_blocks(blocks, c, spec)
        coeffs_scaled = build_estimator(scaled)
        d = analytical_mse_block(blocks)
        d_scaled = analytical_mse_block(scaled)
        assert d_scaled == pytest.approx(d, rel=1e-9)
        for row in z:
            a = estimate(coeffs, row, spec)
            b = estimate(coeffs_scaled, c * row, spec)
            assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    def test_detector_rescaling_equivalent(self):
        # scaling A, sigma, sigma0 by c equals scaling the measurements by c
        c = 10.0
        det = DetectorParams(gain=50.0, shot_sigma=5.0, thermal_sigma=20.0)
        det_scaled = DetectorParams(gain=50.0 * c, shot_sigma=5.0 * c, thermal_sigma=20.0 * c)
        spec = AugmentSpec.pair(1, 2)
        blocks = assemble_blocks(pg_cfg(lam=1.0, k=2, spec=spec, det=det))
        direct = assemble_blocks(pg_cfg(lam=1.0, k=2, spec=spec, det=det_scaled))
        scaled = scale_blocks(blocks, c, spec)
        np.testing.assert_allclose(direct.full_cov(), scaled.full_cov(), rtol=1e-12)
        np.testing.assert_allclose(direct.bit_cross, scaled.bit_cross, rtol=1e-12)

    @given(st.floats(0.5, 2.0), st.integers(1, 3))
    @settings(max_examples=15, deadline=None)
    def test_invariance_property(self, lam, k):
        spec = AugmentSpec.pair(1, 2)
        cfg = pc_cfg(lam=lam, k=k, spec=spec)
        blocks = assemble_blocks(cfg)
        scaled = scale_blocks(blocks, 7.5, spec)
        assert analytical_mse_block(scaled) == pytest.approx(
            analytical_mse_block(blocks), rel=1e-9)
