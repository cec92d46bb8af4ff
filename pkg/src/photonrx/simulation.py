"""Monte-Carlo engine for bit MSE and BER with LMMSE and ML detection.

Trials are drawn in fixed-size chunks, each with its own counter-based
Philox substream keyed by (seed, chunk index), so results are bit-identical
for any scheduling of chunks across workers.  BER runs share the sampled
measurement streams across detectors (common random numbers), which pairs
the per-detector error indicators and keeps detector comparisons low
variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelParams, Modulation, ReceiverKind, pc_log_likelihood, pg_log_likelihood
from .estimator import (
    AugmentSpec,
    EstimatorCoefficients,
    assemble_blocks,
    augment_measurements,
    build_estimator,
    _validate_orders,
)

__all__ = [
    "CHUNK_TRIALS",
    "ExperimentConfig",
    "McResult",
    "BER_DETECTORS",
    "substream",
    "draw_slot_bits",
    "threshold_detect",
    "ml_detect",
    "run_mc_mse",
    "run_mc_ber",
]

# Fixed chunk size; changing it changes the sample streams.
CHUNK_TRIALS = 8192

BER_DETECTORS = frozenset({"lmmse", "lmmse_nc", "ml"})

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte-Carlo operating point."""

    channel: ChannelParams
    modulation: Modulation = Modulation.ook()
    augment: AugmentSpec = AugmentSpec()
    trials: int = 100_000
    seed: int = 0
    ml_terms: int = 50

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation.parse(self.modulation))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.ml_terms < 1:
            raise ValueError("ml_terms must be >= 1")
        _validate_orders(self.augment, self.channel.receiver_kind)


@dataclass(frozen=True)
class McResult:
    """Monte-Carlo outcome; stderr is the sample std of per-trial squared errors / sqrt(trials)."""

    mse: float
    mse_stderr: float
    ber_lmmse: float | None
    ber_lmmse_nc: float | None
    ber_ml: float | None
    trials: int
    regularization_flag: bool
    mean_estimate: float
    mean_estimate_stderr: float


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox substream for one chunk of trials."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_slot_bits(modulation: Modulation, rng: np.random.Generator, n_trials: int) -> np.ndarray:
    """Slot bit matrix for n_trials symbols: (n, 1) for OOK, one-hot (n, M) for PPM."""
    if modulation.kind == "ook":
        return rng.integers(0, 2, size=(n_trials, 1)).astype(float)
    positions = rng.integers(0, modulation.order, size=n_trials)
    slots = np.zeros((n_trials, modulation.order))
    slots[np.arange(n_trials), positions] = 1.0
    return slots


def _draw_measurements(channel: ChannelParams, lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if channel.receiver_kind == ReceiverKind.PC:
        return rng.poisson(lam).astype(float)
    det = channel.detector
    counts = rng.poisson(lam)
    sd = np.sqrt(counts * det.shot_sigma**2 + det.thermal_sigma**2)
    return counts * det.gain + rng.standard_normal(lam.shape) * sd


def threshold_detect(a_hat):
    """OOK hard decision at 0.5; a tie (exactly 0.5) decides 1."""
    decisions = (np.asarray(a_hat) >= 0.5).astype(int)
    return decisions if decisions.ndim else int(decisions)


def _ml_llr(measurements: np.ndarray, channel: ChannelParams, terms: int) -> np.ndarray:
    """Joint log-likelihood ratio log P(z | pulse) - log P(z | no pulse)."""
    lam_b = channel.background_mean
    means = np.asarray(channel.signal_means)
    if channel.receiver_kind == ReceiverKind.PC:
        on = pc_log_likelihood(measurements, lam_b + means[np.newaxis, :])
        off = pc_log_likelihood(measurements, lam_b)
        with np.errstate(invalid="ignore"):
            diff = on - off
        # Receivers with lam_i = 0 contribute exactly nothing.
        diff = np.where(means[np.newaxis, :] > 0, diff, 0.0)
        return diff.sum(axis=1)
    det = channel.detector
    llr = np.zeros(measurements.shape[0])
    for i, lam_i in enumerate(means):
        if lam_i == 0:
            continue
        col = measurements[:, i]
        llr += pg_log_likelihood(col, lam_b + lam_i, det, terms)
        llr -= pg_log_likelihood(col, lam_b, det, terms)
    return llr


def ml_detect(z, cfg: ExperimentConfig) -> int:
    """Maximum-likelihood OOK decision for one measurement vector; ties decide 0."""
    if cfg.modulation.kind != "ook":
        raise ValueError("ML detection is defined for OOK only")
    z = np.asarray(z, dtype=float).reshape(1, -1)
    llr = _ml_llr(z, cfg.channel, cfg.ml_terms)
    return int(llr[0] > 0)


def _detector_coeffs(cfg: ExperimentConfig, detectors: frozenset):
    """Build the combiners a run needs; returns (primary, lin, nc)."""
    blocks = assemble_blocks(cfg)
    primary = build_estimator(blocks)
    lin = nc = None
    if "lmmse" in detectors:
        if cfg.augment.augmented:
            lin_cfg = replace(cfg, augment=AugmentSpec.single(cfg.augment.m))
            lin = build_estimator(assemble_blocks(lin_cfg))
        else:
            lin = primary
    if "lmmse_nc" in detectors:
        if not cfg.augment.augmented:
            raise ValueError("lmmse_nc detector needs an augmented factor pair")
        nc = primary
    return primary, lin, nc


def _mc_engine(cfg: ExperimentConfig, detectors: frozenset) -> McResult:
    unknown = detectors - BER_DETECTORS
    if unknown:
        raise ValueError(f"unknown detectors {sorted(unknown)}; choose from {sorted(BER_DETECTORS)}")
    if detectors and cfg.modulation.kind != "ook":
        raise ValueError("BER simulation is restricted to OOK")
    primary, lin, nc = _detector_coeffs(cfg, detectors)
    lin_spec = AugmentSpec.single(cfg.augment.m)
    channel = cfg.channel
    means = np.asarray(channel.signal_means)
    lam_b = channel.background_mean
    n_slots = cfg.modulation.order if cfg.modulation.kind == "ppm" else 1

    sum_e = sum_e2 = 0.0
    sum_a = sum_a2 = 0.0
    slot_count = 0
    err = {name: 0 for name in detectors}

    done = 0
    chunk_index = 0
    while done < cfg.trials:
        size = min(CHUNK_TRIALS, cfg.trials - done)
        rng = substream(cfg.seed, chunk_index)
        slots = draw_slot_bits(cfg.modulation, rng, size)          # (size, n_slots)
        lam = lam_b + slots[:, :, np.newaxis] * means              # (size, n_slots, K)
        z = _draw_measurements(channel, lam, rng)
        flat = z.reshape(size * n_slots, -1)
        feats = augment_measurements(flat, cfg.augment)
        a_hat = (feats @ primary.weights + primary.intercept).reshape(size, n_slots)
        sq = (a_hat - slots) ** 2
        per_trial = sq.mean(axis=1)
        sum_e += float(per_trial.sum())
        sum_e2 += float((per_trial**2).sum())
        sum_a += float(a_hat.sum())
        sum_a2 += float((a_hat**2).sum())
        slot_count += size * n_slots

        if detectors:
            bits = slots[:, 0]
            if "lmmse" in detectors:
                lin_feats = feats if not cfg.augment.augmented else augment_measurements(flat, lin_spec)
                a_lin = lin_feats @ lin.weights + lin.intercept
                err["lmmse"] += int(np.count_nonzero(threshold_detect(a_lin) != bits))
            if "lmmse_nc" in detectors:
                err["lmmse_nc"] += int(np.count_nonzero(threshold_detect(a_hat[:, 0]) != bits))
            if "ml" in detectors:
                decisions = (_ml_llr(flat, channel, cfg.ml_terms) > 0).astype(int)
                err["ml"] += int(np.count_nonzero(decisions != bits))

        done += size
        chunk_index += 1

    n = cfg.trials
    mse = sum_e / n
    var = max(sum_e2 - n * mse**2, 0.0) / max(n - 1, 1)
    mean_a = sum_a / slot_count
    var_a = max(sum_a2 - slot_count * mean_a**2, 0.0) / max(slot_count - 1, 1)
    flag = primary.regularized or any(c.regularized for c in (lin, nc) if c is not None)
    return McResult(
        mse=mse,
        mse_stderr=math.sqrt(var / n),
        ber_lmmse=err["lmmse"] / n if "lmmse" in detectors else None,
        ber_lmmse_nc=err["lmmse_nc"] / n if "lmmse_nc" in detectors else None,
        ber_ml=err["ml"] / n if "ml" in detectors else None,
        trials=n,
        regularization_flag=flag,
        mean_estimate=mean_a,
        mean_estimate_stderr=math.sqrt(var_a / slot_count),
    )


def run_mc_mse(cfg: ExperimentConfig) -> McResult:
    """Monte-Carlo bit MSE of the configured combiner.

    OOK draws i.i.d. equiprobable bits; PPM draws true one-pulse-in-M
    symbols and scores the per-slot squared error, aggregating within each
    symbol before computing the standard error so that intra-symbol slot
    dependence does not bias the reported stderr.
    """
    return _mc_engine(cfg, frozenset())


def run_mc_ber(cfg: ExperimentConfig, detectors=BER_DETECTORS) -> McResult:
    """Paired Monte-Carlo BER for the requested detectors (OOK only).

    All detectors see the same sampled measurements, so BER differences are
    paired; the MSE fields report the configured (primary) combiner on the
    same streams.
    """
    return _mc_engine(cfg, frozenset(detectors))
