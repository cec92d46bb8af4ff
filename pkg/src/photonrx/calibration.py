"""Benchmark operating points with published reference values.

The power-to-photon mapping is a modeling decision (see channel module);
these benchmarks pin it against reference MSE values at two operating
points.  When a benchmark misses its tolerance band, the report
re-evaluates it under alternative mapping decisions to show which one
drives the gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import ChannelParams, Modulation, PhysicalConfig, derive_channel_params
from .estimator import AugmentSpec, analytical_mse_block, analytical_mse_linear, assemble_blocks
from .simulation import ExperimentConfig

__all__ = ["BenchmarkResult", "evaluate_benchmarks", "format_report", "write_report"]


@dataclass(frozen=True)
class BenchmarkResult:
    name: str
    target: float
    tolerance: float  # relative band around the target
    actual: float
    variants: tuple  # (label, value) pairs under alternative mapping decisions

    @property
    def rel_gap(self) -> float:
        return (self.actual - self.target) / self.target

    @property
    def within(self) -> bool:
        return abs(self.rel_gap) <= self.tolerance


def _mse(channel: ChannelParams, modulation: Modulation, spec: AugmentSpec, linear: bool) -> float:
    cfg = ExperimentConfig(channel=channel, modulation=modulation, augment=spec, trials=1)
    blocks = assemble_blocks(cfg)
    return analytical_mse_linear(blocks) if linear else analytical_mse_block(blocks)


def _point(power_dbw: float, k: int, modulation: Modulation, spec: AugmentSpec, linear: bool,
           pulse_scale: float = 1.0) -> float:
    """Analytical MSE at one PC operating point, with an optional pulse-power rescale."""
    phys = PhysicalConfig(transmit_power_dbw=power_dbw)
    channel = derive_channel_params(phys, k, modulation)
    if pulse_scale != 1.0:
        channel = ChannelParams(
            tuple(pulse_scale * v for v in channel.signal_means),
            channel.background_mean, channel.detector, channel.receiver_kind,
        )
    return _mse(channel, modulation, spec, linear)


def evaluate_benchmarks() -> list:
    """MSE benchmarks at 0 dBW (receiver-count trade) and 10 dBW (modulation trade)."""
    ook = Modulation.ook()
    ppm8 = Modulation.ppm(8)
    nc = AugmentSpec.pair(1, 2)
    # Alternative mapping decisions to attribute gaps to: average-power
    # pulses (no duty-cycle peak factor) and, for PPM, bit-duration slots.
    results = []

    def with_variants(name, target, tol, actual, variants):
        results.append(BenchmarkResult(name, target, tol, actual, tuple(variants)))

    v = _point(0.0, 2, ook, nc, linear=False)
    with_variants(
        "ook_nc_mse_k2_0dbw", 0.02199, 0.25, v,
        [("average-power pulses (peak factor 1)", _point(0.0, 2, ook, nc, False, pulse_scale=0.5))],
    )
    v = _point(0.0, 4, ook, AugmentSpec.single(1), linear=True)
    with_variants(
        "ook_linear_mse_k4_0dbw", 0.02953, 0.25, v,
        [("average-power pulses (peak factor 1)",
          _point(0.0, 4, ook, AugmentSpec.single(1), True, pulse_scale=0.5))],
    )
    v = _point(10.0, 3, ook, nc, linear=False)
    with_variants(
        "ook_nc_mse_k3_10dbw", 0.000231, 0.50, v,
        [("average-power pulses (peak factor 1)", _point(10.0, 3, ook, nc, False, pulse_scale=0.5))],
    )
    v = _point(10.0, 3, ppm8, AugmentSpec.single(1), linear=True)
    slot = ppm8.slot_time_factor
    with_variants(
        "ppm8_linear_mse_k3_10dbw", 0.000732, 0.50, v,
        [
            ("average-power pulses (peak factor 1)",
             _point(10.0, 3, ppm8, AugmentSpec.single(1), True, pulse_scale=1.0 / ppm8.order)),
            ("bit-duration slots (no log2(M)/M slot scaling)",
             _point(10.0, 3, ppm8, AugmentSpec.single(1), True, pulse_scale=1.0 / slot)),
        ],
    )
    return results


def format_report(results) -> str:
    lines = ["mapping calibration report", "=" * 60]
    for r in results:
        status = "ok" if r.within else "MISS"
        lines.append(
            f"{r.name}: target {r.target:.6g}  actual {r.actual:.6g}  "
            f"gap {100 * r.rel_gap:+.2f}% (band +/-{100 * r.tolerance:.0f}%)  [{status}]"
        )
        if not r.within:
            lines.append("  gap attribution under alternative mapping decisions:")
            for label, value in r.variants:
                gap = (value - r.target) / r.target
                lines.append(f"    {label}: {value:.6g} (gap {100 * gap:+.2f}%)")
            lines.append("  the decision whose variant moves the result across the band drives the gap")
    worst = max((abs(r.rel_gap) for r in results), default=math.nan)
    lines.append(f"worst absolute gap: {100 * worst:.2f}%")
    return "\n".join(lines)


def write_report(results, path) -> str:
    text = format_report(results)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return text
