"""Affine bit estimation over power-augmented SIMO measurements.

Builds every first- and second-order statistic of the augmented measurement
vector x = [z^m, z^n] (per receiver), solves for the affine combiner that
minimizes the bit mean square error, and evaluates that MSE analytically,
both in the two-stage Schur-complement form and in the direct joint-inverse
form (the two agree algebraically and are cross-checked at runtime).

The power basis is badly conditioned at large photon counts or high powers,
so every symmetric solve runs through Jacobi equilibration plus a ridge
ladder: the unregularized solve is attempted first, then the diagonal of
the equilibrated matrix is inflated by eps = 1e-12, escalating by decades
to 1e-8 before a ConditioningError is raised.  Solves that needed eps > 0
are flagged so downstream records can report them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .channel import ChannelParams, ReceiverKind
from .moments import (
    MomentContext,
    mixed_poisson_cross_term,
    mixed_poisson_term,
    pg_expansion_coeff,
    poisson_raw_moment,
    pg_raw_moment,
)

if TYPE_CHECKING:  # pragma: no cover
    from .simulation import ExperimentConfig

__all__ = [
    "ConditioningError",
    "AugmentSpec",
    "CovarianceBlocks",
    "EstimatorCoefficients",
    "max_total_order",
    "mean_augmented",
    "bit_cross_cov",
    "cov_block",
    "assemble_blocks",
    "build_estimator",
    "analytical_mse_block",
    "analytical_mse_direct",
    "analytical_mse_linear",
    "estimate",
    "augment_measurements",
    "scale_blocks",
]

# Ridge ladder: unregularized first, then decades from 1e-12 to 1e-8.
_RIDGE_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
_SOLVE_RTOL = 1e-6


class ConditioningError(RuntimeError):
    """Covariance solve failed even after ridge escalation."""


@dataclass(frozen=True)
class AugmentSpec:
    """Power factors used to build the measurement vector.

    With ``augmented`` the vector is [z^m, z^n] per receiver; otherwise the
    conventional combiner uses z^m alone.  m = n is rejected because it
    makes the augmented covariance exactly singular.
    """

    m: int = 1
    n: int | None = 2
    augmented: bool = True

    def __post_init__(self):
        if self.m != int(self.m) or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        if self.augmented:
            if self.n is None or self.n != int(self.n) or self.n < 1:
                raise ValueError(f"augmented spec needs a positive integer n, got {self.n!r}")
            if int(self.n) == int(self.m):
                raise ValueError("m = n makes the augmented covariance singular")

    @classmethod
    def single(cls, m: int) -> "AugmentSpec":
        return cls(m=m, n=None, augmented=False)

    @classmethod
    def pair(cls, m: int, n: int) -> "AugmentSpec":
        return cls(m=m, n=n, augmented=True)

    @classmethod
    def parse(cls, text) -> "AugmentSpec":
        """Parse 'm' (conventional) or 'm,n' (augmented)."""
        if isinstance(text, AugmentSpec):
            return text
        parts = [p.strip() for p in str(text).split(",") if p.strip()]
        if len(parts) == 1:
            return cls.single(int(parts[0]))
        if len(parts) == 2:
            return cls.pair(int(parts[0]), int(parts[1]))
        raise ValueError(f"cannot parse factor spec {text!r}; expected 'm' or 'm,n'")

    @property
    def factors(self) -> tuple:
        return (self.m, self.n) if self.augmented else (self.m,)

    def label(self) -> str:
        return ",".join(str(f) for f in self.factors)


def max_total_order(kind: ReceiverKind) -> int:
    """Largest supported m + n (or 2m) per receiver kind."""
    return 12 if ReceiverKind(kind) == ReceiverKind.PC else 8


def _validate_orders(spec: AugmentSpec, kind: ReceiverKind):
    bound = max_total_order(kind)
    total = spec.m + spec.n if spec.augmented else 2 * spec.m
    if total > bound:
        raise ValueError(
            f"factor orders {spec.factors} exceed the supported total {bound} "
            f"for {ReceiverKind(kind).value} receivers"
        )


@dataclass
class CovarianceBlocks:
    """First/second-order statistics of the augmented measurement vector.

    mean is E[x]; bit_cross the covariance row between the slot bit and x;
    cov_m / cov_n the per-factor covariance blocks; cov_mn their cross
    block (absent for the conventional combiner); bit_mean = 1/M and
    bit_var = 1/M - 1/M^2.
    """

    mean: np.ndarray
    bit_cross: np.ndarray
    cov_m: np.ndarray
    cov_n: np.ndarray | None
    cov_mn: np.ndarray | None
    bit_mean: float
    bit_var: float

    @property
    def k_receivers(self) -> int:
        return self.cov_m.shape[0]

    def full_cov(self) -> np.ndarray:
        if self.cov_n is None:
            return self.cov_m
        top = np.hstack([self.cov_m, self.cov_mn])
        bottom = np.hstack([self.cov_mn.T, self.cov_n])
        return np.vstack([top, bottom])


@dataclass(frozen=True)
class EstimatorCoefficients:
    """Affine combiner: estimate = weights . x + intercept."""

    weights: np.ndarray
    intercept: float
    ridge: float = 0.0

    @property
    def regularized(self) -> bool:
        return self.ridge > 0.0


# ---------------------------------------------------------------------------
# moment plumbing

def _context(cfg: "ExperimentConfig") -> MomentContext:
    return MomentContext(cfg.modulation.order, cfg.channel.background_mean)


def _count_weights(order: int, channel: ChannelParams) -> np.ndarray:
    """Weights w with E[z^order | count-mean lam] = sum_q w[q] E_Poisson[c^q]."""
    if channel.receiver_kind == ReceiverKind.PC:
        w = np.zeros(order + 1)
        w[order] = 1.0
        return w
    det = channel.detector
    w = np.zeros(order + 1)
    for k in range(order // 2 + 1):
        for l in range(k + 1):
            w[order - k - l] += pg_expansion_coeff(order, k, l, det)
    return w


def _pulse_moment(order: int, lam_i: float, channel: ChannelParams) -> float:
    lam = channel.background_mean + lam_i
    if channel.receiver_kind == ReceiverKind.PC:
        return poisson_raw_moment(order, lam)
    return pg_raw_moment(order, lam, channel.detector)


def _mixed_moment(order: int, lam_i: float, channel: ChannelParams, ctx: MomentContext) -> float:
    """Prior-mixed raw moment E[z^order] via the slot-prior term helpers."""
    weights = _count_weights(order, channel)
    total = 0.0
    for q, w in enumerate(weights):
        if w == 0.0:
            continue
        total += w * math.fsum(mixed_poisson_term(q, l, lam_i, ctx) for l in range(q + 1))
    return total / ctx.ppm_order


def _mixed_cross_moment(
    order_i: int, order_j: int, lam_i: float, lam_j: float,
    channel: ChannelParams, ctx: MomentContext,
) -> float:
    """Prior-mixed E[z_i^a z_j^b] for distinct receivers (conditionally independent)."""
    wi = _count_weights(order_i, channel)
    wj = _count_weights(order_j, channel)
    total = 0.0
    for qi, a in enumerate(wi):
        if a == 0.0:
            continue
        for qj, b in enumerate(wj):
            if b == 0.0:
                continue
            inner = math.fsum(
                mixed_poisson_cross_term(qi, qj, li, lj, lam_i, lam_j, ctx)
                for li in range(qi + 1)
                for lj in range(qj + 1)
            )
            total += a * b * inner
    return total / ctx.ppm_order


# ---------------------------------------------------------------------------
# block assembly

def mean_augmented(cfg: "ExperimentConfig") -> np.ndarray:
    """E[x] for the augmented vector, factor-m block then factor-n block."""
    ctx = _context(cfg)
    channel = cfg.channel
    return np.array([
        _mixed_moment(f, lam, channel, ctx)
        for f in cfg.augment.factors
        for lam in channel.signal_means
    ])


def bit_cross_cov(cfg: "ExperimentConfig") -> np.ndarray:
    """Covariance row between the slot bit and the augmented vector.

    Per component (1/M) E[z^f | pulse] - (1/M) E[z^f].
    """
    ctx = _context(cfg)
    channel = cfg.channel
    prior = 1.0 / ctx.ppm_order
    return np.array([
        prior * (_pulse_moment(f, lam, channel) - _mixed_moment(f, lam, channel, ctx))
        for f in cfg.augment.factors
        for lam in channel.signal_means
    ])


def cov_block(cfg: "ExperimentConfig", a: int, b: int) -> np.ndarray:
    """Covariance block P between the z^a and z^b converted vectors.

    Diagonal entries come from the single-receiver moment of order a + b;
    off-diagonal entries use the conditional-independence product form.
    """
    if a not in cfg.augment.factors or b not in cfg.augment.factors:
        raise ValueError(f"factors ({a}, {b}) not in the active set {cfg.augment.factors}")
    ctx = _context(cfg)
    channel = cfg.channel
    lams = channel.signal_means
    k = len(lams)
    mean_a = [_mixed_moment(a, lam, channel, ctx) for lam in lams]
    mean_b = mean_a if b == a else [_mixed_moment(b, lam, channel, ctx) for lam in lams]
    out = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                r = _mixed_moment(a + b, lams[i], channel, ctx)
            else:
                r = _mixed_cross_moment(a, b, lams[i], lams[j], channel, ctx)
            out[i, j] = r - mean_a[i] * mean_b[j]
    if a == b:
        out = 0.5 * (out + out.T)
    return out


def assemble_blocks(cfg: "ExperimentConfig") -> CovarianceBlocks:
    """All statistics needed to build the combiner and evaluate its MSE."""
    _validate_orders(cfg.augment, cfg.channel.receiver_kind)
    order = cfg.modulation.order
    spec = cfg.augment
    blocks = CovarianceBlocks(
        mean=mean_augmented(cfg),
        bit_cross=bit_cross_cov(cfg),
        cov_m=cov_block(cfg, spec.m, spec.m),
        cov_n=cov_block(cfg, spec.n, spec.n) if spec.augmented else None,
        cov_mn=cov_block(cfg, spec.m, spec.n) if spec.augmented else None,
        bit_mean=1.0 / order,
        bit_var=1.0 / order - 1.0 / order**2,
    )
    return blocks


# ---------------------------------------------------------------------------
# equilibrated ridge solves

def _solve_scaled(mat: np.ndarray, rhs: np.ndarray, eps: float) -> np.ndarray:
    """Solve mat @ x = rhs after symmetric Jacobi scaling, with ridge eps.

    The ridge inflates the unit diagonal of the equilibrated matrix, i.e.
    it adds eps * diag(mat) in the original variables, matching the
    trace-scaled ridge policy while staying invariant under per-factor
    measurement rescaling.
    """
    diag = np.sqrt(np.clip(np.diag(mat), 0.0, None))
    s = np.where(diag > 0, diag, 1.0)
    scaled = mat / np.outer(s, s)
    if eps > 0.0:
        scaled = scaled + eps * np.eye(len(s))
    rhs_scaled = (np.asarray(rhs, dtype=float).T / s).T
    y = np.linalg.solve(scaled, rhs_scaled)
    if not np.all(np.isfinite(y)):
        raise np.linalg.LinAlgError("non-finite solve result")
    return (y.T / s).T


def _ladder(compute, accept, label: str):
    """Run compute(eps) up the ridge ladder until accept(result) holds."""
    for eps in _RIDGE_LADDER:
        try:
            result = compute(eps)
        except np.linalg.LinAlgError:
            continue
        if accept(result):
            return result, eps
    raise ConditioningError(f"covariance solve failed after ridge escalation: {label}")


def build_estimator(blocks: CovarianceBlocks) -> EstimatorCoefficients:
    """Solve the normal equations P_xx alpha = bit_cross for the combiner."""
    pbx = blocks.bit_cross
    if not np.any(pbx):
        # Measurements carry no bit information; the best affine estimate
        # is the constant prior mean.
        return EstimatorCoefficients(np.zeros_like(pbx), blocks.bit_mean)
    pxx = blocks.full_cov()
    scale = max(float(np.linalg.norm(pbx)), np.finfo(float).tiny)

    def accept(alpha):
        resid = np.linalg.norm(pxx @ alpha - pbx)
        return bool(np.all(np.isfinite(alpha)) and resid <= _SOLVE_RTOL * scale)

    alpha, eps = _ladder(lambda e: _solve_scaled(pxx, pbx, e), accept,
                         f"estimator build (dim={len(pbx)})")
    intercept = blocks.bit_mean - float(alpha @ blocks.mean)
    return EstimatorCoefficients(alpha, intercept, ridge=eps)


def _explained(blocks: CovarianceBlocks, eps: float) -> float:
    """bit_cross . P_xx^-1 . bit_cross at ridge level eps (direct form)."""
    return float(blocks.bit_cross @ _solve_scaled(blocks.full_cov(), blocks.bit_cross, eps))


def _explained_schur(blocks: CovarianceBlocks, eps: float) -> float:
    """Same quantity via the two-stage Schur form."""
    k = blocks.k_receivers
    bc_m = blocks.bit_cross[:k]
    bc_n = blocks.bit_cross[k:]
    stacked = np.column_stack([bc_m, blocks.cov_mn])
    solved = _solve_scaled(blocks.cov_m, stacked, eps)
    x_bc = solved[:, 0]
    x_mn = solved[:, 1:]
    linear_part = float(bc_m @ x_bc)
    resid_cross = bc_n - bc_m @ x_mn
    schur = blocks.cov_n - blocks.cov_mn.T @ x_mn
    schur = 0.5 * (schur + schur.T)
    y = _solve_scaled(schur, resid_cross, eps)
    return linear_part + float(resid_cross @ y)


def _mse_accept(blocks: CovarianceBlocks):
    tol = 1e-6 * blocks.bit_var

    def accept(explained):
        return math.isfinite(explained) and -tol <= blocks.bit_var - explained <= blocks.bit_var + tol

    return accept


def _clip_mse(value: float, bit_var: float) -> float:
    return float(min(max(value, 0.0), bit_var))


def analytical_mse_direct(blocks: CovarianceBlocks) -> float:
    """Bit MSE via the direct joint-inverse form bit_var - pbx P_xx^-1 pbx^T."""
    if not np.any(blocks.bit_cross):
        return blocks.bit_var
    explained, _ = _ladder(lambda e: _explained(blocks, e), _mse_accept(blocks), "direct MSE")
    return _clip_mse(blocks.bit_var - explained, blocks.bit_var)


def analytical_mse_linear(blocks: CovarianceBlocks) -> float:
    """Bit MSE of the conventional combiner restricted to the factor-m block."""
    k = blocks.k_receivers
    bc_m = blocks.bit_cross[:k]
    if not np.any(bc_m):
        return blocks.bit_var

    def compute(eps):
        return float(bc_m @ _solve_scaled(blocks.cov_m, bc_m, eps))

    explained, _ = _ladder(compute, _mse_accept(blocks), "linear MSE")
    return _clip_mse(blocks.bit_var - explained, blocks.bit_var)


def analytical_mse_block(blocks: CovarianceBlocks) -> float:
    """Bit MSE via the two-stage Schur form, self-checked against the direct form."""
    if blocks.cov_n is None:
        return analytical_mse_linear(blocks)
    if not np.any(blocks.bit_cross):
        return blocks.bit_var
    base_accept = _mse_accept(blocks)
    direct = analytical_mse_direct(blocks)
    tol = 1e-6 * blocks.bit_var

    def accept(explained):
        if not base_accept(explained):
            return False
        return abs((blocks.bit_var - explained) - direct) <= tol

    explained, _ = _ladder(lambda e: _explained_schur(blocks, e), accept, "block MSE (Schur form)")
    return _clip_mse(blocks.bit_var - explained, blocks.bit_var)


def _mse_report(blocks: CovarianceBlocks) -> tuple:
    """(block MSE, linear MSE, regularized flag) for sweep records."""
    if not np.any(blocks.bit_cross):
        return blocks.bit_var, blocks.bit_var, False
    regularized = False
    k = blocks.k_receivers
    bc_m = blocks.bit_cross[:k]
    if np.any(bc_m):
        explained, eps = _ladder(
            lambda e: float(bc_m @ _solve_scaled(blocks.cov_m, bc_m, e)),
            _mse_accept(blocks), "linear MSE")
        linear = _clip_mse(blocks.bit_var - explained, blocks.bit_var)
        regularized |= eps > 0
    else:
        linear = blocks.bit_var
    if blocks.cov_n is None:
        return linear, linear, regularized
    explained, eps = _ladder(lambda e: _explained(blocks, e), _mse_accept(blocks), "direct MSE")
    regularized |= eps > 0
    block = _clip_mse(blocks.bit_var - explained, blocks.bit_var)
    return block, linear, regularized


# ---------------------------------------------------------------------------
# applying the estimator

def augment_measurements(measurements, spec: AugmentSpec) -> np.ndarray:
    """Stack z^f feature columns for a (n_samples, K) measurement array."""
    z = np.asarray(measurements, dtype=float)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D (n_samples, K) array, got shape {z.shape}")
    return np.hstack([z**f for f in spec.factors])


def estimate(coeffs: EstimatorCoefficients, z, spec: AugmentSpec) -> float:
    """Apply the affine combiner to one K-receiver measurement vector."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a 1-D measurement vector, got shape {z.shape}")
    x = np.concatenate([z**f for f in spec.factors])
    value = float(coeffs.weights @ x + coeffs.intercept)
    if not math.isfinite(value):
        raise ValueError(f"non-finite estimate for measurement {z.tolist()!r}")
    return value


def scale_blocks(blocks: CovarianceBlocks, c: float, spec: AugmentSpec) -> CovarianceBlocks:
    """Statistics of the rescaled measurements c * z (factor f scales by c^f)."""
    c = float(c)
    if not math.isfinite(c) or c <= 0:
        raise ValueError(f"scale must be finite and > 0, got {c!r}")
    k = blocks.k_receivers
    factor_scale = np.concatenate([
        np.full(k, c**f) for f in spec.factors
    ])
    m_scale = c ** spec.m
    return CovarianceBlocks(
        mean=blocks.mean * factor_scale,
        bit_cross=blocks.bit_cross * factor_scale,
        cov_m=blocks.cov_m * m_scale**2,
        cov_n=None if blocks.cov_n is None else blocks.cov_n * c ** (2 * spec.n),
        cov_mn=None if blocks.cov_mn is None else blocks.cov_mn * m_scale * c**spec.n,
        bit_mean=blocks.bit_mean,
        bit_var=blocks.bit_var,
    )
