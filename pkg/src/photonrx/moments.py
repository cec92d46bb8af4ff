"""Exact raw-moment kernels for photon-detection statistics.

Photon-counting receivers produce Poisson-distributed counts; amplified
detectors (photomultiplier tubes, avalanche photodiodes) produce a
Poisson-Gaussian mixture: a Poisson photon count c amplified by the gain A
plus Gaussian noise of variance c*sigma^2 + sigma0^2 (per-photon shot noise
and thermal noise).  Raw moments of both families are polynomials in the
mean photon number whose coefficients involve Stirling numbers of the
second kind; this module evaluates them exactly.

All amplified-detector quantities are electron-normalized: a single photon
contributes mean A to the output instead of A*e coulombs.  High-order
moments in charge units would underflow float64; the affine estimator and
every error metric are invariant under this rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "MAX_ORDER",
    "MomentOrderError",
    "DetectorParams",
    "MomentContext",
    "stirling2",
    "poisson_raw_moment",
    "gaussian_raw_moment",
    "pg_expansion_coeff",
    "pg_raw_moment",
    "mixed_poisson_term",
    "mixed_poisson_cross_term",
]

# Exact-integer Stirling table bound.  s(k, l) overflows 64-bit integers
# near k = 26, so the table is kept in arbitrary-precision ints and only
# converted to float at evaluation time.
MAX_ORDER = 40


class MomentOrderError(ValueError):
    """Moment order or expansion index outside the supported range."""


def _build_stirling_table(limit: int) -> list[list[int]]:
    rows = [[1]]
    for k in range(1, limit + 1):
        prev = rows[-1]
        row = [0] * (k + 1)
        for l in range(1, k + 1):
            above = prev[l] if l < k else 0
            row[l] = l * above + prev[l - 1]
        rows.append(row)
    return rows


# Built once at import; read-only afterwards, safe for concurrent use.
_STIRLING = _build_stirling_table(MAX_ORDER)


def _check_index(value: int, name: str, bound: int = MAX_ORDER) -> int:
    if value != int(value) or value < 0:
        raise MomentOrderError(f"{name} must be a nonnegative integer, got {value!r}")
    value = int(value)
    if value > bound:
        raise MomentOrderError(f"{name}={value} exceeds the supported bound {bound}")
    return value


def stirling2(k: int, l: int) -> int:
    """Stirling number of the second kind s(k, l), exact.

    Counts partitions of a k-set into l nonempty blocks; s(0, 0) = 1 and
    s(k, l) = 0 for l > k.
    """
    k = _check_index(k, "k")
    if l != int(l) or l < 0:
        raise MomentOrderError(f"l must be a nonnegative integer, got {l!r}")
    l = int(l)
    if l > k:
        return 0
    return _STIRLING[k][l]


def _check_rate(lam: float, name: str = "lam") -> float:
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {lam!r}")
    return lam


def poisson_raw_moment(k: int, lam: float) -> float:
    """E[z^k] for z ~ Poisson(lam): sum_l s(k, l) * lam^l."""
    k = _check_index(k, "k")
    lam = _check_rate(lam)
    power = 1.0
    terms = []
    for l in range(k + 1):
        terms.append(_STIRLING[k][l] * power)
        power *= lam
    return math.fsum(terms)


def _gauss_pair_weight(k: int) -> int:
    # (2k)! / (k! 2^k), the number of perfect matchings of 2k items.
    return math.factorial(2 * k) // (math.factorial(k) * 2**k)


def gaussian_raw_moment(n: int, mu: float, var: float) -> float:
    """E[z^n] for z ~ Normal(mu, var).

    sum over k <= n/2 of C(n, 2k) * mu^(n-2k) * (2k)!/(k! 2^k) * var^k;
    odd moments about mu vanish, so mu = 0 with n odd gives exactly 0.
    """
    n = _check_index(n, "n", bound=4 * MAX_ORDER)
    mu = float(mu)
    var = float(var)
    if not math.isfinite(mu) or not math.isfinite(var) or var < 0:
        raise ValueError(f"need finite mu and var >= 0, got mu={mu!r} var={var!r}")
    terms = [
        math.comb(n, 2 * k) * mu ** (n - 2 * k) * _gauss_pair_weight(k) * var**k
        for k in range(n // 2 + 1)
    ]
    return math.fsum(terms)


@dataclass(frozen=True)
class DetectorParams:
    """Amplified-detector noise parameters, electron-normalized.

    gain is the multiplication factor A; shot_sigma the standard deviation
    of the shot noise stimulated by a single photon; thermal_sigma the
    thermal-noise standard deviation.  electron_charge is retained for unit
    bookkeeping only; all computation happens in electron-normalized units.
    """

    gain: float = 1.0
    shot_sigma: float = 0.0
    thermal_sigma: float = 0.0
    electron_charge: float = 1.602e-19

    def __post_init__(self):
        if not (math.isfinite(self.gain) and self.gain >= 1.0):
            raise ValueError(f"gain must be >= 1, got {self.gain!r}")
        if not (math.isfinite(self.shot_sigma) and self.shot_sigma >= 0.0):
            raise ValueError(f"shot_sigma must be >= 0, got {self.shot_sigma!r}")
        if not (math.isfinite(self.thermal_sigma) and self.thermal_sigma >= 0.0):
            raise ValueError(f"thermal_sigma must be >= 0, got {self.thermal_sigma!r}")
        if not (math.isfinite(self.electron_charge) and self.electron_charge > 0.0):
            raise ValueError(f"electron_charge must be > 0, got {self.electron_charge!r}")


@dataclass(frozen=True)
class MomentContext:
    """Per-slot prior context: PPM order M (pulse prior 1/M) and background mean."""

    ppm_order: int
    background_mean: float

    def __post_init__(self):
        if self.ppm_order != int(self.ppm_order) or self.ppm_order < 2:
            raise ValueError(f"ppm_order must be an integer >= 2, got {self.ppm_order!r}")
        _check_rate(self.background_mean, "background_mean")


def pg_expansion_coeff(n: int, k: int, l: int, det: DetectorParams) -> float:
    """Coefficient of the count moment E[c^(n-k-l)] in the mixture moment E[z^n].

    Conditioned on the photon count c, z is Gaussian with mean c*A and
    variance c*sigma^2 + sigma0^2.  Expanding the Gaussian raw moment and
    the binomial (c*sigma^2 + sigma0^2)^k and grouping powers of c gives

        C(n, 2k) * A^(n-2k) * (2k)!/(k! 2^k) * C(k, l)
        * sigma^(2(k-l)) * sigma0^(2l)

    for 0 <= k <= n//2 and 0 <= l <= k.
    """
    n = _check_index(n, "n")
    if k != int(k) or k < 0 or k > n // 2:
        raise MomentOrderError(f"k must satisfy 0 <= k <= n//2, got k={k!r} for n={n}")
    k = int(k)
    if l != int(l) or l < 0 or l > k:
        raise MomentOrderError(f"l must satisfy 0 <= l <= k, got l={l!r} for k={k}")
    l = int(l)
    return (
        math.comb(n, 2 * k)
        * det.gain ** (n - 2 * k)
        * _gauss_pair_weight(k)
        * math.comb(k, l)
        * det.shot_sigma ** (2 * (k - l))
        * det.thermal_sigma ** (2 * l)
    )


def pg_raw_moment(n: int, lam: float, det: DetectorParams) -> float:
    """E[z^n] for the Poisson(lam)-Gaussian mixture, electron-normalized.

    Triple sum of pg_expansion_coeff times Poisson raw moments of order
    n - k - l.
    """
    n = _check_index(n, "n")
    lam = _check_rate(lam)
    terms = []
    for k in range(n // 2 + 1):
        for l in range(k + 1):
            coeff = pg_expansion_coeff(n, k, l, det)
            if coeff != 0.0:
                terms.append(coeff * poisson_raw_moment(n - k - l, lam))
    return math.fsum(terms)


def mixed_poisson_term(k: int, l: int, lam_sig: float, ctx: MomentContext) -> float:
    """Stirling-weighted slot-prior sum s(k,l) * [(lam_b + lam_sig)^l + (M-1) lam_b^l].

    Summed over l and divided by M this yields the prior-mixed Poisson
    moment E[c^k] with pulse prior 1/M.  0^0 is 1, so lam_b = 0 is exact.
    """
    s = stirling2(k, l)
    if s == 0:
        return 0.0
    lam_sig = _check_rate(lam_sig, "lam_sig")
    lam_b = ctx.background_mean
    return s * ((lam_b + lam_sig) ** l + (ctx.ppm_order - 1) * lam_b**l)


def mixed_poisson_cross_term(
    u: int, v: int, w: int, x: int, y: float, z: float, ctx: MomentContext
) -> float:
    """Two-receiver slot-prior cross sum.

    s(u,w) s(v,x) [(lam_b + y)^w (lam_b + z)^x + (M-1) lam_b^(w+x)], the
    (w, x) term of the prior-mixed product E[c_i^u c_j^v] under conditional
    independence given the slot bit.  Symmetric under swapping
    (u, w, y) <-> (v, x, z).  This expanded form stays valid at lam_b = 0,
    where the factored form with (1 + y/lam_b) powers would divide by zero.
    """
    s = stirling2(u, w) * stirling2(v, x)
    if s == 0:
        return 0.0
    y = _check_rate(y, "y")
    z = _check_rate(z, "z")
    lam_b = ctx.background_mean
    return s * ((lam_b + y) ** w * (lam_b + z) ** x + (ctx.ppm_order - 1) * lam_b ** (w + x))
