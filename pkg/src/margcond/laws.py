"""Local alternatives near the model intersection and the limiting laws of the
likelihood-ratio contrast.

Two regimes are covered:

* weak-strong: ``rho13 = gamma / sqrt(n)`` shrinks while ``rho23 = rho`` stays
  fixed and nonzero;
* weak-weak: both correlations shrink with ``sqrt(n) * rho13 * rho23 = delta``.

In each regime the truth sits either in ``M0 \\ M1`` or in ``M1 \\ M0``; the
``M1`` member is always the likelihood projection of the ``M0`` member.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import Cov3
from .errors import ConfigError, NotPositiveDefinite


class TruthSide(str, enum.Enum):
    UNDER_M0 = "m0"
    UNDER_M1 = "m1"

    @property
    def index(self) -> int:
        return 0 if self is TruthSide.UNDER_M0 else 1


@dataclass(frozen=True)
class WeakStrong:
    rho: float
    gamma: float

    def __post_init__(self):
        if not (-1 < self.rho < 1) or self.rho == 0:
            raise ConfigError(f"weak-strong rho must lie in (-1, 1) and be nonzero, got {self.rho}")
        if not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite")


@dataclass(frozen=True)
class WeakWeak:
    delta: float
    split_a: float = 0.25

    def __post_init__(self):
        if self.delta == 0 or not math.isfinite(self.delta):
            raise ConfigError(f"weak-weak delta must be finite and nonzero, got {self.delta}")
        if not (0 < self.split_a < 0.5):
            raise ConfigError(f"split exponent must lie in (0, 1/2), got {self.split_a}")


Regime = Union[WeakStrong, WeakWeak]


def local_correlations(regime: Regime, n: int) -> tuple[float, float]:
    """``(rho13_n, rho23_n)`` of the local sequence at sample size ``n``."""
    if isinstance(regime, WeakStrong):
        return regime.gamma / math.sqrt(n), regime.rho
    root = math.sqrt(abs(regime.delta))
    r13 = math.copysign(root, regime.delta) * n ** (-regime.split_a)
    r23 = root * n ** (-(0.5 - regime.split_a))
    return r13, r23


def make_local_cov(
    regime: Regime,
    side: TruthSide,
    n: int,
    variances: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Cov3:
    """Member of the local sequence at sample size ``n``.

    The ``UNDER_M0`` matrix has ``sigma12 = 0``; the ``UNDER_M1`` matrix sets
    ``sigma12 = rho13 * rho23 * sqrt(sigma11 * sigma22)``, its projection onto
    conditional independence.
    """
    side = TruthSide(side)
    if n < 1:
        raise ConfigError("n must be positive")
    s1, s2, s3 = (math.sqrt(v) for v in variances)
    r13, r23 = local_correlations(regime, n)
    r12 = 0.0 if side is TruthSide.UNDER_M0 else r13 * r23
    m = np.array(
        [
            [s1 * s1, r12 * s1 * s2, r13 * s1 * s3],
            [r12 * s1 * s2, s2 * s2, r23 * s2 * s3],
            [r13 * s1 * s3, r23 * s2 * s3, s3 * s3],
        ]
    )
    try:
        return Cov3(m)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(
            f"local parameters too large for n={n}: rho13={r13:.4g}, rho23={r23:.4g}"
        ) from exc


def sample_ws_limit(rho: float, gamma: float, side: TruthSide, rng: np.random.Generator, size=None):
    """Draw from the weak-strong limiting law of the contrast.

    Under ``M0`` the law is
    ``rho * ((Z1 + g / sqrt(2(1-rho)))^2 - (Z2 + g / sqrt(2(1+rho)))^2)``;
    under ``M1`` the shifts are ``g * sqrt((1-rho)/2)`` and
    ``g * sqrt((1+rho)/2)``.  Only ``|rho|`` and ``|gamma|`` matter.
    """
    side = TruthSide(side)
    r, g = abs(rho), abs(gamma)
    if not (0 < r < 1):
        raise ConfigError(f"|rho| must lie in (0, 1), got {rho}")
    if side is TruthSide.UNDER_M0:
        a, b = g / math.sqrt(2 * (1 - r)), g / math.sqrt(2 * (1 + r))
    else:
        a, b = g * math.sqrt((1 - r) / 2), g * math.sqrt((1 + r) / 2)
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    return r * ((z1 + a) ** 2 - (z2 + b) ** 2)


def sample_ww_limit(delta: float, side: TruthSide, rng: np.random.Generator, size=None):
    """Draw from ``delta * (2Z + (-1)^i delta)``, i.e. ``N((-1)^i delta^2, 4 delta^2)``."""
    side = TruthSide(side)
    sign = 1.0 if side is TruthSide.UNDER_M0 else -1.0
    z = rng.standard_normal(size)
    return delta * (2 * z + sign * delta)


def hellinger_sq(p: Cov3, q: Cov3) -> float:
    """Squared Hellinger distance between ``N(0, p)`` and ``N(0, q)``."""
    _, ldp = np.linalg.slogdet(p.matrix)
    _, ldq = np.linalg.slogdet(q.matrix)
    _, ldm = np.linalg.slogdet((p.matrix + q.matrix) / 2)
    h2 = -math.expm1(0.25 * ldp + 0.25 * ldq - 0.5 * ldm)
    return min(max(h2, 0.0), 1.0)


def optimal_power_band(h: float, alpha: float) -> tuple[float, float]:
    """Bounds on the best achievable asymptotic power when ``n * H^2 -> h``.

    Returns ``(1 - exp(-h), min(1, alpha + sqrt(1 - exp(-2h))))``.
    """
    if h < 0:
        raise ConfigError("h must be non-negative")
    if not (0 < alpha < 1):
        raise ConfigError("alpha must lie in (0, 1)")
    if math.isinf(h):
        return 1.0, 1.0
    lower = -math.expm1(-h)
    upper = min(1.0, alpha + math.sqrt(-math.expm1(-2 * h)))
    return lower, upper
