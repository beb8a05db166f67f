"""Decision rules mapping sample statistics to ``M0``, ``M1`` or ``BOTH``.

``uniform`` and ``adaptive`` threshold the likelihood-ratio contrast at an
envelope quantile (the ``rho = 1`` quantile, or the one at the plug-in
``rho_hat``).  ``naive`` picks the larger likelihood.  ``interval`` checks
whether Fisher-z confidence intervals for ``rho12`` and ``rho12.3`` cover zero.

Each rule has a scalar form returning a :class:`Decision` and a vectorised
form (:func:`decide_batch`) used by the simulation harness; both share the
same threshold logic.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

from . import envelope as env
from .core import SampleStats, _corr_parts, correlations, lambda01, partial_corr_12_given_3
from .errors import ConfigError, TooFewSamples

RULES = ("adaptive", "uniform", "naive", "interval")

# integer codes used by the vectorised rules
M0, M1, BOTH = 0, 1, 2


class Choice(str, enum.Enum):
    M0 = "M0"
    M1 = "M1"
    BOTH = "BOTH"


_CODE_TO_CHOICE = {M0: Choice.M0, M1: Choice.M1, BOTH: Choice.BOTH}


@dataclass(frozen=True)
class Decision:
    choice: Choice
    rule: str
    alpha: float
    lam: float
    rho_hat: Optional[float] = None
    p_value: Optional[float] = None
    threshold: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "alpha": self.alpha,
            "lambda": self.lam,
            "rho_hat": self.rho_hat,
            "p_value": self.p_value,
            "decision": self.choice.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class FisherInterval:
    lo: float
    hi: float
    level: float

    def __contains__(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0 < alpha < 0.5):
        raise ConfigError(f"alpha must lie in (0, 1/2), got {alpha}")
    return alpha


def rho_hat(stats: SampleStats) -> float:
    """Plug-in strong-edge correlation ``max(|rho13|, |rho23|)``."""
    c = correlations(stats)
    return max(abs(c.rho13), abs(c.rho23))


def threshold_codes(lam, threshold) -> np.ndarray:
    """``M0`` above ``threshold``, ``M1`` below ``-threshold``, else ``BOTH``."""
    lam = np.asarray(lam, dtype=float)
    return np.where(lam > threshold, M0, np.where(lam < -np.asarray(threshold), M1, BOTH))


def naive_codes(lam) -> np.ndarray:
    return threshold_codes(lam, 0.0)


def _fisher_halfwidth(n, k: int, alpha: float):
    dof = np.asarray(n, dtype=float) - 3 - k
    if np.any(dof <= 0):
        raise TooFewSamples(f"Fisher interval needs n > {k + 3}")
    return sps.norm.ppf(1 - alpha / 2) / np.sqrt(dof)


def interval_codes(r12, r12_3, n, n_cond: int, alpha: float) -> np.ndarray:
    # 0 lies in tanh(atanh(r) -+ h) exactly when |atanh(r)| <= h
    zero_in_marg = np.abs(np.arctanh(r12)) <= _fisher_halfwidth(n, n_cond, alpha)
    zero_in_part = np.abs(np.arctanh(r12_3)) <= _fisher_halfwidth(n, n_cond + 1, alpha)
    return np.where(
        zero_in_marg & ~zero_in_part, M0, np.where(zero_in_part & ~zero_in_marg, M1, BOTH)
    )


def fisher_ci(r: float, n: int, k: int, alpha: float) -> FisherInterval:
    """Fisher-z interval ``tanh(atanh(r) -+ z_{alpha/2} / sqrt(n - 3 - k))``."""
    if not (-1 < r < 1):
        raise ConfigError(f"correlation must lie in (-1, 1), got {r}")
    if n <= k + 3:
        raise TooFewSamples(f"Fisher interval needs n > k + 3 = {k + 3}, got n={n}")
    h = float(_fisher_halfwidth(n, k, alpha))
    z = math.atanh(r)
    return FisherInterval(math.tanh(z - h), math.tanh(z + h), 1 - alpha)


def _table(table):
    return env.default_table() if table is None else table


def decide_uniform(
    stats: SampleStats,
    alpha: float,
    table: Optional[env.EnvelopeTable] = None,
    with_p_value: bool = True,
    cfg: env.EnvelopeConfig = env.DEFAULT_CONFIG,
) -> Decision:
    """Threshold at the ``rho = 1`` envelope quantile (3.19 at alpha = 0.05)."""
    alpha = check_alpha(alpha)
    lam = lambda01(stats)
    thr = env.interp_quantile(_table(table), 1.0, alpha)
    p = env.p_value(lam, 1.0, cfg) if with_p_value else None
    code = int(threshold_codes(lam, thr))
    return Decision(_CODE_TO_CHOICE[code], "uniform", alpha, lam, rho_hat(stats), p, thr)


def decide_adaptive(
    stats: SampleStats,
    alpha: float,
    table: Optional[env.EnvelopeTable] = None,
    with_p_value: bool = True,
    cfg: env.EnvelopeConfig = env.DEFAULT_CONFIG,
    exact: bool = False,
) -> Decision:
    """Threshold at the envelope quantile for the estimated ``rho_hat``.

    With ``exact=True`` the quantile is simulated at ``rho_hat`` using ``cfg``
    instead of being interpolated from ``table``.
    """
    alpha = check_alpha(alpha)
    lam = lambda01(stats)
    rh = rho_hat(stats)
    if exact:
        thr = -env.envelope_quantile(rh, alpha, cfg)
    else:
        thr = env.interp_quantile(_table(table), rh, alpha)
    p = env.p_value(lam, rh, cfg) if with_p_value else None
    code = int(threshold_codes(lam, thr))
    return Decision(_CODE_TO_CHOICE[code], "adaptive", alpha, lam, rh, p, thr)


def decide_naive(stats: SampleStats, alpha: float = 0.05) -> Decision:
    """Pick the model with the larger likelihood; an exact tie gives ``BOTH``."""
    lam = lambda01(stats)
    code = int(naive_codes(lam))
    return Decision(_CODE_TO_CHOICE[code], "naive", float(alpha), lam, rho_hat(stats), None, 0.0)


def decide_interval(stats: SampleStats, alpha: float) -> Decision:
    """Interval selection with Fisher-z intervals for ``rho12`` and ``rho12.3``.

    Variables already partialled out of ``stats`` (``stats.n_cond``) count
    towards the conditioning-set size of both intervals.
    """
    alpha = check_alpha(alpha)
    if stats.n <= stats.n_cond + 4:
        raise TooFewSamples(f"interval rule needs n > {stats.n_cond + 4}, got {stats.n}")
    r12 = correlations(stats).rho12
    r12_3 = partial_corr_12_given_3(stats)
    code = int(interval_codes(r12, r12_3, stats.n, stats.n_cond, alpha))
    return Decision(_CODE_TO_CHOICE[code], "interval", alpha, lambda01(stats), rho_hat(stats), None)


def decide(
    stats: SampleStats,
    rule: str,
    alpha: float,
    table: Optional[env.EnvelopeTable] = None,
    **kwargs,
) -> Decision:
    if rule == "adaptive":
        return decide_adaptive(stats, alpha, table, **kwargs)
    if rule == "uniform":
        return decide_uniform(stats, alpha, table, **kwargs)
    if rule == "naive":
        return decide_naive(stats, alpha)
    if rule == "interval":
        return decide_interval(stats, alpha)
    raise ConfigError(f"unknown rule {rule!r}; expected one of {RULES}")


def decide_batch(
    rule: str,
    S: np.ndarray,
    n: int,
    alpha: float,
    table: Optional[env.EnvelopeTable] = None,
    n_cond: int = 0,
) -> np.ndarray:
    """Decision codes for a stack of sample covariances sharing ``n``."""
    alpha = check_alpha(alpha)
    r12, r13, r23, r12_3 = _corr_parts(S)
    lam = n * (np.log1p(-(r12**2)) - np.log1p(-(r12_3**2)))
    if rule == "naive":
        return naive_codes(lam)
    if rule == "interval":
        return interval_codes(r12, r12_3, n, n_cond, alpha)
    tab = _table(table)
    j = tab.alpha_index(alpha)
    if rule == "uniform":
        thr = env.interp_quantile(tab, 1.0, alpha)
    elif rule == "adaptive":
        rh = np.minimum(np.maximum(np.abs(r13), np.abs(r23)), 1.0)
        thr = np.interp(rh, tab.rho_grid, tab.quantiles[:, j])
    else:
        raise ConfigError(f"unknown rule {rule!r}; expected one of {RULES}")
    return threshold_codes(lam, thr)
