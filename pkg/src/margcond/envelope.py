"""Envelope distributions of the likelihood-ratio contrast.

For a fixed strong correlation ``rho`` the contrast has a family of limiting
laws ``F_{rho, gamma}`` indexed by the local parameter ``gamma``.  The envelope
``Fbar_rho(x) = sup_gamma F_{rho, gamma}(x)`` removes the dependence on
``gamma``; its lower ``alpha``-quantile is a decision threshold that controls
the error whatever the (unknown) local parameter is.

* ``rho = 0``: analytic, ``Fbar_0(x) = Phi(-sqrt(-x))`` for ``x < 0``.
* ``rho = 1``: the law of ``Z1^2 - Z2^2`` with density ``K0(|u|/2) / (2 pi)``.
* ``0 < rho < 1``: Monte Carlo over a ``gamma`` grid with common random numbers.

Throughout, the family under ``M0`` is written in the reparametrised form
``rho * ((Z1 + g sqrt((1+rho)/2))^2 - (Z2 + g sqrt((1-rho)/2))^2)``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DomainError, UnknownAlpha

DEFAULT_SEED = 20190801
TABLE_ENV_VAR = "ENVELOPE_TABLE_PATH"
CSV_HEADER = "rho,alpha,neg_quantile,mc_samples,seed"


@dataclass(frozen=True)
class EnvelopeConfig:
    """Monte Carlo settings for envelope quantiles and p-values.

    The ``gamma`` grid nominally spans ``[gamma_lo, gamma_hi]`` with spacing
    ``gamma_step``.  Because the maximising ``gamma`` grows like ``1/rho``, the
    upper end is stretched to ``gamma_lo + delta_reach / rho`` when that is
    larger, keeping the number of grid points fixed.  Set ``delta_reach=0`` to
    disable the stretch.
    """

    gamma_lo: float = 0.0
    gamma_hi: float = 10.0
    gamma_step: float = 0.05
    n_samples: int = 10**6
    seed: int = DEFAULT_SEED
    delta_reach: float = 4.0

    def __post_init__(self):
        if not (self.gamma_step > 0) or self.gamma_hi < self.gamma_lo or self.gamma_lo < 0:
            raise ConfigError(
                f"empty or invalid gamma grid [{self.gamma_lo}, {self.gamma_hi}] step {self.gamma_step}"
            )
        if self.n_samples < 10**4:
            raise ConfigError(f"need at least 10^4 Monte Carlo samples, got {self.n_samples}")
        if self.delta_reach < 0:
            raise ConfigError("delta_reach must be non-negative")

    @property
    def n_gamma(self) -> int:
        return int(round((self.gamma_hi - self.gamma_lo) / self.gamma_step)) + 1

    def gamma_grid(self, rho: float) -> np.ndarray:
        hi = self.gamma_hi
        if self.delta_reach > 0 and rho > 0:
            hi = max(hi, self.gamma_lo + self.delta_reach / rho)
        return np.linspace(self.gamma_lo, hi, self.n_gamma)


DEFAULT_CONFIG = EnvelopeConfig()


def _check_alpha(alpha: float, upper: float = 0.5) -> float:
    alpha = float(alpha)
    if not (0 < alpha < upper):
        raise ConfigError(f"alpha must lie in (0, {upper}), got {alpha}")
    return alpha


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not (0 <= rho <= 1):
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    return rho


def _kth(alpha: float, n: int) -> int:
    # inverse empirical CDF: smallest order statistic with ECDF >= alpha
    return max(int(math.ceil(alpha * n)) - 1, 0)


def rho_stream_key(rho: float) -> int:
    return int(round(rho * 1_000_000))


@lru_cache(maxsize=4)
def _common_draws(rho_key: int, n_samples: int, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rho_key,)))
    z1 = rng.standard_normal(n_samples)
    z2 = rng.standard_normal(n_samples)
    base = z1 * z1 - z2 * z2
    for a in (z1, z2, base):
        a.setflags(write=False)
    return z1, z2, base


def _law_values(rho, gamma, z1, z2, base, out=None):
    """``F_{rho,gamma}`` draws, expanded around the shared ``Z1^2 - Z2^2``."""
    a = gamma * math.sqrt((1 + rho) / 2)
    b = gamma * math.sqrt((1 - rho) / 2)
    out = np.multiply(z1, 2 * a, out=out)
    out -= (2 * b) * z2
    out += base
    out += a * a - b * b
    out *= rho
    return out


def law_samples(rho: float, gamma: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Independent draws from ``F_{rho, gamma}``."""
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    return _law_values(rho, gamma, z1, z2, z1 * z1 - z2 * z2)


def cdf_ww_envelope(x):
    """Envelope CDF for the weak-weak regime.

    ``Phi(-sqrt(-x))`` for ``x < 0`` and ``1`` for ``x >= 0``: the negative
    part is half a negated chi-square with one degree of freedom, and the
    remaining half is a point mass at zero.
    """
    x = np.asarray(x, dtype=float)
    neg = np.minimum(x, 0.0)
    out = np.where(x < 0, stats.norm.cdf(-np.sqrt(-neg)), 1.0)
    return float(out) if out.ndim == 0 else out


def ww_envelope_quantile(alpha: float) -> float:
    """Lower ``alpha``-quantile of the weak-weak envelope, ``-chi2_1^{-1}(1 - 2 alpha)``."""
    alpha = _check_alpha(alpha)
    return -float(stats.chi2.ppf(1 - 2 * alpha, 1))


def bessel_density(u):
    """Density ``K0(|u|/2) / (2 pi)`` of ``Z1^2 - Z2^2``; undefined at zero."""
    u = np.asarray(u, dtype=float)
    if np.any(u == 0):
        raise DomainError("Bessel density diverges at u = 0")
    out = special.k0(np.abs(u) / 2) / (2 * np.pi)
    return float(out) if out.ndim == 0 else out


def bessel_cdf(x):
    """CDF of ``Z1^2 - Z2^2`` via the integrated ``K0`` tail."""
    x = np.asarray(x, dtype=float)
    _, ik0 = special.iti0k0(np.abs(x) / 2)
    lower = 0.5 - ik0 / np.pi
    out = np.where(x <= 0, lower, 1 - lower)
    return float(out) if out.ndim == 0 else out


def mc_law_quantile(
    rho: float,
    gamma: float,
    alpha: float,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Empirical ``alpha``-quantile of ``n_samples`` draws from ``F_{rho, gamma}``."""
    if not (0 < rho <= 1):
        raise ConfigError(f"rho must lie in (0, 1], got {rho}")
    alpha = _check_alpha(alpha, upper=1.0)
    if n_samples < 10**4:
        raise ConfigError("need at least 10^4 samples")
    x = law_samples(rho, gamma, rng, n_samples)
    k = _kth(alpha, n_samples)
    return float(np.partition(x, k)[k])


def _scan_quantiles(rho: float, alphas: Sequence[float], cfg: EnvelopeConfig):
    z1, z2, base = _common_draws(rho_stream_key(rho), cfg.n_samples, cfg.seed)
    ks = [_kth(a, cfg.n_samples) for a in alphas]
    uniq = sorted(set(ks))
    best = np.full(len(alphas), np.inf)
    best_gamma = np.zeros(len(alphas))
    buf = np.empty(cfg.n_samples)
    for g in cfg.gamma_grid(rho):
        _law_values(rho, g, z1, z2, base, out=buf)
        buf.partition(uniq)
        for i, k in enumerate(ks):
            if buf[k] < best[i]:
                best[i] = buf[k]
                best_gamma[i] = g
    return best, best_gamma


def envelope_quantiles(rho: float, alphas: Sequence[float], cfg: EnvelopeConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Lower ``alpha``-quantiles of ``Fbar_rho`` for several levels at once.

    For ``rho > 0`` this is the minimum over the ``gamma`` grid of the
    empirical quantiles, all computed from one shared bank of draws.
    """
    rho = _check_rho(rho)
    alphas = [_check_alpha(a) for a in alphas]
    if not alphas:
        raise ConfigError("alpha list is empty")
    if rho == 0:
        return np.array([ww_envelope_quantile(a) for a in alphas])
    return _scan_quantiles(rho, alphas, cfg)[0]


def envelope_quantile(rho: float, alpha: float, cfg: EnvelopeConfig = DEFAULT_CONFIG) -> float:
    """Lower ``alpha``-quantile of the envelope ``Fbar_rho`` (a negative number)."""
    return float(envelope_quantiles(rho, [alpha], cfg)[0])


def envelope_quantile_se(rho: float, alpha: float, cfg: EnvelopeConfig = DEFAULT_CONFIG) -> float:
    """Monte Carlo standard error of :func:`envelope_quantile`.

    Estimated from the binomial spread of order statistics around the
    quantile of the maximising law.  Zero at ``rho = 0`` (no simulation).
    """
    rho = _check_rho(rho)
    alpha = _check_alpha(alpha)
    if rho == 0:
        return 0.0
    _, g = _scan_quantiles(rho, [alpha], cfg)
    z1, z2, base = _common_draws(rho_stream_key(rho), cfg.n_samples, cfg.seed)
    x = _law_values(rho, g[0], z1, z2, base)
    n = cfg.n_samples
    z = stats.norm.ppf(0.975)
    half = z * math.sqrt(n * alpha * (1 - alpha))
    lo = max(int(math.floor(alpha * n - half)), 0)
    hi = min(int(math.ceil(alpha * n + half)), n - 1)
    x.partition([lo, hi])
    return float((x[hi] - x[lo]) / (2 * z))


def envelope_cdf(x: float, rho: float, cfg: EnvelopeConfig = DEFAULT_CONFIG) -> float:
    """``sup_gamma`` of the empirical CDFs at ``x`` (analytic at ``rho = 0``)."""
    rho = _check_rho(rho)
    if rho == 0:
        return cdf_ww_envelope(x)
    z1, z2, base = _common_draws(rho_stream_key(rho), cfg.n_samples, cfg.seed)
    buf = np.empty(cfg.n_samples)
    best = 0
    for g in cfg.gamma_grid(rho):
        _law_values(rho, g, z1, z2, base, out=buf)
        best = max(best, int(np.count_nonzero(buf <= x)))
    return best / cfg.n_samples


def p_value(lam: float, rho: float, cfg: EnvelopeConfig = DEFAULT_CONFIG) -> float:
    """Conservative p-value ``Fbar_rho(-|lam|)``.

    Lies in ``[0, 1/2]``; a contrast of exactly zero gives ``1/2``.
    """
    rho = min(abs(float(rho)), 1.0)
    if lam == 0:
        return 0.5
    return min(envelope_cdf(-abs(lam), rho, cfg), 0.5)


@dataclass(eq=False)
class EnvelopeTable:
    """Negated envelope quantiles ``-Fbar_rho^{-1}(alpha)`` on a grid of ``rho``.

    ``quantiles[i, j]`` belongs to ``rho_grid[i]`` and ``alpha_list[j]``.
    """

    rho_grid: np.ndarray
    alpha_list: tuple
    quantiles: np.ndarray
    mc_samples: int
    gamma_grid: tuple
    seed: int
    delta_reach: float = DEFAULT_CONFIG.delta_reach
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rho_grid = np.asarray(self.rho_grid, dtype=float)
        self.alpha_list = tuple(float(a) for a in self.alpha_list)
        self.quantiles = np.asarray(self.quantiles, dtype=float)
        self.gamma_grid = tuple(float(g) for g in self.gamma_grid)
        if self.rho_grid.size == 0:
            raise ConfigError("rho grid is empty")
        if not self.alpha_list:
            raise ConfigError("alpha list is empty")
        if np.any(np.diff(self.rho_grid) <= 0) or self.rho_grid[0] < 0 or self.rho_grid[-1] > 1:
            raise ConfigError("rho grid must be strictly increasing within [0, 1]")
        for a in self.alpha_list:
            _check_alpha(a)
        if self.quantiles.shape != (self.rho_grid.size, len(self.alpha_list)):
            raise ConfigError("quantile matrix does not match the grid")
        if not np.all(self.quantiles > 0):
            raise ConfigError("negated quantiles must be positive")
        order = np.argsort(self.alpha_list)
        if np.any(np.diff(self.quantiles[:, order], axis=1) >= 0):
            raise ConfigError("negated quantiles must decrease as alpha grows")

    def __eq__(self, other):
        if not isinstance(other, EnvelopeTable):
            return NotImplemented
        return (
            np.array_equal(self.rho_grid, other.rho_grid)
            and self.alpha_list == other.alpha_list
            and np.array_equal(self.quantiles, other.quantiles)
            and self.mc_samples == other.mc_samples
            and self.gamma_grid == other.gamma_grid
            and self.seed == other.seed
            and self.delta_reach == other.delta_reach
        )

    def alpha_index(self, alpha: float) -> int:
        for j, a in enumerate(self.alpha_list):
            if math.isclose(a, alpha, rel_tol=1e-9, abs_tol=1e-12):
                return j
        raise UnknownAlpha(f"alpha={alpha} is not in the table (have {list(self.alpha_list)})")

    def config(self) -> EnvelopeConfig:
        lo, hi, step = self.gamma_grid
        return EnvelopeConfig(lo, hi, step, self.mc_samples, self.seed, self.delta_reach)

    @staticmethod
    def metadata_path(path) -> Path:
        path = Path(path)
        return path.with_name(path.name + ".json")

    def to_csv(self, path) -> None:
        path = Path(path)
        lines = [CSV_HEADER]
        for i, rho in enumerate(self.rho_grid):
            for j, alpha in enumerate(self.alpha_list):
                lines.append(f"{float(rho)!r},{float(alpha)!r},{float(self.quantiles[i, j])!r},{self.mc_samples},{self.seed}")
        path.write_text("\n".join(lines) + "\n")
        lo, hi, step = self.gamma_grid
        meta = {
            "gamma_lo": lo,
            "gamma_hi": hi,
            "gamma_step": step,
            "delta_reach": self.delta_reach,
            "N": self.mc_samples,
            "seed": self.seed,
        }
        meta.update(self.meta)
        self.metadata_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "EnvelopeTable":
        path = Path(path)
        rows = path.read_text().strip().splitlines()
        if not rows or rows[0].strip() != CSV_HEADER:
            raise ConfigError(f"{path}: expected header {CSV_HEADER!r}")
        data = {}
        samples = seeds = None
        for line in rows[1:]:
            if not line.strip():
                continue
            try:
                rho, alpha, q, n, s = line.split(",")
                data[(float(rho), float(alpha))] = float(q)
                samples, seeds = int(n), int(s)
            except ValueError as exc:
                raise ConfigError(f"{path}: malformed row {line!r}") from exc
        rhos = sorted({k[0] for k in data})
        alphas = []
        for k in data:
            if k[1] not in alphas:
                alphas.append(k[1])
        try:
            quant = np.array([[data[(r, a)] for a in alphas] for r in rhos])
        except KeyError as exc:
            raise ConfigError(f"{path}: table is not a full rho x alpha grid") from exc
        meta_path = cls.metadata_path(path)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        gamma = (
            meta.pop("gamma_lo", DEFAULT_CONFIG.gamma_lo),
            meta.pop("gamma_hi", DEFAULT_CONFIG.gamma_hi),
            meta.pop("gamma_step", DEFAULT_CONFIG.gamma_step),
        )
        reach = meta.pop("delta_reach", DEFAULT_CONFIG.delta_reach)
        meta.pop("N", None)
        meta.pop("seed", None)
        return cls(np.array(rhos), tuple(alphas), quant, samples, gamma, seeds, reach, meta)


def _table_row(args):
    rho, alphas, cfg = args
    return -envelope_quantiles(rho, alphas, cfg)


def build_envelope_table(
    rho_grid: Iterable[float],
    alpha_list: Iterable[float],
    cfg: EnvelopeConfig = DEFAULT_CONFIG,
    workers: int = 1,
) -> EnvelopeTable:
    """Tabulate negated envelope quantiles over ``rho_grid x alpha_list``.

    Each ``rho`` draws from its own seeded stream, so the result does not
    depend on ``workers``.
    """
    rhos = np.asarray(list(rho_grid), dtype=float)
    alphas = tuple(float(a) for a in alpha_list)
    if rhos.size == 0:
        raise ConfigError("rho grid is empty")
    if not alphas:
        raise ConfigError("alpha list is empty")
    for r in rhos:
        _check_rho(r)
    for a in alphas:
        _check_alpha(a)
    if np.any(np.diff(rhos) <= 0):
        raise ConfigError("rho grid must be strictly increasing")
    jobs = [(float(r), alphas, cfg) for r in rhos]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_table_row, jobs))
    else:
        rows = [_table_row(j) for j in jobs]
    return EnvelopeTable(
        rhos,
        alphas,
        np.vstack(rows),
        cfg.n_samples,
        (cfg.gamma_lo, cfg.gamma_hi, cfg.gamma_step),
        cfg.seed,
        cfg.delta_reach,
    )


def interp_quantile(table: EnvelopeTable, rho: float, alpha: float) -> float:
    """Piecewise-linear interpolation of ``-Fbar_rho^{-1}(alpha)`` in ``rho``."""
    j = table.alpha_index(alpha)
    rho = min(max(float(rho), 0.0), 1.0)
    return float(np.interp(rho, table.rho_grid, table.quantiles[:, j]))


def _default_table_path() -> Path:
    env = os.environ.get(TABLE_ENV_VAR)
    if env:
        return Path(env)
    return Path(str(resources.files("margcond") / "data" / "envelope_default.csv"))


@lru_cache(maxsize=4)
def _load_table(path: str) -> EnvelopeTable:
    return EnvelopeTable.from_csv(path)


def default_table() -> EnvelopeTable:
    """The shipped envelope table, or the one named by ``ENVELOPE_TABLE_PATH``."""
    return _load_table(str(_default_table_path()))
