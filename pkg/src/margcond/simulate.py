"""Size and power studies for the selection rules.

A :class:`ScenarioSpec` names how the truth is generated (a local alternative
in either regime, a projected Wishart draw, or a regression with covariates),
how many replicates to run and which rules to score.  :func:`run_scenario`
returns one :class:`SizePowerRecord` per rule.

For the local and Wishart settings the sample covariance is drawn directly
from its Wishart law ``n S ~ W_3(n, Sigma)`` by the Bartlett decomposition,
which is equal in distribution to simulating ``n`` mean-zero observations and
costs O(1) per replicate.  The regression setting simulates the raw data.

Replicate ``i`` draws from its own stream ``SeedSequence(seed, spawn_key=(i,))``
(redraws after a degenerate sample continue on that stream), so results do
not depend on how the work is scheduled.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from . import envelope as env
from .core import Cov3, SampleStats, mle_m0, mle_m1, pd_mask, sample_covariance
from .errors import ConfigError, NotPositiveDefinite, RankDeficient, SimulationError, TooFewSamples
from .laws import TruthSide, WeakStrong, WeakWeak, hellinger_sq, make_local_cov, optimal_power_band
from .rules import BOTH, M0, M1, RULES, check_alpha, decide_batch

CSV_COLUMNS = (
    "scenario", "rule", "side", "param1", "param2", "n", "reps", "size", "size_ci",
    "power", "power_ci", "both_rate", "opt_lo", "opt_hi", "seed",
)
MAX_RETRY_FRACTION = 0.01


@dataclass(frozen=True)
class LocalWS:
    rho: float
    gamma: float
    side: TruthSide
    n: int
    name = "local-ws"

    @property
    def params(self):
        return self.rho, self.gamma

    def regime(self):
        return WeakStrong(self.rho, self.gamma)


@dataclass(frozen=True)
class LocalWW:
    delta: float
    split_a: float
    side: TruthSide
    n: int
    name = "local-ww"

    @property
    def params(self):
        return self.delta, self.split_a

    def regime(self):
        return WeakWeak(self.delta, self.split_a)


@dataclass(frozen=True)
class Wishart:
    df: float
    side: TruthSide
    n: int
    name = "wishart"

    @property
    def params(self):
        return self.df, None


@dataclass(frozen=True)
class Regression:
    p: int
    df_wishart: float
    side: TruthSide
    n: int
    name = "regression"

    @property
    def params(self):
        return self.p, self.df_wishart


Kind = Union[LocalWS, LocalWW, Wishart, Regression]


@dataclass(frozen=True)
class ScenarioSpec:
    kind: Kind
    reps: int = 4000
    seed: int = 0
    rules: tuple = ("adaptive", "uniform", "interval", "naive")
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self.kind, "side", TruthSide(self.kind.side))
        if self.reps < 100:
            raise ConfigError(f"need at least 100 replicates, got {self.reps}")
        if self.kind.n < 10:
            raise ConfigError(f"need n >= 10, got {self.kind.n}")
        check_alpha(self.alpha)
        for r in self.rules:
            if r not in RULES:
                raise ConfigError(f"unknown rule {r!r}")
        if isinstance(self.kind, (Wishart, Regression)):
            df = self.kind.df if isinstance(self.kind, Wishart) else self.kind.df_wishart
            if df < 3:
                raise ConfigError("Wishart degrees of freedom must be at least 3")
        if isinstance(self.kind, Regression) and (self.kind.p < 0 or self.kind.n <= self.kind.p + 4):
            raise ConfigError("regression needs 0 <= p < n - 4")
        if isinstance(self.kind, (LocalWS, LocalWW)):
            self.kind.regime()  # validates parameters


@dataclass
class SizePowerRecord:
    scenario: str
    rule: str
    side: TruthSide
    param1: object
    param2: object
    n: int
    reps: int
    counts: dict
    seed: int
    opt_band: Optional[tuple] = None
    retries: int = 0

    def _rate(self, code) -> float:
        return self.counts[code] / self.reps

    @property
    def size(self) -> float:
        """Rate of selecting the false model alone."""
        return self._rate(M1 if self.side is TruthSide.UNDER_M0 else M0)

    @property
    def power(self) -> float:
        """Rate of selecting the true model alone."""
        return self._rate(M0 if self.side is TruthSide.UNDER_M0 else M1)

    @property
    def both_rate(self) -> float:
        # complement rather than count ratio so the three rates sum to exactly 1
        return 1.0 - (self.size + self.power)

    def _halfwidth(self, p: float) -> float:
        return 1.959963984540054 * math.sqrt(p * (1 - p) / self.reps)

    @property
    def size_ci(self) -> float:
        return self._halfwidth(self.size)

    @property
    def power_ci(self) -> float:
        return self._halfwidth(self.power)

    def size_se(self, alpha: float) -> float:
        """Binomial standard error of a size equal to ``alpha``."""
        return math.sqrt(alpha * (1 - alpha) / self.reps)

    def to_row(self) -> dict:
        lo, hi = self.opt_band if self.opt_band else ("", "")
        return {
            "scenario": self.scenario,
            "rule": self.rule,
            "side": self.side.value,
            "param1": "" if self.param1 is None else self.param1,
            "param2": "" if self.param2 is None else self.param2,
            "n": self.n,
            "reps": self.reps,
            "size": self.size,
            "size_ci": self.size_ci,
            "power": self.power,
            "power_ci": self.power_ci,
            "both_rate": self.both_rate,
            "opt_lo": lo,
            "opt_hi": hi,
            "seed": self.seed,
        }


def _as_matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, Cov3) else np.asarray(cov, dtype=float)


def _cholesky(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc


def sample_mvn(cov, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows of mean-zero Gaussian data with covariance ``cov``."""
    L = _cholesky(_as_matrix(cov))
    return rng.standard_normal((n, L.shape[0])) @ L.T


def bartlett_factor(k: int, df: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Lower-triangular ``A`` with ``A A^T ~ W_k(df, I)``."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    A = np.zeros(shape + (k, k))
    rows, cols = np.tril_indices(k, -1)
    A[..., rows, cols] = rng.standard_normal(shape + (rows.size,))
    for i in range(k):
        A[..., i, i] = np.sqrt(rng.chisquare(df - i, size=shape if shape else None))
    return A


def sample_wishart(scale, df: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Wishart draw(s) ``L A A^T L^T`` with ``scale = L L^T`` (Bartlett decomposition)."""
    M = _as_matrix(scale)
    k = M.shape[-1]
    if df < k:
        raise ConfigError(f"degrees of freedom {df} must be at least the dimension {k}")
    LA = _cholesky(M) @ bartlett_factor(k, df, rng, size)
    return LA @ np.swapaxes(LA, -1, -2)


def wishart_scale(k: int = 3) -> np.ndarray:
    """Scale matrix with entries ``(-1/2)^|i-j|``."""
    idx = np.arange(k)
    return (-0.5) ** np.abs(idx[:, None] - idx[None, :])


@dataclass
class Truth:
    cov: Cov3
    beta: Optional[np.ndarray] = None


def _projected_wishart(df: float, side: TruthSide, rng) -> Cov3:
    W = sample_wishart(wishart_scale(), df, rng) / df
    stats = SampleStats(Cov3(W), 10)
    return mle_m0(stats) if side is TruthSide.UNDER_M0 else mle_m1(stats)


def make_truth(kind: Kind, rng: np.random.Generator) -> Truth:
    """Population covariance (and regression coefficients) for one replicate."""
    if isinstance(kind, (LocalWS, LocalWW)):
        return Truth(make_local_cov(kind.regime(), kind.side, kind.n))
    if isinstance(kind, Wishart):
        return Truth(_projected_wishart(kind.df, kind.side, rng))
    if isinstance(kind, Regression):
        cov = _projected_wishart(kind.df_wishart, kind.side, rng)
        return Truth(cov, rng.standard_t(4, size=(kind.p, 3)))
    raise ConfigError(f"unknown scenario kind {kind!r}")


def regression_residual_stats(X: ArrayLike, Y: ArrayLike) -> SampleStats:
    """Residual covariance (divided by ``n``) after least-squares regression of ``Y`` on ``X``."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    p = X.shape[1]
    if p == 0:
        return sample_covariance(Y, center=False)
    if n <= p + 3:
        raise TooFewSamples(f"need n > p + 3, got n={n}, p={p}")
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < p:
        raise RankDeficient(f"design matrix has rank {rank} < {p}")
    R = Y - X @ coef
    RR = R.T @ R
    # residuals at rounding level mean Y is linear in X, whatever Cov3 makes of the noise
    if np.any(np.diag(RR) <= 1e-20 * np.diag(Y.T @ Y)):
        raise NotPositiveDefinite("residuals vanish: a response is a linear function of the covariates")
    return SampleStats(Cov3(RR / n), n, n_cond=p)


def _local_band(kind, alpha) -> tuple:
    p = make_local_cov(kind.regime(), TruthSide.UNDER_M0, kind.n)
    q = make_local_cov(kind.regime(), TruthSide.UNDER_M1, kind.n)
    return optimal_power_band(kind.n * hellinger_sq(p, q), alpha)


def _draw_one(kind: Kind, rng, fixed_chol: Optional[np.ndarray]) -> np.ndarray:
    n = kind.n
    if isinstance(kind, (LocalWS, LocalWW, Wishart)):
        L = fixed_chol if fixed_chol is not None else _cholesky(make_truth(kind, rng).cov.matrix)
        LA = L @ bartlett_factor(3, n, rng)
        return LA @ LA.T / n
    t = make_truth(kind, rng)
    X = rng.standard_normal((n, kind.p))
    Y = X @ t.beta + sample_mvn(t.cov, n, rng)
    try:
        return regression_residual_stats(X, Y).cov.matrix
    except (NotPositiveDefinite, RankDeficient):
        return np.full((3, 3), np.nan)


def replicate_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def simulate_covariances(spec: ScenarioSpec):
    """Sample covariances for every replicate, plus the number of redraws."""
    kind = spec.kind
    fixed = None
    if isinstance(kind, (LocalWS, LocalWW)):
        fixed = _cholesky(make_truth(kind, None).cov.matrix)
    out = np.empty((spec.reps, 3, 3))
    retries = 0
    limit = MAX_RETRY_FRACTION * spec.reps
    for i in range(spec.reps):
        rng = replicate_rng(spec.seed, i)
        S = _draw_one(kind, rng, fixed)
        while not pd_mask(S):
            retries += 1
            if retries > limit:
                raise SimulationError(
                    f"{retries} degenerate replicates exceed {MAX_RETRY_FRACTION:.0%} of {spec.reps}"
                )
            S = _draw_one(kind, rng, fixed)
        out[i] = S
    return out, retries


def run_scenario(spec: ScenarioSpec, table: Optional[env.EnvelopeTable] = None) -> list[SizePowerRecord]:
    """Replicate the scenario and tally each rule's decisions."""
    if table is None and any(r in ("adaptive", "uniform") for r in spec.rules):
        table = env.default_table()
    S, retries = simulate_covariances(spec)
    kind = spec.kind
    n_cond = kind.p if isinstance(kind, Regression) else 0
    band = _local_band(kind, spec.alpha) if isinstance(kind, (LocalWS, LocalWW)) else None
    p1, p2 = kind.params
    records = []
    for rule in spec.rules:
        codes = decide_batch(rule, S, kind.n, spec.alpha, table, n_cond=n_cond)
        counts = {c: int(np.count_nonzero(codes == c)) for c in (M0, M1, BOTH)}
        records.append(
            SizePowerRecord(kind.name, rule, kind.side, p1, p2, kind.n, spec.reps, counts, spec.seed, band, retries)
        )
    return records


def records_to_csv(records: Sequence[SizePowerRecord], fh=None) -> str:
    """Write records as CSV to ``fh`` (if given) and return the text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.to_row())
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text
