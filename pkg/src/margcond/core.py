"""Closed-form Gaussian likelihoods for the two trivariate independence models.

``M0`` is marginal independence of the first two coordinates
(``sigma12 == 0``); ``M1`` is their conditional independence given the third
(``sigma12 * sigma33 == sigma13 * sigma23``).  Everything downstream is a
function of the sample covariance and the sample size, bundled together as
:class:`SampleStats`.

The sample covariance follows the mean-zero convention: the scatter matrix is
divided by ``n``, not ``n - 1``.  Callers holding an ``n - 1`` normalised
matrix should rescale it by ``(n - 1) / n`` first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import NotPositiveDefinite, NotSymmetric, TooFewSamples

SYM_RTOL = 1e-12
PD_RTOL = 1e-12


def _leading_minors_ok(m: np.ndarray) -> bool:
    d = np.diag(m)
    if not np.all(d > 0):
        return False
    k = m.shape[0]
    for i in range(1, k + 1):
        if np.linalg.det(m[:i, :i]) <= PD_RTOL * np.prod(d[:i]):
            return False
    return True


def pd_mask(S: np.ndarray) -> np.ndarray:
    """Vectorised positive-definiteness check for a stack of 3x3 matrices."""
    S = np.asarray(S, dtype=float)
    s11, s22, s33 = S[..., 0, 0], S[..., 1, 1], S[..., 2, 2]
    m2 = s11 * s22 - S[..., 0, 1] ** 2
    m3 = np.linalg.det(S)
    return (
        (s11 > 0)
        & (s22 > 0)
        & (s33 > 0)
        & (m2 > PD_RTOL * s11 * s22)
        & (m3 > PD_RTOL * s11 * s22 * s33)
    )


@dataclass(frozen=True, eq=False)
class Cov3:
    """A validated 3x3 symmetric positive definite matrix.

    The stored matrix is an exactly symmetric, read-only copy of the input.
    Construction raises :class:`NotSymmetric` or :class:`NotPositiveDefinite`.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotPositiveDefinite("matrix has non-finite entries")
        scale = np.max(np.abs(m))
        if np.max(np.abs(m - m.T)) > SYM_RTOL * scale:
            raise NotSymmetric("matrix is not symmetric")
        m = np.triu(m) + np.triu(m, 1).T
        if not _leading_minors_ok(m):
            raise NotPositiveDefinite("matrix is not positive definite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_entries(cls, s11, s12, s13, s22, s23, s33) -> "Cov3":
        return cls(np.array([[s11, s12, s13], [s12, s22, s23], [s13, s23, s33]], dtype=float))

    @property
    def entries(self) -> tuple[float, float, float, float, float, float]:
        """``(s11, s12, s13, s22, s23, s33)``."""
        m = self.matrix
        return (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])

    def __getitem__(self, idx):
        return self.matrix[idx]

    def __eq__(self, other):
        if not isinstance(other, Cov3):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        return f"Cov3({self.matrix.tolist()!r})"


@dataclass(frozen=True)
class SampleStats:
    """Sample covariance plus sample size.

    ``n_cond`` records how many variables were partialled out to obtain
    ``cov`` (see :func:`condition_on`); only the Fisher-z interval rule uses it.
    """

    cov: Cov3
    n: int
    n_cond: int = 0

    def __post_init__(self):
        if not isinstance(self.cov, Cov3):
            object.__setattr__(self, "cov", Cov3(self.cov))
        if int(self.n) != self.n or self.n < 1:
            raise TooFewSamples(f"sample size must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.n_cond < 0:
            raise ValueError("n_cond must be non-negative")


@dataclass(frozen=True)
class CorrTriple:
    rho12: float
    rho13: float
    rho23: float


def validate_spd(m: ArrayLike) -> Cov3:
    """Validate a raw symmetric 3x3 matrix and wrap it as :class:`Cov3`."""
    return Cov3(np.asarray(m, dtype=float))


def sample_covariance(data: ArrayLike, center: bool = False) -> SampleStats:
    """Sample covariance of an ``n x 3`` data matrix, divided by ``n``.

    With ``center=False`` (the default) the scatter is taken about zero,
    matching the mean-zero Gaussian likelihood.  ``center=True`` subtracts
    column means first, still dividing by ``n``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"expected an n x 3 data matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 4:
        raise TooFewSamples(f"need at least 4 observations, got {n}")
    if center:
        X = X - X.mean(axis=0)
    S = X.T @ X / n
    return SampleStats(Cov3(S), n)


def loglik(sigma: Cov3, stats: SampleStats) -> float:
    """Gaussian log-likelihood ``(n/2)(-log|sigma| - tr(S sigma^-1))``."""
    sgn, logdet = np.linalg.slogdet(sigma.matrix)
    tr = np.trace(np.linalg.solve(sigma.matrix, stats.cov.matrix))
    return 0.5 * stats.n * (-logdet - tr)


def mle_m0(stats: SampleStats) -> Cov3:
    """Maximum likelihood estimate under marginal independence of X1 and X2.

    The variances of X1, X2 are kept, ``sigma12`` is set to zero, and the
    regression of X3 on (X1, X2) is refitted.
    """
    s11, s12, s13, s22, s23, s33 = stats.cov.entries
    d = s11 * s22 - s12**2
    sig13 = s11 * (s22 * s13 - s12 * s23) / d
    sig23 = s22 * (s11 * s23 - s12 * s13) / d
    sig33 = s33 - 2 * s12 * (s12 * s13 - s11 * s23) * (s12 * s23 - s13 * s22) / d**2
    return Cov3.from_entries(s11, 0.0, sig13, s22, sig23, sig33)


def mle_m1(stats: SampleStats) -> Cov3:
    """Maximum likelihood estimate under X1 independent of X2 given X3.

    Every entry equals its sample counterpart except
    ``sigma12 = s13 * s23 / s33``.
    """
    s11, _, s13, s22, s23, s33 = stats.cov.entries
    return Cov3.from_entries(s11, s13 * s23 / s33, s13, s22, s23, s33)


def loglik_sat(stats: SampleStats) -> float:
    s11, s12, s13, s22, s23, s33 = stats.cov.entries
    det = s11 * s22 * s33 + 2 * s12 * s23 * s13 - s11 * s23**2 - s13**2 * s22 - s12**2 * s33
    return -0.5 * stats.n * (np.log(det) + 3)


def loglik_m0(stats: SampleStats) -> float:
    s11, s12, s13, s22, s23, s33 = stats.cov.entries
    resid = (s22 * s13**2 - 2 * s12 * s23 * s13 + s11 * s23**2) / (s12**2 - s11 * s22) + s33
    return -0.5 * stats.n * (np.log(s11 * s22 * resid) + 3)


def loglik_m1(stats: SampleStats) -> float:
    s11, _, s13, s22, s23, s33 = stats.cov.entries
    return -0.5 * stats.n * (np.log((s13**2 - s11 * s33) * (s23**2 - s22 * s33) / s33) + 3)


def _corr_parts(S: np.ndarray):
    S = np.asarray(S, dtype=float)
    sd = np.sqrt(np.stack([S[..., 0, 0], S[..., 1, 1], S[..., 2, 2]], axis=-1))
    r12 = S[..., 0, 1] / (sd[..., 0] * sd[..., 1])
    r13 = S[..., 0, 2] / (sd[..., 0] * sd[..., 2])
    r23 = S[..., 1, 2] / (sd[..., 1] * sd[..., 2])
    r12_3 = (r12 - r13 * r23) / np.sqrt((1 - r13**2) * (1 - r23**2))
    return r12, r13, r23, r12_3


def lambda_batch(S: ArrayLike, n) -> np.ndarray:
    """Likelihood-ratio contrast for a stack of covariance matrices.

    Uses the equivalent partial-correlation form
    ``n * (log(1 - r12^2) - log(1 - r12.3^2))``, which is exactly zero for
    diagonal input.
    """
    r12, _, _, r12_3 = _corr_parts(S)
    return n * (np.log1p(-(r12**2)) - np.log1p(-(r12_3**2)))


def lambda01(stats: SampleStats) -> float:
    """Twice the maximised log-likelihood of M0 minus that of M1.

    Positive values favour marginal independence, negative values favour
    conditional independence.  Invariant under rescaling of the coordinates.
    """
    return float(lambda_batch(stats.cov.matrix, stats.n))


def correlations(stats: SampleStats) -> CorrTriple:
    r12, r13, r23, _ = _corr_parts(stats.cov.matrix)
    return CorrTriple(float(r12), float(r13), float(r23))


def partial_corr_12_given_3(stats: SampleStats) -> float:
    return float(_corr_parts(stats.cov.matrix)[3])


def condition_on(
    full: ArrayLike,
    n: int,
    triple_idx: Sequence[int],
    cond_idx: Sequence[int] = (),
) -> SampleStats:
    """Conditional covariance of three coordinates given others.

    Returns the Schur complement ``S_AA - S_AB S_BB^-1 S_BA`` for the index
    triple ``A`` and conditioning set ``B``.  The sample size is passed
    through unchanged; ``n_cond`` is set to ``len(cond_idx)``.
    """
    M = np.asarray(full, dtype=float)
    k = M.shape[0]
    if M.ndim != 2 or M.shape != (k, k):
        raise ValueError("full covariance must be square")
    A = [int(i) for i in triple_idx]
    B = [int(i) for i in cond_idx]
    if len(A) != 3 or len(set(A)) != 3:
        raise ValueError("triple_idx must hold three distinct indices")
    if set(A) & set(B) or len(set(B)) != len(B):
        raise ValueError("triple and conditioning indices must be disjoint and distinct")
    if any(i < 0 or i >= k for i in A + B):
        raise ValueError("index out of range")
    if n <= len(A) + len(B):
        raise TooFewSamples(f"n={n} must exceed the number of variables used ({len(A) + len(B)})")
    if np.max(np.abs(M - M.T)) > SYM_RTOL * np.max(np.abs(M)):
        raise NotSymmetric("covariance matrix is not symmetric")
    sub = M[np.ix_(A + B, A + B)]
    if not _leading_minors_ok(sub):
        raise NotPositiveDefinite("covariance of the selected variables is not positive definite")
    S_AA = M[np.ix_(A, A)]
    if B:
        S_AB = M[np.ix_(A, B)]
        S_BB = M[np.ix_(B, B)]
        S_AA = S_AA - S_AB @ np.linalg.solve(S_BB, S_AB.T)
        S_AA = 0.5 * (S_AA + S_AA.T)
    return SampleStats(Cov3(S_AA), n, n_cond=len(B))
