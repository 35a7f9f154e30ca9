"""
The matrix sign function, exactly (SVD) and by quintic Newton-Schulz.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError, RangeError, ShapeError
from .linalg import Rng, as_matrix, derive_seed, frobenius_norm, svd

__all__ = [
    'ATTRACTOR_BAND',
    'NOMINAL_BAND',
    'OPTIMIZED',
    'PRESETS',
    'TAYLOR',
    'BandSurvey',
    'MsignReport',
    'NsCoefficients',
    'band_survey',
    'coefficients',
    'msign_exact',
    'msign_newton_schulz',
    'newton_schulz',
    'newton_schulz_step',
]


@dataclass(frozen=True)
class NsCoefficients:
    """
    Coefficients of the odd quintic ``p(t) = a t + b t^3 + c t^5``.
    """
    a: float
    b: float
    c: float
    label: str = 'custom'

    def __call__(self, t):
        t2 = t * t
        return t * (self.a + t2 * (self.b + self.c * t2))


OPTIMIZED = NsCoefficients(3.4445, -4.7750, 2.0315, 'optimized')
TAYLOR = NsCoefficients(15.0 / 8.0, -5.0 / 4.0, 3.0 / 8.0, 'taylor')
PRESETS = {OPTIMIZED.label: OPTIMIZED, TAYLOR.label: TAYLOR}

# the band quoted for K = 5 with the optimized coefficients
NOMINAL_BAND = (0.7, 1.3)
# once every singular value is >= 0.2105, the optimized quintic keeps them
# in [0.6818, 1.2024] (its local minimum and maximum)
ATTRACTOR_BAND = (0.68, 1.21)


def coefficients(preset):
    """
    Look up a coefficient preset by label (``'optimized'`` or ``'taylor'``).
    An ``NsCoefficients`` passes through unchanged.
    """
    if isinstance(preset, NsCoefficients):
        return preset
    try:
        return PRESETS[preset]
    except KeyError:
        raise ConfigError("unknown Newton-Schulz preset {!r}; choose from {}"
                          .format(preset, sorted(PRESETS)))


@dataclass
class MsignReport:
    result: np.ndarray
    iterations_used: int
    singular_value_min: float
    singular_value_max: float
    deviation_from_oracle: Optional[float] = None


def msign_exact(m, rank_tol=None):
    """
    ``U[:, :r] V[:, :r]^T`` from the thin SVD of ``m``.

    :raises DegenerateInputError: If ``m`` is the zero matrix.
    """
    m = as_matrix(m)
    dec = svd(m, rank_tol=rank_tol)
    return (dec.u @ dec.v.T).astype(m.dtype, copy=False)


def newton_schulz_step(x, coeffs):
    """
    One quintic step ``a X + b X (X^T X) + c X (X^T X)^2``.

    Wide inputs are iterated in transposed form so that the Gram product is
    always on the smaller side; the result is the same polynomial.
    """
    x = as_matrix(x)
    transposed = x.shape[0] < x.shape[1]
    if transposed:
        x = x.T
    gram = x.T @ x
    poly = coeffs.b * gram + coeffs.c * (gram @ gram)
    out = coeffs.a * x + x @ poly
    return out.T if transposed else out


def newton_schulz(m, coeffs, k):
    """
    ``K`` Newton-Schulz steps from ``X_0 = m / ||m||_F``; no checks beyond
    what the steps do themselves. Callers guarantee ``m`` is nonzero.
    """
    x = m / frobenius_norm(m)
    transposed = x.shape[0] < x.shape[1]
    if transposed:
        x = x.T
    for _ in range(k):
        x = newton_schulz_step(x, coeffs)
    return x.T if transposed else x


def msign_newton_schulz(m, coeffs=OPTIMIZED, k=5, oracle=False):
    """
    Approximate ``msign(m)`` with ``k`` Newton-Schulz steps and report on the
    spectrum of the result.

    :param m: A nonzero matrix.
    :param NsCoefficients coeffs: Quintic coefficients (or a preset label).
    :param int k: Number of steps, at least 1. There is no early stopping.
    :param bool oracle: Also compute the relative Frobenius deviation from
        :func:`msign_exact`.
    :return MsignReport: ``X_k`` and its extreme singular values.
    """
    coeffs = coefficients(coeffs)
    if k < 1:
        raise RangeError("k must be at least 1, got {}".format(k))
    m = as_matrix(m)
    if frobenius_norm(m) == 0.0:
        raise DegenerateInputError("msign of the zero matrix")
    x = newton_schulz(m, coeffs, k)
    spectrum = svd(x, rank_tol=0.0).singular_values
    deviation = None
    if oracle:
        exact = msign_exact(m)
        deviation = frobenius_norm(x - exact) / frobenius_norm(exact)
    return MsignReport(result=x, iterations_used=k,
                       singular_value_min=float(spectrum[-1]),
                       singular_value_max=float(spectrum[0]),
                       deviation_from_oracle=deviation)


@dataclass
class BandSurvey:
    shape: tuple
    k: int
    coeffs: NsCoefficients
    band: tuple
    trials: int = 0
    violations: int = 0
    worst_min: float = float('inf')
    worst_max: float = 0.0
    max_deviation: float = 0.0
    worst_seed: Optional[int] = None

    @property
    def passed(self):
        return self.trials > 0 and self.violations == 0


def _band_distance(report, band):
    low, high = band
    return max(low - report.singular_value_min,
               report.singular_value_max - high)


def band_survey(shape, coeffs=OPTIMIZED, k=5, trials=200, seed=0,
                band=NOMINAL_BAND, oracle=True):
    """
    Run :func:`msign_newton_schulz` on ``trials`` standard-normal matrices
    of ``shape`` and count results whose spectrum leaves the open ``band``.

    Trial ``j`` draws its matrix from ``Rng(derive_seed(seed, j))``, so the
    reported ``worst_seed`` reproduces the worst case on its own.
    """
    if trials < 1:
        raise RangeError("trials must be at least 1, got {}".format(trials))
    if len(shape) != 2 or min(shape) < 1:
        raise ShapeError("bad shape {!r}".format(shape))
    coeffs = coefficients(coeffs)
    survey = BandSurvey(shape=tuple(shape), k=k, coeffs=coeffs, band=tuple(band))
    worst = None
    for j in range(trials):
        trial_seed = derive_seed(seed, j)
        m = Rng(trial_seed).normal(shape)
        report = msign_newton_schulz(m, coeffs, k, oracle=oracle)
        survey.trials += 1
        distance = _band_distance(report, band)
        if distance >= 0.0:
            survey.violations += 1
        if worst is None or distance > worst:
            worst = distance
            survey.worst_seed = trial_seed
        survey.worst_min = min(survey.worst_min, report.singular_value_min)
        survey.worst_max = max(survey.worst_max, report.singular_value_max)
        if report.deviation_from_oracle is not None:
            survey.max_deviation = max(survey.max_deviation,
                                       report.deviation_from_oracle)
    return survey
