"""
Empirical distribution machinery: ECDF, order-statistic drought thresholds,
declaration coincidence and sample moments.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.dataset import DeclarationLog, YieldPanel
from src.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

EXTERNAL = "external"


@dataclass(frozen=True, eq=False)
class ThresholdSet:
    """Per-crop drought thresholds mu_c with realised frequencies and coincidence"""
    crops: Tuple[str, ...]
    mu_c: np.ndarray
    omega_target: Union[float, str]
    omega_j: np.ndarray
    psi_true: Optional[np.ndarray] = None

    def __post_init__(self):
        mu_c = np.array(self.mu_c, dtype=float)
        if mu_c.shape != (len(self.crops),):
            raise ValidationError(f"Expected {len(self.crops)} thresholds, got shape {mu_c.shape}")
        if not np.all(np.isfinite(mu_c)) or np.any(mu_c < 0):
            raise ValidationError("Thresholds must be finite and non-negative")
        object.__setattr__(self, "mu_c", mu_c)
        object.__setattr__(self, "omega_j", np.array(self.omega_j, dtype=float))
        if self.psi_true is not None:
            object.__setattr__(self, "psi_true", np.array(self.psi_true, dtype=float))

    @property
    def psi_false(self) -> Optional[np.ndarray]:
        if self.psi_true is None:
            return None
        return 1.0 - self.psi_true

    @property
    def omega_slack(self) -> Optional[np.ndarray]:
        """omega_j - omega for thresholds derived from a target frequency"""
        if self.omega_target == EXTERNAL:
            return None
        return self.omega_j - float(self.omega_target)

    def select(self, crops: Sequence[str]) -> "ThresholdSet":
        keep = [i for i, c in enumerate(self.crops) if c in set(crops)]
        return ThresholdSet(
            crops=tuple(self.crops[i] for i in keep),
            mu_c=self.mu_c[keep],
            omega_target=self.omega_target,
            omega_j=self.omega_j[keep],
            psi_true=None if self.psi_true is None else self.psi_true[keep],
        )


def _as_sample(sample) -> np.ndarray:
    values = np.asarray(sample, dtype=float).ravel()
    if values.size == 0:
        raise InsufficientDataError("Sample is empty")
    if not np.all(np.isfinite(values)):
        raise ValidationError("Sample contains non-finite values")
    return values


def empirical_cdf(sample, x: float) -> float:
    """F_n(x) = #{s <= x} / n, right-continuous"""
    values = _as_sample(sample)
    return np.count_nonzero(values <= x) / values.size


def threshold_for_omega(sample, omega: float) -> float:
    """Smallest sample value whose ECDF is at least omega (k-th order statistic, k = ceil(omega n))"""
    if not (0.0 < omega <= 1.0):
        raise ValidationError(f"omega must lie in (0, 1], got {omega}")
    ordered = np.sort(_as_sample(sample))
    n = ordered.size
    k = min(n, max(1, math.ceil(omega * n)))
    # omega * n rounds; settle k against the same count / n the ECDF reports
    while k > 1 and (k - 1) / n >= omega:
        k -= 1
    while k < n and k / n < omega:
        k += 1
    return float(ordered[k - 1])


def _crop_omega(yields: np.ndarray, mu_c: np.ndarray) -> np.ndarray:
    return np.array([empirical_cdf(yields[j], mu_c[j]) for j in range(len(mu_c))])


def crop_omega(panel: YieldPanel, thresholds: ThresholdSet) -> np.ndarray:
    """Crop-specific drought frequency omega_j = F_j(mu_c^(j))"""
    return _crop_omega(panel.yields, thresholds.mu_c)


def _coincidence(panel: YieldPanel, mu_c: np.ndarray, log: DeclarationLog) -> np.ndarray:
    if log.n_declared == 0:
        raise InsufficientDataError("No drought declarations; coincidence is undefined")
    declared = log.flags()
    # H(0) = 0: a yield exactly at the threshold is not a drought
    below = mu_c[:, None] - panel.yields[:, declared] > 0
    return below.sum(axis=1) / log.n_declared


def coincidence(panel: YieldPanel, thresholds: ThresholdSet, log: DeclarationLog) -> np.ndarray:
    """Share psi_j of declared years in which crop j fell strictly below its threshold"""
    return _coincidence(panel, thresholds.mu_c, log)


def _assemble(panel: YieldPanel, mu_c: np.ndarray, omega_target, log: Optional[DeclarationLog]) -> ThresholdSet:
    omega_j = _crop_omega(panel.yields, mu_c)
    psi_true = None
    if log is not None and log.n_declared > 0:
        psi_true = _coincidence(panel, mu_c, log)
    return ThresholdSet(
        crops=panel.crops,
        mu_c=mu_c,
        omega_target=omega_target,
        omega_j=omega_j,
        psi_true=psi_true,
    )


def derive_thresholds(panel: YieldPanel, omega: float, log: Optional[DeclarationLog] = None) -> ThresholdSet:
    """Thresholds with F_j(mu_c^(j)) >= omega for every crop"""
    mu_c = np.array([threshold_for_omega(panel.yields[j], omega) for j in range(panel.n_crops)])
    thresholds = _assemble(panel, mu_c, float(omega), log)
    slack = thresholds.omega_slack
    if slack is not None and np.any(slack > 0):
        logger.info(f"Tied yields push omega_j above {omega:.4f}: {dict(zip(panel.crops, np.round(thresholds.omega_j, 6)))}")
    return thresholds


def external_thresholds(panel: YieldPanel, mu_c: Sequence[float], log: Optional[DeclarationLog] = None) -> ThresholdSet:
    """Thresholds supplied directly (e.g. from yield potential)"""
    return _assemble(panel, np.asarray(mu_c, dtype=float), EXTERNAL, log)


def sample_moments(series, ddof: int = 1) -> Tuple[float, float]:
    """Arithmetic mean and variance with divisor n - ddof"""
    values = _as_sample(series)
    if values.size <= ddof:
        raise InsufficientDataError(f"Need more than {ddof} observations, got {values.size}")
    mean = float(values.mean())
    return mean, float(np.sum((values - mean) ** 2) / (values.size - ddof))


def sample_cov(x, y, ddof: int = 1) -> float:
    """Sample covariance with divisor n - ddof"""
    xs = np.asarray(x, dtype=float).ravel()
    ys = np.asarray(y, dtype=float).ravel()
    if xs.size != ys.size:
        raise ValidationError(f"Length mismatch: {xs.size} vs {ys.size}")
    if xs.size == 0 or xs.size <= ddof:
        raise InsufficientDataError(f"Need more than {ddof} observations, got {xs.size}")
    return float(np.sum((xs - xs.mean()) * (ys - ys.mean())) / (xs.size - ddof))
