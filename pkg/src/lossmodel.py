"""
Per-crop and pooled losses, gains and surpluses, the variance decomposition
of the pooled loss and the coefficient of effectiveness of crop mixing.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.optimize import minimize

from src.dataset import PriceSchedule, ThetaSeries, YieldPanel
from src.empirics import ThresholdSet, sample_cov
from src.errors import (
    IdentityCheckError,
    InsufficientDataError,
    ValidationError,
    ZeroVarianceError,
)

logger = logging.getLogger(__name__)

IDENTITY_RTOL = 1e-9
VARIANCE_MODES = ("direct", "decomposed", "independent_reduction")


@dataclass(frozen=True, eq=False)
class LossSeries:
    """Indemnity L_j(t), gain G_j(t) and surplus S_j(t) per crop and year (currency/ha)"""
    crops: Tuple[str, ...]
    years: Tuple[int, ...]
    losses: np.ndarray
    gains: np.ndarray
    surplus: np.ndarray

    def select(self, crops: Sequence[str]) -> "LossSeries":
        keep = [i for i, c in enumerate(self.crops) if c in set(crops)]
        return LossSeries(
            crops=tuple(self.crops[i] for i in keep),
            years=self.years,
            losses=self.losses[keep],
            gains=self.gains[keep],
            surplus=self.surplus[keep],
        )


@dataclass(frozen=True)
class SurplusStats:
    mean_surplus: float
    mean_gain: float
    per_crop_mean: np.ndarray
    insurable: Tuple[bool, ...]
    constant_theta_form: float
    independence_form: float
    covariance_term: float


@dataclass(frozen=True)
class ClusterStats:
    """Pooled loss/gain/surplus moments for a crop cluster"""
    mean_loss: float
    var_loss: float
    mean_surplus: float = 0.0
    mean_gain: float = 0.0
    phi: float = float("nan")
    weighted_avg_var: float = 0.0
    per_crop_insurable: Tuple[bool, ...] = ()
    var_loss_population: Optional[float] = None
    crops: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.var_loss >= 0:
            raise ValidationError(f"var_loss must be >= 0, got {self.var_loss}")
        if not self.weighted_avg_var >= 0:
            raise ValidationError(f"weighted_avg_var must be >= 0, got {self.weighted_avg_var}")

    @property
    def sd_loss(self) -> float:
        return math.sqrt(self.var_loss)


class GrossPremiumBreakdown(BaseModel):
    """Gross premium P = net premium + buffer load + administrative cost"""
    net_premium: float = Field(..., ge=0)
    buffer_load: float = Field(..., ge=0)
    admin_cost: float = Field(..., ge=0)
    gross: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_sum(self):
        if self.gross != self.net_premium + self.buffer_load + self.admin_cost:
            raise ValueError("gross must equal net_premium + buffer_load + admin_cost")
        return self


def loss_gain_surplus(panel: YieldPanel, prices: PriceSchedule, thresholds: ThresholdSet) -> LossSeries:
    """L = lambda max(0, mu_c - Y), G = lambda max(0, Y - mu_c), S = G - L"""
    if thresholds.crops != panel.crops:
        raise ValidationError(f"Thresholds are for {thresholds.crops}, panel has {panel.crops}")
    lam = prices.matrix(panel.crops, panel.years)
    gap = thresholds.mu_c[:, None] - panel.yields
    losses = lam * np.maximum(0.0, gap)
    gains = lam * np.maximum(0.0, -gap)
    return LossSeries(
        crops=panel.crops,
        years=panel.years,
        losses=losses,
        gains=gains,
        surplus=gains - losses,
    )


def revenue_series(panel: YieldPanel, prices: PriceSchedule) -> np.ndarray:
    """Revenue per hectare lambda_j(t) Y_j(t)"""
    return prices.matrix(panel.crops, panel.years) * panel.yields


def pooled_series(theta: ThetaSeries, values: np.ndarray) -> np.ndarray:
    """sum_j theta_j(t) v_j(t), accumulated in crop order"""
    if theta.shares.shape != values.shape:
        raise ValidationError(f"Shares {theta.shares.shape} and values {values.shape} are not aligned")
    total = np.zeros(values.shape[1])
    for j in range(values.shape[0]):
        total = total + theta.shares[j] * values[j]
    return total


def _require_close(direct: float, other: float, scale: float, label: str) -> None:
    tol = IDENTITY_RTOL * max(abs(direct), abs(other), scale)
    if abs(direct - other) > tol:
        raise IdentityCheckError(f"{label}: direct {direct!r} and decomposed {other!r} disagree beyond {tol:.3g}")


def mean_weighted_loss(theta: ThetaSeries, losses: LossSeries) -> float:
    """E[L_theta] as the mean of the pooled series, checked against sum alpha_j E[L_j] + Cov(theta_j, L_j)"""
    pooled = pooled_series(theta, losses.losses)
    direct = float(pooled.mean())
    decomposed = 0.0
    for j in range(losses.losses.shape[0]):
        t, l = theta.shares[j], losses.losses[j]
        decomposed += t.mean() * l.mean() + sample_cov(t, l, ddof=0)
    _require_close(direct, decomposed, float(pooled_series(theta, np.abs(losses.losses)).mean()), "E[L_theta]")
    return direct


def var_weighted_loss(theta: ThetaSeries, losses: LossSeries, mode: str = "direct", ddof: int = 1) -> float:
    """Var(L_theta) computed directly, term by term, or by the pairwise-independent reduction"""
    if mode not in VARIANCE_MODES:
        raise ValidationError(f"Unknown variance mode '{mode}', expected one of {VARIANCE_MODES}")
    values = losses.losses
    J, n = values.shape
    if n < 2 or n <= ddof:
        raise InsufficientDataError(f"Need at least 2 years for a variance, got {n}")

    if mode == "direct":
        pooled = pooled_series(theta, values)
        return float(np.sum((pooled - pooled.mean()) ** 2) / (n - ddof))

    if mode == "independent_reduction":
        logger.warning("Pairwise-independent reduction omits E[theta^2]E[L^2] - (E[theta]E[L])^2 terms; reporting only")
        return float(sum(sample_cov(theta.shares[j] ** 2, values[j] ** 2, ddof) for j in range(J)))

    # population moments make the expansion exact; rescale to the requested divisor
    weighted = [theta.shares[j] * values[j] for j in range(J)]
    total = 0.0
    for j in range(J):
        t, l = theta.shares[j], values[j]
        own = (
            sample_cov(t ** 2, l ** 2, 0)
            + (t ** 2).mean() * (l ** 2).mean()
            - (sample_cov(t, l, 0) + t.mean() * l.mean()) ** 2
        )
        total += own
    for i in range(J):
        for j in range(J):
            if i != j:
                total += sample_cov(weighted[i], weighted[j], 0)
    return float(total * n / (n - ddof))


def weighted_average_variance(theta: ThetaSeries, losses: LossSeries, ddof: int = 1) -> float:
    """E[V] = sum_j alpha_j Var(L_j)"""
    alphas = theta.shares.mean(axis=1)
    return float(sum(alphas[j] * sample_cov(l, l, ddof) for j, l in enumerate(losses.losses)))


def coefficient_of_effectiveness(theta: ThetaSeries, losses: LossSeries, ddof: int = 1) -> float:
    """phi_theta = Var(L_theta) / sum_j alpha_j Var(L_j)"""
    denominator = weighted_average_variance(theta, losses, ddof)
    if denominator <= 0:
        raise ZeroVarianceError("Weighted average loss variance is zero; phi is undefined")
    numerator = var_weighted_loss(theta, losses, "direct", ddof)

    if theta.is_constant():
        alpha = theta.shares[:, 0]
        cov = np.atleast_2d(np.cov(losses.losses, ddof=ddof))
        # alpha' cov alpha <= sum alpha_j Var(L_j), so the denominator bounds both sides
        _require_close(numerator, float(alpha @ cov @ alpha), denominator, "Var(L_theta) (constant shares)")
    return numerator / denominator


def phi_equal_variance(alpha: Sequence[float]) -> float:
    """phi for uncorrelated equal-variance losses under constant shares: sum alpha_j^2"""
    weights = np.asarray(alpha, dtype=float)
    return float(np.sum(weights ** 2))


def effectiveness_minimizer(n_crops: int) -> Tuple[np.ndarray, float]:
    """Equal weights minimise sum alpha_j^2 on the simplex; the minimum is 1/J"""
    if n_crops < 1:
        raise ValidationError(f"Need at least one crop, got {n_crops}")
    weights = np.full(n_crops, 1.0 / n_crops)
    return weights, 1.0 / n_crops


def optimal_mix(losses: LossSeries, ddof: int = 1) -> Tuple[np.ndarray, float]:
    """Constant area shares minimising phi for the observed loss covariance"""
    cov = np.atleast_2d(np.cov(losses.losses, ddof=ddof))
    variances = np.diag(cov)
    J = cov.shape[0]
    if np.all(variances <= 0):
        raise ZeroVarianceError("Every crop has zero loss variance; phi is undefined")
    if J == 1:
        return np.ones(1), 1.0

    def objective(a):
        return float(a @ cov @ a) / float(a @ variances)

    constraints = ({"type": "eq", "fun": lambda a: np.sum(a) - 1.0},)
    result = minimize(
        objective,
        x0=np.full(J, 1.0 / J),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * J,
        constraints=constraints,
        tol=1e-12,
        options={"disp": False, "maxiter": 500},
    )
    if not result.success:
        logger.warning(f"Mix optimisation did not converge: {result.message}")
    weights = np.clip(result.x, 0.0, None)
    weights = weights / weights.sum()
    return weights, objective(weights)


def surplus_stats(theta: ThetaSeries, losses: LossSeries) -> SurplusStats:
    """E[S_theta], E[G_theta] and per-crop insurability E[S_j] > 0"""
    pooled = pooled_series(theta, losses.surplus)
    per_crop = losses.surplus.mean(axis=1)
    alphas = theta.shares.mean(axis=1)
    independence_form = float(sum(alphas[j] * per_crop[j] for j in range(len(per_crop))))
    covariance_term = float(sum(sample_cov(theta.shares[j], losses.surplus[j], 0) for j in range(len(per_crop))))
    constant_theta_form = independence_form
    if theta.is_constant():
        constant_theta_form = float(sum(theta.shares[j, 0] * per_crop[j] for j in range(len(per_crop))))
    return SurplusStats(
        mean_surplus=float(pooled.mean()),
        mean_gain=float(pooled_series(theta, losses.gains).mean()),
        per_crop_mean=per_crop,
        insurable=tuple(bool(s > 0) for s in per_crop),
        constant_theta_form=constant_theta_form,
        independence_form=independence_form,
        covariance_term=covariance_term,
    )


def cluster_stats(theta: ThetaSeries, losses: LossSeries, ddof: int = 1) -> ClusterStats:
    """Every pooled statistic of the cluster in one pass"""
    surplus = surplus_stats(theta, losses)
    weighted_var = weighted_average_variance(theta, losses, ddof)
    phi = float("nan")
    if weighted_var > 0:
        phi = coefficient_of_effectiveness(theta, losses, ddof)
    else:
        logger.warning("Zero weighted average loss variance; phi reported as NaN")
    return ClusterStats(
        mean_loss=mean_weighted_loss(theta, losses),
        var_loss=var_weighted_loss(theta, losses, "direct", ddof),
        mean_surplus=surplus.mean_surplus,
        mean_gain=surplus.mean_gain,
        phi=phi,
        weighted_avg_var=weighted_var,
        per_crop_insurable=surplus.insurable,
        var_loss_population=var_weighted_loss(theta, losses, "direct", 0),
        crops=losses.crops,
    )


def drop_uninsurable(
    panel: YieldPanel,
    prices: PriceSchedule,
    thresholds: ThresholdSet,
) -> Tuple[YieldPanel, ThresholdSet, List[str]]:
    """Remove crops with E[S_j] <= 0; callers re-derive theta over the remaining crops"""
    losses = loss_gain_surplus(panel, prices, thresholds)
    per_crop = losses.surplus.mean(axis=1)
    removed = [c for c, s in zip(panel.crops, per_crop) if not s > 0]
    if not removed:
        return panel, thresholds, []
    kept = [c for c in panel.crops if c not in removed]
    if not kept:
        raise ValidationError("Every crop has E[S_j] <= 0; nothing is insurable")
    logger.warning(f"Removing uninsurable crops {removed}")
    return panel.select_crops(kept), thresholds.select(kept), removed


def gross_premium(net: float, buffer: float, admin: float) -> GrossPremiumBreakdown:
    """P = P_n + buffer load + administrative cost"""
    return GrossPremiumBreakdown(net_premium=net, buffer_load=buffer, admin_cost=admin, gross=net + buffer + admin)
