"""
Buffer-fund sizing from pooled-loss moments under the normal approximation
"""
import logging
import math

from pydantic import BaseModel, Field
from scipy.stats import norm

from src.errors import ValidationError, ZeroVarianceError
from src.lossmodel import ClusterStats

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1.96


class FundSpec(BaseModel):
    """Buffer fund F = A (E[L_theta] + eta sd(L_theta)) and its one-sided ruin probability"""
    eta: float = Field(..., ge=0)
    total_area: float = Field(..., gt=0)
    mean_loss: float
    sd_loss: float = Field(..., ge=0)
    fund_per_ha: float
    fund: float
    ruin_prob: float = Field(..., ge=0, le=1)


def normal_cdf(x: float) -> float:
    """Standard normal CDF Phi(x)"""
    return float(norm.cdf(x))


def size_fund(stats: ClusterStats, total_area: float, eta: float = DEFAULT_ETA) -> FundSpec:
    """Size the fund at eta standard deviations above the mean pooled loss"""
    if eta < 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    if not total_area > 0:
        raise ValidationError(f"Total area must be positive, got {total_area}")
    if stats.var_loss < 0:
        raise ValidationError(f"Pooled loss variance is negative: {stats.var_loss}")

    sd = math.sqrt(stats.var_loss)
    per_ha = stats.mean_loss + eta * sd
    spec = FundSpec(
        eta=eta,
        total_area=total_area,
        mean_loss=stats.mean_loss,
        sd_loss=sd,
        fund_per_ha=per_ha,
        fund=total_area * per_ha,
        # exceedance of the funded level, one-sided
        ruin_prob=1.0 - normal_cdf(eta),
    )
    logger.info(f"Fund sized at {spec.fund:,.2f} for A={total_area:,.1f} ha (eta={eta}, ruin={spec.ruin_prob:.4f})")
    return spec


def standardize(loss: float, stats: ClusterStats) -> float:
    """Z = (L - E[L_theta]) / sd(L_theta)"""
    if stats.var_loss <= 0:
        raise ZeroVarianceError("Pooled loss variance is zero; cannot standardize")
    return (loss - stats.mean_loss) / math.sqrt(stats.var_loss)


def eta_for_ruin(target: float) -> float:
    """Multiplier whose one-sided exceedance probability equals `target`"""
    if not 0 < target < 1:
        raise ValidationError(f"Ruin probability must lie in (0, 1), got {target}")
    return float(norm.ppf(1.0 - target))


def two_sided_coverage(eta: float) -> float:
    """P(|Z| < eta)"""
    return normal_cdf(eta) - normal_cdf(-eta)
