"""
Monte Carlo oracle: whole-year bootstrap of the panel to check the closed-form
pooled-loss moments, fund ruin frequency and multi-season scheme outcomes.

Every replication r draws from its own PCG64 stream seeded with
SeedSequence([seed, r]), so results do not depend on how replications are
split across joblib workers.
"""
import json
import logging
import math
from typing import Callable, Literal, Optional

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator

from src.dataset import DeclarationLog, PriceSchedule, ThetaSeries, YieldPanel
from src.empirics import ThresholdSet
from src.errors import InsufficientDataError, ValidationError
from src.fund import FundSpec
from src.lossmodel import loss_gain_surplus, pooled_series
from src.ratemaking import PolicyTerms, RateQuote

logger = logging.getLogger(__name__)

CHUNK_SIZE = 250


class SimConfig(BaseModel):
    replications: int = Field(2000, ge=1)
    horizon: int = Field(25, ge=1, description="Seasons per replication")
    seed: int = Field(20190101, ge=0, le=2 ** 64 - 1)
    resample_mode: Literal["iid_years"] = "iid_years"
    n_jobs: int = Field(1, ge=1, description="joblib workers; results do not depend on it")


class Estimate(BaseModel):
    value: float
    stderr: float = Field(..., ge=0)


class SimReport(BaseModel):
    """Oracle estimates, each with a standard error from the replication spread"""
    est_mean_loss: Optional[Estimate] = None
    est_var_loss: Optional[Estimate] = None
    est_ruin_freq: Optional[Estimate] = None
    est_mean_surplus: Optional[Estimate] = None
    farmer_ruin_freq: Optional[Estimate] = None
    est_mean_outlay: Optional[Estimate] = None

    @model_validator(mode="after")
    def check_frequencies(self):
        for name in ("est_ruin_freq", "farmer_ruin_freq"):
            estimate = getattr(self, name)
            if estimate is not None and not 0.0 <= estimate.value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {estimate.value}")
        return self

    def merged(self, other: "SimReport") -> "SimReport":
        """Fields of `other` fill the ones missing here"""
        values = self.model_dump()
        for name, value in other.model_dump().items():
            if values[name] is None:
                values[name] = value
        return SimReport(**values)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"


def _stream(seed: int, replication: int) -> np.random.Generator:
    return np.random.default_rng([seed, replication])


def _estimate(values: np.ndarray) -> Estimate:
    count = len(values)
    mean = math.fsum(values) / count
    if count < 2:
        return Estimate(value=mean, stderr=0.0)
    spread = math.fsum((v - mean) ** 2 for v in values) / (count - 1)
    return Estimate(value=mean, stderr=math.sqrt(spread / count))


def _replicate(task: Callable, cfg: SimConfig, *args) -> np.ndarray:
    """Run `task` over fixed-size chunks of replication indices; rows come back in replication order"""
    starts = range(0, cfg.replications, CHUNK_SIZE)
    chunks = Parallel(n_jobs=cfg.n_jobs)(
        delayed(task)(range(s, min(s + CHUNK_SIZE, cfg.replications)), cfg.seed, cfg.horizon, *args)
        for s in starts
    )
    return np.concatenate(chunks, axis=0)


def _pooled(panel: YieldPanel, prices: PriceSchedule, thresholds: ThresholdSet, theta: ThetaSeries):
    if panel.n_years < 2:
        raise InsufficientDataError(f"Need at least 2 panel years to resample, got {panel.n_years}")
    losses = loss_gain_surplus(panel, prices, thresholds)
    return pooled_series(theta, losses.losses), pooled_series(theta, losses.surplus)


def _bootstrap_chunk(reps, seed, horizon, loss, surplus) -> np.ndarray:
    out = np.empty((len(reps), 3))
    for i, r in enumerate(reps):
        idx = _stream(seed, r).integers(0, loss.size, size=horizon)
        sample = loss[idx]
        mean = math.fsum(sample) / horizon
        var = math.fsum((sample - mean) ** 2) / (horizon - 1) if horizon > 1 else float("nan")
        out[i] = (mean, var, math.fsum(surplus[idx]) / horizon)
    return out


def bootstrap_moments(
    panel: YieldPanel,
    prices: PriceSchedule,
    thresholds: ThresholdSet,
    theta: ThetaSeries,
    cfg: SimConfig,
) -> SimReport:
    """
    Resample whole years with replacement and estimate E[L_theta], Var(L_theta)
    and E[S_theta].

    Each replication's sample variance uses the n - 1 divisor, so the estimate
    targets the population variance of the observed pooled-loss series.
    """
    loss, surplus = _pooled(panel, prices, thresholds, theta)
    rows = _replicate(_bootstrap_chunk, cfg, loss, surplus)

    est_mean = _estimate(rows[:, 0])
    if cfg.horizon > 1:
        est_var = _estimate(rows[:, 1])
    else:
        if cfg.replications < 2:
            raise InsufficientDataError("A variance needs horizon >= 2 or replications >= 2")
        # one season per replication: pool the draws
        squares = (rows[:, 0] - est_mean.value) ** 2
        var = math.fsum(squares) / (cfg.replications - 1)
        est_var = Estimate(value=var, stderr=_estimate(squares).stderr)

    report = SimReport(
        est_mean_loss=est_mean,
        est_var_loss=est_var,
        est_mean_surplus=_estimate(rows[:, 2]),
    )
    logger.info(
        f"Bootstrap of {cfg.replications} x {cfg.horizon} seasons: "
        f"E[L]={est_mean.value:.4f} (se {est_mean.stderr:.4f}), Var(L)={est_var.value:.4f}"
    )
    return report


def _ruin_chunk(reps, seed, horizon, loss, funded_per_ha) -> np.ndarray:
    out = np.empty(len(reps))
    for i, r in enumerate(reps):
        idx = _stream(seed, r).integers(0, loss.size, size=horizon)
        out[i] = np.count_nonzero(loss[idx] > funded_per_ha) / horizon
    return out


def ruin_frequency(
    fund: FundSpec,
    panel: YieldPanel,
    prices: PriceSchedule,
    thresholds: ThresholdSet,
    theta: ThetaSeries,
    cfg: SimConfig,
) -> Estimate:
    """Share of simulated seasons in which L_theta x A exceeds the fund"""
    loss, _ = _pooled(panel, prices, thresholds, theta)
    # L A > F  <=>  L > F / A with A > 0
    per_replication = _replicate(_ruin_chunk, cfg, loss, fund.fund / fund.total_area)

    estimate = _estimate(per_replication)
    if cfg.replications < 2:
        seasons = cfg.horizon
        p = estimate.value
        estimate = Estimate(value=p, stderr=math.sqrt(p * (1.0 - p) / seasons))
    logger.info(
        f"Ruin frequency over {cfg.replications * cfg.horizon} seasons: "
        f"{estimate.value:.5f} (se {estimate.stderr:.5f}; normal approximation {fund.ruin_prob:.5f})"
    )
    return estimate


def _scheme_chunk(reps, seed, horizon, surplus, declared, omega, gamma, instalment, retained) -> np.ndarray:
    out = np.empty((len(reps), 3))
    for i, r in enumerate(reps):
        rng = _stream(seed, r)
        idx = rng.integers(0, surplus.size, size=horizon)
        if declared is None:
            drought = rng.random(horizon) < omega
        else:
            drought = declared[idx]
        outlay = gamma * instalment + np.where(drought, retained * instalment, instalment)
        residual = np.cumsum(surplus[idx] - outlay)
        out[i] = (
            math.fsum(outlay) / horizon,
            1.0 if np.any(residual < 0) else 0.0,
            math.fsum(surplus[idx]) / horizon,
        )
    return out


def scheme_trajectory(
    terms: PolicyTerms,
    quote: RateQuote,
    panel: YieldPanel,
    prices: PriceSchedule,
    thresholds: ThresholdSet,
    theta: ThetaSeries,
    cfg: SimConfig,
    log: Optional[DeclarationLog] = None,
) -> SimReport:
    """
    Simulate `horizon` seasons of the scheme per replication.

    Each season the farmer pays the premium gamma l plus l, or only p l when a
    drought is declared and the benefit covers the rest. Declarations are
    Bernoulli(omega) draws unless a declaration log is given, in which case
    the flag travels with the resampled year. A replication counts as a farmer
    ruin when the cumulative residual S_theta - outlay ever drops below zero.
    """
    if quote.instalment != terms.instalment:
        raise ValidationError(f"Quote is for l={quote.instalment}, terms have l={terms.instalment}")
    if quote.omega != terms.omega:
        logger.warning(f"Quote was set at omega={quote.omega}, simulating declarations at omega={terms.omega}")
    if log is not None and log.years != panel.years:
        raise ValidationError("Declaration log years do not match the panel")

    _, surplus = _pooled(panel, prices, thresholds, theta)
    declared = None if log is None else log.flags()
    rows = _replicate(
        _scheme_chunk,
        cfg,
        surplus,
        declared,
        terms.omega,
        quote.gamma,
        terms.instalment,
        terms.retained_fraction,
    )

    report = SimReport(
        est_mean_outlay=_estimate(rows[:, 0]),
        farmer_ruin_freq=_estimate(rows[:, 1]),
        est_mean_surplus=_estimate(rows[:, 2]),
    )
    logger.info(
        f"Scheme over {cfg.replications} x {cfg.horizon} seasons: mean outlay "
        f"{report.est_mean_outlay.value:.2f} (l1 + gamma l = {quote.l1 + quote.premium:.2f}), "
        f"farmer ruin {report.farmer_ruin_freq.value:.4f}"
    )
    return report
