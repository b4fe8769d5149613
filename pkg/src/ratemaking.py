"""
Premium and subsidy rates: actuarially sound rate, solvency test, the subsidy
floor and the three-regime gamma/kappa schedule over drought probability.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, Field, model_validator

from src.dataset import PriceSchedule, ThetaSeries, YieldPanel, derive_theta
from src.empirics import ThresholdSet, derive_thresholds
from src.errors import NuBelowFloorError, ValidationError, ZeroVarianceError
from src.lossmodel import LossSeries, coefficient_of_effectiveness, loss_gain_surplus, surplus_stats
from src.lossmodel import drop_uninsurable as remove_uninsurable

logger = logging.getLogger(__name__)

SCHEDULE_COLUMNS = ["omega", "mean_surplus", "phi", "gamma", "kappa", "regime"]


class Regime(str, Enum):
    FULL_SUBSIDY = "full_subsidy"
    PARTIAL_SUBSIDY = "partial_subsidy"
    NO_SUBSIDY = "no_subsidy"


class PolicyTerms(BaseModel):
    """Instalment l, retained fraction p, drought probability omega and optional subsidy share nu"""
    instalment: float = Field(..., gt=0, description="Loan instalment l per ha per season")
    retained_fraction: float = Field(0.15, ge=0, le=1, description="p; the insured benefit level is 1 - p")
    omega: float = Field(..., ge=0, le=1)
    nu: Optional[float] = Field(None, ge=0, le=1, description="Government share; defaults to its floor")

    def with_omega(self, omega: float) -> "PolicyTerms":
        return self.model_copy(update={"omega": omega})


@dataclass(frozen=True)
class Cluster:
    """The crops actually pooled, with their thresholds, area shares and losses"""
    panel: YieldPanel
    thresholds: ThresholdSet
    theta: ThetaSeries
    losses: LossSeries


@dataclass(frozen=True)
class Residuals:
    R: float
    l1: float
    R1: float


class RateQuote(BaseModel):
    """Farmer premium rate gamma and government subsidy rate kappa, as fractions of l"""
    gamma: float = Field(..., ge=0, le=1)
    kappa: float = Field(..., ge=0, le=1)
    regime: Regime
    nu: float
    omega: float
    retained_fraction: float
    instalment: float
    mean_surplus: float
    l1: float
    R: float
    R1: float
    premium: float
    subsidy: float
    solvent: bool
    reasoning: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_identity(self):
        if self.gamma + self.kappa != sound_rate(self.omega, self.retained_fraction):
            raise ValueError("gamma + kappa must equal omega (1 - p)")
        return self


class ScheduleRow(BaseModel):
    omega: float
    mean_surplus: float
    phi: float
    gamma: float
    kappa: float
    regime: Regime


class RateSchedule(BaseModel):
    rows: List[ScheduleRow]
    subsidy_onset: Optional[float] = None
    full_subsidy_onset: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([row.model_dump() for row in self.rows], columns=SCHEDULE_COLUMNS)
        frame["regime"] = [row.regime.value for row in self.rows]
        return frame


def sound_rate(omega: float, p: float) -> float:
    """Actuarially sound rate gamma = omega (1 - p)"""
    return omega * (1.0 - p)


def _check_instalment(instalment: float) -> None:
    if not instalment > 0:
        raise ValidationError(f"Instalment must be positive, got {instalment}")


def residuals(mean_surplus: float, terms: PolicyTerms, gamma: float) -> Residuals:
    """R = E[S] - l, l1 = (1 - omega) l + p omega l, R1 = E[S] - l1 - gamma l"""
    l = terms.instalment
    _check_instalment(l)
    w, p = terms.omega, terms.retained_fraction
    return Residuals(
        R=mean_surplus - l,
        l1=(1.0 - w) * l + p * w * l,
        R1=mean_surplus - (1.0 - w) * l - p * w * l - gamma * l,
    )


def solvency_condition(mean_surplus: float, terms: PolicyTerms, gamma: float) -> bool:
    """(gamma + p omega) < E[S]/l - (1 - omega), evaluated as R1 > 0"""
    return residuals(mean_surplus, terms, gamma).R1 > 0


def nu_floor(mean_surplus: float, instalment: float) -> float:
    """Smallest admissible subsidy share, 1 - E[S]/l clipped to [0, 1]"""
    _check_instalment(instalment)
    return max(0.0, min(1.0, 1.0 - mean_surplus / instalment))


def _split_rate(sound: float, nu: float) -> Tuple[float, float]:
    # The larger share is a product; the smaller is its exact remainder, so gamma + kappa == sound.
    if nu >= 0.5:
        kappa = sound * nu
        return sound - kappa, kappa
    gamma = sound * (1.0 - nu)
    return gamma, sound - gamma


def set_rates(mean_surplus: float, terms: PolicyTerms) -> RateQuote:
    """Premium and subsidy rates for the regime E[S_theta] falls in"""
    l = terms.instalment
    _check_instalment(l)
    sound = sound_rate(terms.omega, terms.retained_fraction)
    reasoning = [f"Sound rate omega(1-p) = {terms.omega:.4f} x {1 - terms.retained_fraction:.4f} = {sound:.4f}"]

    if mean_surplus < 0:
        regime, nu = Regime.FULL_SUBSIDY, 1.0
        gamma, kappa = 0.0, sound
        reasoning.append(f"E[S]={mean_surplus:.2f} < 0: government pays the full rate")
    elif mean_surplus < l:
        floor = nu_floor(mean_surplus, l)
        nu = floor if terms.nu is None else terms.nu
        if nu < floor:
            raise NuBelowFloorError(nu, floor)
        regime = Regime.PARTIAL_SUBSIDY
        gamma, kappa = _split_rate(sound, nu)
        reasoning.append(f"0 <= E[S]={mean_surplus:.2f} < l={l:.2f}: subsidy share nu={nu:.4f} (floor {floor:.4f})")
    else:
        regime, nu = Regime.NO_SUBSIDY, 0.0
        gamma, kappa = sound, 0.0
        reasoning.append(f"E[S]={mean_surplus:.2f} >= l={l:.2f}: farmer pays the sound rate")

    if terms.nu is not None and regime != Regime.PARTIAL_SUBSIDY:
        logger.warning(f"nu={terms.nu} ignored outside the partial-subsidy band ({regime.value})")

    res = residuals(mean_surplus, terms, gamma)
    solvent = res.R1 > 0
    reasoning.append(f"R1 = {res.R1:.2f} ({'solvent' if solvent else 'insolvent'})")

    return RateQuote(
        gamma=gamma,
        kappa=kappa,
        regime=regime,
        nu=nu,
        omega=terms.omega,
        retained_fraction=terms.retained_fraction,
        instalment=l,
        mean_surplus=mean_surplus,
        l1=res.l1,
        R=res.R,
        R1=res.R1,
        premium=gamma * l,
        subsidy=kappa * l,
        solvent=solvent,
        reasoning=reasoning,
    )


def omega_grid(start: float, stop: float, step: float) -> List[float]:
    """Evenly spaced drought probabilities in (0, 1], inclusive of `stop`"""
    if not step > 0:
        raise ValidationError(f"Grid step must be positive, got {step}")
    if not 0 < start <= stop <= 1:
        raise ValidationError(f"Grid must satisfy 0 < start <= stop <= 1, got [{start}, {stop}]")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def cluster_at(
    panel: YieldPanel,
    prices: PriceSchedule,
    theta: ThetaSeries,
    thresholds: ThresholdSet,
    equal_weights: bool = False,
    drop_uninsurable: bool = False,
) -> Cluster:
    """Area shares and losses for the cluster, optionally without uninsurable crops"""
    if drop_uninsurable:
        try:
            panel, thresholds, removed = remove_uninsurable(panel, prices, thresholds)
            if removed:
                theta = derive_theta(panel)
        except ValidationError:
            logger.warning("No crop has E[S_j] > 0; keeping the full cluster")
    losses = loss_gain_surplus(panel, prices, thresholds)
    if equal_weights:
        theta = ThetaSeries.equal_weights(panel.n_crops, panel.n_years)
    return Cluster(panel=panel, thresholds=thresholds, theta=theta, losses=losses)


def rate_schedule(
    panel: YieldPanel,
    prices: PriceSchedule,
    theta: ThetaSeries,
    terms: PolicyTerms,
    grid: Sequence[float],
    equal_weights: bool = False,
    drop_uninsurable: bool = False,
) -> RateSchedule:
    """gamma, kappa, E[S_theta] and phi at every drought probability of the grid"""
    if any(not 0 < w <= 1 for w in grid):
        raise ValidationError("Every grid omega must lie in (0, 1]")

    rows = []
    for w in grid:
        thresholds = derive_thresholds(panel, w)
        cluster = cluster_at(panel, prices, theta, thresholds, equal_weights, drop_uninsurable)
        mean_surplus = surplus_stats(cluster.theta, cluster.losses).mean_surplus
        try:
            phi = coefficient_of_effectiveness(cluster.theta, cluster.losses)
        except ZeroVarianceError:
            logger.warning(f"phi undefined at omega={w}: zero loss variance")
            phi = float("nan")

        point_terms = terms.with_omega(w)
        if terms.nu is not None:
            # an override acts as a minimum share on the schedule
            point_terms = point_terms.model_copy(
                update={"nu": max(terms.nu, nu_floor(mean_surplus, terms.instalment))}
            )
        quote = set_rates(mean_surplus, point_terms)
        rows.append(ScheduleRow(
            omega=w,
            mean_surplus=mean_surplus,
            phi=phi,
            gamma=quote.gamma,
            kappa=quote.kappa,
            regime=quote.regime,
        ))

    with_subsidy = [r.omega for r in rows if r.kappa > 0]
    without_premium = [r.omega for r in rows if r.gamma == 0]
    schedule = RateSchedule(
        rows=rows,
        subsidy_onset=min(with_subsidy) if with_subsidy else None,
        full_subsidy_onset=min(without_premium) if without_premium else None,
    )
    logger.info(
        f"Evaluated {len(rows)} grid points; subsidy from omega={schedule.subsidy_onset}, "
        f"full subsidy from omega={schedule.full_subsidy_onset}"
    )
    return schedule
