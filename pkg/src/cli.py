"""
Command-line surface: ingest, analyze, rates, fund and simulate.

Each cmd_* function takes a RunConfig, writes its outputs under
config.output_dir and returns what it computed, so it can be called from
tests the same way the command line calls it.
"""
import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from src.config import CONFIG_ENV, DECLARATIONS, RunConfig
from src.dataset import (
    DeclarationLog,
    InstalmentSeries,
    PriceSchedule,
    YieldPanel,
    derive_theta,
    load_declarations,
    load_instalments,
    load_panel,
    load_prices,
)
from src.empirics import ThresholdSet, derive_thresholds, external_thresholds
from src.errors import ComputationError, ConfigError, ValidationError
from src.fund import FundSpec, size_fund
from src.lossmodel import cluster_stats, revenue_series, surplus_stats
from src.ratemaking import (
    Cluster,
    PolicyTerms,
    RateQuote,
    RateSchedule,
    Regime,
    cluster_at,
    omega_grid,
    rate_schedule,
    set_rates,
    sound_rate,
)
from src.simulate import SimReport, bootstrap_moments, ruin_frequency, scheme_trajectory

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "ratemaker.env"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
COMMANDS = ("ingest", "analyze", "rates", "fund", "simulate")


@dataclass(frozen=True)
class RunInputs:
    panel: YieldPanel
    prices: PriceSchedule
    log: Optional[DeclarationLog]
    instalments: Optional[InstalmentSeries]


class IngestReport(BaseModel):
    crops: List[str]
    n_crops: int
    n_years: int
    first_year: int
    last_year: int
    dropped_years: List[int]
    dropped_crops: List[str]
    omega_hat: Optional[float] = None
    instalment: Optional[float] = None


def load_inputs(config: RunConfig) -> RunInputs:
    config.check_files()
    panel = load_panel(config.yields_path, config.areas_path)
    prices = load_prices(config.prices_path, panel)
    log = load_declarations(config.declarations_path, panel) if config.declarations_path else None
    instalments = load_instalments(config.instalments_path) if config.instalments_path else None
    return RunInputs(panel=panel, prices=prices, log=log, instalments=instalments)


def resolve_omega(config: RunConfig, inputs: RunInputs) -> float:
    """Drought probability: the configured value or omega_hat from the declarations"""
    if config.omega != DECLARATIONS:
        return float(config.omega)
    if inputs.log is None:
        raise ConfigError("OMEGA=declarations needs DECLARATIONS_PATH")
    if inputs.log.n_declared == 0:
        raise ValidationError("No drought was ever declared; set OMEGA explicitly")
    return inputs.log.omega_hat


def resolve_instalment(config: RunConfig, inputs: RunInputs) -> float:
    """Instalment l per ha: INSTALMENT, else the trailing average from INSTALMENTS_PATH"""
    if config.instalment is not None:
        return config.instalment
    if inputs.instalments is None:
        raise ConfigError("Set INSTALMENT or INSTALMENTS_PATH")
    return inputs.instalments.current(config.instalment_window)


def resolve_thresholds(config: RunConfig, inputs: RunInputs, omega: float) -> ThresholdSet:
    panel = inputs.panel
    if not config.thresholds:
        return derive_thresholds(panel, omega, inputs.log)
    missing = [c for c in panel.crops if c not in config.thresholds]
    if missing:
        raise ConfigError(f"THRESHOLDS has no value for {missing}")
    return external_thresholds(panel, [config.thresholds[c] for c in panel.crops], inputs.log)


def resolve_cluster(config: RunConfig, inputs: RunInputs, thresholds: ThresholdSet) -> Cluster:
    return cluster_at(
        inputs.panel,
        inputs.prices,
        derive_theta(inputs.panel),
        thresholds,
        equal_weights=config.equal_weights,
        drop_uninsurable=config.drop_uninsurable,
    )


def policy_terms(config: RunConfig, inputs: RunInputs, omega: float) -> PolicyTerms:
    return PolicyTerms(
        instalment=resolve_instalment(config, inputs),
        retained_fraction=config.retained_fraction,
        omega=omega,
        nu=config.nu,
    )


def _output(config: RunConfig, name: str) -> Path:
    config.output_dir.mkdir(parents=True, exist_ok=True)
    return config.output_dir / name


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", na_rep="nan")
    logger.info(f"Wrote {path}")


def _write_text(text: str, path: Path) -> None:
    path.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")


def cmd_ingest(config: RunConfig) -> IngestReport:
    """Load and validate every input and summarise the panel"""
    inputs = load_inputs(config)
    panel = inputs.panel
    instalment = None
    if config.instalment is not None or inputs.instalments is not None:
        instalment = resolve_instalment(config, inputs)

    report = IngestReport(
        crops=list(panel.crops),
        n_crops=panel.n_crops,
        n_years=panel.n_years,
        first_year=panel.years[0],
        last_year=panel.years[-1],
        dropped_years=list(panel.dropped_years),
        dropped_crops=list(panel.dropped_crops),
        omega_hat=None if inputs.log is None else inputs.log.omega_hat,
        instalment=instalment,
    )
    print(f"Panel: J={report.n_crops} crops {report.crops}, n={report.n_years} years ({report.first_year}-{report.last_year})")
    print(f"Dropped years: {report.dropped_years or 'none'}")
    if report.dropped_crops:
        print(f"Dropped crops: {report.dropped_crops}")
    if inputs.log is not None:
        print(f"Declarations: {inputs.log.n_declared} of {panel.n_years} years, omega_hat = {inputs.log.omega_fraction} = {report.omega_hat:.6f}")
    if instalment is not None:
        print(f"Instalment l = {instalment:.2f} per ha")
    return report


def cmd_analyze(config: RunConfig) -> Dict[str, Path]:
    """Revenue per ha, expected profit and phi over the omega grid as plot-ready CSVs"""
    inputs = load_inputs(config)
    panel = inputs.panel
    written: Dict[str, Path] = {}

    revenue = revenue_series(panel, inputs.prices)
    rows = []
    for j, crop in enumerate(panel.crops):
        for t, year in enumerate(panel.years):
            row = {"crop": crop, "year": year, "revenue_per_ha": float(revenue[j, t])}
            if config.input_costs:
                row["input_cost_per_ha"] = config.input_costs.get(crop, float("nan"))
            rows.append(row)
    columns = ["crop", "year", "revenue_per_ha"] + (["input_cost_per_ha"] if config.input_costs else [])
    written["revenue"] = _output(config, "revenue.csv")
    _write_csv(pd.DataFrame(rows, columns=columns), written["revenue"])

    grid = omega_grid(config.omega_grid_start, config.omega_grid_stop, config.omega_grid_step)
    profit_rows, phi_rows = [], []
    for w in grid:
        thresholds = derive_thresholds(panel, w)
        cluster = resolve_cluster(config, inputs, thresholds)
        stats = surplus_stats(cluster.theta, cluster.losses)
        per_crop = dict(zip(cluster.losses.crops, stats.per_crop_mean))
        profit = {"omega": w, "cluster": stats.mean_surplus}
        profit.update({c: float(per_crop.get(c, float("nan"))) for c in panel.crops})
        profit_rows.append(profit)

        pooled = cluster_stats(cluster.theta, cluster.losses)
        phi_rows.append({"omega": w, "phi": pooled.phi, "var_loss": pooled.var_loss, "weighted_avg_var": pooled.weighted_avg_var})

    written["profit"] = _output(config, "profit_vs_omega.csv")
    _write_csv(pd.DataFrame(profit_rows, columns=["omega", "cluster", *panel.crops]), written["profit"])
    written["phi"] = _output(config, "phi_vs_omega.csv")
    _write_csv(pd.DataFrame(phi_rows, columns=["omega", "phi", "var_loss", "weighted_avg_var"]), written["phi"])

    if inputs.instalments is not None:
        series = inputs.instalments
        frame = pd.DataFrame({
            "year": list(series.years),
            "instalment_per_ha": series.per_hectare(config.instalment_window),
        })
        written["instalments"] = _output(config, "instalments_per_ha.csv")
        _write_csv(frame, written["instalments"])

    print(f"Analysed {panel.n_crops} crops over {len(grid)} grid points; outputs in {config.output_dir}")
    return written


def quote_at(config: RunConfig, inputs: RunInputs, omega: float) -> RateQuote:
    """Rates at one drought probability, on thresholds derived for it"""
    cluster = resolve_cluster(config, inputs, resolve_thresholds(config, inputs, omega))
    mean_surplus = surplus_stats(cluster.theta, cluster.losses).mean_surplus
    return set_rates(mean_surplus, policy_terms(config, inputs, omega))


def cmd_rates(config: RunConfig) -> RateSchedule:
    """gamma/kappa schedule over the omega grid plus the quote at the configured omega"""
    inputs = load_inputs(config)
    omega = resolve_omega(config, inputs)
    terms = policy_terms(config, inputs, omega)
    grid = omega_grid(config.omega_grid_start, config.omega_grid_stop, config.omega_grid_step)

    schedule = rate_schedule(
        inputs.panel,
        inputs.prices,
        derive_theta(inputs.panel),
        terms,
        grid,
        equal_weights=config.equal_weights,
        drop_uninsurable=config.drop_uninsurable,
    )
    _write_csv(schedule.to_frame(), _output(config, "rate_schedule.csv"))

    quote = quote_at(config, inputs, omega)
    print(f"Subsidy needed from omega = {schedule.subsidy_onset if schedule.subsidy_onset is not None else 'never'}")
    print(f"Full subsidy from omega = {schedule.full_subsidy_onset if schedule.full_subsidy_onset is not None else 'never'}")
    print(f"At omega = {omega:.4f}, p = {terms.retained_fraction}, l = {terms.instalment:.2f}:")
    print(f"  Sound rate: {100 * sound_rate(omega, terms.retained_fraction):.1f}%")
    print(f"  gamma = {quote.gamma:.4f} (premium {quote.premium:.2f}/ha), kappa = {quote.kappa:.4f} (subsidy {quote.subsidy:.2f}/ha)")
    print(f"  E[S] = {quote.mean_surplus:.2f}, R1 = {quote.R1:.2f} ({'solvent' if quote.solvent else 'insolvent'})")
    if quote.regime == Regime.NO_SUBSIDY:
        print("  no subsidy required")
    return schedule


def _total_area(config: RunConfig, panel: YieldPanel) -> float:
    if config.total_area is not None:
        return config.total_area
    return float(panel.total_area()[-1])


def cmd_fund(config: RunConfig) -> FundSpec:
    """Buffer fund at the configured eta over the configured thresholds"""
    inputs = load_inputs(config)
    omega = resolve_omega(config, inputs)
    cluster = resolve_cluster(config, inputs, resolve_thresholds(config, inputs, omega))
    stats = cluster_stats(cluster.theta, cluster.losses)
    spec = size_fund(stats, _total_area(config, cluster.panel), config.eta)
    _write_text(spec.model_dump_json(indent=2) + "\n", _output(config, "fund.json"))
    print(f"Fund F = {spec.fund:.2f} for A = {spec.total_area:.2f} ha at eta = {spec.eta} (ruin probability {spec.ruin_prob:.4f})")
    return spec


def _delta(estimate: float, stderr: float, closed_form: float) -> float:
    """Oracle minus closed form in standard-error units"""
    if stderr == 0:
        return 0.0 if estimate == closed_form else math.copysign(math.inf, estimate - closed_form)
    return (estimate - closed_form) / stderr


def cmd_simulate(config: RunConfig) -> SimReport:
    """Bootstrap, ruin and scheme simulations merged into one report"""
    inputs = load_inputs(config)
    omega = resolve_omega(config, inputs)
    cluster = resolve_cluster(config, inputs, resolve_thresholds(config, inputs, omega))
    panel, thresholds, theta = cluster.panel, cluster.thresholds, cluster.theta
    stats = cluster_stats(theta, cluster.losses)
    fund = size_fund(stats, _total_area(config, panel), config.eta)
    terms = policy_terms(config, inputs, omega)
    quote = set_rates(stats.mean_surplus, terms)
    sim = config.sim

    report = bootstrap_moments(panel, inputs.prices, thresholds, theta, sim)
    report = report.merged(SimReport(est_ruin_freq=ruin_frequency(fund, panel, inputs.prices, thresholds, theta, sim)))
    log = inputs.log if config.uses_declarations else None
    report = report.merged(scheme_trajectory(terms, quote, panel, inputs.prices, thresholds, theta, sim, log))
    _write_text(report.to_json(), _output(config, "simulation.json"))

    checks = [
        ("E[L_theta]", report.est_mean_loss, stats.mean_loss),
        ("Var(L_theta)", report.est_var_loss, stats.var_loss_population),
        ("ruin frequency", report.est_ruin_freq, fund.ruin_prob),
        ("mean outlay", report.est_mean_outlay, quote.l1 + quote.premium),
    ]
    for label, estimate, closed_form in checks:
        print(
            f"{label}: oracle {estimate.value:.6g} (se {estimate.stderr:.3g}) vs closed form {closed_form:.6g}, "
            f"delta {_delta(estimate.value, estimate.stderr, closed_form):+.2f} se"
        )
    print(f"Farmer ruin frequency: {report.farmer_ruin_freq.value:.4f} (se {report.farmer_ruin_freq.stderr:.4f})")
    return report


HANDLERS = {
    "ingest": cmd_ingest,
    "analyze": cmd_analyze,
    "rates": cmd_rates,
    "fund": cmd_fund,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=os.getenv(CONFIG_ENV, DEFAULT_CONFIG), help="KEY=value run configuration")
    common.add_argument("--out", type=Path, help="Output directory (overrides OUTPUT_DIR)")
    common.add_argument("--seed", type=int, help="Simulation seed (overrides SIM_SEED)")
    common.add_argument("--omega", help="'declarations' or a drought probability in (0, 1]")
    common.add_argument("--eta", type=float, help="Fund risk-appetite multiplier")
    common.add_argument("--nu", type=float, help="Government subsidy share")
    common.add_argument("--drop-uninsurable", action="store_true", help="Remove crops with E[S_j] <= 0")
    common.add_argument("--equal-weights", action="store_true", help="Use theta_j = 1/J")
    common.add_argument("--n-jobs", type=int, help="Simulation worker processes")
    common.add_argument(
        "--log-level",
        type=str.upper,
        default=os.getenv("LOG_LEVEL", "INFO").upper(),
        help=f"Logging level: {', '.join(LOG_LEVELS)}",
    )

    parser = argparse.ArgumentParser(prog="ratemaker", description="Drought insurance rate-making engine")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        commands.add_parser(name, parents=[common], help=HANDLERS[name].__doc__.strip().splitlines()[0])
    return parser


def configure(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config)
    return config.with_overrides(
        output_dir=args.out,
        omega=args.omega,
        eta=args.eta,
        nu=args.nu,
        drop_uninsurable=True if args.drop_uninsurable else None,
        equal_weights=True if args.equal_weights else None,
        sim={"seed": args.seed, "n_jobs": args.n_jobs},
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level not in LOG_LEVELS:
        print(f"Unknown log level {args.log_level!r}; expected one of {', '.join(LOG_LEVELS)}", file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level)

    try:
        HANDLERS[args.command](configure(args))
        return 0
    except (ValidationError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except ComputationError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
