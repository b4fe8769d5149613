from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.config import RunConfig
from src.dataset import constant_prices, derive_theta, load_declarations, load_panel, load_prices, panel_from_arrays

FIXTURES = Path(__file__).resolve().parent.parent / "data" / "fixtures"


def write_inputs(directory: Path, crops, years, yields, areas, prices) -> dict:
    """Write yields/areas/prices CSVs for a small panel and return their paths"""
    rows_y, rows_a = [], []
    for j, crop in enumerate(crops):
        for t, year in enumerate(years):
            rows_y.append((crop, year, repr(float(yields[j][t]))))
            rows_a.append((crop, year, repr(float(areas[j][t]))))
    paths = {
        "YIELDS_PATH": directory / "yields.csv",
        "AREAS_PATH": directory / "areas.csv",
        "PRICES_PATH": directory / "prices.csv",
    }
    pd.DataFrame(rows_y, columns=["crop", "year", "yield_kg_per_ha"]).to_csv(paths["YIELDS_PATH"], index=False)
    pd.DataFrame(rows_a, columns=["crop", "year", "area_ha"]).to_csv(paths["AREAS_PATH"], index=False)
    pd.DataFrame(list(prices.items()), columns=["crop", "price_per_kg"]).to_csv(paths["PRICES_PATH"], index=False)
    return paths


def write_config(path: Path, **keys) -> Path:
    path.write_text("".join(f"{k}={v}\n" for k, v in keys.items()), encoding="utf-8")
    return path


@pytest.fixture
def fixture_config(tmp_path) -> RunConfig:
    return RunConfig.from_file(FIXTURES / "ratemaker.env").with_overrides(output_dir=tmp_path / "out")


@pytest.fixture
def fixture_config_path(tmp_path, fixture_config) -> Path:
    path = tmp_path / "run.env"
    fixture_config.with_overrides(sim={"replications": 300, "horizon": 10}).write(path)
    return path


@pytest.fixture
def fixture_panel():
    return load_panel(FIXTURES / "yields.csv", FIXTURES / "areas.csv")


@pytest.fixture
def fixture_prices(fixture_panel):
    return load_prices(FIXTURES / "prices.csv", fixture_panel)


@pytest.fixture
def fixture_log(fixture_panel):
    return load_declarations(FIXTURES / "declarations.csv", fixture_panel)


@pytest.fixture
def fixture_theta(fixture_panel):
    return derive_theta(fixture_panel)


@pytest.fixture
def random_panel():
    """Panel factory with varying areas, seeded per call"""
    def make(n_crops: int, n_years: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        crops = [f"crop{j}" for j in range(n_crops)]
        yields = rng.gamma(4.0, 100.0, size=(n_crops, n_years))
        areas = rng.uniform(50.0, 500.0, size=(n_crops, n_years))
        panel = panel_from_arrays(crops, range(1900, 1900 + n_years), yields, areas)
        prices = constant_prices({c: float(p) for c, p in zip(crops, rng.uniform(1.0, 10.0, n_crops))})
        return panel, prices
    return make
