"""
Panel ingestion: crop yields, areas planted, prices, drought declarations
and loan instalments, validated and aligned on a common crop/year grid.
"""
import io
import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import (
    DeclarationYearError,
    DuplicateKeyError,
    EmptyPanelError,
    MissingPriceError,
    NegativeValueError,
    PanelFormatError,
    ValidationError,
    ZeroAreaError,
)

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, io.IOBase]

YIELD_COLUMNS = ["crop", "year", "yield_kg_per_ha"]
AREA_COLUMNS = ["crop", "year", "area_ha"]
PRICE_COLUMNS = ["crop", "price_per_kg"]
PRICE_BY_YEAR_COLUMNS = ["crop", "year", "price_per_kg"]
DECLARATION_COLUMNS = ["year", "declared"]
INSTALMENT_COLUMNS = ["year", "total_instalments", "total_area_ha"]


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class YieldPanel:
    """Rectangular crop × year panel of yields (kg/ha) and areas planted (ha)"""
    crops: Tuple[str, ...]
    years: Tuple[int, ...]
    yields: np.ndarray
    areas: np.ndarray
    dropped_years: Tuple[int, ...] = ()
    dropped_crops: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "crops", tuple(str(c) for c in self.crops))
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "yields", _frozen(self.yields))
        object.__setattr__(self, "areas", _frozen(self.areas))

        J, n = len(self.crops), len(self.years)
        if J < 1:
            raise EmptyPanelError("Panel has no crops")
        if n < 2:
            raise EmptyPanelError(f"Panel needs at least 2 years, got {n}")
        if len(set(self.crops)) != J:
            raise ValidationError(f"Crop identifiers are not unique: {self.crops}")
        if any(b <= a for a, b in zip(self.years, self.years[1:])):
            raise ValidationError("Panel years must be strictly increasing")
        for name, matrix in (("yields", self.yields), ("areas", self.areas)):
            if matrix.shape != (J, n):
                raise ValidationError(f"{name} has shape {matrix.shape}, expected {(J, n)}")
            if not np.all(np.isfinite(matrix)):
                raise ValidationError(f"{name} contains non-finite values")
            if np.any(matrix < 0):
                raise ValidationError(f"{name} contains negative values")

    @property
    def n_crops(self) -> int:
        return len(self.crops)

    @property
    def n_years(self) -> int:
        return len(self.years)

    def total_area(self) -> np.ndarray:
        """Total area planted per year, A(t) = sum_j A_j(t)"""
        return self.areas.sum(axis=0)

    def select_crops(self, crops: Sequence[str]) -> "YieldPanel":
        """Sub-panel restricted to the given crops, in panel order"""
        keep = [i for i, c in enumerate(self.crops) if c in set(crops)]
        removed = tuple(c for c in self.crops if c not in set(crops))
        return YieldPanel(
            crops=[self.crops[i] for i in keep],
            years=self.years,
            yields=self.yields[keep],
            areas=self.areas[keep],
            dropped_years=self.dropped_years,
            dropped_crops=self.dropped_crops + removed,
        )

    def equals(self, other: "YieldPanel") -> bool:
        return (
            self.crops == other.crops
            and self.years == other.years
            and np.array_equal(self.yields, other.yields)
            and np.array_equal(self.areas, other.areas)
        )


@dataclass(frozen=True)
class PriceSchedule:
    """Per-crop prices in currency/kg, either constant or per year"""
    constant: Dict[str, float] = field(default_factory=dict)
    by_year: Dict[str, Dict[int, float]] = field(default_factory=dict)

    @property
    def time_varying(self) -> bool:
        return bool(self.by_year)

    def matrix(self, crops: Sequence[str], years: Sequence[int]) -> np.ndarray:
        """J x n matrix of lambda_j(t)"""
        out = np.empty((len(crops), len(years)), dtype=float)
        for j, crop in enumerate(crops):
            if self.time_varying:
                series = self.by_year.get(crop)
                if series is None:
                    raise MissingPriceError(crop)
                for t, year in enumerate(years):
                    if year not in series:
                        raise MissingPriceError(crop, year)
                    out[j, t] = series[year]
            else:
                if crop not in self.constant:
                    raise MissingPriceError(crop)
                out[j, :] = self.constant[crop]
        return out

    def scaled(self, factor: float) -> "PriceSchedule":
        return PriceSchedule(
            constant={c: p * factor for c, p in self.constant.items()},
            by_year={c: {y: p * factor for y, p in s.items()} for c, s in self.by_year.items()},
        )


@dataclass(frozen=True)
class DeclarationLog:
    """Years with an official drought declaration, within the panel years"""
    declared_years: FrozenSet[int]
    years: Tuple[int, ...]

    def __post_init__(self):
        outside = sorted(set(self.declared_years) - set(self.years))
        if outside:
            raise DeclarationYearError(f"Declared years outside the panel: {outside}")

    @property
    def n_declared(self) -> int:
        return len(self.declared_years)

    @property
    def omega_fraction(self) -> Fraction:
        return Fraction(len(self.declared_years), len(self.years))

    @property
    def omega_hat(self) -> float:
        return len(self.declared_years) / len(self.years)

    def flags(self) -> np.ndarray:
        """Boolean declaration flag per panel year"""
        return np.array([y in self.declared_years for y in self.years], dtype=bool)


@dataclass(frozen=True, eq=False)
class ThetaSeries:
    """Area shares theta_j(t) and their means alpha_j"""
    shares: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shares", _frozen(self.shares))
        object.__setattr__(self, "alphas", _frozen(self.alphas))

    @classmethod
    def equal_weights(cls, n_crops: int, n_years: int) -> "ThetaSeries":
        """theta_j(t) = 1/J for every crop and year"""
        shares = np.full((n_crops, n_years), 1.0 / n_crops)
        return cls(shares=shares, alphas=np.full(n_crops, 1.0 / n_crops))

    def is_constant(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.shares - self.shares[:, :1]) <= tol))


@dataclass(frozen=True, eq=False)
class InstalmentSeries:
    """Yearly loan instalments paid and the area they financed"""
    years: Tuple[int, ...]
    totals: np.ndarray
    areas: np.ndarray

    def per_hectare(self, window: int = 10) -> np.ndarray:
        """Trailing moving average of instalments per hectare over `window` years"""
        if window < 1:
            raise ValidationError(f"Moving-average window must be >= 1, got {window}")
        totals = pd.Series(self.totals, dtype=float).rolling(window, min_periods=1).sum()
        areas = pd.Series(self.areas, dtype=float).rolling(window, min_periods=1).sum()
        return (totals / areas.where(areas > 0)).to_numpy()

    def current(self, window: int = 10) -> float:
        """Instalment l per hectare at the latest year"""
        value = float(self.per_hectare(window)[-1])
        if not math.isfinite(value) or value <= 0:
            raise ValidationError(f"Instalment per hectare over the last {window} years is not positive")
        return value


class TableReader:
    def __init__(self):
        """Initialize CSV reader with the accepted numeric grammar"""
        self.encoding = "utf-8"

    def read(self, source: Source, columns: Sequence[str]) -> Tuple[pd.DataFrame, str]:
        """Read a CSV as text columns and check the header"""
        frame, name = self.load(source)
        return self.select(frame, columns, name), name

    def load(self, source: Source) -> Tuple[pd.DataFrame, str]:
        """Read a CSV with every cell kept as stripped text"""
        name = self._source_name(source)
        try:
            frame = pd.read_csv(source, dtype=str, keep_default_na=False, encoding=self.encoding)
        except FileNotFoundError:
            raise
        except pd.errors.EmptyDataError:
            raise PanelFormatError(name, "file is empty")
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise PanelFormatError(name, f"cannot parse CSV: {e}")
        frame.columns = [str(c).strip() for c in frame.columns]
        return frame, name

    def select(self, frame: pd.DataFrame, columns: Sequence[str], name: str) -> pd.DataFrame:
        """Check the header and keep the required columns"""
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise PanelFormatError(name, f"missing column(s) {missing}; header is {list(frame.columns)}")
        extra = [c for c in frame.columns if c not in columns]
        if extra:
            logger.warning(f"{name}: ignoring extra column(s) {extra}")
        return frame[list(columns)].apply(lambda s: s.str.strip())

    def numbers(self, frame: pd.DataFrame, column: str, name: str, non_negative: bool = True) -> List[float]:
        values = []
        for row, text in enumerate(frame[column], start=1):
            value = self._parse_float(text, name, row, column)
            if non_negative and value < 0:
                raise NegativeValueError(name, f"{value!r} is negative", row, column)
            values.append(value)
        return values

    def integers(self, frame: pd.DataFrame, column: str, name: str) -> List[int]:
        values = []
        for row, text in enumerate(frame[column], start=1):
            value = self._parse_float(text, name, row, column)
            if value != int(value):
                raise PanelFormatError(name, f"{text!r} is not an integer", row, column)
            values.append(int(value))
        return values

    def labels(self, frame: pd.DataFrame, column: str, name: str) -> List[str]:
        values = list(frame[column])
        for row, text in enumerate(values, start=1):
            if not text:
                raise PanelFormatError(name, "empty identifier", row, column)
        return values

    def _parse_float(self, text: str, name: str, row: int, column: str) -> float:
        if not text or "_" in text or "," in text:
            raise PanelFormatError(name, f"{text!r} is not a number", row, column)
        try:
            value = float(text)
        except ValueError:
            raise PanelFormatError(name, f"{text!r} is not a number", row, column) from None
        if not math.isfinite(value):
            raise PanelFormatError(name, f"{text!r} is not finite", row, column)
        return value

    def _source_name(self, source: Source) -> str:
        if isinstance(source, (str, os.PathLike)):
            return os.path.basename(os.fspath(source))
        return getattr(source, "name", "<stream>")


_reader = TableReader()


def read_table(source: Source, columns: Sequence[str]) -> pd.DataFrame:
    """Read any engine CSV (inputs or outputs) and return the named columns as text"""
    frame, _ = _reader.read(source, columns)
    return frame


def _keyed_values(frame: pd.DataFrame, name: str, columns: Sequence[str]) -> Tuple[Dict[Tuple[str, int], float], List[str]]:
    frame = _reader.select(frame, columns, name)
    crops = _reader.labels(frame, columns[0], name)
    years = _reader.integers(frame, columns[1], name)
    values = _reader.numbers(frame, columns[2], name)

    cells: Dict[Tuple[str, int], float] = {}
    order: List[str] = []
    for row, key in enumerate(zip(crops, years), start=1):
        if key in cells:
            raise DuplicateKeyError(name, f"duplicate (crop, year) key {key}", row)
        cells[key] = values[row - 1]
        if key[0] not in order:
            order.append(key[0])
    return cells, order


def load_panel(yields_source: Source, areas_source: Source) -> YieldPanel:
    """Load yields and areas and align them on a rectangular crop x year grid"""
    try:
        yield_frame, yield_name = _reader.load(yields_source)
        area_frame, area_name = _reader.load(areas_source)
        yield_cells, yield_crops = _keyed_values(yield_frame, yield_name, YIELD_COLUMNS)
        area_cells, area_crops = _keyed_values(area_frame, area_name, AREA_COLUMNS)

        # Crops present in both files, in yields-file order
        crops = [c for c in yield_crops if c in set(area_crops)]
        dropped_crops = sorted(set(yield_crops) ^ set(area_crops))
        if not crops:
            raise EmptyPanelError(f"No crop appears in both {yield_name} and {area_name}")

        # A year survives only if every crop has both a yield and an area for it
        all_years = sorted({y for (c, y) in yield_cells if c in crops} | {y for (c, y) in area_cells if c in crops})
        years = [
            y for y in all_years
            if all((c, y) in yield_cells and (c, y) in area_cells for c in crops)
        ]
        dropped_years = sorted(set(all_years) - set(years))
        if not years:
            raise EmptyPanelError(f"No year is observed for every crop in both {yield_name} and {area_name}")

        yields = np.array([[yield_cells[(c, y)] for y in years] for c in crops])
        areas = np.array([[area_cells[(c, y)] for y in years] for c in crops])
        for t, total in enumerate(areas.sum(axis=0)):
            if total <= 0:
                raise ZeroAreaError(years[t])

        if dropped_years:
            logger.warning(f"Dropped years with incomplete crop coverage: {dropped_years}")
        if dropped_crops:
            logger.warning(f"Dropped crops missing from one of the files: {dropped_crops}")

        panel = YieldPanel(
            crops=crops,
            years=years,
            yields=yields,
            areas=areas,
            dropped_years=tuple(dropped_years),
            dropped_crops=tuple(dropped_crops),
        )
        logger.info(f"Loaded panel with J={panel.n_crops} crops and n={panel.n_years} years")
        return panel

    except Exception as e:
        logger.error(f"Error loading panel: {e}")
        raise


def write_panel(panel: YieldPanel, yields_path: Source, areas_path: Source) -> None:
    """Write the panel as canonical yields/areas CSVs (full float precision)"""
    for path, matrix, columns in (
        (yields_path, panel.yields, YIELD_COLUMNS),
        (areas_path, panel.areas, AREA_COLUMNS),
    ):
        rows = [
            (crop, year, repr(float(matrix[j, t])))
            for j, crop in enumerate(panel.crops)
            for t, year in enumerate(panel.years)
        ]
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")


def derive_theta(panel: YieldPanel) -> ThetaSeries:
    """Area shares theta_j(t) = A_j(t) / sum_i A_i(t) and alpha_j = mean_t theta_j(t)"""
    totals = panel.total_area()
    for t, total in enumerate(totals):
        if total <= 0:
            raise ZeroAreaError(panel.years[t])
    shares = panel.areas / totals
    alphas = shares.mean(axis=1)
    return ThetaSeries(shares=shares, alphas=alphas)


def load_prices(source: Source, panel: Optional[YieldPanel] = None) -> PriceSchedule:
    """Load constant (crop,price_per_kg) or per-year (crop,year,price_per_kg) prices"""
    raw, name = _reader.load(source)

    if "year" in raw.columns:
        cells, _ = _keyed_values(raw, name, PRICE_BY_YEAR_COLUMNS)
        by_year: Dict[str, Dict[int, float]] = {}
        for (crop, year), price in cells.items():
            by_year.setdefault(crop, {})[year] = price
        schedule = PriceSchedule(by_year=by_year)
        prices = [p for s in by_year.values() for p in s.values()]
    else:
        frame = _reader.select(raw, PRICE_COLUMNS, name)
        crops = _reader.labels(frame, "crop", name)
        values = _reader.numbers(frame, "price_per_kg", name)
        constant: Dict[str, float] = {}
        for row, (crop, price) in enumerate(zip(crops, values), start=1):
            if crop in constant:
                raise DuplicateKeyError(name, f"duplicate crop '{crop}'", row)
            constant[crop] = price
        schedule = PriceSchedule(constant=constant)
        prices = values

    if any(p <= 0 for p in prices):
        raise PanelFormatError(name, "prices must be strictly positive")
    if panel is not None:
        # fails early on a crop without a price
        schedule.matrix(panel.crops, panel.years)
    logger.info(f"Loaded {'time-varying' if schedule.time_varying else 'constant'} prices from {name}")
    return schedule


def load_declarations(source: Source, panel: YieldPanel) -> DeclarationLog:
    """Load the drought declaration history; omega_hat = |Gamma| / n"""
    frame, name = _reader.read(source, DECLARATION_COLUMNS)
    years = _reader.integers(frame, "year", name)
    flags = _reader.integers(frame, "declared", name)

    seen = set()
    declared = set()
    panel_years = set(panel.years)
    dropped_years = set(panel.dropped_years)
    for row, (year, flag) in enumerate(zip(years, flags), start=1):
        if year in seen:
            raise DuplicateKeyError(name, f"duplicate year {year}", row, "year")
        seen.add(year)
        if flag not in (0, 1):
            raise PanelFormatError(name, f"declared must be 0 or 1, got {flag}", row, "declared")
        if year not in panel_years:
            if year not in dropped_years:
                raise DeclarationYearError(f"{name} row {row}: year {year} is not in the panel")
            logger.warning(f"{name} row {row}: year {year} was dropped from the panel, ignored")
            continue
        if flag == 1:
            declared.add(year)

    log = DeclarationLog(declared_years=frozenset(declared), years=panel.years)
    logger.info(f"Loaded {log.n_declared} declarations over {panel.n_years} years (omega_hat={log.omega_hat:.4f})")
    return log


def load_instalments(source: Source) -> InstalmentSeries:
    """Load yearly instalment totals and financed area"""
    frame, name = _reader.read(source, INSTALMENT_COLUMNS)
    years = _reader.integers(frame, "year", name)
    totals = _reader.numbers(frame, "total_instalments", name)
    areas = _reader.numbers(frame, "total_area_ha", name)
    if len(set(years)) != len(years):
        raise DuplicateKeyError(name, "duplicate year")
    order = np.argsort(years, kind="stable")
    return InstalmentSeries(
        years=tuple(int(years[i]) for i in order),
        totals=np.array([totals[i] for i in order]),
        areas=np.array([areas[i] for i in order]),
    )


def constant_prices(prices: Dict[str, float]) -> PriceSchedule:
    return PriceSchedule(constant=dict(prices))


def panel_from_arrays(
    crops: Iterable[str],
    years: Iterable[int],
    yields,
    areas,
) -> YieldPanel:
    """Build a validated panel straight from arrays"""
    return YieldPanel(crops=tuple(crops), years=tuple(years), yields=yields, areas=areas)
