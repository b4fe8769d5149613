"""
Run configuration: a flat KEY=value file (dotenv syntax) validated into a
pydantic model, with a canonical writer that reads back to an equal model.
"""
import logging
import os
from pathlib import Path
from typing import Dict, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from src.errors import ConfigError
from src.simulate import SimConfig

logger = logging.getLogger(__name__)

DECLARATIONS = "declarations"
CONFIG_ENV = "RATEMAKER_CONFIG"

PATH_KEYS = {
    "YIELDS_PATH": "yields_path",
    "AREAS_PATH": "areas_path",
    "PRICES_PATH": "prices_path",
    "DECLARATIONS_PATH": "declarations_path",
    "INSTALMENTS_PATH": "instalments_path",
    "OUTPUT_DIR": "output_dir",
}
VALUE_KEYS = {
    "INSTALMENT": "instalment",
    "INSTALMENT_WINDOW": "instalment_window",
    "RETAINED_FRACTION": "retained_fraction",
    "NU": "nu",
    "ETA": "eta",
    "OMEGA": "omega",
    "OMEGA_GRID_START": "omega_grid_start",
    "OMEGA_GRID_STOP": "omega_grid_stop",
    "OMEGA_GRID_STEP": "omega_grid_step",
    "TOTAL_AREA": "total_area",
    "THRESHOLDS": "thresholds",
    "INPUT_COSTS": "input_costs",
    "EQUAL_WEIGHTS": "equal_weights",
    "DROP_UNINSURABLE": "drop_uninsurable",
}
SIM_KEYS = {
    "SIM_REPLICATIONS": "replications",
    "SIM_HORIZON": "horizon",
    "SIM_SEED": "seed",
    "SIM_N_JOBS": "n_jobs",
}


def _parse_mapping(text: str) -> Dict[str, float]:
    """'maize:450,sorghum:380.5' -> {'maize': 450.0, 'sorghum': 380.5}"""
    mapping: Dict[str, float] = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        crop, sep, value = item.rpartition(":")
        if not sep or not crop.strip():
            raise ValueError(f"expected crop:value, got {item!r}")
        mapping[crop.strip()] = float(value)
    return mapping


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dict):
        return ",".join(f"{k}:{_format_value(float(v))}" for k, v in value.items())
    return str(value)


class RunConfig(BaseModel):
    """Inputs, policy terms, omega grid, simulation settings and output directory for one run"""
    yields_path: Path
    areas_path: Path
    prices_path: Path
    declarations_path: Optional[Path] = None
    instalments_path: Optional[Path] = None

    instalment: Optional[float] = Field(None, gt=0, description="l per ha; derived from instalments_path when absent")
    instalment_window: int = Field(10, ge=1)
    retained_fraction: float = Field(0.15, ge=0, le=1)
    nu: Optional[float] = Field(None, ge=0, le=1)
    eta: float = Field(1.96, ge=0)
    omega: Union[Literal["declarations"], float] = DECLARATIONS

    omega_grid_start: float = 0.05
    omega_grid_stop: float = 1.0
    omega_grid_step: float = 0.05

    total_area: Optional[float] = Field(None, gt=0)
    thresholds: Dict[str, float] = Field(default_factory=dict)
    input_costs: Dict[str, float] = Field(default_factory=dict)
    equal_weights: bool = False
    drop_uninsurable: bool = False

    sim: SimConfig = Field(default_factory=SimConfig)
    output_dir: Path = Path("output")

    @field_validator("thresholds", "input_costs", mode="before")
    @classmethod
    def parse_mapping(cls, value):
        if isinstance(value, str):
            return _parse_mapping(value)
        return value

    @field_validator("omega", mode="before")
    @classmethod
    def parse_omega(cls, value):
        if isinstance(value, str) and value.strip().lower() != DECLARATIONS:
            return float(value)
        return value.strip().lower() if isinstance(value, str) else value

    @model_validator(mode="after")
    def check_policy(self):
        if not self.omega_grid_step > 0:
            raise ValueError(f"OMEGA_GRID_STEP must be positive, got {self.omega_grid_step}")
        if not 0 < self.omega_grid_start <= self.omega_grid_stop <= 1:
            raise ValueError("omega grid must satisfy 0 < OMEGA_GRID_START <= OMEGA_GRID_STOP <= 1")
        if self.omega != DECLARATIONS and not 0 < self.omega <= 1:
            raise ValueError(f"OMEGA must lie in (0, 1], got {self.omega}")
        if self.omega == DECLARATIONS and self.declarations_path is None:
            raise ValueError("OMEGA=declarations needs DECLARATIONS_PATH")
        if any(v < 0 for v in self.input_costs.values()):
            raise ValueError("INPUT_COSTS must be non-negative")
        return self

    @classmethod
    def from_mapping(cls, values: Dict[str, Optional[str]], base_dir: Union[str, os.PathLike] = ".") -> "RunConfig":
        """Validate flat KEY=value pairs; relative paths resolve against `base_dir`"""
        base = Path(base_dir).resolve()
        fields: Dict[str, object] = {}
        sim: Dict[str, object] = {}
        for key, raw in values.items():
            if raw is None or not str(raw).strip():
                continue
            text = str(raw).strip()
            if key in PATH_KEYS:
                path = Path(text)
                fields[PATH_KEYS[key]] = path if path.is_absolute() else base / path
            elif key in VALUE_KEYS:
                fields[VALUE_KEYS[key]] = text
            elif key in SIM_KEYS:
                sim[SIM_KEYS[key]] = text
            else:
                logger.warning(f"Ignoring unknown config key {key}")
        if sim:
            fields["sim"] = sim
        if "output_dir" not in fields:
            fields["output_dir"] = base / "output"
        try:
            return cls.model_validate(fields)
        except PydanticValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from None

    @classmethod
    def from_file(cls, path: Union[str, os.PathLike]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file not found: {path}")
        config = cls.from_mapping(dotenv_values(path), base_dir=path.parent)
        logger.info(f"Loaded configuration from {path}")
        return config

    def with_overrides(self, **updates) -> "RunConfig":
        """Copy with command-line overrides applied and validated; None values are skipped"""
        data = self.model_dump()
        sim_updates = updates.pop("sim", None) or {}
        data.update({k: v for k, v in updates.items() if v is not None})
        data["sim"].update({k: v for k, v in sim_updates.items() if v is not None})
        try:
            return RunConfig.model_validate(data)
        except PydanticValidationError as e:
            raise ConfigError(f"Invalid override: {e}") from None

    def to_env_text(self) -> str:
        """Canonical KEY=value text; unset optional keys are omitted"""
        lines = []
        for key, name in list(PATH_KEYS.items()) + list(VALUE_KEYS.items()):
            value = getattr(self, name)
            if value is None or (isinstance(value, dict) and not value):
                continue
            lines.append(f"{key}={_format_value(value)}")
        for key, name in SIM_KEYS.items():
            lines.append(f"{key}={_format_value(getattr(self.sim, name))}")
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(self.to_env_text(), encoding="utf-8")

    def check_files(self) -> None:
        """Every configured input file must exist"""
        for name in ("yields_path", "areas_path", "prices_path", "declarations_path", "instalments_path"):
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise FileNotFoundError(f"{name.upper()} not found: {path}")

    @property
    def uses_declarations(self) -> bool:
        return self.omega == DECLARATIONS
