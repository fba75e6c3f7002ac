"""
Configuration module for the long-tail calibration toolkit
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import psutil
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from back.exceptions import ConfigurationError

# Load environment variables
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    """Environment configuration class"""

    # Logging
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "")

    # Performance
    THREADS = os.getenv("TAILCAL_THREADS", "")

    # Artifacts
    OUT_DIR = os.getenv("TAILCAL_OUT", "runs")

    @classmethod
    def validate(cls):
        """Validate the environment configuration"""
        if cls.LOG_LEVEL.upper() not in LOG_LEVELS:
            raise ConfigurationError(f"LOG_LEVEL must be one of {LOG_LEVELS}, got {cls.LOG_LEVEL!r}")
        if cls.THREADS:
            try:
                threads = int(cls.THREADS)
            except ValueError:
                raise ConfigurationError(f"TAILCAL_THREADS must be an integer, got {cls.THREADS!r}")
            if threads < 1:
                raise ConfigurationError(f"TAILCAL_THREADS must be >= 1, got {threads}")
        return True

    @classmethod
    def worker_count(cls) -> int:
        """Effective number of worker threads for numeric kernels"""
        cls.validate()
        if cls.THREADS:
            return int(cls.THREADS)
        return psutil.cpu_count() or 1


DEFAULT_ALPHAS = [0.995, 0.996, 0.997, 0.998, 0.999, 1.0]


class PipelineConfig(BaseModel):
    """Run configuration shared by every CLI subcommand"""

    model_config = ConfigDict(extra="forbid")

    # Inputs
    train: Optional[Path] = None
    val: Optional[Path] = None
    test: List[Path] = Field(default_factory=list)

    # Head/tail split and transfer
    zeta: int = Field(default=100, ge=1)
    alpha: float = Field(default=0.998, ge=0.0, le=1.0)
    eta1: float = Field(default=0.3, gt=0.0)
    eta2: float = Field(default=5.0, gt=0.0)
    strategy: Literal["attention", "uniform", "onehot"] = "attention"

    # Metrics
    bins: int = Field(default=15, ge=1)
    ranges: int = Field(default=15, ge=1)
    scheme: Literal["equal_width", "equal_mass"] = "equal_width"
    hist_bins: int = Field(default=20, ge=1)
    top_k: int = Field(default=3, ge=1)

    # Temperature search
    tmin: float = Field(default=0.05, gt=0.0)
    tmax: float = Field(default=20.0, gt=0.0)

    # Reproducibility and outputs
    seed: int = Field(default=0, ge=0, lt=2**64)
    out: Path = Field(default_factory=lambda: Path(Config.OUT_DIR))
    format: Literal["json", "csv"] = "json"

    # Synthetic generator
    num_classes: int = Field(default=10, ge=2)
    feature_dim: int = Field(default=16, ge=1)
    imbalance_factor: float = Field(default=100.0, ge=1.0)
    max_count: int = Field(default=500, ge=1)
    gamma: float = Field(default=2.5, gt=0.0)
    prior_bias: bool = True
    test_per_class: int = Field(default=1000, ge=1)
    separation: float = Field(default=3.0, gt=0.0)
    memorization: float = Field(default=1.0, ge=0.0)
    data_format: Literal["binary", "csv"] = "binary"

    # Sweeps and theory checks
    alphas: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    mc_samples: int = Field(default=1_000_000, ge=10_000)
    theory_cases: int = Field(default=20, ge=1)

    @field_validator("alphas")
    @classmethod
    def _alphas_in_unit_interval(cls, value: List[float]) -> List[float]:
        for alpha in value:
            if not 0.0 <= alpha <= 1.0:
                raise ValueError(f"every alpha must lie in [0, 1], got {alpha}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "PipelineConfig":
        if self.eta1 > self.eta2:
            raise ValueError(f"eta1 ({self.eta1}) must not exceed eta2 ({self.eta2})")
        if self.tmin >= self.tmax:
            raise ValueError(f"tmin ({self.tmin}) must be below tmax ({self.tmax})")
        return self

    @classmethod
    def build(cls, **fields: Any) -> "PipelineConfig":
        """Validate fields, reporting failures as ConfigurationError"""
        try:
            return cls(**fields)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid configuration: {e}") from e

    @classmethod
    def load(cls, path: Path, overrides: Optional[Dict[str, Any]] = None) -> "PipelineConfig":
        """
        Load a JSON config document and apply flag overrides

        Args:
            path: JSON document path
            overrides: Field values that replace the document's

        Returns:
            Validated configuration
        """
        try:
            document = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(document, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")
        document.update(overrides or {})
        return cls.build(**document)

    def save(self, path: Path) -> Path:
        """Write the configuration as a JSON document"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2) + "\n")
        return path
