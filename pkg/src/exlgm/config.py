"""Run configuration: one JSON document, unknown keys rejected at every level."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .errors import InvalidInputError
from .priors import PriorConfig
from .simulate import DEFAULT_BETA
from .smooth import ChainConfig


def _from_dict(cls, d, where: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise InvalidInputError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise InvalidInputError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise InvalidInputError(f"{where}: {exc}") from None


@dataclass
class MeshConfig:
    """Lattice spacing and margin; ``None`` spacing gives about 15 nodes across the wider side."""

    spacing: Optional[float] = None
    margin: Optional[float] = None

    def __post_init__(self):
        if self.spacing is not None and not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise InvalidInputError("mesh.spacing must be positive")
        if self.margin is not None and not (self.margin >= 0 and math.isfinite(self.margin)):
            raise InvalidInputError("mesh.margin must be nonnegative")

    def resolve_spacing(self, bbox) -> float:
        if self.spacing is not None:
            return float(self.spacing)
        xmin, xmax, ymin, ymax = bbox
        width = max(xmax - xmin, ymax - ymin)
        if not width > 0:
            raise InvalidInputError("cannot choose a mesh spacing for a single point")
        return width / 14.0


@dataclass
class SimulationConfig:
    """Synthetic grid for ``exlgm simulate``.

    ``mode`` is ``"generative"`` (draw latent fields from ``theta`` and
    ``beta``) or ``"fixed"`` (the same ``mu``, ``sigma``, ``xi`` everywhere).
    """

    mode: str = "generative"
    nx: int = 15
    ny: int = 15
    spacing: float = 1.0
    origin: list = field(default_factory=lambda: [0.0, 0.0])
    n_times: int = 5000
    theta: list = field(default_factory=lambda: [0.05, 0.6, 8.0, 0.003, 0.4, 8.0, 0.06])
    beta: list = field(default_factory=lambda: list(DEFAULT_BETA))
    mu: float = 10.0
    sigma: float = 5.0
    xi: float = 0.1
    clip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("generative", "fixed"):
            raise InvalidInputError("simulation.mode must be 'generative' or 'fixed'")
        if self.nx < 1 or self.ny < 1 or self.n_times < 1:
            raise InvalidInputError("simulation grid and n_times must be positive")
        if not self.spacing > 0:
            raise InvalidInputError("simulation.spacing must be positive")
        if len(self.origin) != 2 or len(self.theta) != 7 or len(self.beta) != 3:
            raise InvalidInputError("simulation: origin needs 2, theta 7 and beta 3 values")


@dataclass
class VariogramConfig:
    n_bins: int = 15
    max_dist: Optional[float] = None


@dataclass
class PredictSettings:
    n_draws: Optional[int] = None
    seed: int = 0


@dataclass
class RunConfig:
    threshold_quantile: float = 0.75
    n_block: Optional[float] = None
    block_size: float = 365.25
    min_exceedances: int = 15
    return_periods: list = field(default_factory=lambda: [20.0, 50.0, 100.0])
    mesh: MeshConfig = field(default_factory=MeshConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    variogram: VariogramConfig = field(default_factory=VariogramConfig)
    predict: PredictSettings = field(default_factory=PredictSettings)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.threshold_quantile < 1:
            raise InvalidInputError("threshold_quantile must lie in (0, 1)")
        if self.n_block is not None and not (self.n_block > 0 and math.isfinite(self.n_block)):
            raise InvalidInputError("n_block must be positive")
        if not (self.block_size > 0 and math.isfinite(self.block_size)):
            raise InvalidInputError("block_size must be positive")
        if self.min_exceedances < 1:
            raise InvalidInputError("min_exceedances must be >= 1")
        if not self.return_periods or any(not (m > 1) for m in self.return_periods):
            raise InvalidInputError("return periods must exceed 1")

    def resolve_n_block(self, n_times: int) -> float:
        """Number of blocks in the record: the configured value or ``T / block_size``."""
        return float(self.n_block) if self.n_block is not None else n_times / self.block_size

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise InvalidInputError("config: expected a JSON object")
        nested = {
            "mesh": MeshConfig,
            "prior": PriorConfig,
            "chain": ChainConfig,
            "simulation": SimulationConfig,
            "variogram": VariogramConfig,
            "predict": PredictSettings,
        }
        d = dict(d)
        for key, sub in nested.items():
            if key in d:
                d[key] = _from_dict(sub, d[key], key)
        return _from_dict(cls, d, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise InvalidInputError(f"{path}: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)
