"""Experiment configuration (YAML on disk, validated with pydantic)."""
from __future__ import annotations

from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import yaml
from pydantic import (BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator,
                      model_validator)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OperatorConfig(_Strict):
    kind: Literal["gaussian", "dft"] = "gaussian"
    seed: int = 0


class CorrectionConfig(_Strict):
    kind: Literal["identity", "explicit"] = "identity"
    path: Optional[str] = None  # .npy file, relative to the config file

    @model_validator(mode="after")
    def _need_path(self):
        if self.kind == "explicit" and not self.path:
            raise ValueError("explicit correction matrix needs a 'path'")
        return self


class LassoConfig(_Strict):
    kind: Literal["lasso_fista"] = "lasso_fista"
    # explicit lambda; when absent the rule prefactor*sigma/sqrt(m)*(2+sqrt(12 log N)) is used
    lam: Optional[float] = Field(default=None, gt=0)
    lambda_prefactor: float = Field(default=10.0, gt=0)
    max_iters: int = Field(default=5000, ge=1)
    rel_tol: float = Field(default=1e-8, gt=0)


class UnrolledIstaConfig(_Strict):
    kind: Literal["unrolled_ista"]
    lam: Optional[float] = Field(default=None, gt=0)
    lambda_prefactor: float = Field(default=10.0, gt=0)
    depth: int = Field(default=8, ge=0)
    mu: Optional[float] = Field(default=None, gt=0)


class OracleConfig(_Strict):
    kind: Literal["oracle"]


EstimatorConfig = Annotated[Union[LassoConfig, UnrolledIstaConfig, OracleConfig],
                            Field(discriminator="kind")]


class SplitConfig(_Strict):
    train: int = Field(default=0, ge=0)
    estimation: int = Field(ge=2)
    test: int = Field(ge=1)


class HistogramConfig(_Strict):
    bins: int = Field(default=60, ge=2)
    per_component: bool = False


class ExperimentConfig(_Strict):
    name: str = "experiment"
    operator: OperatorConfig = OperatorConfig()
    N: int = Field(ge=2)
    m: int = Field(ge=1)
    s: int = Field(ge=0)
    n: Optional[int] = None
    split: SplitConfig
    target_rel_noise: float = Field(gt=0, le=1)
    # unit_entries: nonzeros ~ CN(0,1); unit_energy: nonzeros ~ CN(0,1/s) so E||x||^2 = 1
    signal_scale: Literal["unit_entries", "unit_energy"] = "unit_entries"
    estimator: EstimatorConfig = LassoConfig()
    alphas: List[float] = Field(default_factory=lambda: [0.05], min_length=1)
    gamma_mode: Literal["per_component", "shared"] = "per_component"
    stats_mode: Literal["per_component", "pooled"] = "per_component"
    correction: CorrectionConfig = CorrectionConfig()
    seed: int = 0
    output_dir: str = "results"
    workers: int = Field(default=1, ge=1)
    gamma_grid: int = Field(default=1000, ge=10)
    histogram: HistogramConfig = HistogramConfig()
    save_regions: bool = True

    _base_dir: Optional[Path] = PrivateAttr(default=None)

    @field_validator("alphas")
    @classmethod
    def _alphas_open_interval(cls, v):
        for a in v:
            if not 0 < a < 1:
                raise ValueError(f"alpha {a} outside (0, 1)")
        return sorted(set(v))

    @model_validator(mode="after")
    def _consistent(self):
        if self.m > self.N:
            raise ValueError(f"m={self.m} exceeds N={self.N}")
        if self.s > self.N:
            raise ValueError(f"s={self.s} exceeds N={self.N}")
        total = self.split.train + self.split.estimation + self.split.test
        if self.n is None:
            self.n = total
        elif self.n != total:
            raise ValueError(f"split sums to {total} but n={self.n}")
        if self.split.estimation * min(self.alphas) <= 1:
            raise ValueError(
                f"estimation size {self.split.estimation} times smallest alpha "
                f"{min(self.alphas)} must exceed 1")
        return self


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    cfg._base_dir = base_dir or Path.cwd()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(data, base_dir=path.resolve().parent)


def resolve(cfg: ExperimentConfig, rel: str) -> Path:
    base = cfg._base_dir or Path.cwd()
    p = Path(rel)
    return p if p.is_absolute() else base / p
