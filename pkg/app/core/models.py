import math
from typing import Any, Callable, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import (
    ENHANCED_IC_FRACTION,
    ERROR_TRIALS,
    HGM_X0,
    LAMBDA0,
    MAX_TERMS,
    RK_STEP,
    SEED,
    SERIES_EPS,
)
from app.core.scaled import ScaledReal

Method = Literal["series", "quadrature", "hgm", "hgm-enhanced"]
VariableTag = Literal["x", "lambda", "phi"]


# -- specfun / hkn --------------------------------------------------------------

class SeriesControl(BaseModel):
    eps: float = Field(SERIES_EPS, gt=0)
    max_terms: int = Field(MAX_TERMS, ge=1)
    compensated: bool = False


class HknParams(BaseModel):
    k: int = Field(ge=0)
    n: int = Field(ge=1)


class HknResult(BaseModel):
    value: ScaledReal
    n_terms_or_steps: int = 0
    converged: bool = True
    abs_err_estimate: float = 0.0
    rel_err_estimate: float = 0.0
    method: str = ""
    reason: Optional[str] = None
    diagnostics: Dict[str, Any] = {}

    @property
    def real(self) -> float:
        return self.value.to_float()


# -- ODE systems ----------------------------------------------------------------

class OdeSystem(BaseModel):
    """dy/d(var) = M(var) y, with an optional per-entry log scale.

    When ``log_scale_fn`` is given the coefficient matrix is
    ``matrix_fn(var) * exp(log_scale_fn(var))`` elementwise.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    dim: int = Field(ge=1)
    matrix_fn: Callable[[float], np.ndarray]
    variable_tag: VariableTag
    log_scale_fn: Optional[Callable[[float], np.ndarray]] = None
    params: Dict[str, Any] = {}

    def matrix(self, var: float) -> np.ndarray:
        m = self.matrix_fn(var)
        if self.log_scale_fn is None:
            return m
        scale = self.log_scale_fn(var)
        out = np.zeros_like(m)
        nz = m != 0.0
        out[nz] = m[nz] * np.exp(scale[nz])
        return out

    def rhs(self, var: float, y: np.ndarray) -> np.ndarray:
        return self.matrix(var) @ y


class GaugeTransform(BaseModel):
    """f = G h. Diagonal exponential gauges also expose their log diagonal."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    dim: int = Field(ge=1)
    G: Callable[[float], np.ndarray]
    G_prime: Callable[[float], np.ndarray]
    log_diag: Optional[Callable[[float], np.ndarray]] = None
    dlog_diag: Optional[Callable[[float], np.ndarray]] = None
    name: str = "gauge"

    @property
    def is_diagonal(self) -> bool:
        return self.log_diag is not None and self.dlog_diag is not None


class RkOptions(BaseModel):
    mode: Literal["fixed", "adaptive", "dop853"] = "adaptive"
    step: float = Field(RK_STEP, gt=0)
    abs_tol: float = Field(1e-14, gt=0)
    rel_tol: float = Field(1e-12, gt=0)
    checkpoint_stride: Optional[float] = Field(None, gt=0)
    max_steps: int = Field(5_000_000, ge=1)
    compensated: bool = True


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    var: float
    state: np.ndarray
    log_offset: Optional[np.ndarray] = None


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    checkpoints: List[Checkpoint] = []
    n_steps: int = 0
    n_rejected: int = 0
    local_error: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _monotone(self):
        vs = [c.var for c in self.checkpoints]
        if len(vs) > 1:
            d = np.diff(vs)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError("checkpoint variables must be strictly monotone")
        return self

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def at(self, var: float, rel: float = 1e-12) -> Checkpoint:
        for c in self.checkpoints:
            if abs(c.var - var) <= rel * max(1.0, abs(var)):
                return c
        raise KeyError(f"no checkpoint at {var}")


class InitialCondition(BaseModel):
    """State at ``var``; component i equals state[i] * exp(log_offset[i])."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    var: float
    state: np.ndarray
    log_offset: Optional[np.ndarray] = None
    provenance: Literal["series", "quadrature"]
    est_abs_error: float = 0.0
    est_rel_error: float = 0.0
    variable_tag: VariableTag = "phi"

    @model_validator(mode="after")
    def _finite(self):
        if not np.all(np.isfinite(self.state)):
            raise ValueError("initial condition has non-finite components")
        if self.log_offset is None:
            self.log_offset = np.zeros_like(self.state, dtype=float)
        return self


class ColumnResult(BaseModel):
    """H^k_n(x, lam) for every requested (x, k) of one determinant column."""

    xs: List[float]
    ks: List[int]
    values: List[List[ScaledReal]]
    rel_err_estimate: float = 0.0
    steps: int = 0
    method: str
    diagnostics: Dict[str, Any] = {}

    def at(self, x: float, k: int) -> ScaledReal:
        return self.values[self.xs.index(x)][self.ks.index(k)]


class EvalResult(BaseModel):
    value: ScaledReal
    rel_err_estimate: float = 0.0
    abs_err_estimate: float = 0.0
    method: str
    steps: int = 0
    terms_used: int = 0
    wall_time: float = 0.0
    diagnostics: Dict[str, Any] = {}

    @property
    def real(self) -> float:
        return self.value.to_float()


# -- cdf ------------------------------------------------------------------------

class Spectrum(BaseModel):
    lambdas: List[float]

    @field_validator("lambdas")
    @classmethod
    def _strictly_increasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("spectrum must not be empty")
        if any(not math.isfinite(l) or l <= 0 for l in v):
            raise ValueError("eigenvalues must be positive and finite")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("eigenvalues must be strictly increasing (distinct)")
        return [float(l) for l in v]

    @property
    def s(self) -> int:
        return len(self.lambdas)

    @property
    def total(self) -> float:
        return math.fsum(self.lambdas)


class MimoConfig(BaseModel):
    n_t: int = Field(ge=1)
    n_r: int = Field(ge=1)
    K: float = Field(0.0, ge=0)
    gamma_b: Optional[float] = Field(None, gt=0)
    gamma_th: Optional[float] = Field(None, gt=0)

    @property
    def s(self) -> int:
        return min(self.n_t, self.n_r)

    @property
    def t(self) -> int:
        return max(self.n_t, self.n_r)


class CdfOptions(BaseModel):
    series: SeriesControl = SeriesControl()
    quad_tol: float = Field(1e-13, gt=0)
    quad_dps: Optional[int] = Field(None, ge=16)
    rk: RkOptions = RkOptions()
    x0: float = Field(HGM_X0, gt=0)
    lambda0: float = Field(LAMBDA0, gt=0)
    ic_fraction: float = Field(ENHANCED_IC_FRACTION, gt=0, lt=1)
    precision_bits: Optional[int] = Field(None, ge=53)
    error_trials: int = Field(ERROR_TRIALS, ge=10)
    seed: int = SEED
    threads: int = Field(1, ge=1)


class CdfResult(BaseModel):
    x: float
    value: float
    abs_err_estimate: float = 0.0
    method: str
    cancellation: bool = False
    wall_time: float = 0.0
    diagnostics: Dict[str, Any] = {}

    @property
    def clamped(self) -> float:
        return min(1.0, max(0.0, self.value))


# -- oracle ---------------------------------------------------------------------

class ChannelSample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    H: np.ndarray


class McEstimate(BaseModel):
    p_hat: float = Field(ge=0, le=1)
    n_samples: int = Field(ge=1)
    std_err: float = Field(ge=0)
    seed: Optional[int] = None
    rng: str = "PCG64/ziggurat"

    @model_validator(mode="after")
    def _consistent(self):
        expected = math.sqrt(self.p_hat * (1.0 - self.p_hat) / self.n_samples)
        if abs(self.std_err - expected) > 1e-12 + 1e-9 * expected:
            raise ValueError("std_err inconsistent with p_hat and n_samples")
        return self

    @classmethod
    def from_counts(cls, hits: int, n: int, seed: Optional[int] = None) -> "McEstimate":
        p = hits / n
        return cls(p_hat=p, n_samples=n, std_err=math.sqrt(p * (1.0 - p) / n), seed=seed)


# -- cli ------------------------------------------------------------------------

class RunSpec(BaseModel):
    subcommand: Literal["hkn", "cdf", "outage", "validate", "bench"]
    params: Dict[str, Any] = {}
    method: Optional[str] = None
    options: CdfOptions = CdfOptions()
    seed: int = SEED
    out_format: Literal["csv", "json"] = "csv"
    out_path: Optional[str] = None
