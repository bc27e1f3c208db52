import math
from typing import Any, Optional

import mpmath
from pydantic import BaseModel, ConfigDict, model_validator

from app.core.config import LOG10_CROSSOVER

_LN10 = math.log(10.0)


class ScaledReal(BaseModel):
    """Sign plus natural-log magnitude, for values far outside double range.

    ``hp`` optionally carries the same value as a signed mpmath number; it is
    filled by the high-precision evaluators and consumed by the big-float
    determinant.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sign: int
    log_mag: float
    hp: Optional[Any] = None

    @model_validator(mode="after")
    def _check(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or 1, got {self.sign}")
        if (self.sign == 0) != (self.log_mag == -math.inf):
            raise ValueError("sign 0 and log_mag -inf must go together")
        if math.isnan(self.log_mag) or self.log_mag == math.inf:
            raise ValueError(f"log_mag must be finite or -inf, got {self.log_mag}")
        return self

    # -- constructors ---------------------------------------------------------

    @classmethod
    def zero(cls) -> "ScaledReal":
        return cls(sign=0, log_mag=-math.inf)

    @classmethod
    def one(cls) -> "ScaledReal":
        return cls(sign=1, log_mag=0.0)

    @classmethod
    def from_float(cls, value: float) -> "ScaledReal":
        if math.isnan(value) or math.isinf(value):
            raise ValueError(f"cannot scale non-finite value {value}")
        if value == 0.0:
            return cls.zero()
        return cls(sign=1 if value > 0 else -1, log_mag=math.log(abs(value)))

    @classmethod
    def from_log(cls, sign: int, log_mag: float) -> "ScaledReal":
        if sign == 0 or log_mag == -math.inf:
            return cls.zero()
        return cls(sign=sign, log_mag=float(log_mag))

    @classmethod
    def from_mpf(cls, value: Any) -> "ScaledReal":
        value = mpmath.mpf(value)
        if value == 0:
            return cls.zero()
        return cls(sign=1 if value > 0 else -1, log_mag=float(mpmath.log(abs(value))), hp=value)

    # -- accessors ------------------------------------------------------------

    @property
    def log10_mag(self) -> float:
        return self.log_mag / _LN10

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def exceeds_native(self) -> bool:
        return self.log10_mag > LOG10_CROSSOVER

    def to_float(self) -> float:
        """Native value; saturates to +-inf / 0 outside double range."""
        if self.sign == 0:
            return 0.0
        if self.log_mag > 709.78:
            return math.copysign(math.inf, self.sign)
        return self.sign * math.exp(self.log_mag)

    def __float__(self) -> float:
        return self.to_float()

    def to_mpf(self) -> Any:
        if self.hp is not None:
            return mpmath.mpf(self.hp)
        if self.sign == 0:
            return mpmath.mpf(0)
        return self.sign * mpmath.exp(mpmath.mpf(self.log_mag))

    # -- arithmetic -----------------------------------------------------------

    def scale(self, log_offset: float) -> "ScaledReal":
        """Multiply by exp(log_offset)."""
        if self.sign == 0:
            return self
        hp = None
        if self.hp is not None:
            hp = self.hp * mpmath.exp(mpmath.mpf(log_offset))
        return ScaledReal(sign=self.sign, log_mag=self.log_mag + log_offset, hp=hp)

    def __neg__(self) -> "ScaledReal":
        hp = -self.hp if self.hp is not None else None
        return ScaledReal(sign=-self.sign, log_mag=self.log_mag, hp=hp)

    def __mul__(self, other: Any) -> "ScaledReal":
        other = _coerce(other)
        if self.sign == 0 or other.sign == 0:
            return ScaledReal.zero()
        hp = self.hp * other.hp if self.hp is not None and other.hp is not None else None
        return ScaledReal(sign=self.sign * other.sign, log_mag=self.log_mag + other.log_mag, hp=hp)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "ScaledReal":
        other = _coerce(other)
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero ScaledReal")
        if self.sign == 0:
            return ScaledReal.zero()
        hp = self.hp / other.hp if self.hp is not None and other.hp is not None else None
        return ScaledReal(sign=self.sign * other.sign, log_mag=self.log_mag - other.log_mag, hp=hp)

    def __add__(self, other: Any) -> "ScaledReal":
        other = _coerce(other)
        if other.sign == 0:
            return self
        if self.sign == 0:
            return other
        big, small = (self, other) if self.log_mag >= other.log_mag else (other, self)
        ratio = math.exp(small.log_mag - big.log_mag)
        factor = 1.0 + big.sign * small.sign * ratio
        hp = self.hp + other.hp if self.hp is not None and other.hp is not None else None
        if factor == 0.0:
            return ScaledReal.zero()
        return ScaledReal(sign=big.sign, log_mag=big.log_mag + math.log(factor), hp=hp)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "ScaledReal":
        return self + (-_coerce(other))

    def __repr__(self) -> str:
        if self.sign == 0:
            return "ScaledReal(0)"
        return f"ScaledReal({'-' if self.sign < 0 else '+'}e^{self.log_mag:.10g})"


def _coerce(value: Any) -> ScaledReal:
    if isinstance(value, ScaledReal):
        return value
    return ScaledReal.from_float(float(value))
