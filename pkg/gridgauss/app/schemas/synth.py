import enum
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator


class SynthKind(str, enum.Enum):
    GROUND_TRUTH_GMRF = "ground_truth_gmrf"
    SMOOTH_FIELD = "smooth_field"
    DIAGONAL_NOISE = "diagonal_noise"


class SynthSpec(BaseModel):
    """Recipe for a synthetic ensemble"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SynthKind
    height: int = Field(..., gt=0)
    width: int = Field(..., gt=0)
    count: int = Field(..., ge=1)
    seed: int = 0

    # ground_truth_gmrf
    radius: int = Field(1, ge=1)
    scaled: bool = False

    # smooth_field
    length_scale: float = Field(2.0, gt=0)
    amplitude: float = Field(1.0, gt=0)
    noise_std: float = Field(0.05, ge=0)

    # diagonal_noise: scalar or per-pixel H x W map
    std: Union[float, List[List[float]]] = 1.0
    mean: float = 0.0
    bumps: Optional[int] = Field(None, ge=1, description="Bumps per smooth field; default from the length scale")

    @field_validator("std")
    @classmethod
    def std_must_be_non_negative(cls, value):
        values = [value] if isinstance(value, (int, float)) else [v for row in value for v in row]
        if any(v < 0 for v in values):
            raise ValueError("std must be non-negative")
        return value
