import enum
import math
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from gridgauss.app.config.settings import settings
from gridgauss.app.schemas.report import ReportBase


class FitInit(str, enum.Enum):
    IDENTITY = "identity"
    SMALL_OFFDIAG = "small_offdiag"


class FitConfig(BaseModel):
    """Settings of a maximum-likelihood fit"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: int = Field(2000, gt=0)
    learning_rate: float = Field(1e-2, gt=0)
    convergence_tol: float = Field(1e-9, gt=0, description="Relative NLL change that ends the fit")
    init: FitInit = FitInit.SMALL_OFFDIAG
    scaled_parameterization: bool = False
    fit_mean: bool = True
    diagonal_only: bool = False
    variance_floor: float = Field(default_factory=lambda: settings.variance_floor, ge=0)
    init_offdiag_scale: float = Field(math.exp(-4.0), ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    log_every: int = Field(100, gt=0)


class FitReport(ReportBase):
    """Outcome of a fit: objective trace and convergence summary"""

    final_nll: float
    iterations: int
    gradient_norm: float
    trace: List[float]
    converged: bool = False
    best_iteration: int = 0
    config: Optional[Dict[str, Any]] = None
