import math
from typing import List, Optional

from pydantic import Field

from gridgauss.app.schemas.report import ReportBase


class ModelSidecar(ReportBase):
    """JSON sidecar of a saved structured Gaussian"""

    height: int = Field(..., gt=0)
    width: int = Field(..., gt=0)
    radius: int = Field(..., gt=0)
    scaled: bool = False
    diag_scale_a: float = 0.0
    # None encodes the disabled additive diagonal term (b = -inf)
    diag_scale_b: Optional[float] = None
    off_diag_scale_c: List[float]

    @property
    def b_value(self) -> float:
        return -math.inf if self.diag_scale_b is None else self.diag_scale_b
