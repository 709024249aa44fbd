from typing import List, Optional

from pydantic import BaseModel

from gridgauss.app.schemas.report import ReportBase


class EvalRow(ReportBase):
    """Metrics of one prediction / ground-truth pair"""

    name: str
    valid_pixels: int
    absrel: float
    sqrel: float
    rmse: float
    a1: float
    a2: float
    a3: float
    sparsification_metric: Optional[str] = None
    ause: Optional[float] = None
    aurg: Optional[float] = None


class OracleCheckCase(BaseModel):
    """Relative errors of one randomized sparse-vs-dense comparison"""

    seed: int
    height: int
    width: int
    radius: int
    scaled: bool
    known_pixels: int
    errors: dict
    passed: bool


class OracleCheckReport(ReportBase):
    tolerance: float
    cases: List[OracleCheckCase]
    passed: bool
    failures: int
    elapsed_seconds: float


class BenchEntry(BaseModel):
    height: int
    width: int
    pixels: int
    seconds: float
    seconds_per_sample: float


class BenchReport(ReportBase):
    jacobi_iterations: int
    count: int
    radius: int
    repeats: int
    entries: List[BenchEntry]
    ratios: List[float]
    ratios_per_pixel_doubling: List[float]
    reference_seconds_per_sample: float = 0.6
