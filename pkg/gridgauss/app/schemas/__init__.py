from .evaluation import BenchEntry, BenchReport, EvalRow, OracleCheckCase, OracleCheckReport
from .fit import FitConfig, FitInit, FitReport
from .model import ModelSidecar
from .report import SCHEMA_VERSION, ReportBase
from .synth import SynthKind, SynthSpec
