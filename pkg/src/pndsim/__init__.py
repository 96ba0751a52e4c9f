"""Store Sets simulation with compiler-labelled predict-no-dependency loads."""

from .analysis import LabelReport, alias_query, dep_test, label_pass, modref_blocks
from .lowering import DynOp, LoweringInputs, MachineState, Placement, lower, run_inorder
from .mir import MirError, Program, parse_program, print_program, validate
from .ooo import PRESETS, CpuConfig, RunMetrics, Simulator, simulate
from .storesets import PredictorConfig, StoreSetsPredictor

__all__ = [
    "CpuConfig", "DynOp", "LabelReport", "LoweringInputs", "MachineState", "MirError",
    "PRESETS", "Placement", "PredictorConfig", "Program", "RunMetrics", "Simulator",
    "StoreSetsPredictor", "alias_query", "dep_test", "label_pass", "lower", "modref_blocks",
    "parse_program", "print_program", "run_inorder", "simulate", "validate",
]
