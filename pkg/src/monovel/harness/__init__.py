from .ablate import PRESETS, TABLE5_ROWS, TABLE6_ROWS, AblationTable, RunResult, ablate
from .config import ABLATION_SWITCHES, RunConfig, config_diff
from .plot import plot
from .train import Checkpoint, baseline_reports, evaluate, evaluate_model, load_samples, train

__all__ = ["ABLATION_SWITCHES", "AblationTable", "Checkpoint", "PRESETS", "RunConfig", "RunResult",
           "TABLE5_ROWS", "TABLE6_ROWS", "ablate", "baseline_reports", "config_diff", "evaluate",
           "evaluate_model", "load_samples", "plot", "train"]
