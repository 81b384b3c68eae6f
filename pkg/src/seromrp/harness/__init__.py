from .config import CONFIG_SCHEMA, ExperimentConfig, preset
from .feedback import run_feedback_analysis, worked_table
from .runner import RESULT_COLUMNS, SUMMARY_COLUMNS, resume, run_experiment, summarize_dir

__all__ = [
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "RESULT_COLUMNS",
    "SUMMARY_COLUMNS",
    "preset",
    "resume",
    "run_experiment",
    "run_feedback_analysis",
    "summarize_dir",
    "worked_table",
]
