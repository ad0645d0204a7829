"""Training, evaluation and reporting around the learners and environments."""

from .evaluation import EpisodeRecord, EvalReport, evaluate, evaluate_learner
from .reporting import load_runs, normalize_returns, report
from .training import RunResult, Trainer, checkpoint_schedule, train

__all__ = [
    "EpisodeRecord",
    "EvalReport",
    "RunResult",
    "Trainer",
    "checkpoint_schedule",
    "evaluate",
    "evaluate_learner",
    "load_runs",
    "normalize_returns",
    "report",
    "train",
]
