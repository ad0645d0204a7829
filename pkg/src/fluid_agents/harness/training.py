"""
Training runs
=============

A run directory holds ``config.json``, ``metrics.csv`` (one schema-versioned
row per checkpoint, appended as training goes), ``checkpoints/ckpt_XXXX.pt``
and the last checkpoint's per-episode evaluation ``episodes.csv``.

Checkpoint k of n is written after ``round(k * steps / n)`` vector steps; a
run with zero steps writes the untrained checkpoint 0 only.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from ..envs import make_env
from ..envs.vector import VectorEnv
from ..errors import NonFiniteLossError
from ..learners import Learner, PolicyGradientLearner, make_learner
from ..learners.exploration import spawn_eps_schedule
from ..learners.presets import TrainConfig
from ..learners.replay import ReplayBuffer
from ..nn import save_checkpoint
from ..settings import RUNS_DIR
from .evaluation import EVAL_SEED_OFFSET, EvalReport, env_signature, evaluate_learner

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRIC_COLUMNS = ["schema_version", "run_id", "seed", "checkpoint", "env_steps", "joint_return_mean",
                  "joint_return_std", "alive_mean", "extra"]


def checkpoint_schedule(steps: int, n_checkpoints: int) -> List[int]:
    """Vector step after which each checkpoint is written; index = checkpoint number - 1."""
    if steps == 0:
        return [0]
    return [int(round(k * steps / n_checkpoints)) for k in range(1, n_checkpoints + 1)]


def seed_everything(seed: int, single_threaded: bool = True) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    if single_threaded:
        torch.set_num_threads(1)


def default_run_id(config: TrainConfig) -> str:
    name = config.preset or f"{config.env}_{config.learner.algorithm}"
    return f"{name}_s{config.seed}"


def metrics_row(run_id: str, seed: int, report: EvalReport) -> Dict[str, object]:
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "run_id": run_id,
        "seed": seed,
        "checkpoint": report.checkpoint,
        "env_steps": report.env_steps,
        "joint_return_mean": report.joint_return_mean,
        "joint_return_std": report.joint_return_std,
        "alive_mean": report.alive_mean,
        "extra": json.dumps(report.extra(), sort_keys=True),
    }


def append_metrics(path: Path, row: Dict[str, object]) -> None:
    frame = pd.DataFrame([row], columns=METRIC_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


@dataclass
class RunResult:
    run_dir: Path
    checkpoints: List[Path] = field(default_factory=list)
    final_report: Optional[EvalReport] = None

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.csv"

    def metrics(self) -> pd.DataFrame:
        return pd.read_csv(self.metrics_path)


class Trainer:
    """Runs one configured learner on a batch of environments."""

    def __init__(self, config: TrainConfig, out_dir: Union[str, Path, None] = None, run_id: Optional[str] = None,
                 show_progress: bool = True):
        self.config = config
        self.run_id = run_id or default_run_id(config)
        self.run_dir = Path(out_dir or RUNS_DIR) / self.run_id
        self.show_progress = show_progress

        lc = config.learner
        self.envs = [make_env(config.env, config.env_config) for _ in range(lc.num_envs)]
        self.signature = env_signature(self.envs[0])
        if lc.value_based:
            total_updates = config.steps * lc.replay_ratio
        else:
            total_updates = (config.steps // lc.rollout_steps) * lc.update_epochs * lc.minibatches
        seed_everything(config.seed, single_threaded=config.workers == 0)
        self.learner: Learner = make_learner(config, self.envs[0], total_updates)
        self.rng = np.random.default_rng(config.seed)
        self.replay = None
        if lc.value_based:
            self.replay = ReplayBuffer(lc.buffer_size, self.envs[0].n_max, self.envs[0].obs_dim)
        self.checkpoints: List[Path] = []
        self.recent_returns: List[float] = []

    # -------------------------------------------------------------- io

    def _prepare_dir(self) -> None:
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        metrics = self.run_dir / "metrics.csv"
        if metrics.exists():
            # A rerun into the same directory starts a fresh log.
            metrics.unlink()
        for old in (self.run_dir / "checkpoints").glob("ckpt_*.pt"):
            old.unlink()
        self.config.save(self.run_dir / "config.json")

    def _checkpoint(self, index: int, step: int) -> EvalReport:
        env_steps = step * self.config.learner.num_envs
        meta = {
            "config": self.config.to_dict(),
            "env": self.signature,
            "run_id": self.run_id,
            "checkpoint": index,
            "env_steps": env_steps,
        }
        path = save_checkpoint(self.run_dir / "checkpoints" / f"ckpt_{index:04d}.pt", self.learner.networks,
                               step, meta)
        self.checkpoints.append(path)
        report = evaluate_learner(self.learner, self.config, self.config.eval_episodes,
                                  seed=self.config.seed + EVAL_SEED_OFFSET, checkpoint=index, env_steps=env_steps)
        append_metrics(self.run_dir / "metrics.csv", metrics_row(self.run_id, self.config.seed, report))
        logger.info("checkpoint %d at %d env steps: return %.3f +- %.3f, alive %.2f", index, env_steps,
                    report.joint_return_mean, report.joint_return_std, report.alive_mean)
        return report

    # ------------------------------------------------------------ training

    def _value_step(self, vec: VectorEnv, obs: np.ndarray, step: int) -> np.ndarray:
        lc = self.config.learner
        eps_spawn = spawn_eps_schedule(step, self.config.steps, lc.max_eps_spawn)
        actions = self.learner.act(obs, vec.alive_masks(), lc.eps_greedy, eps_spawn, self.rng)
        out = vec.step(actions)
        self.replay.add(obs, actions, out.rewards, out.next_observations, out.dones, out.alive_pre, out.alive_post)
        if len(self.replay) >= min(lc.batch_size, lc.buffer_size):
            for _ in range(lc.replay_ratio):
                self.learner.update(self.replay.sample(lc.batch_size, self.rng))
        self._record(out.finished)
        return out.observations

    def _policy_step(self, vec: VectorEnv, obs: np.ndarray) -> np.ndarray:
        learner: PolicyGradientLearner = self.learner
        needs_state = learner.variant == "global_state"
        output = learner.act(obs, vec.alive_masks(), self.rng, states=vec.global_states() if needs_state else None)
        out = vec.step(output.actions)
        learner.store(obs, output, out.rewards, out.dones, out.alive_pre)
        if learner.ready():
            stats = learner.update(out.observations, vec.global_states() if needs_state else None)
            logger.debug("policy update %d: %s", learner.updates, stats)
        self._record(out.finished)
        return out.observations

    def _record(self, finished) -> None:
        for stats in finished:
            self.recent_returns.append(stats.joint_return)
        del self.recent_returns[:-100]

    def run(self) -> RunResult:
        config = self.config
        self._prepare_dir()
        schedule = checkpoint_schedule(config.steps, config.n_checkpoints)
        vec = VectorEnv(self.envs, seed=config.seed, curriculum=config.curriculum, workers=config.workers)
        logger.info("training %s: %s on %s, %d vector steps x %d envs", self.run_id, config.learner.algorithm,
                    config.env, config.steps, len(self.envs))
        report = None
        try:
            if config.steps == 0:
                report = self._checkpoint(0, 0)
            else:
                obs = vec.reset()
                next_ckpt = 0
                progress = tqdm(range(1, config.steps + 1), desc=self.run_id, disable=not self.show_progress)
                for step in progress:
                    if config.learner.value_based:
                        obs = self._value_step(vec, obs, step)
                    else:
                        obs = self._policy_step(vec, obs)
                    while next_ckpt < len(schedule) and schedule[next_ckpt] <= step:
                        report = self._checkpoint(next_ckpt + 1, step)
                        next_ckpt += 1
                    if self.recent_returns and step % 50 == 0:
                        progress.set_postfix(ret=f"{np.mean(self.recent_returns):.2f}")
        except NonFiniteLossError:
            last = self.checkpoints[-1].name if self.checkpoints else "none"
            logger.error("non-finite loss in %s; last good checkpoint: %s", self.run_id, last)
            raise
        finally:
            vec.close()

        if report is not None:
            report.save_episodes(self.run_dir / "episodes.csv")
        return RunResult(run_dir=self.run_dir, checkpoints=list(self.checkpoints), final_report=report)


def train(config: TrainConfig, out_dir: Union[str, Path, None] = None, run_id: Optional[str] = None,
          show_progress: bool = True) -> RunResult:
    return Trainer(config, out_dir=out_dir, run_id=run_id, show_progress=show_progress).run()
