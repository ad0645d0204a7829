"""
Reports across runs
===================

Reads every ``metrics.csv`` under a runs directory (with the neighbouring
``config.json`` for algorithm and environment), normalizes joint returns per
environment over all algorithms and checkpoints, and writes tables and SVG
figures. The fixed-group spawn-cost adjustment is applied here only, never
during training.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..errors import ReportSchemaError  # noqa: E402
from .training import METRIC_COLUMNS, METRICS_SCHEMA_VERSION  # noqa: E402

logger = logging.getLogger(__name__)

GATE_COLORS = {True: "tab:blue", False: "tab:orange"}
ABLATION_FLUID = "predprey_ablation_vdn"
ABLATION_FIXED = "predprey_fixed_vdn"


# ------------------------------------------------------------------ loading

def load_runs(runs_dir: Union[str, Path]) -> pd.DataFrame:
    """All metric rows under ``runs_dir`` with env/algorithm/preset columns attached."""
    runs_dir = Path(runs_dir)
    files = sorted(runs_dir.rglob("metrics.csv"))
    if not files:
        raise ReportSchemaError(f"no metrics.csv found under {runs_dir}")
    frames, bad = [], []
    for path in files:
        frame = pd.read_csv(path)
        if list(frame.columns) != METRIC_COLUMNS or (frame["schema_version"] != METRICS_SCHEMA_VERSION).any():
            bad.append(str(path))
            continue
        config = _read_config(path.parent)
        frame["env"] = config.get("env", "unknown")
        frame["algorithm"] = config.get("learner", {}).get("algorithm", "unknown")
        frame["preset"] = config.get("preset", "")
        frame["run_dir"] = str(path.parent)
        frames.append(frame)
    if bad:
        raise ReportSchemaError("incompatible metric schema", bad)
    runs = pd.concat(frames, ignore_index=True)
    runs["extra"] = runs["extra"].fillna("{}").map(json.loads)
    return runs


def _read_config(run_dir: Path) -> dict:
    path = run_dir / "config.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


# ------------------------------------------------------------ normalization

def normalize_returns(values: Union[Sequence[float], np.ndarray, pd.Series], r_min: Optional[float] = None,
                      r_max: Optional[float] = None) -> np.ndarray:
    """``(R - R_min) / (R_max - R_min)``, bounds defaulting to the values' own range."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ReportSchemaError("cannot normalize an empty set of returns")
    r_min = float(np.nanmin(values)) if r_min is None else r_min
    r_max = float(np.nanmax(values)) if r_max is None else r_max
    if r_max == r_min:
        logger.warning("all returns equal %.6g; normalized returns set to zero", r_min)
        return np.zeros_like(values)
    return (values - r_min) / (r_max - r_min)


def normalized_curves(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and std across seeds of normalized return per (env, algorithm, checkpoint)."""
    if runs.empty:
        raise ReportSchemaError("no runs to normalize")
    runs = runs.copy()
    runs["normalized_return"] = np.nan
    for _, index in runs.groupby("env").groups.items():
        runs.loc[index, "normalized_return"] = normalize_returns(runs.loc[index, "joint_return_mean"])
    return _aggregate(runs, "normalized_return")


def alive_curves(runs: pd.DataFrame) -> pd.DataFrame:
    return _aggregate(runs, "alive_mean")


def _aggregate(runs: pd.DataFrame, column: str) -> pd.DataFrame:
    grouped = runs.groupby(["env", "algorithm", "checkpoint"])
    table = grouped.agg(env_steps=("env_steps", "mean"), mean=(column, "mean"), seeds=("seed", "nunique"))
    # Population std over seeds, so a single seed gives a zero-width band.
    table["std"] = grouped[column].std(ddof=0)
    return table.reset_index()


def spawn_composition(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean agents spawned per episode by level, per (algorithm, checkpoint), LBF runs only."""
    rows = []
    for _, row in runs[runs["env"] == "lbf"].iterrows():
        for level, count in row["extra"].get("spawns_by_level", {}).items():
            rows.append({"algorithm": row["algorithm"], "checkpoint": row["checkpoint"],
                         "env_steps": row["env_steps"], "level": int(level), "spawned": count})
    if not rows:
        return pd.DataFrame(columns=["algorithm", "checkpoint", "env_steps", "level", "spawned"])
    frame = pd.DataFrame(rows)
    return frame.groupby(["algorithm", "checkpoint", "level"], as_index=False).mean()


# ---------------------------------------------------------------- ablation

def fixed_group_adjustment(c_spawn: float, group_size: int, base_size: int = 2) -> float:
    """Spawn cost a fixed group would have paid to grow from ``base_size``."""
    return c_spawn * (group_size - base_size)


def ablation_table(runs: pd.DataFrame) -> pd.DataFrame:
    """Final-checkpoint return and population per prey count for fluid and fixed groups.

    Fixed-group returns are reduced by ``c_spawn * (n - 2)``; every value is
    then divided by the best adjusted fixed-group return at that prey count.
    """
    rows = []
    for run_dir, frame in runs[runs["preset"].isin([ABLATION_FLUID, ABLATION_FIXED])].groupby("run_dir"):
        last = frame.loc[frame["checkpoint"].idxmax()]
        config = _read_config(Path(run_dir))
        env_config = config.get("env_config", {})
        fixed = last["preset"] == ABLATION_FIXED
        group_size = int(env_config.get("initial_agents", 2))
        c_spawn = float(env_config.get("c_spawn", 0.0))
        for n_prey, summary in last["extra"].get("by_prey_count", {}).items():
            ret = summary["return_mean"]
            if fixed:
                ret -= fixed_group_adjustment(c_spawn, group_size)
            rows.append({"group": f"fixed_{group_size}" if fixed else "fluid", "seed": last["seed"],
                         "n_prey": int(n_prey), "return": ret, "alive": summary["alive_mean"]})
    columns = ["group", "n_prey", "return", "return_std", "alive", "seeds", "relative_efficiency"]
    if not rows:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame(rows)
    table = frame.groupby(["group", "n_prey"]).agg(
        **{"return": ("return", "mean"), "alive": ("alive", "mean"), "seeds": ("seed", "nunique")})
    table["return_std"] = frame.groupby(["group", "n_prey"])["return"].std(ddof=0)
    table = table.reset_index()
    fixed_best = table[table["group"].str.startswith("fixed")].groupby("n_prey")["return"].max()
    table["relative_efficiency"] = table.apply(
        lambda r: r["return"] / fixed_best[r["n_prey"]]
        if r["n_prey"] in fixed_best and fixed_best[r["n_prey"]] != 0 else np.nan, axis=1)
    return table[columns]


def puddle_episodes(runs: pd.DataFrame) -> pd.DataFrame:
    frames = []
    for run_dir in runs.loc[runs["env"] == "puddle_bridge", "run_dir"].unique():
        path = Path(run_dir) / "episodes.csv"
        if path.exists():
            frame = pd.read_csv(path)
            frame["run_dir"] = run_dir
            frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


# ------------------------------------------------------------------ figures

def _band_plot(table: pd.DataFrame, ylabel: str, path: Path) -> None:
    envs = sorted(table["env"].unique())
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.5), squeeze=False)
    for ax, env in zip(axes[0], envs):
        for algorithm, curve in table[table["env"] == env].groupby("algorithm"):
            curve = curve.sort_values("env_steps")
            ax.plot(curve["env_steps"], curve["mean"], label=algorithm)
            ax.fill_between(curve["env_steps"], curve["mean"] - curve["std"], curve["mean"] + curve["std"],
                            alpha=0.25)
        ax.set_title(env)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(ylabel)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _spawn_plot(table: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (algorithm, level), curve in table.groupby(["algorithm", "level"]):
        curve = curve.sort_values("env_steps")
        ax.plot(curve["env_steps"], curve["spawned"], label=f"{algorithm} level {level}")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("agents spawned per episode")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _puddle_plot(episodes: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    jitter = np.random.default_rng(0).uniform(-0.15, 0.15, size=len(episodes))
    for gate, group in episodes.groupby("gate_open"):
        label = "gate open" if gate else "gate closed"
        ax.scatter(group["alive_end"] + jitter[group.index], group["joint_return"], s=8,
                   color=GATE_COLORS[bool(gate)], label=label, alpha=0.6)
    ax.set_xlabel("agents alive at episode end")
    ax.set_ylabel("joint return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _ablation_plots(table: pd.DataFrame, bar_path: Path, density_path: Path) -> None:
    groups = sorted(table["group"].unique())
    counts = sorted(table["n_prey"].unique())
    width = 0.8 / max(1, len(groups))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, group in enumerate(groups):
        rows = table[table["group"] == group].set_index("n_prey").reindex(counts)
        ax.bar(np.arange(len(counts)) + k * width, rows["relative_efficiency"], width, label=group)
    ax.set_xticks(np.arange(len(counts)) + width * (len(groups) - 1) / 2)
    ax.set_xticklabels([str(c) for c in counts])
    ax.set_xlabel("preys")
    ax.set_ylabel("return / best fixed group")
    ax.legend()
    fig.tight_layout()
    fig.savefig(bar_path, format="svg")
    plt.close(fig)

    fluid = table[table["group"] == "fluid"].sort_values("n_prey")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(fluid["n_prey"], fluid["alive"], marker="o")
    ax.set_xlabel("preys")
    ax.set_ylabel("agents alive at episode end")
    fig.tight_layout()
    fig.savefig(density_path, format="svg")
    plt.close(fig)


def report(runs_dir: Union[str, Path], out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write every table and figure the runs support; returns name -> path."""
    runs = load_runs(runs_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}

    curves = normalized_curves(runs)
    curves.to_csv(out / "normalized_returns.csv", index=False)
    written["normalized_returns.csv"] = out / "normalized_returns.csv"
    _band_plot(curves, "normalized return", out / "normalized_return.svg")
    written["normalized_return.svg"] = out / "normalized_return.svg"

    alive = alive_curves(runs)
    alive.to_csv(out / "alive.csv", index=False)
    written["alive.csv"] = out / "alive.csv"
    _band_plot(alive, "agents alive at episode end", out / "alive.svg")
    written["alive.svg"] = out / "alive.svg"

    spawns = spawn_composition(runs)
    if not spawns.empty:
        spawns.to_csv(out / "lbf_spawns.csv", index=False)
        _spawn_plot(spawns, out / "lbf_spawns.svg")
        written["lbf_spawns.svg"] = out / "lbf_spawns.svg"

    episodes = puddle_episodes(runs)
    if not episodes.empty:
        _puddle_plot(episodes, out / "puddle_scatter.svg")
        written["puddle_scatter.svg"] = out / "puddle_scatter.svg"

    ablation = ablation_table(runs)
    if not ablation.empty:
        ablation.to_csv(out / "ablation.csv", index=False)
        written["ablation.csv"] = out / "ablation.csv"
        _ablation_plots(ablation, out / "ablation.svg", out / "population_density.svg")
        written["ablation.svg"] = out / "ablation.svg"
        written["population_density.svg"] = out / "population_density.svg"

    logger.info("report for %d runs written to %s", runs["run_dir"].nunique(), out)
    return written


def summary_lines(runs: pd.DataFrame) -> List[str]:
    """One line per run: final checkpoint return and population."""
    lines = []
    for run_dir, frame in runs.groupby("run_dir"):
        last = frame.loc[frame["checkpoint"].idxmax()]
        lines.append(f"{Path(run_dir).name}: {last['algorithm']} on {last['env']}, checkpoint {last['checkpoint']}, "
                     f"return {last['joint_return_mean']:.3f} +- {last['joint_return_std']:.3f}, "
                     f"alive {last['alive_mean']:.2f}")
    return lines
