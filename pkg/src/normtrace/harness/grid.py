"""Monte-Carlo sweep: cell construction, resumable JSONL output, workers."""
from __future__ import annotations

import json
import multiprocessing
from pathlib import Path

from .config import ExperimentConfig, ScenarioConfig, config_hash
from .episode import run_episode

# Full factorial over population, greed penalty, observability, and the
# share exponent, five seeds per cell, plus one adversarial replicate of
# the share-exponent baseline cells: 3*3*2*3*5 + 3*3*2*1*5 = 270 + 90.
DEFAULT_GRID_SPEC = {
    "num_agents": [10, 50, 100],
    "penalty_factor": [0.05, 0.20, 0.35],
    "partial_obs": [False, True],
    "alpha_dist": [0.0, 0.25, 1.0],
    "seeds": [0, 1, 2, 3, 4],
    "episode_steps": 1000,
    "warmup_steps": 500,
    "byzantine": {"byzantine_fraction": 0.05, "alpha_dist": [1.0]},
}


def _cell_config(spec: dict, n: int, penalty: float, obs: bool, alpha: float,
                 byz_fraction: float = 0.0) -> ExperimentConfig:
    config = ExperimentConfig()
    config.world.num_agents = n
    config.world.penalty_factor = penalty
    config.world.partial_obs = obs
    config.world.alpha_dist = alpha
    config.world.graph_k = min(8, n - 2 if (n - 2) % 2 == 0 else n - 1)
    config.world.byzantine_fraction = byz_fraction
    config.episode_steps = int(spec.get("episode_steps", 1000))
    config.detection.warmup_steps = int(spec.get("warmup_steps", 500))
    config.scenario = ScenarioConfig()
    return config


def build_runs(spec: dict | None = None) -> list[tuple[ExperimentConfig, int]]:
    """Materialize the (config, seed) list in canonical cell order."""
    spec = dict(DEFAULT_GRID_SPEC if spec is None else spec)
    runs: list[tuple[ExperimentConfig, int]] = []
    seeds = spec.get("seeds", [0, 1, 2, 3, 4])
    for n in sorted(spec["num_agents"]):
        for penalty in sorted(spec["penalty_factor"]):
            for obs in sorted(spec["partial_obs"]):
                for alpha in sorted(spec["alpha_dist"]):
                    for seed in seeds:
                        runs.append((_cell_config(spec, n, penalty, obs, alpha), seed))
    byz = spec.get("byzantine")
    if byz:
        frac = byz.get("byzantine_fraction", 0.05)
        alphas = byz.get("alpha_dist", [1.0])
        for n in sorted(spec["num_agents"]):
            for penalty in sorted(spec["penalty_factor"]):
                for obs in sorted(spec["partial_obs"]):
                    for alpha in sorted(alphas):
                        for seed in seeds:
                            runs.append(
                                (_cell_config(spec, n, penalty, obs, alpha, frac), seed)
                            )
    return runs


def _existing_keys(path: Path) -> set[tuple[str, int]]:
    keys: set[tuple[str, int]] = set()
    if not path.exists():
        return keys
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                keys.add((rec["config_hash"], rec["seed"]))
            except (json.JSONDecodeError, KeyError):
                continue
    return keys


def _run_one(payload: tuple[dict, int]) -> str:
    config_dict, seed = payload
    config = ExperimentConfig.from_dict(config_dict)
    return run_episode(config, seed).to_json_line()


def run_grid(
    spec: dict | None,
    out_path,
    resume: bool = False,
    jobs: int = 1,
    log=None,
) -> int:
    """Execute the sweep, appending one JSON line per completed run.

    With ``resume`` the (config hash, seed) pairs already present in the
    output are skipped, so an interrupted sweep finishes without
    duplicates.  Returns the total number of records in the file.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    runs = build_runs(spec)
    done = _existing_keys(out_path) if resume else set()
    if not resume and out_path.exists():
        out_path.unlink()

    todo = []
    for config, seed in runs:
        key = (config_hash(config), seed)
        if key in done:
            continue
        todo.append((config.to_dict(), seed))

    if log:
        log(f"grid: {len(runs)} runs total, {len(todo)} to execute")

    with open(out_path, "a", encoding="utf-8") as fh:
        if jobs > 1 and len(todo) > 1:
            with multiprocessing.Pool(jobs) as pool:
                for line in pool.imap(_run_one, todo):
                    fh.write(line + "\n")
                    fh.flush()
        else:
            for payload in todo:
                fh.write(_run_one(payload) + "\n")
                fh.flush()

    with open(out_path, "r", encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def grid_spec_from_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    merged = dict(DEFAULT_GRID_SPEC)
    merged.update(spec)
    return merged
