"""Demonstration datasets: sliding-window chunk extraction from expert runs.

Every episode of length L yields L windows, one per start step.  Windows that
run past the episode end repeat the last action (padded targets stay
dynamically plausible: the expert has converged by then) and mark those rows
invalid so losses skip them.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .env import EnvConstants, TaskSpec
from .expert import ExpertGains, run_expert_episode

DATA_FILE = "data.npz"
MANIFEST_FILE = "manifest.json"


@dataclass
class Dataset:
    """Chunk-aligned supervision: one row per (episode, start step)."""

    observations: np.ndarray  # (M, obs_dim) float32
    task_ids: np.ndarray      # (M,) int64
    chunks: np.ndarray        # (M, H, d_a) float32
    valid: np.ndarray         # (M, H) float32, 1 = real step, 0 = padding
    manifest: dict

    def __len__(self) -> int:
        return self.observations.shape[0]


def windows_from_episode(obs: np.ndarray, actions: np.ndarray,
                         max_horizon: int):
    """Return (chunks, valid) arrays of shape (L, H, d_a) and (L, H)."""
    length, d_a = actions.shape
    chunks = np.empty((length, max_horizon, d_a), dtype=np.float32)
    valid = np.zeros((length, max_horizon), dtype=np.float32)
    for t in range(length):
        n = min(max_horizon, length - t)
        chunks[t, :n] = actions[t:t + n]
        chunks[t, n:] = actions[t + n - 1]
        valid[t, :n] = 1.0
    return chunks, valid


def generate_dataset(tasks: list[TaskSpec], episodes_per_task: int,
                     max_horizon: int, seed: int = 0,
                     gains: ExpertGains = ExpertGains(),
                     constants: EnvConstants = EnvConstants()) -> Dataset:
    """Run the expert and window every successful episode.

    Failed or empty episodes are skipped and counted in the manifest.
    Output is a pure function of the arguments, so regeneration with the
    same seed is bit-identical.
    """
    all_obs, all_ids, all_chunks, all_valid = [], [], [], []
    skipped = 0
    n_episodes = 0
    for task in tasks:
        for ep in range(episodes_per_task):
            obs, actions, success, _steps = run_expert_episode(
                task, seed, ep, gains, constants)
            if not success or len(actions) == 0:
                skipped += 1
                continue
            chunks, valid = windows_from_episode(obs, actions, max_horizon)
            all_obs.append(obs.astype(np.float32))
            all_ids.append(np.full(len(actions), task.task_id,
                                   dtype=np.int64))
            all_chunks.append(chunks)
            all_valid.append(valid)
            n_episodes += 1
    if not all_obs:
        raise ValueError("no successful expert episodes; check task budgets")
    families = sorted({t.family for t in tasks})
    manifest = {
        "seed": seed,
        "episodes_per_task": episodes_per_task,
        "max_horizon": max_horizon,
        "n_tasks": len(tasks),
        "n_episodes": n_episodes,
        "skipped_episodes": skipped,
        "n_windows": int(sum(len(o) for o in all_obs)),
        "families": families,
        "env_constants": asdict(constants),
        "expert_gains": asdict(gains),
    }
    return Dataset(observations=np.concatenate(all_obs),
                   task_ids=np.concatenate(all_ids),
                   chunks=np.concatenate(all_chunks),
                   valid=np.concatenate(all_valid),
                   manifest=manifest)


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``data.npz`` plus ``manifest.json`` under directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    np.savez(root / DATA_FILE,
             observations=dataset.observations,
             task_ids=dataset.task_ids,
             chunks=dataset.chunks,
             valid=dataset.valid)
    with open(root / MANIFEST_FILE, "w") as fh:
        json.dump(dataset.manifest, fh, indent=2, sort_keys=True)


def load_dataset(path) -> Dataset:
    root = Path(path)
    with np.load(root / DATA_FILE) as arrays:
        data = {name: arrays[name] for name in arrays.files}
    with open(root / MANIFEST_FILE) as fh:
        manifest = json.load(fh)
    return Dataset(observations=data["observations"],
                   task_ids=data["task_ids"],
                   chunks=data["chunks"],
                   valid=data["valid"],
                   manifest=manifest)
