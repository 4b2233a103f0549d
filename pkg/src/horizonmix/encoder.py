"""Observation encoder: lifts a low-dimensional observation and a task id to
a fixed-length sequence of context tokens.

An MLP maps the observation vector to C tokens; learned positional
embeddings distinguish the token slots and a learned task embedding is added
to every token. Pure function of (parameters, observation, task id).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .rng import make_rng, truncated_normal

INIT_STD = 0.02


def init_encoder_params(seed: int, obs_dim: int, n_tasks: int, n_tokens: int,
                        d_model: int, hidden: int, dtype=np.float32) -> dict[str, T.Tensor]:
    def proj(tag, *shape):
        rng = make_rng(seed, "encoder", tag)
        return T.param(truncated_normal(rng, shape, std=INIT_STD, dtype=dtype))

    return {
        "encoder.w1": proj("w1", obs_dim, hidden),
        "encoder.b1": T.param(np.zeros(hidden, dtype=dtype)),
        "encoder.w2": proj("w2", hidden, n_tokens * d_model),
        "encoder.b2": T.param(np.zeros(n_tokens * d_model, dtype=dtype)),
        "encoder.pos": proj("pos", n_tokens, d_model),
        "encoder.task": proj("task", n_tasks, d_model),
    }


def encode(params: dict[str, T.Tensor], obs: np.ndarray, task_ids: np.ndarray,
           n_tokens: int, d_model: int) -> T.Tensor:
    """(B, obs_dim) observations + (B,) integer task ids -> (B, C, d_model)."""
    obs = np.asarray(obs)
    if obs.ndim != 2 or obs.shape[1] != params["encoder.w1"].shape[0]:
        raise ConfigError(
            f"observation shape {obs.shape} incompatible with encoder input "
            f"dim {params['encoder.w1'].shape[0]}"
        )
    task_ids = np.asarray(task_ids, dtype=np.int64)
    if task_ids.max(initial=0) >= params["encoder.task"].shape[0]:
        raise ConfigError(
            f"task id {task_ids.max()} outside embedding table of size "
            f"{params['encoder.task'].shape[0]}"
        )
    x = T.constant(obs.astype(params["encoder.w1"].dtype))
    h = T.gelu(T.linear(x, params["encoder.w1"], params["encoder.b1"]))
    tokens = T.reshape(T.linear(h, params["encoder.w2"], params["encoder.b2"]),
                       (obs.shape[0], n_tokens, d_model))
    task = T.reshape(T.take_rows(params["encoder.task"], task_ids),
                     (obs.shape[0], 1, d_model))
    return T.add(T.add(tokens, params["encoder.pos"]), task)
