"""One policy object over the three heads: owns parameters, normalization
statistics, the horizon set, and the train/infer entry points shared by the
training loop, the evaluator, and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import heads as hd
from . import tensor as T
from . import transformer as tr
from .encoder import encode, init_encoder_params
from .errors import ConfigError
from .mixture import (HorizonSet, balance_loss, build_horizon_set, init_gate_params,
                      moh_objective)


@dataclass(frozen=True)
class ModelConfig:
    head: str = "flow"
    layers: int = 4
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    context_tokens: int = 8
    encoder_hidden: int = 128
    max_horizon: int = 30
    stride: int = 3
    obs_dim: int = 7
    n_tasks: int = 16
    d_a: int = 2
    bins: int = 64
    ode_steps: int = 10
    fusion: str = "gated"

    def __post_init__(self):
        if self.head not in hd.HEAD_TYPES:
            raise ConfigError(f"unknown head type {self.head!r}")
        if self.fusion not in ("gated", "uniform"):
            raise ConfigError(f"unknown fusion mode {self.fusion!r}")

    def transformer(self) -> tr.TransformerConfig:
        return tr.TransformerConfig(layers=self.layers, heads=self.heads,
                                    d_model=self.d_model, d_ff=self.d_ff,
                                    max_horizon=self.max_horizon)

    def horizon_set(self) -> HorizonSet:
        return build_horizon_set(self.max_horizon, self.stride)


@dataclass
class Normalization:
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    @classmethod
    def identity(cls, obs_dim: int, d_a: int) -> "Normalization":
        return cls(np.zeros(obs_dim), np.ones(obs_dim), np.zeros(d_a), np.ones(d_a))

    @classmethod
    def from_data(cls, observations: np.ndarray, actions: np.ndarray) -> "Normalization":
        flat = actions.reshape(-1, actions.shape[-1])
        return cls(
            obs_mean=observations.mean(axis=0).astype(np.float64),
            obs_std=np.maximum(observations.std(axis=0), 1e-6).astype(np.float64),
            act_mean=flat.mean(axis=0).astype(np.float64),
            act_std=np.maximum(flat.std(axis=0), 1e-6).astype(np.float64),
        )

    def normalize_obs(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.obs_mean) / self.obs_std

    def normalize_actions(self, actions: np.ndarray) -> np.ndarray:
        return (actions - self.act_mean) / self.act_std

    def denormalize_actions(self, actions: np.ndarray) -> np.ndarray:
        return actions * self.act_std + self.act_mean


class Policy:
    def __init__(self, cfg: ModelConfig, params: dict[str, T.Tensor],
                 norm: Normalization, grid: hd.BinGrid | None = None):
        if cfg.head == "classification" and grid is None:
            raise ConfigError("classification head requires a fitted bin grid")
        self.cfg = cfg
        self.params = params
        self.norm = norm
        self.grid = grid
        self.horizons = cfg.horizon_set()
        self._tcfg = cfg.transformer()

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int, dtype=np.float32,
             norm: Normalization | None = None, grid: hd.BinGrid | None = None) -> "Policy":
        params: dict[str, T.Tensor] = {}
        params.update(init_encoder_params(seed, cfg.obs_dim, cfg.n_tasks,
                                          cfg.context_tokens, cfg.d_model,
                                          cfg.encoder_hidden, dtype=dtype))
        params.update(tr.init_transformer_params(seed, cfg.transformer(), cfg.d_a,
                                                 dtype=dtype))
        params.update(init_gate_params(seed, cfg.d_model, dtype=dtype))
        params.update(hd.init_head_params(seed, cfg.head, cfg.d_model, cfg.d_a,
                                          cfg.bins, dtype=dtype))
        if cfg.head == "classification" and grid is None:
            grid = hd.BinGrid(lo=(-1.0,) * cfg.d_a, hi=(1.0,) * cfg.d_a, bins=cfg.bins)
        return cls(cfg, params, norm or Normalization.identity(cfg.obs_dim, cfg.d_a), grid)

    @property
    def dtype(self):
        return self.params["gate.w"].dtype

    def detached(self) -> "Policy":
        """Same weights without gradient tracking; forwards build no tape."""
        frozen = {k: T.Tensor(v.data) for k, v in self.params.items()}
        clone = Policy.__new__(Policy)
        clone.cfg, clone.params, clone.norm = self.cfg, frozen, self.norm
        clone.grid, clone.horizons, clone._tcfg = self.grid, self.horizons, self._tcfg
        return clone

    def encode_context(self, obs: np.ndarray, task_ids: np.ndarray) -> T.Tensor:
        normed = self.norm.normalize_obs(np.asarray(obs, dtype=np.float64))
        return encode(self.params, normed.astype(self.dtype), task_ids,
                      self.cfg.context_tokens, self.cfg.d_model)

    # -- training ----------------------------------------------------------
    def loss(self, obs, task_ids, chunks, valid_rows, rng,
             lambda_ind: float = 1.0, lambda_bal: float = 1e-3):
        """MoH loss breakdown for one batch of env-scale chunks."""
        ctx = self.encode_context(obs, task_ids)
        target = self.norm.normalize_actions(np.asarray(chunks, dtype=np.float64))
        valid_rows = np.asarray(valid_rows, dtype=bool)
        fusion = self.cfg.fusion
        if self.cfg.head == "flow":
            l_mix, per_h, weights = hd.flow_loss(self.params, self._tcfg, self.horizons,
                                                 ctx, target, valid_rows, rng,
                                                 fusion=fusion)
        elif self.cfg.head == "regression":
            l_mix, per_h, weights = hd.regression_loss(self.params, self._tcfg,
                                                       self.horizons, ctx, target,
                                                       valid_rows, fusion=fusion)
        else:
            l_mix, per_h, weights = hd.classification_loss(self.params, self._tcfg,
                                                           self.horizons, ctx, target,
                                                           valid_rows, self.grid,
                                                           fusion=fusion)
        l_bal = balance_loss(weights.alpha, self.horizons)
        return moh_objective(l_mix, per_h, l_bal, lambda_ind, lambda_bal), weights

    # -- inference ---------------------------------------------------------
    def predict(self, obs, task_ids, rng=None, need_per_horizon: bool = True,
                ode_steps: int | None = None):
        """Env-scale fused chunk, per-horizon chunks, and gate weights.

        returns (fused (B,H,d_a), per_horizon (B,N,H,d_a) or None, alpha (B,H,N))
        """
        ctx = self.encode_context(obs, task_ids)
        if self.cfg.head == "flow":
            if rng is None:
                raise ConfigError("flow inference requires an rng for the noise draw")
            steps = self.cfg.ode_steps if ode_steps is None else ode_steps
            fused, per_h, alpha = hd.flow_infer(self.params, self._tcfg, self.horizons,
                                                ctx, steps, rng, self.cfg.d_a,
                                                need_per_horizon=need_per_horizon,
                                                fusion=self.cfg.fusion)
        elif self.cfg.head == "regression":
            fused, per_h, alpha = hd.regression_infer(self.params, self._tcfg,
                                                      self.horizons, ctx, self.cfg.d_a,
                                                      fusion=self.cfg.fusion)
        else:
            fused, per_h, alpha = hd.classification_infer(self.params, self._tcfg,
                                                          self.horizons, ctx,
                                                          self.cfg.d_a, self.grid,
                                                          fusion=self.cfg.fusion)
        fused = self.norm.denormalize_actions(fused)
        if per_h is not None:
            per_h = self.norm.denormalize_actions(per_h)
        return fused, per_h, alpha
