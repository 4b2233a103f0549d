"""Mixture-of-horizons core: horizon sets, chunk truncation, the linear
gating head, per-step fused predictions, the gate balance penalty, and the
combined training objective.

Gate semantics: at chunk step k (1-based step k corresponds to row k-1), the
horizons that predict the step are exactly {h : h >= k}. A shared linear map
d_model -> 1 scores each stream's hidden state at that row; a masked softmax
over the valid horizons yields mixture weights alpha[k][h], exactly 0 at
invalid pairs. The fused action is the alpha-weighted sum of per-horizon
predictions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatchError
from .rng import make_rng, truncated_normal


@dataclass(frozen=True)
class HorizonSet:
    horizons: tuple[int, ...]
    stride: int
    max_horizon: int

    def __post_init__(self):
        hs = self.horizons
        if not hs:
            raise ConfigError("empty horizon set")
        if any(h < 1 for h in hs) or list(hs) != sorted(set(hs)):
            raise ConfigError(f"horizons must be strictly increasing positive ints, got {hs}")
        if hs[-1] != self.max_horizon:
            raise ConfigError(f"last horizon {hs[-1]} must equal max horizon {self.max_horizon}")

    def __len__(self):
        return len(self.horizons)

    def __iter__(self):
        return iter(self.horizons)

    def active_at(self, step: int) -> tuple[int, ...]:
        """Horizons whose chunks cover 1-based step k."""
        return tuple(h for h in self.horizons if h >= step)


def build_horizon_set(max_horizon: int, stride: int) -> HorizonSet:
    if not 1 <= stride <= max_horizon:
        raise ConfigError(f"stride {stride} outside [1, {max_horizon}]")
    if max_horizon % stride != 0:
        raise ConfigError(f"max horizon {max_horizon} not divisible by stride {stride}")
    return HorizonSet(tuple(range(stride, max_horizon + 1, stride)), stride, max_horizon)


def horizon_set_from_list(horizons) -> HorizonSet:
    hs = tuple(int(h) for h in horizons)
    stride = hs[0] if len(hs) < 2 else hs[1] - hs[0]
    return HorizonSet(hs, stride, hs[-1])


def truncate(chunk: np.ndarray, h: int) -> np.ndarray:
    """First h rows of an H-step chunk, unmodified."""
    if h > chunk.shape[-2]:
        raise ConfigError(f"horizon {h} exceeds chunk length {chunk.shape[-2]}")
    return chunk[..., :h, :]


def validity_grid(horizons: HorizonSet) -> np.ndarray:
    """(H, N) flags: entry [k-1][i] is True iff horizon h_i covers step k."""
    steps = np.arange(1, horizons.max_horizon + 1)[:, None]
    return steps <= np.asarray(horizons.horizons)[None, :]


# ---------------------------------------------------------------------------
# gate
# ---------------------------------------------------------------------------


def init_gate_params(seed: int, d_model: int, dtype=np.float32) -> dict[str, T.Tensor]:
    rng = make_rng(seed, "gate", "w")
    return {
        "gate.w": T.param(truncated_normal(rng, (d_model, 1), std=0.02, dtype=dtype)),
        "gate.b": T.param(np.zeros(1, dtype=dtype)),
    }


@dataclass
class GateWeights:
    """alpha: (B, H, N) mixture weights; logits: (B, H, N); valid: (H, N)."""

    alpha: T.Tensor
    logits: T.Tensor
    valid: np.ndarray


def gate(params, hidden: T.Tensor, horizons: HorizonSet) -> GateWeights:
    """Mixture weights from per-horizon hidden states (B, N, H, d_model)."""
    b, n, h_max = hidden.shape[0], hidden.shape[1], hidden.shape[2]
    if n != len(horizons) or h_max != horizons.max_horizon:
        raise ShapeMismatchError(
            f"hidden states (N={n}, H={h_max}) do not match horizon set "
            f"(N={len(horizons)}, H={horizons.max_horizon})"
        )
    scores = T.linear(hidden, params["gate.w"], params["gate.b"])
    logits = T.transpose(T.reshape(scores, (b, n, h_max)), (0, 2, 1))
    valid = validity_grid(horizons)
    alpha = T.masked_softmax(logits, np.broadcast_to(valid, logits.shape), axis=-1)
    return GateWeights(alpha=alpha, logits=logits, valid=valid)


def uniform_gate(batch: int, horizons: HorizonSet, dtype=np.float32) -> GateWeights:
    """Constant uniform weights over the horizons active at each step.

    Ablation fusion mode: no learned gate, no gradient, and a balance loss
    of exactly zero.
    """
    valid = validity_grid(horizons)
    alpha = valid.astype(dtype) / valid.sum(axis=1, keepdims=True)
    alpha = np.broadcast_to(alpha, (batch,) + alpha.shape)
    logits = T.constant(np.zeros_like(alpha), dtype=dtype)
    return GateWeights(alpha=T.constant(alpha.copy(), dtype=dtype),
                       logits=logits, valid=valid)


def fuse(per_horizon: T.Tensor, weights: GateWeights) -> T.Tensor:
    """alpha-weighted per-step sum of per-horizon predictions.

    per_horizon: (B, N, H, d_a), rows beyond each stream's horizon carry
    weight exactly 0 and never influence the result.
    returns (B, H, d_a)
    """
    b, n, h_max = per_horizon.shape[:3]
    if weights.alpha.shape != (b, h_max, n):
        raise ShapeMismatchError(
            f"gate weights {weights.alpha.shape} do not match predictions "
            f"{per_horizon.shape}"
        )
    w = T.reshape(T.transpose(weights.alpha, (0, 2, 1)), (b, n, h_max, 1))
    return T.tsum(T.mul(per_horizon, w), axis=1)


# ---------------------------------------------------------------------------
# balance loss
# ---------------------------------------------------------------------------


def balance_loss(alpha: T.Tensor, horizons: HorizonSet, eps: float = 1e-10) -> T.Tensor:
    """Mean squared coefficient of variation of per-interval gate usage.

    Steps are partitioned at the horizon boundaries {0, h_1, ..., h_N}. In
    interval i (steps h_{i-1}+1 .. h_i) the active horizons are those with
    h > h_{i-1}; their average usage over the batch and the interval's steps
    forms a vector whose Var/Mean^2 is the interval's squared CV (population
    variance). Intervals with a single active horizon carry no signal and
    are skipped; the loss is the mean over the remaining intervals.

    eps only guards the division; usage means are bounded below by 1/N, so
    any value well under 1/N^2 leaves the statistic unchanged in practice.
    """
    hs = horizons.horizons
    n = len(hs)
    terms = []
    lo = 0
    for i, hi in enumerate(hs):
        if n - i > 1:
            usage = T.tmean(alpha[:, lo:hi, i:], axis=(0, 1))
            mean = T.tmean(usage)
            centered = T.sub(usage, mean)
            var = T.tmean(T.mul(centered, centered))
            denom = T.add(T.mul(mean, mean), T.constant(eps, dtype=alpha.dtype))
            terms.append(T.mul(var, T.tpow(denom, -1.0)))
        lo = hi
    if not terms:
        return T.constant(np.zeros((), dtype=alpha.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / len(terms))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


@dataclass
class MoHLossBreakdown:
    l_mix: T.Tensor
    l_ind: T.Tensor
    l_bal: T.Tensor
    total: T.Tensor
    lambda_ind: float
    lambda_bal: float


def moh_objective(l_mix: T.Tensor, per_horizon_losses, l_bal: T.Tensor,
                  lambda_ind: float = 1.0, lambda_bal: float = 1e-3) -> MoHLossBreakdown:
    """total = L_mix + lambda_ind * sum(L^(h)) + lambda_bal * L_bal."""
    l_ind = per_horizon_losses[0]
    for term in per_horizon_losses[1:]:
        l_ind = T.add(l_ind, term)
    total = T.add(T.add(l_mix, T.mul(l_ind, lambda_ind)), T.mul(l_bal, lambda_bal))
    return MoHLossBreakdown(l_mix=l_mix, l_ind=l_ind, l_bal=l_bal, total=total,
                            lambda_ind=lambda_ind, lambda_bal=lambda_bal)


def write_gate_stats_csv(path, mean_alpha: np.ndarray, horizons: HorizonSet) -> None:
    """Per-(step, horizon) mean gate weight; inactive pairs written as 0."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "horizon", "mean_weight"])
        for k in range(horizons.max_horizon):
            for i, h in enumerate(horizons.horizons):
                writer.writerow([k + 1, h, f"{mean_alpha[k, i]:.8f}"])
