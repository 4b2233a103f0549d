"""Interchangeable policy objectives over the shared action transformer:
flow matching (velocity field + Euler integration), one-step l1 regression,
and one-step binned classification.

Every head produces per-horizon predictions, gate weights, a fused
prediction, and the loss triple (L_mix, per-horizon losses) that the MoH
objective combines. Loss reductions follow the head conventions: flow losses
are means over valid positions, one-step losses are sums over valid steps
and action dimensions; all are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import transformer as tr
from .errors import ConfigError
from .mixture import GateWeights, HorizonSet, fuse, gate, uniform_gate
from .rng import make_rng, truncated_normal

HEAD_TYPES = ("flow", "regression", "classification")

PROB_FLOOR = 1e-30  # keeps log() finite if a fused bin probability underflows


def init_head_params(seed: int, head: str, d_model: int, d_a: int, bins: int,
                     dtype=np.float32) -> dict[str, T.Tensor]:
    if head not in HEAD_TYPES:
        raise ConfigError(f"unknown head type {head!r}, expected one of {HEAD_TYPES}")
    out_dim = d_a * bins if head == "classification" else d_a
    rng = make_rng(seed, "head", head)
    return {
        "head.w": T.param(truncated_normal(rng, (d_model, out_dim), std=0.02, dtype=dtype)),
        "head.b": T.param(np.zeros(out_dim, dtype=dtype)),
    }


# ---------------------------------------------------------------------------
# bin grid (classification)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinGrid:
    """Equal-width quantization grid per action dimension; bins are 1-based."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    bins: int

    def arrays(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    @property
    def width(self) -> np.ndarray:
        lo, hi = self.arrays()
        return (hi - lo) / self.bins


def fit_bin_grid(actions: np.ndarray, bins: int = 64) -> BinGrid:
    """Per-dimension range from the 1st/99th percentiles, widened by 5%."""
    flat = actions.reshape(-1, actions.shape[-1]).astype(np.float64)
    lo = np.percentile(flat, 1.0, axis=0)
    hi = np.percentile(flat, 99.0, axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo = lo - 0.025 * span
    hi = hi + 0.025 * span
    return BinGrid(lo=tuple(lo.tolist()), hi=tuple(hi.tolist()), bins=bins)


def quantize(values: np.ndarray, grid: BinGrid) -> np.ndarray:
    """Clamp to the grid range, then floor to a 1-based bin index.

    Interior boundaries go to the higher bin; the range maximum goes to the
    last bin."""
    lo, hi = grid.arrays()
    x = np.clip(values, lo, hi)
    idx = np.floor((x - lo) / grid.width).astype(np.int64) + 1
    return np.minimum(idx, grid.bins)


def dequantize(indices: np.ndarray, grid: BinGrid) -> np.ndarray:
    lo, _ = grid.arrays()
    return lo + (np.asarray(indices) - 0.5) * grid.width


# ---------------------------------------------------------------------------
# flow matching
# ---------------------------------------------------------------------------


def flow_target(eps: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Velocity of the linear noise-to-data path; constant in flow time."""
    return target - eps


def _masked_mse(err: T.Tensor, weight: np.ndarray) -> T.Tensor:
    """Mean of err^2 over entries where weight is 1."""
    count = float(weight.sum()) * err.shape[-1]
    total = T.tsum(T.mul(T.mul(err, err), T.constant(weight[..., None], dtype=err.dtype)))
    return T.mul(total, 1.0 / count)


def _gate_weights(params, hidden: T.Tensor, horizons: HorizonSet, fusion: str):
    if fusion == "uniform":
        return uniform_gate(hidden.shape[0], horizons, dtype=hidden.data.dtype)
    return gate(params, hidden, horizons)


def flow_loss(params, cfg: tr.TransformerConfig, horizons: HorizonSet, ctx: T.Tensor,
              target: np.ndarray, valid_rows: np.ndarray, rng,
              fusion: str = "gated"):
    """Velocity-matching losses for one batch.

    target:     (B, H, d_a) normalized action chunks
    valid_rows: (B, H) flags; padded chunk rows carry no loss anywhere
    returns (l_mix, per-horizon losses, gate weights)
    """
    b, h_max, d_a = target.shape
    n = len(horizons)
    dtype = ctx.data.dtype
    tau = rng.random(b)
    eps = rng.standard_normal(target.shape)
    x = (1.0 - tau)[:, None, None] * eps + tau[:, None, None] * target
    u = flow_target(eps, target)

    inputs = T.constant(np.broadcast_to(x[:, None], (b, n, h_max, d_a)).astype(dtype, copy=True))
    hidden, stream_valid = tr.forward_multi_horizon(params, cfg, ctx, inputs, tau,
                                                    horizons.horizons)
    v = T.linear(hidden, params["head.w"], params["head.b"])
    weights = _gate_weights(params, hidden, horizons, fusion)
    fused_v = fuse(v, weights)

    u_c = T.constant(u.astype(dtype))
    l_mix = _masked_mse(T.sub(fused_v, u_c), valid_rows.astype(dtype))
    per_h = []
    err = T.sub(v, T.reshape(u_c, (b, 1, h_max, d_a)))
    for i in range(n):
        w = (stream_valid[i][None] & valid_rows).astype(dtype)
        per_h.append(_masked_mse(err[:, i], w))
    return l_mix, per_h, weights


def flow_infer(params, cfg: tr.TransformerConfig, horizons: HorizonSet, ctx: T.Tensor,
               steps: int, rng, d_a: int, need_per_horizon: bool = True,
               fusion: str = "gated"):
    """Euler integration of the learned field from noise to an action chunk.

    Maintains the fused trajectory (driven by the gate-fused velocity; every
    stream is evaluated on the current fused chunk) and, when requested, each
    horizon's own trajectory driven by its own velocity, both from one shared
    noise draw. Gate weights are averaged over the integration steps.

    returns (fused (B,H,d_a), per_horizon (B,N,H,d_a) or None, alpha (B,H,N))
    """
    if steps < 1:
        raise ConfigError(f"ODE steps must be >= 1, got {steps}")
    b = ctx.shape[0]
    n = len(horizons)
    h_max = horizons.max_horizon
    dtype = ctx.data.dtype
    eps = rng.standard_normal((b, h_max, d_a))
    fused_x = eps.copy()
    own_x = np.repeat(eps[:, None], n, axis=1) if need_per_horizon else None
    dtau = 1.0 / steps
    alpha_acc = np.zeros((b, h_max, n))
    stream_horizons = list(horizons.horizons) * (2 if need_per_horizon else 1)
    for s in range(steps):
        tau = np.full(b, s * dtau)
        fused_rep = np.broadcast_to(fused_x[:, None], (b, n, h_max, d_a))
        stacked = np.concatenate([fused_rep, own_x], axis=1) if need_per_horizon else fused_rep
        hidden, _ = tr.forward_multi_horizon(params, cfg, ctx,
                                             T.constant(stacked.astype(dtype, copy=True)),
                                             tau, stream_horizons)
        v = T.linear(hidden, params["head.w"], params["head.b"]).data.astype(np.float64)
        weights = _gate_weights(params, hidden[:, :n], horizons, fusion)
        fused_v = fuse(T.constant(v[:, :n].astype(dtype)), weights).data.astype(np.float64)
        alpha_acc += weights.alpha.data.astype(np.float64)
        fused_x = fused_x + dtau * fused_v
        if need_per_horizon:
            own_x = own_x + dtau * v[:, n:]
    return fused_x, own_x, alpha_acc / steps


# ---------------------------------------------------------------------------
# one-step regression
# ---------------------------------------------------------------------------


def _masked_l1_sum(err: T.Tensor, weight: np.ndarray, batch: int) -> T.Tensor:
    total = T.tsum(T.mul(T.tabs(err), T.constant(weight[..., None], dtype=err.dtype)))
    return T.mul(total, 1.0 / batch)


def regression_loss(params, cfg, horizons: HorizonSet, ctx: T.Tensor,
                    target: np.ndarray, valid_rows: np.ndarray,
                    fusion: str = "gated"):
    """l1 losses summed over valid steps and dims, averaged over the batch."""
    b, h_max, d_a = target.shape
    dtype = ctx.data.dtype
    hidden, stream_valid = tr.forward_regression_queries(params, cfg, ctx, horizons.horizons)
    preds = T.linear(hidden, params["head.w"], params["head.b"])
    weights = _gate_weights(params, hidden, horizons, fusion)
    fused = fuse(preds, weights)

    tgt = T.constant(target.astype(dtype))
    l_mix = _masked_l1_sum(T.sub(fused, tgt), valid_rows.astype(dtype), b)
    per_h = []
    err = T.sub(preds, T.reshape(tgt, (b, 1, h_max, d_a)))
    for i in range(len(horizons)):
        w = (stream_valid[i][None] & valid_rows).astype(dtype)
        per_h.append(_masked_l1_sum(err[:, i], w, b))
    return l_mix, per_h, weights


def regression_infer(params, cfg, horizons: HorizonSet, ctx: T.Tensor, d_a: int,
                    fusion: str = "gated"):
    hidden, _ = tr.forward_regression_queries(params, cfg, ctx, horizons.horizons)
    preds = T.linear(hidden, params["head.w"], params["head.b"])
    weights = _gate_weights(params, hidden, horizons, fusion)
    fused = fuse(preds, weights)
    return (fused.data.astype(np.float64), preds.data.astype(np.float64),
            weights.alpha.data.astype(np.float64))


# ---------------------------------------------------------------------------
# one-step classification
# ---------------------------------------------------------------------------


def _log_softmax(logits: T.Tensor) -> T.Tensor:
    # the subtracted max is treated as constant; its gradient cancels exactly
    m = T.constant(logits.data.max(axis=-1, keepdims=True))
    shifted = T.sub(logits, m)
    return T.sub(shifted, T.tlog(T.tsum(T.texp(shifted), axis=-1, keepdims=True)))


def _class_logits(params, hidden: T.Tensor, d_a: int, bins: int) -> T.Tensor:
    raw = T.linear(hidden, params["head.w"], params["head.b"])
    return T.reshape(raw, raw.shape[:-1] + (d_a, bins))


def classification_loss(params, cfg, horizons: HorizonSet, ctx: T.Tensor,
                        target: np.ndarray, valid_rows: np.ndarray, grid: BinGrid,
                        fusion: str = "gated"):
    """Bin NLL summed over valid steps and dims, averaged over the batch.

    L_mix scores the alpha-fused, renormalized bin distributions.
    """
    b, h_max, d_a = target.shape
    n = len(horizons)
    dtype = ctx.data.dtype
    hidden, stream_valid = tr.forward_regression_queries(params, cfg, ctx, horizons.horizons)
    logits = _class_logits(params, hidden, d_a, grid.bins)
    logp = _log_softmax(logits)
    weights = _gate_weights(params, hidden, horizons, fusion)

    onehot = np.zeros((b, h_max, d_a, grid.bins), dtype=dtype)
    bins0 = quantize(target, grid) - 1
    bidx, kidx, didx = np.meshgrid(np.arange(b), np.arange(h_max), np.arange(d_a),
                                   indexing="ij")
    onehot[bidx, kidx, didx, bins0] = 1.0

    per_h = []
    for i in range(n):
        w = (stream_valid[i][None] & valid_rows).astype(dtype)
        step_ll = T.tsum(T.mul(logp[:, i], T.constant(onehot)), axis=(-2, -1))
        per_h.append(T.mul(T.tsum(T.mul(step_ll, T.constant(w))), -1.0 / b))

    probs = T.texp(logp)
    flat = T.reshape(probs, (b, n, h_max, d_a * grid.bins))
    fused = T.reshape(fuse(flat, weights), (b, h_max, d_a, grid.bins))
    norm = T.tpow(T.tsum(fused, axis=-1, keepdims=True), -1.0)
    fused_logp = T.tlog(T.add(T.mul(fused, norm), T.constant(PROB_FLOOR, dtype=dtype)))
    picked = T.tsum(T.mul(fused_logp, T.constant(onehot)), axis=(-2, -1))
    l_mix = T.mul(T.tsum(T.mul(picked, T.constant(valid_rows.astype(dtype)))), -1.0 / b)
    return l_mix, per_h, weights


def classification_infer(params, cfg, horizons: HorizonSet, ctx: T.Tensor, d_a: int,
                         grid: BinGrid, fusion: str = "gated"):
    """Per-horizon and fused actions as centers of the most likely bins."""
    b = ctx.shape[0]
    n = len(horizons)
    h_max = horizons.max_horizon
    hidden, _ = tr.forward_regression_queries(params, cfg, ctx, horizons.horizons)
    logits = _class_logits(params, hidden, d_a, grid.bins)
    logp = _log_softmax(logits)
    weights = _gate_weights(params, hidden, horizons, fusion)
    probs = T.texp(logp)
    flat = T.reshape(probs, (b, n, h_max, d_a * grid.bins))
    fused = fuse(flat, weights).data.reshape(b, h_max, d_a, grid.bins)
    fused /= fused.sum(axis=-1, keepdims=True)
    fused_actions = dequantize(fused.argmax(axis=-1) + 1, grid)
    per_actions = dequantize(probs.data.argmax(axis=-1) + 1, grid)
    return (fused_actions.astype(np.float64), per_actions.astype(np.float64),
            weights.alpha.data.astype(np.float64))
