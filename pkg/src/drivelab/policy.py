"""Policy and value networks: small fixed-architecture feed-forward nets
(affine layers + tanh) with hand-derived analytic gradients.

Three networks share one parameter store:
  accel   -- multinomial over the 5 discrete acceleration values
  spline  -- per-station multinomial over lateral deviation bins
  critic  -- per-agent encoder, mean-pooled, scalar value head

Parameters are read-shared by rollout workers; updates happen in a single
serialized section per iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import (ACCEL_SET, SPLINE_BINS, SPLINE_STATIONS)

CHECKPOINT_FORMAT = "drivelab-checkpoint"
CHECKPOINT_VERSION = 1

HIDDEN = (64, 64)
CRITIC_LATENT = 64


# ---------------------------------------------------------------------------
# MLP core
# ---------------------------------------------------------------------------


@dataclass
class Net:
    """Affine layers with tanh on all but the last."""

    weights: list  # list of (W (out, in), b (out,)) float64 pairs

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0][0].shape[1]] + [w.shape[0] for w, _ in self.weights]

    def copy(self) -> "Net":
        return Net([(w.copy(), b.copy()) for w, b in self.weights])


def init_net(sizes, rng) -> Net:
    """Glorot-uniform weights, zero biases."""
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append((w, np.zeros(fan_out)))
    return Net(weights)


def net_forward(net: Net, x: np.ndarray):
    """Forward pass for a batch (B, in) -> ((B, out), cache)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(net.weights):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        cache.append(h)
    return h, cache


def net_backward(net: Net, cache, grad_out: np.ndarray):
    """Backprop a batch of upstream gradients; returns (grads, grad_input).

    grads matches net.weights in shape; gradients are summed over the batch.
    """
    grad = np.atleast_2d(grad_out)
    grads = [None] * len(net.weights)
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        w, _ = net.weights[i]
        h_in = cache[i]
        if i != last:
            grad = grad * (1.0 - cache[i + 1] ** 2)  # tanh'
        grads[i] = (grad.T @ h_in, grad.sum(axis=0))
        grad = grad @ w
    return grads, grad


def zeros_like_grads(net: Net):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.weights]


def add_grads(acc, grads, scale=1.0):
    for (aw, ab), (gw, gb) in zip(acc, grads):
        aw += scale * gw
        ab += scale * gb
    return acc


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass
class Categorical:
    logits: np.ndarray  # (..., K)

    @property
    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        lp = self.log_probs()
        actions = np.asarray(actions, dtype=int)
        return np.take_along_axis(lp, actions[..., None], axis=-1)[..., 0]

    def entropy(self) -> np.ndarray:
        lp = self.log_probs()
        return -(np.exp(lp) * lp).sum(axis=-1)

    def sample(self, rng) -> np.ndarray:
        p = self.probs
        flat = p.reshape(-1, p.shape[-1])
        cum = np.cumsum(flat, axis=-1)
        u = rng.random(flat.shape[0])
        idx = (u[:, None] > cum).sum(axis=-1)
        return idx.reshape(p.shape[:-1])

    def argmax(self) -> np.ndarray:
        return self.logits.argmax(axis=-1)


# ---------------------------------------------------------------------------
# Parameter store
# ---------------------------------------------------------------------------

NET_ORDER = ("accel", "spline", "critic_enc", "critic_head")


@dataclass
class PolicyParams:
    nets: dict  # name -> Net
    version: int = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict)

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.nets.items()},
                            self.version, dict(self.meta))


def init_policy_params(accel_obs_dim: int, spline_obs_dim: int, rng,
                       stations: int = SPLINE_STATIONS,
                       bins: int = SPLINE_BINS) -> PolicyParams:
    nets = {
        "accel": init_net([accel_obs_dim, *HIDDEN, len(ACCEL_SET)], rng),
        "spline": init_net([spline_obs_dim, *HIDDEN, stations * bins], rng),
        "critic_enc": init_net([accel_obs_dim, *HIDDEN, CRITIC_LATENT], rng),
        "critic_head": init_net([CRITIC_LATENT, *HIDDEN, 1], rng),
    }
    meta = {"accel_obs_dim": accel_obs_dim, "spline_obs_dim": spline_obs_dim,
            "stations": stations, "bins": bins}
    return PolicyParams(nets, meta=meta)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def forward_accel(params: PolicyParams, obs_vec: np.ndarray) -> Categorical:
    """Action distribution over the discrete acceleration set."""
    logits, _ = net_forward(params.nets["accel"], obs_vec)
    return Categorical(logits[0] if np.ndim(obs_vec) == 1 else logits)


def forward_spline(params: PolicyParams, spline_obs: np.ndarray) -> Categorical:
    """Per-station distributions over lateral deviation bins: (C, D) logits."""
    stations = params.meta.get("stations", SPLINE_STATIONS)
    bins = params.meta.get("bins", SPLINE_BINS)
    logits, _ = net_forward(params.nets["spline"], spline_obs)
    return Categorical(logits.reshape(-1, stations, bins).squeeze(0)
                       if np.ndim(spline_obs) == 1
                       else logits.reshape(-1, stations, bins))


def pooled_latent(params: PolicyParams, observations: np.ndarray):
    """Mean latent over agents, bitwise permutation invariant.

    Each observation is encoded separately (batched BLAS kernels are not
    row-order reproducible) and the rows are summed in lexicographic order.
    """
    observations = np.atleast_2d(observations)
    rows, caches = [], []
    for row in observations:
        latent, cache = net_forward(params.nets["critic_enc"], row)
        rows.append(latent[0])
        caches.append(cache)
    latents = np.stack(rows)
    order = np.lexsort(latents.T[::-1])
    pooled = latents[order].sum(axis=0) / len(latents)
    # merge per-row caches into batch-shaped activations for backprop
    merged = [np.concatenate([c[i] for c in caches], axis=0)
              for i in range(len(caches[0]))]
    return pooled, merged


def forward_critic(params: PolicyParams, observations: np.ndarray) -> float:
    """Centralized value: mean-pooled per-agent latents -> scalar."""
    observations = np.atleast_2d(observations)
    if observations.shape[0] < 1:
        raise ValueError("critic needs at least one observation")
    pooled, _ = pooled_latent(params, observations)
    value, _ = net_forward(params.nets["critic_head"], pooled)
    return float(value[0, 0])


def critic_forward_backward(params: PolicyParams, observations: np.ndarray,
                            grad_value: float):
    """Value for one observation group plus parameter gradients scaled by
    `grad_value` (d loss / d value)."""
    observations = np.atleast_2d(observations)
    m = observations.shape[0]
    pooled, enc_cache = pooled_latent(params, observations)
    value, head_cache = net_forward(params.nets["critic_head"], pooled)
    head_grads, grad_pooled = net_backward(
        params.nets["critic_head"], head_cache,
        np.array([[grad_value]]))
    # each agent's latent receives 1/m of the pooled gradient
    grad_latents = np.repeat(grad_pooled / m, m, axis=0)
    enc_grads, _ = net_backward(params.nets["critic_enc"], enc_cache, grad_latents)
    return float(value[0, 0]), head_grads, enc_grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: PolicyParams, path):
    """Versioned JSON header line + flat little-endian float64 arrays."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": params.version,
        "meta": params.meta,
        "nets": {name: [[list(w.shape), list(b.shape)]
                        for w, b in params.nets[name].weights]
                 for name in NET_ORDER},
    }
    blob = bytearray()
    for name in NET_ORDER:
        for w, b in params.nets[name].weights:
            blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(bytes(blob))


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        blob = f.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint file: {path}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    offset = 0
    nets = {}
    for name in NET_ORDER:
        weights = []
        for w_shape, b_shape in header["nets"][name]:
            w_n = int(np.prod(w_shape))
            w = np.frombuffer(blob, dtype="<f8", count=w_n,
                              offset=offset).reshape(w_shape).copy()
            offset += w_n * 8
            b_n = int(np.prod(b_shape))
            b = np.frombuffer(blob, dtype="<f8", count=b_n,
                              offset=offset).reshape(b_shape).copy()
            offset += b_n * 8
            weights.append((w, b))
        nets[name] = Net(weights)
    return PolicyParams(nets, header["version"], header.get("meta", {}))
