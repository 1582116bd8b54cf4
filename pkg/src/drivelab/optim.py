"""Rollout collection and training: PPO-clip with a centralized critic,
single-step PPO for the spline subpolicy, and the alternating bilevel loop
that trains both subpolicies.

Rollout collection is embarrassingly parallel over environment instances;
the update step is a serialized section.  All randomness flows from the
scenario's root seed via explicit stream keys, so single-worker runs are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from . import sensing, world as wrd
from .config import ACCEL_SET, HyperParams, ScenarioConfig
from .reward import compute_reward, episode_return

N_ACCEL = len(ACCEL_SET)

MODE_FIXED_TRACK = "fixed-track"
MODE_ACCEL_TRAIN = "accel-train"  # spline frozen at argmax
MODE_SPLINE_TRAIN = "spline-train"  # accel frozen at argmax


def accel_action_count(cfg: ScenarioConfig) -> int:
    """Discrete joint action count: 5 accelerations, doubled by the message
    bit when the communication channel is open."""
    return N_ACCEL * (2 if cfg.comm_enabled else 1)


def split_action(idx: int):
    """Joint action index -> (acceleration index, message bit)."""
    return idx % N_ACCEL, idx // N_ACCEL


def make_params(cfg: ScenarioConfig, rng) -> pol.PolicyParams:
    obs_dim = sensing.accel_obs_dim(cfg.lidar_rays, cfg.lidar_stack)
    sp_dim = sensing.spline_obs_dim(cfg.lidar_rays)
    params = pol.init_policy_params(obs_dim, sp_dim, rng)
    params.meta["n_actions"] = accel_action_count(cfg)
    if params.meta["n_actions"] != N_ACCEL:
        # widen the accel head for the message bit
        params.nets["accel"] = pol.init_net(
            [obs_dim, *pol.HIDDEN, params.meta["n_actions"]], rng)
    return params


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def gae(rewards, values, bootstrap_value: float, gamma: float, lam: float):
    """Generalized advantage estimates and return targets for one episode.

    advantages[t] = sum_{l>=0} (gamma*lam)^l * delta[t+l] with
    delta[t] = r[t] + gamma*V[t+1] - V[t]; targets = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = len(rewards)
    next_values = np.append(values[1:], bootstrap_value)
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        advantages[t] = acc
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# Rollout storage
# ---------------------------------------------------------------------------


@dataclass
class AgentEpisode:
    agent_id: int
    obs: list = field(default_factory=list)  # accel obs vectors
    actions: list = field(default_factory=list)  # joint action indices
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)  # totals
    breakdowns: list = field(default_factory=list)
    values: list = field(default_factory=list)  # centralized V at collection
    group_keys: list = field(default_factory=list)  # (episode, tick)
    messages: list = field(default_factory=list)
    bootstrap_value: float = 0.0
    terminal_status: str = wrd.ACTIVE


@dataclass
class SplineRecord:
    obs: np.ndarray
    bins: np.ndarray
    log_prob: float  # joint over stations
    episode_return: float


@dataclass
class RolloutBatch:
    episodes: list  # AgentEpisode
    groups: dict  # (episode, tick) -> stacked obs matrix
    spline_records: list
    stats: dict


def _policy_actions(params, cfg, obs_list, rng, deterministic):
    vecs = np.stack([o.accel_vector() for o in obs_list])
    dist = pol.Categorical(pol.net_forward(params.nets["accel"], vecs)[0])
    if deterministic:
        actions = dist.argmax()
    else:
        actions = dist.sample(rng)
    log_probs = dist.log_prob(actions)
    return np.atleast_1d(actions), np.atleast_1d(log_probs)


def _assign_spline_paths(world, params, cfg, histories, rng, sample: bool):
    """Run the spline subpolicy once per agent (single-step MDP) and install
    the decoded paths.  Returns per-agent (obs_vec, bins, log_prob)."""
    records = {}
    bins = params.meta.get("bins", 7)
    for v in sorted(world.active_vehicles(), key=lambda v: v.agent_id):
        if v.agent_id in histories:
            continue
        histories[v.agent_id] = sensing.SensorHistory(cfg.lidar_rays, cfg.lidar_stack)
        obs = sensing.build_observation(world, v.agent_id, histories[v.agent_id], rng)
        vec = obs.spline_vector()
        dist = pol.forward_spline(params, vec)
        chosen = dist.sample(rng) if sample else dist.argmax()
        logp = float(dist.log_prob(chosen).sum())
        wrd.apply_spline_action(world, v.agent_id, chosen, bins)
        # path replacement invalidates the scan; rebuild the first frame
        histories[v.agent_id] = sensing.SensorHistory(cfg.lidar_rays, cfg.lidar_stack)
        records[v.agent_id] = (vec, np.asarray(chosen), logp)
    return records


def run_episode(cfg: ScenarioConfig, params: pol.PolicyParams, mode: str,
                episode_rng, deterministic: bool = False,
                log_sink=None, collect_values: bool = True):
    """Simulate one full episode.

    Returns (agent episodes, spline records, observation groups keyed by
    (episode, tick)).  `collect_values=False` skips the critic (evaluation
    and logging rollouts have no use for value estimates).

    `log_sink`, when given, receives one record dict per (tick, agent) for
    trajectory logging.
    """
    world = wrd.spawn_world(cfg, episode_rng)
    histories: dict = {}
    spline_meta: dict = {}
    use_spline = cfg.model == "spline"
    if use_spline:
        spline_meta = _assign_spline_paths(
            world, params, cfg, histories, episode_rng,
            sample=(mode == MODE_SPLINE_TRAIN and not deterministic))
    episodes = {v.agent_id: AgentEpisode(v.agent_id) for v in world.vehicles}
    prev_accel = {v.agent_id: 0.0 for v in world.vehicles}
    groups = {}
    ep_key = id(world)  # unique per call; rewritten by the caller

    t = 0
    while t < cfg.horizon and not world.all_done():
        if cfg.continuous_spawn:
            wrd.respawn_policy(world, episode_rng)
            if use_spline:
                new_meta = _assign_spline_paths(
                    world, params, cfg, histories, episode_rng,
                    sample=(mode == MODE_SPLINE_TRAIN and not deterministic))
                spline_meta.update(new_meta)
            for v in world.vehicles:
                if v.agent_id not in episodes:
                    episodes[v.agent_id] = AgentEpisode(v.agent_id)
                    prev_accel[v.agent_id] = 0.0
        active = sorted(world.active_vehicles(), key=lambda v: v.agent_id)
        obs_list = []
        for v in active:
            if v.agent_id not in histories:
                histories[v.agent_id] = sensing.SensorHistory(
                    cfg.lidar_rays, cfg.lidar_stack)
            obs_list.append(sensing.build_observation(
                world, v.agent_id, histories[v.agent_id], episode_rng))
        if collect_values:
            vecs = np.stack([o.accel_vector() for o in obs_list])
            value = pol.forward_critic(params, vecs)
            groups[(ep_key, t)] = vecs
        else:
            value = 0.0

        accel_deterministic = deterministic or mode == MODE_SPLINE_TRAIN
        actions, log_probs = _policy_actions(
            params, cfg, obs_list, episode_rng, accel_deterministic)

        joint = {}
        for v, a in zip(active, actions):
            accel_idx, bit = split_action(int(a))
            joint[v.agent_id] = accel_idx
            v.message_bit = bit
        world, events = wrd.step(world, joint, episode_rng)

        for v, obs, a, lp in zip(active, obs_list, actions, log_probs):
            accel_idx, bit = split_action(int(a))
            reached = v.agent_id in events.reached and v.status == wrd.REACHED
            collided = v.status in (wrd.COLLIDED, wrd.OFF_ROAD)
            brk = compute_reward(
                prev_accel[v.agent_id], ACCEL_SET[accel_idx],
                reached=reached, first_collision=collided,
                goal_dist_now=v.remaining(), goal_dist_init=v.goal_dist_init,
                horizon=cfg.horizon, a_max=cfg.a_max)
            prev_accel[v.agent_id] = ACCEL_SET[accel_idx]
            ep = episodes[v.agent_id]
            ep.obs.append(obs.accel_vector())
            ep.actions.append(int(a))
            ep.log_probs.append(float(lp))
            ep.rewards.append(brk.total)
            ep.breakdowns.append(brk)
            ep.values.append(value)
            ep.group_keys.append((ep_key, t))
            ep.messages.append(bit)
            ep.terminal_status = v.status
            if log_sink is not None:
                log_sink(world, v, obs, accel_idx, bit, brk, t)
        t += 1

    # bootstrap for agents truncated by the horizon
    remaining = (sorted(world.active_vehicles(), key=lambda v: v.agent_id)
                 if collect_values else [])
    if remaining:
        obs_list = [sensing.build_observation(world, v.agent_id,
                                              histories[v.agent_id], episode_rng)
                    for v in remaining]
        vboot = pol.forward_critic(params, np.stack([o.accel_vector()
                                                     for o in obs_list]))
        for v in remaining:
            episodes[v.agent_id].bootstrap_value = vboot

    out_eps = [ep for ep in episodes.values() if ep.obs]
    spline_records = []
    for ep in out_eps:
        meta = spline_meta.get(ep.agent_id)
        if meta is not None:
            ret = episode_return(ep.breakdowns).total
            spline_records.append(SplineRecord(meta[0], meta[1], meta[2], ret))
    return out_eps, spline_records, groups


def collect_rollouts(cfg: ScenarioConfig, params: pol.PolicyParams, mode: str,
                     episodes: int, seed_key) -> RolloutBatch:
    """Collect `episodes` seeded environment episodes under the given mode."""
    all_eps, all_groups, all_spline = [], {}, []
    returns, collisions, reached = [], 0, 0
    for k in range(episodes):
        rng = np.random.default_rng([*seed_key, k])
        eps, spline_recs, groups = run_episode(cfg, params, mode, rng)
        for ep in eps:
            # re-key groups uniquely across episodes
            ep.group_keys = [(k, t) for (_, t) in ep.group_keys]
            ret = episode_return(ep.breakdowns)
            returns.append(ret.total)
            if ep.terminal_status in (wrd.COLLIDED, wrd.OFF_ROAD):
                collisions += 1
            elif ep.terminal_status == wrd.REACHED:
                reached += 1
        all_groups.update({(k, t): v for (_, t), v in groups.items()})
        all_eps.extend(eps)
        all_spline.extend(spline_recs)
    n = max(len(returns), 1)
    stats = {
        "episodes": len(returns),
        "mean_return": float(np.mean(returns)) if returns else 0.0,
        "collision_rate": collisions / n,
        "goal_rate": reached / n,
    }
    return RolloutBatch(all_eps, all_groups, all_spline, stats)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {}

    def step(self, name: str, net: pol.Net, grads):
        if name not in self.state:
            self.state[name] = {
                "t": 0,
                "m": pol.zeros_like_grads(net),
                "v": pol.zeros_like_grads(net),
            }
        st = self.state[name]
        st["t"] += 1
        t = st["t"]
        for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(
                net.weights, grads, st["m"], st["v"]):
            for param, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                mhat = m / (1 - self.beta1 ** t)
                vhat = v / (1 - self.beta2 ** t)
                param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# PPO updates
# ---------------------------------------------------------------------------


def _surrogate_coeffs(ratios, adv, clip_eps):
    """Per-sample d(surrogate)/d(log pi); zero inside the clipped region."""
    clipped = ((adv >= 0) & (ratios > 1 + clip_eps)) | \
              ((adv < 0) & (ratios < 1 - clip_eps))
    return np.where(clipped, 0.0, ratios * adv), clipped


def _entropy_grad_logits(probs, log_probs):
    entropy = -(probs * log_probs).sum(axis=-1, keepdims=True)
    return -probs * (log_probs + entropy)


def ppo_update(params: pol.PolicyParams, batch: RolloutBatch, hp: HyperParams,
               optimizer: Adam, update_rng):
    """Several epochs of minibatch ascent on the clipped surrogate with value
    and entropy terms; returns diagnostics."""
    obs = np.concatenate([np.stack(ep.obs) for ep in batch.episodes])
    actions = np.concatenate([np.asarray(ep.actions) for ep in batch.episodes])
    logp_old = np.concatenate([np.asarray(ep.log_probs) for ep in batch.episodes])
    adv_parts, ret_parts, group_keys = [], [], []
    for ep in batch.episodes:
        a, r = gae(ep.rewards, ep.values, ep.bootstrap_value, hp.gamma, hp.lam)
        adv_parts.append(a)
        ret_parts.append(r)
        group_keys.extend(ep.group_keys)
    adv = np.concatenate(adv_parts)
    ret = np.concatenate(ret_parts)
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)

    # value targets per group: mean return target of the group's members
    group_targets: dict = {}
    for key, r in zip(group_keys, ret):
        group_targets.setdefault(key, []).append(r)
    group_list = sorted(group_targets)

    n = len(obs)
    accel_net = params.nets["accel"]
    clip_fracs, kls, entropies = [], [], []
    for epoch in range(hp.epochs):
        order = update_rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            mb = order[start:start + hp.minibatch_size]
            logits, cache = pol.net_forward(accel_net, obs[mb])
            dist = pol.Categorical(logits)
            logp = dist.log_prob(actions[mb])
            if not np.all(np.isfinite(logp)):
                raise FloatingPointError("non-finite log-probabilities in update")
            ratios = np.exp(logp - logp_old[mb])
            coeff, clipped = _surrogate_coeffs(ratios, adv[mb], hp.clip_eps)
            probs = dist.probs
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(mb)), actions[mb]] = 1.0
            grad_logits = coeff[:, None] * (onehot - probs)
            grad_logits += hp.entropy_coef * _entropy_grad_logits(probs, dist.log_probs())
            # ascend: minimize the negative
            grad_logits = -grad_logits / len(mb)
            grads, _ = pol.net_backward(accel_net, cache, grad_logits)
            optimizer.step("accel", accel_net, grads)
            clip_fracs.append(float(clipped.mean()))
            kls.append(float(np.mean(logp_old[mb] - logp)))
            entropies.append(float(dist.entropy().mean()))

        # critic epoch over observation groups, batched by group size so the
        # mean pooling vectorizes (training math is pool-order independent)
        enc_net = params.nets["critic_enc"]
        head_net = params.nets["critic_head"]
        g_order = update_rng.permutation(len(group_list))
        g_bs = max(hp.minibatch_size // 8, 8)
        for start in range(0, len(g_order), g_bs):
            g_mb = [group_list[i] for i in g_order[start:start + g_bs]]
            count = sum(len(group_targets[k]) for k in g_mb)
            head_acc = pol.zeros_like_grads(head_net)
            enc_acc = pol.zeros_like_grads(enc_net)
            by_size: dict = {}
            for key in g_mb:
                by_size.setdefault(batch.groups[key].shape[0], []).append(key)
            for m, keys in sorted(by_size.items()):
                obs_g = np.concatenate([batch.groups[k] for k in keys])
                latents, enc_cache = pol.net_forward(enc_net, obs_g)
                pooled = latents.reshape(len(keys), m, -1).mean(axis=1)
                values, head_cache = pol.net_forward(head_net, pooled)
                dv = np.array([[hp.value_coef * 2.0 *
                                sum(values[gi, 0] - t for t in group_targets[k])
                                / count]
                               for gi, k in enumerate(keys)])
                head_g, grad_pooled = pol.net_backward(head_net, head_cache, dv)
                grad_latents = np.repeat(grad_pooled / m, m, axis=0)
                enc_g, _ = pol.net_backward(enc_net, enc_cache, grad_latents)
                pol.add_grads(head_acc, head_g)
                pol.add_grads(enc_acc, enc_g)
            optimizer.step("critic_head", head_net, head_acc)
            optimizer.step("critic_enc", enc_net, enc_acc)

    err_keys = group_list[:256]
    sq_errors = []
    by_size = {}
    for key in err_keys:
        by_size.setdefault(batch.groups[key].shape[0], []).append(key)
    for m, keys in sorted(by_size.items()):
        obs_g = np.concatenate([batch.groups[k] for k in keys])
        latents, _ = pol.net_forward(params.nets["critic_enc"], obs_g)
        pooled = latents.reshape(len(keys), m, -1).mean(axis=1)
        values, _ = pol.net_forward(params.nets["critic_head"], pooled)
        sq_errors.extend((values[gi, 0] - np.mean(group_targets[k])) ** 2
                         for gi, k in enumerate(keys))
    value_err = float(np.mean(sq_errors)) if sq_errors else 0.0
    return {
        "clip_fraction": float(np.mean(clip_fracs)) if clip_fracs else 0.0,
        "approx_kl": float(np.mean(kls)) if kls else 0.0,
        "entropy": float(np.mean(entropies)) if entropies else 0.0,
        "value_error": value_err,
    }


def single_step_ppo_update(params: pol.PolicyParams, records, hp: HyperParams,
                           optimizer: Adam, update_rng):
    """PPO-clip on batch-normalized episode returns for the single-step
    spline subpolicy; no critic term."""
    if len(records) < 2:
        raise ValueError("need at least 2 records to normalize returns")
    obs = np.stack([r.obs for r in records])
    bins_taken = np.stack([r.bins for r in records])  # (N, C)
    logp_old = np.array([r.log_prob for r in records])
    returns = np.array([r.episode_return for r in records])
    rbar = (returns - returns.mean()) / max(returns.std(), 1e-8)

    net = params.nets["spline"]
    stations = params.meta.get("stations", 5)
    bins = params.meta.get("bins", 7)
    n = len(records)
    entropies = []
    for epoch in range(hp.epochs):
        order = update_rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            mb = order[start:start + hp.minibatch_size]
            logits, cache = pol.net_forward(net, obs[mb])
            logits3 = logits.reshape(len(mb), stations, bins)
            dist = pol.Categorical(logits3)
            logp = dist.log_prob(bins_taken[mb]).sum(axis=-1)
            ratios = np.exp(logp - logp_old[mb])
            coeff, _ = _surrogate_coeffs(ratios, rbar[mb], hp.clip_eps)
            probs = dist.probs
            onehot = np.zeros_like(probs)
            idx = np.arange(len(mb))[:, None], np.arange(stations)[None, :], bins_taken[mb]
            onehot[idx] = 1.0
            grad = coeff[:, None, None] * (onehot - probs)
            grad += hp.entropy_coef * _entropy_grad_logits(probs, dist.log_probs())
            grad = -grad.reshape(len(mb), stations * bins) / len(mb)
            grads, _ = pol.net_backward(net, cache, grad)
            optimizer.step("spline", net, grads)
            entropies.append(float(dist.entropy().sum(axis=-1).mean()))
    return {"entropy": float(np.mean(entropies))}


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class CurveRow:
    iteration: int
    mean_return: float
    collision_rate: float
    goal_rate: float
    clip_fraction: float
    entropy: float

    HEADER = "iteration,mean_return,collision_rate,goal_rate,clip_fraction,entropy"

    def csv(self) -> str:
        return (f"{self.iteration},{self.mean_return:.10g},"
                f"{self.collision_rate:.10g},{self.goal_rate:.10g},"
                f"{self.clip_fraction:.10g},{self.entropy:.10g}")


def train_fixed_track(cfg: ScenarioConfig, params: pol.PolicyParams,
                      callback=None) -> list[CurveRow]:
    """PPO with centralized critic on the acceleration policy (fixed paths
    or a frozen spline subpolicy)."""
    hp = cfg.hyper
    optimizer = Adam(hp.learning_rate)
    mode = MODE_ACCEL_TRAIN if cfg.model == "spline" else MODE_FIXED_TRACK
    curves = []
    for i in range(hp.iterations):
        batch = collect_rollouts(cfg, params, mode, hp.episodes_per_round,
                                 (cfg.seed, 1, i))
        update_rng = np.random.default_rng([cfg.seed, 2, i])
        diag = ppo_update(params, batch, hp, optimizer, update_rng)
        row = CurveRow(i, batch.stats["mean_return"],
                       batch.stats["collision_rate"], batch.stats["goal_rate"],
                       diag["clip_fraction"], diag["entropy"])
        curves.append(row)
        if callback:
            callback(i, params, row)
    return curves


def bilevel_train(cfg: ScenarioConfig, params: pol.PolicyParams,
                  callback=None) -> list[CurveRow]:
    """Alternating optimization: K1 spline-collection rounds then one
    single-step update; K2 accel-collection rounds then one PPO update."""
    if cfg.model != "spline":
        raise ValueError("bilevel training requires the spline model")
    hp = cfg.hyper
    optimizer = Adam(hp.learning_rate)
    curves = []
    for i in range(hp.iterations):
        spline_records = []
        for k in range(hp.k1):
            batch = collect_rollouts(cfg, params, MODE_SPLINE_TRAIN,
                                     hp.episodes_per_round, (cfg.seed, 3, i, k))
            spline_records.extend(batch.spline_records)
        if len(spline_records) >= 2:
            single_step_ppo_update(params, spline_records, hp, optimizer,
                                   np.random.default_rng([cfg.seed, 4, i]))
        accel_stats, diag = None, {"clip_fraction": 0.0, "entropy": 0.0}
        for k in range(hp.k2):
            batch = collect_rollouts(cfg, params, MODE_ACCEL_TRAIN,
                                     hp.episodes_per_round, (cfg.seed, 5, i, k))
            update_rng = np.random.default_rng([cfg.seed, 6, i, k])
            diag = ppo_update(params, batch, hp, optimizer, update_rng)
            accel_stats = batch.stats
        row = CurveRow(i, accel_stats["mean_return"],
                       accel_stats["collision_rate"], accel_stats["goal_rate"],
                       diag["clip_fraction"], diag["entropy"])
        curves.append(row)
        if callback:
            callback(i, params, row)
    return curves


def evaluate(cfg: ScenarioConfig, params: pol.PolicyParams, episodes: int,
             seed_key, deterministic: bool = True) -> dict:
    """Deterministic (argmax) evaluation rollouts; returns aggregate stats."""
    mode = MODE_ACCEL_TRAIN if cfg.model == "spline" else MODE_FIXED_TRACK
    returns, collisions, reached = [], 0, 0
    for k in range(episodes):
        rng = np.random.default_rng([*seed_key, k])
        eps, _, _ = run_episode(cfg, params, mode, rng,
                                deterministic=deterministic,
                                collect_values=False)
        for ep in eps:
            returns.append(episode_return(ep.breakdowns).total)
            if ep.terminal_status in (wrd.COLLIDED, wrd.OFF_ROAD):
                collisions += 1
            elif ep.terminal_status == wrd.REACHED:
                reached += 1
    n = max(len(returns), 1)
    return {
        "episodes": len(returns),
        "mean_return": float(np.mean(returns)) if returns else 0.0,
        "collision_rate": collisions / n,
        "goal_rate": reached / n,
    }
