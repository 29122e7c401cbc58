"""Policy heads, episode driver, phase-based rewards, PPO, train/evaluate.

An episode walks a solution through T best-improvement steps.  The policy
picks which operator to run each step.  A counter tracks consecutive steps
without improving the incumbent; when it reaches the configured limit the
current reward phase closes, a random shake perturbs the solution, and the
next phase starts from the shaken solution.  Every transition in a phase
receives the same reward: the cost improvement achieved within that phase
from its starting solution.  Updates are on-policy PPO over the episode's
buffer, re-encoding states per minibatch.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import PPOConfig, RunConfig, SearchConfig, metadata_block
from .cvrp import Instance, Solution, generate_instance, initial_solution, mean_cost, optimality_gap_pct
from .encoder import ModelConfig, ModelParams, encode, normalized_adjacency
from .errors import OpselectError
from .neighborhood import OperatorId, action_set_from_names, local_search, shake
from .rng import derive_seed, make_rng
from .state import (
    OptFeatures,
    SearchState,
    build_distance_graph,
    build_node_features,
    build_solution_graph,
    initial_opt_features,
    update_opt_features,
)

IMPROVEMENT_EPS = 1e-9


# ---------------------------------------------------------------------------
# Policy heads
# ---------------------------------------------------------------------------


@dataclass
class PolicyOutput:
    logits: np.ndarray
    probs: np.ndarray
    value: float


def policy_heads(emb: Tensor, params: ModelParams) -> tuple[Tensor, Tensor | None]:
    """Two FC layers to logits, plus a value head off the shared hidden layer."""
    h = ag.relu(ag.add(ag.matmul(emb, params.get("policy.w1")), params.get("policy.b1")))
    logits = ag.add(ag.matmul(h, params.get("policy.w2")), params.get("policy.b2"))
    value = None
    if params.config.use_value_head:
        value = ag.add(ag.matmul(h, params.get("value.w")), params.get("value.b"))
    return logits, value


def _stable_probs(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64).reshape(-1)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def policy_output(
    state: SearchState, params: ModelParams, dis_norm: np.ndarray | None = None
) -> PolicyOutput:
    emb = encode(state, params, dis_norm=dis_norm)
    logits, value = policy_heads(emb, params)
    return PolicyOutput(
        logits=logits.data.reshape(-1).copy(),
        probs=_stable_probs(logits.data),
        value=0.0 if value is None else value.item(),
    )


def sample_action(
    out: PolicyOutput, rng: np.random.Generator, mode: str = "sample"
) -> tuple[int, float]:
    """Pick an action index and its log probability."""
    if mode == "greedy":
        action = int(np.argmax(out.probs))
    elif mode == "sample":
        action = int(rng.choice(len(out.probs), p=out.probs))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return action, float(np.log(out.probs[action]))


# ---------------------------------------------------------------------------
# Experience buffer
# ---------------------------------------------------------------------------


@dataclass
class Transition:
    """Compact state snapshot plus what the policy did and earned there."""

    routes: tuple[tuple[int, ...], ...]
    opt: OptFeatures
    action: int
    log_prob: float
    value: float
    phase_id: int
    reward: float | None = None


@dataclass
class EpisodeBuffer:
    inst: Instance
    initial_cost: float
    transitions: list[Transition] = field(default_factory=list)
    _cursor: int = 0

    def append(self, t: Transition) -> None:
        self.transitions.append(t)

    def close_phase(self, phase_id: int, reward: float) -> None:
        """Stamp the phase reward on every transition of the phase."""
        matched = 0
        while (
            self._cursor < len(self.transitions)
            and self.transitions[self._cursor].phase_id == phase_id
        ):
            self.transitions[self._cursor].reward = reward
            self._cursor += 1
            matched += 1
        if matched == 0:
            raise OpselectError(f"no open transitions for phase {phase_id}")

    def state_for(self, index: int) -> SearchState:
        t = self.transitions[index]
        view = Solution(routes=[list(r) for r in t.routes], cost=0.0, route_loads=[])
        return SearchState(
            dis=build_distance_graph(self.inst),
            sol=build_solution_graph(self.inst, view),
            x=build_node_features(self.inst, view),
            opt=t.opt,
        )

    def clear(self) -> None:
        self.transitions.clear()
        self._cursor = 0


def assign_phase_rewards(
    buffer: EpisodeBuffer, phase_id: int, f_phase_start: float, f_phase_best: float
) -> float:
    """Close a phase with reward = start cost minus best cost in the phase."""
    reward = f_phase_start - f_phase_best
    if reward < -IMPROVEMENT_EPS:
        raise OpselectError(
            f"negative phase reward {reward} (start {f_phase_start}, best {f_phase_best})"
        )
    buffer.close_phase(phase_id, max(0.0, reward))
    return max(0.0, reward)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class GamaPolicy:
    """Encoder + policy head; the learned operator selector."""

    def __init__(self, params: ModelParams):
        self.params = params
        self._dis_norm: np.ndarray | None = None

    def begin_episode(self, inst: Instance) -> None:
        self._dis_norm = normalized_adjacency(
            build_distance_graph(inst), dtype=self.params.dtype
        )

    def act(self, state: SearchState, rng, mode: str) -> tuple[int, float, float]:
        out = policy_output(state, self.params, dis_norm=self._dis_norm)
        action, log_prob = sample_action(out, rng, mode)
        return action, log_prob, out.value


class RandomPolicy:
    """Uniform operator choice; never looks at the state."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def begin_episode(self, inst: Instance) -> None:
        pass

    def act(self, state: SearchState, rng, mode: str) -> tuple[int, float, float]:
        action = int(rng.integers(self.n_actions))
        return action, float(-np.log(self.n_actions)), 0.0


class FixedSequencePolicy:
    """Cycles through a fixed list of action indices."""

    def __init__(self, sequence: list[int]):
        if not sequence:
            raise ValueError("empty fixed sequence")
        self.sequence = list(sequence)
        self._pos = 0

    def begin_episode(self, inst: Instance) -> None:
        self._pos = 0

    def act(self, state: SearchState, rng, mode: str) -> tuple[int, float, float]:
        action = self.sequence[self._pos % len(self.sequence)]
        self._pos += 1
        return action, 0.0, 0.0


# ---------------------------------------------------------------------------
# Episode driver
# ---------------------------------------------------------------------------


@dataclass
class EpisodeStats:
    instance: str
    initial_cost: float
    best_cost: float
    trace: tuple[float, ...]
    shakes: int
    phases: int
    wall_ms: float
    shake_steps: tuple[int, ...]


def run_episode(
    inst: Instance,
    policy,
    actions: tuple[OperatorId, ...],
    search: SearchConfig,
    seed: int,
    mode: str = "sample",
) -> tuple[Solution, EpisodeBuffer, EpisodeStats]:
    """Run one T-step episode and return (incumbent best, buffer, stats).

    Deterministic given (instance, policy parameters, seed): the policy
    sampler, the shake stream, and the initial solution all derive from the
    single seed.
    """
    t_start = time.perf_counter()
    rng_policy = make_rng(seed, 1)
    rng_shake = make_rng(seed, 2)
    sol = initial_solution(inst, derive_seed(seed, 3))
    best = sol
    opt = initial_opt_features(sol.cost)
    buffer = EpisodeBuffer(inst=inst, initial_cost=sol.cost)
    policy.begin_episode(inst)

    dis = build_distance_graph(inst)
    phase_id = 0
    phase_start_cost = sol.cost
    phase_best = sol.cost
    no_improve = 0
    phases_closed = 0
    shakes = 0
    trace: list[float] = []
    shake_steps: list[int] = []

    for step in range(1, search.max_steps + 1):
        state = SearchState(
            dis=dis,
            sol=build_solution_graph(inst, sol),
            x=build_node_features(inst, sol),
            opt=opt,
        )
        action, log_prob, value = policy.act(state, rng_policy, mode)
        new_sol = local_search(inst, sol, actions[action])
        buffer.append(
            Transition(
                routes=sol.routes_key(),
                opt=opt,
                action=action,
                log_prob=log_prob,
                value=value,
                phase_id=phase_id,
            )
        )
        phase_best = min(phase_best, new_sol.cost)
        opt = update_opt_features(opt, action, sol.cost, new_sol.cost, best.cost)
        if new_sol.cost < best.cost - IMPROVEMENT_EPS:
            best = new_sol
            no_improve = 0
        else:
            no_improve += 1
        sol = new_sol
        trace.append(sol.cost)

        if no_improve >= search.no_improve_limit:
            assign_phase_rewards(buffer, phase_id, phase_start_cost, phase_best)
            phases_closed += 1
            pre_shake = sol.cost
            sol = shake(inst, sol, rng_shake, actions, strength=search.shake_strength)
            opt = update_opt_features(opt, opt.last_op_index, pre_shake, sol.cost, best.cost)
            shakes += 1
            shake_steps.append(step)
            no_improve = 0
            phase_id += 1
            phase_start_cost = sol.cost
            phase_best = sol.cost

    if buffer.transitions and buffer.transitions[-1].phase_id == phase_id:
        assign_phase_rewards(buffer, phase_id, phase_start_cost, phase_best)
        phases_closed += 1

    stats = EpisodeStats(
        instance=inst.name,
        initial_cost=buffer.initial_cost,
        best_cost=best.cost,
        trace=tuple(trace),
        shakes=shakes,
        phases=phases_closed,
        wall_ms=(time.perf_counter() - t_start) * 1000.0,
        shake_steps=tuple(shake_steps),
    )
    return best, buffer, stats


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction, keyed by tensor name."""

    def __init__(self, tensors: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.tensors = tensors
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in tensors.items()}

    def step(self) -> None:
        self.t += 1
        for name, tensor in self.tensors.items():
            if tensor.grad is None:
                continue
            g = tensor.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1**self.t)
            v_hat = self.v[name] / (1 - self.b2**self.t)
            tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                tensor.data.dtype
            )


def clip_grad_norm(tensors: dict[str, Tensor], max_norm: float) -> float:
    total = 0.0
    for t in tensors.values():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for t in tensors.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def transition_returns(buffer: EpisodeBuffer, cross_phase_gamma: float | None) -> np.ndarray:
    """Per-transition returns; by default the phase reward itself."""
    rewards = []
    for t in buffer.transitions:
        if t.reward is None:
            raise OpselectError("buffer has unrewarded transitions")
        rewards.append(t.reward)
    raw = np.array(rewards, dtype=np.float64)
    if cross_phase_gamma is None:
        return raw
    # Discounted suffix sum over later phases (same weight within a phase).
    phase_ids = np.array([t.phase_id for t in buffer.transitions])
    unique = sorted(set(int(p) for p in phase_ids))
    phase_reward = {p: float(raw[phase_ids == p][0]) for p in unique}
    out = np.zeros_like(raw)
    for i, p in enumerate(phase_ids):
        out[i] = sum(
            phase_reward[q] * cross_phase_gamma ** (qi)
            for qi, q in enumerate(u for u in unique if u >= p)
        )
    return out


def ppo_update(
    buffer: EpisodeBuffer,
    params: ModelParams,
    optimizer: Adam,
    ppo: PPOConfig,
    rng: np.random.Generator,
) -> dict:
    """Clipped-surrogate PPO over one episode's buffer; clears the buffer."""
    n = len(buffer.transitions)
    if n == 0:
        raise OpselectError("ppo_update on an empty buffer")
    scale = buffer.initial_cost if buffer.initial_cost > 0 else 1.0
    returns = transition_returns(buffer, ppo.cross_phase_gamma) / scale
    values = np.array([t.value for t in buffer.transitions])
    advantages = returns - values
    dis_norm = normalized_adjacency(build_distance_graph(buffer.inst), dtype=params.dtype)

    policy_losses, value_losses, entropies, kls, clip_fracs = [], [], [], [], []
    for _ in range(ppo.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, ppo.minibatch_size):
            batch = order[lo : lo + ppo.minibatch_size]
            params.zero_grad()
            terms = []
            batch_kl = []
            batch_clip = 0
            p_loss_val = v_loss_val = ent_val = 0.0
            for i in batch:
                t = buffer.transitions[int(i)]
                emb = encode(buffer.state_for(int(i)), params, dis_norm=dis_norm)
                logits, value = policy_heads(emb, params)
                logp_all = ag.log_softmax_rows(logits)
                logp = ag.pick(logp_all, 0, t.action)
                ratio = ag.exp(ag.sub(logp, t.log_prob))
                adv = float(advantages[i])
                surr = ag.minimum(
                    ag.mul(ratio, adv),
                    ag.mul(ag.clip(ratio, 1 - ppo.clip_eps, 1 + ppo.clip_eps), adv),
                )
                probs = ag.softmax_rows(logits)
                entropy = ag.mul(ag.sum_all(ag.mul(probs, logp_all)), -1.0)
                term = ag.sub(ag.mul(surr, -1.0), ag.mul(entropy, ppo.entropy_coef))
                if value is not None:
                    err = ag.sub(value, float(returns[i]))
                    term = ag.add(term, ag.mul(ag.mul(err, err), ppo.value_coef))
                    v_loss_val += float(err.item() ** 2)
                terms.append(term)
                p_loss_val += -float(surr.item())
                ent_val += float(entropy.item())
                batch_kl.append(t.log_prob - float(logp.item()))
                r = float(ratio.item())
                batch_clip += int(r < 1 - ppo.clip_eps or r > 1 + ppo.clip_eps)
            total = terms[0]
            for extra in terms[1:]:
                total = ag.add(total, extra)
            loss = ag.mul(total, 1.0 / len(batch))
            loss.backward()
            clip_grad_norm(params.tensors, ppo.grad_norm_clip)
            optimizer.step()
            policy_losses.append(p_loss_val / len(batch))
            value_losses.append(v_loss_val / len(batch))
            entropies.append(ent_val / len(batch))
            kls.append(float(np.mean(batch_kl)))
            clip_fracs.append(batch_clip / len(batch))
    buffer.clear()
    return {
        "policy_loss": float(np.mean(policy_losses)),
        "value_loss": float(np.mean(value_losses)),
        "entropy": float(np.mean(entropies)),
        "kl": float(np.mean(kls)),
        "clip_fraction": float(np.mean(clip_fracs)),
        "minibatches": len(policy_losses),
    }


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------


def build_policy(cfg: RunConfig, params: ModelParams | None):
    kind = cfg.train.policy
    actions = cfg.search.actions
    if kind == "gama":
        if params is None:
            raise OpselectError("gama policy needs parameters")
        return GamaPolicy(params)
    if kind == "random":
        return RandomPolicy(len(actions))
    if kind == "fixed-sequence":
        index = {name: i for i, name in enumerate(actions)}
        return FixedSequencePolicy([index[name] for name in cfg.train.fixed_sequence])
    raise OpselectError(f"unknown policy kind {kind!r}")


def train(
    cfg: RunConfig,
    checkpoint_path: str | None,
    log_path: str,
    instances: list[Instance] | None = None,
) -> dict:
    """Train (or baseline-roll) for the configured number of episodes.

    Writes a JSONL log whose first line is the metadata block, and a final
    checkpoint when the policy has parameters.  Returns a summary dict.
    """
    from .checkpoint import save_checkpoint

    master = cfg.train.master_seed
    actions = action_set_from_names(cfg.search.actions)
    params = None
    optimizer = None
    if cfg.train.policy == "gama":
        params = ModelParams.init(cfg.model, seed=derive_seed(master, 100))
        optimizer = Adam(params.tensors, lr=cfg.ppo.lr)
    policy = build_policy(cfg, params)

    best_costs = []
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps({"metadata": metadata_block(cfg)}, sort_keys=True) + "\n")
        for ep in range(cfg.train.episodes):
            if instances is not None:
                inst = instances[ep % len(instances)]
                instance_ref = inst.name
            else:
                gen_seed = derive_seed(master, 10, ep)
                inst = generate_instance(
                    cfg.train.n_customers, seed=gen_seed, capacity=cfg.train.capacity
                )
                instance_ref = gen_seed
            best, buffer, stats = run_episode(
                inst, policy, actions, cfg.search, seed=derive_seed(master, 11, ep)
            )
            upd = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0}
            if params is not None and optimizer is not None:
                upd = ppo_update(buffer, params, optimizer, cfg.ppo, make_rng(master, 12, ep))
            best_costs.append(best.cost)
            record = {
                "episode": ep,
                "instance_seed": instance_ref,
                "initial_cost": stats.initial_cost,
                "best_cost": stats.best_cost,
                "phases": stats.phases,
                "shakes": stats.shakes,
                "policy_loss": upd["policy_loss"],
                "value_loss": upd["value_loss"],
                "kl": upd["kl"],
                "wall_ms": stats.wall_ms if cfg.output.log_timing else 0.0,
            }
            log.write(json.dumps(record, sort_keys=True) + "\n")
            every = cfg.train.checkpoint_every
            if params is not None and checkpoint_path and every > 0 and (ep + 1) % every == 0:
                save_checkpoint(checkpoint_path, params, metadata_block(cfg))
    if params is not None and checkpoint_path:
        save_checkpoint(checkpoint_path, params, metadata_block(cfg))
    return {
        "episodes": cfg.train.episodes,
        "mean_best_cost": float(mean_cost(best_costs)),
        "final_best_cost": float(best_costs[-1]),
        "checkpoint": checkpoint_path if params is not None else None,
    }


def _eval_one(payload: dict) -> dict:
    """Worker: run one (instance, run) evaluation task."""
    inst = Instance.from_json(payload["instance_json"])
    search = SearchConfig(**payload["search"])
    actions = action_set_from_names(search.actions)
    kind = payload["policy_kind"]
    if kind == "gama":
        config = ModelConfig(**payload["model_config"])
        params = ModelParams(config=config)
        for name, arr in payload["tensors"].items():
            params.tensors[name] = Tensor(np.asarray(arr, dtype=np.float32), requires_grad=False)
        policy = GamaPolicy(params)
    elif kind == "random":
        policy = RandomPolicy(len(actions))
    else:
        policy = FixedSequencePolicy(payload["sequence"])
    best, _, stats = run_episode(
        inst, policy, actions, search, seed=payload["seed"], mode=payload["mode"]
    )
    row = {
        "instance_id": inst.name,
        "run": payload["run"],
        "best_cost": best.cost,
        "time_ms": stats.wall_ms if payload["log_timing"] else 0.0,
    }
    if payload.get("reference") is not None:
        row["gap_pct"] = optimality_gap_pct(best.cost, payload["reference"])
    return row


def evaluate(
    cfg: RunConfig,
    instances: list[Instance],
    params: ModelParams | None,
    refs: dict[str, float] | None = None,
) -> tuple[list[dict], dict]:
    """Evaluate the configured policy; returns (rows, summary).

    Rows are ordered by (instance index, run) regardless of worker
    scheduling, so output files are deterministic.
    """
    master = cfg.train.master_seed
    search_fields = {
        "max_steps": cfg.search.max_steps,
        "no_improve_limit": cfg.search.no_improve_limit,
        "shake_strength": cfg.search.shake_strength,
        "actions": tuple(cfg.search.actions),
    }
    payloads = []
    for idx, inst in enumerate(instances):
        for run in range(cfg.eval.runs):
            payload = {
                "instance_json": inst.to_json(),
                "search": search_fields,
                "policy_kind": cfg.train.policy,
                "mode": cfg.eval.mode,
                "seed": derive_seed(master, 20, idx, run),
                "run": run,
                "log_timing": cfg.output.log_timing,
                "reference": None if refs is None else refs.get(inst.name),
            }
            if cfg.train.policy == "gama":
                if params is None:
                    raise OpselectError("gama evaluation needs a checkpoint")
                payload["model_config"] = {
                    f: getattr(cfg.model, f)
                    for f in (
                        "n_node_features", "gcn_hidden", "d_model", "n_heads",
                        "n_fusion_layers", "ffn_hidden", "opt_embed", "n_actions",
                        "policy_hidden", "disable_cross_attention", "disable_gate",
                        "share_modality_params", "use_value_head",
                    )
                }
                payload["tensors"] = {k: t.data for k, t in params.tensors.items()}
            elif cfg.train.policy == "fixed-sequence":
                index = {name: i for i, name in enumerate(cfg.search.actions)}
                payload["sequence"] = [index[n] for n in cfg.train.fixed_sequence]
            payloads.append(payload)

    workers = cfg.eval.threads or os.cpu_count() or 1
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_eval_one, payloads))
    else:
        rows = [_eval_one(p) for p in payloads]

    costs = [r["best_cost"] for r in rows]
    summary = {
        "count": len(rows),
        "mean": mean_cost(costs),
        "best": min(costs),
        "std": float(np.std(costs)),
    }
    if refs is not None:
        gaps = [r["gap_pct"] for r in rows if "gap_pct" in r]
        if gaps:
            summary["mean_gap_pct"] = float(np.mean(gaps))
    return rows, summary
