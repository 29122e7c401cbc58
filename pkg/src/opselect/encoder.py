"""Dual-graph attention encoder over search states.

Two GCN streams (distance-weighted and solution adjacency) feed L stacked
fusion layers.  Each layer runs, per modality, self-attention and
cross-attention over the layer inputs, blends the two branches through a
sigmoid gate, and applies the usual residual/LayerNorm/FFN block.  Final
node embeddings from both modalities are concatenated, mean-pooled, and
joined with an embedding of the optimization-history scalars.

All parameters are plain Tensors in one flat registry, so the same code
path serves 32-bit training and 64-bit gradient checking.  The forward
pass is deterministic: no dropout, no sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .rng import make_rng
from .state import SearchState


@dataclass(frozen=True)
class ModelConfig:
    """Encoder/policy architecture switches and sizes."""

    n_node_features: int = 11
    gcn_hidden: int = 16
    d_model: int = 32
    n_heads: int = 4
    n_fusion_layers: int = 3
    ffn_hidden: int = 128
    opt_embed: int = 16
    n_actions: int = 29
    policy_hidden: int = 64
    disable_cross_attention: bool = False
    disable_gate: bool = False
    share_modality_params: bool = False
    use_value_head: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def embed_dim(self) -> int:
        return 2 * self.d_model + self.opt_embed

    @property
    def opt_in_dim(self) -> int:
        return self.n_actions + 3


@dataclass
class AttentionWeights:
    """Per-head query/key/value projections plus the output projection."""

    heads: list[tuple[Tensor, Tensor, Tensor]]
    wo: Tensor


MODALITIES = ("dis", "sol")


@dataclass
class ModelParams:
    """Flat named registry of every learnable tensor.

    Weight matrices are uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases
    zero, LayerNorm scale 1 / shift 0, and fusion gates start at zero so
    the gate opens at a neutral 0.5.  When modalities share parameters the
    solution-stream names resolve to the distance-stream tensors.
    """

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "ModelParams":
        rng = make_rng(seed, 101)
        params = cls(config=config)

        def linear(name: str, fan_in: int, fan_out: int):
            bound = 1.0 / np.sqrt(fan_in)
            params.tensors[name] = Tensor(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                requires_grad=True,
            )

        def fixed(name: str, shape: tuple, value: float):
            params.tensors[name] = Tensor(
                np.full(shape, value, dtype=dtype), requires_grad=True
            )

        c = config
        modalities = ("dis",) if c.share_modality_params else MODALITIES
        for mod in modalities:
            linear(f"gcn.{mod}.w0", c.n_node_features, c.gcn_hidden)
            linear(f"gcn.{mod}.w1", c.gcn_hidden, c.gcn_hidden)
            linear(f"gcn.{mod}.bridge", c.gcn_hidden, c.d_model)
        for layer in range(c.n_fusion_layers):
            for mod in modalities:
                base = f"layer{layer}.{mod}"
                for kind in ("self", "cross"):
                    for m in range(c.n_heads):
                        linear(f"{base}.{kind}.wq{m}", c.d_model, c.d_head)
                        linear(f"{base}.{kind}.wk{m}", c.d_model, c.d_head)
                        linear(f"{base}.{kind}.wv{m}", c.d_model, c.d_head)
                    linear(f"{base}.{kind}.wo", c.d_model, c.d_model)
                fixed(f"{base}.gate", (2 * c.d_model, c.d_model), 0.0)
                linear(f"{base}.ffn.w1", c.d_model, c.ffn_hidden)
                fixed(f"{base}.ffn.b1", (1, c.ffn_hidden), 0.0)
                linear(f"{base}.ffn.w2", c.ffn_hidden, c.d_model)
                fixed(f"{base}.ffn.b2", (1, c.d_model), 0.0)
                for ln in ("ln1", "ln2"):
                    fixed(f"{base}.{ln}.g", (1, c.d_model), 1.0)
                    fixed(f"{base}.{ln}.b", (1, c.d_model), 0.0)
        linear("opt.w", c.opt_in_dim, c.opt_embed)
        fixed("opt.b", (1, c.opt_embed), 0.0)
        linear("policy.w1", c.embed_dim, c.policy_hidden)
        fixed("policy.b1", (1, c.policy_hidden), 0.0)
        linear("policy.w2", c.policy_hidden, c.n_actions)
        fixed("policy.b2", (1, c.n_actions), 0.0)
        if c.use_value_head:
            linear("value.w", c.policy_hidden, 1)
            fixed("value.b", (1, 1), 0.0)
        return params

    def _resolve(self, name: str) -> str:
        if self.config.share_modality_params and ".sol." in name:
            return name.replace(".sol.", ".dis.")
        return name

    def get(self, name: str) -> Tensor:
        return self.tensors[self._resolve(name)]

    def attention_weights(self, layer: int, mod: str, kind: str) -> AttentionWeights:
        base = f"layer{layer}.{mod}.{kind}"
        return AttentionWeights(
            heads=[
                (
                    self.get(f"{base}.wq{m}"),
                    self.get(f"{base}.wk{m}"),
                    self.get(f"{base}.wv{m}"),
                )
                for m in range(self.config.n_heads)
            ],
            wo=self.get(f"{base}.wo"),
        )

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    @property
    def dtype(self):
        return self.tensors["opt.w"].data.dtype


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def normalized_adjacency(adj: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Symmetric normalization of adj plus self-loops (plain numpy, no grad)."""
    a = np.asarray(adj, dtype=np.float64) + np.eye(len(adj))
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return (a * inv_sqrt[:, None] * inv_sqrt[None, :]).astype(dtype)


def gcn_forward(adj: np.ndarray, x, w: Tensor, activation: str = "relu") -> Tensor:
    """One graph-convolution layer on a raw adjacency (self-loops added here)."""
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=w.data.dtype))
    if x.shape[0] != adj.shape[0]:
        raise ShapeError(
            f"adjacency {adj.shape} and features {x.shape} disagree on node count"
        )
    s = Tensor(normalized_adjacency(adj, dtype=w.data.dtype))
    h = ag.matmul(ag.matmul(s, x), w)
    if activation == "relu":
        return ag.relu(h)
    if activation in (None, "linear"):
        return h
    raise ConfigError(f"unknown activation {activation!r}")


def _mha(
    q_input: Tensor,
    kv_input: Tensor,
    weights: AttentionWeights,
    trace: dict | None = None,
    trace_key: str = "",
) -> Tensor:
    """Multi-head scaled dot-product attention (queries may differ from keys)."""
    if q_input.shape[1] != kv_input.shape[1] or q_input.shape[0] != kv_input.shape[0]:
        raise ShapeError(
            f"attention inputs disagree: {q_input.shape} vs {kv_input.shape}"
        )
    d_head = weights.heads[0][0].shape[1]
    scale = 1.0 / np.sqrt(d_head)
    outs = []
    for m, (wq, wk, wv) in enumerate(weights.heads):
        q = ag.matmul(q_input, wq)
        k = ag.matmul(kv_input, wk)
        v = ag.matmul(kv_input, wv)
        attn = ag.softmax_rows(ag.mul(ag.matmul(q, ag.transpose(k)), scale))
        if trace is not None:
            trace[f"{trace_key}.head{m}.attn"] = attn.data.copy()
        outs.append(ag.matmul(attn, v))
    return ag.matmul(ag.concat_cols(outs), weights.wo)


def multi_head_self_attention(
    h: Tensor, weights: AttentionWeights, trace: dict | None = None, trace_key: str = ""
) -> Tensor:
    return _mha(h, h, weights, trace, trace_key)


def cross_attention(
    h_dis: Tensor,
    h_sol: Tensor,
    weights_dis: AttentionWeights,
    weights_sol: AttentionWeights,
    trace: dict | None = None,
    trace_key: str = "",
) -> tuple[Tensor, Tensor]:
    """Each modality queries the other's keys and values."""
    out_dis = _mha(h_dis, h_sol, weights_dis, trace, f"{trace_key}.dis.cross")
    out_sol = _mha(h_sol, h_dis, weights_sol, trace, f"{trace_key}.sol.cross")
    return out_dis, out_sol


def gated_fusion(
    h_self: Tensor,
    h_cross: Tensor,
    wg: Tensor,
    trace: dict | None = None,
    trace_key: str = "",
) -> Tensor:
    """Convex blend of the two branches with a learned element-wise gate."""
    if h_self.shape != h_cross.shape:
        raise ShapeError(f"gate inputs disagree: {h_self.shape} vs {h_cross.shape}")
    if wg.shape != (2 * h_self.shape[1], h_self.shape[1]):
        raise ShapeError(
            f"gate weight {wg.shape} incompatible with inputs {h_self.shape}"
        )
    alpha = ag.sigmoid(ag.matmul(ag.concat_cols([h_self, h_cross]), wg))
    if trace is not None:
        trace[f"{trace_key}.gate"] = alpha.data.copy()
    blended = ag.add(
        ag.mul(alpha, h_self), ag.mul(ag.sub(1.0, alpha), h_cross)
    )
    return blended


def _ffn(h: Tensor, params: ModelParams, base: str) -> Tensor:
    inner = ag.relu(ag.add(ag.matmul(h, params.get(f"{base}.ffn.w1")), params.get(f"{base}.ffn.b1")))
    return ag.add(ag.matmul(inner, params.get(f"{base}.ffn.w2")), params.get(f"{base}.ffn.b2"))


def _ln(h: Tensor, params: ModelParams, base: str, which: str) -> Tensor:
    return ag.layer_norm_rows(h, params.get(f"{base}.{which}.g"), params.get(f"{base}.{which}.b"))


def fusion_layer(
    h_dis: Tensor,
    h_sol: Tensor,
    params: ModelParams,
    layer: int,
    trace: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """One attention-fusion block; both modalities read the same layer inputs."""
    c = params.config
    key = f"layer{layer}"
    self_dis = multi_head_self_attention(
        h_dis, params.attention_weights(layer, "dis", "self"), trace, f"{key}.dis.self"
    )
    self_sol = multi_head_self_attention(
        h_sol, params.attention_weights(layer, "sol", "self"), trace, f"{key}.sol.self"
    )
    if c.disable_cross_attention:
        blend_dis, blend_sol = self_dis, self_sol
    else:
        cross_dis, cross_sol = cross_attention(
            h_dis,
            h_sol,
            params.attention_weights(layer, "dis", "cross"),
            params.attention_weights(layer, "sol", "cross"),
            trace,
            key,
        )
        if c.disable_gate:
            blend_dis = ag.add(self_dis, cross_dis)
            blend_sol = ag.add(self_sol, cross_sol)
        else:
            blend_dis = gated_fusion(
                self_dis, cross_dis, params.get(f"layer{layer}.dis.gate"), trace, f"{key}.dis"
            )
            blend_sol = gated_fusion(
                self_sol, cross_sol, params.get(f"layer{layer}.sol.gate"), trace, f"{key}.sol"
            )
    outs = []
    for mod, h_prev, blended in (("dis", h_dis, blend_dis), ("sol", h_sol, blend_sol)):
        base = f"layer{layer}.{mod}"
        h1 = _ln(ag.add(h_prev, blended), params, base, "ln1")
        h2 = _ln(ag.add(h1, _ffn(h1, params, base)), params, base, "ln2")
        outs.append(h2)
    return outs[0], outs[1]


# ---------------------------------------------------------------------------
# Full encoder
# ---------------------------------------------------------------------------


def _gcn_stream(
    adj_norm: np.ndarray, x: np.ndarray, params: ModelParams, mod: str
) -> Tensor:
    s = Tensor(adj_norm)
    h = Tensor(x)
    h = ag.relu(ag.matmul(ag.matmul(s, h), params.get(f"gcn.{mod}.w0")))
    h = ag.relu(ag.matmul(ag.matmul(s, h), params.get(f"gcn.{mod}.w1")))
    return ag.matmul(h, params.get(f"gcn.{mod}.bridge"))


def encode(
    state: SearchState,
    params: ModelParams,
    dis_norm: np.ndarray | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Embed one search state as a (1, embed_dim) tensor.

    dis_norm lets callers reuse the normalized distance adjacency, which is
    constant for the whole episode; see encode_dis_norm.
    """
    c = params.config
    dtype = params.dtype
    if dis_norm is None:
        dis_norm = normalized_adjacency(state.dis, dtype=dtype)
    sol_norm = normalized_adjacency(state.sol, dtype=dtype)
    x = state.x.astype(dtype)
    h_dis = _gcn_stream(dis_norm, x, params, "dis")
    h_sol = _gcn_stream(sol_norm, x, params, "sol")
    for layer in range(c.n_fusion_layers):
        h_dis, h_sol = fusion_layer(h_dis, h_sol, params, layer, trace)
    pooled = ag.mean_rows(ag.concat_cols([h_dis, h_sol]))
    opt_vec = Tensor(state.opt.vector(c.n_actions).reshape(1, -1).astype(dtype))
    opt_emb = ag.relu(ag.add(ag.matmul(opt_vec, params.get("opt.w")), params.get("opt.b")))
    return ag.concat_cols([pooled, opt_emb])


def encode_dis_norm(state_dis: np.ndarray, params: ModelParams) -> np.ndarray:
    """Precompute the per-instance normalized distance adjacency."""
    return normalized_adjacency(state_dis, dtype=params.dtype)
