"""Set-transformer policy: a learnable classifier token conditioned on ownship
features attends over intruder tokens; the encoded token feeds both the 3-way
advisory head and the state-value head.

No positional encodings anywhere: intruders form an unordered set and the
network is permutation-invariant by construction. The zero-intruder case is a
length-1 token sequence, no padding involved.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .airspace import Advisory
from .numerics import AttentionParams, ConfigError, Tensor

OWNSHIP_DIM = 2
INTRUDER_DIM = 7
N_ACTIONS = 3
LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class PolicyConfig:
    d_emb: int = 128
    d_ff: int = 512
    heads: int = 16
    layers: int = 1

    def __post_init__(self):
        if self.d_emb % self.heads != 0:
            raise ConfigError(f"d_emb {self.d_emb} not divisible by heads {self.heads}")
        if min(self.d_emb, self.d_ff, self.heads, self.layers) < 1:
            raise ConfigError("all network dimensions must be >= 1")

    @property
    def head_dim(self):
        return self.d_emb // self.heads

    def to_dict(self):
        return {"d_emb": self.d_emb, "d_ff": self.d_ff, "heads": self.heads, "layers": self.layers}


@dataclass
class EncoderLayerParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attention: AttentionParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


@dataclass
class PolicyParams:
    """All learnable parameters; a single instance serves every agent and env."""

    config: PolicyConfig
    cls_base: Tensor
    own_w: Tensor
    own_b: Tensor
    own_ln_gain: Tensor
    own_ln_bias: Tensor
    intr_w: Tensor
    intr_b: Tensor
    intr_ln_gain: Tensor
    intr_ln_bias: Tensor
    layers: list = field(default_factory=list)
    pi_w: Tensor = None
    pi_b: Tensor = None
    v_w: Tensor = None
    v_b: Tensor = None

    def named_parameters(self):
        """Flat name -> Tensor map in a stable order."""
        out = {
            "cls_base": self.cls_base,
            "own_w": self.own_w,
            "own_b": self.own_b,
            "own_ln_gain": self.own_ln_gain,
            "own_ln_bias": self.own_ln_bias,
            "intr_w": self.intr_w,
            "intr_b": self.intr_b,
            "intr_ln_gain": self.intr_ln_gain,
            "intr_ln_bias": self.intr_ln_bias,
        }
        for i, layer in enumerate(self.layers):
            prefix = f"enc{i}_"
            out[prefix + "ln1_gain"] = layer.ln1_gain
            out[prefix + "ln1_bias"] = layer.ln1_bias
            for name, t in layer.attention.tensors().items():
                out[prefix + "attn_" + name] = t
            out[prefix + "ln2_gain"] = layer.ln2_gain
            out[prefix + "ln2_bias"] = layer.ln2_bias
            out[prefix + "ffn_w1"] = layer.ffn_w1
            out[prefix + "ffn_b1"] = layer.ffn_b1
            out[prefix + "ffn_w2"] = layer.ffn_w2
            out[prefix + "ffn_b2"] = layer.ffn_b2
        out["pi_w"] = self.pi_w
        out["pi_b"] = self.pi_b
        out["v_w"] = self.v_w
        out["v_b"] = self.v_b
        return out

    def tensors(self):
        return list(self.named_parameters().values())

    def n_parameters(self):
        return sum(t.size for t in self.tensors())


def _ln_pair(d):
    gain = Tensor(np.ones(d), requires_grad=True)
    bias = Tensor(np.zeros(d), requires_grad=True)
    return gain, bias


def init_params(config, rng):
    """Fresh parameters: affine weights U(+/-1/sqrt(fan_in)), biases zero,
    classifier base token standard Gaussian."""
    d, dff = config.d_emb, config.d_ff
    own_w, own_b = nm.init_affine(rng, OWNSHIP_DIM + d, d)
    own_ln_gain, own_ln_bias = _ln_pair(d)
    intr_w, intr_b = nm.init_affine(rng, INTRUDER_DIM, d)
    intr_ln_gain, intr_ln_bias = _ln_pair(d)
    layers = []
    for _ in range(config.layers):
        ln1_gain, ln1_bias = _ln_pair(d)
        attention = AttentionParams.create(rng, d)
        ln2_gain, ln2_bias = _ln_pair(d)
        ffn_w1, ffn_b1 = nm.init_affine(rng, d, dff)
        ffn_w2, ffn_b2 = nm.init_affine(rng, dff, d)
        layers.append(
            EncoderLayerParams(
                ln1_gain, ln1_bias, attention, ln2_gain, ln2_bias,
                ffn_w1, ffn_b1, ffn_w2, ffn_b2,
            )
        )
    pi_w, pi_b = nm.init_affine(rng, d, N_ACTIONS)
    v_w, v_b = nm.init_affine(rng, d, 1)
    return PolicyParams(
        config=config,
        cls_base=nm.init_gaussian(rng, (d,)),
        own_w=own_w, own_b=own_b,
        own_ln_gain=own_ln_gain, own_ln_bias=own_ln_bias,
        intr_w=intr_w, intr_b=intr_b,
        intr_ln_gain=intr_ln_gain, intr_ln_bias=intr_ln_bias,
        layers=layers,
        pi_w=pi_w, pi_b=pi_b, v_w=v_w, v_b=v_b,
    )


def parameter_count(config):
    """Closed-form learnable-parameter count for a configuration."""
    d, dff, m = config.d_emb, config.d_ff, config.layers
    adapters = d + ((OWNSHIP_DIM + d) * d + d + 2 * d) + (INTRUDER_DIM * d + d + 2 * d)
    per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * dff + dff) + (dff * d + d)
    heads = (d * N_ACTIONS + N_ACTIONS) + (d + 1)
    return adapters + m * per_layer + heads


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def make_cls_token(ownship, params):
    """Condition the learnable base token on the ownship block:
    layer_norm(gelu(affine(concat(base, ownship))))."""
    own = ownship if isinstance(ownship, Tensor) else Tensor(np.asarray(ownship, dtype=np.float64))
    fused = nm.concat([params.cls_base, own], axis=0)
    pre = nm.add(nm.matmul(fused, params.own_w), params.own_b)
    return nm.layer_norm(nm.gelu(pre), params.own_ln_gain, params.own_ln_bias, eps=LAYER_NORM_EPS)


def make_intruder_tokens(intruders, params):
    """Shared affine + layer norm per intruder row; None for the empty set."""
    arr = intruders.data if isinstance(intruders, Tensor) else np.asarray(intruders, dtype=np.float64)
    if arr.shape[0] == 0:
        return None
    x = intruders if isinstance(intruders, Tensor) else Tensor(arr)
    pre = nm.add(nm.matmul(x, params.intr_w), params.intr_b)
    return nm.layer_norm(pre, params.intr_ln_gain, params.intr_ln_bias, eps=LAYER_NORM_EPS)


def _encoder(tokens, params):
    x = tokens
    for layer in params.layers:
        normed = nm.layer_norm(x, layer.ln1_gain, layer.ln1_bias, eps=LAYER_NORM_EPS)
        x = nm.add(x, nm.self_attention(normed, layer.attention, params.config.heads))
        normed = nm.layer_norm(x, layer.ln2_gain, layer.ln2_bias, eps=LAYER_NORM_EPS)
        hidden = nm.gelu(nm.add(nm.matmul(normed, layer.ffn_w1), layer.ffn_b1))
        x = nm.add(x, nm.add(nm.matmul(hidden, layer.ffn_w2), layer.ffn_b2))
    return x


def forward_tensors(obs, params):
    """Graph-building forward pass; returns (logits (3,), value 0-d) tensors."""
    cls_tok = nm.reshape(make_cls_token(obs.ownship, params), (1, params.config.d_emb))
    intr_tok = make_intruder_tokens(obs.intruders, params)
    tokens = cls_tok if intr_tok is None else nm.concat([cls_tok, intr_tok], axis=0)
    encoded = _encoder(tokens, params)
    cls_out = nm.narrow(encoded, 0, 0, 1)
    logits = nm.reshape(nm.add(nm.matmul(cls_out, params.pi_w), params.pi_b), (N_ACTIONS,))
    value = nm.reshape(nm.add(nm.matmul(cls_out, params.v_w), params.v_b), ())
    return logits, value


def forward(obs, params):
    """Advisory logits and state value as plain numbers (no recorded graph)."""
    with nm.no_grad():
        logits, value = forward_tensors(obs, params)
    return logits.data, float(value.data)


def _log_softmax_np(logits):
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    return logits - lse


def act(obs, params, rng=None, mode="sample"):
    """Draw or argmax an advisory; returns (advisory, log_prob, value)."""
    logits, value = forward(obs, params)
    logp = _log_softmax_np(logits)
    if mode == "greedy":
        a = int(np.argmax(logits))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs a seeded rng")
        a = int(rng.choice(N_ACTIONS, p=np.exp(logp)))
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return Advisory(a), float(logp[a]), value


def evaluate_actions(obs_batch, action_batch, params):
    """Per-sample log-probs, entropies and values for heterogeneous observations."""
    n = len(obs_batch)
    log_probs = np.empty(n)
    entropies = np.empty(n)
    values = np.empty(n)
    for i, (obs, action) in enumerate(zip(obs_batch, action_batch)):
        logits, value = forward(obs, params)
        logp = _log_softmax_np(logits)
        p = np.exp(logp)
        log_probs[i] = logp[int(action)]
        entropies[i] = -float((p * logp).sum())
        values[i] = value
    return log_probs, entropies, values


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_policy(path, params, meta=None):
    """Checkpoint all parameters plus the network configuration and caller metadata."""
    meta = dict(meta or {})
    meta["network"] = params.config.to_dict()
    return nm.save_checkpoint(path, params.named_parameters(), meta)


def load_policy(path):
    """Rebuild (params, meta) from a checkpoint; forward passes are bit-identical."""
    arrays, meta = nm.load_checkpoint(path)
    config = PolicyConfig(**meta["network"])
    params = init_params(config, np.random.default_rng(0))
    named = params.named_parameters()
    missing = set(named) - set(arrays)
    extra = set(arrays) - set(named)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in named.items():
        stored = arrays[name]
        if stored.shape != tensor.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {stored.shape}")
        tensor.data = stored.astype(np.float64, copy=True)
    return params, meta
