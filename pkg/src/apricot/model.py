"""Acuity network: triplet embedding, Mamba blocks, top-k pooling, static fusion, nine heads."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .records import HEAD_INDEX, HEADS, AcuityState

INSTABILITY_HEADS = ("unstable", "stable_to_unstable", "mv", "vp", "crrt")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_static: int
    d_model: int = 64
    n_blocks: int = 2
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    embed_conv_width: int = 1
    k_top: int = 4
    L_max: int = 256
    dt_rank: int = 0  # 0 means ceil(d_model / 16)
    mlp_hidden: int = 512
    fused_dim: int = 64
    head_groups: tuple[int, int, int] = (4, 2, 3)
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "n_static", "d_model", "n_blocks", "d_state", "expand",
                     "conv_width", "embed_conv_width", "k_top", "L_max", "mlp_hidden", "fused_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if sum(self.head_groups) != len(HEADS):
            raise ValueError("head groups must cover the nine heads")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def rank(self) -> int:
        return self.dt_rank or math.ceil(self.d_model / 16)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["head_groups"] = tuple(d["head_groups"])
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, di, n, r = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.rank
    shapes = {
        "embed.time_w": (cfg.embed_conv_width, 1, d), "embed.time_b": (d,),
        "embed.value_w": (cfg.embed_conv_width, 1, d), "embed.value_b": (d,),
        "embed.codes": (cfg.vocab_size, d),
    }
    for b in range(cfg.n_blocks):
        p = f"block{b}."
        shapes.update({
            p + "norm_g": (d,), p + "norm_b": (d,),
            p + "in_proj": (d, 2 * di),
            p + "conv_w": (cfg.conv_width, di), p + "conv_b": (di,),
            p + "x_proj": (di, r + 2 * n),
            p + "dt_proj": (r, di), p + "dt_bias": (di,),
            p + "A_log": (di, n),
            p + "D": (di,),
            p + "out_proj": (di, d),
        })
    shapes.update({
        "final.norm_g": (d,), "final.norm_b": (d,),
        "pool.w1": (d, cfg.mlp_hidden), "pool.b1": (cfg.mlp_hidden,),
        "pool.w2": (cfg.mlp_hidden, cfg.fused_dim), "pool.b2": (cfg.fused_dim,),
        "static.w1": (cfg.n_static, cfg.fused_dim), "static.b1": (cfg.fused_dim,),
        "static.w2": (cfg.fused_dim, cfg.fused_dim), "static.b2": (cfg.fused_dim,),
        "heads.w": (2 * cfg.fused_dim, len(HEADS)), "heads.b": (len(HEADS),),
    })
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Learnable scalars.

    Closed form, with d = d_model, e = d_inner, N = d_state, R = dt rank,
    K = conv width, k = embedding conv width, H = MLP hidden, F = fused dim::

        2(kd + d) + Vd
        + blocks * (2d + 2de + Ke + e + e(R + 2N) + Re + e + eN + e + ed)
        + 2d + (dH + H + HF + F) + (fF + F + F^2 + F) + 9(2F + 1)

    so each extra unit of N adds 3e per block (x_proj B and C columns, A).
    """
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    shapes = param_shapes(cfg)
    params: dict[str, np.ndarray] = {}

    def dense(fan_in, shape):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    for name, shape in shapes.items():
        leaf = name.split(".")[-1]
        if leaf in ("norm_g",):
            params[name] = np.ones(shape)
        elif leaf in ("norm_b", "time_b", "value_b", "conv_b", "b1", "b2", "b"):
            params[name] = np.zeros(shape)
        elif leaf == "A_log":
            params[name] = np.log(np.tile(np.arange(1, cfg.d_state + 1, dtype=float), (cfg.d_inner, 1)))
        elif leaf == "D":
            params[name] = np.ones(shape)
        elif leaf == "dt_bias":
            dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=shape))
            params[name] = _inv_softplus(dt)
        elif leaf == "codes":
            params[name] = rng.normal(0.0, 1.0, size=shape)
        elif leaf in ("time_w", "value_w"):
            params[name] = rng.normal(0.0, 1.0, size=shape)
        elif leaf == "conv_w":
            params[name] = dense(cfg.conv_width, shape)
        elif leaf == "out_proj":
            params[name] = dense(shape[0], shape) / math.sqrt(cfg.n_blocks)
        else:
            params[name] = dense(shape[0], shape)
    return params


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    times: np.ndarray   # [B, L]
    values: np.ndarray  # [B, L]
    codes: np.ndarray   # [B, L] int
    mask: np.ndarray    # [B, L] bool, real events first
    static: np.ndarray  # [B, f]

    @property
    def size(self) -> int:
        return self.codes.shape[0]


def make_batch(samples: Sequence, L_max: int, pad_to: int | None = None) -> Batch:
    """Stack samples, keeping the most recent ``L_max`` events of each.

    Sequences are left-aligned and padded on the right up to the longest
    sequence in the batch (or ``pad_to``).
    """
    lens = [min(len(s.codes), L_max) for s in samples]
    width = max(lens + [0]) if pad_to is None else pad_to
    b = len(samples)
    times = np.zeros((b, width))
    values = np.zeros((b, width))
    codes = np.zeros((b, width), dtype=np.int64)
    mask = np.zeros((b, width), dtype=bool)
    for i, (s, n) in enumerate(zip(samples, lens)):
        if n:
            times[i, :n] = s.times[-n:]
            values[i, :n] = s.values[-n:]
            codes[i, :n] = s.codes[-n:]
            mask[i, :n] = True
    static = np.stack([s.static_vec for s in samples]) if samples else np.zeros((0, 0))
    return Batch(times, values, codes, mask, static)


# ---------------------------------------------------------------------------
# network pieces


def bind(params: dict[str, np.ndarray], tape: nd.Tape | None = None) -> dict[str, nd.Tensor]:
    if tape is None:
        return {k: nd.Tensor(v) for k, v in params.items()}
    return {k: tape.leaf(v, name=k) for k, v in params.items()}


def embed_triplets(p: dict[str, nd.Tensor], times, values, codes, cfg: ModelConfig) -> nd.Tensor:
    """Fused event embedding plus positional encoding, ``[B, L, d_model]``."""
    e = event_embedding(p, times, values, codes, cfg)
    return nd.add(e, positional_encoding(e.shape[-2], cfg.d_model))


def event_embedding(p: dict[str, nd.Tensor], times, values, codes, cfg: ModelConfig) -> nd.Tensor:
    """Fused time, value and code embedding ``[B, L, d_model]`` (2-D inputs give ``[L, d_model]``)."""
    times = np.asarray(times, dtype=np.float64)
    single = times.ndim == 1
    if single:
        times, values, codes = times[None], np.asarray(values, dtype=np.float64)[None], np.asarray(codes)[None]
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and codes.max() >= cfg.vocab_size:
        raise IndexError(f"variable code {int(codes.max())} outside vocabulary of {cfg.vocab_size}")
    b, n = codes.shape
    te = nd.conv1d(nd.Tensor(times[..., None]), p["embed.time_w"], p["embed.time_b"])
    ve = nd.conv1d(nd.Tensor(np.asarray(values, dtype=np.float64)[..., None]),
                   p["embed.value_w"], p["embed.value_b"])
    ce = nd.gather(p["embed.codes"], codes)
    e = nd.add(nd.add(te, ve), ce)
    return nd.reshape(e, (n, cfg.d_model)) if single else e


def discretize(delta: nd.Tensor, A: nd.Tensor, B: nd.Tensor):
    """Zero-order hold for diagonal A, Euler step for B.

    ``delta[..., D]``, ``A[D, N]``, ``B[..., N]`` give ``A_bar = exp(delta * A)``
    and ``B_bar = delta * B``, both ``[..., D, N]``.
    """
    d_col = nd.reshape(delta, delta.shape + (1,))
    a_bar = nd.exp(nd.mul(d_col, A))
    b_bar = nd.mul(d_col, nd.reshape(B, B.shape[:-1] + (1, B.shape[-1])))
    return a_bar, b_bar


def mamba_block(p: dict[str, nd.Tensor], x: nd.Tensor, prefix: str, cfg: ModelConfig) -> nd.Tensor:
    """Pre-norm residual Mamba block on ``x[B, L, d_model]``."""
    di, n, r = cfg.d_inner, cfg.d_state, cfg.rank
    h = nd.layer_norm(x, p[prefix + "norm_g"], p[prefix + "norm_b"])
    xz = nd.matmul(h, p[prefix + "in_proj"])
    u = nd.slice_last(xz, 0, di)
    gate = nd.slice_last(xz, di, 2 * di)
    u = nd.silu(nd.depthwise_conv1d(u, p[prefix + "conv_w"], p[prefix + "conv_b"]))
    proj = nd.matmul(u, p[prefix + "x_proj"])
    delta = nd.softplus(nd.add(nd.matmul(nd.slice_last(proj, 0, r), p[prefix + "dt_proj"]),
                               p[prefix + "dt_bias"]))
    b_sel = nd.slice_last(proj, r, r + n)
    c_sel = nd.slice_last(proj, r + n, r + 2 * n)
    A = nd.scale(nd.exp(p[prefix + "A_log"]), -1.0)
    # fused form of discretize() followed by ndgrad.selective_scan
    y = nd.selective_scan_fused(u, delta, A, b_sel, c_sel, p[prefix + "D"])
    y = nd.mul(y, nd.silu(gate))
    return nd.add(x, nd.matmul(y, p[prefix + "out_proj"]))


def topk_pool(h: nd.Tensor, k: int, mask=None) -> nd.Tensor:
    """Per-channel mean of the k largest activations; accepts ``[L, d]`` or ``[B, L, d]``."""
    if h.ndim == 2:
        m = None if mask is None else np.asarray(mask)[None]
        return nd.reshape(nd.topk_mean(nd.reshape(h, (1,) + h.shape), k, m), (h.shape[1],))
    return nd.topk_mean(h, k, mask)


def static_embed(p: dict[str, nd.Tensor], static: nd.Tensor) -> nd.Tensor:
    h = nd.silu(nd.add(nd.matmul(static, p["static.w1"]), p["static.b1"]))
    return nd.add(nd.matmul(h, p["static.w2"]), p["static.b2"])


def logits_from_embedding(p: dict[str, nd.Tensor], e: nd.Tensor, mask, static: nd.Tensor,
                          cfg: ModelConfig) -> nd.Tensor:
    """Head logits ``[B, 9]`` from the fused event embedding and raw static vector."""
    x = e
    for b in range(cfg.n_blocks):
        x = mamba_block(p, x, f"block{b}.", cfg)
    x = nd.layer_norm(x, p["final.norm_g"], p["final.norm_b"])
    pooled = topk_pool(x, cfg.k_top, mask)
    t = nd.silu(nd.add(nd.matmul(pooled, p["pool.w1"]), p["pool.b1"]))
    t = nd.add(nd.matmul(t, p["pool.w2"]), p["pool.b2"])
    s = static_embed(p, static)
    fused = nd.concat([t, s], axis=-1)
    return nd.add(nd.matmul(fused, p["heads.w"]), p["heads.b"])


def forward_logits(p: dict[str, nd.Tensor], batch: Batch, cfg: ModelConfig) -> nd.Tensor:
    e = embed_triplets(p, batch.times, batch.values, batch.codes, cfg)
    return logits_from_embedding(p, e, batch.mask, nd.Tensor(batch.static), cfg)


def predict_logits(params: dict[str, np.ndarray], samples: Sequence, cfg: ModelConfig,
                   batch_size: int = 128) -> np.ndarray:
    p = bind(params)
    out = np.zeros((len(samples), len(HEADS)))
    # length-sorted batches keep padding small; results are placed back by index
    order = sorted(range(len(samples)), key=lambda i: (len(samples[i].codes), i))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = make_batch([samples[i] for i in idx], cfg.L_max)
        out[idx] = forward_logits(p, batch, cfg).data
    return out


def forward(params: dict[str, np.ndarray], sample, cfg: ModelConfig) -> np.ndarray:
    """Nine head probabilities for one window sample."""
    return nd._sigmoid(predict_logits(params, [sample], cfg)[0])


# ---------------------------------------------------------------------------
# decision logic


def decide_status(bits) -> AcuityState:
    """Thresholded head decisions to one acuity state.

    Deceased wins; otherwise any instability or therapy head means Unstable;
    otherwise a positive discharge head means Discharge; otherwise Stable.
    """
    b = [bool(x) for x in bits]
    if len(b) != len(HEADS):
        raise ValueError(f"expected {len(HEADS)} decisions, got {len(b)}")
    if b[HEAD_INDEX["deceased"]]:
        return AcuityState.DECEASED
    if any(b[HEAD_INDEX[h]] for h in INSTABILITY_HEADS):
        return AcuityState.UNSTABLE
    if b[HEAD_INDEX["discharge"]]:
        return AcuityState.DISCHARGE
    return AcuityState.STABLE


def instability_risk(probs: np.ndarray) -> np.ndarray:
    """Max calibrated probability over the instability and therapy heads."""
    probs = np.asarray(probs)
    return probs[..., [HEAD_INDEX[h] for h in INSTABILITY_HEADS]].max(axis=-1)


def save_model(directory, params: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nd.save_params(d / "params.json", params)
    (d / "model_config.json").write_text(cfg.to_json())


def load_model(directory):
    from pathlib import Path

    d = Path(directory)
    cfg = ModelConfig.from_json((d / "model_config.json").read_text())
    return nd.load_params(d / "params.json"), cfg
