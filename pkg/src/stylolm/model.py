"""Decoder-only transformer language model (GPT-2 shape).

Pre-norm residual blocks, learned positional embeddings, GELU MLPs,
and an output head tied to the token embedding. No dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError, TrainingDivergenceError


@dataclass
class ModelConfig:
    vocab_size: int
    context_window: int = 1024
    d_model: int = 128
    n_layers: int = 8
    n_heads: int = 8
    dtype: str = "float32"

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.context_window < 2:
            raise ConfigError("context_window must be >= 2")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_count(config: ModelConfig) -> int:
    """Parameters of the tied-head model, computed from shapes alone."""
    d, v, ctx, L = config.d_model, config.vocab_size, config.context_window, config.n_layers
    per_layer = (
        2 * d          # ln1 gain+bias
        + d * 3 * d + 3 * d  # qkv
        + d * d + d    # attention output projection
        + 2 * d        # ln2
        + d * 4 * d + 4 * d  # mlp up
        + 4 * d * d + d      # mlp down
    )
    return v * d + ctx * d + L * per_layer + 2 * d  # + final layer norm


class LanguageModel:
    """Parameter container plus forward pass. One V x d embedding matrix (tied head)."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad_()

    def forward(self, ids: np.ndarray) -> Tensor:
        """Logits for next-token prediction.

        ids: int array (T,) or (B, T) with T <= context_window.
        Returns logits of shape (T, V) or (B, T, V); row t is the
        distribution over token t+1 given tokens <= t.
        """
        ids = np.asarray(ids)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise ShapeError(f"forward: ids must be 1-D or 2-D, got {ids.shape}")
        B, T = ids.shape
        cfg = self.config
        if T > cfg.context_window:
            raise ShapeError(f"sequence length {T} exceeds context window {cfg.context_window}")
        if T < 1:
            raise ShapeError("forward: empty sequence")
        p = self.params
        H = cfg.n_heads
        hd = cfg.d_model // H

        tok = ag.embedding_lookup(p["wte"], ids)              # (B,T,d)
        pos = ag.slice_(p["wpe"], slice(0, T))                # (T,d)
        x = ag.add(tok, pos)

        mask = np.triu(np.full((T, T), -1e9, dtype=np.float32), k=1)
        for li in range(cfg.n_layers):
            pre = f"h{li}."
            a_in = ag.layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            qkv = ag.add(ag.matmul(a_in, p[pre + "attn_qkv_w"]), p[pre + "attn_qkv_b"])
            q = ag.slice_(qkv, (Ellipsis, slice(0, cfg.d_model)))
            k = ag.slice_(qkv, (Ellipsis, slice(cfg.d_model, 2 * cfg.d_model)))
            v = ag.slice_(qkv, (Ellipsis, slice(2 * cfg.d_model, 3 * cfg.d_model)))
            # (B,T,d) -> (B,H,T,hd)
            q = ag.transpose(ag.reshape(q, (B, T, H, hd)), (0, 2, 1, 3))
            k = ag.transpose(ag.reshape(k, (B, T, H, hd)), (0, 2, 1, 3))
            v = ag.transpose(ag.reshape(v, (B, T, H, hd)), (0, 2, 1, 3))
            scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
            scores = ag.add_const(scores, mask)
            attn = ag.softmax_rows(scores)
            ctx = ag.matmul(attn, v)                           # (B,H,T,hd)
            ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B, T, cfg.d_model))
            proj = ag.add(ag.matmul(ctx, p[pre + "attn_proj_w"]), p[pre + "attn_proj_b"])
            x = ag.add(x, proj)

            m_in = ag.layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
            h1 = ag.gelu(ag.add(ag.matmul(m_in, p[pre + "mlp_fc_w"]), p[pre + "mlp_fc_b"]))
            h2 = ag.add(ag.matmul(h1, p[pre + "mlp_proj_w"]), p[pre + "mlp_proj_b"])
            x = ag.add(x, h2)

        h = ag.layer_norm(x, p["lnf_g"], p["lnf_b"])
        logits = ag.matmul(h, ag.transpose(p["wte"]))          # tied head: (B,T,V)
        if squeeze:
            logits = ag.reshape(logits, (T, cfg.vocab_size))
        return logits


def init_model(config: ModelConfig, seed: int) -> LanguageModel:
    """Fresh model: weights ~ N(0, 0.02), biases zero, residual projections
    scaled down by 1/sqrt(2*n_layers). Deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    dtype = np.float32 if config.dtype == "float32" else np.float64
    d = config.d_model
    std = 0.02
    res_std = std / np.sqrt(2.0 * config.n_layers)

    def w(shape, s):
        return Tensor(rng.normal(0.0, s, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {
        "wte": w((config.vocab_size, d), std),
        "wpe": w((config.context_window, d), std),
    }
    for li in range(config.n_layers):
        pre = f"h{li}."
        params[pre + "ln1_g"] = ones((d,))
        params[pre + "ln1_b"] = zeros((d,))
        params[pre + "attn_qkv_w"] = w((d, 3 * d), std)
        params[pre + "attn_qkv_b"] = zeros((3 * d,))
        params[pre + "attn_proj_w"] = w((d, d), res_std)
        params[pre + "attn_proj_b"] = zeros((d,))
        params[pre + "ln2_g"] = ones((d,))
        params[pre + "ln2_b"] = zeros((d,))
        params[pre + "mlp_fc_w"] = w((d, 4 * d), std)
        params[pre + "mlp_fc_b"] = zeros((4 * d,))
        params[pre + "mlp_proj_w"] = w((4 * d, d), res_std)
        params[pre + "mlp_proj_b"] = zeros((d,))
    params["lnf_g"] = ones((d,))
    params["lnf_b"] = zeros((d,))
    return LanguageModel(config, params)


def lm_loss(model: LanguageModel, ids: np.ndarray) -> Tensor:
    """Mean cross-entropy (nats) of the T-1 next-token predictions.

    ids: (T,) or (B, T) with T >= 2. Raises TrainingDivergenceError if the
    loss is non-finite.
    """
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] < 2:
        raise ShapeError("lm_loss needs sequences of length >= 2")
    logits = model.forward(ids)
    B, T, V = logits.shape
    pred = ag.reshape(ag.slice_(logits, (slice(None), slice(0, T - 1))), (B * (T - 1), V))
    targets = ids[:, 1:].reshape(-1)
    loss = ag.cross_entropy_mean(pred, targets)
    if not np.isfinite(loss.data):
        raise TrainingDivergenceError(f"non-finite loss {loss.data!r}")
    return loss


def sample(model: LanguageModel, prompt: list[int] | np.ndarray, n_tokens: int,
           temperature: float = 1.0, seed: int = 0, greedy: bool = False,
           start_token: int = 0) -> list[int]:
    """Autoregressive sampling; the context is truncated to the last
    context_window tokens. Deterministic per seed. ``greedy`` takes the
    argmax instead of drawing (the temperature -> 0 limit)."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0 (use greedy=True for the argmax limit)")
    rng = np.random.default_rng(seed)
    out = [int(t) for t in np.asarray(prompt).reshape(-1)]
    if not out:
        out = [int(start_token)]
    ctx = model.config.context_window
    with ag.no_grad():
        for _ in range(n_tokens):
            window = np.asarray(out[-ctx:], dtype=np.int64)
            logits = model.forward(window).data[-1].astype(np.float64)
            if greedy:
                nxt = int(np.argmax(logits))
            else:
                z = logits / temperature
                z -= z.max()
                probs = np.exp(z)
                probs /= probs.sum()
                nxt = int(rng.choice(len(probs), p=probs))
            out.append(nxt)
    return out
