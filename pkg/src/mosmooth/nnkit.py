"""Transformer encoder, optimizer and checkpoint plumbing.

Tensors are torch float64 tensors; torch supplies storage and reverse-mode
differentiation, while the attention, encoder blocks, layer norm and the
optimizer update are written out here. Sequences are stored row-wise, one
element per row (``n x d``), i.e. the transpose of the column-stacked
matrices used in the usual attention notation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class PositionError(IndexError):
    pass


def softmax_columns(m: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over the second-to-last axis, independently for every column.

    ``mask`` (broadcastable to ``m``) marks entries that take part; masked-out
    entries get probability zero.
    """
    if mask is not None:
        m = m.masked_fill(~mask, -math.inf)
    shifted = m - m.amax(dim=-2, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=-2, keepdim=True)


def softmax_rows(m: torch.Tensor) -> torch.Tensor:
    return softmax_columns(m.transpose(-1, -2)).transpose(-1, -2)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain + bias


def multihead_self_attention(
    a: torch.Tensor,
    wq: torch.Tensor,
    wk: torch.Tensor,
    wv: torch.Tensor,
    w0: torch.Tensor,
    key_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Full-width multihead self-attention.

    a: (..., n, d). wq/wk/wv: (n_h, d, d), one projection per head.
    w0: (d, n_h * d) applied to the head outputs stacked along features.
    key_mask: (..., n) bool, False for padded elements.
    """
    d = a.shape[-1]
    n_h = wq.shape[0]
    if wq.shape != (n_h, d, d) or wk.shape != wq.shape or wv.shape != wq.shape:
        raise ShapeError(f"per-head projections must be ({n_h}, {d}, {d})")
    if w0.shape != (d, n_h * d):
        raise ShapeError(f"output projection must be ({d}, {n_h * d}), got {tuple(w0.shape)}")
    q = torch.einsum("...nd,hed->...hne", a, wq)
    k = torch.einsum("...nd,hed->...hne", a, wk)
    v = torch.einsum("...nd,hed->...hne", a, wv)
    # scores[i, j] = k_i . q_j: keys index rows, queries index columns
    scores = torch.einsum("...hie,...hje->...hij", k, q) / math.sqrt(d)
    mask = None
    if key_mask is not None:
        mask = key_mask[..., None, :, None]
    weights = softmax_columns(scores, mask)
    heads = torch.einsum("...hij,...hie->...hje", weights, v)
    stacked = torch.cat(heads.unbind(dim=-3), dim=-1)
    return stacked @ w0.T


@dataclass(frozen=True)
class EncoderConfig:
    d: int
    n_h: int
    N: int
    ffn_hidden: int
    dropout: float = 0.1
    max_positions: int = 10

    def __post_init__(self):
        if self.N < 1 or self.n_h < 1 or self.d < 1:
            raise ValueError("encoder needs d, n_h, N >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def _uniform(shape: Sequence[int], fan_in: int, gen: torch.Generator) -> nn.Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return nn.Parameter((torch.rand(*shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, gen: torch.Generator):
        super().__init__()
        self.weight = _uniform((n_out, n_in), n_in, gen)
        self.bias = _uniform((n_out,), n_in, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T + self.bias


class MLP(nn.Module):
    """``layers`` linear maps with ReLU in between; hidden width ``hidden``."""

    def __init__(self, n_in: int, hidden: int, n_out: int, layers: int, gen: torch.Generator):
        super().__init__()
        dims = [n_in] + [hidden] * (layers - 1) + [n_out]
        self.layers = nn.ModuleList(Linear(a, b, gen) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x


class EncoderBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig, gen: torch.Generator):
        super().__init__()
        d, h = cfg.d, cfg.n_h
        self.wq = _uniform((h, d, d), d, gen)
        self.wk = _uniform((h, d, d), d, gen)
        self.wv = _uniform((h, d, d), d, gen)
        self.w0 = _uniform((d, h * d), h * d, gen)
        self.ln1_gain = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.ln1_bias = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.ln2_gain = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.ln2_bias = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.ffn_in = Linear(d, cfg.ffn_hidden, gen)
        self.ffn_out = Linear(cfg.ffn_hidden, d, gen)
        self.dropout = cfg.dropout

    def forward(self, a, q_pos, key_mask=None, gen: Optional[torch.Generator] = None):
        a_tilde = a + q_pos
        b = multihead_self_attention(a_tilde, self.wq, self.wk, self.wv, self.w0, key_mask)
        b_tilde = layer_norm(a_tilde + b, self.ln1_gain, self.ln1_bias)
        hidden = torch.relu(self.ffn_in(b_tilde))
        if self.training and self.dropout > 0:
            keep = torch.rand(hidden.shape, generator=gen, dtype=hidden.dtype) >= self.dropout
            hidden = hidden * keep / (1.0 - self.dropout)
        return layer_norm(b_tilde + self.ffn_out(hidden), self.ln2_gain, self.ln2_bias)


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, gen: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.positions = nn.Parameter(torch.randn(cfg.max_positions, cfg.d, generator=gen, dtype=DTYPE) * 0.02)
        self.blocks = nn.ModuleList(EncoderBlock(cfg, gen) for _ in range(cfg.N))

    def forward(
        self,
        a: torch.Tensor,
        positions: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
        gen: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        positions = torch.as_tensor(positions, dtype=torch.long)
        if positions.numel() and (positions.min() < 0 or positions.max() >= self.cfg.max_positions):
            raise PositionError(f"positions must lie in [0, {self.cfg.max_positions})")
        q_pos = self.positions[positions]
        for block in self.blocks:
            a = block(a, q_pos, key_mask, gen)
        return a


def encoder_forward(a, positions, encoder: Encoder, mode: str = "eval", gen=None) -> torch.Tensor:
    """Run ``encoder`` on a (n, d) or batched (..., n, d) sequence."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    encoder.train(mode == "train")
    return encoder(a, positions, gen=gen)


def gradient_of(loss: torch.Tensor, params: Iterable[torch.Tensor]) -> list[torch.Tensor]:
    if loss.numel() != 1:
        raise ValueError(f"gradient requested for a non-scalar of shape {tuple(loss.shape)}")
    params = list(params)
    grads = torch.autograd.grad(loss.reshape(()), params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


# -- optimisation ------------------------------------------------------------

@dataclass
class AdamWState:
    step: int
    m: list[torch.Tensor]
    v: list[torch.Tensor]

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor]) -> "AdamWState":
        return cls(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


@torch.no_grad()
def adamw_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> AdamWState:
    """In-place decoupled-weight-decay Adam update of ``params``."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        update = (m / c1) / (torch.sqrt(v / c2) + eps)
        p.sub_(lr * update + lr * weight_decay * p)
    return state


class PlateauHalver:
    """Halve the learning rate when the moving-average loss stalls.

    The average is taken over the last ``window`` losses; when it has not
    reached a new minimum for ``patience`` consecutive steps the rate is
    divided by ``factor`` and the stall counter restarts.
    """

    def __init__(self, lr: float, window: int, patience: int, factor: float = 2.0):
        self.lr = lr
        self.window = window
        self.patience = patience
        self.factor = factor
        self._buf: list[float] = []
        self._sum = 0.0
        self.best = math.inf
        self.stall = 0
        self.reductions = 0

    @property
    def average(self) -> float:
        return self._sum / len(self._buf) if self._buf else math.nan

    def update(self, loss: float) -> float:
        self._buf.append(loss)
        self._sum += loss
        if len(self._buf) > self.window:
            self._sum -= self._buf.pop(0)
        if len(self._buf) < self.window:
            return self.lr
        avg = self.average
        if avg < self.best:
            self.best = avg
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.patience:
                self.lr /= self.factor
                self.stall = 0
                self.reductions += 1
        return self.lr


# -- checkpoints ---------------------------------------------------------------

MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_checkpoint(directory, tensors: dict[str, torch.Tensor], meta: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / BLOB, "wb") as fh:
        for name, t in tensors.items():
            arr = t.detach().cpu().numpy().astype("<f8", copy=False)
            raw = np.ascontiguousarray(arr).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(raw)
    manifest = {"meta": meta or {}, "tensors": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, torch.Tensor], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    blob = (directory / BLOB).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    return tensors, manifest["meta"]


def config_dict(cfg) -> dict:
    return asdict(cfg)
