"""Structure-aware transformer over masked random-walk sequences.

A sequence is ``[CLS] w_1 ... w_L [SEP]``.  Each position gets its token
embedding plus a two-layer MLP projection of the node's return-probability
vector (zero for special tokens and masked positions).  A post-norm encoder
stack feeds a masked-node head and a ``[CLS]`` timestamp head whose weight
matrix ``W_TM`` (T x d) doubles as the graph-level embedding table.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .vocab import CLS, MASK, NUM_SPECIAL, SEP, Vocabulary
from .walks import WalkCorpus, WalkRecord


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    T: int
    d: int = 256
    layers: int = 8
    heads: int = 8
    k: int = 16
    mlp_hidden: int | None = None
    ff_mult: int = 4
    head_init_scale: float = 0.01  # timestamp head W_TM starts near zero

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.T < 1 or self.num_nodes < 1 or self.k < 1 or self.layers < 0:
            raise ValueError("invalid model dimensions")

    @property
    def vocab_size(self) -> int:
        return self.num_nodes + NUM_SPECIAL

    @property
    def hidden(self) -> int:
        return self.mlp_hidden or self.d

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# sequences


@dataclass
class TokenSequence:
    tokens: np.ndarray  # (L+2,)
    mask_positions: np.ndarray  # sorted 0-based positions in 1..L
    mlm_targets: np.ndarray  # original token at each masked position
    t: int  # 1-based snapshot index
    rwpe_rows: np.ndarray  # (L+2, k)


def num_masked(L: int, mask_rate: float) -> int:
    return min(L, math.ceil(mask_rate * L - 1e-12))


def choose_mask(L: int, mask_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Interior positions (0-based, within 1..L) to replace by [MASK]."""
    if not 0.0 < mask_rate < 1.0:
        raise ValueError("mask_rate must lie in (0, 1)")
    return np.sort(rng.choice(L, size=num_masked(L, mask_rate), replace=False)) + 1


def build_sequence(walk: WalkRecord, mask_rate: float, rng: np.random.Generator | None,
                   rpm: np.ndarray) -> TokenSequence:
    """Wrap a walk in [CLS]/[SEP], mask positions and attach RWPE rows.

    ``rng=None`` leaves the walk unmasked (used for scoring).
    """
    L = walk.nodes.size
    tokens = np.empty(L + 2, dtype=np.int64)
    tokens[0], tokens[-1] = CLS, SEP
    tokens[1:-1] = walk.nodes + NUM_SPECIAL
    rows = np.zeros((L + 2, rpm.shape[1]))
    rows[1:-1] = rpm[walk.nodes]
    pos = choose_mask(L, mask_rate, rng) if rng is not None else np.zeros(0, np.int64)
    targets = tokens[pos].copy()
    tokens[pos] = MASK
    rows[pos] = 0.0
    return TokenSequence(tokens, pos, targets, walk.t, rows)


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, L') int64
    rwpe: torch.Tensor  # (B, L', k)
    mlm_mask: torch.Tensor  # (B, L') bool
    mlm_targets: torch.Tensor  # (B, L') int64, meaningful where mlm_mask
    t: torch.Tensor  # (B,) 0-based snapshot labels

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


def collate(seqs: list[TokenSequence], dtype=torch.float32) -> Batch:
    tokens = np.stack([s.tokens for s in seqs])
    rwpe = np.stack([s.rwpe_rows for s in seqs])
    mask = np.zeros(tokens.shape, dtype=bool)
    targets = np.zeros(tokens.shape, dtype=np.int64)
    for i, s in enumerate(seqs):
        mask[i, s.mask_positions] = True
        targets[i, s.mask_positions] = s.mlm_targets
    return Batch(
        torch.from_numpy(tokens),
        torch.from_numpy(rwpe).to(dtype),
        torch.from_numpy(mask),
        torch.from_numpy(targets),
        torch.tensor([s.t - 1 for s in seqs], dtype=torch.int64),
    )


def mask_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0x6D61736B, epoch + 1, index])


def make_batch(corpus: WalkCorpus, idx, rpms: list[np.ndarray], mask_rate: float | None,
               seed: int = 0, epoch: int = 0, dtype=torch.float32) -> Batch:
    seqs = []
    for i in idx:
        rec = corpus[int(i)]
        rng = mask_rng(seed, epoch, int(i)) if mask_rate else None
        seqs.append(build_sequence(rec, mask_rate or 0.5, rng, rpms[rec.t - 1]))
    return collate(seqs, dtype)


# ---------------------------------------------------------------------------
# model


def _uniform(shape, scale: float, gen: torch.Generator) -> nn.Parameter:
    return nn.Parameter((torch.rand(shape, generator=gen) * 2.0 - 1.0) * scale)


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gamma + beta


class TransformerLayer(nn.Module):
    """Post-norm block: x = LN(x + MHA(x)); x = LN(x + FFN(x)), GELU inner width ff_mult*d."""

    def __init__(self, d: int, heads: int, ff_mult: int, gen: torch.Generator):
        super().__init__()
        self.d, self.heads = d, heads
        s = 1.0 / math.sqrt(d)
        self.W_q = _uniform((d, d), s, gen)
        self.W_k = _uniform((d, d), s, gen)
        self.W_v = _uniform((d, d), s, gen)
        self.W_o = _uniform((d, d), s, gen)
        self.b_q = nn.Parameter(torch.zeros(d))
        self.b_k = nn.Parameter(torch.zeros(d))
        self.b_v = nn.Parameter(torch.zeros(d))
        self.b_o = nn.Parameter(torch.zeros(d))
        self.ln1_g = nn.Parameter(torch.ones(d))
        self.ln1_b = nn.Parameter(torch.zeros(d))
        inner = ff_mult * d
        self.W_ff1 = _uniform((d, inner), s, gen)
        self.b_ff1 = nn.Parameter(torch.zeros(inner))
        self.W_ff2 = _uniform((inner, d), 1.0 / math.sqrt(inner), gen)
        self.b_ff2 = nn.Parameter(torch.zeros(d))
        self.ln2_g = nn.Parameter(torch.ones(d))
        self.ln2_b = nn.Parameter(torch.zeros(d))

    def attention(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, L, d = x.shape
        h, dh = self.heads, d // self.heads

        def split(y):
            return y.view(B, L, h, dh).transpose(1, 2)

        q = split(x @ self.W_q + self.b_q)
        k = split(x @ self.W_k + self.b_k)
        v = split(x @ self.W_v + self.b_v)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, L, d)
        return out @ self.W_o + self.b_o, att

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        a, att = self.attention(x)
        x = layer_norm(x + a, self.ln1_g, self.ln1_b)
        f = F.gelu(x @ self.W_ff1 + self.b_ff1) @ self.W_ff2 + self.b_ff2
        x = layer_norm(x + f, self.ln2_g, self.ln2_b)
        return (x, att) if return_attention else x


class StructuralEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        d, k, hid, V = cfg.d, cfg.k, cfg.hidden, cfg.vocab_size
        s = 1.0 / math.sqrt(d)
        self.W_tok = _uniform((V, d), s, gen)
        self.W1 = _uniform((hid, k), 1.0 / math.sqrt(k), gen)
        self.b1 = nn.Parameter(torch.zeros(hid))
        self.W2 = _uniform((d, hid), 1.0 / math.sqrt(hid), gen)
        self.b2 = nn.Parameter(torch.zeros(d))
        self.layers = nn.ModuleList(TransformerLayer(d, cfg.heads, cfg.ff_mult, gen) for _ in range(cfg.layers))
        self.W_p = _uniform((V, d), s, gen)
        self.b_p = nn.Parameter(torch.zeros(V))
        self.W_TM = _uniform((cfg.T, d), s * cfg.head_init_scale, gen)
        self.b_TM = nn.Parameter(torch.zeros(cfg.T))

    def project_rwpe(self, r: torch.Tensor) -> torch.Tensor:
        return torch.relu(r @ self.W1.T + self.b1) @ self.W2.T + self.b2

    def embed(self, tokens: torch.Tensor, rwpe: torch.Tensor) -> torch.Tensor:
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.cfg.vocab_size):
            raise IndexError("token id outside vocabulary")
        return self.W_tok[tokens] + self.project_rwpe(rwpe)

    def encode(self, X: torch.Tensor, return_attention: bool = False):
        atts = []
        H = X
        for layer in self.layers:
            if return_attention:
                H, a = layer(H, return_attention=True)
                atts.append(a)
            else:
                H = layer(H)
        return (H, atts) if return_attention else H

    def mlm_logits(self, H: torch.Tensor) -> torch.Tensor:
        return H @ self.W_p.T + self.b_p

    def timestamp_logits(self, H: torch.Tensor) -> torch.Tensor:
        return H[..., 0, :] @ self.W_TM.T + self.b_TM

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        H = self.encode(self.embed(batch.tokens, batch.rwpe))
        return self.mlm_logits(H), self.timestamp_logits(H)

    def load_state_dict(self, state, strict: bool = True, assign: bool = False):
        if "W_TM" in state and tuple(state["W_TM"].shape) != (self.cfg.T, self.cfg.d):
            raise ValueError(f"W_TM has shape {tuple(state['W_TM'].shape)}, expected ({self.cfg.T}, {self.cfg.d})")
        return super().load_state_dict(state, strict=strict, assign=assign)


# ---------------------------------------------------------------------------
# losses


def loss_mlm(logits: torch.Tensor, batch: Batch, norm: str = "sequence") -> torch.Tensor:
    """Masked-node cross-entropy.

    ``norm="sequence"`` sums over masked positions and averages over sequences;
    ``norm="position"`` averages over all masked positions in the batch.
    """
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, batch.mlm_targets.unsqueeze(-1)).squeeze(-1)
    nll = torch.where(batch.mlm_mask, nll, torch.zeros_like(nll))
    if norm == "sequence":
        return nll.sum(-1).mean()
    if norm == "position":
        return nll.sum() / batch.mlm_mask.sum().clamp(min=1)
    raise ValueError(f"unknown mlm normalization {norm!r}")


def loss_timestamp(logits: torch.Tensor, batch: Batch) -> torch.Tensor:
    return F.cross_entropy(logits, batch.t)


# ---------------------------------------------------------------------------
# gradient checking


class NonFiniteGradient(FloatingPointError):
    pass


def assert_finite_gradients(module: nn.Module) -> None:
    for name, p in module.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")


def finite_difference_check(params: dict[str, torch.Tensor], loss_fn, step: float = 1e-4,
                            atol: float = 1e-6) -> dict[str, float]:
    """Relative error between autograd and central differences, per tensor.

    The error of a tensor is ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``.
    When both norms are below ``atol`` (a gradient that vanishes identically,
    seen through rounding noise) the absolute difference is reported instead.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    auto = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for n, p in params.items()}
    errors = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                fd[i] = (up - down) / (2 * step)
            a = auto[name].view(-1)
            denom = max(a.norm().item(), fd.norm().item())
            diff = (a - fd).norm().item()
            errors[name] = diff if denom < atol else diff / denom
    return errors
