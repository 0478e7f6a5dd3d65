# Core/neural.py

"""
Small transformer building blocks used by both the relevance scorer and the QA
model: shared token embedding, sinusoidal positions, a bidirectional encoder,
a causal decoder with cross-attention, cross entropy, greedy / beam decoding,
and a finite-difference gradient check.

Layers are pre-LayerNorm with GELU feed-forward blocks and no dropout, so a
forward pass is a pure function of (parameters, inputs, noise).
"""
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

logger = get_logger()


@dataclass
class ModelDims:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: Optional[int] = None        # defaults to 4 * d_model
    max_len: int = 2048
    use_positions: bool = True

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")


# ─── Embeddings ───

class PositionalEncoding(nn.Module):
    """Fixed sinusoidal table; `enabled=False` turns it into zeros."""

    def __init__(self, d_model: int, max_len: int = 2048, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
        div_term = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(position * div_term)
        pe[:, 1::2] = torch.cos(position * div_term)[:, : d_model // 2]
        self.register_buffer("pe", pe)

    def forward(self, length: int) -> torch.Tensor:
        if length > self.pe.shape[0]:
            raise ValueError(f"Sequence length {length} exceeds positional table size {self.pe.shape[0]}")
        if not self.enabled:
            return torch.zeros_like(self.pe[:length])
        return self.pe[:length]


def embed(tokens: torch.Tensor, embedding: nn.Embedding,
          positional: Optional[PositionalEncoding] = None) -> torch.Tensor:
    """(B, L) ids -> (B, L, d) token (+ positional) embeddings."""
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= embedding.num_embeddings):
        raise IndexError(f"Token id out of range [0, {embedding.num_embeddings})")
    vectors = embedding(tokens)
    if positional is not None:
        vectors = vectors + positional(tokens.shape[-1]).to(vectors.dtype)
    return vectors


# ─── Attention ───

class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.d_model = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key_value, key_padding_mask=None, causal: bool = False):
        """
        query: (B, Lq, d); key_value: (B, Lk, d)
        key_padding_mask: (B, Lk) bool, True marks padding
        """
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key_value))
        v = self._split(self.v_proj(key_value))
        energy = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)

        blocked = None
        if key_padding_mask is not None:
            blocked = key_padding_mask[:, None, None, :]
        if causal:
            lq, lk = energy.shape[-2:]
            future = torch.ones(lq, lk, dtype=torch.bool, device=energy.device).triu(1)
            blocked = future if blocked is None else (blocked | future)
        if blocked is not None:
            energy = energy.masked_fill(blocked, torch.finfo(energy.dtype).min)

        attention = torch.softmax(energy, dim=-1)
        out = torch.matmul(attention, v).transpose(1, 2).contiguous()
        return self.out_proj(out.view(query.shape[0], query.shape[1], self.d_model))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attention = MultiHeadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.feed_forward = FeedForward(d_model, d_ff)

    def forward(self, x, pad_mask=None):
        h = self.norm1(x)
        x = x + self.attention(h, h, pad_mask)
        return x + self.feed_forward(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attention = MultiHeadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross_attention = MultiHeadAttention(d_model, n_heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.feed_forward = FeedForward(d_model, d_ff)

    def forward(self, y, memory, memory_pad_mask=None):
        h = self.norm1(y)
        y = y + self.self_attention(h, h, causal=True)
        y = y + self.cross_attention(self.norm2(y), memory, memory_pad_mask)
        return y + self.feed_forward(self.norm3(y))


class TransformerEncoder(nn.Module):
    """Full (non-causal) self-attention stack; shape-preserving."""

    def __init__(self, d_model: int, n_heads: int, n_layers: int, d_ff: int):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_model)

    def forward(self, x, pad_mask=None):
        for layer in self.layers:
            x = layer(x, pad_mask)
        return self.final_norm(x)


class TransformerDecoder(nn.Module):
    """
    Causal decoder reading the shared token embedding; returns vocabulary logits.
    """

    def __init__(self, embedding: nn.Embedding, positional: PositionalEncoding,
                 d_model: int, n_heads: int, n_layers: int, d_ff: int):
        super().__init__()
        self.embedding = embedding
        self.positional = positional
        self.layers = nn.ModuleList(DecoderLayer(d_model, n_heads, d_ff) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_model)
        self.output = nn.Linear(d_model, embedding.num_embeddings)

    def forward(self, prefix_ids, memory, memory_pad_mask=None):
        y = embed(prefix_ids, self.embedding, self.positional)
        for layer in self.layers:
            y = layer(y, memory, memory_pad_mask)
        return self.output(self.final_norm(y))


def encode(embeddings: torch.Tensor, encoder: TransformerEncoder, pad_mask=None) -> torch.Tensor:
    return encoder(embeddings, pad_mask)


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


# ─── Loss ───

def cross_entropy_loss(logits: torch.Tensor, gold: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Mean token cross entropy over non-pad gold positions."""
    if logits.shape[:-1] != gold.shape:
        raise ValueError(f"Logits {tuple(logits.shape)} and gold tokens {tuple(gold.shape)} are not aligned")
    if not bool((gold != pad_id).any()):
        raise ValueError("Gold sequence contains only padding")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), gold.reshape(-1), ignore_index=pad_id)


# ─── Decoding ───

def _strip(ids: Sequence[int], eos_id: int) -> List[int]:
    out = []
    for idx in ids:
        if idx == eos_id:
            break
        out.append(int(idx))
    return out


@torch.no_grad()
def _greedy(memory, decoder, max_len, bos_id, eos_id, memory_pad_mask):
    batch = memory.shape[0]
    ids = torch.full((batch, 1), bos_id, dtype=torch.long, device=memory.device)
    finished = torch.zeros(batch, dtype=torch.bool, device=memory.device)
    for _ in range(max_len):
        next_ids = decoder(ids, memory, memory_pad_mask)[:, -1].argmax(dim=-1)
        next_ids = torch.where(finished, torch.full_like(next_ids, eos_id), next_ids)
        ids = torch.cat([ids, next_ids[:, None]], dim=1)
        finished |= next_ids == eos_id
        if bool(finished.all()):
            break
    return [_strip(row[1:].tolist(), eos_id) for row in ids]


@torch.no_grad()
def _beam(memory, decoder, max_len, bos_id, eos_id, beam_size, memory_pad_mask):
    results = []
    for b in range(memory.shape[0]):
        mem = memory[b:b + 1]
        mask = memory_pad_mask[b:b + 1] if memory_pad_mask is not None else None
        beams = [(0.0, [bos_id], False)]
        for _ in range(max_len):
            live = [beam for beam in beams if not beam[2]]
            if not live:
                break
            prefix = torch.tensor([ids for _, ids, _ in live], dtype=torch.long, device=memory.device)
            log_probs = torch.log_softmax(
                decoder(prefix, mem.expand(len(live), -1, -1),
                        mask.expand(len(live), -1) if mask is not None else None)[:, -1], dim=-1)
            top_lp, top_ids = log_probs.topk(min(beam_size, log_probs.shape[-1]), dim=-1)
            candidates = [beam for beam in beams if beam[2]]
            for k, (score, ids, _) in enumerate(live):
                for lp, idx in zip(top_lp[k].tolist(), top_ids[k].tolist()):
                    candidates.append((score + lp, ids + [idx], idx == eos_id))
            candidates.sort(key=lambda c: c[0], reverse=True)
            beams = candidates[:beam_size]
        best = max(beams, key=lambda c: c[0])
        results.append(_strip(best[1][1:], eos_id))
    return results


def decode_generate(memory: torch.Tensor, decoder: TransformerDecoder, max_len: int,
                    bos_id: int, eos_id: int, memory_pad_mask=None, beam_size: int = 1) -> List[List[int]]:
    """
    Generate answer ids (begin/end markers stripped) for each batch element.
    beam_size == 1 is greedy decoding.
    """
    if max_len <= 0:
        return [[] for _ in range(memory.shape[0])]
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if beam_size == 1:
        return _greedy(memory, decoder, max_len, bos_id, eos_id, memory_pad_mask)
    logger.debug_at_level(DEBUG_L3, "Decoder", f"Beam search with width {beam_size} over {memory.shape[0]} inputs")
    return _beam(memory, decoder, max_len, bos_id, eos_id, beam_size, memory_pad_mask)


# ─── Gradient check ───

def grad_check(f: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], eps: float = 1e-5,
               n_samples: int = 30, seed: int = 0, abs_floor: float = 1e-4) -> float:
    """
    Max relative error between autograd and central finite differences over
    `n_samples` randomly chosen parameter coordinates. `f` must be deterministic.
    Relative error is |a - n| / max(|a|, |n|, abs_floor).
    """
    params = [p for p in params if p.requires_grad]
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat in coords:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        index = int(flat - offsets[which])
        view = params[which].data.view(-1)
        original = view[index].item()
        with torch.no_grad():
            view[index] = original + eps
            plus = f().item()
            view[index] = original - eps
            minus = f().item()
            view[index] = original
        numeric = (plus - minus) / (2 * eps)
        analytic = grads[which].reshape(-1)[index].item()
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), abs_floor)
        worst = max(worst, err)
        logger.debug_at_level(DEBUG_L3, "GradCheck", f"param {which}[{index}] analytic={analytic:.6e} numeric={numeric:.6e}")
    logger.debug_at_level(DEBUG_L2, "GradCheck", f"Checked {len(coords)} coordinates, max relative error {worst:.3e}")
    return worst
