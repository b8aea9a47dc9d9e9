"""Time-domain filter-and-sum beamformer with cross-channel self-attention.

Shapes use B for batch, C channels, F encoder feature maps, W context
positions, N encoded frames, h the DPRNN feature size, K chunk length and S
number of chunks.

Pipeline::

    x (B, C, T)
      -> encoder conv + context stacking        ctx (B, C, F, W, N)
      -> NCC vs the reference channel           ncc (B, C, W, N)
      -> compression LSTM, append NCC, project  emb (B, C, h, N)
      -> segment, [intra/inter RNN + attention] x n_blocks, overlap-add
      -> decompression LSTM + 1x1 conv          filters (B, C, F, W, N)
      -> filter-and-sum over C and W            latent (B, F, N)
      -> transposed-conv decoder                y (B, T)
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)


@dataclass
class BeamformerConfig:
    n_channels: int = 8
    encoder_kernel: int = 256
    encoder_stride: int = 128
    encoder_pad: int = 192
    feature_dim: int = 64
    context_per_side: int = 2
    compress_hidden: int = 64
    dprnn_feature: int = 64
    dprnn_hidden: int = 240
    n_dprnn_blocks: int = 3
    dprnn_chunk_len: int = 50
    attention_heads: int = 2
    attention_dim: int = 64
    attention_scale: bool = False
    decompress_hidden: int = 128
    reference_channel: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("attention_scale", "reference_channel", "context_per_side"):
                continue
            if v <= 0:
                raise ValueError(f"BeamformerConfig.{f.name} must be positive, got {v}")
        if self.context_per_side < 0:
            raise ValueError("context_per_side must be non-negative")
        if not 0 <= self.reference_channel < self.n_channels:
            raise ValueError(f"reference_channel {self.reference_channel} out of range for {self.n_channels} channels")

    @property
    def context_width(self) -> int:
        return 2 * self.context_per_side + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples + 2 * self.encoder_pad - self.encoder_kernel) // self.encoder_stride

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BeamformerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown beamformer config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **overrides) -> "BeamformerConfig":
        """Small two-channel configuration used for CPU-scale experiments."""
        cfg = dict(
            n_channels=2,
            feature_dim=64,
            compress_hidden=64,
            dprnn_feature=64,
            dprnn_hidden=64,
            n_dprnn_blocks=2,
            dprnn_chunk_len=24,
            attention_heads=2,
            attention_dim=32,
            decompress_hidden=64,
        )
        cfg.update(overrides)
        return cls(**cfg)


def stack_context(enc: torch.Tensor, context: int) -> torch.Tensor:
    """(..., F, N) -> (..., F, 2*context + 1, N); position ``context`` is the frame itself."""
    n = enc.shape[-1]
    padded = F.pad(enc, (context, context))
    return torch.stack([padded[..., w : w + n] for w in range(2 * context + 1)], dim=-2)


def ncc_features(ctx: torch.Tensor, reference: int = 0) -> torch.Tensor:
    """Cosine similarity between the reference channel's centre frame and
    every channel's frames at each context position.

    ctx: (B, C, F, W, N) -> (B, C, W, N). Zero-norm frames give 0.
    """
    if not 0 <= reference < ctx.shape[1]:
        raise ValueError(f"reference channel {reference} out of range for {ctx.shape[1]} channels")
    # cosine similarity is per-vector scale invariant; dividing each frame by
    # its peak first keeps the squared norms away from overflow and underflow
    peak = ctx.detach().abs().amax(dim=2, keepdim=True)
    ctx = ctx / torch.where(peak > 0, peak, torch.ones_like(peak))
    center = ctx.shape[3] // 2
    ref = ctx[:, reference : reference + 1, :, center : center + 1, :]  # B, 1, F, 1, N
    dot = (ref * ctx).sum(2)
    ref_sq = (ref**2).sum(2)
    ctx_sq = (ctx**2).sum(2)
    ok = (ref_sq > 0) & (ctx_sq > 0)
    # where() on both branches keeps sqrt gradients finite at exact zeros
    denom = torch.sqrt(torch.where(ok, ref_sq * ctx_sq, torch.ones_like(ctx_sq)))
    return torch.where(ok, dot / denom, torch.zeros_like(dot))


def filter_and_sum(filters: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
    """(B, C, F, W, N) x (B, C, F, W, N) -> (B, F, N), summed over channels and context."""
    if filters.shape != ctx.shape:
        raise ValueError(f"filters {tuple(filters.shape)} do not match context {tuple(ctx.shape)}")
    return (filters * ctx).sum(dim=(1, 3))


def segment(x: torch.Tensor, chunk_len: int):
    """Split (..., h, N) into 50%-overlapping chunks (..., h, K, S).

    Returns the chunks and the original length. If N < chunk_len the whole
    sequence becomes a single chunk.
    """
    n = x.shape[-1]
    if n < chunk_len:
        logger.info("sequence of %d frames shorter than chunk length %d; using one chunk", n, chunk_len)
        return x.unsqueeze(-1), n
    hop = max(chunk_len // 2, 1)
    n_chunks = 1 + math.ceil((n - chunk_len) / hop)
    padded = F.pad(x, (0, (n_chunks - 1) * hop + chunk_len - n))
    return padded.unfold(-1, chunk_len, hop).transpose(-1, -2), n


def merge(chunks: torch.Tensor, length: int) -> torch.Tensor:
    """Inverse of :func:`segment`: overlap-add normalised by per-frame coverage."""
    k, s = chunks.shape[-2], chunks.shape[-1]
    if s == 1:
        return chunks[..., 0][..., :length]
    hop = max(k // 2, 1)
    total = (s - 1) * hop + k
    lead = chunks.shape[:-2]
    flat = chunks.reshape(-1, k, s)
    out = F.fold(flat, (1, total), (1, k), stride=(1, hop)).reshape(*lead, total)
    ones = torch.ones(1, k, s, dtype=chunks.dtype, device=chunks.device)
    count = F.fold(ones, (1, total), (1, k), stride=(1, hop)).reshape(total)
    return (out / count)[..., :length]


class ChannelAttention(nn.Module):
    """Multi-head dot-product attention across the channel axis.

    For each head ``i``: ``Q = W_Q z + b_Q`` (same for K, V), attention
    ``A = softmax(Q^T K)`` over channels, ``y = V A^T``. The concatenated head
    outputs go through a fully connected layer with ReLU and are added back
    to the input.
    """

    def __init__(self, hidden: int, n_heads: int = 2, embed_dim: int = 64, scale: bool = False):
        super().__init__()
        self.hidden, self.n_heads, self.embed_dim, self.scale = hidden, n_heads, embed_dim, scale
        self.w_q = nn.Parameter(torch.empty(n_heads, embed_dim, hidden))
        self.w_k = nn.Parameter(torch.empty(n_heads, embed_dim, hidden))
        self.w_v = nn.Parameter(torch.empty(n_heads, embed_dim, hidden))
        self.b_q = nn.Parameter(torch.empty(n_heads, embed_dim))
        self.b_k = nn.Parameter(torch.empty(n_heads, embed_dim))
        self.b_v = nn.Parameter(torch.empty(n_heads, embed_dim))
        self.fc = nn.Linear(n_heads * embed_dim, hidden)
        bound = 1.0 / math.sqrt(hidden)
        for p in (self.w_q, self.w_k, self.w_v, self.b_q, self.b_k, self.b_v):
            nn.init.uniform_(p, -bound, bound)

    def weights(self, z: torch.Tensor) -> torch.Tensor:
        """Attention matrices (..., D, C, C) for states z (..., C, h); rows sum to 1."""
        q = torch.einsum("...ch,deh->...dce", z, self.w_q) + self.b_q[:, None, :]
        k = torch.einsum("...ch,deh->...dce", z, self.w_k) + self.b_k[:, None, :]
        scores = q @ k.transpose(-1, -2)
        if self.scale:
            scores = scores / math.sqrt(self.embed_dim)
        return torch.softmax(scores, dim=-1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.hidden:
            raise ValueError(f"state size {z.shape[-1]} does not match attention hidden size {self.hidden}")
        v = torch.einsum("...ch,deh->...dce", z, self.w_v) + self.b_v[:, None, :]
        y = self.weights(z) @ v  # ..., D, C, E
        y = y.transpose(-3, -2).reshape(*z.shape[:-1], self.n_heads * self.embed_dim)
        return z + F.relu(self.fc(y))


class _PathRNN(nn.Module):
    """BiLSTM + linear projection + layer norm, with a residual connection."""

    def __init__(self, feature: int, hidden: int):
        super().__init__()
        self.rnn = nn.LSTM(feature, hidden, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * hidden, feature)
        self.norm = nn.LayerNorm(feature)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, seq, feature)
        out, _ = self.rnn(x)
        return x + self.norm(self.proj(out))


class DualPathBlock(nn.Module):
    """Intra-chunk and inter-chunk recurrence followed by channel attention.

    Operates on chunked tensors (B, C, h, K, S).
    """

    def __init__(self, feature: int, hidden: int, n_heads: int, embed_dim: int, scale: bool = False):
        super().__init__()
        self.intra = _PathRNN(feature, hidden)
        self.inter = _PathRNN(feature, hidden)
        self.attention = ChannelAttention(feature, n_heads, embed_dim, scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, k, s = x.shape
        # intra: sequences along K
        y = x.permute(0, 1, 4, 3, 2).reshape(b * c * s, k, h)
        y = self.intra(y).reshape(b, c, s, k, h)
        # inter: sequences along S
        y = y.transpose(2, 3).reshape(b * c * k, s, h)
        y = self.inter(y).reshape(b, c, k, s, h)
        # attention across channels at every (chunk position, chunk)
        y = self.attention(y.permute(0, 2, 3, 1, 4))  # B, K, S, C, h
        return y.permute(0, 3, 4, 1, 2).contiguous()


def _init_recurrent(module: nn.Module) -> None:
    for name, p in module.named_parameters():
        if "weight_hh" in name:
            for gate in p.data.chunk(4, dim=0):
                nn.init.orthogonal_(gate)


class AFaSNet(nn.Module):
    """Filter-and-sum network with attention between dual-path blocks."""

    def __init__(self, cfg: BeamformerConfig):
        super().__init__()
        self.cfg = cfg
        fdim, w = cfg.feature_dim, cfg.context_width
        self.encoder = nn.Conv1d(1, fdim, cfg.encoder_kernel, stride=cfg.encoder_stride)
        self.compress = nn.LSTM(fdim * w, cfg.compress_hidden, batch_first=True)
        self.embed = nn.Linear(cfg.compress_hidden + w, cfg.dprnn_feature)
        self.blocks = nn.ModuleList(
            DualPathBlock(cfg.dprnn_feature, cfg.dprnn_hidden, cfg.attention_heads, cfg.attention_dim, cfg.attention_scale)
            for _ in range(cfg.n_dprnn_blocks)
        )
        self.decompress = nn.LSTM(cfg.dprnn_feature, cfg.decompress_hidden, batch_first=True)
        self.filter_out = nn.Conv1d(cfg.decompress_hidden, fdim * w, 1)
        self.decoder = nn.ConvTranspose1d(fdim, 1, cfg.encoder_kernel, stride=cfg.encoder_stride)
        _init_recurrent(self)

    # -- stages -----------------------------------------------------------
    def context_encode(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, T) -> (B, C, F, W, N)."""
        cfg = self.cfg
        if x.dim() != 3 or x.shape[1] != cfg.n_channels:
            raise ValueError(f"expected input (B, {cfg.n_channels}, T), got {tuple(x.shape)}")
        b, c, t = x.shape
        padded = F.pad(x.reshape(b * c, 1, t), (cfg.encoder_pad, cfg.encoder_pad))
        enc = self.encoder(padded)  # B*C, F, N
        ctx = stack_context(enc, cfg.context_per_side)
        return ctx.reshape(b, c, *ctx.shape[1:])

    def embed_channels(self, ctx: torch.Tensor, ncc: torch.Tensor) -> torch.Tensor:
        """Compression LSTM over frames, NCC appended, projected: -> (B, C, h, N)."""
        b, c, fdim, w, n = ctx.shape
        seq = ctx.reshape(b * c, fdim * w, n).transpose(1, 2)
        comp, _ = self.compress(seq)  # B*C, N, H
        feats = torch.cat([comp, ncc.reshape(b * c, w, n).transpose(1, 2)], dim=-1)
        return self.embed(feats).transpose(1, 2).reshape(b, c, -1, n)

    def dual_path(self, emb: torch.Tensor) -> torch.Tensor:
        chunks, n = segment(emb, self.cfg.dprnn_chunk_len)
        for block in self.blocks:
            chunks = block(chunks)
        return merge(chunks, n)

    def estimate_filters(self, processed: torch.Tensor) -> torch.Tensor:
        """(B, C, h, N) -> (B, C, F, W, N)."""
        cfg = self.cfg
        b, c, h, n = processed.shape
        if c != cfg.n_channels or h != cfg.dprnn_feature:
            raise ValueError(
                f"processed tensor {tuple(processed.shape)} does not match (B, {cfg.n_channels}, {cfg.dprnn_feature}, N)"
            )
        out, _ = self.decompress(processed.reshape(b * c, h, n).transpose(1, 2))
        filt = self.filter_out(out.transpose(1, 2))  # B*C, F*W, N
        return filt.reshape(b, c, cfg.feature_dim, cfg.context_width, n)

    def decode(self, latent: torch.Tensor, length: int) -> torch.Tensor:
        """(B, F, N) -> (B, length)."""
        pad = self.cfg.encoder_pad
        y = self.decoder(latent)[:, 0]
        if y.shape[-1] < pad + length:
            raise ValueError(f"latent with {latent.shape[-1]} frames cannot cover {length} samples")
        return y[:, pad : pad + length]

    # -- full model -------------------------------------------------------
    def forward(self, x: torch.Tensor, trace: dict | None = None) -> torch.Tensor:
        """(B, C, T) -> (B, T). If ``trace`` is a dict, intermediates are stored in it."""
        ctx = self.context_encode(x)
        ncc = ncc_features(ctx, self.cfg.reference_channel)
        emb = self.embed_channels(ctx, ncc)
        processed = self.dual_path(emb)
        filters = self.estimate_filters(processed)
        latent = filter_and_sum(filters, ctx)
        y = self.decode(latent, x.shape[-1])
        if trace is not None:
            trace.update(context=ctx, ncc=ncc, embeddings=emb, processed=processed, filters=filters, latent=latent)
        return y


def dprnn_block(embeddings: torch.Tensor, block: DualPathBlock, chunk_len: int) -> torch.Tensor:
    """Run one dual-path block on (B, C, h, N) embeddings; shape preserved."""
    chunks, n = segment(embeddings, chunk_len)
    return merge(block(chunks), n)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}


def load_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    """Copy named arrays into ``model``; raises with a per-tensor diff on mismatch."""
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    got = {k: tuple(np.shape(v)) for k, v in arrays.items()}
    if expected != got:
        lines = []
        for k in sorted(set(expected) | set(got)):
            e, g = expected.get(k), got.get(k)
            if e != g:
                lines.append(f"  {k}: model {e} vs checkpoint {g}")
        raise ValueError("checkpoint does not match model:\n" + "\n".join(lines))
    dtype = next(iter(model.state_dict().values())).dtype
    model.load_state_dict({k: torch.as_tensor(np.asarray(v)).to(dtype) for k, v in arrays.items()})


def build(checkpoint) -> AFaSNet:
    """Instantiate an :class:`AFaSNet` from a checkpoint."""
    if checkpoint.kind != "beamformer":
        raise ValueError(f"expected a beamformer checkpoint, got {checkpoint.kind!r}")
    model = AFaSNet(BeamformerConfig.from_dict(checkpoint.config))
    load_arrays(model, checkpoint.tensors)
    return model.eval()


def beamform(x, checkpoint, model: AFaSNet | None = None) -> np.ndarray:
    """Beamform a (C, T) mixture with the model stored in ``checkpoint``."""
    model = model or build(checkpoint)
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != model.cfg.n_channels:
        raise ValueError(f"mixture shape {x.shape} does not match a {model.cfg.n_channels}-channel model")
    with torch.no_grad():
        y = model(torch.from_numpy(x)[None])
    return y[0].numpy()
