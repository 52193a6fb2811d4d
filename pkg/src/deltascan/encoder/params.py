"""Frozen encoder weights.

No training happens anywhere: every matrix is drawn once from a seeded
generator (uniform scaled by 1/sqrt(fan_in); attention random-feature
matrices are block-orthogonal Gaussian) and never updated, so outputs are
bit-reproducible for equal (seed, config). Parameters for the ablation
variants (pooling over 96- or 64-dim inputs, projections up to the block
dimension) are drawn unconditionally so every variant shares one params
object.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptFile
from .config import EmbeddingConfig

_MAGIC = b"DSEP"
_VERSION = 1


def _uniform(rng, shape, fan_in):
    scale = 1.0 / np.sqrt(fan_in)
    return ((rng.random(shape) * 2.0 - 1.0) * scale).astype(np.float32)


def _orthogonal_features(rng, num_features: int, dim: int) -> np.ndarray:
    """Block-orthogonal Gaussian rows (num_features x dim), norms chi(dim)."""
    blocks = []
    remaining = num_features
    while remaining > 0:
        gauss = rng.standard_normal((dim, dim))
        q, _ = np.linalg.qr(gauss)
        norms = np.linalg.norm(rng.standard_normal((dim, dim)), axis=1)
        blocks.append(q * norms[:, None])
        remaining -= dim
    return np.concatenate(blocks, axis=0)[:num_features].astype(np.float32)


@dataclass(frozen=True)
class EncoderParams:
    config: EmbeddingConfig
    input_proj: np.ndarray      # word_dim -> seq_dim
    input_bias: np.ndarray
    word_to_seq: np.ndarray     # fallback / no-sequence projection
    seq_layers: tuple           # per-layer dict of arrays
    gat_layers: tuple           # per-layer dict of arrays
    pool: dict                  # input dim -> (W, a)
    block_proj: dict            # input dim -> projection to block_dim


def init_params(config: EmbeddingConfig | None = None,
                seed: int | None = None) -> EncoderParams:
    config = config or EmbeddingConfig()
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    d_s, d_w, d_g = config.seq_dim, config.word_dim, config.graph_dim
    head_dim = d_s // config.seq_heads

    input_proj = _uniform(rng, (d_w, d_s), d_w)
    input_bias = np.zeros(d_s, dtype=np.float32)
    word_to_seq = _uniform(rng, (d_w, d_s), d_w)

    seq_layers = []
    for _ in range(config.seq_layers):
        layer = {
            "wq": _uniform(rng, (d_s, d_s), d_s),
            "wk": _uniform(rng, (d_s, d_s), d_s),
            "wv": _uniform(rng, (d_s, d_s), d_s),
            "wo": _uniform(rng, (d_s, d_s), d_s),
            "omega": np.stack([
                _orthogonal_features(rng, config.num_random_features, head_dim)
                for _ in range(config.seq_heads)]),
            "w1": _uniform(rng, (d_s, config.ff_dim), d_s),
            "b1": np.zeros(config.ff_dim, dtype=np.float32),
            "w2": _uniform(rng, (config.ff_dim, d_s), config.ff_dim),
            "b2": np.zeros(d_s, dtype=np.float32),
            "ln1_g": np.ones(d_s, dtype=np.float32),
            "ln1_b": np.zeros(d_s, dtype=np.float32),
            "ln2_g": np.ones(d_s, dtype=np.float32),
            "ln2_b": np.zeros(d_s, dtype=np.float32),
        }
        seq_layers.append(layer)

    gat_layers = []
    in_dim = d_s
    for layer_idx, heads in enumerate(config.gat_heads):
        head_out = d_g // heads
        gat_layers.append({
            "w": np.stack([_uniform(rng, (in_dim, head_out), in_dim)
                           for _ in range(heads)]),
            "a_src": _uniform(rng, (heads, head_out), head_out),
            "a_dst": _uniform(rng, (heads, head_out), head_out),
        })
        # heads concatenated except the final layer, which averages
        in_dim = d_g if layer_idx < len(config.gat_heads) - 1 else d_g
    pool = {}
    for dim in sorted({d_g, d_s, d_w}):
        pool[dim] = (_uniform(rng, (config.pool_hidden, dim), dim),
                     _uniform(rng, (config.pool_hidden,), config.pool_hidden))
    block_proj = {}
    for dim in sorted({d_s, d_w} - {config.block_dim}):
        block_proj[dim] = _uniform(rng, (dim, config.block_dim), dim)

    return EncoderParams(config, input_proj, input_bias, word_to_seq,
                         tuple(seq_layers), tuple(gat_layers), pool, block_proj)


def save_params(params: EncoderParams, path, seed: int | None = None) -> None:
    """Persist the generating seed and config; weights are re-derived on
    load, which keeps the artifact tiny and auditable."""
    cfg = params.config
    seed = cfg.seed if seed is None else seed
    fields = (cfg.word_dim, cfg.seq_dim, cfg.graph_dim, cfg.block_dim,
              cfg.window, cfg.seq_layers, cfg.seq_heads, cfg.gat_layers,
              cfg.m_max, cfg.pool_hidden, cfg.seed,
              cfg.num_random_features, cfg.ff_dim, seed)
    payload = struct.pack("<14I", *fields)
    payload += struct.pack("<%dI" % len(cfg.gat_heads), *cfg.gat_heads)
    payload += struct.pack("<dd", cfg.alpha, cfg.clip_cap)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HH", _VERSION, len(cfg.gat_heads)))
        fh.write(payload)


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CorruptFile("bad params magic")
    version, n_gat = struct.unpack("<HH", data[4:8])
    if version != _VERSION:
        raise CorruptFile(f"unsupported params version {version}")
    try:
        fields = struct.unpack("<14I", data[8:8 + 56])
        gat_heads = struct.unpack("<%dI" % n_gat, data[64:64 + 4 * n_gat])
        alpha, clip_cap = struct.unpack("<dd", data[64 + 4 * n_gat:80 + 4 * n_gat])
    except struct.error as exc:
        raise CorruptFile(f"truncated params file: {exc}") from exc
    (word_dim, seq_dim, graph_dim, block_dim, window, seq_layers, seq_heads,
     gat_layers, m_max, pool_hidden, cfg_seed, nrf, ff_dim, seed) = fields
    config = EmbeddingConfig(
        word_dim=word_dim, seq_dim=seq_dim, graph_dim=graph_dim,
        block_dim=block_dim, window=window, seq_layers=seq_layers,
        seq_heads=seq_heads, gat_layers=gat_layers, gat_heads=tuple(gat_heads),
        alpha=alpha, clip_cap=clip_cap, m_max=m_max, pool_hidden=pool_hidden,
        seed=cfg_seed, num_random_features=nrf, ff_dim=ff_dim)
    return init_params(config, seed)
