"""The multi-view segmentation network.

A small shared-weight convolutional stem produces stride-4 mask features
and stride-16 context tokens per view. An image-level decoder refines
learnable queries against each view independently; the association module
turns the full view's embeddings into batch queries shared by all views;
the batch-level decoder refines those against the concatenated context of
every view. Two prediction heads (image, batch) map embeddings to
entityness logits and, via 1x1 filters over the mask features, to mask
logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grad import Tensor, ops
from .grad.tensor import default_dtype


@dataclass
class ModelConfig:
    num_queries: int = 20
    embed_dim: int = 64
    dec_layers: int = 3
    num_heads: int = 4
    ffn_mult: int = 2
    enc_widths: tuple = (16, 32, 64, 64)
    input_size: int = 256
    assoc_self_att: bool = True
    assoc_ffn: bool = True

    def validate(self):
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.input_size % 16 != 0:
            raise ConfigurationError(
                f"input_size {self.input_size} must be divisible by 16")
        if len(self.enc_widths) != 4:
            raise ConfigurationError("enc_widths must have 4 stages")
        return self

    @property
    def mask_size(self):
        return self.input_size // 4

    @property
    def context_size(self):
        return self.input_size // 16


@dataclass
class PredictionSet:
    """Entityness and mask logits at both prediction levels (Tensors)."""

    ent_image: Tensor   # (B, T, N)
    mask_image: Tensor  # (B, T, N, h, w)
    ent_batch: Tensor   # (B, N)
    mask_batch: Tensor  # (B, T, N, h, w)
    emb_image: Tensor = None  # (B, T, N, K)
    emb_batch: Tensor = None  # (B, N, K)


def positional_encoding(hs: int, ws: int, dim: int) -> np.ndarray:
    """Fixed 2D sinusoidal embedding for a (hs, ws) token grid."""
    half = dim // 2
    def axis_pe(length, d):
        pos = np.arange(length, dtype=np.float64)[:, None]
        i = np.arange(d // 2, dtype=np.float64)[None, :]
        ang = pos / np.power(10000.0, 2 * i / d)
        pe = np.zeros((length, d))
        pe[:, 0::2] = np.sin(ang)
        pe[:, 1::2] = np.cos(ang)
        return pe
    py = axis_pe(hs, half)[:, None, :].repeat(ws, axis=1)
    px = axis_pe(ws, dim - half)[None, :, :].repeat(hs, axis=0)
    return np.concatenate([py, px], axis=-1).reshape(hs * ws, dim).astype(default_dtype())


class MultiViewModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))
        self._pe_cache = {}

    # -- parameters ---------------------------------------------------------

    def _add(self, name, arr):
        t = Tensor(np.asarray(arr, dtype=default_dtype()), requires_grad=True)
        self.params[name] = t
        return t

    def _conv_init(self, name, cout, cin, k, rng):
        std = np.sqrt(2.0 / (cin * k * k))
        self._add(f"{name}.w", rng.standard_normal((cout, cin, k, k)) * std)
        self._add(f"{name}.b", np.zeros(cout))

    def _linear_init(self, name, fin, fout, rng):
        std = np.sqrt(2.0 / (fin + fout))
        self._add(f"{name}.w", rng.standard_normal((fin, fout)) * std)
        self._add(f"{name}.b", np.zeros(fout))

    def _ln_init(self, name):
        k = self.cfg.embed_dim
        self._add(f"{name}.g", np.ones(k))
        self._add(f"{name}.b", np.zeros(k))

    def _att_init(self, name, rng):
        k = self.cfg.embed_dim
        for part in ("wq", "wk", "wv", "wo"):
            self._linear_init(f"{name}.{part}", k, k, rng)

    def _block_init(self, prefix, rng):
        k, fk = self.cfg.embed_dim, self.cfg.embed_dim * self.cfg.ffn_mult
        self._att_init(f"{prefix}.xatt", rng)
        self._ln_init(f"{prefix}.ln1")
        self._att_init(f"{prefix}.satt", rng)
        self._ln_init(f"{prefix}.ln2")
        self._linear_init(f"{prefix}.ffn.fc1", k, fk, rng)
        self._linear_init(f"{prefix}.ffn.fc2", fk, k, rng)
        self._ln_init(f"{prefix}.ln3")

    def _init_params(self, rng):
        c1, c2, c3, c4 = self.cfg.enc_widths
        k = self.cfg.embed_dim
        self._conv_init("enc.c1", c1, 3, 3, rng)
        self._conv_init("enc.c2", c2, c1, 3, rng)
        self._conv_init("enc.p2", k, c2, 1, rng)
        self._conv_init("enc.c3", c3, c2, 3, rng)
        self._conv_init("enc.c4", c4, c3, 3, rng)
        self._conv_init("enc.ctx", k, c4, 1, rng)
        self._add("queries_i", rng.standard_normal((self.cfg.num_queries, k)) * 0.02)
        for layer in range(self.cfg.dec_layers):
            self._block_init(f"dec_i.l{layer}", rng)
        self._block_init("assoc", rng)
        for layer in range(self.cfg.dec_layers):
            self._block_init(f"dec_b.l{layer}", rng)
        for head in ("head_i", "head_b"):
            self._linear_init(f"{head}.ent", k, 1, rng)
            self._linear_init(f"{head}.mask", k, k, rng)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state_arrays(self, entries: dict[str, np.ndarray]):
        for name, t in self.params.items():
            arr = entries[name]
            t.data = np.ascontiguousarray(arr, dtype=default_dtype()).reshape(t.data.shape)
            t.grad = None

    # -- building blocks ----------------------------------------------------

    def _p(self, name):
        return self.params[name]

    def _conv(self, x, name, stride):
        k = self._p(f"{name}.w").shape[-1]
        y = ops.conv2d(x, self._p(f"{name}.w"), stride=stride, pad=k // 2)
        b = ops.reshape(self._p(f"{name}.b"), (1, -1, 1, 1))
        return ops.add(y, b)

    def _mha(self, name, q, kv):
        p = lambda part: self._p(f"{name}.{part}")
        return ops.multi_head_attention(
            q, kv, kv, self.cfg.num_heads,
            p("wq.w"), p("wq.b"), p("wk.w"), p("wk.b"),
            p("wv.w"), p("wv.b"), p("wo.w"), p("wo.b"))

    def _ln(self, name, x):
        return ops.layer_norm(x, self._p(f"{name}.g"), self._p(f"{name}.b"))

    def _ffn(self, name, x):
        h = ops.relu(ops.linear(x, self._p(f"{name}.fc1.w"), self._p(f"{name}.fc1.b")))
        return ops.linear(h, self._p(f"{name}.fc2.w"), self._p(f"{name}.fc2.b"))

    def _decoder_stack(self, prefix, queries, ctx):
        x = queries
        for layer in range(self.cfg.dec_layers):
            pre = f"{prefix}.l{layer}"
            x = self._ln(f"{pre}.ln1", ops.add(x, self._mha(f"{pre}.xatt", x, ctx)))
            x = self._ln(f"{pre}.ln2", ops.add(x, self._mha(f"{pre}.satt", x, x)))
            x = self._ln(f"{pre}.ln3", ops.add(x, self._ffn(f"{pre}.ffn", x)))
        return x

    # -- forward stages -----------------------------------------------------

    def encode(self, views):
        """views: Tensor (M, 3, H, W) -> mask features (M, K, H/4, W/4),
        context tokens (M, S, K) with positional encoding added."""
        h, w = views.shape[-2:]
        if h % 16 or w % 16:
            raise ConfigurationError(f"input extents {h}x{w} not divisible by 16")
        x1 = ops.relu(self._conv(views, "enc.c1", 2))
        x2 = ops.relu(self._conv(x1, "enc.c2", 2))
        p2 = self._conv(x2, "enc.p2", 1)
        x3 = ops.relu(self._conv(x2, "enc.c3", 2))
        x4 = ops.relu(self._conv(x3, "enc.c4", 2))
        ctx = self._conv(x4, "enc.ctx", 1)
        m, k = ctx.shape[0], ctx.shape[1]
        hs, ws = ctx.shape[2], ctx.shape[3]
        tokens = ops.reshape(ops.transpose(ctx, (0, 2, 3, 1)), (m, hs * ws, k))
        key = (hs, ws, k)
        if key not in self._pe_cache:
            self._pe_cache[key] = Tensor(positional_encoding(hs, ws, k))
        tokens = ops.add(tokens, self._pe_cache[key])
        return p2, tokens

    def image_decoder(self, ctx):
        """Per-view decoding with shared weights. ctx: (M, S, K) -> (M, N, K)."""
        m = ctx.shape[0]
        n, k = self.cfg.num_queries, self.cfg.embed_dim
        q0 = ops.reshape(self._p("queries_i"), (1, n, k))
        queries = ops.add(q0, Tensor(np.zeros((m, n, k), dtype=default_dtype())))
        return self._decoder_stack("dec_i", queries, ctx)

    def associate(self, emb_image):
        """Batch queries from the full view's embeddings attending over all
        views. emb_image: (B, T, N, K) with view 0 the full image."""
        b, t, n, k = emb_image.shape
        q = ops.getitem(emb_image, (slice(None), 0))          # (B, N, K)
        # keys/values flattened over (N, T), query-major
        kv = ops.reshape(ops.transpose(emb_image, (0, 2, 1, 3)), (b, n * t, k))
        x = self._ln("assoc.ln1", ops.add(q, self._mha("assoc.xatt", q, kv)))
        if self.cfg.assoc_self_att:
            x = self._ln("assoc.ln2", ops.add(x, self._mha("assoc.satt", x, x)))
        if self.cfg.assoc_ffn:
            x = self._ln("assoc.ln3", ops.add(x, self._ffn("assoc.ffn", x)))
        return x

    def batch_decoder(self, queries, ctx_all):
        """queries: (B, N, K); ctx_all: (B, T*S, K) concatenated views."""
        return self._decoder_stack("dec_b", queries, ctx_all)

    def predict(self, emb, p2, head):
        """emb: (..., N, K); p2: (..., K, h, w) -> entityness (..., N) and
        mask logits (..., N, h, w)."""
        ent = ops.linear(emb, self._p(f"{head}.ent.w"), self._p(f"{head}.ent.b"))
        ent = ops.reshape(ent, ent.shape[:-1])
        filt = ops.linear(emb, self._p(f"{head}.mask.w"), self._p(f"{head}.mask.b"))
        masks = ops.apply_mask_filters(filt, p2)
        return ent, masks

    def forward(self, views: np.ndarray) -> PredictionSet:
        """views: (B, T, 3, H, W) float array; view 0 is the full image."""
        b, t = views.shape[0], views.shape[1]
        n, k = self.cfg.num_queries, self.cfg.embed_dim
        flat = Tensor(views.reshape((b * t,) + views.shape[2:]))
        p2, ctx = self.encode(flat)
        emb_flat = self.image_decoder(ctx)
        ent_i, mask_i = self.predict(emb_flat, p2, "head_i")

        h, w = p2.shape[-2:]
        emb_image = ops.reshape(emb_flat, (b, t, n, k))
        q_b = self.associate(emb_image)
        ctx_all = ops.reshape(ctx, (b, t * ctx.shape[1], k))
        emb_batch = self.batch_decoder(q_b, ctx_all)

        p2_views = ops.reshape(p2, (b, t, k, h, w))
        ent_b = ops.linear(emb_batch, self._p("head_b.ent.w"), self._p("head_b.ent.b"))
        ent_b = ops.reshape(ent_b, (b, n))
        filt_b = ops.linear(emb_batch, self._p("head_b.mask.w"), self._p("head_b.mask.b"))
        # one shared filter per query, applied to every view's mask features
        filt_bt = ops.reshape(filt_b, (b, 1, n, k))
        mask_b = ops.apply_mask_filters(filt_bt, p2_views)

        return PredictionSet(
            ent_image=ops.reshape(ent_i, (b, t, n)),
            mask_image=ops.reshape(mask_i, (b, t, n, h, w)),
            ent_batch=ent_b,
            mask_batch=mask_b,
            emb_image=emb_image,
            emb_batch=emb_batch,
        )
