"""The denoising network and its two ablation variants.

A five-stage strided conv encoder (kernel 31, stride 2, ReLU then batch
norm) feeds a 128-channel bottleneck. Zero, one, or two self-attention
blocks (8 heads, key width 25, residual + layer norm, then a two-layer
position-wise feed-forward with its own residual + layer norm) sit at
the bottleneck: the ``noformer`` / ``uformer`` / ``uformer+`` variants
differ only in that count. The decoder mirrors the encoder with
stride-1 convs, nearest-neighbour upsampling, and skip concatenations
from the matching encoder stage; a width-31 conv with tanh produces the
output in [-1, 1].

Parameter accounting note: ``n_parameters`` includes the batch-norm
running statistics alongside trainable weights, because the running
buffers are part of the deployable state. ``n_trainable`` excludes them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .engine import ParamStore, Tensor, glorot_uniform, no_grad
from .engine import ops
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, CorruptCheckpoint, ShapeError

VARIANTS = {"noformer": 0, "uformer": 1, "uformer+": 2}

DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 8000
    kernel: int = 31
    encoder_filters: tuple = (16, 32, 32, 64, 64)
    bottleneck_filters: int = 128
    decoder_filters: tuple = (64, 32, 32, 32)
    attention_blocks: int = 1
    heads: int = 8
    key_dim: int = 25
    ffn_units: int = 128
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    ln_eps: float = 1e-3
    seed: int = 111
    dtype: str = "f64"

    def __post_init__(self):
        depth = len(self.encoder_filters) + 1  # encoder stages + bottleneck
        divisor = 2 ** depth
        if self.input_len % divisor != 0:
            raise ConfigError(
                f"input_len {self.input_len} must be divisible by {divisor}"
            )
        if len(self.decoder_filters) != len(self.encoder_filters) - 1:
            raise ConfigError(
                f"need {len(self.encoder_filters) - 1} decoder stages for "
                f"{len(self.encoder_filters)} encoder stages"
            )
        if self.attention_blocks < 0:
            raise ConfigError("attention_blocks must be >= 0")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ConfigError(f"kernel must be odd and positive, got {self.kernel}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.heads < 1 or self.key_dim < 1:
            raise ConfigError("heads and key_dim must be positive")

    @property
    def divisor(self) -> int:
        return 2 ** (len(self.encoder_filters) + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("encoder_filters", "decoder_filters"):
            if key in d:
                d[key] = tuple(d[key])
        return ModelConfig(**d)


def variant_config(variant: str, **overrides) -> ModelConfig:
    try:
        blocks = VARIANTS[variant.lower()]
    except KeyError:
        raise ConfigError(
            f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}"
        ) from None
    overrides.setdefault("attention_blocks", blocks)
    return ModelConfig(**overrides)


class DenoiseModel:
    """Parameter container plus the forward graph."""

    def __init__(self, config: ModelConfig):
        self.cfg = config
        self.store = ParamStore(dtype=DTYPES[config.dtype])
        self._build(np.random.default_rng(config.seed))

    # --- construction -----------------------------------------------------

    def _conv(self, rng, name: str, c_in: int, c_out: int) -> None:
        k = self.cfg.kernel
        self.store.param(f"{name}.w", glorot_uniform(
            rng, (k, c_in, c_out), fan_in=k * c_in, fan_out=k * c_out,
            dtype=self.store.dtype))
        self.store.param(f"{name}.b", np.zeros(c_out))

    def _bn(self, rng, name: str, c: int) -> None:
        self.store.param(f"{name}.gamma", np.ones(c))
        self.store.param(f"{name}.beta", np.zeros(c))
        self.store.buffer(f"{name}.mean", np.zeros(c))
        self.store.buffer(f"{name}.var", np.ones(c))

    def _dense(self, rng, name: str, k: int, n: int) -> None:
        self.store.param(f"{name}.w", glorot_uniform(
            rng, (k, n), fan_in=k, fan_out=n, dtype=self.store.dtype))
        self.store.param(f"{name}.b", np.zeros(n))

    def _ln(self, rng, name: str, c: int) -> None:
        self.store.param(f"{name}.gamma", np.ones(c))
        self.store.param(f"{name}.beta", np.zeros(c))

    def _build(self, rng) -> None:
        cfg = self.cfg
        c_prev = 1
        for i, c in enumerate(cfg.encoder_filters):
            self._conv(rng, f"enc{i}", c_prev, c)
            self._bn(rng, f"enc{i}.bn", c)
            c_prev = c

        d_model = cfg.bottleneck_filters
        self._conv(rng, "bott", c_prev, d_model)
        self._bn(rng, "bott.bn", d_model)

        proj = cfg.heads * cfg.key_dim
        for a in range(cfg.attention_blocks):
            base = f"attn{a}"
            self._dense(rng, f"{base}.q", d_model, proj)
            self._dense(rng, f"{base}.k", d_model, proj)
            self._dense(rng, f"{base}.v", d_model, proj)
            self._dense(rng, f"{base}.o", proj, d_model)
            self._ln(rng, f"{base}.ln1", d_model)
            self._dense(rng, f"{base}.ffn1", d_model, cfg.ffn_units)
            self._dense(rng, f"{base}.ffn2", cfg.ffn_units, d_model)
            self._ln(rng, f"{base}.ln2", d_model)

        # second bottleneck-width norm, applied after the first upsample
        self._bn(rng, "post.bn", d_model)

        c_prev = d_model + cfg.encoder_filters[-1]
        n_enc = len(cfg.encoder_filters)
        for i, c in enumerate(cfg.decoder_filters):
            self._conv(rng, f"dec{i}", c_prev, c)
            self._bn(rng, f"dec{i}.bn", c)
            skip = cfg.encoder_filters[n_enc - 2 - i]
            c_prev = c + skip

        self._conv(rng, "out", c_prev, 1)

    # --- forward ----------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.store.params[name]

    def _bn_apply(self, x: Tensor, name: str, training: bool) -> Tensor:
        return ops.batch_norm(
            x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"),
            self.store.buffers[f"{name}.mean"], self.store.buffers[f"{name}.var"],
            training=training, momentum=self.cfg.bn_momentum, eps=self.cfg.bn_eps)

    def _attention_block(self, m: Tensor, base: str) -> Tensor:
        cfg = self.cfg
        B, T, _ = m.shape
        H, dk = cfg.heads, cfg.key_dim

        def heads_of(t: Tensor) -> Tensor:
            return ops.transpose(ops.reshape(t, (B, T, H, dk)), (0, 2, 1, 3))

        q = heads_of(ops.dense(m, self._p(f"{base}.q.w"), self._p(f"{base}.q.b")))
        k = heads_of(ops.dense(m, self._p(f"{base}.k.w"), self._p(f"{base}.k.b")))
        v = heads_of(ops.dense(m, self._p(f"{base}.v.w"), self._p(f"{base}.v.b")))

        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))),
                           1.0 / math.sqrt(dk))
        weights = ops.softmax(scores, axis=-1)
        ctx = ops.matmul(weights, v)
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (B, T, H * dk))
        attn_out = ops.dense(ctx, self._p(f"{base}.o.w"), self._p(f"{base}.o.b"))

        g = ops.layer_norm(ops.add(m, attn_out),
                           self._p(f"{base}.ln1.gamma"),
                           self._p(f"{base}.ln1.beta"), eps=self.cfg.ln_eps)
        ff = ops.dense(g, self._p(f"{base}.ffn1.w"), self._p(f"{base}.ffn1.b"))
        ff = ops.relu(ff)
        ff = ops.dense(ff, self._p(f"{base}.ffn2.w"), self._p(f"{base}.ffn2.b"))
        return ops.layer_norm(ops.add(ff, g),
                              self._p(f"{base}.ln2.gamma"),
                              self._p(f"{base}.ln2.beta"), eps=self.cfg.ln_eps)

    def forward(self, x: np.ndarray, training: bool = False,
                collect: dict | None = None) -> Tensor:
        """Run the graph on x of shape (B, T); returns a (B, T, 1) tensor.

        T must be divisible by the downsampling factor so every skip
        connection lines up with its decoder stage.
        """
        x = np.asarray(x, dtype=self.store.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ShapeError(f"forward expects (B, T), got {x.shape}")
        B, T = x.shape
        if T % self.cfg.divisor != 0 or T < self.cfg.kernel:
            raise ShapeError(
                f"input length {T} not divisible by {self.cfg.divisor}"
            )

        h = Tensor(x.reshape(B, T, 1))
        skips: list[Tensor] = []
        for i in range(len(self.cfg.encoder_filters)):
            h = ops.conv1d(h, self._p(f"enc{i}.w"), self._p(f"enc{i}.b"), stride=2)
            h = ops.relu(h)
            h = self._bn_apply(h, f"enc{i}.bn", training)
            skips.append(h)
            if collect is not None:
                collect[f"enc{i}"] = h.data

        h = ops.conv1d(h, self._p("bott.w"), self._p("bott.b"), stride=2)
        h = ops.relu(h)
        h = self._bn_apply(h, "bott.bn", training)
        if collect is not None:
            collect["bottleneck"] = h.data

        for a in range(self.cfg.attention_blocks):
            h = self._attention_block(h, f"attn{a}")
            if collect is not None:
                collect[f"attn{a}"] = h.data

        h = ops.upsample2(h)
        h = self._bn_apply(h, "post.bn", training)
        h = ops.concat_channels(h, skips[-1])
        h = ops.upsample2(h)

        n_enc = len(self.cfg.encoder_filters)
        for i in range(len(self.cfg.decoder_filters)):
            h = ops.conv1d(h, self._p(f"dec{i}.w"), self._p(f"dec{i}.b"), stride=1)
            h = ops.relu(h)
            h = self._bn_apply(h, f"dec{i}.bn", training)
            h = ops.concat_channels(h, skips[n_enc - 2 - i])
            h = ops.upsample2(h)
            if collect is not None:
                collect[f"dec{i}"] = h.data

        h = ops.conv1d(h, self._p("out.w"), self._p("out.b"), stride=1)
        out = ops.tanh(h)
        if collect is not None:
            collect["out"] = out.data
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference: (B, T) -> (B, T), no graph, running-stat norm."""
        with no_grad():
            y = self.forward(x, training=False)
        return y.data[..., 0]

    def encode(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Encoder-side features for inspection (inference mode)."""
        feats: dict[str, np.ndarray] = {}
        with no_grad():
            self.forward(x, training=False, collect=feats)
        return feats

    # --- accounting and persistence ----------------------------------------

    @property
    def n_trainable(self) -> int:
        return self.store.n_trainable

    @property
    def n_parameters(self) -> int:
        return self.store.n_parameters

    def parameter_breakdown(self) -> dict[str, int]:
        """Element counts per layer prefix (params and buffers together)."""
        out: dict[str, int] = {}
        for name, t in self.store.params.items():
            key = name.split(".")[0]
            out[key] = out.get(key, 0) + int(t.data.size)
        for name, a in self.store.buffers.items():
            key = name.split(".")[0]
            out[key] = out.get(key, 0) + int(a.size)
        return out

    def attention_parameters(self) -> int:
        """Size of one attention block (0 if the variant has none)."""
        return sum(int(t.data.size) for name, t in self.store.params.items()
                   if name.startswith("attn0."))

    def save(self, path: str) -> None:
        save_checkpoint(
            path, self.cfg.to_dict(),
            {k: t.data for k, t in self.store.params.items()},
            self.store.buffers)

    @staticmethod
    def load(path: str, dtype: str | None = None) -> "DenoiseModel":
        config, params, buffers = load_checkpoint(path)
        try:
            cfg = ModelConfig.from_dict(config)
        except (TypeError, ConfigError) as exc:
            raise CorruptCheckpoint(f"{path}: bad embedded config: {exc}") from exc
        if dtype is not None:
            cfg = ModelConfig.from_dict({**cfg.to_dict(), "dtype": dtype})
        model = DenoiseModel(cfg)
        want = set(model.store.params) | set(model.store.buffers)
        have = set(params) | set(buffers)
        if want != have:
            raise CorruptCheckpoint(
                f"{path}: tensor names do not match the architecture "
                f"(missing {sorted(want - have)[:3]}, "
                f"unexpected {sorted(have - want)[:3]})"
            )
        for name, t in model.store.params.items():
            if params[name].shape != t.data.shape:
                raise CorruptCheckpoint(
                    f"{path}: {name} has shape {params[name].shape}, "
                    f"expected {t.data.shape}")
            np.copyto(t.data, params[name])
        for name, buf in model.store.buffers.items():
            np.copyto(buf, buffers[name])
        return model
