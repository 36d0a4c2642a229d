"""Model zoo: feature extractors, temporal-MLP blocks, two-stream fusion.

The sequence models run two parallel streams (RGB and hand pose), each a
per-step feature extractor followed by a stack of temporal-MLP blocks. A
block is two pre-norm residual branches: one MLP mixing across the time
axis per channel, one mixing across channels per time step. The streams'
final-step vectors are concatenated and classified by a two-layer head.
Time-mixing weights are shaped by the sequence length, so a model is
instantiated per (stream, T) combination.

Single-frame baselines reuse the same extractors: FusionNet concatenates
both extractor outputs for one frame; the hand-pose MLP classifies from
the hand features alone.

All forward/backward passes are plain float64 numpy; batch items are
reduced in a fixed order, so training is bit-reproducible for a given
seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DivergenceError, ShapeError
from .sampling import RateConfig

HP_INPUT_DIM = 126  # 2 hands * 21 keypoints * 3 coords

MODEL_KINDS = ("rgb_seq", "mm_tmlp", "fusionnet", "hp_mlp")
SEQUENCE_KINDS = ("rgb_seq", "mm_tmlp")


@dataclass(frozen=True)
class TemporalMlpConfig:
    depth: int = 2
    time_ratio: float = 2.0
    channel_ratio: float = 2.0
    activation: str = "gelu"

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"temporal depth must be >= 0, got {self.depth}")
        if self.time_ratio <= 0 or self.channel_ratio <= 0:
            raise ConfigError("temporal hidden ratios must be positive")


@dataclass(frozen=True)
class ReferenceExtractorConfig:
    image_size: int = 64
    channels: int = 3
    patch_size: int = 8
    hidden: int = 1024

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be a multiple of patch_size")

    @property
    def input_dim(self):
        return self.image_size * self.image_size * self.channels

    @property
    def n_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and backends for every model kind."""

    d_rgb: int = 512
    d_hp: int = 128
    hp_hidden: int = 256
    head_hidden: int = 256
    activation: str = "gelu"
    rgb_backend: str = "precomputed"  # or "reference"
    reference: ReferenceExtractorConfig = field(default_factory=ReferenceExtractorConfig)
    temporal: TemporalMlpConfig = field(default_factory=TemporalMlpConfig)

    def __post_init__(self):
        if self.rgb_backend not in ("precomputed", "reference"):
            raise ConfigError(f"unknown rgb backend {self.rgb_backend!r}")


@dataclass(frozen=True)
class StreamConfig:
    modality: str
    extractor_dim: int
    sequence_length: int

    def __post_init__(self):
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be >= 1")
        if self.extractor_dim < 1:
            raise ConfigError("extractor_dim must be >= 1")


POSE_INPUT_SCALE = 10.0  # meter-scale keypoints sit around 0.1; rescale to ~1


class HpExtractor(nn.Mlp):
    """Two-layer MLP over flattened normalized keypoints.

    Inputs are multiplied by a fixed standardization constant so hand
    coordinates land on the same scale as the RGB features.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__(HP_INPUT_DIM, cfg.hp_hidden, cfg.d_hp, rng, cfg.activation)

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=nn.DTYPE)
        if x.ndim != 2 or x.shape[1] != HP_INPUT_DIM:
            raise ShapeError(f"expected flattened hand frames [N, {HP_INPUT_DIM}], got {x.shape}")
        return super().forward(x * POSE_INPUT_SCALE, cache)

    def backward(self, grad):
        return super().backward(grad) * POSE_INPUT_SCALE


class PrecomputedRgbExtractor(nn.Module):
    """Pass-through for stored per-frame feature vectors."""

    def __init__(self, dim: int):
        self.dim = dim

    @property
    def d_in(self):
        return self.dim

    @property
    def d_out(self):
        return self.dim

    @property
    def macs_per_row(self):
        return 0

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=nn.DTYPE)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"expected precomputed features [N, {self.dim}], got {x.shape}")
        return x

    def backward(self, grad):
        return grad


class ReferenceRgbExtractor(nn.Module):
    """Patch-level two-layer MLP over a small image tensor.

    Each frame is cut into patches; one shared MLP (patch_dim -> hidden ->
    d_rgb) embeds every patch and the frame feature is the mean over
    patches. Shared patch weights stay cache-resident, so the per-frame
    cost is compute-bound and far above the hand-pose extractor's, making
    benchmark CPU scale cleanly with the RGB sampling rate.
    """

    def __init__(self, cfg: ModelConfig, rng):
        ref = cfg.reference
        self.cfg = ref
        self.mlp = nn.Mlp(ref.patch_dim, ref.hidden, cfg.d_rgb, rng, cfg.activation)
        h, p, c = ref.image_size, ref.patch_size, ref.channels
        idx = np.arange(ref.input_dim).reshape(h, h, c)
        self._patch_index = np.stack(
            [
                idx[i : i + p, j : j + p, :].ravel()
                for i in range(0, h, p)
                for j in range(0, h, p)
            ]
        )  # [n_patches, patch_dim]
        self._flip_perm = idx[:, ::-1, :].ravel()
        self._n = None

    @property
    def d_in(self):
        return self.cfg.input_dim

    @property
    def d_out(self):
        return self.mlp.d_out

    @property
    def macs_per_row(self):
        return self.cfg.n_patches * self.mlp.macs_per_row

    def flip_raw(self, x):
        """Horizontal flip of row-flattened images."""
        return np.asarray(x)[:, self._flip_perm]

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=nn.DTYPE)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ShapeError(
                f"expected flattened images [N, {self.cfg.input_dim}], got {x.shape}"
            )
        n = x.shape[0]
        k = self.cfg.n_patches
        patches = x[:, self._patch_index].reshape(n * k, self.cfg.patch_dim)
        embedded = self.mlp.forward(patches, cache)
        self._n = n if cache else None
        return embedded.reshape(n, k, -1).mean(axis=1)

    def backward(self, grad):
        n = self._n
        k = self.cfg.n_patches
        g_patches = np.repeat(grad / k, k, axis=0)
        gp = self.mlp.backward(g_patches).reshape(n, k, self.cfg.patch_dim)
        gx = np.zeros((n, self.cfg.input_dim))
        for j in range(k):
            gx[:, self._patch_index[j]] += gp[:, j]
        return gx


def make_rgb_extractor(cfg: ModelConfig, rng):
    if cfg.rgb_backend == "precomputed":
        return PrecomputedRgbExtractor(cfg.d_rgb)
    return ReferenceRgbExtractor(cfg, rng)


class MixerBlock(nn.Module):
    """Pre-norm residual time-mixing then channel-mixing MLPs."""

    def __init__(self, seq_len: int, dim: int, cfg: TemporalMlpConfig, rng):
        t_hidden = max(1, int(round(cfg.time_ratio * seq_len)))
        c_hidden = max(1, int(round(cfg.channel_ratio * dim)))
        self.seq_len = seq_len
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim)
        self.time_fc1 = nn.Linear(seq_len, t_hidden, rng)
        self.time_act = nn.Activation(cfg.activation)
        self.time_fc2 = nn.Linear(t_hidden, seq_len, rng)
        self.norm2 = nn.LayerNorm(dim)
        self.chan_fc1 = nn.Linear(dim, c_hidden, rng)
        self.chan_act = nn.Activation(cfg.activation)
        self.chan_fc2 = nn.Linear(c_hidden, dim, rng)

    def zero_residual_branches(self):
        """Zero both branch output layers, making the block an exact identity."""
        for layer in (self.time_fc2, self.chan_fc2):
            layer.weight.value[...] = 0.0
            layer.bias.value[...] = 0.0

    def forward(self, x, cache=True):
        b, t, d = x.shape
        if t != self.seq_len:
            raise ShapeError(
                f"mixer block instantiated for T={self.seq_len}, got sequence length {t}"
            )
        h = self.norm1.forward(x.reshape(b * t, d), cache)
        ht = h.reshape(b, t, d).transpose(0, 2, 1).reshape(b * d, t)
        z = self.time_fc2.forward(
            self.time_act.forward(self.time_fc1.forward(ht, cache), cache), cache
        )
        y = x + z.reshape(b, d, t).transpose(0, 2, 1)
        h2 = self.norm2.forward(y.reshape(b * t, d), cache)
        z2 = self.chan_fc2.forward(
            self.chan_act.forward(self.chan_fc1.forward(h2, cache), cache), cache
        )
        return y + z2.reshape(b, t, d)

    def backward(self, grad):
        b, t, d = grad.shape
        gf = grad.reshape(b * t, d)
        g_h2 = self.chan_fc1.backward(self.chan_act.backward(self.chan_fc2.backward(gf)))
        gy = grad + self.norm2.backward(g_h2).reshape(b, t, d)
        gz = gy.transpose(0, 2, 1).reshape(b * d, t)
        g_ht = self.time_fc1.backward(self.time_act.backward(self.time_fc2.backward(gz)))
        g_h = g_ht.reshape(b, d, t).transpose(0, 2, 1).reshape(b * t, d)
        return gy + self.norm1.backward(g_h).reshape(b, t, d)

    @property
    def macs_per_item(self):
        t, d = self.seq_len, self.dim
        time_macs = d * (self.time_fc1.d_in * self.time_fc1.d_out
                         + self.time_fc2.d_in * self.time_fc2.d_out)
        chan_macs = t * (self.chan_fc1.d_in * self.chan_fc1.d_out
                         + self.chan_fc2.d_in * self.chan_fc2.d_out)
        return time_macs + chan_macs


class TemporalMlp(nn.Module):
    """A stack of mixer blocks; depth 0 is the identity map."""

    def __init__(self, seq_len: int, dim: int, cfg: TemporalMlpConfig, rng):
        self.blocks = [MixerBlock(seq_len, dim, cfg, rng) for _ in range(cfg.depth)]
        self.seq_len = seq_len
        self.dim = dim

    def zero_residual_branches(self):
        for block in self.blocks:
            block.zero_residual_branches()

    def forward(self, x, cache=True):
        for block in self.blocks:
            x = block.forward(x, cache)
        return x

    def backward(self, grad):
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return grad

    @property
    def macs_per_item(self):
        return sum(b.macs_per_item for b in self.blocks)


class Stream(nn.Module):
    """Per-step extractor, temporal blocks, final-step readout."""

    def __init__(self, extractor, seq_len: int, temporal_cfg: TemporalMlpConfig, rng):
        self.extractor = extractor
        self.temporal = TemporalMlp(seq_len, extractor.d_out, temporal_cfg, rng)
        self.seq_len = seq_len
        self._shape = None

    @property
    def d_out(self):
        return self.extractor.d_out

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=nn.DTYPE)
        if x.ndim != 3:
            raise ShapeError(f"stream input must be [B, T, D_in], got {x.shape}")
        b, t, d_in = x.shape
        if t != self.seq_len:
            raise ShapeError(
                f"stream instantiated for T={self.seq_len}, got sequence length {t}"
            )
        feats = self.extractor.forward(x.reshape(b * t, d_in), cache)
        feats = feats.reshape(b, t, -1)
        out = self.temporal.forward(feats, cache)
        self._shape = (b, t, d_in) if cache else None
        return out[:, -1, :]

    def backward(self, g_last):
        b, t, d_in = self._shape
        g_seq = np.zeros((b, t, self.d_out))
        g_seq[:, -1, :] = g_last
        g_feats = self.temporal.backward(g_seq)
        g_x = self.extractor.backward(g_feats.reshape(b * t, -1))
        return g_x.reshape(b, t, d_in)

    def macs_per_window(self):
        return self.seq_len * self.extractor.macs_per_row + self.temporal.macs_per_item


class MmTmlp(nn.Module):
    """Two-stream sequence model; either stream may be disabled."""

    def __init__(self, n_actions: int, cfg: ModelConfig, t_rgb: int | None,
                 t_hp: int | None, rng):
        if t_rgb is None and t_hp is None:
            raise ConfigError("at least one stream must be enabled")
        self.n_actions = n_actions
        self.rgb_stream = (
            Stream(make_rgb_extractor(cfg, rng), t_rgb, cfg.temporal, rng)
            if t_rgb is not None
            else None
        )
        self.hp_stream = (
            Stream(HpExtractor(cfg, rng), t_hp, cfg.temporal, rng)
            if t_hp is not None
            else None
        )
        d = sum(s.d_out for s in (self.rgb_stream, self.hp_stream) if s is not None)
        self.head = nn.Mlp(d, cfg.head_hidden, n_actions, rng, cfg.activation)
        self._split = None

    def stream_outputs(self, rgb=None, hp=None, cache=False):
        """Final-step feature vector of each enabled stream."""
        outs = {}
        if self.rgb_stream is not None:
            if rgb is None:
                raise ShapeError("model has an RGB stream but no rgb input was given")
            outs["rgb"] = self.rgb_stream.forward(rgb, cache)
        elif rgb is not None:
            raise ShapeError("rgb input given but the RGB stream is disabled")
        if self.hp_stream is not None:
            if hp is None:
                raise ShapeError("model has a hand stream but no hp input was given")
            outs["hp"] = self.hp_stream.forward(hp, cache)
        elif hp is not None:
            raise ShapeError("hp input given but the hand stream is disabled")
        return outs

    def forward(self, rgb=None, hp=None, cache=True):
        outs = self.stream_outputs(rgb, hp, cache)
        parts = [outs[k] for k in ("rgb", "hp") if k in outs]
        self._split = [p.shape[1] for p in parts] if cache else None
        return self.head.forward(np.concatenate(parts, axis=1), cache)

    def backward(self, g_logits):
        gz = self.head.backward(g_logits)
        grads = {}
        offset = 0
        streams = [s for s in (self.rgb_stream, self.hp_stream) if s is not None]
        names = [n for n, s in (("rgb", self.rgb_stream), ("hp", self.hp_stream)) if s is not None]
        for name, stream, width in zip(names, streams, self._split):
            grads[name] = stream.backward(gz[:, offset : offset + width])
            offset += width
        return grads

    def macs_per_window(self):
        total = self.head.macs_per_row
        for stream in (self.rgb_stream, self.hp_stream):
            if stream is not None:
                total += stream.macs_per_window()
        return total


class FusionNet(nn.Module):
    """Single-frame fusion: both extractors, concatenate, classify."""

    def __init__(self, n_actions: int, cfg: ModelConfig, rng):
        self.n_actions = n_actions
        self.rgb_extractor = make_rgb_extractor(cfg, rng)
        self.hp_extractor = HpExtractor(cfg, rng)
        d = self.rgb_extractor.d_out + self.hp_extractor.d_out
        self.head = nn.Mlp(d, cfg.head_hidden, n_actions, rng, cfg.activation)
        self._split = None

    def forward(self, rgb=None, hp=None, cache=True):
        if rgb is None or hp is None:
            raise ShapeError("fusionnet requires both rgb and hp inputs")
        fr = self.rgb_extractor.forward(rgb, cache)
        fh = self.hp_extractor.forward(hp, cache)
        self._split = fr.shape[1] if cache else None
        return self.head.forward(np.concatenate([fr, fh], axis=1), cache)

    def backward(self, g_logits):
        gz = self.head.backward(g_logits)
        return {
            "rgb": self.rgb_extractor.backward(gz[:, : self._split]),
            "hp": self.hp_extractor.backward(gz[:, self._split :]),
        }

    def macs_per_frame(self):
        return (
            self.rgb_extractor.macs_per_row
            + self.hp_extractor.macs_per_row
            + self.head.macs_per_row
        )


class HpMlp(nn.Module):
    """Single-frame hand-pose classifier."""

    def __init__(self, n_actions: int, cfg: ModelConfig, rng):
        self.n_actions = n_actions
        self.extractor = HpExtractor(cfg, rng)
        self.head = nn.Mlp(cfg.d_hp, cfg.head_hidden, n_actions, rng, cfg.activation)

    def forward(self, rgb=None, hp=None, cache=True):
        if hp is None:
            raise ShapeError("hp_mlp requires an hp input")
        if rgb is not None:
            raise ShapeError("hp_mlp takes no rgb input")
        return self.head.forward(self.extractor.forward(hp, cache), cache)

    def backward(self, g_logits):
        return {"hp": self.extractor.backward(self.head.backward(g_logits))}

    def macs_per_frame(self):
        return self.extractor.macs_per_row + self.head.macs_per_row


def build_model(kind: str, n_actions: int, cfg: ModelConfig, rates: RateConfig, rng):
    """Instantiate a model of the given kind for one rate configuration."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind == "mm_tmlp":
        if not rates.hp_enabled:
            raise ConfigError("mm_tmlp requires f_hp > 0; use rgb_seq for RGB-only")
        return MmTmlp(n_actions, cfg, rates.steps(rates.f_rgb), rates.steps(rates.f_hp), rng)
    if kind == "rgb_seq":
        return MmTmlp(n_actions, cfg, rates.steps(rates.f_rgb), None, rng)
    if kind == "fusionnet":
        return FusionNet(n_actions, cfg, rng)
    return HpMlp(n_actions, cfg, rng)


def model_inputs(kind: str, rgb, hp):
    """Slice window tensors into what each model kind consumes."""
    if kind == "mm_tmlp":
        return rgb, hp
    if kind == "rgb_seq":
        return rgb, None
    if kind == "fusionnet":
        return rgb[:, -1], hp[:, -1]
    if kind == "hp_mlp":
        return None, hp[:, -1]
    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    augment: tuple = ()
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainResult:
    history: list          # rows: {"epoch", "train_loss", "val_f1_action", "val_f1_verb"}
    best_epoch: int
    best_f1_action: float
    best_f1_verb: float
    state: dict            # parameters at the best validation epoch
    train_seconds: float


def predict(model, kind, window_set, batch_size=64):
    """Class predictions over a window set (no caching, read-only)."""
    n = len(window_set)
    preds = np.empty(n, dtype=np.int64)
    for lo in range(0, n, batch_size):
        sl = slice(lo, min(lo + batch_size, n))
        rgb, hp_in = model_inputs(
            kind,
            window_set.rgb[sl],
            window_set.hp[sl] if window_set.hp is not None else None,
        )
        logits = model.forward(rgb=rgb, hp=hp_in, cache=False)
        preds[sl] = logits.argmax(axis=1)
    return preds


def evaluate(model, kind, window_set, action_to_verb):
    """Macro F1 on actions and on verbs mapped from the predicted actions."""
    from .bench import macro_f1

    preds = predict(model, kind, window_set)
    a2v = np.asarray(action_to_verb)
    n_actions = len(a2v)
    f1_action = macro_f1(preds, window_set.actions, n_actions)
    f1_verb = macro_f1(a2v[preds], window_set.verbs, int(a2v.max()) + 1)
    return f1_action, f1_verb


def train_model(model, kind, train_set, val_set, tcfg: TrainConfig,
                action_to_verb, dataset_ctx=None):
    """Mini-batch Adam on softmax cross entropy.

    Returns the per-epoch history and the parameters of the best
    validation-F1 epoch (the model is left loaded with them). A non-finite
    loss raises DivergenceError naming the epoch and learning rate.
    ``dataset_ctx`` is required only when augmentation ops are configured:
    a dict mapping take_id to PreparedTake, used to rebuild jittered
    windows.
    """
    from .dataset import augment as augment_window
    from .sampling import MultiRateWindow

    rng = np.random.default_rng(tcfg.seed)
    adam = nn.Adam(model.parameters(), lr=tcfg.lr)
    n = len(train_set)
    if n == 0:
        raise ConfigError("training set is empty")
    history = []
    best = (-1.0, -1, None, -1.0)  # f1_action, epoch, state, f1_verb
    t_start = time.perf_counter()

    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        rgb_ep, hp_ep, labels_ep = _epoch_tensors(train_set, order, tcfg, rng, dataset_ctx,
                                                  augment_window, MultiRateWindow)
        losses = []
        for lo in range(0, n, tcfg.batch_size):
            sl = slice(lo, min(lo + tcfg.batch_size, n))
            rgb, hp_in = model_inputs(
                kind,
                rgb_ep[sl],
                hp_ep[sl] if hp_ep is not None else None,
            )
            logits = model.forward(rgb=rgb, hp=hp_in, cache=True)
            loss, g = nn.softmax_cross_entropy(logits, labels_ep[sl])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, tcfg.lr)
            model.backward(g)
            adam.step()
            model.zero_grad()
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if len(val_set) and (epoch % tcfg.eval_every == 0 or epoch == tcfg.epochs - 1):
            f1a, f1v = evaluate(model, kind, val_set, action_to_verb)
            row["val_f1_action"] = f1a
            row["val_f1_verb"] = f1v
            if f1a > best[0]:
                best = (f1a, epoch, model.state_dict(), f1v)
        history.append(row)

    if best[2] is not None:
        model.load_state_dict(best[2])
        state = best[2]
        best_epoch, best_f1, best_f1v = best[1], best[0], best[3]
    else:
        state = model.state_dict()
        best_epoch, best_f1, best_f1v = tcfg.epochs - 1, float("nan"), float("nan")
    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_f1_action=best_f1,
        best_f1_verb=best_f1v,
        state=state,
        train_seconds=time.perf_counter() - t_start,
    )


def _epoch_tensors(train_set, order, tcfg, rng, dataset_ctx, augment_window, window_cls):
    """Shuffled (and optionally augmented) tensors for one epoch."""
    rgb = train_set.rgb[order]
    hp_in = train_set.hp[order] if train_set.hp is not None else None
    labels = train_set.actions[order]
    if not tcfg.augment:
        return rgb, hp_in, labels
    if dataset_ctx is None:
        raise ConfigError("augmentation requires the prepared-take context")
    labels = labels.copy()
    for i, idx in enumerate(order):
        take_id, _ = train_set.sources[idx]
        w = window_cls(
            rgb_seq=rgb[i],
            hp_seq=hp_in[i] if hp_in is not None else None,
            hp_valid=None,
            action=int(labels[i]),
            verb=int(train_set.verbs[idx]),
            source=train_set.sources[idx],
        )
        w = augment_window(w, tcfg.augment, rng, dataset_ctx.get(take_id), train_set.cfg)
        rgb[i] = w.rgb_seq
        if hp_in is not None:
            hp_in[i] = w.hp_seq
        labels[i] = w.action
    return rgb, hp_in, labels


# ---------------------------------------------------------------------------
# Checkpoint helpers


def save_model(path, model, kind, meta=None):
    info = {"kind": kind, "n_actions": model.n_actions}
    if meta:
        info.update(meta)
    nn.save_checkpoint(path, model.state_dict(), info)


def load_model_state(path):
    """Returns (state dict, meta). Rebuilding the model is the caller's job."""
    return nn.load_checkpoint(path)
