"""Dataset handling: takes, frame labels, windowing, augmentation, synthesis.

A dataset directory looks like:

    meta.json                     manifest (see DatasetMeta)
    actions.txt / verbs.txt       vocabulary, "id name" per line
    takes/<id>/hand_pose.txt      hand-pose text format (handpose module)
    takes/<id>/rgb_features.bin   precomputed per-frame RGB features
    takes/<id>/labels.txt         "start end action_id verb_id" per line

The RGB feature file is binary: magic ``RGBF``, uint32 version (1), uint32
n_frames, uint32 dim, then n_frames * dim little-endian float32 values.

The synthetic generator builds takes where the verb is carried only by the
hand motion (per-verb finger-curl signatures on a kinematic hand model)
and the object only by the RGB feature vector (per-object cluster centers
plus isotropic noise), so each modality is informative for exactly one
label factor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import handpose as hp
from .errors import ConfigError, DataError, ParseError
from .sampling import MultiRateWindow, RateConfig, build_window, sample_indices

BACKGROUND = 0

RGB_MAGIC = b"RGBF"
RGB_VERSION = 1

SHARED_AUGMENTATIONS = ("flip", "jitter")
PRIVATE_AUGMENTATIONS = ("hp_noise", "rgb_dropout")
JITTER_RANGE = 3

_VERB_NAMES = ("grab", "place", "open", "pour", "close", "take", "put", "squeeze")
_OBJECT_NAMES = ("book", "espresso", "cappuccino", "chips", "milk", "lotion", "spray", "cocoa")

# Per-verb finger-curl signatures (thumb..pinky); rows are well separated so
# a single frame identifies the verb.
_CURL_PATTERNS = np.array(
    [
        [1, 0, 0, 1, 0],
        [0, 1, 1, 0, 1],
        [1, 1, 0, 0, 1],
        [0, 0, 1, 1, 0],
        [1, 0, 1, 0, 1],
        [0, 1, 0, 1, 1],
        [1, 1, 1, 0, 0],
        [0, 0, 0, 1, 1],
    ],
    dtype=float,
)

# Finger base directions in the palm plane, fanned around +z.
_FINGER_ANGLES_DEG = (65.0, 18.0, 0.0, -16.0, -34.0)
_PALM_NORMAL = np.array([0.0, 1.0, 0.0])
_CURL_WEIGHTS = np.array([0.35, 1.0, 1.0, 0.75])


@dataclass(frozen=True)
class ActionSegment:
    start_frame: int
    end_frame: int  # inclusive
    action: int
    verb: int

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise DataError(
                f"segment start {self.start_frame} after end {self.end_frame}"
            )


@dataclass
class Take:
    """One contiguous recording with native-rate streams."""

    take_id: str
    n_frames: int
    hp_coords: np.ndarray     # [n, 2, 21, 3] raw keypoints (left, right)
    hp_valid: np.ndarray      # [n, 2] bool
    rgb_features: np.ndarray  # [n, D]
    segments: list

    def __post_init__(self):
        if len(self.hp_coords) != self.n_frames or len(self.rgb_features) != self.n_frames:
            raise DataError(
                f"take {self.take_id}: stream lengths do not match n_frames={self.n_frames}"
            )
        for seg in self.segments:
            if seg.end_frame >= self.n_frames:
                raise DataError(
                    f"take {self.take_id}: segment ends at {seg.end_frame} "
                    f"but take has {self.n_frames} frames"
                )


@dataclass(frozen=True)
class DatasetMeta:
    native_hz: float
    feature_dim: int
    action_names: tuple
    verb_names: tuple
    action_to_verb: tuple
    action_to_object: tuple = ()

    @property
    def n_actions(self):
        return len(self.action_names)

    @property
    def n_verbs(self):
        return len(self.verb_names)


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic stand-in for an egocentric hand/object dataset."""

    n_takes: int = 12
    frames_per_take: int = 320
    n_verbs: int = 4
    n_objects: int = 3
    motion_noise: float = 0.05    # radians, per joint angle
    feature_noise: float = 0.1    # per-dimension std around object centers
    seed: int = 0
    feature_dim: int = 512
    native_hz: float = 30.0
    segments_per_take: int = 6

    def __post_init__(self):
        if self.n_takes < 1:
            raise ConfigError("n_takes must be >= 1")
        if self.frames_per_take < 1:
            raise ConfigError("frames_per_take must be >= 1")
        if self.n_verbs < 1 or self.n_objects < 1:
            raise ConfigError("n_verbs and n_objects must be >= 1")
        if self.motion_noise < 0 or self.feature_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.feature_dim < self.n_objects + 1:
            raise ConfigError("feature_dim must exceed n_objects")

    @property
    def n_actions(self):
        return self.n_verbs * self.n_objects + 1


def assign_frame_labels(segments, n_frames):
    """Per-frame (action, verb) labels; frames outside segments get background."""
    actions = np.full(n_frames, BACKGROUND, dtype=np.int64)
    verbs = np.full(n_frames, BACKGROUND, dtype=np.int64)
    occupied = np.full(n_frames, -1, dtype=np.int64)
    for i, seg in enumerate(segments):
        if seg.start_frame < 0 or seg.end_frame >= n_frames:
            raise DataError(
                f"segment [{seg.start_frame}, {seg.end_frame}] outside 0..{n_frames - 1}"
            )
        span = occupied[seg.start_frame : seg.end_frame + 1]
        clash = span[span >= 0]
        if clash.size:
            j = int(clash[0])
            a, b = segments[j], seg
            raise DataError(
                f"overlapping segments [{a.start_frame},{a.end_frame}] and "
                f"[{b.start_frame},{b.end_frame}]"
            )
        span[...] = i
        actions[seg.start_frame : seg.end_frame + 1] = seg.action
        verbs[seg.start_frame : seg.end_frame + 1] = seg.verb
    return actions, verbs


def take_labels(take: Take):
    return assign_frame_labels(take.segments, take.n_frames)


# ---------------------------------------------------------------------------
# Synthetic generation


def _rotate_about(v, axis, angle):
    """Rodrigues rotation of vector v about a unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


def _fk_hand(curls):
    """Forward kinematics: per-finger curl angles (radians) to 21 keypoints.

    Fingers bend toward the palm; joint j of a finger bends by
    curls[f] * _CURL_WEIGHTS[j] relative to its parent segment.
    """
    coords = np.zeros((hp.N_KEYPOINTS, 3))
    lengths = hp.DEFAULT_BONE_LENGTHS
    edge = 0
    for f, base_deg in enumerate(_FINGER_ANGLES_DEG):
        theta = np.deg2rad(base_deg)
        direction = np.array([np.sin(theta), 0.0, np.cos(theta)])
        lateral = np.cross(direction, _PALM_NORMAL)
        lateral /= np.linalg.norm(lateral)
        pos = coords[hp.WRIST].copy()
        bend = 0.0
        for j in range(4):
            bend += float(curls[f]) * _CURL_WEIGHTS[j]
            seg_dir = _rotate_about(direction, lateral, bend)
            pos = pos + lengths[edge] * seg_dir
            coords[hp.FINGER_BASES[f] + j] = pos
            edge += 1
    return coords


def _verb_curl_patterns(n_verbs, rng):
    """Base curl per (verb, finger); verb index 0 is background."""
    patterns = [np.full(5, 0.15)]  # background: slightly open hand
    for v in range(n_verbs):
        if v < len(_CURL_PATTERNS):
            bits = _CURL_PATTERNS[v]
        else:
            bits = (rng.random(5) < 0.5).astype(float)
        patterns.append(0.15 + 0.85 * bits)
    return np.stack(patterns)


def _object_centers(n_objects, dim, rng):
    """Orthonormal cluster centers (pairwise distance sqrt(2) >= 1).

    Row 0 is the background cluster.
    """
    gauss = rng.standard_normal((dim, n_objects + 1))
    q, _ = np.linalg.qr(gauss)
    return q.T[: n_objects + 1].copy()


def _schedule_segments(take_idx, spec: SynthSpec, rng):
    """Round-robin actions across takes so classes spread over the splits.

    The per-take offset walks the action list with a stride of 5 (coprime
    with the common 12-action grid), so any few takes still cover most
    classes.
    """
    n_pairs = spec.n_verbs * spec.n_objects
    segments = []
    cursor = 0
    for j in range(spec.segments_per_take):
        gap = int(rng.integers(8, 14))
        length = int(rng.integers(32, 44))
        start = cursor + gap
        end = start + length - 1
        if end >= spec.frames_per_take:
            break
        pair = (5 * take_idx + j) % n_pairs
        verb = pair // spec.n_objects + 1
        obj = pair % spec.n_objects + 1
        action = 1 + (verb - 1) * spec.n_objects + (obj - 1)
        segments.append(ActionSegment(start, end, action, verb))
        cursor = end + 1
    return segments


def synth_meta(spec: SynthSpec) -> DatasetMeta:
    verb_names = ["background"] + [
        _VERB_NAMES[v] if v < len(_VERB_NAMES) else f"verb{v + 1}"
        for v in range(spec.n_verbs)
    ]
    object_names = [
        _OBJECT_NAMES[o] if o < len(_OBJECT_NAMES) else f"object{o + 1}"
        for o in range(spec.n_objects)
    ]
    action_names = ["background"]
    action_to_verb = [BACKGROUND]
    action_to_object = [0]
    for v in range(spec.n_verbs):
        for o in range(spec.n_objects):
            action_names.append(f"{verb_names[v + 1]}_{object_names[o]}")
            action_to_verb.append(v + 1)
            action_to_object.append(o + 1)
    return DatasetMeta(
        native_hz=spec.native_hz,
        feature_dim=spec.feature_dim,
        action_names=tuple(action_names),
        verb_names=tuple(verb_names),
        action_to_verb=tuple(action_to_verb),
        action_to_object=tuple(action_to_object),
    )


def synth_generate(spec: SynthSpec):
    """Generate takes; returns (takes, DatasetMeta)."""
    rng = np.random.default_rng(spec.seed)
    meta = synth_meta(spec)
    curl_patterns = _verb_curl_patterns(spec.n_verbs, rng)
    centers = _object_centers(spec.n_objects, spec.feature_dim, rng)
    verb_freq = 0.75 + 0.35 * np.arange(spec.n_verbs + 1)  # Hz, index 0 unused

    takes = []
    for t in range(spec.n_takes):
        segments = _schedule_segments(t, spec, rng)
        n = spec.frames_per_take
        actions, verbs = assign_frame_labels(segments, n)
        objects = np.array([meta.action_to_object[a] for a in actions])

        coords = np.zeros((n, 2, hp.N_KEYPOINTS, 3))
        valid = np.ones((n, 2), dtype=bool)
        features = np.empty((n, spec.feature_dim))

        seg_phase = rng.uniform(0, 2 * np.pi)
        wobble_phase = rng.uniform(0, 2 * np.pi, size=3)
        for i in range(n):
            v = int(verbs[i])
            base = curl_patterns[v].copy()
            if v != BACKGROUND:
                base = base + 0.2 * np.sin(
                    2 * np.pi * verb_freq[v] * i / spec.native_hz
                    + seg_phase
                    + 0.7 * np.arange(5)
                )
            for side in (0, 1):
                curls = base + rng.normal(0.0, spec.motion_noise, size=5)
                hand = _fk_hand(curls)
                if side == 0:
                    hand = hp.mirror_x(hand)
                coords[i, side] = hand

            # slow global rigid wobble, shared by both hands
            ax = 0.25 * np.sin(2 * np.pi * 0.4 * i / spec.native_hz + wobble_phase[0])
            ay = 0.25 * np.sin(2 * np.pi * 0.3 * i / spec.native_hz + wobble_phase[1])
            ca, sa = np.cos(ax), np.sin(ax)
            cb, sb = np.cos(ay), np.sin(ay)
            rot_x = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
            rot_y = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
            rot = rot_x @ rot_y
            shift = 0.08 * np.sin(
                2 * np.pi * 0.2 * i / spec.native_hz + wobble_phase[2] + np.arange(3)
            )
            offsets = np.array([[-0.12, 0.0, 0.0], [0.12, 0.0, 0.0]])
            for side in (0, 1):
                coords[i, side] = (coords[i, side] + offsets[side]) @ rot.T + shift

            features[i] = centers[objects[i]] + rng.normal(
                0.0, spec.feature_noise, size=spec.feature_dim
            )

        takes.append(
            Take(
                take_id=f"take{t:03d}",
                n_frames=n,
                hp_coords=coords,
                hp_valid=valid,
                rgb_features=features,
                segments=segments,
            )
        )
    return takes, meta


# ---------------------------------------------------------------------------
# File IO


def write_rgb_features(path, features):
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"features must be [n_frames, dim], got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(RGB_MAGIC)
        fh.write(struct.pack("<III", RGB_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_rgb_features(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RGB_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {RGB_MAGIC!r}")
        version, n_frames, dim = struct.unpack("<III", fh.read(12))
        if version != RGB_VERSION:
            raise ParseError(f"{path}: unsupported feature-file version {version}")
        raw = fh.read(n_frames * dim * 4)
    if len(raw) != n_frames * dim * 4:
        raise ParseError(f"{path}: truncated feature data")
    return np.frombuffer(raw, dtype="<f4").reshape(n_frames, dim).astype(np.float64)


def write_labels_file(path, segments):
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            fh.write(f"{seg.start_frame} {seg.end_frame} {seg.action} {seg.verb}\n")


def read_labels_file(path):
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 fields, got {len(tokens)}")
            try:
                start, end, action, verb = (int(t) for t in tokens)
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            segments.append(ActionSegment(start, end, action, verb))
    return segments


def write_vocab_file(path, names):
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(names):
            fh.write(f"{i} {name}\n")


def read_vocab_file(path):
    names = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split(maxsplit=1)
            if len(tokens) != 2:
                raise ParseError(f"{path}: line {lineno}: expected 'id name'")
            names[int(tokens[0])] = tokens[1].strip()
    return tuple(names[i] for i in sorted(names))


def hand_frames_of_take(take: Take):
    for i in range(take.n_frames):
        yield hp.HandFrame(
            take.hp_coords[i, 0],
            take.hp_coords[i, 1],
            take.hp_valid[i, 0],
            take.hp_valid[i, 1],
        )


def save_dataset(root, takes, meta: DatasetMeta, synth_spec: SynthSpec | None = None):
    """Write a dataset directory (see module docstring for the layout)."""
    import os

    os.makedirs(os.path.join(root, "takes"), exist_ok=True)
    write_vocab_file(os.path.join(root, "actions.txt"), meta.action_names)
    write_vocab_file(os.path.join(root, "verbs.txt"), meta.verb_names)
    for take in takes:
        tdir = os.path.join(root, "takes", take.take_id)
        os.makedirs(tdir, exist_ok=True)
        hp.write_hand_pose_file(
            os.path.join(tdir, "hand_pose.txt"), hand_frames_of_take(take)
        )
        write_rgb_features(os.path.join(tdir, "rgb_features.bin"), take.rgb_features)
        write_labels_file(os.path.join(tdir, "labels.txt"), take.segments)
    manifest = {
        "format_version": 1,
        "native_hz": meta.native_hz,
        "feature_dim": meta.feature_dim,
        "action_to_verb": list(meta.action_to_verb),
        "action_to_object": list(meta.action_to_object),
        "takes": [take.take_id for take in takes],
    }
    if synth_spec is not None:
        manifest["synth_spec"] = {
            k: getattr(synth_spec, k) for k in SynthSpec.__dataclass_fields__
        }
    with open(os.path.join(root, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(root):
    """Read a dataset directory back into (takes, DatasetMeta)."""
    import os

    meta_path = os.path.join(root, "meta.json")
    if not os.path.exists(meta_path):
        raise DataError(f"dataset manifest not found: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    action_names = read_vocab_file(os.path.join(root, "actions.txt"))
    verb_names = read_vocab_file(os.path.join(root, "verbs.txt"))
    meta = DatasetMeta(
        native_hz=float(manifest["native_hz"]),
        feature_dim=int(manifest["feature_dim"]),
        action_names=action_names,
        verb_names=verb_names,
        action_to_verb=tuple(manifest["action_to_verb"]),
        action_to_object=tuple(manifest.get("action_to_object", ())),
    )
    takes = []
    for take_id in manifest["takes"]:
        tdir = os.path.join(root, "takes", take_id)
        pose_path = os.path.join(tdir, "hand_pose.txt")
        labels_path = os.path.join(tdir, "labels.txt")
        feats_path = os.path.join(tdir, "rgb_features.bin")
        for p in (pose_path, labels_path, feats_path):
            if not os.path.exists(p):
                raise DataError(f"missing dataset file: {p}")
        frames = hp.parse_hand_pose_file(pose_path)
        coords = np.stack([np.stack([f.left, f.right]) for f in frames])
        valid = np.array([[f.left_valid, f.right_valid] for f in frames], dtype=bool)
        features = read_rgb_features(feats_path)
        segments = read_labels_file(labels_path)
        takes.append(
            Take(
                take_id=take_id,
                n_frames=len(frames),
                hp_coords=coords,
                hp_valid=valid,
                rgb_features=features,
                segments=segments,
            )
        )
    return takes, meta


# ---------------------------------------------------------------------------
# Windowing


@dataclass
class PreparedTake:
    """A take with per-frame labels and normalized, flattened hand frames."""

    take_id: str
    n_frames: int
    rgb_features: np.ndarray  # [n, D]
    hp_flat: np.ndarray       # [n, 126], zeros where the hand is invalid
    hp_valid: np.ndarray      # [n, 2]
    actions: np.ndarray
    verbs: np.ndarray


def prepare_take(take: Take, topo: hp.SkeletonTopology) -> PreparedTake:
    actions, verbs = take_labels(take)
    flat = np.zeros((take.n_frames, 2 * hp.N_KEYPOINTS * 3))
    for i, frame in enumerate(hand_frames_of_take(take)):
        norm = hp.normalize_hand_frame(frame, topo)
        flat[i] = hp.flatten_frame(norm)
    return PreparedTake(
        take_id=take.take_id,
        n_frames=take.n_frames,
        rgb_features=np.asarray(take.rgb_features, dtype=np.float64),
        hp_flat=flat,
        hp_valid=take.hp_valid.copy(),
        actions=actions,
        verbs=verbs,
    )


@dataclass
class WindowSet:
    """Stacked window tensors for one rate configuration."""

    rgb: np.ndarray            # [N, T_rgb, D]
    hp: np.ndarray | None      # [N, T_hp, 126]
    hp_valid: np.ndarray | None
    actions: np.ndarray        # [N]
    verbs: np.ndarray          # [N]
    sources: list              # [(take_id, end), ...]
    cfg: RateConfig

    def __len__(self):
        return len(self.actions)


def window_ends(n_frames, window_frames, stride):
    return np.arange(window_frames - 1, n_frames, stride)


def windows_from_takes(prepared, cfg: RateConfig, stride: int,
                       background_keep: float = 1.0, seed: int = 0) -> WindowSet:
    """Enumerate windows over prepared takes at the given stride."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    w = cfg.window_frames
    rgb_idx = sample_indices(cfg.native_hz, cfg.f_rgb, w)
    hp_idx = sample_indices(cfg.native_hz, cfg.f_hp, w) if cfg.hp_enabled else None
    rgb_parts, hp_parts, valid_parts, action_parts, verb_parts, sources = [], [], [], [], [], []
    for take in prepared:
        if take.n_frames < w:
            raise ConfigError(
                f"take {take.take_id} has {take.n_frames} frames, "
                f"shorter than the {w}-frame window"
            )
        ends = window_ends(take.n_frames, w, stride)
        starts = ends - w + 1
        rgb_parts.append(take.rgb_features[starts[:, None] + rgb_idx[None, :]])
        if hp_idx is not None:
            hp_parts.append(take.hp_flat[starts[:, None] + hp_idx[None, :]])
            valid_parts.append(take.hp_valid[starts[:, None] + hp_idx[None, :]])
        action_parts.append(take.actions[ends])
        verb_parts.append(take.verbs[ends])
        sources.extend((take.take_id, int(e)) for e in ends)
    ws = WindowSet(
        rgb=np.concatenate(rgb_parts),
        hp=np.concatenate(hp_parts) if hp_parts else None,
        hp_valid=np.concatenate(valid_parts) if valid_parts else None,
        actions=np.concatenate(action_parts),
        verbs=np.concatenate(verb_parts),
        sources=sources,
        cfg=cfg,
    )
    if background_keep < 1.0:
        ws = _subsample_background(ws, background_keep, seed)
    return ws


def _subsample_background(ws: WindowSet, keep: float, seed: int) -> WindowSet:
    rng = np.random.default_rng(seed)
    bg = ws.actions == BACKGROUND
    drop = bg & (rng.random(len(ws.actions)) >= keep)
    sel = ~drop
    return WindowSet(
        rgb=ws.rgb[sel],
        hp=ws.hp[sel] if ws.hp is not None else None,
        hp_valid=ws.hp_valid[sel] if ws.hp_valid is not None else None,
        actions=ws.actions[sel],
        verbs=ws.verbs[sel],
        sources=[s for s, k in zip(ws.sources, sel) if k],
        cfg=ws.cfg,
    )


def split_takes(takes, val_fraction: float, seed: int):
    """Deterministic take-level split; no take appears in both sets."""
    if not takes:
        raise DataError("cannot split an empty take list")
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(takes))
    n_val = max(1, int(round(val_fraction * len(takes))))
    if n_val >= len(takes):
        n_val = len(takes) - 1
    val_ids = set(order[:n_val])
    train = [t for i, t in enumerate(takes) if i not in val_ids]
    val = [t for i, t in enumerate(takes) if i in val_ids]
    return train, val


def split_and_window(prepared, cfg: RateConfig, stride: int, val_fraction=0.25,
                     seed=0, background_keep=1.0):
    """Take-level split, then window both sides at the same rate config."""
    train_takes, val_takes = split_takes(prepared, val_fraction, seed)
    train = windows_from_takes(train_takes, cfg, stride, background_keep, seed)
    val = windows_from_takes(val_takes, cfg, stride)
    return train, val


# ---------------------------------------------------------------------------
# Augmentation


def flip_rgb_features(features):
    """Feature-space stand-in for a horizontal image flip: reverse the
    feature order. An involution, so flipping twice restores the input."""
    return np.asarray(features)[..., ::-1].copy()


def horizontal_flip(window: MultiRateWindow) -> MultiRateWindow:
    """Mirror the sample across x.

    On normalized hand frames the mirror is absorbed by chirality
    canonicalization, so it reduces exactly to swapping the left and right
    hand blocks (and their validity flags). The RGB side goes through the
    feature flip hook.
    """
    rgb = flip_rgb_features(window.rgb_seq)
    hp_seq = window.hp_seq
    hp_valid = window.hp_valid
    if hp_seq is not None:
        half = hp_seq.shape[-1] // 2
        hp_seq = np.concatenate([hp_seq[..., half:], hp_seq[..., :half]], axis=-1)
        if hp_valid is not None:
            hp_valid = hp_valid[..., ::-1].copy()
    return replace(window, rgb_seq=rgb, hp_seq=hp_seq, hp_valid=hp_valid)


def temporal_jitter(window: MultiRateWindow, delta: int, take: PreparedTake,
                    cfg: RateConfig) -> MultiRateWindow:
    """Rebuild the window with its end shifted by ``delta`` native frames.

    The shifted end is clamped to the take bounds; labels are re-read at
    the new end.
    """
    _, end = window.source
    new_end = int(np.clip(end + delta, cfg.window_frames - 1, take.n_frames - 1))
    return build_window(
        take.rgb_features,
        take.hp_flat,
        take.hp_valid,
        take.actions,
        take.verbs,
        new_end,
        cfg,
        take_id=take.take_id,
    )


def augment(window: MultiRateWindow, ops, rng, take: PreparedTake | None = None,
            cfg: RateConfig | None = None) -> MultiRateWindow:
    """Apply seeded augmentations to one window.

    Shared ops (flip, jitter) act on both modalities consistently and are
    the only ones allowed when both streams are enabled. Modality-private
    ops (hp_noise, rgb_dropout) raise ConfigError in multimodal runs.
    """
    ops = tuple(ops)
    unknown = [op for op in ops if op not in SHARED_AUGMENTATIONS + PRIVATE_AUGMENTATIONS]
    if unknown:
        raise ConfigError(f"unknown augmentation ops: {unknown}")
    multimodal = window.hp_seq is not None and window.rgb_seq is not None
    private = [op for op in ops if op in PRIVATE_AUGMENTATIONS]
    if multimodal and private:
        raise ConfigError(
            f"modality-private augmentations {private} are not allowed in "
            "multimodal runs; only shared augmentations preserve cross-modal "
            "consistency"
        )
    out = window
    if "jitter" in ops:
        if take is None or cfg is None:
            raise ConfigError("temporal jitter requires the source take and rate config")
        delta = int(rng.integers(-JITTER_RANGE, JITTER_RANGE + 1))
        out = temporal_jitter(out, delta, take, cfg)
    if "flip" in ops and rng.random() < 0.5:
        out = horizontal_flip(out)
    if "hp_noise" in ops and out.hp_seq is not None:
        out = replace(out, hp_seq=out.hp_seq + rng.normal(0.0, 0.005, out.hp_seq.shape))
    if "rgb_dropout" in ops:
        mask = rng.random(out.rgb_seq.shape) >= 0.1
        out = replace(out, rgb_seq=out.rgb_seq * mask)
    return out
