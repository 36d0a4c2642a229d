"""Bilateral 3D hand keypoints and their canonical normalization.

A hand is 21 keypoints (wrist = index 0, then four joints per finger:
thumb 1-4, index 5-8, middle 9-12, ring 13-16, pinky 17-20). Normalization
runs three steps per valid hand:

1. translate so the wrist sits at the origin,
2. rescale every bone to its reference length, walking the kinematic tree
   root to leaf while keeping bone directions,
3. rotate (proper rotation, det +1) so the wrist-to-middle-MCP vector lies
   on +z and the wrist-to-index-MCP residual lies on +x.

Both hands are then put into one canonical chirality, so a mirrored left
hand and the matching right hand normalize to identical coordinates. In
the canonical frame a mirror reduces to negating the y axis (the +z and
+x anchors are mirror-stable), so chirality is canonicalized by y-flipping
whenever the summed y coordinate is negative. This keeps normalization
exactly idempotent, including through file round trips. Invalid hands map
to all-zero coordinates.

File format: one frame per line, whitespace separated:
``left_valid x0 y0 z0 ... x20 y20 z20 right_valid x0 y0 z0 ...`` (128
fields). Floats are written with "%.17g" so a write/parse round trip is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoseError, InvalidPoseError, ParseError, ShapeError

N_KEYPOINTS = 21
WRIST = 0
INDEX_MCP = 5
MIDDLE_MCP = 9

FINGER_BASES = (1, 5, 9, 13, 17)  # thumb, index, middle, ring, pinky

# Kinematic tree in root-to-leaf order: wrist to each finger base, then
# down the finger chain.
EDGES = tuple(
    (base + j - 1 if j else WRIST, base + j)
    for base in FINGER_BASES
    for j in range(4)
)

# Approximate adult bone lengths in meters, one per edge (same order).
DEFAULT_BONE_LENGTHS = np.array(
    [
        0.040, 0.034, 0.028, 0.024,   # thumb
        0.092, 0.038, 0.024, 0.020,   # index
        0.088, 0.042, 0.026, 0.022,   # middle
        0.084, 0.038, 0.025, 0.021,   # ring
        0.080, 0.030, 0.020, 0.018,   # pinky
    ]
)

_MIRROR_X = np.array([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class SkeletonTopology:
    """Hand skeleton: edge list plus per-edge reference lengths."""

    keypoints_per_hand: int = N_KEYPOINTS
    edges: tuple = EDGES
    reference_lengths: np.ndarray = field(
        default_factory=lambda: DEFAULT_BONE_LENGTHS.copy()
    )

    def __post_init__(self):
        lengths = np.asarray(self.reference_lengths, dtype=float)
        object.__setattr__(self, "reference_lengths", lengths)
        n = self.keypoints_per_hand
        if len(self.edges) != n - 1:
            raise ShapeError(f"expected {n - 1} edges for a spanning tree, got {len(self.edges)}")
        if lengths.shape != (n - 1,):
            raise ShapeError(f"expected {n - 1} reference lengths, got {lengths.shape}")
        if not np.all(lengths > 0):
            raise ShapeError("reference lengths must all be positive")
        seen = {WRIST}
        children = set()
        for parent, child in self.edges:
            if parent not in seen:
                raise ShapeError(f"edge ({parent},{child}) visits child before parent")
            if child in children:
                raise ShapeError(f"keypoint {child} appears as child twice")
            children.add(child)
            seen.add(child)
        if seen != set(range(n)):
            raise ShapeError("edges do not span all keypoints")

    @classmethod
    def with_unit_lengths(cls):
        return cls(reference_lengths=np.ones(N_KEYPOINTS - 1))

    @classmethod
    def with_lengths(cls, lengths):
        return cls(reference_lengths=np.asarray(lengths, dtype=float))


@dataclass
class HandFrame:
    """One time step of raw bilateral keypoints (meters)."""

    left: np.ndarray
    right: np.ndarray
    left_valid: bool
    right_valid: bool

    def __post_init__(self):
        self.left = _as_hand(self.left, N_KEYPOINTS)
        self.right = _as_hand(self.right, N_KEYPOINTS)
        self.left_valid = bool(self.left_valid)
        self.right_valid = bool(self.right_valid)

    @classmethod
    def empty(cls):
        z = np.zeros((N_KEYPOINTS, 3))
        return cls(z, z.copy(), False, False)


@dataclass
class NormalizedHandFrame(HandFrame):
    """Same layout as HandFrame, coordinates in the canonical hand frame."""


def _as_hand(coords, n=None):
    arr = np.ascontiguousarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or (n is not None and arr.shape[0] != n):
        want = f"[{n}, 3]" if n is not None else "[K, 3]"
        raise ShapeError(f"hand must be {want}, got {arr.shape}")
    return arr


def mirror_x(hand):
    """Reflect keypoints across the yz plane (negate x)."""
    return _as_hand(hand) * _MIRROR_X


def translate_to_wrist(hand):
    """Shift all keypoints so the wrist lands exactly at the origin."""
    hand = _as_hand(hand)
    if not np.all(np.isfinite(hand)):
        raise InvalidPoseError("hand contains non-finite coordinates")
    return hand - hand[WRIST]


def standardize_bone_lengths(hand, topo: SkeletonTopology):
    """Replace every bone length with its reference, preserving directions.

    Edges are walked root to leaf; each child is placed at the already
    repositioned parent plus reference_length times the original bone
    direction.
    """
    hand = _as_hand(hand, topo.keypoints_per_hand)
    out = hand.copy()
    for e, (parent, child) in enumerate(topo.edges):
        d = hand[child] - hand[parent]
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            raise DegeneratePoseError(
                f"zero-length bone on edge ({parent}, {child})"
            )
        out[child] = out[parent] + topo.reference_lengths[e] * (d / norm)
    return out


def canonical_rotation(hand):
    """Proper rotation aligning middle-MCP to +z and the index-MCP residual to +x."""
    hand = _as_hand(hand, N_KEYPOINTS)
    v_mid = hand[MIDDLE_MCP] - hand[WRIST]
    v_idx = hand[INDEX_MCP] - hand[WRIST]
    n_mid = np.linalg.norm(v_mid)
    if n_mid < 1e-12:
        raise DegeneratePoseError("wrist and middle-MCP coincide")
    z_axis = v_mid / n_mid
    residual = v_idx - np.dot(v_idx, z_axis) * z_axis
    n_res = np.linalg.norm(residual)
    if n_res < 1e-9 * max(np.linalg.norm(v_idx), 1e-12) or n_res < 1e-12:
        raise DegeneratePoseError("index-MCP collinear with middle-MCP direction")
    x_axis = residual / n_res
    y_axis = np.cross(z_axis, x_axis)
    return np.stack([x_axis, y_axis, z_axis])  # rows: new x, y, z


def canonical_rotate(hand):
    """Apply the canonical rotation to all keypoints (wrist must be at origin)."""
    hand = _as_hand(hand, N_KEYPOINTS)
    return hand @ canonical_rotation(hand).T


def canonicalize_chirality(hand):
    """Flip y if the summed y coordinate is negative.

    In the canonical frame this is exactly what mirroring across x followed
    by re-normalization would do, so mirrored poses collapse onto their
    unmirrored counterparts. Poses with zero y sum are mirror-symmetric and
    stay as they are.
    """
    hand = _as_hand(hand, N_KEYPOINTS)
    if hand[:, 1].sum() < 0:
        return hand * np.array([1.0, -1.0, 1.0])
    return hand


def normalize_hand(hand, topo: SkeletonTopology):
    """Run the full per-hand pipeline: steps 1-3 plus chirality."""
    hand = _as_hand(hand, N_KEYPOINTS)
    return canonicalize_chirality(
        canonical_rotate(standardize_bone_lengths(translate_to_wrist(hand), topo))
    )


def normalize_hand_frame(frame: HandFrame, topo: SkeletonTopology) -> NormalizedHandFrame:
    """Normalize both hands of a frame.

    Invalid hands come out all-zero with their validity flag preserved.
    Both hands land in one canonical chirality, so left and right blocks
    feed the same feature extractor distribution.
    """
    zeros = np.zeros((N_KEYPOINTS, 3))
    sides = {}
    for side, coords, valid in (
        ("left", frame.left, frame.left_valid),
        ("right", frame.right, frame.right_valid),
    ):
        if not valid:
            sides[side] = zeros.copy()
            continue
        try:
            sides[side] = normalize_hand(coords, topo)
        except (DegeneratePoseError, InvalidPoseError) as exc:
            raise type(exc)(f"{side} hand: {exc}") from None
    return NormalizedHandFrame(
        left=sides["left"],
        right=sides["right"],
        left_valid=frame.left_valid,
        right_valid=frame.right_valid,
    )


def flatten_frame(frame: HandFrame):
    """Concatenate left then right keypoints into a length-126 vector."""
    return np.concatenate([frame.left.ravel(), frame.right.ravel()])


def bone_lengths(hand, topo: SkeletonTopology):
    hand = _as_hand(hand, topo.keypoints_per_hand)
    return np.array(
        [np.linalg.norm(hand[c] - hand[p]) for p, c in topo.edges]
    )


def reference_lengths_from_frames(frames, topo: SkeletonTopology):
    """Per-edge mean bone length over all valid hands in ``frames``."""
    total = np.zeros(len(topo.edges))
    count = 0
    for frame in frames:
        for coords, valid in ((frame.left, frame.left_valid), (frame.right, frame.right_valid)):
            if valid:
                total += bone_lengths(coords, topo)
                count += 1
    if count == 0:
        raise InvalidPoseError("no valid hands to estimate reference lengths from")
    return total / count


FIELDS_PER_LINE = 2 * (1 + N_KEYPOINTS * 3)


def format_frame(frame: HandFrame) -> str:
    parts = []
    for coords, valid in ((frame.left, frame.left_valid), (frame.right, frame.right_valid)):
        parts.append("1" if valid else "0")
        parts.extend("%.17g" % v for v in np.asarray(coords).ravel())
    return " ".join(parts)


def _parse_line(line, lineno):
    tokens = line.split()
    if len(tokens) != FIELDS_PER_LINE:
        raise ParseError(
            f"line {lineno}: expected {FIELDS_PER_LINE} fields, got {len(tokens)}"
        )
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"line {lineno}: {exc}") from None
    block = 1 + N_KEYPOINTS * 3
    left_valid = values[0] != 0.0
    left = np.array(values[1:block]).reshape(N_KEYPOINTS, 3)
    right_valid = values[block] != 0.0
    right = np.array(values[block + 1 :]).reshape(N_KEYPOINTS, 3)
    return HandFrame(left, right, left_valid, right_valid)


def parse_hand_pose_file(path):
    """Read a hand-pose text file into a list of HandFrames."""
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            frames.append(_parse_line(line, lineno))
    return frames


def write_hand_pose_file(path, frames):
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(format_frame(frame))
            fh.write("\n")


def write_lengths_file(path, lengths):
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(lengths, dtype=float):
            fh.write("%.17g\n" % v)


def read_lengths_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        values = [float(line) for line in fh if line.strip()]
    return np.array(values)
