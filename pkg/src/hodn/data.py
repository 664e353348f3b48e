"""Synthetic scenes and the line-oriented dataset format.

Scene signature layout (channels of the feature grid), with ``A`` actions
and ``B = max(1, ceil(log2(K_obj)))`` class-code bits:

====================  ==================================================
channel               content
====================  ==================================================
0                     1.0 inside every human box
1 .. A                action bits of that human (1.0 when the action holds)
A + 1                 1.0 inside every object box
A + 2 .. A + 1 + B    object class code, bit ``b`` of the class as +1/-1
remaining             background noise only
====================  ==================================================

Boxes are aligned to grid cells and never overlap; each object touches the
human it is paired with.  Cells outside all boxes carry N(0, 0.05) noise on
every channel.  A cell belongs to a box when its centre lies inside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, ParseError

NOISE_STD = 0.05
MAX_PAIRS = 4


@dataclass(frozen=True)
class GroundTruthTriplet:
    human_box: tuple  # (cx, cy, w, h), normalised
    object_box: tuple
    object_class: int
    actions: tuple  # one bool per action class

    def __post_init__(self):
        object.__setattr__(self, "human_box", tuple(float(v) for v in self.human_box))
        object.__setattr__(self, "object_box", tuple(float(v) for v in self.object_box))
        object.__setattr__(self, "actions", tuple(bool(a) for a in self.actions))
        object.__setattr__(self, "object_class", int(self.object_class))

    @property
    def action_indices(self):
        return [i for i, a in enumerate(self.actions) if a]


@dataclass
class SceneSample:
    scene_id: int
    grid: np.ndarray  # [C, H, W]
    triplets: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (self.scene_id == other.scene_id and self.grid.shape == other.grid.shape
                and np.array_equal(self.grid, other.grid) and self.triplets == other.triplets)


def class_code_bits(num_obj_classes):
    return max(1, math.ceil(math.log2(num_obj_classes)))


def required_channels(config):
    return 2 + config.num_actions + class_code_bits(config.num_obj_classes)


def cell_mask(box, height, width):
    """Boolean [H, W] mask of cells whose centre lies inside a cxcywh box."""
    cx, cy, w, h = box
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    inside_y = (ys > cy - h / 2) & (ys < cy + h / 2)
    inside_x = (xs > cx - w / 2) & (xs < cx + w / 2)
    return inside_y[:, None] & inside_x[None, :]


def _cells_to_box(row, col, rows, cols, height, width):
    return ((col + cols / 2) / width, (row + rows / 2) / height, cols / width, rows / height)


def _place_pairs(rng, count, height, width):
    occupied = np.zeros((height, width), dtype=bool)
    pairs = []
    for _ in range(count):
        for _attempt in range(200):
            hr, hc = rng.integers(1, 4, size=2)
            r0, c0 = rng.integers(0, height - hr + 1), rng.integers(0, width - hc + 1)
            orr, oc = rng.integers(1, 3, size=2)
            side = rng.integers(4)
            if side == 0:
                o0 = (r0 - orr, c0)
            elif side == 1:
                o0 = (r0 + hr, c0)
            elif side == 2:
                o0 = (r0, c0 - oc)
            else:
                o0 = (r0, c0 + hc)
            if not (0 <= o0[0] <= height - orr and 0 <= o0[1] <= width - oc):
                continue
            human = np.zeros_like(occupied)
            human[r0:r0 + hr, c0:c0 + hc] = True
            obj = np.zeros_like(occupied)
            obj[o0[0]:o0[0] + orr, o0[1]:o0[1] + oc] = True
            if (occupied & (human | obj)).any():
                continue
            occupied |= human | obj
            pairs.append((_cells_to_box(r0, c0, hr, hc, height, width),
                          _cells_to_box(o0[0], o0[1], orr, oc, height, width)))
            break
    return pairs


def generate_scene(seed, config, scene_id=0):
    """Deterministic synthetic scene with 1..min(4, N) human-object pairs."""
    if config.num_queries < 1:
        raise ConfigurationError("num_queries must be >= 1")
    need = required_channels(config)
    if config.channels < need:
        raise ConfigurationError(
            f"channels={config.channels} too small for the scene signature (needs {need})")
    if config.grid_h < 4 or config.grid_w < 4:
        raise ConfigurationError("scene generation needs a grid of at least 4x4")
    rng = np.random.default_rng(seed)
    height, width, acts = config.grid_h, config.grid_w, config.num_actions
    bits = class_code_bits(config.num_obj_classes)

    count = int(rng.integers(1, min(MAX_PAIRS, config.num_queries) + 1))
    pairs = _place_pairs(rng, count, height, width)
    grid = rng.normal(0.0, NOISE_STD, size=(config.channels, height, width))
    triplets = []
    for human_box, object_box in pairs:
        cls = int(rng.integers(config.num_obj_classes))
        actions = np.zeros(acts, dtype=bool)
        while not actions.any():
            actions = rng.random(acts) < 0.5
        hm = cell_mask(human_box, height, width)
        om = cell_mask(object_box, height, width)
        grid[:, hm] = 0.0
        grid[0, hm] = 1.0
        grid[1:1 + acts, hm] = actions.astype(np.float64)[:, None]
        grid[:, om] = 0.0
        grid[acts + 1, om] = 1.0
        code = np.array([1.0 if (cls >> b) & 1 else -1.0 for b in range(bits)])
        grid[acts + 2:acts + 2 + bits, om] = code[:, None]
        triplets.append(GroundTruthTriplet(human_box, object_box, cls, tuple(actions)))
    return SceneSample(scene_id, grid, triplets)


def scene_seed(base_seed, index):
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def generate_dataset(count, seed, config):
    return [generate_scene(scene_seed(seed, i), config, scene_id=i) for i in range(count)]


# ----------------------------------------------------------------------
# dataset text format
# ----------------------------------------------------------------------
HEADER = "# hodn-dataset v1"


def _fmt(v):
    return format(float(v), ".17g")


def format_scene(scene):
    c, h, w = scene.grid.shape
    grid = " ".join(_fmt(v) for v in scene.grid.reshape(-1))
    triplets = "|".join(
        ",".join(_fmt(v) for v in t.human_box) + ";"
        + ",".join(_fmt(v) for v in t.object_box) + ";"
        + str(t.object_class) + ";"
        + "".join("1" if a else "0" for a in t.actions)
        for t in scene.triplets
    )
    return f"{scene.scene_id}\t{c},{h},{w}\t{grid}\t{triplets}"


def _parse_box(text, lineno):
    values = [float(v) for v in text.split(",")]
    if len(values) != 4:
        raise FormatError(f"box needs 4 values, got {len(values)}", lineno)
    return tuple(values)


def parse_scene(line, lineno=None):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
    try:
        scene_id = int(parts[0])
        dims = tuple(int(v) for v in parts[1].split(","))
        values = np.array([float(v) for v in parts[2].split()], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"malformed scene record ({exc})", lineno) from None
    if len(dims) != 3 or min(dims) < 1:
        raise FormatError(f"grid dims must be three positive ints, got {parts[1]!r}", lineno)
    if values.size != dims[0] * dims[1] * dims[2]:
        raise FormatError(f"grid has {values.size} values but dims {dims} need "
                          f"{dims[0] * dims[1] * dims[2]}", lineno)
    triplets = []
    if parts[3]:
        for chunk in parts[3].split("|"):
            fields_ = chunk.split(";")
            if len(fields_) != 4:
                raise ParseError(f"malformed triplet {chunk!r}", lineno)
            try:
                human, obj = _parse_box(fields_[0], lineno), _parse_box(fields_[1], lineno)
                cls = int(fields_[2])
            except ValueError as exc:
                raise ParseError(f"malformed triplet {chunk!r} ({exc})", lineno) from None
            if not fields_[3] or set(fields_[3]) - {"0", "1"}:
                raise ParseError(f"bad action bits {fields_[3]!r}", lineno)
            triplets.append(GroundTruthTriplet(human, obj, cls, tuple(c == "1" for c in fields_[3])))
    return SceneSample(scene_id, values.reshape(dims), triplets)


def save_dataset(scenes, path):
    lines = [HEADER] + [format_scene(s) for s in scenes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, config=None):
    """Read a dataset file.  With ``config`` given, grid dims are checked."""
    scenes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            if not line.endswith("\n"):
                raise ParseError("truncated record (missing end of line)", lineno)
            scene = parse_scene(line, lineno)
            if config is not None:
                want = (config.channels, config.grid_h, config.grid_w)
                if scene.grid.shape != want:
                    raise FormatError(f"grid dims {scene.grid.shape} do not match config {want}", lineno)
            scenes.append(scene)
    return scenes
