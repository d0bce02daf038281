"""Query-conditioned clip alignment and the multi-scale candidate pyramid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, DimensionError, InputError
from .io_utils import atomic_write_bytes, atomic_write_text


@dataclass
class ClipFeatures:
    video_id: str
    features: np.ndarray            # T_f x dim
    clip_duration_seconds: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError(f"clip features for {self.video_id!r} must be 2-D, "
                                 f"got shape {self.features.shape}")
        if not self.clip_duration_seconds > 0:
            raise InputError(f"clip duration must be positive for {self.video_id!r}")

    @property
    def num_clips(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return self.num_clips * self.clip_duration_seconds


@dataclass(frozen=True)
class Stage:
    width: int
    padding: str
    pool: Optional[int] = None


@dataclass(frozen=True)
class PyramidConfig:
    """Clip count, initial pooling stride and the per-layer cell layout.

    ``layout="dyadic"``: layer k has base/2**(k-1) cells tiling the video.
    ``layout="spans"``: layer k enumerates every run of k consecutive segments.
    """

    name: str
    clips: int
    pool_stride: int
    layout: str
    stages: Tuple[Stage, ...] = field(default=())

    def __post_init__(self):
        if self.clips % self.pool_stride:
            raise ConfigurationError(f"{self.clips} clips are not divisible by "
                                     f"pooling stride {self.pool_stride}")
        if self.layout not in ("dyadic", "spans"):
            raise ConfigurationError(f"unknown pyramid layout {self.layout!r}")
        if self.layout == "dyadic" and self.base_cells & (self.base_cells - 1):
            raise ConfigurationError("dyadic layout needs a power-of-two cell count")
        if not self.stages:
            object.__setattr__(self, "stages", self._default_stages())
        if len(self.stages) != len(self.layer_sizes):
            raise ConfigurationError("one stage per pyramid layer is required")

    @property
    def base_cells(self) -> int:
        return self.clips // self.pool_stride

    @property
    def layer_sizes(self) -> List[int]:
        if self.layout == "spans":
            return list(range(self.base_cells, 0, -1))
        sizes, n = [], self.base_cells
        while n >= 1:
            sizes.append(n)
            n //= 2
        return sizes

    @property
    def num_moments(self) -> int:
        return sum(self.layer_sizes)

    def _default_stages(self) -> Tuple[Stage, ...]:
        depth = len(self.layer_sizes)
        if self.layout == "spans":
            return (Stage(1, "valid"),) + (Stage(2, "valid"),) * (depth - 1)
        return (Stage(3, "same"),) + (Stage(3, "same", pool=2),) * (depth - 1)

    def to_dict(self) -> dict:
        return {"name": self.name, "clips": self.clips, "pool_stride": self.pool_stride,
                "layout": self.layout}


PRESETS = {
    "charades": PyramidConfig("charades", clips=256, pool_stride=16, layout="dyadic"),
    "didemo": PyramidConfig("didemo", clips=240, pool_stride=40, layout="spans"),
}

# clip duration the synthetic generator uses for each preset (seconds)
PRESET_DURATIONS = {"charades": 64.0, "didemo": 30.0}


def get_preset(name: str) -> PyramidConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class CandidateMoment:
    layer: int              # 1-based
    index: int              # 0-based within the layer
    start_seconds: float
    end_seconds: float

    @property
    def interval(self) -> Tuple[float, float]:
        return (self.start_seconds, self.end_seconds)


def moment_clip_spans(config: PyramidConfig) -> List[Tuple[int, int, int, int]]:
    """(layer, index, first clip, end clip) for every anchor, layer-major."""
    spans = []
    if config.layout == "spans":
        seg = config.clips // config.base_cells
        for k, size in enumerate(config.layer_sizes, start=1):
            for j in range(size):
                spans.append((k, j, j * seg, (j + k) * seg))
    else:
        for k, size in enumerate(config.layer_sizes, start=1):
            cell = config.clips // size
            for j in range(size):
                spans.append((k, j, j * cell, (j + 1) * cell))
    return spans


def enumerate_moments(config: PyramidConfig, duration_seconds: float) -> List[CandidateMoment]:
    if not duration_seconds > 0:
        raise InputError(f"video duration must be positive, got {duration_seconds}")
    clip = duration_seconds / config.clips
    return [CandidateMoment(k, j, a * clip, b * clip) for k, j, a, b in moment_clip_spans(config)]


@dataclass
class AlignedFeatures:
    features: ad.Tensor      # T_f x d, clip rows rescaled by attention
    response: ad.Tensor      # T_f x L
    attention: ad.Tensor     # T_f


def align_features(clips: ad.Tensor, gamma: ad.Tensor) -> AlignedFeatures:
    """Rescale clip features by a softmax over clips of their summed filter response."""
    if clips.ndim != 2 or gamma.ndim != 2 or clips.shape[1] != gamma.shape[0]:
        raise DimensionError(f"feature width d must agree: clips {clips.shape}, "
                             f"filters {gamma.shape}")
    response = ad.matmul(clips, gamma)
    attention = ad.softmax(ad.sum(response, axis=1))
    scaled = ad.mul(clips, ad.reshape(attention, (clips.shape[0], 1)))
    return AlignedFeatures(scaled, response, attention)


def build_pyramid(clips: ad.Tensor, config: PyramidConfig, kernels: Sequence[ad.Tensor],
                  biases: Sequence[ad.Tensor]) -> ad.Tensor:
    """Pool, then run one conv(+pool)+relu stage per layer; rows concatenated layer-major."""
    if clips.shape[0] != config.clips:
        raise ConfigurationError(f"{config.name} pyramid expects {config.clips} clips, "
                                 f"got {clips.shape[0]}")
    if len(kernels) != len(config.stages) or len(biases) != len(config.stages):
        raise ConfigurationError(f"{config.name} pyramid needs {len(config.stages)} stages")
    x = ad.max_pool1d(clips, window=config.pool_stride, stride=config.pool_stride)
    layers = []
    for stage, kernel, bias, expected in zip(config.stages, kernels, biases, config.layer_sizes):
        x = ad.conv1d(x, kernel, stride=1, padding=stage.padding)
        if stage.pool:
            x = ad.max_pool1d(x, window=stage.pool, stride=stage.pool)
        x = ad.relu(ad.add(x, bias))
        if x.shape[0] != expected:
            raise ConfigurationError(f"stage produced {x.shape[0]} cells, expected {expected}")
        layers.append(x)
    return ad.concat(layers, axis=0)


# ---------------------------------------------------------------------------
# feature files: JSON manifest + raw float64 little-endian matrix
# ---------------------------------------------------------------------------

def write_features(manifest_path, clips: ClipFeatures, data_file: Optional[str] = None) -> None:
    manifest_path = Path(manifest_path)
    data_file = data_file or manifest_path.with_suffix(".bin").name
    raw = np.ascontiguousarray(clips.features, dtype="<f8").tobytes()
    atomic_write_bytes(manifest_path.parent / data_file, raw)
    manifest = {"video_id": clips.video_id, "T_f": clips.num_clips, "dim": clips.dim,
                "clip_duration_seconds": clips.clip_duration_seconds, "data_file": data_file}
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_features(manifest_path) -> ClipFeatures:
    manifest_path = Path(manifest_path)
    try:
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
        rows, dim = int(meta["T_f"]), int(meta["dim"])
        data_path = manifest_path.parent / meta["data_file"]
        raw = np.fromfile(data_path, dtype="<f8")
    except FileNotFoundError as exc:
        raise InputError(f"feature file not found: {exc.filename}") from None
    except (KeyError, ValueError) as exc:
        raise InputError(f"{manifest_path}: malformed feature manifest ({exc})") from None
    if raw.size != rows * dim:
        raise InputError(f"{data_path}: expected {rows * dim} values, found {raw.size}")
    return ClipFeatures(meta["video_id"], raw.reshape(rows, dim).astype(np.float64),
                        float(meta["clip_duration_seconds"]))


class FeatureStore:
    """Lazy loader for ``<root>/<video_id>.json`` feature manifests."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache = {}

    def __getitem__(self, video_id: str) -> ClipFeatures:
        if video_id not in self._cache:
            path = self.root / f"{video_id}.json"
            if not path.exists():
                raise InputError(f"no feature file for video_id {video_id!r} ({path})")
            self._cache[video_id] = read_features(path)
        return self._cache[video_id]
