"""Parameter layout and forward pass of the full moment alignment network."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, DimensionError
from .graph import IganCell, IganState, MatchingScores, igan_stack_forward, initial_state, score_moments
from .language import EMBEDDING_DIM, DynamicFilter, EmbeddingTable, lstm_forward, make_dynamic_filters
from .video import AlignedFeatures, PyramidConfig, align_features, build_pyramid, get_preset

ALIGNMENT_MODES = ("word", "sentence", "none")


@dataclass
class ModelConfig:
    preset: str = "didemo"
    dim: int = 512
    cells: int = 3
    alignment: str = "word"          # word-level filters, last-word filter, or no alignment
    diag_value: float = 1.0
    input_dim: Optional[int] = None  # raw clip feature width; projected to ``dim`` if different
    embedding_dim: int = EMBEDDING_DIM
    # multiply aligned features by T_f so that uniform attention is the identity
    rescale_alignment: bool = True
    custom_pyramid: Optional[PyramidConfig] = None   # overrides the preset geometry

    def __post_init__(self):
        if self.dim < 1 or self.cells < 0 or self.embedding_dim < 1:
            raise ConfigurationError("dim and embedding_dim must be positive, cells >= 0")
        if self.alignment not in ALIGNMENT_MODES:
            raise ConfigurationError(f"alignment must be one of {ALIGNMENT_MODES}")
        get_preset(self.preset)

    @property
    def pyramid(self) -> PyramidConfig:
        return self.custom_pyramid or get_preset(self.preset)

    @property
    def projects_input(self) -> bool:
        return self.input_dim is not None and self.input_dim != self.dim

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Ordered name -> shape map.  This order fixes both initialisation draws
    and the optimiser's update order."""
    d, e = config.dim, config.embedding_dim
    shapes = {
        "lstm.w_ih": (e, 4 * d),
        "lstm.w_hh": (d, 4 * d),
        "lstm.bias": (4 * d,),
        "filter.weight": (d, d),
        "filter.bias": (d,),
    }
    if config.projects_input:
        shapes["video.proj.kernel"] = (1, config.input_dim, d)
        shapes["video.proj.bias"] = (d,)
    for k, stage in enumerate(config.pyramid.stages):
        shapes[f"pyramid.{k}.kernel"] = (stage.width, d, d)
        shapes[f"pyramid.{k}.bias"] = (d,)
    for t in range(config.cells):
        shapes[f"igan.{t}.w_r"] = (d, d)
        shapes[f"igan.{t}.w_o"] = (d, d)
    return shapes


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """LSTM: U(+-1/sqrt(d)) with forget bias 1; elsewhere U(+-1/sqrt(fan_in)), zero biases."""
    d = config.dim
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith("lstm."):
            bound = 1.0 / np.sqrt(d)
            value = rng.uniform(-bound, bound, size=shape)
            if name == "lstm.bias":
                value[d:2 * d] = 1.0
        elif name.endswith("bias"):
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) == 3 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value
    return params


@dataclass
class ForwardResult:
    gamma: DynamicFilter
    aligned: Optional[AlignedFeatures]
    moments: ad.Tensor           # f_m, N x d
    state: IganState
    scores: MatchingScores


def forward(config: ModelConfig, params: Dict[str, ad.Tensor], embedded: np.ndarray,
            clips: np.ndarray) -> ForwardResult:
    """Query embeddings (L x e) and clip features (T_f x raw) to N moment logits."""
    pyramid = config.pyramid
    encoding = lstm_forward(embedded, params["lstm.w_ih"], params["lstm.w_hh"],
                            params["lstm.bias"])
    gamma = make_dynamic_filters(encoding, params["filter.weight"], params["filter.bias"])

    video = ad.Tensor(clips)
    if config.projects_input:
        video = ad.add(ad.conv1d(video, params["video.proj.kernel"]), params["video.proj.bias"])
    elif video.shape[1] != config.dim:
        raise DimensionError(f"clip features have width {video.shape[1]}, model d={config.dim}")

    aligned = None
    if config.alignment != "none":
        filt = gamma.gamma if config.alignment == "word" else gamma.gamma[:, -1:]
        aligned = align_features(video, filt)
        video = aligned.features
        if config.rescale_alignment:
            video = ad.mul(video, float(video.shape[0]))

    stages = range(len(pyramid.stages))
    moments = build_pyramid(video, pyramid, [params[f"pyramid.{k}.kernel"] for k in stages],
                            [params[f"pyramid.{k}.bias"] for k in stages])
    if config.cells:
        cells = [IganCell(params[f"igan.{t}.w_r"], params[f"igan.{t}.w_o"])
                 for t in range(config.cells)]
        state = igan_stack_forward(moments, cells, config.diag_value)
    else:
        state = initial_state(moments, config.diag_value)
    scores = score_moments(state.nodes, gamma.gamma)
    return ForwardResult(gamma, aligned, moments, state, scores)


def leaf_tensors(params: Dict[str, np.ndarray], requires_grad: bool = True) -> Dict[str, ad.Tensor]:
    return {name: ad.Tensor(value, requires_grad=requires_grad, name=name)
            for name, value in params.items()}


def embed_query(table: EmbeddingTable, ids: Sequence[int]) -> np.ndarray:
    return table.lookup(ids)


def parameter_count(params: Dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def names(config: ModelConfig) -> List[str]:
    return list(parameter_shapes(config))
