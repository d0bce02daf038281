"""Target assignment, soft-IoU sigmoid cross-entropy, Adam and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .data import Sample
from .exceptions import ConfigurationError, DimensionError, InputError
from .graph import MatchingScores
from .io_utils import atomic_write_bytes, dump_json
from .language import EmbeddingTable, Vocabulary, tokenize
from .metrics import temporal_iou
from .model import ModelConfig, forward, init_parameters, leaf_tensors, parameter_shapes
from .rng import make_rng, restore_rng, rng_state
from .video import CandidateMoment, ClipFeatures, enumerate_moments

logger = logging.getLogger(__name__)

POSITIVE_IOU = 0.5


# ---------------------------------------------------------------------------
# targets and loss
# ---------------------------------------------------------------------------

def assign_targets(moments: Sequence[CandidateMoment], gt: Tuple[float, float],
                   soft_negatives: bool = False) -> np.ndarray:
    """IoU target per candidate; candidates at or below IoU 0.5 get 0.

    With ``soft_negatives`` they keep their raw IoU instead.
    """
    if not moments:
        raise InputError("no candidate moments")
    if not gt[0] < gt[1]:
        raise InputError(f"degenerate ground truth [{gt[0]}, {gt[1]})")
    ious = np.array([temporal_iou(m.interval, gt) for m in moments])
    if soft_negatives:
        return ious
    return np.where(ious > POSITIVE_IOU, ious, 0.0)


def loss(scores: Sequence[MatchingScores], targets: Sequence[np.ndarray]) -> ad.Tensor:
    """Mean sigmoid cross-entropy over every candidate in the batch."""
    if len(scores) != len(targets):
        raise DimensionError(f"{len(scores)} score vectors for {len(targets)} target vectors")
    total, count = None, 0
    for sc, tg in zip(scores, targets):
        tg = np.asarray(tg, dtype=np.float64)
        if sc.logits.shape != tg.shape:
            raise DimensionError(f"scores {sc.logits.shape} and targets {tg.shape} differ")
        term = ad.bce_with_logits_sum(sc.logits, tg)
        total = term if total is None else ad.add(total, term)
        count += tg.size
    if total is None:
        raise InputError("empty batch")
    return ad.mul(total, 1.0 / count)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class HyperParams:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    dim: int = 512
    preset: str = "didemo"
    cells: int = 3
    alignment: str = "word"
    diag_value: float = 1.0
    soft_negatives: bool = False

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.dim < 1 or self.cells < 0:
            raise ConfigurationError("lr >= 0, batch_size >= 1, epochs >= 0, dim >= 1, cells >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError("Adam betas must lie in [0, 1) and eps must be positive")

    def model_config(self, input_dim: Optional[int] = None) -> ModelConfig:
        return ModelConfig(preset=self.preset, dim=self.dim, cells=self.cells,
                           alignment=self.alignment, diag_value=self.diag_value,
                           input_dim=input_dim)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Bias-corrected Adam; parameters are visited in the model's declared order."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        for name in params:
            g = grads.get(name)
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, "
                                     f"parameter has {p.shape}")
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            params[name] = p - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + one raw float64 little-endian blob
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    hyperparams: dict
    model: dict
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    adam_t: int
    rng_state: dict
    epoch: int
    vocabulary: List[str]
    run_config: dict = field(default_factory=dict)

    def _arrays(self):
        for group, arrays in (("param", self.params), ("adam_m", self.adam_m),
                              ("adam_v", self.adam_v)):
            for name, arr in arrays.items():
                yield group, name, arr

    def save(self, manifest_path) -> None:
        manifest_path = Path(manifest_path)
        blob_name = manifest_path.with_suffix(".bin").name
        chunks, entries, offset = [], [], 0
        for group, name, arr in self._arrays():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape),
                            "offset": offset, "count": int(arr.size)})
            chunks.append(raw)
            offset += len(raw)
        atomic_write_bytes(manifest_path.parent / blob_name, b"".join(chunks))
        dump_json(manifest_path, {
            "format": "momentalign-checkpoint/1", "blob": blob_name, "dtype": "<f8",
            "tensors": entries, "hyperparams": self.hyperparams, "model": self.model,
            "adam_t": self.adam_t, "rng_state": self.rng_state, "epoch": self.epoch,
            "vocabulary": self.vocabulary, "run_config": self.run_config,
        })

    @classmethod
    def load(cls, manifest_path) -> "Checkpoint":
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise InputError(f"checkpoint not found: {manifest_path}")
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = (manifest_path.parent / meta["blob"]).read_bytes()
        groups = {"param": {}, "adam_m": {}, "adam_v": {}}
        for e in meta["tensors"]:
            arr = np.frombuffer(blob, dtype="<f8", count=e["count"], offset=e["offset"])
            groups[e["group"]][e["name"]] = arr.astype(np.float64).reshape(e["shape"])
        return cls(meta["hyperparams"], meta["model"], groups["param"], groups["adam_m"],
                   groups["adam_v"], int(meta["adam_t"]), meta["rng_state"], int(meta["epoch"]),
                   list(meta["vocabulary"]), meta.get("run_config", {}))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    sample: Sample
    embedded: np.ndarray
    clips: np.ndarray
    moments: List[CandidateMoment]
    targets: np.ndarray


@dataclass
class EpochLog:
    epoch: int
    loss: float
    rank1: float


class MomentTrainer:
    """Owns parameters, optimiser state and the RNG for one training run."""

    def __init__(self, hp: HyperParams, vocab: Vocabulary, input_dim: int,
                 checkpoint: Optional[Checkpoint] = None):
        self.hp = hp
        self.vocab = vocab
        self.config = hp.model_config(input_dim)
        self.table = EmbeddingTable(vocab, seed=hp.seed)
        self.optimizer = Adam(hp.lr, hp.beta1, hp.beta2, hp.eps)
        if checkpoint is None:
            self.rng = make_rng(hp.seed)
            self.params = init_parameters(self.config, self.rng)
            self.epoch = 0
        else:
            expected = parameter_shapes(self.config)
            got = {k: tuple(v.shape) for k, v in checkpoint.params.items()}
            if got != expected:
                raise ConfigurationError("checkpoint parameters do not match the configuration")
            self.params = {k: checkpoint.params[k].copy() for k in expected}
            self.optimizer.m = {k: v.copy() for k, v in checkpoint.adam_m.items()}
            self.optimizer.v = {k: v.copy() for k, v in checkpoint.adam_v.items()}
            self.optimizer.t = checkpoint.adam_t
            self.rng = restore_rng(checkpoint.rng_state)
            self.epoch = checkpoint.epoch

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "MomentTrainer":
        hp = HyperParams(**ckpt.hyperparams)
        vocab = Vocabulary(ckpt.vocabulary[1:])
        return cls(hp, vocab, ckpt.model.get("input_dim") or hp.dim, checkpoint=ckpt)

    def checkpoint(self, run_config: Optional[dict] = None) -> Checkpoint:
        return Checkpoint(self.hp.to_dict(), self.config.to_dict(),
                          {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.optimizer.m.items()},
                          {k: v.copy() for k, v in self.optimizer.v.items()},
                          self.optimizer.t, rng_state(self.rng), self.epoch,
                          list(self.vocab.tokens), run_config or {})

    def prepare(self, samples: Sequence[Sample], features) -> List[Prepared]:
        prepared = []
        for s in samples:
            try:
                clips = features[s.video_id]
            except KeyError:
                raise InputError(f"no features for video_id {s.video_id!r}") from None
            moments = enumerate_moments(self.config.pyramid, clips.duration)
            targets = assign_targets(moments, s.interval, self.hp.soft_negatives)
            embedded = self.table.lookup(tokenize(s.query, self.vocab))
            prepared.append(Prepared(s, embedded, clips.features, moments, targets))
        return prepared

    def batch_step(self, batch: Sequence[Prepared]) -> float:
        leaves = leaf_tensors(self.params)
        with ad.Tape():
            scores = [forward(self.config, leaves, p.embedded, p.clips).scores for p in batch]
            value = loss(scores, [p.targets for p in batch])
        ad.backward(value)
        grads = {name: t.grad for name, t in leaves.items() if t.grad is not None}
        self.optimizer.step(self.params, grads)
        return float(value.data)

    def logits(self, prepared: Prepared) -> np.ndarray:
        leaves = leaf_tensors(self.params, requires_grad=False)
        return forward(self.config, leaves, prepared.embedded, prepared.clips).scores.logits.data

    def rank1(self, prepared: Sequence[Prepared]) -> float:
        """Share of samples whose top-scored candidate has the best IoU available."""
        if not prepared:
            return 0.0
        hits = 0
        for p in prepared:
            top = int(np.argmax(self.logits(p)))
            ious = np.array([temporal_iou(m.interval, p.sample.interval) for m in p.moments])
            hits += bool(ious[top] >= ious.max() - 1e-12 and ious.max() > 0)
        return hits / len(prepared)

    def run_epoch(self, prepared: Sequence[Prepared]) -> float:
        order = self.rng.permutation(len(prepared))
        total, count = 0.0, 0
        bs = self.hp.batch_size
        for start in range(0, len(order), bs):
            batch = [prepared[i] for i in order[start:start + bs]]
            n = sum(p.targets.size for p in batch)
            total += self.batch_step(batch) * n
            count += n
        self.epoch += 1
        return total / max(count, 1)

    def fit(self, samples: Sequence[Sample], features, epochs: Optional[int] = None,
            track_rank1: bool = True,
            on_epoch: Optional[Callable[["MomentTrainer", EpochLog], None]] = None) -> List[EpochLog]:
        if not samples:
            raise InputError("training set is empty")
        prepared = self.prepare(samples, features)
        history = []
        for _ in range(self.hp.epochs if epochs is None else epochs):
            epoch_loss = self.run_epoch(prepared)
            r1 = self.rank1(prepared) if track_rank1 else float("nan")
            entry = EpochLog(self.epoch, epoch_loss, r1)
            logger.info("epoch %d loss %.6f rank1 %.4f", entry.epoch, entry.loss, entry.rank1)
            history.append(entry)
            if on_epoch is not None:
                on_epoch(self, entry)
        return history


def train(samples: Sequence[Sample], features, hp: HyperParams,
          vocab: Optional[Vocabulary] = None, track_rank1: bool = True,
          on_epoch=None) -> Tuple[Checkpoint, List[EpochLog]]:
    """End-to-end training from scratch; returns the final checkpoint and epoch log."""
    if not samples:
        raise InputError("training set is empty")
    vocab = vocab or Vocabulary.from_texts(s.query for s in samples)
    try:
        first = features[samples[0].video_id]
    except KeyError:
        raise InputError(f"no features for video_id {samples[0].video_id!r}") from None
    trainer = MomentTrainer(hp, vocab, input_dim=first.dim)
    history = trainer.fit(samples, features, track_rank1=track_rank1, on_epoch=on_epoch)
    return trainer.checkpoint(), history


def format_log(history: Sequence[EpochLog]) -> str:
    lines = ["epoch,loss,rank1"]
    lines += [f"{h.epoch},{h.loss!r},{h.rank1!r}" for h in history]
    return "\n".join(lines) + "\n"
