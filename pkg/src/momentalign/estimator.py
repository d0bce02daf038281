"""scikit-learn style wrapper around :class:`MomentTrainer`.

``X`` is a sequence of ``(clip_features, query_text, duration_seconds)``
triples and ``y`` an ``(n, 2)`` array of ground-truth ``[start, end)``
intervals in seconds.
"""

from __future__ import annotations

from typing import Dict, List

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Sample
from .exceptions import ConfigurationError, InputError
from .language import Vocabulary
from .metrics import RankedPrediction, rank_moments, temporal_iou
from .model import ALIGNMENT_MODES
from .trainer import EpochLog, HyperParams, MomentTrainer, Prepared
from .validation import check_positive, check_queries, check_targets
from .video import ClipFeatures, get_preset


class MomentRetriever(BaseEstimator):
    """Ranks the candidate moments of a video against a natural-language query."""

    def __init__(self, preset: str = "didemo", dim: int = 512, cells: int = 3,
                 alignment: str = "word", lr: float = 1e-4, epochs: int = 10,
                 batch_size: int = 8, seed: int = 0, diag_value: float = 1.0,
                 soft_negatives: bool = False):
        self.preset = preset
        self.dim = dim
        self.cells = cells
        self.alignment = alignment
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.diag_value = diag_value
        self.soft_negatives = soft_negatives

    def _hyperparams(self) -> HyperParams:
        check_positive(self.dim, "dim", integer=True)
        check_positive(self.cells, "cells", integer=True, allow_zero=True)
        check_positive(self.epochs, "epochs", integer=True, allow_zero=True)
        check_positive(self.batch_size, "batch_size", integer=True)
        check_positive(self.lr, "lr", allow_zero=True)
        if self.alignment not in ALIGNMENT_MODES:
            raise ConfigurationError(f"alignment must be one of {ALIGNMENT_MODES}")
        get_preset(self.preset)
        return HyperParams(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed, dim=self.dim, preset=self.preset, cells=self.cells,
                           alignment=self.alignment, diag_value=self.diag_value,
                           soft_negatives=self.soft_negatives)

    def _as_samples(self, queries, intervals=None):
        clips = get_preset(self.preset).clips
        features: Dict[str, ClipFeatures] = {}
        samples: List[Sample] = []
        for i, (feats, text, duration) in enumerate(queries):
            if feats.shape[0] != clips:
                raise InputError(f"X[{i}] has {feats.shape[0]} clips; the {self.preset} "
                                 f"preset expects {clips}")
            vid = f"x{i}"
            features[vid] = ClipFeatures(vid, feats, duration / clips)
            start, end = intervals[i] if intervals is not None else (0.0, duration)
            samples.append(Sample(vid, text, float(start), float(end), query_id=vid))
        return samples, features

    def fit(self, X, y) -> "MomentRetriever":
        queries = check_queries(X)
        intervals = check_targets(y, queries)
        hp = self._hyperparams()
        samples, features = self._as_samples(queries, intervals)
        vocab = Vocabulary.from_texts(s.query for s in samples)
        self.n_features_in_ = queries[0][0].shape[1]
        self.trainer_ = MomentTrainer(hp, vocab, self.n_features_in_)
        self.history_: List[EpochLog] = self.trainer_.fit(samples, features, track_rank1=False)
        self.vocabulary_ = vocab
        return self

    def _prepare(self, X) -> List[Prepared]:
        check_is_fitted(self, "trainer_")
        queries = check_queries(X)
        if queries[0][0].shape[1] != self.n_features_in_:
            raise InputError(f"X has feature width {queries[0][0].shape[1]}, "
                             f"fitted with {self.n_features_in_}")
        samples, features = self._as_samples(queries)
        return self.trainer_.prepare(samples, features)

    def decision_function(self, X) -> np.ndarray:
        """Matching logits, one row per query and one column per candidate moment."""
        return np.stack([self.trainer_.logits(p) for p in self._prepare(X)])

    def rank(self, X) -> List[RankedPrediction]:
        out = []
        for p in self._prepare(X):
            logits = self.trainer_.logits(p)
            out.append(rank_moments(p.sample.query_id, [m.interval for m in p.moments], logits))
        return out

    def predict(self, X) -> np.ndarray:
        """Best-scoring ``[start, end)`` interval per query, shape (n, 2)."""
        return np.array([r.intervals[0] for r in self.rank(X)], dtype=np.float64)

    def score(self, X, y) -> float:
        """Share of queries whose top moment reaches the best IoU any candidate can."""
        queries = check_queries(X)
        intervals = check_targets(y, queries)
        prepared = self._prepare(X)
        hits = 0
        for p, gt in zip(prepared, intervals):
            top = p.moments[int(np.argmax(self.trainer_.logits(p)))]
            best = max(temporal_iou(m.interval, tuple(gt)) for m in p.moments)
            hits += bool(best > 0 and temporal_iou(top.interval, tuple(gt)) >= best - 1e-12)
        return hits / len(prepared)
