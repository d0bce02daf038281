"""Temporal IoU and the two retrieval protocols (exact-span Rank@k/mIoU and R@n,IoU@m)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError
from .io_utils import atomic_write_text, read_jsonl, write_jsonl

Interval = Tuple[float, float]
SPAN_TOL = 1e-6


def _check_interval(iv: Interval) -> None:
    if not iv[0] < iv[1]:
        raise InputError(f"invalid interval [{iv[0]}, {iv[1]})")


def temporal_iou(a: Interval, b: Interval) -> float:
    _check_interval(a)
    _check_interval(b)
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


@dataclass
class RankedPrediction:
    """Moments for one query, best first."""

    query_id: str
    entries: List[Tuple[float, float, float]]      # (start, end, score)

    @property
    def intervals(self) -> List[Interval]:
        return [(s, e) for s, e, _ in self.entries]

    def to_record(self) -> dict:
        return {"query_id": self.query_id,
                "ranked": [{"start_seconds": s, "end_seconds": e, "score": sc}
                           for s, e, sc in self.entries]}

    @classmethod
    def from_record(cls, rec: dict) -> "RankedPrediction":
        try:
            entries = [(float(r["start_seconds"]), float(r["end_seconds"]), float(r["score"]))
                       for r in rec["ranked"]]
            return cls(str(rec["query_id"]), entries)
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed prediction record ({exc})") from None


def rank_moments(query_id: str, intervals: Sequence[Interval],
                 scores: Sequence[float]) -> RankedPrediction:
    """Sort by score, descending; equal scores keep enumeration order."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return RankedPrediction(query_id, [(float(intervals[i][0]), float(intervals[i][1]),
                                        float(scores[i])) for i in order])


def didemo_spans(duration: float = 30.0, segments: int = 6) -> List[Interval]:
    seg = duration / segments
    return [(j * seg, (j + k) * seg) for k in range(1, segments + 1)
            for j in range(segments - k + 1)]


def _same_span(a: Interval, b: Interval) -> bool:
    return abs(a[0] - b[0]) <= SPAN_TOL and abs(a[1] - b[1]) <= SPAN_TOL


@dataclass
class RetrievalReport:
    protocol: str
    metrics: Dict[str, float]
    num_queries: int
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "metrics": dict(self.metrics),
                "num_queries": self.num_queries, "extra": dict(self.extra)}

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalReport":
        return cls(d["protocol"], {k: float(v) for k, v in d["metrics"].items()},
                   int(d["num_queries"]), dict(d.get("extra", {})))


def _require_queries(preds, gts) -> None:
    if len(preds) == 0:
        raise InputError("no queries")
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions for {len(gts)} ground truths")


def eval_didemo(preds: Sequence[RankedPrediction], gts: Sequence[Interval],
                canonical: Optional[Sequence[Interval]] = None,
                ks: Sequence[int] = (1, 5)) -> RetrievalReport:
    """Rank@k by exact span match and mIoU of the top-1 moment."""
    _require_queries(preds, gts)
    canonical = list(canonical) if canonical is not None else didemo_spans()
    hits = {k: 0 for k in ks}
    iou_sum = 0.0
    for pred, gt in zip(preds, gts):
        for iv in pred.intervals:
            if not any(_same_span(iv, c) for c in canonical):
                raise InputError(f"query {pred.query_id}: {iv} is not a canonical span")
        intervals = pred.intervals
        for k in ks:
            if any(_same_span(iv, gt) for iv in intervals[:k]):
                hits[k] += 1
        if intervals:
            iou_sum += temporal_iou(intervals[0], gt)
    n = len(preds)
    metrics = {f"Rank@{k}": hits[k] / n for k in ks}
    metrics["mIoU"] = iou_sum / n
    return RetrievalReport("didemo", metrics, n)


def eval_r_at_n(preds: Sequence[RankedPrediction], gts: Sequence[Interval],
                n_list: Sequence[int] = (1, 5),
                m_list: Sequence[float] = (0.5, 0.7)) -> RetrievalReport:
    """Share of queries with a top-n moment whose IoU with the ground truth exceeds m."""
    _require_queries(preds, gts)
    hits = {(n, m): 0 for n in n_list for m in m_list}
    for pred, gt in zip(preds, gts):
        ious = [temporal_iou(iv, gt) for iv in pred.intervals]
        for n in n_list:
            best = max(ious[:n], default=0.0)
            for m in m_list:
                if best > m:
                    hits[(n, m)] += 1
    count = len(preds)
    metrics = {f"R@{n},IoU={m}": hits[(n, m)] / count for n in n_list for m in m_list}
    return RetrievalReport("r_at_n", metrics, count)


def format_report(r: RetrievalReport) -> str:
    """Metric grid as percentages with two decimals."""
    names = list(r.metrics)
    width = max(12, *(len(k) + 2 for k in names))
    head = "Method".ljust(10) + "|" + "".join(k.rjust(width) for k in names)
    row = (r.extra.get("method") or "model").__str__()[:10].ljust(10) + "|" + "".join(
        f"{100.0 * r.metrics[k]:.2f}".rjust(width) for k in names)
    rule = "-" * len(head)
    return "\n".join([rule, head, rule, row, rule, f"queries: {r.num_queries}"])


def report(r: RetrievalReport, json_path=None) -> str:
    if r.num_queries == 0:
        raise InputError("no queries")
    text = format_report(r)
    if json_path is not None:
        atomic_write_text(json_path, json.dumps(r.to_dict(), indent=2, sort_keys=True) + "\n")
    return text


def write_predictions(path, preds: Sequence[RankedPrediction],
                      run_config: Optional[dict] = None) -> None:
    """One JSON line per query; an optional leading ``{"run_config": ...}`` line."""
    header = [{"run_config": run_config}] if run_config is not None else []
    write_jsonl(path, header + [p.to_record() for p in preds])


def read_predictions(path) -> List[RankedPrediction]:
    return [RankedPrediction.from_record(rec) for rec in read_jsonl(path)
            if set(rec) != {"run_config"}]
