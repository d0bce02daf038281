"""Training samples and the JSON-lines annotation format."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

from .exceptions import InputError
from .io_utils import read_jsonl, write_jsonl


@dataclass(frozen=True)
class Sample:
    video_id: str
    query: str
    start_seconds: float
    end_seconds: float
    query_id: Optional[str] = None
    template: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.start_seconds < self.end_seconds:
            raise InputError(f"sample {self.query_id or self.video_id}: invalid interval "
                             f"[{self.start_seconds}, {self.end_seconds})")

    @property
    def interval(self):
        return (self.start_seconds, self.end_seconds)

    def to_record(self) -> dict:
        rec = {"video_id": self.video_id, "query": self.query,
               "start_seconds": self.start_seconds, "end_seconds": self.end_seconds}
        if self.query_id is not None:
            rec["query_id"] = self.query_id
        if self.template is not None:
            rec["template"] = self.template
        return rec


def write_annotations(path, samples: Iterable[Sample]) -> None:
    write_jsonl(path, (s.to_record() for s in samples))


def read_annotations(path) -> List[Sample]:
    """Read ``{video_id, query, start_seconds, end_seconds}`` lines.

    Lines without a ``query_id`` get their 0-based line index.
    """
    samples = []
    for i, rec in enumerate(read_jsonl(path)):
        try:
            samples.append(Sample(str(rec["video_id"]), str(rec["query"]),
                                  float(rec["start_seconds"]), float(rec["end_seconds"]),
                                  str(rec.get("query_id", i)), rec.get("template")))
        except KeyError as exc:
            raise InputError(f"{path}: annotation {i} lacks field {exc.args[0]!r}") from None
    return samples
