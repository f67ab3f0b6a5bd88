from datetime import datetime, timezone
from typing import Any, Optional

from pydantic import BaseModel, Field

SCHEMA_VERSION = "1.0"
VOLATILE_KEYS = frozenset({"generated_at", "timing"})


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ReportBase(BaseModel):
    """
    Fields shared by every JSON report. ``generated_at`` and ``timing`` are volatile.
    """
    schema_version: str = SCHEMA_VERSION
    generated_at: str = Field(default_factory=_now)
    timing: dict[str, float] = Field(default_factory=dict)


class NeighborReportSchema(ReportBase):
    """
    Schema for the affected-neighbor report of one request.
    """
    arch: str
    num_layers: int
    request_kind: str
    n_aff: list[int]
    n_ac: list[int]
    marginal: list[int]
    kept_marginal: list[int]
    n_fmn: list[int]
    n_han: list[int]
    diff_scores: dict[str, float]
    hop_histograms: dict[str, dict[str, int]]
    probe_ambiguous: bool = False
    config: dict[str, Any] = Field(default_factory=dict)


class NeighborSummary(BaseModel):
    n_aff: int
    n_ac: int
    marginal: int
    kept_marginal: int
    n_fmn: int
    n_han: int
    probe_ambiguous: bool = False


class TrainReport(ReportBase):
    """
    Schema for a training run.
    """
    arch: str
    dims: list[int]
    loss_trace: list[float]
    train_accuracy: float
    test_f1: Optional[float] = None
    checksum: str
    config: dict[str, Any] = Field(default_factory=dict)


class UnlearnReport(ReportBase):
    """
    Schema for an unlearning run.
    """
    arch: str
    method: str
    request_kind: str
    request_size: int
    epochs: int
    loss_traces: dict[str, list[float]]
    reference_checksums: list[str] = Field(default_factory=list)
    neighbors: Optional[NeighborSummary] = None
    test_f1: Optional[float] = None
    checksum: str
    config: dict[str, Any] = Field(default_factory=dict)


class TrialRecord(BaseModel):
    method: str
    arch: str
    trial: int
    seed: int
    f1: float = Field(ge=0, le=1)
    epochs: int
    # Attack trials only: clean-edge minus injected-edge embedding similarity
    similarity_gap: Optional[float] = None
    timing: dict[str, float] = Field(default_factory=dict)


class MethodSummary(BaseModel):
    method: str
    arch: str
    trials: int
    f1_mean: float
    f1_std: float
    timing: dict[str, float] = Field(default_factory=dict)


class EvalReport(ReportBase):
    """
    Schema for a benchmark run: per-trial records and per-method aggregates.
    """
    spec: dict[str, Any]
    trials: list[TrialRecord]
    summary: list[MethodSummary]
    skipped: list[str] = Field(default_factory=list)


class ThetaPoint(BaseModel):
    theta: float
    kept_marginal: float
    f1: float


class ThetaSweepReport(ReportBase):
    spec: dict[str, Any]
    points: list[ThetaPoint]


def strip_volatile(payload: Any) -> Any:
    """Drop timestamps and wall-clock timings from a dumped report, recursively."""
    if isinstance(payload, dict):
        return {k: strip_volatile(v) for k, v in payload.items() if k not in VOLATILE_KEYS}
    if isinstance(payload, list):
        return [strip_volatile(v) for v in payload]
    return payload
