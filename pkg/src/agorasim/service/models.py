"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: dict
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    include_trace: bool = True


class RunResponse(BaseModel):
    ok: bool
    summary: dict
    events: int
    trace: Optional[str] = None
    error: Optional[dict] = None


class VerifyTraceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trace: str


class VerifyTraceResponse(BaseModel):
    ok: bool
    events: Optional[int] = None
    sessions_terminal: Optional[int] = None
    conservation_checks: Optional[int] = None
    first_bad_seq: Optional[int] = None
    detail: Optional[str] = None


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trace: str
    governance: bool = False


class ReportResponse(BaseModel):
    ok: bool
    report: dict


class EquilibriumRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    params: Optional[dict] = None          # asset_value, reward_value, ...
    include_reputation: bool = True


class EquilibriumResponse(BaseModel):
    ok: bool
    report: dict


class ThresholdRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rate: Optional[float] = None           # exponential value model, per USD
    values: Optional[list[float]] = None   # explicit USD values
    trace: Optional[str] = None            # pull routed-dispute values from a trace
    threshold: float = 50.0
    samples: int = Field(default=100_000, ge=1, le=5_000_000)
    seed: int = 0
    cost_model: Optional[dict] = None


class ThresholdResponse(BaseModel):
    ok: bool
    report: dict


class ErrorResponse(BaseModel):
    ok: bool = False
    error: str
    detail: Optional[str] = None
    violations: Optional[list[str]] = None
