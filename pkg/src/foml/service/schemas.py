"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    config_text: str = ""
    overrides: dict[str, str] = Field(default_factory=dict)
    wait: bool = True


class ResumeRequest(BaseModel):
    checkpoint_path: str
    config_text: str | None = None
    outdir: str | None = None
    wait: bool = True


class SweepRequest(BaseModel):
    config_text: str = ""
    overrides: dict[str, str] = Field(default_factory=dict)
    param: str
    values: list[str]
    outdir: str


class ConvertRequest(BaseModel):
    images_path: str
    labels_path: str
    out_path: str
    limit: int = 0


class RunStatus(BaseModel):
    run_id: str
    state: str  # queued | running | succeeded | failed_config | failed_numeric | failed
    kind: str = "run"
    outdir: str | None = None
    summary: dict | None = None
    error: str | None = None
    checkpoint_path: str | None = None


class SweepStatus(BaseModel):
    run_id: str
    state: str
    rows: list[dict] | None = None
    error: str | None = None


class ConvertResponse(BaseModel):
    items: int
    out_path: str


class HealthResponse(BaseModel):
    status: str
    version: str
