"""HTTP service wrapping the experiment harness.

Each endpoint builds an :class:`ExperimentConfig` from an optional config
file or inline text plus ``key=value`` overrides, runs the requested
protocol, optionally writes report artifacts under ``out_dir``, and returns
the report(s) as JSON. Validation failures map to 400 (or 422 from request
parsing) and a diverged run maps to 409; the CLI turns those into its
documented exit codes.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .attributes import load_vocab, vocab_from_dict
from .config import ExperimentConfig, load_config, parse_config_text
from .errors import CoaptError, ConfigurationError, VALIDATION_KINDS
from .harness import (
    MetricsReport,
    gradcheck_full_loss,
    run_base_to_novel,
    run_cross_dataset,
    run_domain_generalization,
    run_few_shot,
    sweep_attribute_count,
)

app = FastAPI(title="coapt", version=__version__)


@app.exception_handler(CoaptError)
async def coapt_error_handler(request: Request, exc: CoaptError):
    status = 400 if exc.kind in VALIDATION_KINDS else 409 if exc.kind == "divergence" else 500
    return JSONResponse(status_code=status, content={"detail": {"kind": exc.kind, "message": str(exc)}})


class RunRequest(BaseModel):
    config_path: str | None = None
    config_text: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)
    out_dir: str | None = None


class SweepRequest(RunRequest):
    counts: list[int]


class GradCheckRequest(RunRequest):
    tolerance: float = 1e-4
    use_default_toy_config: bool = True


class VocabValidateRequest(BaseModel):
    path: str | None = None
    document: dict | None = None


class ReportModel(BaseModel):
    protocol: str
    target: str
    base_accuracy: float | None
    novel_accuracy: float | None
    harmonic_mean: float | None
    per_class_accuracy: dict[str, float]
    seeds: list[int]
    config: dict[str, str]
    per_seed: list[dict]
    csv: str


class RunResponse(BaseModel):
    report: ReportModel
    outputs: list[str]


class MultiRunResponse(BaseModel):
    reports: list[ReportModel]
    outputs: list[str]


class SweepResponse(BaseModel):
    rows: list[dict]
    csv: str
    outputs: list[str]


class GradCheckResponse(BaseModel):
    max_relative_error: float
    tolerance: float
    passed: bool


class VocabValidateResponse(BaseModel):
    valid: bool
    errors: list[str]
    dataset: str | None = None
    generator: str | None = None
    num_words: int | None = None
    num_sets: int | None = None
    classes: int | None = None


def _build_config(req: RunRequest) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if req.config_path:
        cfg = load_config(req.config_path, cfg)
    if req.config_text:
        cfg = parse_config_text(req.config_text, cfg)
    if req.overrides:
        text = "\n".join(f"{k} = {v}" for k, v in req.overrides.items())
        cfg = parse_config_text(text, cfg)
    return cfg


def _report_model(report: MetricsReport) -> ReportModel:
    payload = dataclasses.asdict(report)
    payload["csv"] = "\n".join(report.csv_rows()) + "\n"
    return ReportModel(**payload)


def _write_single(report: MetricsReport, out_dir: str | None) -> list[str]:
    if not out_dir:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    csv_path = out / "summary.csv"
    csv_path.write_text("\n".join(report.csv_rows()) + "\n", encoding="utf-8")
    return [str(report_path), str(csv_path)]


def _write_multi(reports: list[MetricsReport], out_dir: str | None) -> list[str]:
    if not out_dir:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "reports.json"
    report_path.write_text(
        "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n", encoding="utf-8"
    )
    lines = ["target,seed,base,novel,hm"]
    for report in reports:
        for row in report.csv_rows()[1:]:
            lines.append(f"{report.target},{row}")
    csv_path = out / "summary.csv"
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [str(report_path), str(csv_path)]


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/train", response_model=RunResponse)
def train(req: RunRequest) -> RunResponse:
    cfg = _build_config(req)
    report = run_few_shot(cfg, out_dir=req.out_dir)
    return RunResponse(report=_report_model(report), outputs=_write_single(report, req.out_dir))


@app.post("/eval/base-novel", response_model=RunResponse)
def eval_base_novel(req: RunRequest) -> RunResponse:
    cfg = _build_config(req)
    report = run_base_to_novel(cfg)
    return RunResponse(report=_report_model(report), outputs=_write_single(report, req.out_dir))


@app.post("/eval/cross", response_model=MultiRunResponse)
def eval_cross(req: RunRequest) -> MultiRunResponse:
    cfg = _build_config(req)
    reports = run_cross_dataset(cfg)
    return MultiRunResponse(
        reports=[_report_model(r) for r in reports], outputs=_write_multi(reports, req.out_dir)
    )


@app.post("/eval/domain", response_model=MultiRunResponse)
def eval_domain(req: RunRequest) -> MultiRunResponse:
    cfg = _build_config(req)
    reports = run_domain_generalization(cfg)
    return MultiRunResponse(
        reports=[_report_model(r) for r in reports], outputs=_write_multi(reports, req.out_dir)
    )


@app.post("/sweep-attrs", response_model=SweepResponse)
def sweep_attrs(req: SweepRequest) -> SweepResponse:
    cfg = _build_config(req)
    rows, csv_text = sweep_attribute_count(cfg, req.counts)
    outputs: list[str] = []
    if req.out_dir:
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "sweep.csv"
        path.write_text(csv_text, encoding="utf-8")
        outputs.append(str(path))
    return SweepResponse(rows=rows, csv=csv_text, outputs=outputs)


@app.post("/gradcheck", response_model=GradCheckResponse)
def gradcheck(req: GradCheckRequest) -> GradCheckResponse:
    cfg = None
    if not req.use_default_toy_config or req.config_path or req.config_text or req.overrides:
        cfg = _build_config(req)
    error = float(gradcheck_full_loss(cfg))
    return GradCheckResponse(
        max_relative_error=error, tolerance=req.tolerance, passed=bool(error <= req.tolerance)
    )


@app.post("/vocab/validate", response_model=VocabValidateResponse)
def vocab_validate(req: VocabValidateRequest) -> VocabValidateResponse:
    if (req.path is None) == (req.document is None):
        raise ConfigurationError("provide exactly one of 'path' or 'document'")
    try:
        vocab = load_vocab(req.path) if req.path else vocab_from_dict(req.document)
    except CoaptError as exc:
        return VocabValidateResponse(valid=False, errors=[f"{exc.kind}: {exc}"])
    return VocabValidateResponse(
        valid=True,
        errors=[],
        dataset=vocab.dataset,
        generator=vocab.generator,
        num_words=vocab.num_words,
        num_sets=vocab.num_sets,
        classes=len(vocab.classes),
    )
