"""FastAPI service wrapping the core package.

Every operation the CLI exposes is served here; the CLI is a thin client.
Errors map to a structured payload ``{"detail": {"kind", "message"}}`` whose
kind drives the client's exit code: usage, data or numeric.
"""

from __future__ import annotations

from dataclasses import asdict

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, colorlab, pipeline
from .errors import DataError, NumericError, UsageError
from .schemas import (
    BuildDatasetRequest,
    BuildDatasetResponse,
    ClipMetricsOut,
    ConvertRequest,
    EvaluateRequest,
    EvaluateResponse,
    ExtractFeaturesRequest,
    ExtractFeaturesResponse,
    GeneratedPalette,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    MetricReportOut,
    PaletteOut,
    SwatchRequest,
    SwatchResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="emopalette", version=__version__)


def _error_response(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"detail": {"kind": kind, "message": message}}
    )


@app.exception_handler(UsageError)
async def _usage_error(request: Request, exc: UsageError):
    return _error_response(400, "usage", str(exc))


@app.exception_handler(DataError)
async def _data_error(request: Request, exc: DataError):
    return _error_response(400, "data", str(exc))


@app.exception_handler(NumericError)
async def _numeric_error(request: Request, exc: NumericError):
    return _error_response(500, "numeric", str(exc))


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(status="ok", version=__version__)


@app.post("/palette/convert", response_model=PaletteOut)
def palette_convert(req: ConvertRequest):
    palette = colorlab.palette_from_json_dict({"hex": req.hex})
    return PaletteOut(**colorlab.palette_to_json_dict(palette))


@app.post("/features/extract", response_model=ExtractFeaturesResponse)
def features_extract(req: ExtractFeaturesRequest):
    out = pipeline.extract_features_cmd(req.audio_path, req.out_path, req.max_seconds)
    return ExtractFeaturesResponse(**out)


@app.post("/dataset/build", response_model=BuildDatasetResponse)
def dataset_build(req: BuildDatasetRequest):
    out = pipeline.build_dataset(
        audio_dir=req.audio_dir,
        palette_file=req.palette_file,
        out_path=req.out_path,
        music_emotion_file=req.music_emotion_file,
        palette_emotion_file=req.palette_emotion_file,
        top_k=req.top_k,
        min_similarity=req.min_similarity,
    )
    return BuildDatasetResponse(**out)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    from .losses import LossWeights
    from .model import ModelConfig

    entries = pipeline.read_manifest(req.manifest_path)
    config = pipeline.TrainConfig(
        lr=req.lr,
        batch_size=req.batch_size,
        epochs=req.epochs,
        weights=LossWeights(**req.weights.model_dump()),
        noise_sigma=req.noise_sigma,
        seed=req.seed,
    )
    model_config = ModelConfig(
        noise_sigma=req.noise_sigma, seed=req.seed, **req.model.model_dump()
    )
    result = pipeline.train(
        entries, config, req.out_dir, model_config=model_config, max_seconds=req.max_seconds
    )
    return TrainResponse(**asdict(result))


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest):
    out = pipeline.generate_cmd(
        audio_path=req.audio_path,
        checkpoint_path=req.checkpoint_path,
        out_dir=req.out_dir,
        k=req.k,
        sigma=req.sigma,
        seed=req.seed,
        max_seconds=req.max_seconds,
    )
    outputs = [
        GeneratedPalette(
            palette=PaletteOut(**o["palette"]),
            json_path=o["json"],
            svg_path=o["svg"],
            ppm_path=o["ppm"],
        )
        for o in out["outputs"]
    ]
    return GenerateResponse(audio=out["audio"], outputs=outputs)


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest):
    out = pipeline.evaluate_cmd(
        manifest_path=req.manifest_path,
        checkpoint_path=req.checkpoint_path,
        out_csv=req.out_csv,
        k=req.k,
        seed=req.seed,
        sigma=req.sigma,
        split=req.split,
        hull_samples=req.hull_samples,
        compare_to_gt=req.compare_to_gt,
        max_seconds=req.max_seconds,
    )
    return EvaluateResponse(
        csv_path=out["csv_path"],
        report=MetricReportOut(**asdict(out["report"])),
        clips=[ClipMetricsOut(**row) for row in out["rows"]],
    )


@app.post("/swatch", response_model=SwatchResponse)
def swatch(req: SwatchRequest):
    out = pipeline.swatch_cmd(req.palette_path, req.out_base)
    return SwatchResponse(**out)
