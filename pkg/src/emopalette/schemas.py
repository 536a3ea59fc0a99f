"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ColorOut(BaseModel):
    l: float
    c: float
    h: float


class PaletteOut(BaseModel):
    colors: List[ColorOut]
    hex: List[str]


class ConvertRequest(BaseModel):
    hex: List[str] = Field(min_length=3, max_length=5)


class ExtractFeaturesRequest(BaseModel):
    audio_path: str
    out_path: str
    max_seconds: float = 60.0


class ExtractFeaturesResponse(BaseModel):
    rows: int
    cols: int
    out_path: str


class BuildDatasetRequest(BaseModel):
    audio_dir: str
    palette_file: str
    out_path: str
    music_emotion_file: str
    palette_emotion_file: Optional[str] = None
    top_k: int = 5
    min_similarity: float = 0.5


class BuildDatasetResponse(BaseModel):
    entries: int
    palettes_total: int
    dedup_removed: int
    skipped_low_similarity: List[str]
    manifest_path: str
    candidates_path: str


class ModelParams(BaseModel):
    d_model: int = 256
    encoder_layers: int = 4
    decoder_layers: int = 4
    heads: int = 8
    dropout: float = 0.1
    patch_frames: int = 4


class LossWeightsParams(BaseModel):
    lambda_color: float = 1.0
    lambda_diversity: float = 0.1
    lambda_emotion: float = 0.5
    lambda_stop: float = 0.2


class TrainRequest(BaseModel):
    manifest_path: str
    out_dir: str
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    noise_sigma: float = 0.1
    seed: int = 0
    weights: LossWeightsParams = Field(default_factory=LossWeightsParams)
    model: ModelParams = Field(default_factory=ModelParams)
    max_seconds: float = 60.0


class TrainResponse(BaseModel):
    final_checkpoint: str
    best_checkpoint: str
    epochs_csv: str
    steps_csv: str
    final_train_loss: float
    best_val_loss: float


class GenerateRequest(BaseModel):
    audio_path: str
    checkpoint_path: str
    out_dir: str
    k: int = 1
    sigma: Optional[float] = None
    seed: int = 0
    max_seconds: float = 60.0


class GeneratedPalette(BaseModel):
    palette: PaletteOut
    json_path: str
    svg_path: str
    ppm_path: str


class GenerateResponse(BaseModel):
    audio: str
    outputs: List[GeneratedPalette]


class EvaluateRequest(BaseModel):
    manifest_path: str
    checkpoint_path: str
    out_csv: str
    k: int = 5
    seed: int = 0
    sigma: Optional[float] = None
    split: str = "test"
    hull_samples: int = 100_000
    compare_to_gt: bool = False
    max_seconds: float = 60.0


class MetricReportOut(BaseModel):
    div: Optional[float]
    multi: Optional[float]
    cho: Optional[float]
    bc: Optional[float]
    es: Optional[float]
    js: Optional[float]


class ClipMetricsOut(BaseModel):
    clip_id: str
    div: Optional[float]
    multi: Optional[float]
    cho: Optional[float]
    bc: Optional[float]
    es: Optional[float]
    js: Optional[float]


class EvaluateResponse(BaseModel):
    csv_path: str
    report: MetricReportOut
    clips: List[ClipMetricsOut]


class SwatchRequest(BaseModel):
    palette_path: str
    out_base: str


class SwatchResponse(BaseModel):
    svg: str
    ppm: str
