"""Dataset construction, training, generation and evaluation drivers.

The manifest is JSONL, one entry per line, UTF-8, with a fixed key order so
write -> read -> write round-trips byte-identically. Feature matrices are
cached beside their audio files (``<audio>.m2pf``) to keep multi-epoch
training tractable on CPU.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import audiofeat, colorlab, emotion, metrics
from .colorlab import Palette
from .errors import DataError, NumericError, UsageError
from .losses import (
    LossWeights,
    color_distance_loss,
    diversity_loss,
    emotion_consistency_loss,
    palette_emotion_t,
    stop_loss,
    total_loss,
)
from .model import ModelConfig, PaletteGenerator, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

DEFAULT_MAX_SECONDS = 60.0
FEATURE_CACHE_SUFFIX = ".m2pf"


@dataclass
class ManifestEntry:
    music_id: str
    palette: Palette
    emotion_music: np.ndarray
    emotion_palette: np.ndarray
    similarity: float
    audio_path: Optional[str] = None
    feature_path: Optional[str] = None

    def to_json_line(self) -> str:
        obj = {
            "music_id": self.music_id,
            "audio_path": self.audio_path,
            "feature_path": self.feature_path,
            "palette": colorlab.palette_to_json_dict(self.palette),
            "emotion_music": [float(x) for x in self.emotion_music],
            "emotion_palette": [float(x) for x in self.emotion_palette],
            "similarity": float(self.similarity),
        }
        return json.dumps(obj, separators=(",", ":"))


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(entry.to_json_line() + "\n")


def read_manifest(path) -> list:
    entries = []
    seen = set()
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                entry = ManifestEntry(
                    music_id=str(obj["music_id"]),
                    palette=colorlab.palette_from_json_dict(obj["palette"]),
                    emotion_music=emotion.as_emotion_vector(obj["emotion_music"]),
                    emotion_palette=emotion.as_emotion_vector(obj["emotion_palette"]),
                    similarity=float(obj["similarity"]),
                    audio_path=obj.get("audio_path"),
                    feature_path=obj.get("feature_path"),
                )
                if not -1.0 - 1e-9 <= entry.similarity <= 1.0 + 1e-9:
                    raise DataError(
                        f"{path}:{lineno}: similarity {entry.similarity} outside [-1, 1]"
                    )
                if entry.music_id in seen:
                    raise DataError(f"{path}:{lineno}: duplicate music_id {entry.music_id!r}")
                seen.add(entry.music_id)
                entries.append(entry)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    eta_min: float = 1e-6
    batch_size: int = 16
    epochs: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("lr must be > 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")


def split_dataset(music_ids, seed: int):
    """Deterministic 80/10/10 split, a function of (seed, sorted ids) only."""
    ids = sorted(str(i) for i in music_ids)
    perm = list(np.array(ids)[np.random.default_rng(seed).permutation(len(ids))])
    n = len(ids)
    n_test = n // 10
    n_val = n // 10
    test = sorted(perm[:n_test])
    val = sorted(perm[n_test : n_test + n_val])
    train = sorted(perm[n_test + n_val :])
    return train, val, test


# -- features ------------------------------------------------------------------


def features_for_entry(entry: ManifestEntry, max_seconds: float = DEFAULT_MAX_SECONDS):
    if entry.feature_path:
        return audiofeat.read_feature_cache(entry.feature_path)
    if not entry.audio_path:
        raise DataError(f"entry {entry.music_id!r} has neither audio nor feature path")
    return features_for_audio(entry.audio_path, max_seconds=max_seconds)


def features_for_audio(audio_path, max_seconds: float = DEFAULT_MAX_SECONDS, cache: bool = True):
    """Extract (or load the cached) feature matrix for one audio file."""
    cache_path = Path(str(audio_path) + FEATURE_CACHE_SUFFIX)
    if cache and cache_path.exists():
        return audiofeat.read_feature_cache(cache_path)
    clip = audiofeat.load_audio(audio_path, max_seconds=max_seconds)
    matrix = audiofeat.build_feature_matrix(clip)
    if cache:
        audiofeat.write_feature_cache(cache_path, matrix)
    return matrix


def extract_features_cmd(audio_path, out_path, max_seconds: float = DEFAULT_MAX_SECONDS):
    clip = audiofeat.load_audio(audio_path, max_seconds=max_seconds)
    matrix = audiofeat.build_feature_matrix(clip)
    audiofeat.write_feature_cache(out_path, matrix)
    return {"rows": int(matrix.shape[0]), "cols": int(matrix.shape[1]), "out_path": str(out_path)}


# -- dataset construction --------------------------------------------------------


def load_palette_file(path) -> list:
    """JSON array of palette objects ({'colors': [...]} or {'hex': [...]},
    optional 'id'); ids default to the array position."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read palette file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{path}: expected a non-empty JSON array of palettes")
    out = []
    for i, obj in enumerate(raw):
        pid = str(obj.get("id", f"palette_{i:04d}"))
        out.append((pid, colorlab.palette_from_json_dict(obj)))
    return out


def build_dataset(
    audio_dir,
    palette_file,
    out_path,
    music_emotion_file,
    palette_emotion_file=None,
    top_k: int = 5,
    min_similarity: float = 0.5,
) -> dict:
    """Match every clip to its most emotion-similar palette.

    Palettes are deduplicated first; the top-k candidate ranking per clip is
    written to ``<out_path>.candidates.jsonl`` and the manifest keeps the
    top-1 pair per clip with similarity >= min_similarity.
    """
    audio_dir = Path(audio_dir)
    wavs = sorted(audio_dir.glob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files in {audio_dir}")

    music_vectors = emotion.load_emotion_vectors(music_emotion_file)
    missing = [w.stem for w in wavs if w.stem not in music_vectors]
    if missing:
        raise DataError(f"missing music emotion vectors for: {', '.join(missing)}")

    palettes = load_palette_file(palette_file)
    seen = {}
    deduped = []
    for pid, palette in palettes:
        key = colorlab.dedup_key(palette)
        if key in seen:
            continue
        seen[key] = pid
        deduped.append((pid, palette))
    dedup_removed = len(palettes) - len(deduped)

    if palette_emotion_file:
        palette_vectors = emotion.load_emotion_vectors(palette_emotion_file)
        missing = [pid for pid, _ in deduped if pid not in palette_vectors]
        if missing:
            raise DataError(f"missing palette emotion vectors for: {', '.join(missing)}")
        palette_evs = [(pid, palette_vectors[pid]) for pid, _ in deduped]
    else:
        palette_evs = [(pid, emotion.heuristic_palette_emotion(p)) for pid, p in deduped]

    music_evs = [(w.stem, music_vectors[w.stem]) for w in wavs]
    matches = emotion.match_pairs(music_evs, palette_evs, top_k=top_k)

    candidates_path = Path(str(out_path) + ".candidates.jsonl")
    emotion.write_match_jsonl(candidates_path, matches)

    palette_by_id = dict(deduped)
    palette_ev_by_id = dict(palette_evs)
    entries = []
    skipped = []
    for wav in wavs:
        ranked = matches.get(wav.stem, [])
        if not ranked or ranked[0].similarity < min_similarity:
            skipped.append(wav.stem)
            continue
        best = ranked[0]
        entries.append(
            ManifestEntry(
                music_id=wav.stem,
                palette=palette_by_id[best.palette_id],
                emotion_music=emotion.as_emotion_vector(music_vectors[wav.stem]),
                emotion_palette=emotion.as_emotion_vector(palette_ev_by_id[best.palette_id]),
                similarity=best.similarity,
                audio_path=str(wav),
            )
        )
    if not entries:
        raise DataError(
            f"no music-palette pair reached min_similarity={min_similarity}; nothing to write"
        )
    write_manifest(out_path, entries)
    return {
        "entries": len(entries),
        "palettes_total": len(palettes),
        "dedup_removed": dedup_removed,
        "skipped_low_similarity": skipped,
        "manifest_path": str(out_path),
        "candidates_path": str(candidates_path),
    }


# -- training ---------------------------------------------------------------------


@dataclass
class TrainResult:
    final_checkpoint: str
    best_checkpoint: str
    epochs_csv: str
    steps_csv: str
    final_train_loss: float
    best_val_loss: float


def _sample_losses(model, features, entry: ManifestEntry, sigma, noise_gen, weights):
    pred, stop_logits = model.forward_train(features, list(entry.palette.colors), sigma, noise_gen)
    gt = torch.tensor([c.as_tuple() for c in entry.palette.colors], dtype=pred.dtype)
    l_color = color_distance_loss(pred, gt)
    l_div = diversity_loss(pred)
    l_emotion = emotion_consistency_loss(
        entry.emotion_music, palette_emotion_t(pred), entry.emotion_palette
    )
    l_stop = stop_loss(stop_logits, len(entry.palette))
    total = total_loss((l_color, l_div, l_emotion, l_stop), weights)
    return total, l_color, l_div, l_emotion, l_stop


def _mean_losses(model, entries, feature_map, sigma, weights):
    """Teacher-forced mean loss parts over ``entries`` (no grad, eval mode)."""
    was_training = model.training
    model.eval()
    sums = np.zeros(5)
    with torch.no_grad():
        for entry in entries:
            parts = _sample_losses(model, feature_map[entry.music_id], entry, sigma, None, weights)
            sums += np.array([float(p) for p in parts])
    if was_training:
        model.train()
    return sums / max(1, len(entries))


def mean_color_loss(model, entries, feature_map=None, max_seconds: float = DEFAULT_MAX_SECONDS):
    """Eval-mode (sigma=0) teacher-forced mean color loss over entries."""
    if feature_map is None:
        feature_map = {e.music_id: features_for_entry(e, max_seconds) for e in entries}
    parts = _mean_losses(model, entries, feature_map, 0.0, LossWeights())
    return float(parts[1])


def train(
    entries: Sequence[ManifestEntry],
    config: TrainConfig,
    out_dir,
    model_config: Optional[ModelConfig] = None,
    max_seconds: float = DEFAULT_MAX_SECONDS,
) -> TrainResult:
    """Teacher-forced optimization of the weighted multi-objective loss.

    Deterministic given (entries, config, model_config): dataset split,
    parameter init, batch shuffling, dropout and augmentation noise all
    derive from the configured seeds.
    """
    if len(entries) < 2:
        raise DataError("training needs at least 2 manifest entries")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_config is None:
        model_config = ModelConfig(seed=config.seed, noise_sigma=config.noise_sigma)

    by_id = {e.music_id: e for e in entries}
    train_ids, val_ids, test_ids = split_dataset(by_id, config.seed)
    train_entries = [by_id[i] for i in train_ids]
    val_entries = [by_id[i] for i in val_ids]
    log.info(
        "split: %d train / %d val / %d test", len(train_ids), len(val_ids), len(test_ids)
    )

    feature_map = {}
    for entry in entries:
        try:
            feature_map[entry.music_id] = features_for_entry(entry, max_seconds)
        except DataError as exc:
            raise DataError(f"feature extraction failed for {entry.music_id!r}: {exc}") from exc

    model = build_model(model_config)
    torch.manual_seed(config.seed)  # dropout stream, independent of init
    noise_gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, betas=config.betas, weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.epochs, eta_min=config.eta_min
    )

    steps_csv = out_dir / "loss_steps.csv"
    epochs_csv = out_dir / "loss_epochs.csv"
    best_path = out_dir / "checkpoint_best.ckpt"
    final_path = out_dir / "checkpoint_final.ckpt"
    best_val = math.inf
    final_train = math.nan

    with open(steps_csv, "w", encoding="utf-8", newline="\n") as sfh, open(
        epochs_csv, "w", encoding="utf-8", newline="\n"
    ) as efh:
        sfh.write("epoch,step,L_color,L_diversity,L_emotion,L_stop,total\n")
        efh.write(
            "epoch,train_total,train_color,train_diversity,train_emotion,train_stop,"
            "val_total,lr\n"
        )
        for epoch in range(config.epochs):
            model.train()
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train_entries))
            epoch_parts = np.zeros(5)
            n_steps = 0
            for step_start in range(0, len(order), config.batch_size):
                batch = [train_entries[i] for i in order[step_start : step_start + config.batch_size]]
                optimizer.zero_grad()
                parts_sum = None
                for entry in batch:
                    parts = _sample_losses(
                        model,
                        feature_map[entry.music_id],
                        entry,
                        config.noise_sigma,
                        noise_gen,
                        config.weights,
                    )
                    parts_sum = parts if parts_sum is None else tuple(
                        a + b for a, b in zip(parts_sum, parts)
                    )
                batch_parts = tuple(p / len(batch) for p in parts_sum)
                batch_total = batch_parts[0]
                if not torch.isfinite(batch_total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} step {n_steps}: "
                        f"color={float(batch_parts[1])!r} diversity={float(batch_parts[2])!r} "
                        f"emotion={float(batch_parts[3])!r} stop={float(batch_parts[4])!r}"
                    )
                batch_total.backward()
                optimizer.step()
                values = [float(p) for p in batch_parts]
                sfh.write(
                    f"{epoch},{n_steps},{values[1]!r},{values[2]!r},{values[3]!r},"
                    f"{values[4]!r},{values[0]!r}\n"
                )
                epoch_parts += np.array(values)
                n_steps += 1
            scheduler.step()
            epoch_parts /= max(1, n_steps)

            val_pool = val_entries if val_entries else train_entries
            val_parts = _mean_losses(model, val_pool, feature_map, 0.0, config.weights)
            val_total = float(val_parts[0])
            lr_now = scheduler.get_last_lr()[0]
            efh.write(
                f"{epoch},{epoch_parts[0]!r},{epoch_parts[1]!r},{epoch_parts[2]!r},"
                f"{epoch_parts[3]!r},{epoch_parts[4]!r},{val_total!r},{lr_now!r}\n"
            )
            if val_total < best_val:
                best_val = val_total
                save_checkpoint(model, best_path)
            final_train = float(epoch_parts[0])

    save_checkpoint(model, final_path)
    if not best_path.exists():  # pragma: no cover - best always written above
        save_checkpoint(model, best_path)
    return TrainResult(
        final_checkpoint=str(final_path),
        best_checkpoint=str(best_path),
        epochs_csv=str(epochs_csv),
        steps_csv=str(steps_csv),
        final_train_loss=final_train,
        best_val_loss=best_val,
    )


# -- generation and evaluation -------------------------------------------------------


def generate_cmd(
    audio_path,
    checkpoint_path,
    out_dir,
    k: int = 1,
    sigma: Optional[float] = None,
    seed: int = 0,
    max_seconds: float = DEFAULT_MAX_SECONDS,
) -> dict:
    """Generate k palettes (seeds seed..seed+k-1) and write JSON + swatches."""
    if k < 1:
        raise UsageError("k must be >= 1")
    model = load_checkpoint(checkpoint_path)
    model.eval()
    if sigma is None:
        sigma = model.config.noise_sigma
    features = features_for_audio(audio_path, max_seconds=max_seconds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(audio_path).stem
    outputs = []
    for j in range(k):
        gen = torch.Generator().manual_seed(seed + j)
        palette = model.generate(features, sigma, gen)
        base = out_dir / f"{stem}_{j:02d}"
        json_path = base.with_suffix(".json")
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(colorlab.palette_to_json(palette) + "\n")
        svg_path = base.with_suffix(".svg")
        svg_path.write_text(colorlab.swatch_svg(palette), encoding="utf-8")
        ppm_path = base.with_suffix(".ppm")
        ppm_path.write_bytes(colorlab.swatch_ppm(palette))
        outputs.append(
            {
                "palette": colorlab.palette_to_json_dict(palette),
                "json": str(json_path),
                "svg": str(svg_path),
                "ppm": str(ppm_path),
            }
        )
    return {"audio": str(audio_path), "outputs": outputs}


def evaluate_cmd(
    manifest_path,
    checkpoint_path,
    out_csv,
    k: int = 5,
    seed: int = 0,
    sigma: Optional[float] = None,
    split: str = "test",
    hull_samples: int = 100_000,
    compare_to_gt: bool = False,
    max_seconds: float = DEFAULT_MAX_SECONDS,
) -> dict:
    entries = read_manifest(manifest_path)
    if split != "all":
        train_ids, val_ids, test_ids = split_dataset([e.music_id for e in entries], seed)
        wanted = {"train": train_ids, "val": val_ids, "test": test_ids}.get(split)
        if wanted is None:
            raise UsageError(f"unknown split {split!r}")
        entries = [e for e in entries if e.music_id in set(wanted)]
    if not entries:
        raise DataError(f"split {split!r} holds no entries")

    model = load_checkpoint(checkpoint_path)
    model.eval()
    items = [
        metrics.EvalItem(
            clip_id=e.music_id,
            features=features_for_entry(e, max_seconds),
            music_emotion=e.emotion_music,
            gt_palette=e.palette,
        )
        for e in entries
    ]
    rows, report = metrics.evaluate(
        items, model, k=k, seed=seed, sigma=sigma,
        hull_samples=hull_samples, compare_to_gt=compare_to_gt,
    )
    metrics.write_metrics_csv(out_csv, rows, report)
    return {"rows": rows, "report": report, "csv_path": str(out_csv)}


def swatch_cmd(palette_json_path, out_base) -> dict:
    """Render an existing palette JSON to SVG + PPM swatches."""
    try:
        text = Path(palette_json_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read palette {palette_json_path}: {exc}") from exc
    palette = colorlab.palette_from_json(text)
    base = Path(out_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    svg_path = base.with_suffix(".svg")
    ppm_path = base.with_suffix(".ppm")
    svg_path.write_text(colorlab.swatch_svg(palette), encoding="utf-8")
    ppm_path.write_bytes(colorlab.swatch_ppm(palette))
    return {"svg": str(svg_path), "ppm": str(ppm_path)}
