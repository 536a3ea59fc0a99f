"""Music encoder and autoregressive color decoder.

The encoder consumes the 539-row feature matrix as non-overlapping,
full-height temporal patches, projects each to d_model, adds sinusoidal
positional encoding along time only, and runs pre-norm transformer blocks.
Patching along time keeps the model usable for any clip length without
re-interpolating positions.

The decoder embeds previously generated colors (LCh scaled to [0, 1]),
prepends a learnable start token, and applies causal self-attention plus
cross-attention over the encoder memory. Each position yields three sigmoid
color activations, scaled to (L, C, h) = (100, 150, 360) * activation, and a
stop logit from a separate linear head. The pooled music embedding, with
optional Gaussian augmentation, is prepended to the memory the decoder
attends over.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .colorlab import LchColor, Palette
from .errors import DataError, UsageError

N_FEATURE_ROWS = 539
CHECKPOINT_MAGIC = b"EPCK"
CHECKPOINT_VERSION = 1

COLOR_SCALE = (100.0, 150.0, 360.0)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    encoder_layers: int = 4
    decoder_layers: int = 4
    heads: int = 8
    ff_dim: Optional[int] = None
    dropout: float = 0.1
    patch_frames: int = 4
    max_colors: int = 5
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.ff_dim is None:
            object.__setattr__(self, "ff_dim", 4 * self.d_model)
        if self.d_model % self.heads != 0:
            raise UsageError("d_model must be divisible by heads")
        if self.patch_frames < 1:
            raise UsageError("patch_frames must be >= 1")
        if self.max_colors != 5:
            raise UsageError("max_colors is fixed at 5")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class DecodeStep:
    color_activation: tuple
    stop_logit: float


def positional_encoding(pos: int, d: int) -> np.ndarray:
    """Sinusoidal encoding: slots (2k, 2k+1) share frequency 1/10000^(2k/d)."""
    if pos < 0:
        raise UsageError("position must be >= 0")
    if d % 2 != 0:
        raise UsageError("encoding dimension must be even")
    k = np.arange(d // 2)
    angle = pos / np.power(10000.0, 2.0 * k / d)
    out = np.empty(d)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def _pe_table(n: int, d: int, dtype, device) -> torch.Tensor:
    pos = torch.arange(n, dtype=dtype, device=device)[:, None]
    k = torch.arange(d // 2, dtype=dtype, device=device)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), 2.0 * k / d)
    pe = torch.zeros(n, d, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


class _EncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(
            cfg.d_model, cfg.heads, dropout=cfg.dropout, batch_first=True
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.ff_dim),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ff_dim, cfg.d_model),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x):
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h, h, need_weights=False)[0])
        h = self.ln2(x)
        return x + self.drop(self.ff(h))


class _DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.heads, dropout=cfg.dropout, batch_first=True
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.heads, dropout=cfg.dropout, batch_first=True
        )
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.ff_dim),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ff_dim, cfg.d_model),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, causal_mask):
        h = self.ln1(x)
        x = x + self.drop(
            self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)[0]
        )
        h = self.ln2(x)
        x = x + self.drop(self.cross_attn(h, memory, memory, need_weights=False)[0])
        h = self.ln3(x)
        return x + self.drop(self.ff(h))


class PaletteGenerator(nn.Module):
    """Encoder/decoder pair; use :func:`build_model` for seeded construction."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.input_proj = nn.Linear(N_FEATURE_ROWS * config.patch_frames, d)
        self.encoder_blocks = nn.ModuleList(
            _EncoderBlock(config) for _ in range(config.encoder_layers)
        )
        self.encoder_norm = nn.LayerNorm(d)
        self.color_embed = nn.Linear(3, d)
        self.start_token = nn.Parameter(torch.zeros(d))
        self.decoder_blocks = nn.ModuleList(
            _DecoderBlock(config) for _ in range(config.decoder_layers)
        )
        self.decoder_norm = nn.LayerNorm(d)
        self.head_ff = nn.Linear(d, d)
        self.head_norm = nn.LayerNorm(d)
        self.color_head = nn.Linear(d, 3)
        self.stop_head = nn.Linear(d, 1)

    @property
    def dtype(self):
        return self.input_proj.weight.dtype

    # -- encoder ---------------------------------------------------------

    def _patchify(self, features: torch.Tensor) -> torch.Tensor:
        rows, t = features.shape
        if rows != N_FEATURE_ROWS:
            raise UsageError(f"feature matrix must have {N_FEATURE_ROWS} rows, got {rows}")
        if t < 1:
            raise UsageError("feature matrix must have at least one frame")
        p = self.config.patch_frames
        n = math.ceil(t / p)
        padded = torch.zeros(rows, n * p, dtype=features.dtype, device=features.device)
        padded[:, :t] = features
        # (rows, n, p) -> (n, rows*p): each token is a full-height patch.
        patches = padded.reshape(rows, n, p).permute(1, 0, 2).reshape(n, rows * p)
        return patches

    def encode(self, features) -> tuple:
        """Feature matrix (539, T) -> (token sequence H (N, d), pooled z_m)."""
        if not isinstance(features, torch.Tensor):
            features = torch.as_tensor(np.asarray(features))
        features = features.to(self.dtype)
        x = self.input_proj(self._patchify(features))
        x = x + _pe_table(x.shape[0], x.shape[1], x.dtype, x.device)
        x = x.unsqueeze(0)
        for block in self.encoder_blocks:
            x = block(x)
        h = self.encoder_norm(x).squeeze(0)
        return h, h.mean(dim=0)

    # -- decoder ---------------------------------------------------------

    def _color_tokens(self, colors: torch.Tensor) -> torch.Tensor:
        scale = torch.tensor(COLOR_SCALE, dtype=colors.dtype, device=colors.device)
        tokens = self.color_embed(colors / scale)
        return torch.cat([self.start_token[None, :].to(tokens.dtype), tokens], dim=0)

    def _decode(self, tokens: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        n = tokens.shape[0]
        tokens = tokens + _pe_table(n, tokens.shape[1], tokens.dtype, tokens.device)
        mask = torch.triu(
            torch.ones(n, n, dtype=torch.bool, device=tokens.device), diagonal=1
        )
        x = tokens.unsqueeze(0)
        mem = memory.unsqueeze(0)
        for block in self.decoder_blocks:
            x = block(x, mem, mask)
        return self.decoder_norm(x).squeeze(0)

    def _heads(self, decoded: torch.Tensor) -> tuple:
        h = self.head_norm(torch.relu(self.head_ff(decoded)))
        activations = torch.sigmoid(self.color_head(h))
        stop_logits = self.stop_head(decoded).squeeze(-1)
        return activations, stop_logits

    def _memory(self, features, sigma: float, generator) -> torch.Tensor:
        h, z_m = self.encode(features)
        z_aug = augment(z_m, sigma, generator)
        return torch.cat([z_aug[None, :], h], dim=0)

    @torch.no_grad()
    def decode_step(self, prev_colors: Sequence[LchColor], memory: torch.Tensor) -> DecodeStep:
        """One decoding step after ``prev_colors``; eval-mode single position."""
        if len(prev_colors) >= self.config.max_colors:
            raise UsageError("prefix already holds max_colors colors")
        colors = torch.tensor(
            [(c.l, c.c, c.h) for c in prev_colors], dtype=self.dtype
        ).reshape(len(prev_colors), 3)
        decoded = self._decode(self._color_tokens(colors), memory)
        activations, stop_logits = self._heads(decoded)
        last = activations[-1]
        return DecodeStep(
            color_activation=tuple(float(v) for v in last),
            stop_logit=float(stop_logits[-1]),
        )

    def forward_train(self, features, target: Sequence[LchColor], sigma: float, generator):
        """Teacher-forced pass.

        Returns ``(pred (N_gt, 3) LCh tensor, stop_logits (N_gt + 1,))``;
        stop target is 1 only at the final position.
        """
        n_gt = len(target)
        if not 3 <= n_gt <= self.config.max_colors:
            raise UsageError(f"target palette length must be in [3, 5], got {n_gt}")
        memory = self._memory(features, sigma, generator)
        colors = torch.tensor([(c.l, c.c, c.h) for c in target], dtype=self.dtype)
        decoded = self._decode(self._color_tokens(colors), memory)
        activations, stop_logits = self._heads(decoded)
        scale = torch.tensor(COLOR_SCALE, dtype=activations.dtype)
        pred = activations[:n_gt] * scale
        return pred, stop_logits

    @torch.no_grad()
    def generate(self, features, sigma: float = 0.0, generator=None) -> Palette:
        """Autoregressive generation; stops once the stop head fires after at
        least 3 colors, or at max_colors."""
        was_training = self.training
        self.eval()
        try:
            memory = self._memory(features, sigma, generator)
            colors = []
            while len(colors) < self.config.max_colors:
                step = self.decode_step(colors, memory)
                if len(colors) >= 3 and _sigmoid(step.stop_logit) > 0.5:
                    break
                s1, s2, s3 = step.color_activation
                colors.append(
                    LchColor(
                        COLOR_SCALE[0] * s1, COLOR_SCALE[1] * s2, COLOR_SCALE[2] * s3
                    )
                )
            return Palette(colors)
        finally:
            if was_training:
                self.train()


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def augment(z: torch.Tensor, sigma: float, generator=None) -> torch.Tensor:
    """Gaussian embedding augmentation z + sigma * eps, eps ~ N(0, I)."""
    if sigma < 0:
        raise UsageError("sigma must be >= 0")
    if sigma == 0:
        return z
    eps = torch.randn(z.shape, generator=generator, dtype=z.dtype, device=z.device)
    return z + sigma * eps


def build_model(config: ModelConfig) -> PaletteGenerator:
    """Construct a PaletteGenerator with seeded, reproducible initialization."""
    torch.manual_seed(config.seed)
    return PaletteGenerator(config)


def predictions_to_palette(pred: torch.Tensor) -> Palette:
    return Palette(LchColor(*(float(v) for v in row)) for row in pred)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: PaletteGenerator, path) -> None:
    """Single file: magic, u32 JSON length, JSON manifest, then a raw
    little-endian float32 blob with the offsets recorded in the manifest."""
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        blob = data.tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "offset": offset,
                "numel": int(data.size),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "tensors": tensors,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> PaletteGenerator:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise DataError(f"{path}: not a checkpoint file (bad magic {magic!r})")
            (header_len,) = struct.unpack("<I", fh.read(4))
            manifest = json.loads(fh.read(header_len).decode("utf-8"))
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc

    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}"
        )
    config = ModelConfig(**manifest["config"])
    model = PaletteGenerator(config)
    state = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        end = start + entry["numel"] * 4
        if end > len(blob):
            raise DataError(f"{path}: truncated tensor blob for {entry['name']}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr)
    missing = model.load_state_dict(state, strict=True)
    for tensor in model.state_dict().values():
        if not torch.isfinite(tensor).all():
            raise DataError(f"{path}: checkpoint holds non-finite weights")
    return model
