"""Color representations and perceptual color math.

Colors live in CIELCh (cylindrical CIELAB): lightness L in [0, 100],
chroma C >= 0 (working ceiling 150) and hue angle h in degrees [0, 360).
All conversions assume sRGB with the D65 white point and the 2 degree
standard observer.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError, UsageError

# Chroma below this is treated as achromatic and the hue collapses to 0.
ACHROMATIC_CHROMA = 1e-6

# Working ceiling for chroma; exceeds anything reachable from sRGB.
CHROMA_CEILING = 150.0

# Linear sRGB -> XYZ (D65), IEC 61966-2-1.
_RGB2XYZ = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)

# D65 reference white, 2 degree observer. Taken as the exact image of
# linear (1, 1, 1) under the matrix above so white maps to L=100, a=b=0.
_XN = _RGB2XYZ[0][0] + _RGB2XYZ[0][1] + _RGB2XYZ[0][2]
_YN = _RGB2XYZ[1][0] + _RGB2XYZ[1][1] + _RGB2XYZ[1][2]
_ZN = _RGB2XYZ[2][0] + _RGB2XYZ[2][1] + _RGB2XYZ[2][2]
def _inverse3(m):
    (a, b, c), (d, e, f), (g, h, i) = m
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return (
        ((e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det),
        ((f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det),
        ((d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det),
    )


# Exact numerical inverse of _RGB2XYZ so round trips are self-consistent.
_XYZ2RGB = _inverse3(_RGB2XYZ)


@dataclass(frozen=True)
class LchColor:
    """One color in CIELCh; the constructor normalizes into the invariants."""

    l: float
    c: float
    h: float

    def __post_init__(self):
        l = min(100.0, max(0.0, float(self.l)))
        c = max(0.0, float(self.c))
        h = float(self.h) % 360.0
        if c < ACHROMATIC_CHROMA:
            h = 0.0
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "h", h)

    def as_tuple(self):
        return (self.l, self.c, self.h)


@dataclass(frozen=True)
class LabColor:
    """Rectangular CIELAB; round-trips with LchColor via a=c*cos(h), b=c*sin(h)."""

    l: float
    a: float
    b: float


@dataclass(frozen=True)
class Palette:
    """An ordered set of 3 to 5 LchColors."""

    colors: tuple

    def __init__(self, colors: Iterable[LchColor]):
        colors = tuple(colors)
        if not 3 <= len(colors) <= 5:
            raise UsageError(f"palette must hold 3 to 5 colors, got {len(colors)}")
        if not all(isinstance(c, LchColor) for c in colors):
            raise UsageError("palette entries must be LchColor instances")
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.colors)

    def __iter__(self):
        return iter(self.colors)


def lch_to_lab(color: LchColor) -> LabColor:
    hr = math.radians(color.h)
    return LabColor(color.l, color.c * math.cos(hr), color.c * math.sin(hr))


def lab_to_lch(lab: LabColor) -> LchColor:
    c = math.hypot(lab.a, lab.b)
    h = math.degrees(math.atan2(lab.b, lab.a)) % 360.0
    return LchColor(lab.l, c, h)


def _srgb_decode(u: float) -> float:
    return u / 12.92 if u <= 0.04045 else ((u + 0.055) / 1.055) ** 2.4


def _srgb_encode(v: float) -> float:
    return 12.92 * v if v <= 0.0031308 else 1.055 * v ** (1.0 / 2.4) - 0.055


def _lab_f(t: float) -> float:
    return t ** (1.0 / 3.0) if t > 216.0 / 24389.0 else (24389.0 / 27.0 * t + 16.0) / 116.0


def _lab_finv(t: float) -> float:
    t3 = t * t * t
    return t3 if t3 > 216.0 / 24389.0 else (116.0 * t - 16.0) * 27.0 / 24389.0


def srgb_to_lab(rgb: Sequence[int]) -> LabColor:
    r, g, b = (_srgb_decode(ch / 255.0) for ch in rgb)
    x = _RGB2XYZ[0][0] * r + _RGB2XYZ[0][1] * g + _RGB2XYZ[0][2] * b
    y = _RGB2XYZ[1][0] * r + _RGB2XYZ[1][1] * g + _RGB2XYZ[1][2] * b
    z = _RGB2XYZ[2][0] * r + _RGB2XYZ[2][1] * g + _RGB2XYZ[2][2] * b
    fx, fy, fz = _lab_f(x / _XN), _lab_f(y / _YN), _lab_f(z / _ZN)
    return LabColor(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))


def srgb_to_lch(rgb: Sequence[int]) -> LchColor:
    """Convert 8-bit sRGB channels to CIELCh (D65, 2 degree observer)."""
    return lab_to_lch(srgb_to_lab(rgb))


def lch_to_srgb(color: LchColor):
    """Convert back to 8-bit sRGB.

    Returns ``((r, g, b), clipped)`` where ``clipped`` reports whether any
    linear channel had to be clamped into [0, 1] (out-of-gamut input).
    """
    lab = lch_to_lab(color)
    fy = (lab.l + 16.0) / 116.0
    fx = fy + lab.a / 500.0
    fz = fy - lab.b / 200.0
    x, y, z = _lab_finv(fx) * _XN, _lab_finv(fy) * _YN, _lab_finv(fz) * _ZN
    lin = [
        _XYZ2RGB[0][0] * x + _XYZ2RGB[0][1] * y + _XYZ2RGB[0][2] * z,
        _XYZ2RGB[1][0] * x + _XYZ2RGB[1][1] * y + _XYZ2RGB[1][2] * z,
        _XYZ2RGB[2][0] * x + _XYZ2RGB[2][1] * y + _XYZ2RGB[2][2] * z,
    ]
    clipped = any(v < -1e-8 or v > 1.0 + 1e-8 for v in lin)
    lin = [min(1.0, max(0.0, v)) for v in lin]
    out = tuple(int(round(_srgb_encode(v) * 255.0)) for v in lin)
    return out, clipped


def ciede2000(c1: LchColor, c2: LchColor) -> float:
    """CIEDE2000 color difference between two LCh colors.

    Follows the published implementation notes for the formula, including
    the hue-branch conventions; symmetric, non-negative, and zero for
    identical inputs.
    """
    lab1, lab2 = lch_to_lab(c1), lch_to_lab(c2)
    return ciede2000_lab(lab1.l, lab1.a, lab1.b, lab2.l, lab2.a, lab2.b)


def ciede2000_lab(l1, a1, b1, l2, a2, b2) -> float:
    """CIEDE2000 on raw CIELAB coordinates."""
    pow25_7 = 25.0 ** 7

    c1 = math.hypot(a1, b1)
    c2 = math.hypot(a2, b2)
    c_bar = 0.5 * (c1 + c2)
    g = 0.5 * (1.0 - math.sqrt(c_bar ** 7 / (c_bar ** 7 + pow25_7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p = math.hypot(a1p, b1)
    c2p = math.hypot(a2p, b2)

    h1p = 0.0 if (a1p == 0.0 and b1 == 0.0) else math.degrees(math.atan2(b1, a1p)) % 360.0
    h2p = 0.0 if (a2p == 0.0 and b2 == 0.0) else math.degrees(math.atan2(b2, a2p)) % 360.0

    dlp = l2 - l1
    dcp = c2p - c1p

    if c1p * c2p == 0.0:
        dhp = 0.0
    else:
        dhp = h2p - h1p
        if dhp > 180.0:
            dhp -= 360.0
        elif dhp < -180.0:
            dhp += 360.0
    dbig_hp = 2.0 * math.sqrt(c1p * c2p) * math.sin(math.radians(dhp) / 2.0)

    l_bar = 0.5 * (l1 + l2)
    cp_bar = 0.5 * (c1p + c2p)

    hsum = h1p + h2p
    if c1p * c2p == 0.0:
        hp_bar = hsum
    elif abs(h1p - h2p) <= 180.0:
        hp_bar = 0.5 * hsum
    elif hsum < 360.0:
        hp_bar = 0.5 * (hsum + 360.0)
    else:
        hp_bar = 0.5 * (hsum - 360.0)

    t = (
        1.0
        - 0.17 * math.cos(math.radians(hp_bar - 30.0))
        + 0.24 * math.cos(math.radians(2.0 * hp_bar))
        + 0.32 * math.cos(math.radians(3.0 * hp_bar + 6.0))
        - 0.20 * math.cos(math.radians(4.0 * hp_bar - 63.0))
    )
    dtheta = 30.0 * math.exp(-(((hp_bar - 275.0) / 25.0) ** 2))
    rc = 2.0 * math.sqrt(cp_bar ** 7 / (cp_bar ** 7 + pow25_7))
    lm50 = (l_bar - 50.0) ** 2
    sl = 1.0 + 0.015 * lm50 / math.sqrt(20.0 + lm50)
    sc = 1.0 + 0.045 * cp_bar
    sh = 1.0 + 0.015 * cp_bar * t
    rt = -math.sin(math.radians(2.0 * dtheta)) * rc

    fl = dlp / sl
    fc = dcp / sc
    fh = dbig_hp / sh
    return math.sqrt(fl * fl + fc * fc + fh * fh + rt * fc * fh)


def canonical_order(p: Palette) -> Palette:
    """Sort palette colors lexicographically by (L, C, h) ascending."""
    return Palette(sorted(p.colors, key=lambda c: (c.l, c.c, c.h)))


# Dedup quantization grid: L and C in 0.5 units, hue in whole degrees.
_Q_L = 0.5
_Q_C = 0.5
_Q_H = 1.0


def dedup_key(p: Palette) -> tuple:
    """Opaque hashable key; equal keys identify perceptually duplicate palettes."""
    key = []
    for c in canonical_order(p).colors:
        qh = int(round(c.h / _Q_H)) % 360
        key.append((int(round(c.l / _Q_L)), int(round(c.c / _Q_C)), qh))
    return tuple(key)


def palette_to_hex(p: Palette):
    out = []
    for c in p.colors:
        (r, g, b), _ = lch_to_srgb(c)
        out.append(f"#{r:02X}{g:02X}{b:02X}")
    return out


def palette_to_json_dict(p: Palette) -> dict:
    return {
        "colors": [{"l": c.l, "c": c.c, "h": c.h} for c in p.colors],
        "hex": palette_to_hex(p),
    }


def palette_to_json(p: Palette) -> str:
    return json.dumps(palette_to_json_dict(p), separators=(", ", ": "))


def palette_from_json_dict(obj: dict) -> Palette:
    if "colors" in obj and obj["colors"]:
        try:
            colors = [LchColor(d["l"], d["c"], d["h"]) for d in obj["colors"]]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed palette color entry: {exc}") from exc
    elif "hex" in obj and obj["hex"]:
        colors = [srgb_to_lch(_parse_hex(h)) for h in obj["hex"]]
    else:
        raise DataError("palette JSON needs a 'colors' or 'hex' list")
    return Palette(colors)


def palette_from_json(text: str) -> Palette:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid palette JSON: {exc}") from exc
    return palette_from_json_dict(obj)


def _parse_hex(value: str):
    v = value.strip().lstrip("#")
    if len(v) != 6:
        raise DataError(f"hex color must have 6 digits: {value!r}")
    try:
        return tuple(int(v[i : i + 2], 16) for i in (0, 2, 4))
    except ValueError as exc:
        raise DataError(f"invalid hex color {value!r}") from exc


def swatch_svg(p: Palette, width: int = 240, stripe_height: int = 48) -> str:
    """SVG swatch: one horizontal stripe per color, equal sizes, stacked."""
    n = len(p)
    rows = []
    for i, hexcode in enumerate(palette_to_hex(p)):
        rows.append(
            f'  <rect x="0" y="{i * stripe_height}" width="{width}" '
            f'height="{stripe_height}" fill="{hexcode}"/>'
        )
    body = "\n".join(rows)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{n * stripe_height}">\n{body}\n</svg>\n'
    )


def swatch_ppm(p: Palette, width: int = 240, stripe_height: int = 48) -> bytes:
    """Binary PPM (P6) swatch with the same stripe geometry as the SVG."""
    n = len(p)
    height = n * stripe_height
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    rows = []
    for c in p.colors:
        (r, g, b), _ = lch_to_srgb(c)
        rows.append(struct.pack("BBB", r, g, b) * width * stripe_height)
    return header + b"".join(rows)
