"""SFR1 multi-band rasters, binary PGM bands, manifests and config files.

SFR1 layout (little endian)::

    b"SFR1" | u32 width | u32 height | u32 band_count | u64 day | float32 samples

Samples are band-sequential, each band row-major.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FusionConfig
from .raster import BandTag, MultiBandImage

MAGIC = b"SFR1"
_HEADER = struct.Struct("<4sIIIQ")


class FormatError(ValueError):
    pass


def write_sfr(path, img: MultiBandImage) -> None:
    b, h, w = img.bands.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, w, h, b, int(img.day)))
        fh.write(img.bands.astype("<f4").tobytes(order="C"))


def read_sfr(path, tags=None) -> MultiBandImage:
    """Read an SFR1 file; ``tags`` defaults to ``band0, band1, ...`` in group J1."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, w, h, b, day = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = w * h * b
    body = data[_HEADER.size:]
    if len(body) != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} sample bytes, found {len(body)}")
    bands = np.frombuffer(body, dtype="<f4").reshape(b, h, w).astype(np.float64)
    if tags is None:
        tags = [BandTag(f"band{i}") for i in range(b)]
    elif len(tags) != b:
        raise FormatError(f"{path}: {b} bands but {len(tags)} band tags given")
    return MultiBandImage(bands, list(tags), int(day))


def write_pgm(path, band, maxval: int = 255) -> None:
    """Write one band as binary PGM (P5), rounding and clipping to ``[0, maxval]``."""
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    band = np.asarray(band, dtype=np.float64)
    h, w = band.shape
    q = np.clip(np.rint(band), 0, maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


def _pgm_tokens(data: bytes):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(data)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(h, w).astype(np.float64)


def read_mask(path) -> np.ndarray:
    """Damage mask from a PGM or single-band SFR1 file; nonzero means damaged."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        values = read_pgm(path)
    else:
        values = read_sfr(path).bands[0]
    return values != 0


def write_mask(path, mask) -> None:
    path = Path(path)
    m = np.asarray(mask, dtype=bool)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, m.astype(float) * 255.0, 255)
    else:
        write_sfr(path, MultiBandImage(m.astype(np.float64)[None], [BandTag("mask")]))


@dataclass
class ManifestEntry:
    image: Path
    mask: Path | None
    day: int


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    modis: Path | None = None
    modis_day: int | None = None
    truth: Path | None = None


def _fields(line: str, path, lineno: int) -> dict[str, str]:
    out = {}
    for tok in line.split():
        if "=" not in tok:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def read_manifest(path) -> Manifest:
    """Parse ``image=<path> mask=<path|none> day=<int>`` lines.

    Optional extra lines ``modis=<path> day=<int>`` and ``truth=<path>`` name
    the low-resolution image and a ground-truth image. Relative paths are
    resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries, modis, modis_day, truth = [], None, None, None
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        f = _fields(line, path, lineno)
        try:
            if "modis" in f:
                modis = base / f["modis"]
                modis_day = int(f["day"]) if "day" in f else None
            elif "truth" in f:
                truth = base / f["truth"]
            else:
                mask = f.get("mask", "none")
                entries.append(ManifestEntry(base / f["image"],
                                             None if mask == "none" else base / mask,
                                             int(f["day"])))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed entry ({exc})") from None
    if not entries:
        raise FormatError(f"{path}: no image entries")
    return Manifest(entries, modis, modis_day, truth)


def write_manifest(path, manifest: Manifest) -> None:
    base = Path(path).parent

    def rel(p):
        p = Path(p)
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = [f"image={rel(e.image)} mask={'none' if e.mask is None else rel(e.mask)} day={e.day}"
             for e in manifest.entries]
    if manifest.modis is not None:
        lines.append(f"modis={rel(manifest.modis)} day={manifest.modis_day}")
    if manifest.truth is not None:
        lines.append(f"truth={rel(manifest.truth)}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_bands(text: str) -> list[BandTag]:
    """``B2:J1,B3:J1,B5:J2`` -> band tags."""
    tags = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, group = item.partition(":")
        tags.append(BandTag(name, group or "J1"))
    return tags


def format_bands(tags) -> str:
    return ",".join(f"{t.name}:{t.group}" for t in tags)


def read_config(path) -> FusionConfig:
    """Read ``key=value`` lines into a :class:`FusionConfig`."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return config_from_mapping(values)


def config_from_mapping(values: dict[str, str]) -> FusionConfig:
    known = {f.name: f for f in dataclasses.fields(FusionConfig)}
    kwargs = {}
    for k, v in values.items():
        if k not in known:
            raise FormatError(f"unknown config key {k!r}")
        default = getattr(FusionConfig(), k)
        try:
            if isinstance(default, bool):
                kwargs[k] = v.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kwargs[k] = int(v)
            elif isinstance(default, float) or default is None:
                kwargs[k] = float(v)
            else:
                kwargs[k] = v
        except ValueError:
            raise FormatError(f"bad value for {k}: {v!r}") from None
    try:
        return FusionConfig(**kwargs)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_config(path, cfg: FusionConfig) -> None:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")
