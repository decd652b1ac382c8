"""Raster helpers, seeded RNG streams and image file I/O.

Images are plain ``numpy`` arrays of shape ``(channels, height, width)`` with
``float64`` samples nominally in ``[0, 1]``.  Noise fields share the same
layout but hold signed residuals.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

NTF_MAGIC = b"NTF1"
MIN_SIDE = 8
BUNDLED_IMAGES = ("astronaut", "coffee", "chelsea")


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed image files."""


@dataclass(frozen=True)
class RngState:
    """Seed plus stream id; identical pairs give identical sample sequences.

    Child streams are derived with :meth:`child` so that independent stages
    never share one generator.
    """

    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngState":
        # Mix keys into a new 64-bit stream id, deterministically.
        ss = np.random.SeedSequence(self.stream, spawn_key=tuple(int(k) for k in keys))
        stream = int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])
        return RngState(self.seed, stream)


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate and normalise an array to the ``(C, H, W)`` float64 layout.

    2-D input is promoted to a single channel.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[np.newaxis]
    if a.ndim != 3:
        raise ValueError(f"{name} must have shape (C, H, W), got {a.shape}")
    c, h, w = a.shape
    if c not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {c}")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite samples")
    return a


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def split_channels(img: np.ndarray) -> list[np.ndarray]:
    """Split into single-channel planes in R, G, B order."""
    return [img[c : c + 1].copy() for c in range(img.shape[0])]


def merge_channels(planes: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).reshape((-1,) + p.shape[-2:]) for p in planes])


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp to ``[0, 1]`` and quantize with ``round(v * 255)``, half away from zero."""
    return round_half_away(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- raw float container -----------------------------------------------------


def encode_ntf(img: np.ndarray) -> bytes:
    c, h, w = img.shape
    header = NTF_MAGIC + struct.pack("<III", h, w, c)
    return header + np.ascontiguousarray(img, dtype="<f4").tobytes()


def decode_ntf(buf: bytes) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != NTF_MAGIC:
        raise ImageFormatError("not an NTF1 container")
    h, w, c = struct.unpack("<III", buf[4:16])
    n = h * w * c
    if n == 0:
        raise ImageFormatError("zero-sized NTF1 container")
    if len(buf) != 16 + 4 * n:
        raise ImageFormatError(f"NTF1 payload is {len(buf) - 16} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", offset=16, count=n)
    return data.astype(np.float64).reshape(c, h, w)


# -- file I/O ----------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Read a PNG, binary PPM/PGM or NTF1 file into a ``(C, H, W)`` array.

    8-bit samples map to ``v / 255``.  Alpha channels are dropped.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if raw[:4] == NTF_MAGIC:
        img = decode_ntf(raw)
    else:
        if not (raw[:8] == b"\x89PNG\r\n\x1a\n" or raw[:2] in (b"P5", b"P6")):
            raise ImageFormatError(f"unsupported image format: {path}")
        try:
            with PILImage.open(path) as im:
                im.load()
                if im.mode in ("RGBA", "LA", "P", "PA"):
                    im = im.convert("RGB" if im.mode in ("RGBA", "P", "PA") else "L")
                if im.mode not in ("L", "RGB"):
                    raise ImageFormatError(f"unsupported pixel mode {im.mode} in {path}")
                arr = np.asarray(im, dtype=np.float64) / 255.0
        except (OSError, SyntaxError) as exc:
            raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
        if arr.size == 0:
            raise ImageFormatError(f"zero-sized image: {path}")
        img = arr[np.newaxis] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    if img.size == 0:
        raise ImageFormatError(f"zero-sized image: {path}")
    return np.ascontiguousarray(img)


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` atomically; format follows the file extension.

    ``.ntf`` keeps float32 bits, ``.png``, ``.ppm`` and ``.pgm`` are 8-bit.
    """
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ntf":
        payload = encode_ntf(img)
    elif ext in (".png", ".ppm", ".pgm"):
        q = to_uint8(img)
        if ext == ".pgm" and q.shape[0] != 1:
            raise ImageFormatError("PGM requires a single-channel image")
        if ext == ".ppm" and q.shape[0] != 3:
            raise ImageFormatError("PPM requires a three-channel image")
        pil = PILImage.fromarray(q[0] if q.shape[0] == 1 else np.moveaxis(q, 0, -1))
        fmt = "PNG" if ext == ".png" else "PPM"
        bio = io.BytesIO()
        pil.save(bio, format=fmt)
        payload = bio.getvalue()
    else:
        raise ImageFormatError(f"unsupported output extension: {ext!r}")
    atomic_write(path, payload)


def atomic_write(path, payload: bytes | str) -> None:
    """Write to a temp file next to ``path`` and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(payload, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def bundled_image_path(name: str) -> Path:
    if name not in BUNDLED_IMAGES:
        raise KeyError(f"no bundled image {name!r}; choose from {BUNDLED_IMAGES}")
    return Path(str(resources.files("noisemorph") / "data" / f"{name}.png"))


def load_bundled(name: str) -> np.ndarray:
    """One of the three 256x256 RGB test images shipped with the package."""
    return load_image(bundled_image_path(name))


def resolve_image(spec: str) -> np.ndarray:
    """Load ``builtin:<name>`` references or plain file paths."""
    if spec.startswith("builtin:"):
        return load_bundled(spec.split(":", 1)[1])
    return load_image(spec)
