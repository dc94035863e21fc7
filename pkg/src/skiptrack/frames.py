"""Frame files: binary PPM (P6), raw interleaved RGB8, and PGM (P5) output."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FrameFormatError
from .tracker import BoundingBox


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header fields, skipping ``#`` comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FrameFormatError("header ends early")
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    tokens, pos = _header_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FrameFormatError(f"expected P6, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FrameFormatError("non-numeric PPM header field") from exc
    if w < 1 or h < 1 or maxval != 255:
        raise FrameFormatError(f"unsupported PPM geometry {w}x{h} maxval {maxval}")
    raster = buf[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise FrameFormatError("PPM raster is truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w, _ = frame.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + frame.tobytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_raw_rgb(path: str | Path, width: int, height: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) != width * height * 3:
        raise FrameFormatError(f"{path}: expected {width * height * 3} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()


@dataclass
class FrameManifest:
    width: int
    height: int
    frames: list[Path]
    init_box: BoundingBox | None = None

    def read(self, index: int) -> np.ndarray:
        path = self.frames[index]
        if path.read_bytes()[:2] == b"P6":
            frame = read_ppm(path)
            if frame.shape[:2] != (self.height, self.width):
                raise FrameFormatError(f"{path}: size {frame.shape[1]}x{frame.shape[0]} differs from manifest")
            return frame
        return read_raw_rgb(path, self.width, self.height)

    def initial_box(self) -> BoundingBox:
        if self.init_box is not None:
            return self.init_box
        # centered box covering a quarter of each side
        return BoundingBox(self.width / 2.0, self.height / 2.0, self.width / 4.0, self.height / 4.0)


def load_manifest(path: str | Path) -> FrameManifest:
    """Parse ``{width, height, frames: [paths], init_box?: [cx, cy, w, h]}``.

    Relative frame paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        width, height = int(doc["width"]), int(doc["height"])
        frames = [path.parent / f for f in doc["frames"]]
        box = doc.get("init_box")
        init_box = BoundingBox(*map(float, box)) if box is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        raise FrameFormatError(f"{path}: invalid manifest ({exc})") from exc
    if width < 1 or height < 1 or not frames:
        raise FrameFormatError(f"{path}: manifest needs positive dimensions and at least one frame")
    return FrameManifest(width, height, frames, init_box)
