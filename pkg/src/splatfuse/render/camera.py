"""Pinhole cameras, RGB images and binary PPM (P6) import/export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Camera:
    """World-to-camera pinhole model: ``x_cam = R @ x_world + t``.

    Pixel ``(u, v)`` has its center at integer coordinates; ``+z`` looks
    forward, ``+x`` right and ``+y`` down in the image.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(self.R @ self.R.T - np.eye(3))) > 1e-9:
            raise ValueError("R is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @property
    def position(self) -> np.ndarray:
        return -self.R.T @ self.t

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fov_deg: float = 60.0,
                up=(0.0, 0.0, 1.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("view direction is parallel to the up vector")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        # re-orthonormalize to keep the 1e-9 invariant under accumulated rounding
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, R, -R @ eye, width, height)

    def pixel_rays(self) -> np.ndarray:
        """Camera-space ray directions with unit z for every pixel, shape (H, W, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_line(self) -> str:
        vals = [self.fx, self.fy, self.cx, self.cy, *self.R.reshape(-1), *self.t]
        return " ".join(repr(float(x)) for x in vals) + f" {self.width} {self.height}"

    @classmethod
    def from_line(cls, line: str) -> "Camera":
        tok = line.split()
        if len(tok) != 18:
            raise ValueError(f"camera line needs 18 fields, got {len(tok)}")
        f = [float(x) for x in tok[:16]]
        return cls(f[0], f[1], f[2], f[3], np.array(f[4:13]).reshape(3, 3), np.array(f[13:16]),
                   int(tok[16]), int(tok[17]))


def save_cameras(path, cams) -> None:
    with open(path, "w") as fh:
        fh.write("# fx fy cx cy R(9, row-major) t(3) width height\n")
        for c in cams:
            fh.write(c.to_line() + "\n")


def load_cameras(path) -> list[Camera]:
    cams = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            cams.append(Camera.from_line(line))
    return cams


@dataclass
class Image:
    """RGB float image, ``pixels`` of shape (H, W, 3). Values are not clamped."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, rgb) -> "Image":
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3)).copy())


def to_bytes8(pixels: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: Image) -> None:
    data = to_bytes8(image.pixels)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> Image:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _ppm_tokens(buf, 4)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=offset)
    return Image(raw.reshape(h, w, 3).astype(np.float64) / 255.0)
