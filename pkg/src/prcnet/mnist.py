"""MNIST IDX ingestion and nuisance-transformation augmentation.

The IDX container is big-endian: images carry magic 0x00000803 and dims
(n, rows, cols), labels carry magic 0x00000801 and dim (n).  Pixels are
scaled to [0, 1].  Files may be gzipped.

Augmentation follows the protocol of the rotation/translation benchmarks:
each sample is independently rotated by an angle drawn uniformly from
[-max_rot, max_rot] and then shifted by integer offsets drawn uniformly
from [-max_trans, max_trans] per axis, with both the train and the test
set augmented.  Rotation is inverse-map bilinear interpolation about the
image center ((h-1)/2), zero filled; positive angles rotate row-down
toward column-right (a pixel below center moves left of center at +90).

Nothing downloads implicitly: `fetch` retrieves the four canonical files
and verifies their published SHA-256 digests.
"""

from __future__ import annotations

import gzip
import struct
import urllib.request
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import numpy as np

from .rng import Rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DEFAULT_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"

# (filename, sha256 of the gzipped file)
MNIST_FILES = {
    "train": (
        ("train-images-idx3-ubyte.gz",
         "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609"),
        ("train-labels-idx1-ubyte.gz",
         "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c"),
    ),
    "test": (
        ("t10k-images-idx3-ubyte.gz",
         "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6"),
        ("t10k-labels-idx1-ubyte.gz",
         "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6"),
    ),
}


class IdxError(ValueError):
    pass


@dataclass
class IdxDataset:
    images: np.ndarray  # (n, 1, h, w) float in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, 9]

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "IdxDataset":
        """First n samples -- the deterministic desk-scale slice."""
        return IdxDataset(self.images[:n], self.labels[:n])


@dataclass(frozen=True)
class AugmentSpec:
    """Per-sample maximums: rotation in degrees, translation in pixels."""

    max_rotation_deg: float = 0.0
    max_translation_px: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0 or self.max_translation_px < 0:
            raise ValueError("augmentation maxima must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.max_rotation_deg == 0 and self.max_translation_px == 0


def parse_idx(images_bytes: bytes, labels_bytes: bytes, dtype=np.float64) -> IdxDataset:
    """Decode one images + labels file pair, verifying magics and counts."""
    if len(images_bytes) < 16:
        raise IdxError(f"image header truncated at offset {len(images_bytes)}")
    magic, n, rows, cols = struct.unpack_from(">IIII", images_bytes, 0)
    if magic != IMAGE_MAGIC:
        raise IdxError(f"bad image magic {magic:#010x} at offset 0")
    expected = 16 + n * rows * cols
    if len(images_bytes) < expected:
        raise IdxError(f"image payload truncated at offset {len(images_bytes)} (need {expected})")
    if len(labels_bytes) < 8:
        raise IdxError(f"label header truncated at offset {len(labels_bytes)}")
    lmagic, ln = struct.unpack_from(">II", labels_bytes, 0)
    if lmagic != LABEL_MAGIC:
        raise IdxError(f"bad label magic {lmagic:#010x} at offset 0")
    if ln != n:
        raise IdxError(f"count mismatch: {n} images vs {ln} labels")
    if len(labels_bytes) < 8 + ln:
        raise IdxError(f"label payload truncated at offset {len(labels_bytes)}")
    pixels = np.frombuffer(images_bytes, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = pixels.astype(dtype).reshape(n, 1, rows, cols) / 255.0
    labels = np.frombuffer(labels_bytes, dtype=np.uint8, count=ln, offset=8).astype(np.int64)
    return IdxDataset(images, labels)


def _read_maybe_gz(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_dataset(data_dir, split: str = "train", dtype=np.float64) -> IdxDataset:
    """Load a split from `data_dir`; accepts gzipped or plain IDX files."""
    data_dir = Path(data_dir)
    (img_name, _), (lbl_name, _) = MNIST_FILES[split]
    candidates = [(img_name, lbl_name), (img_name[:-3], lbl_name[:-3])]
    for img, lbl in candidates:
        ip, lp = data_dir / img, data_dir / lbl
        if ip.exists() and lp.exists():
            return parse_idx(_read_maybe_gz(ip), _read_maybe_gz(lp), dtype=dtype)
    raise FileNotFoundError(
        f"no {split} IDX files under {data_dir}; run the `fetch` subcommand first"
    )


def fetch(data_dir, base_url: str = DEFAULT_BASE_URL, timeout: float = 60.0) -> list[Path]:
    """Download the four canonical files into `data_dir`, verifying SHA-256.

    Existing files with a matching digest are kept.  A digest mismatch is an
    error, never silently accepted.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for split in ("train", "test"):
        for name, digest in MNIST_FILES[split]:
            dest = data_dir / name
            if not dest.exists():
                with urllib.request.urlopen(base_url + name, timeout=timeout) as resp:
                    dest.write_bytes(resp.read())
            got = sha256(dest.read_bytes()).hexdigest()
            if got != digest:
                raise IdxError(f"{name}: sha256 {got} != expected {digest}")
            out.append(dest)
    return out


# -- geometric transforms ----------------------------------------------------

def rotate_batch(images: np.ndarray, angles_deg: np.ndarray) -> np.ndarray:
    """Rotate each (h, w) image by its own angle; bilinear, zero fill."""
    n, h, w = images.shape
    theta = np.deg2rad(np.asarray(angles_deg, dtype=np.float64)).reshape(n, 1, 1)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dc = cc - cx
    dr = rr - cy
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse map: sample the source at R(-theta) applied to the target offset
    src_c = cx + cos * dc + sin * dr
    src_r = cy - sin * dc + cos * dr
    return _bilinear_gather(images, src_r, src_c)


def _bilinear_gather(images: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    n, h, w = images.shape
    flat = images.reshape(n, h * w)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0
    out = np.zeros_like(images)
    for dr_i, dc_i, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        r = r0 + dr_i
        c = c0 + dc_i
        valid = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        idx = np.clip(r, 0, h - 1) * w + np.clip(c, 0, w - 1)
        vals = np.take_along_axis(flat, idx.reshape(n, h * w), axis=1).reshape(n, h, w)
        out += np.where(valid, weight * vals, 0.0)
    return out


def rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate one (h, w) image; see `rotate_batch` for conventions."""
    if img.shape[0] != img.shape[1]:
        raise ValueError("rotation expects a square image")
    return rotate_batch(img[None], np.array([angle_deg]))[0]


def translate_batch(images: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Shift each image by integer (dx cols right, dy rows down); zero pad."""
    n, h, w = images.shape
    dx = np.asarray(dx, dtype=np.int64).reshape(n, 1, 1)
    dy = np.asarray(dy, dtype=np.int64).reshape(n, 1, 1)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_r = rr - dy
    src_c = cc - dx
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    idx = np.clip(src_r, 0, h - 1) * w + np.clip(src_c, 0, w - 1)
    flat = images.reshape(n, h * w)
    vals = np.take_along_axis(flat, idx.reshape(n, h * w), axis=1).reshape(n, h, w)
    return np.where(valid, vals, 0.0)


def translate(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    return translate_batch(img[None], np.array([dx]), np.array([dy]))[0]


def augment_batch(images: np.ndarray, spec: AugmentSpec, rng: Rng) -> np.ndarray:
    """Independently rotate then translate every sample.

    Stream consumption, in order: n angle draws, n dx draws, n dy draws
    (always consumed, even when a maximum is zero, so downstream draws do
    not shift between augmentation settings).
    """
    if images.ndim != 4:
        raise ValueError("expected (n, c, h, w) images")
    n, c, h, w = images.shape
    flat = images.reshape(n * c, h, w)
    t = spec.max_translation_px
    angles = np.repeat(rng.uniform_block(n, -spec.max_rotation_deg, spec.max_rotation_deg), c)
    dx = np.repeat(rng.randint_block(n, -t, t), c)
    dy = np.repeat(rng.randint_block(n, -t, t), c)
    out = None
    if spec.max_rotation_deg != 0:
        out = rotate_batch(flat, angles)
    if t != 0:
        out = translate_batch(out if out is not None else flat, dx, dy)
    if out is None:
        out = flat.copy()
    return out.reshape(n, c, h, w)
