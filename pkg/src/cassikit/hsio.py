"""File formats and generators for cubes, masks, measurements and reports.

The one container format (magic ``HSIC1``) stores any band-major volume:
cubes as (L, H, W), masks and measurements as single-plane volumes.  Layout
on disk:

    HSIC1\\n
    key=value lines (kind, H, W, L, dtype, layout, endian)
    blank line
    raw little-endian payload, band-major C order

Round-trips are bit-identical.  Everything else here is small, explicit
plumbing: Bernoulli mask generation, P5 graymap band slices, INI config
snapshots, CSV reports.
"""

from __future__ import annotations

import configparser
import csv
import os

import numpy as np

from .cassi import CodedMask

MAGIC = b"HSIC1\n"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
ENV_SEED = "CASSIKIT_SEED"


class FormatError(ValueError):
    """Container violates the format contract (magic, header, payload)."""


def save_cube(path: str, values: np.ndarray, kind: str = "cube") -> None:
    arr = np.asarray(values)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"can only store 2-d planes or 3-d volumes, got {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    name = _DTYPE_NAMES[np.dtype(arr.dtype)]
    L, H, W = arr.shape
    header = (f"kind={kind}\nH={H}\nW={W}\nL={L}\ndtype={name}\n"
              f"layout=band-major\nendian=little\n\n")
    payload = np.ascontiguousarray(arr).astype(_DTYPES[name], copy=False)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.encode("ascii"))
        f.write(payload.tobytes())


def load_cube(path: str, expect_kind: str | None = None):
    """Returns (values (L,H,W), header dict).  Raises FormatError on a bad
    container, FileNotFoundError when the path is missing."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: bad magic (not an HSIC1 container)")
    head_end = blob.find(b"\n\n", len(MAGIC))
    if head_end < 0:
        raise FormatError(f"{path}: unterminated header")
    meta = {}
    for line in blob[len(MAGIC):head_end].decode("ascii").splitlines():
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        key, val = line.split("=", 1)
        meta[key.strip()] = val.strip()
    for req in ("H", "W", "L", "dtype"):
        if req not in meta:
            raise FormatError(f"{path}: header missing {req}")
    if meta["dtype"] not in _DTYPES:
        raise FormatError(f"{path}: unsupported dtype {meta['dtype']!r}")
    H, W, L = int(meta["H"]), int(meta["W"]), int(meta["L"])
    dt = _DTYPES[meta["dtype"]]
    payload = blob[head_end + 2:]
    need = H * W * L * dt.itemsize
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise FormatError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(payload, dtype=dt).reshape(L, H, W).copy()
    if expect_kind is not None and meta.get("kind", "cube") != expect_kind:
        raise FormatError(f"{path}: kind is {meta.get('kind')!r}, expected {expect_kind!r}")
    return values, meta


def save_mask(path: str, mask) -> None:
    pattern = mask.pattern if isinstance(mask, CodedMask) else np.asarray(mask)
    save_cube(path, pattern.astype(np.float64), kind="mask")


def load_mask(path: str) -> CodedMask:
    values, _ = load_cube(path, expect_kind="mask")
    return CodedMask(pattern=values[0])


def save_measurement(path: str, y: np.ndarray) -> None:
    save_cube(path, np.asarray(y), kind="measurement")


def load_measurement(path: str) -> np.ndarray:
    values, _ = load_cube(path, expect_kind="measurement")
    return values[0]


def generate_mask(H: int, W: int, density: float = 0.5, seed: int = 0) -> CodedMask:
    """Bernoulli(density) binary aperture, seeded."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be in [0, 1]")
    rng = np.random.default_rng(seed)
    return CodedMask(pattern=(rng.random((H, W)) < density).astype(np.float64))


def write_pgm(path: str, image: np.ndarray) -> None:
    """8-bit P5 graymap of a [0,1] image (clipped for display only)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("graymaps are single-plane")
    q = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def save_config_snapshot(path: str, sections: dict) -> None:
    """INI snapshot of a run's full configuration."""
    cp = configparser.ConfigParser()
    for section, kv in sections.items():
        cp[section] = {k: str(v) for k, v in kv.items()}
    with open(path, "w") as f:
        cp.write(f)


def load_config(path: str) -> configparser.ConfigParser:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    cp = configparser.ConfigParser()
    cp.read(path)
    return cp


def default_seed(fallback: int = 0) -> int:
    """Seed from the environment override, else the fallback."""
    raw = os.environ.get(ENV_SEED, "")
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{ENV_SEED} must be an integer, got {raw!r}")
    return fallback
