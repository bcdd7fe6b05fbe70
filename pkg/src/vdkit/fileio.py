"""File formats: MTEN raw tensors, PGM/PPM images, weight bundles, JSON.

MTEN layout (bit-exact, little endian): magic "MTEN", u32 rank, rank u32
extents, then product(extents) float32 values in row-major order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

_MAGIC = b"MTEN"


def write_mten(path, array):
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"refusing to write non-finite tensor to {path}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for ext in arr.shape:
            fh.write(struct.pack("<I", ext))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_mten(path):
    """Read an MTEN tensor, returned upcast to float64."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise InputError(f"{path}: bad magic {data[:4]!r}, expected 'MTEN'")
    if len(data) < 8:
        raise InputError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    if rank == 0 or rank > 8:
        raise InputError(f"{path}: unsupported rank {rank}")
    need = 8 + 4 * rank
    if len(data) < need:
        raise InputError(f"{path}: truncated extents")
    extents = struct.unpack_from(f"<{rank}I", data, 8)
    if any(e == 0 for e in extents):
        raise InputError(f"{path}: zero extent in shape {extents}")
    count = 1
    for e in extents:
        count *= e
    if len(data) != need + 4 * count:
        raise InputError(
            f"{path}: payload is {len(data) - need} bytes, expected "
            f"{4 * count} for shape {extents}"
        )
    values = np.frombuffer(data, dtype="<f4", count=count, offset=need)
    return values.astype(np.float64).reshape(extents)


def _read_pnm_tokens(data, path, want):
    # header tokens separated by whitespace, '#' starts a comment to EOL
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < want and i < n:
        c = data[i : i + 1]
        if c == b"#":
            while i < n and data[i] not in (10, 13):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < want:
        raise InputError(f"{path}: truncated header")
    # exactly one whitespace byte separates the header from pixel data
    return tokens, i + 1


def read_pgm(path):
    """Read a P5 PGM (maxval 255) as a uint8 (H, W) array."""
    data = Path(path).read_bytes()
    tokens, offset = _read_pnm_tokens(data, path, 4)
    if tokens[0] != b"P5":
        raise InputError(f"{path}: expected P5 PGM, got {tokens[0]!r}")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise InputError(f"{path}: maxval must be 255, got {maxval}")
    need = width * height
    pixels = data[offset : offset + need]
    if len(pixels) != need:
        raise InputError(
            f"{path}: pixel payload is {len(pixels)} bytes, expected {need}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, gray):
    arr = np.asarray(gray)
    if arr.ndim != 2:
        raise InputError(f"PGM needs a 2-d array, got shape {arr.shape}")
    arr = arr.astype(np.uint8, copy=False)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def read_mask_pgm(path):
    """Binary mask from PGM: >= 128 is foreground."""
    return read_pgm(path) >= 128


def write_mask_pgm(path, mask):
    mask = np.asarray(mask, dtype=bool)
    write_pgm(path, np.where(mask, np.uint8(255), np.uint8(0)))


def pgm_bytes_from_soft(values):
    """Quantize a [0,1] soft mask to PGM bytes (round half away from zero)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"soft mask must be 2-d, got shape {arr.shape}")
    q = np.floor(arr * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    h, w = q.shape
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_ppm(path):
    """Read a P6 PPM (maxval 255) as float64 (H, W, 3) scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens, offset = _read_pnm_tokens(data, path, 4)
    if tokens[0] != b"P6":
        raise InputError(f"{path}: expected P6 PPM, got {tokens[0]!r}")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise InputError(f"{path}: maxval must be 255, got {maxval}")
    need = width * height * 3
    pixels = data[offset : offset + need]
    if len(pixels) != need:
        raise InputError(
            f"{path}: pixel payload is {len(pixels)} bytes, expected {need}"
        )
    raw = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return raw.astype(np.float64) / 255.0


def write_ppm(path, rgb_u8):
    arr = np.asarray(rgb_u8, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"PPM needs (H, W, 3), got shape {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def save_weight_bundle(directory, tensors, scalars=None):
    """Write tensors as MTEN files plus a manifest.json naming them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"tensors": {}, "scalars": dict(scalars or {})}
    for name in sorted(tensors):
        fname = name.replace(".", "_") + ".mten"
        write_mten(directory / fname, tensors[name])
        manifest["tensors"][name] = fname
    (directory / "manifest.json").write_text(dumps_canonical(manifest))
    return directory / "manifest.json"


def load_weight_bundle(manifest_path):
    """Load a weight bundle. Returns (tensors: dict, scalars: dict)."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read weight manifest {manifest_path}: {exc}")
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise ConfigError(f"{manifest_path}: manifest needs a 'tensors' map")
    base = manifest_path.parent
    tensors = {}
    for name, rel in manifest["tensors"].items():
        fpath = base / rel
        if not fpath.is_file():
            raise ConfigError(f"{manifest_path}: tensor file missing: {rel}")
        tensors[name] = read_mten(fpath)
    scalars = manifest.get("scalars", {})
    if not isinstance(scalars, dict):
        raise ConfigError(f"{manifest_path}: 'scalars' must be a map")
    overlap = set(tensors) & set(scalars)
    if overlap:
        raise ConfigError(
            f"{manifest_path}: names used as both tensor and scalar: "
            f"{sorted(overlap)}"
        )
    return tensors, dict(scalars)


def dumps_canonical(obj):
    """Deterministic JSON encoding used for all emitted artifacts."""
    return json.dumps(obj, sort_keys=True, indent=2, separators=(",", ": ")) + "\n"
