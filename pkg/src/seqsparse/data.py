"""Desk-scale datasets, sensing, the DCT dictionary, PSNR and IDX ingestion."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DimensionError, make_rng
from .model import dct_atoms

DATASET_FORMAT = "seqsparse-dataset"
SPLIT_NAMES = ("train", "val", "test")


class IdxFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        self.offset = offset
        super().__init__(f"{msg} (at byte offset {offset})")


@dataclass
class Dataset:
    """Frame sequences ``(count, T, n0)`` plus split tags and generation metadata."""

    frames: np.ndarray
    kind: str
    seed: int
    meta: dict = field(default_factory=dict)
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    codes: np.ndarray | None = None

    @property
    def count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def T(self) -> int:
        return int(self.frames.shape[1])

    @property
    def n0(self) -> int:
        return int(self.frames.shape[2])

    def subset(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise KeyError(f"dataset has no {name!r} split")
        return self.frames[self.splits[name]]


def _seq_rng(seed: int, index: int):
    return make_rng(int(seed) ^ int(index))


def dct_dictionary(n0: int, h: int) -> np.ndarray:
    """``n0 x h`` overcomplete DCT-II dictionary with unit-norm columns."""
    if h < n0:
        raise DimensionError("dct_dictionary", f"h >= n0 = {n0}", h)
    return dct_atoms(n0, h)


def gen_synthetic_sparse(count: int, T: int, n0: int, h: int, k: int, seed: int,
                         resample_frac: float = 0.1, innovation: float = 0.1) -> Dataset:
    """Correlated sparse code sequences rendered through a fixed DCT dictionary.

    ``h_1`` is ``k``-sparse Gaussian. Each later step keeps the previous code,
    moves ``floor(resample_frac * k)`` support entries to fresh positions and
    adds ``innovation * N(0, 1)`` to every active coefficient.
    """
    if min(count, T, n0, h) < 1 or not 0 <= k <= h:
        raise ValueError(f"invalid dims count={count} T={T} n0={n0} h={h} k={k}")
    if not 0 <= resample_frac <= 1 or innovation < 0:
        raise ValueError("resample_frac must be in [0, 1] and innovation >= 0")
    D = dct_dictionary(n0, h)
    codes = np.zeros((count, T, h))
    n_move = int(resample_frac * k)
    for i in range(count):
        rng = _seq_rng(seed, i)
        code = np.zeros(h)
        support = rng.choice(h, size=k, replace=False)
        code[support] = rng.standard_normal(k)
        codes[i, 0] = code
        for t in range(1, T):
            code = code.copy()
            support = np.flatnonzero(code)
            if n_move and support.size:
                leave = rng.choice(support, size=min(n_move, support.size), replace=False)
                free = np.setdiff1d(np.arange(h), support)
                enter = rng.choice(free, size=min(leave.size, free.size), replace=False)
                vals = code[leave[: enter.size]]
                code[leave] = 0.0
                code[enter] = vals
            active = code != 0
            code[active] += innovation * rng.standard_normal(int(active.sum()))
            codes[i, t] = code
    frames = codes @ D.T
    meta = {"n0": n0, "h": h, "k": k, "resample_frac": resample_frac, "innovation": innovation}
    return Dataset(frames, "synthetic-sparse", seed, meta, codes=codes)


def bounce_positions(p0: int, v: int, lo: int, hi: int, T: int) -> list[int]:
    """Positions of a point moving at integer speed ``v`` between reflecting walls."""
    pos, vel, out = p0, v, [p0]
    for _ in range(T - 1):
        pos += vel
        while pos < lo or pos > hi:
            if pos < lo:
                pos = 2 * lo - pos
            else:
                pos = 2 * hi - pos
            vel = -vel
        out.append(pos)
    return out


def render_square(side: int, square: int, row: int, col: int) -> np.ndarray:
    img = np.zeros((side, side))
    img[row:row + square, col:col + square] = 1.0
    return img.ravel()


def gen_moving_square(count: int, T: int, side: int = 16, square: int = 4, seed: int = 0,
                      max_speed: int = 2, velocities=None) -> Dataset:
    """Bright ``square x square`` block moving with constant integer velocity, reflecting at walls.

    ``velocities`` optionally fixes ``(vy, vx)`` per sequence.
    """
    if not 0 < square < side or min(count, T) < 1:
        raise ValueError(f"invalid dims count={count} T={T} side={side} square={square}")
    hi = side - square
    frames = np.zeros((count, T, side * side))
    tracks = []
    for i in range(count):
        rng = _seq_rng(seed, i)
        r0, c0 = (int(x) for x in rng.integers(0, hi + 1, size=2))
        if velocities is not None:
            vy, vx = velocities[i]
        else:
            vy, vx = (int(x) for x in rng.integers(-max_speed, max_speed + 1, size=2))
        rows = bounce_positions(r0, int(vy), 0, hi, T)
        cols = bounce_positions(c0, int(vx), 0, hi, T)
        tracks.append((r0, c0, int(vy), int(vx)))
        for t in range(T):
            frames[i, t] = render_square(side, square, rows[t], cols[t])
    meta = {"side": side, "square": square, "max_speed": max_speed, "n0": side * side, "tracks": tracks}
    return Dataset(frames, "moving-square", seed, meta)


def sense(A, seq) -> np.ndarray:
    """``x_t = A s_t`` for every frame in ``seq`` (``(..., n0)``)."""
    A = np.asarray(A, dtype=np.float64)
    seq = np.asarray(seq, dtype=np.float64)
    if A.ndim != 2 or seq.shape[-1] != A.shape[1]:
        raise DimensionError("sense", f"frame length {A.shape[1] if A.ndim == 2 else '?'}", seq.shape)
    return seq @ A.T


def sensing_matrix(n: int, n0: int, seed: int) -> np.ndarray:
    """Gaussian sensing matrix with ``N(0, 1/n)`` entries."""
    return make_rng(seed).standard_normal((n, n0)) / np.sqrt(n)


PSNR_CAP = 100.0


def psnr(s, s_hat, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB, capped at 100 dB."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise DimensionError("psnr", s.shape, s_hat.shape)
    mse = float(np.mean((s - s_hat) ** 2))
    if mse < peak * peak * 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int | None = None) -> Dataset:
    """Tag a seeded permutation of the sequences as train/val/test (contiguous chunks)."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9 or fr[0] == 0:
        raise ValueError(f"degenerate split fractions {fractions}")
    N = dataset.count
    rng = make_rng(dataset.seed if seed is None else seed)
    perm = rng.permutation(N)
    n_train = int(round(fr[0] * N))
    n_val = int(round(fr[1] * N))
    n_val = min(n_val, N - n_train)
    dataset.splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    dataset.meta["split_fractions"] = list(fr)
    dataset.meta["split_seed"] = dataset.seed if seed is None else int(seed)
    return dataset


# -- IDX ----------------------------------------------------------------------

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers; a 2x reduction averages 2x2 blocks."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis(in_h, out_h)
    c0, c1, fc = axis(in_w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def load_idx(path, size: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX image file (magic ``0x00000803``).

    Returns ``(N, rows, cols)`` frames scaled to ``[0, 1]``; with ``size``,
    each frame is bilinearly decimated to ``size x size``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("truncated header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != 0x00000803:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x00000803", 0)
    if len(raw) < 16:
        raise IdxFormatError("truncated header", len(raw))
    count, rows, cols = struct.unpack(">III", raw[4:16])
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IdxFormatError(f"truncated image data, expected {need} bytes", len(raw))
    imgs = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    imgs = imgs.reshape(count, rows, cols).astype(np.float64) / 255.0
    if size is not None and (rows, cols) != (size, size):
        imgs = np.stack([bilinear_resize(im, size, size) for im in imgs]) if count else np.zeros((0, size, size))
    return imgs


def write_idx(path, images) -> Path:
    """Write ``(N, rows, cols)`` uint8 images as an IDX file."""
    images = np.asarray(images, dtype=np.uint8)
    path = Path(path)
    path.write_bytes(struct.pack(">IIII", 0x00000803, *images.shape) + images.tobytes())
    return path


def dataset_from_idx(path, T: int, size: int = 16, seed: int = 0) -> Dataset:
    """Group consecutive IDX frames into sequences of length ``T``."""
    imgs = load_idx(path, size)
    count = imgs.shape[0] // T
    if count < 1:
        raise ValueError(f"{path}: fewer than T={T} frames")
    frames = imgs[: count * T].reshape(count, T, -1)
    return Dataset(frames, "idx-import", seed, {"source": str(path), "side": size, "n0": frames.shape[2]})


# -- on-disk format -----------------------------------------------------------

def regenerate(manifest: dict) -> Dataset:
    """Rebuild a generated dataset from its manifest."""
    kind, seed, m = manifest["kind"], manifest["seed"], manifest["meta"]
    if kind == "synthetic-sparse":
        ds = gen_synthetic_sparse(manifest["count"], manifest["T"], m["n0"], m["h"], m["k"], seed,
                                  m["resample_frac"], m["innovation"])
    elif kind == "moving-square":
        ds = gen_moving_square(manifest["count"], manifest["T"], m["side"], m["square"], seed, m["max_speed"])
    else:
        raise ValueError(f"cannot regenerate dataset kind {kind!r}")
    if "split_fractions" in m:
        split(ds, m["split_fractions"], m["split_seed"])
    return ds


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (little-endian float64 frames)."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".bin")
    manifest = {
        "format": DATASET_FORMAT,
        "version": 1,
        "kind": ds.kind,
        "seed": ds.seed,
        "count": ds.count,
        "T": ds.T,
        "n0": ds.n0,
        "meta": ds.meta,
        "splits": {k: [int(i) for i in v] for k, v in ds.splits.items()},
        "sidecar": sidecar.name,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar.write_bytes(np.ascontiguousarray(ds.frames, dtype="<f8").tobytes())
    path.write_text(manifest_json(manifest))
    return path


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a dataset manifest")
    shape = (manifest["count"], manifest["T"], manifest["n0"])
    raw = (path.parent / manifest["sidecar"]).read_bytes()
    if len(raw) != 8 * int(np.prod(shape)):
        raise ValueError(f"{path}: sidecar holds {len(raw)} bytes, expected {8 * int(np.prod(shape))}")
    frames = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    splits = {k: np.asarray(v, dtype=int) for k, v in manifest.get("splits", {}).items()}
    return Dataset(frames, manifest["kind"], manifest["seed"], manifest["meta"], splits)
