"""MNIST IDX ingestion, the 0-vs-1 binary task, and pixel-patch backdoors.

The IDX container is big-endian: a 4-byte magic (0x00000803 for images,
0x00000801 for labels), 32-bit dimension fields, then row-major unsigned
bytes.  Runs on real data use empirical centering because the defender
cannot know theta or the trigger.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import simulator, theory
from .errors import (
    BadMagic,
    CountMismatch,
    NoSamplesForDigit,
    PatchOutOfBounds,
    SubsampleTooLarge,
    ThetaOutOfRange,
    TruncatedFile,
)
from .records import SweepRecord
from .theory import ModelParams

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class IdxImages:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # count x rows x cols uint8


@dataclass(frozen=True)
class BinaryTask:
    X: np.ndarray  # p x n, p = rows*cols
    y: np.ndarray  # -1/+1 labels
    preprocessing: str  # "raw" or "unit"


@dataclass(frozen=True)
class PatchTrigger:
    offset: tuple
    patch: np.ndarray
    v: np.ndarray
    v_norm_target: float


def parse_idx_images(data: bytes) -> IdxImages:
    if len(data) < 16:
        raise TruncatedFile(f"image file has {len(data)} bytes, header needs 16")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"expected image magic {IMAGE_MAGIC:#010x}, got {magic:#010x}")
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise TruncatedFile(f"image byte length {len(data)}, header implies {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)
    return IdxImages(count=count, rows=rows, cols=cols, pixels=pixels)


def parse_idx_labels(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise TruncatedFile(f"label file has {len(data)} bytes, header needs 8")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABEL_MAGIC:
        raise BadMagic(f"expected label magic {LABEL_MAGIC:#010x}, got {magic:#010x}")
    expected = 8 + count
    if len(data) != expected:
        raise TruncatedFile(f"label byte length {len(data)}, header implies {expected}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).copy()


def serialize_idx_images(images: IdxImages) -> bytes:
    header = struct.pack(">IIII", IMAGE_MAGIC, images.count, images.rows, images.cols)
    return header + images.pixels.astype(np.uint8).tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    header = struct.pack(">II", LABEL_MAGIC, len(labels))
    return header + np.asarray(labels, dtype=np.uint8).tobytes()


def load_pair(image_path, label_path) -> tuple:
    with open(image_path, "rb") as fh:
        images = parse_idx_images(fh.read())
    with open(label_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    if images.count != len(labels):
        raise CountMismatch(
            f"{images.count} images but {len(labels)} labels"
        )
    return images, labels


def build_binary_task(
    images: IdxImages,
    labels: np.ndarray,
    digit_neg: int = 0,
    digit_pos: int = 1,
    scale: str = "unit",
) -> BinaryTask:
    """Filter to two digits and map them to -1/+1, in input order."""
    if scale not in ("raw", "unit"):
        raise ValueError(f"scale must be 'raw' or 'unit', got {scale!r}")
    mask = (labels == digit_neg) | (labels == digit_pos)
    if not np.any(labels == digit_neg):
        raise NoSamplesForDigit(f"no samples for digit {digit_neg}")
    if not np.any(labels == digit_pos):
        raise NoSamplesForDigit(f"no samples for digit {digit_pos}")
    selected = images.pixels[mask].astype(np.float64)
    if scale == "unit":
        selected = selected / 255.0
    X = selected.reshape(selected.shape[0], -1).T  # p x n
    y = np.where(labels[mask] == digit_pos, 1.0, -1.0)
    return BinaryTask(X=X, y=y, preprocessing=scale)


def make_patch_trigger(
    offset: tuple,
    size: int,
    v_norm_target: float,
    rows: int = 28,
    cols: int = 28,
) -> PatchTrigger:
    """Constant-intensity size x size patch, rescaled to the requested norm."""
    r0, c0 = offset
    if r0 < 0 or c0 < 0 or r0 + size > rows or c0 + size > cols:
        raise PatchOutOfBounds(
            f"{size}x{size} patch at {offset} does not fit in {rows}x{cols}"
        )
    grid = np.zeros((rows, cols))
    grid[r0:r0 + size, c0:c0 + size] = 1.0
    flat = grid.ravel()
    norm = float(np.linalg.norm(flat))
    if v_norm_target > 0.0 and norm > 0.0:
        flat = flat * (v_norm_target / norm)
    elif v_norm_target == 0.0:
        flat = flat * 0.0
    return PatchTrigger(
        offset=(r0, c0),
        patch=flat.reshape(rows, cols)[r0:r0 + size, c0:c0 + size].copy(),
        v=flat,
        v_norm_target=v_norm_target,
    )


def run_mnist_experiment(
    task: BinaryTask,
    trigger: PatchTrigger,
    theta: float,
    lam: float,
    subsample_n: int,
    trials: int,
    seed: int,
    swap_classes: bool = False,
    m_test: int = 10000,
    grid_index: int = 0,
) -> list[SweepRecord]:
    """Poisoned-ridge trials on real data with empirical centering.

    Each trial subsamples without replacement, poisons the negative class at
    rate theta (the positive class with swap_classes), solves the ridge
    problem and joins with the closed-form prediction at c = p/subsample_n.
    """
    if not (0.0 <= theta <= 1.0):
        raise ThetaOutOfRange(f"theta must be in [0, 1], got {theta}")
    n_avail = task.X.shape[1]
    if subsample_n > n_avail:
        raise SubsampleTooLarge(f"requested {subsample_n} of {n_avail} samples")
    p = task.X.shape[0]
    params = ModelParams(
        c=p / subsample_n, lam=lam, theta=theta,
        v_norm=float(np.linalg.norm(trigger.v)),
    )
    pred = theory.predict(params)
    records = []
    for ti in range(trials):
        t0 = time.perf_counter()
        rng = simulator.trial_rng(seed, grid_index, ti)
        idx = rng.choice(n_avail, size=subsample_n, replace=False)
        X = task.X[:, idx]
        y = task.y[idx].copy()
        if swap_classes:
            y = -y
        dataset = simulator.apply_poison(
            X, y, theta, trigger.v, rng, centering=simulator.Centering.EMPIRICAL
        )
        X_tilde, w_tilde, x_bar, w_bar = simulator.center(dataset, theta)
        sol = simulator.score_statistics(
            simulator.solve_ridge(X_tilde, w_tilde, lam, x_bar, w_bar), trigger.v
        )
        eta_mc = simulator.empirical_efficacy(sol, trigger.v, m_test, rng)
        sigma_emp = float(np.sqrt(sol.sigma_sq_emp))
        eta_plugin = (
            1.0 - theory.normal_cdf(-sol.mu_emp / sigma_emp) if sigma_emp > 0 else 0.5
        )
        records.append(SweepRecord(
            grid_index=grid_index,
            trial_index=ti,
            c_target=params.c,
            c_effective=p / subsample_n,
            lam=lam,
            theta=theta,
            v_norm=params.v_norm,
            p=p,
            n=subsample_n,
            seed=seed,
            mu_emp=sol.mu_emp,
            sigma2_emp=sol.sigma_sq_emp,
            eta_emp_mc=eta_mc,
            eta_emp_plugin=eta_plugin,
            mu_theory=pred.mu,
            sigma2_theory=pred.sigma_sq,
            eta_theory=pred.eta,
            C_theory=pred.C_align,
            centering_mode=simulator.Centering.EMPIRICAL.value,
            wall_time_ms=(time.perf_counter() - t0) * 1e3,
        ))
    return records
