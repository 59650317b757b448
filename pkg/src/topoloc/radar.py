"""Radar target extraction: BFAR thresholding (CA / GO statistics) and peak centroiding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError
from .pointcloud import PointCloud

CELL_AVERAGING = "cell-averaging"
GREATEST_OF = "greatest-of"


@dataclass(frozen=True)
class DetectorConfig:
    a: float = 1.0
    b: float = 10.0
    window: int = 20
    guard: int = 4
    statistic: Literal["cell-averaging", "greatest-of"] = GREATEST_OF

    def __post_init__(self):
        if self.window < 1 or self.guard < 0 or not self.a > 0:
            raise ConfigurationError("detector needs window >= 1, guard >= 0, a > 0")
        if self.statistic not in (CELL_AVERAGING, GREATEST_OF):
            raise ConfigurationError(f"unknown CFAR statistic {self.statistic!r}")


@dataclass(frozen=True)
class PolarScan:
    """One radar sweep: per-azimuth angle (rad), timestamp (s) and power bins."""

    angles: np.ndarray
    timestamps: np.ndarray
    power: np.ndarray  # (n_azimuths, n_bins), float32
    range_resolution: float
    min_range_bin: int = 0

    def __post_init__(self):
        power = np.asarray(self.power, dtype=np.float32)
        if power.ndim != 2:
            raise ValueError("power must be (n_azimuths, n_bins)")
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=float))
        if len(self.angles) != len(power) or len(self.timestamps) != len(power):
            raise ValueError("one angle and timestamp per azimuth required")
        if len(self.angles) > 1 and np.any(np.diff(self.angles) <= 0):
            raise ValueError("azimuth angles must be strictly increasing")

    @property
    def representative_time(self) -> float:
        return float(0.5 * (self.timestamps[0] + self.timestamps[-1]))


@dataclass(frozen=True)
class RadarTarget:
    azimuth_angle: float
    range: float
    timestamp: float

    @property
    def cartesian(self) -> np.ndarray:
        return self.range * np.array([np.cos(self.azimuth_angle), np.sin(self.azimuth_angle)])

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.azimuth_angle), np.sin(self.azimuth_angle), 0.0])


def _window_means(rows: np.ndarray, window: int) -> np.ndarray:
    # min-shifted mean: exact for constant windows
    views = sliding_window_view(rows, window, axis=-1)
    lo = views.min(axis=-1)
    return lo + (views - lo[..., None]).sum(axis=-1) / window


def bfar_mask(power: np.ndarray, cfg: DetectorConfig, min_range_bin: int = 0) -> np.ndarray:
    """Detection mask for one power row or a stack of rows (last axis = range)."""
    rows = np.asarray(power, dtype=np.float64)
    n = rows.shape[-1]
    w, g = cfg.window, cfg.guard
    if n <= 2 * (w + g) + 1:
        raise ConfigurationError(
            f"power array of length {n} too short for window={w}, guard={g}"
        )
    means = _window_means(rows, w)  # means[..., s] = mean(rows[..., s:s+w])
    cells = np.arange(w + g, n - w - g)
    left = means[..., cells - g - w]
    right = means[..., cells + g + 1]
    if cfg.statistic == GREATEST_OF:
        z = np.maximum(left, right)
    else:
        z = 0.5 * (left + right)
    mask = np.zeros(rows.shape, dtype=bool)
    mask[..., cells] = rows[..., cells] > cfg.a * z + cfg.b
    mask[..., : max(min_range_bin, 0)] = False
    return mask


def bfar_detect(power: np.ndarray, cfg: DetectorConfig, min_range_bin: int = 0) -> np.ndarray:
    """Indices ``i`` with ``power[i] > a * Z_i + b``."""
    return np.flatnonzero(bfar_mask(np.asarray(power).reshape(-1), cfg, min_range_bin))


def _group_means(detections: np.ndarray) -> np.ndarray:
    det = np.asarray(detections, dtype=np.int64)
    if len(det) == 0:
        return np.zeros(0)
    breaks = np.flatnonzero(np.diff(det) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(det)]])
    sums = np.add.reduceat(det.astype(float), starts)
    return sums / (ends - starts)


def peak_centroids(
    detections, angle: float, timestamp: float, range_resolution: float
) -> list[RadarTarget]:
    """Collapse runs of consecutive detections to one target at their mean bin."""
    means = _group_means(detections)
    return [
        RadarTarget(float(angle), float((m + 0.5) * range_resolution), float(timestamp))
        for m in means
    ]


def extract_targets(scan: PolarScan, cfg: DetectorConfig) -> PointCloud:
    """Detect, centroid and convert one polar scan to a planar Cartesian cloud."""
    mask = bfar_mask(scan.power, cfg, scan.min_range_bin)
    ranges, angles, times = [], [], []
    for row in range(mask.shape[0]):
        det = np.flatnonzero(mask[row])
        if len(det) == 0:
            continue
        m = _group_means(det)
        ranges.append((m + 0.5) * scan.range_resolution)
        angles.append(np.full(len(m), scan.angles[row]))
        times.append(np.full(len(m), scan.timestamps[row]))
    if not ranges:
        return PointCloud.empty("radar")
    r = np.concatenate(ranges)
    th = np.concatenate(angles)
    pos = np.stack([r * np.cos(th), r * np.sin(th), np.zeros_like(r)], axis=1)
    return PointCloud(pos, np.concatenate(times), frame_id="radar")
