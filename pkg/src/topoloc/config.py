"""Pipeline configuration, loaded from a YAML file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import liegroup as lg
from .ct_icp import POINT_TO_PLANE, POINT_TO_POINT, DopplerConfig, IcpOptions, MeasurementModel
from .errors import ConfigurationError
from .gp import DEFAULT_QC, MotionPriorConfig
from .localization import AcceptanceRule, LocalizationOptions
from .posegraph import KeyframeThresholds
from .radar import DetectorConfig

MODES = ("lidar-lidar", "radar-radar", "radar-lidar")


@dataclass
class LidarConfig:
    voxel_size: float = 0.3
    # 20 neighbours from a 0.2 deg scan all sit on one ring of ground points
    knn: int = 40
    normal_radius: float | None = None  # metres; None leaves the neighbour search unbounded
    min_score: float = 0.95
    max_points: int = 20000
    min_planarity: float = 0.05
    truncation: float = 0.5
    base_weight: float = 100.0
    # reject point-to-plane pairs whose normals disagree by more than this (null disables)
    normal_gate_deg: float | None = 20.0
    extrinsic: list = field(default_factory=lambda: [0.0, 0.0, 1.8, 0.0, 0.0, 0.0])

    @property
    def T_rs(self) -> np.ndarray:
        return lg.from_rpy_xyz(*self.extrinsic)

    @property
    def model(self) -> MeasurementModel:
        gate = None if self.normal_gate_deg is None else float(np.deg2rad(self.normal_gate_deg))
        return MeasurementModel(POINT_TO_PLANE, self.base_weight, self.truncation, gate)


@dataclass
class DopplerSection:
    enabled: bool = True
    beta: float = 0.0


@dataclass
class RadarConfig:
    a: float = 1.0
    b: float = 25.0
    window: int = 20
    guard: int = 4
    statistic: str = "greatest-of"
    min_range_bin: int = 34
    truncation: float = 1.0
    base_weight: float = 25.0
    extrinsic: list = field(default_factory=lambda: [0.3, 0.0, 2.0, 0.0, 0.0, 0.0])
    doppler: DopplerSection = field(default_factory=DopplerSection)

    @property
    def T_rs(self) -> np.ndarray:
        return lg.from_rpy_xyz(*self.extrinsic)

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.a, self.b, self.window, self.guard, self.statistic)

    @property
    def model(self) -> MeasurementModel:
        return MeasurementModel(POINT_TO_POINT, self.base_weight, self.truncation)

    @property
    def doppler_config(self) -> DopplerConfig:
        return DopplerConfig(self.doppler.enabled, self.doppler.beta, lg.inverse(self.T_rs))


@dataclass
class OdometryConfig:
    qc: list = field(default_factory=lambda: list(DEFAULT_QC))
    max_iterations: int = 40
    convergence_tol: float = 1e-6
    max_nonconverged: int = 10
    edge_cov_inflation: float = 1.0
    # root-velocity bootstrap on the second scan: one round per truncation scale
    bootstrap_truncation_scales: list = field(default_factory=lambda: [4.0, 2.0, 1.0, 1.0])
    # the root velocity is a guess during the bootstrap, so its motion prior is loosened by this factor
    bootstrap_qc_scale: float = 1e6

    @property
    def prior(self) -> MotionPriorConfig:
        return MotionPriorConfig(tuple(self.qc))

    @property
    def bootstrap_prior(self) -> MotionPriorConfig:
        return MotionPriorConfig(tuple(self.bootstrap_qc_scale * np.asarray(self.qc, dtype=float)))

    @property
    def icp_options(self) -> IcpOptions:
        return IcpOptions(self.max_iterations, self.convergence_tol)


@dataclass
class MappingConfig:
    max_translation: float = 10.0
    max_rotation_deg: float = 30.0
    submap_scans: int = 3

    @property
    def thresholds(self) -> KeyframeThresholds:
        return KeyframeThresholds(self.max_translation, np.deg2rad(self.max_rotation_deg))


@dataclass
class LocalizationConfig:
    min_inlier_fraction: float = 0.4
    max_translation_change: float = 5.0
    max_iterations: int = 40
    convergence_tol: float = 1e-6
    max_halvings: int = 8
    window: int = 5
    max_failures: int = 20
    # loose covariance of the identity guess that seeds the first repeat localization
    initial_sigma: list = field(default_factory=lambda: [2.0, 2.0, 0.5, 0.05, 0.05, 0.2])

    @property
    def options(self) -> LocalizationOptions:
        rule = AcceptanceRule(self.min_inlier_fraction, self.max_translation_change)
        return LocalizationOptions(self.max_iterations, self.convergence_tol, self.max_halvings, rule)

    @property
    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.square(np.asarray(self.initial_sigma, dtype=float)))


@dataclass
class PipelineConfig:
    mode: str = "lidar-lidar"
    seed: int = 0
    lidar: LidarConfig = field(default_factory=LidarConfig)
    radar: RadarConfig = field(default_factory=RadarConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.lidar.extrinsic) != 6 or len(self.radar.extrinsic) != 6 or len(self.odometry.qc) != 6:
            raise ConfigurationError("extrinsics and qc need six entries")
        # build the derived objects once so bad values fail at load time
        self.lidar.model, self.radar.model, self.radar.detector, self.radar.doppler_config
        self.odometry.prior, self.mapping.thresholds
        if self.mapping.submap_scans < 1 or self.localization.max_failures < 1:
            raise ConfigurationError("submap_scans and max_failures must be >= 1")

    @property
    def teach_sensor(self) -> str:
        return "radar" if self.mode == "radar-radar" else "lidar"

    @property
    def repeat_sensor(self) -> str:
        return "lidar" if self.mode == "lidar-lidar" else "radar"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, path=""):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {path or 'root'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigurationError(f"unknown configuration key {path + key!r}")
        ftype = fields[key].default_factory if fields[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(ftype):
            kwargs[key] = _build(ftype, value, path + key + ".")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in {path}: {exc}") from exc
    return config_from_dict(data or {})
