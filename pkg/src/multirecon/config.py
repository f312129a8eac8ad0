"""Run configuration.

One YAML (or JSON) file holds every knob; unknown keys are rejected.
Precedence, lowest to highest: built-in defaults, the config file, then
command-line flags (including generic ``--set section.key=value``).
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

THREADS_ENV = "MULTIRECON_THREADS"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SceneConfig(_Strict):
    samples_per_ray: int = Field(64, ge=2, description="samples per ray and person")
    box_padding: float = Field(0.1, ge=0.0, description="meters around the posed body")


class LossWeightsConfig(_Strict):
    rgb: float = Field(1.0, ge=0.0)
    mask: float = Field(0.5, ge=0.0)
    eik: float = Field(0.1, ge=0.0)
    depth: float = Field(0.01, ge=0.0)
    inter: float = Field(0.01, ge=0.0)


class OptimConfig(_Strict):
    lr_field: float = Field(5e-4, gt=0.0)
    lr_pose: float = Field(1e-4, ge=0.0)
    lr_pose_inter: float = Field(1e-3, ge=0.0, description="pose-only depth/interpenetration phase")
    refresh_every: int = Field(10, ge=1, description="epochs per outer loop (mask refresh period)")
    outer_loops: int = Field(3, ge=0)
    rays_per_frame: int = Field(256, ge=1)
    foreground_fraction: float = Field(0.75, ge=0.0, le=1.0, description="share of rays drawn from pixels inside a person's box")
    frames_per_batch: int = Field(2, ge=1)
    pose_only_every: int = Field(5, ge=1, description="epochs between pose-only phases")
    pose_inter_update: Literal["adam", "normalized"] = Field("adam", description="pose-only phase update: Adam, or gradient steps scaled so the largest pose step has length lr")
    pose_inter_along_ray: bool = Field(False, description="pose-only phase moves each root only along its camera ray")
    pose_inter_rot_scale: float = Field(1.0, ge=0.0, description="rotation step relative to translation in the pose-only phase")
    inter_iters: int = Field(10, ge=0)
    inter_max_vertices: int = Field(400, ge=1)
    eik_samples: int = Field(256, ge=0)
    gating: bool = True
    density_b_init: float = Field(0.05, gt=0.0)
    density_b_min: float = Field(1e-4, gt=0.0)
    max_rejected_steps: int = Field(10, ge=1, description="consecutive non-finite steps before aborting")


class FieldConfig(_Strict):
    n_freqs: int = Field(6, ge=0)
    width: int = Field(64, ge=1)
    depth: int = Field(4, ge=1)
    softplus_beta: float = Field(100.0, gt=0.0)
    init_radius: Optional[float] = Field(None, gt=0.0, description="None: RMS radius of the template")
    mesh_resolution: int = Field(48, ge=8, description="marching-cubes grid used during training")
    export_mesh_resolution: int = Field(128, ge=8)
    background_n_freqs: int = Field(4, ge=0)


class SegmenterConfig(_Strict):
    kind: Literal["oracle", "external", "none"] = "oracle"
    radius: int = Field(0, ge=0, description="oracle dilate/erode radius, pixels")
    flip_prob: float = Field(0.0, ge=0.0, le=1.0)
    reach: Optional[int] = Field(None, ge=0, description="oracle prompt locality, pixels; None = unlimited")
    command: Optional[list[str]] = None


class InitConfig(_Strict):
    source: Literal["gt-noise", "file"] = "gt-noise"
    rot_noise_deg: float = Field(5.0, ge=0.0)
    trans_noise: float = Field(0.05, ge=0.0, description="meters")
    corrupt_frames: list[int] = Field(default_factory=list)
    corrupt_rot_deg: float = Field(20.0, ge=0.0)
    poses_file: Optional[str] = None


class ExportConfig(_Strict):
    meshes: bool = True
    renders: bool = True
    masks_per_epoch: bool = False
    checkpoint_every: int = Field(1, ge=1, description="epochs between checkpoints")


class SynthConfig(_Strict):
    num_persons: int = Field(2, ge=1, le=4)
    preset: Literal["static", "pass-by", "occluding-cross", "close-contact", "overlap"] = "occluding-cross"
    num_frames: int = Field(20, ge=1)
    resolution: int = Field(64, ge=8)
    samples: int = Field(32, ge=2)
    mesh_resolution: int = Field(96, ge=8)


class RunConfig(_Strict):
    data_dir: Optional[str] = None
    output_dir: Optional[str] = None
    seed: int = 0
    threads: Optional[int] = Field(None, ge=1, description=f"None: ${THREADS_ENV} or 1")
    scene: SceneConfig = Field(default_factory=SceneConfig)
    weights: LossWeightsConfig = Field(default_factory=LossWeightsConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    field: FieldConfig = Field(default_factory=FieldConfig)
    segmenter: SegmenterConfig = Field(default_factory=SegmenterConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @model_validator(mode="after")
    def _check(self):
        if self.segmenter.kind == "external" and not self.segmenter.command:
            raise ValueError("segmenter.command is required for the external segmenter")
        if self.init.source == "file" and not self.init.poses_file:
            raise ValueError("init.poses_file is required when init.source is 'file'")
        return self

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        return 1

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings (YAML-parsed values) to a nested dict."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
        node[parts[-1]] = _parse_value(value)
    return out


def load_config(path=None, overrides: list[str] | None = None, **flags) -> RunConfig:
    """Defaults <- file <- ``overrides`` <- explicit keyword flags (None values ignored)."""
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    data = apply_overrides(data, overrides or [])
    data = apply_overrides(data, [f"{k}={json.dumps(v)}" for k, v in flags.items() if v is not None])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
