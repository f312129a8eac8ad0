"""Training state and its checkpoint file.

Checkpoint layout (all integers little-endian)::

    bytes 0..7    magic  b"MRCKPT\\x00\\x00"
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 header length L
    next L bytes  UTF-8 JSON header, keys sorted:
                    {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder     raw tensor bytes, C order, offsets relative to the end of the header

``meta`` holds counters, the run config, the body and camera definitions and
optimizer hyper-parameters; everything numeric is a tensor. The file has no
timestamps, so identical states give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..body import ParamBody, PoseParams, ShapeParams
from ..camera import Camera
from ..errors import CheckpointVersionError, DataError
from ..field import BackgroundField, CanonicalField, LaplaceDensity
from ..segment import MaskStore
from .confidence import ConfidenceRecord

MAGIC = b"MRCKPT\x00\x00"
CHECKPOINT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"),
    "uint8": (torch.uint8, "u1"),
    "bool": (torch.bool, "?"),
}
_BY_TORCH = {v[0]: k for k, v in _DTYPES.items()}


@dataclass
class TrainState:
    body: ParamBody
    camera: Camera
    fields: nn.ModuleList
    densities: nn.ModuleList
    background: BackgroundField
    poses: nn.ParameterList  # F * P entries of [J + 1, 3], frame-major
    shapes: list[ShapeParams]
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    store: MaskStore
    config: dict
    num_frames: int
    num_persons: int
    confidence: ConfidenceRecord | None = None
    epoch: int = 0
    step: int = 0
    lr_scale: float = 1.0
    rejected_steps: int = 0
    extra: dict = field(default_factory=dict)

    def pose_param(self, f: int, p: int) -> nn.Parameter:
        return self.poses[f * self.num_persons + p]

    def pose(self, f: int, p: int) -> PoseParams:
        return PoseParams.from_packed(self.pose_param(f, p))

    def frame_poses(self, f: int, detach: bool = True) -> list[PoseParams]:
        out = []
        for p in range(self.num_persons):
            t = self.pose_param(f, p)
            out.append(PoseParams.from_packed(t.detach().double() if detach else t))
        return out

    def all_poses(self) -> list[list[PoseParams]]:
        return [self.frame_poses(f) for f in range(self.num_frames)]

    def field_parameters(self) -> list[nn.Parameter]:
        return [*self.fields.parameters(), *self.densities.parameters(), *self.background.parameters()]


def make_optimizer(fields, densities, background, poses, lr_field: float, lr_pose: float) -> torch.optim.Adam:
    groups = [
        {"params": [*fields.parameters(), *densities.parameters(), *background.parameters()], "lr": lr_field, "name": "field"},
        {"params": list(poses.parameters()), "lr": lr_pose, "name": "pose"},
    ]
    return torch.optim.Adam(groups)


# ---------------------------------------------------------------------------
# serialization


def _tensor_entries(state: TrainState) -> dict[str, torch.Tensor]:
    t: dict[str, torch.Tensor] = {}
    for p, f in enumerate(state.fields):
        for k, v in f.state_dict().items():
            t[f"fields.{p}.{k}"] = v
    for p, d in enumerate(state.densities):
        for k, v in d.state_dict().items():
            t[f"densities.{p}.{k}"] = v
    for k, v in state.background.state_dict().items():
        t[f"background.{k}"] = v
    t["poses"] = torch.stack([p.detach() for p in state.poses])
    t["shapes"] = torch.stack([s.coeffs.detach().double() for s in state.shapes])
    for idx, st in state.optimizer.state_dict()["state"].items():
        for k, v in st.items():
            t[f"optim.{idx}.{k}"] = torch.as_tensor(v)
    t["rng"] = state.generator.get_state()
    s = state.store
    t["store.sam"] = torch.as_tensor(s.sam)
    t["store.mesh"] = torch.as_tensor(s.mesh)
    t["store.depth"] = torch.as_tensor(s.depth)
    t["store.refresh_epoch"] = torch.as_tensor(s.refresh_epoch)
    t["store.stale"] = torch.as_tensor(s.stale)
    t["store.low_confidence"] = torch.as_tensor(s.low_confidence)
    if state.confidence is not None:
        t["confidence.iou"] = torch.as_tensor(state.confidence.iou)
        t["confidence.reliable"] = torch.as_tensor(state.confidence.reliable)
    return t


def state_meta(state: TrainState) -> dict:
    sd = state.optimizer.state_dict()
    groups = [{k: v for k, v in g.items() if k != "params"} | {"params": g["params"]} for g in sd["param_groups"]]
    return {
        "epoch": state.epoch,
        "step": state.step,
        "lr_scale": state.lr_scale,
        "rejected_steps": state.rejected_steps,
        "num_frames": state.num_frames,
        "num_persons": state.num_persons,
        "alpha": None if state.confidence is None else state.confidence.alpha,
        "config": state.config,
        "body": state.body.to_dict(),
        "camera": state.camera.to_dict(),
        "param_groups": groups,
        "extra": state.extra,
    }


def save_checkpoint(state: TrainState, path) -> str:
    """Write the checkpoint atomically; returns its sha256 hex digest."""
    tensors = _tensor_entries(state)
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        v = tensors[name].detach().cpu().contiguous()
        if v.dtype not in _BY_TORCH:
            raise TypeError(f"cannot serialize {name} with dtype {v.dtype}")
        code = _BY_TORCH[v.dtype]
        raw = v.numpy().astype(_DTYPES[code][1], copy=False).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(v.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": state_meta(state), "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    data = MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(header)) + header + b"".join(blobs)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}")
    header = json.loads(raw[20 : 20 + hlen])
    base = 20 + hlen
    tensors = {}
    for e in header["tensors"]:
        tdtype, npdtype = _DTYPES[e["dtype"]]
        buf = raw[base + e["offset"] : base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=npdtype).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr).to(tdtype)
    return header["meta"], tensors


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_into(state: TrainState, meta: dict, tensors: dict[str, torch.Tensor]) -> TrainState:
    """Restore every tensor and counter of a checkpoint into a freshly built state."""
    if meta["num_frames"] != state.num_frames or meta["num_persons"] != state.num_persons:
        raise DataError("checkpoint does not match the scene's frame/person count")
    with torch.no_grad():
        for p, f in enumerate(state.fields):
            f.load_state_dict({k[len(f"fields.{p}.") :]: v for k, v in tensors.items() if k.startswith(f"fields.{p}.")})
        for p, d in enumerate(state.densities):
            d.load_state_dict({k[len(f"densities.{p}.") :]: v for k, v in tensors.items() if k.startswith(f"densities.{p}.")})
        state.background.load_state_dict({k[len("background.") :]: v for k, v in tensors.items() if k.startswith("background.")})
        for i, prm in enumerate(state.poses):
            prm.copy_(tensors["poses"][i])
    state.shapes = [ShapeParams(s.clone()) for s in tensors["shapes"]]
    opt_state: dict[int, dict] = {}
    for k, v in tensors.items():
        if k.startswith("optim."):
            _, idx, name = k.split(".", 2)
            opt_state.setdefault(int(idx), {})[name] = v
    state.optimizer.load_state_dict({"state": opt_state, "param_groups": meta["param_groups"]})
    state.generator.set_state(tensors["rng"])
    s = state.store
    s.sam = tensors["store.sam"].numpy().copy()
    s.mesh = tensors["store.mesh"].numpy().copy()
    s.depth = tensors["store.depth"].numpy().copy()
    s.refresh_epoch = tensors["store.refresh_epoch"].numpy().copy()
    s.stale = tensors["store.stale"].numpy().copy()
    s.low_confidence = tensors["store.low_confidence"].numpy().copy()
    if "confidence.iou" in tensors:
        state.confidence = ConfidenceRecord(
            tensors["confidence.iou"].numpy().copy(), float(meta["alpha"]), tensors["confidence.reliable"].numpy().copy()
        )
    else:
        state.confidence = None
    state.epoch = int(meta["epoch"])
    state.step = int(meta["step"])
    state.lr_scale = float(meta["lr_scale"])
    state.rejected_steps = int(meta["rejected_steps"])
    state.extra = dict(meta.get("extra", {}))
    return state
