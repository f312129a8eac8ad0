"""Command-line interface.

Subcommands: ``synth``, ``train``, ``eval``, ``render``, ``extract-mesh``.

Configuration precedence, lowest to highest: built-in defaults, the
``--config`` file, ``--set section.key=value`` overrides, then dedicated
flags such as ``--seed``. Every command that writes an output directory
echoes the resolved configuration into ``config.yaml`` there.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
corrupt files, incompatible checkpoints), 4 numerical failure.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .camera import Camera, orbit_camera
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericalError

log = logging.getLogger("multirecon")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


def _config(config_path, overrides, **flags) -> RunConfig:
    return load_config(config_path, list(overrides), **flags)


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"{what} is required (flag or config file)")
    return value


def _frames(spec: str | None, num_frames: int) -> list[int]:
    if spec is None:
        return list(range(num_frames))
    try:
        out = [int(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--frames expects comma-separated integers, got {spec!r}") from exc
    bad = [f for f in out if not 0 <= f < num_frames]
    if bad:
        raise ConfigError(f"frames {bad} outside [0, {num_frames})")
    return out


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _echo_record(rec: dict) -> None:
    click.echo(json.dumps(rec, sort_keys=True))


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML or JSON run config.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value, e.g. optim.lr_field=1e-3.")


@click.group()
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
def cli(verbose: int) -> None:
    """Layered multi-person implicit reconstruction."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@config_option
@set_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Scene directory to write.")
@click.option("--persons", type=int, default=None)
@click.option("--preset", type=str, default=None)
@click.option("--frames", "num_frames", type=int, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=None)
def synth(config_path, overrides, out_dir, persons, preset, num_frames, resolution, seed):
    """Generate a synthetic scene with ground truth."""
    from .evalkit.synth import SceneSpec, generate_synthetic_scene, save_scene

    flags = {
        "synth.num_persons": persons,
        "synth.preset": preset,
        "synth.num_frames": num_frames,
        "synth.resolution": resolution,
        "seed": seed,
        "output_dir": out_dir,
    }
    cfg = _config(config_path, overrides, **flags)
    torch.set_num_threads(cfg.resolved_threads())
    out = _prepare_out(_require(cfg.output_dir, "--out"))
    s = cfg.synth
    spec = SceneSpec(
        num_persons=s.num_persons,
        preset=s.preset,
        num_frames=s.num_frames,
        resolution=s.resolution,
        seed=cfg.seed,
        samples=s.samples,
        mesh_resolution=s.mesh_resolution,
    )
    scene = generate_synthetic_scene(spec)
    save_scene(scene, out)
    cfg.save(out / "config.yaml")
    _echo_record({"event": "synth", "dir": str(out), "frames": scene.num_frames, "persons": scene.num_persons})


@cli.command()
@config_option
@set_option
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None, help="Scene directory.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Run output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--export-masks", is_flag=True, default=None, help="Write the refined masks after every epoch.")
@click.option("--resume", "resume_path", type=click.Path(dir_okay=False), default=None, help="Continue from this checkpoint.")
@click.option("--stop-after", type=int, default=None, help="Pause after this many total epochs (resume later).")
def train(config_path, overrides, data_dir, out_dir, seed, threads, export_masks, resume_path, stop_after):
    """Optimize fields and poses on a scene directory."""
    from .evalkit.synth import load_scene
    from .optim.pipeline import config_record, export_results, resume_state, run_pipeline, total_epochs
    from .optim.state import read_checkpoint

    flags = {"data_dir": data_dir, "output_dir": out_dir, "seed": seed, "threads": threads, "export.masks_per_epoch": export_masks}
    cfg = _config(config_path, overrides, **flags)
    scene = load_scene(_require(cfg.data_dir, "--data"))
    out = _prepare_out(_require(cfg.output_dir, "--out"))
    cfg.save(out / "config.yaml")
    state = None
    if resume_path is not None:
        meta, _ = read_checkpoint(resume_path)
        if meta["config"] != config_record(cfg):
            raise ConfigError(f"{resume_path} was written with a different configuration")
        state = resume_state(cfg, scene, resume_path)
    state = run_pipeline(cfg, scene, state=state, out_dir=out, stop_after=stop_after, on_epoch=lambda s, r: log.info("%s", r))
    finished = state.epoch >= total_epochs(cfg)
    written = {"meshes": [], "renders": []}
    if finished:
        written = export_results(state, out, cfg.field.export_mesh_resolution, meshes=cfg.export.meshes, renders=cfg.export.renders, padding=cfg.scene.box_padding)
    _echo_record(
        {
            "event": "train",
            "epoch": state.epoch,
            "finished": finished,
            "checkpoint": str(out / "checkpoint.mrc"),
            "meshes": len(written["meshes"]),
            "renders": len(written["renders"]),
        }
    )


@cli.command(name="eval")
@click.option("--checkpoint", "ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True, help="Scene directory with ground truth.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the report as JSON here.")
@click.option("--samples", type=int, default=10000, show_default=True, help="Surface samples for Chamfer/P2S/NC.")
@click.option("--resolution", type=int, default=None, help="Marching-cubes grid (default: field.export_mesh_resolution).")
@click.option("--frames", "frames_spec", type=str, default=None, help="Comma-separated frames for posed-mesh metrics (default all).")
def evaluate(ckpt, data_dir, out_path, samples, resolution, frames_spec):
    """Compare a checkpoint against a scene's ground truth."""
    from .evalkit.report import evaluate_state
    from .evalkit.synth import load_scene

    cfg, state = load_state_cli(ckpt)
    scene = load_scene(data_dir)
    if (scene.num_frames, scene.num_persons) != (state.num_frames, state.num_persons):
        raise DataError(f"{data_dir}: scene has {scene.num_frames}x{scene.num_persons} frames x persons, checkpoint {state.num_frames}x{state.num_persons}")
    report = evaluate_state(state, scene, resolution or cfg.field.export_mesh_resolution, samples, _frames(frames_spec, scene.num_frames), cfg.scene.box_padding)
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for section, values in report.items():
        _echo_record({"event": "eval", "section": section, **values})


@cli.command()
@click.option("--checkpoint", "ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--camera", "camera_path", type=click.Path(dir_okay=False), default=None, help="Camera JSON (default: training camera).")
@click.option("--orbit", type=float, default=0.0, show_default=True, help="Rotate the camera by this many degrees about the vertical axis through the subjects.")
@click.option("--frames", "frames_spec", type=str, default=None)
@click.option("--samples", type=int, default=None, help="Samples per ray and person (default: training value).")
@click.option("--seed", type=int, default=0, show_default=True)
def render(ckpt, out_dir, camera_path, orbit, frames_spec, samples, seed):
    """Render frames from the training or a novel camera."""
    from .io import save_png
    from .optim.pipeline import render_frame

    cfg, state = load_state_cli(ckpt)
    base = Camera.load(camera_path) if camera_path is not None else state.camera
    out = _prepare_out(out_dir)
    frames = _frames(frames_spec, state.num_frames)
    with torch.no_grad():
        for f in frames:
            cam = base
            if orbit:
                roots = np.stack([state.pose(f, p).translation.detach().double().numpy() for p in range(state.num_persons)])
                cam = orbit_camera(base, roots.mean(0), orbit)
            r = render_frame(state, f, camera=cam, samples=samples, seed=seed, padding=cfg.scene.box_padding)
            save_png(out / f"{f:05d}.png", np.clip(r.image, 0.0, 1.0))
            for p in range(state.num_persons):
                save_png(out / f"{f:05d}_opacity_p{p}.png", np.clip(r.opacity[p], 0.0, 1.0))
            _echo_record({"event": "render", "frame": f, "opacity_sum": [float(o.sum()) for o in r.opacity]})


@cli.command(name="extract-mesh")
@click.option("--checkpoint", "ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--resolution", type=int, default=None, help="Marching-cubes grid (default: field.export_mesh_resolution).")
@click.option("--frames", "frames_spec", type=str, default=None, help="Frames to pose the meshes in (default all).")
@click.option("--format", "fmt", type=click.Choice(["obj", "ply"]), default="obj", show_default=True)
def extract_mesh(ckpt, out_dir, resolution, frames_spec, fmt):
    """Extract canonical meshes and pose them per frame."""
    from .optim.pipeline import DeformedMeshes, current_canonical_meshes

    cfg, state = load_state_cli(ckpt)
    out = _prepare_out(out_dir)
    canon = current_canonical_meshes(state, resolution or cfg.field.export_mesh_resolution, cfg.scene.box_padding)
    for p, m in enumerate(canon):
        getattr(m, f"save_{fmt}")(out / f"canonical_p{p}.{fmt}")
    deformed = DeformedMeshes(state, canon)
    frames = _frames(frames_spec, state.num_frames)
    for f in frames:
        for p, m in enumerate(deformed.world(f)):
            getattr(m, f"save_{fmt}")(out / f"{f:05d}_p{p}.{fmt}")
    _echo_record({"event": "extract-mesh", "vertices": [len(m.vertices) for m in canon], "frames": len(frames)})


def load_state_cli(ckpt):
    from .optim.pipeline import load_state

    cfg, state = load_state(ckpt)
    torch.set_num_threads(cfg.resolved_threads())
    return cfg, state


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    try:
        cli.main(args=argv, prog_name="multirecon", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
