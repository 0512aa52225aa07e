"""
Main entrypoint for the reconstruction workbench.

This script parses the command line, loads the settings file, initializes
logging and dispatches to one sub-command: scene generation, rendering,
training, reconstruction, view selection, imperfect-input simulation or
evaluation. Contract violations end the process with status 1 and a one-line
diagnostic on stderr.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional
import numpy as np
import torch
from app.config import Settings, load_settings
from app.core.gaussians import GaussianCloud
from app.logging_config import setup_logging
from app.models import SceneSpec
from app.processing.evaluation import evaluate_scene, format_metrics_table, split_views
from app.processing.training_processor import TrainState, TrainingProcessor, load_model, load_scenes
from app.services.dataset_service import read_dataset, read_ground_truth, write_dataset, write_png
from app.services.ply_service import export_ply, import_ply
from app.services.scene_service import (
    gen_scene,
    generate_cloud,
    pick_corrupt_indices,
    pool_query_indices,
    quality_training_samples,
    render_scene_views,
    synth_candidate_pool,
    voxelize_cloud,
)
from app.services.selection_service import QualityClassifier, select_views, train_quality_classifier
from app.services.simulation_service import noise_catalog
from app.state_manager import write_json

logger = logging.getLogger(__name__)

_PHASES = {"1": "stage1", "2": "stage2", "finetune": "finetune"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE settings file (defaults to .env).")
    common.add_argument("--seed", type=int, help="Overrides SEED.")
    common.add_argument("--scene", help="Scene directory, or a directory of scenes.")
    common.add_argument("--views", type=int, default=4, help="Number of input views.")
    common.add_argument("--out", help="Output file or directory.")
    common.add_argument("--checkpoint", help="Training checkpoint of the model.")

    parser = argparse.ArgumentParser(prog="gs-workbench", description="Multi-view Gaussian reconstruction workbench.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-scene", parents=[common], help="Generate a synthetic scene dataset.")
    gen.add_argument("--shape", default="sphere_shell", choices=["sphere_shell", "box", "two_blob", "ring"])
    gen.add_argument("--color-scheme", default="bands", choices=["solid", "gradient", "bands", "octants"])
    gen.add_argument("--gaussians", type=int, default=2000)

    render = commands.add_parser("render", parents=[common], help="Render a PLY cloud at the dataset poses.")
    render.add_argument("--ply", required=True)

    train = commands.add_parser("train", parents=[common], help="Run one training phase.")
    train.add_argument("--phase", required=True, choices=sorted(_PHASES))
    train.add_argument("--init", default="transfer", choices=["transfer", "fresh"])
    train.add_argument("--steps", type=int, help="Steps to run; the full schedule when omitted.")

    commands.add_parser("reconstruct", parents=[common], help="Reconstruct a cloud and novel views from input views.")

    select = commands.add_parser("select-views", parents=[common], help="Curate a synthesized candidate pool.")
    select.add_argument("--corrupt", type=int, default=3, help="Number of corrupted candidates.")
    select.add_argument("--classifier", help="Quality classifier checkpoint.")

    classifier = commands.add_parser("train-classifier", parents=[common], help="Train the back-view quality classifier.")
    classifier.add_argument("--scenes", type=int, default=8, help="Synthetic scenes used for training data.")

    commands.add_parser("simulate", parents=[common], help="Render one image per noise effect.")
    commands.add_parser("eval", parents=[common], help="Metrics table over a dataset.")
    return parser


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ValueError(f"{flag} is required for this command.")
    return value


def cmd_gen_scene(args: argparse.Namespace, settings: Settings) -> None:
    spec = SceneSpec(shape=args.shape, color_scheme=args.color_scheme, gaussian_count=args.gaussians, seed=settings.SEED)
    out = _require(args.out, "--out")
    gen_scene(spec, settings, out)


def cmd_render(args: argparse.Namespace, settings: Settings) -> None:
    cloud = import_ply(args.ply)
    write_dataset(_require(args.out, "--out"), render_scene_views(cloud, settings), cloud)


def cmd_train(args: argparse.Namespace, settings: Settings) -> None:
    phase = _PHASES[args.phase]
    scenes = load_scenes(_require(args.scene, "--scene"))
    processor = TrainingProcessor(settings, scenes, output_dir=_require(args.out, "--out"))
    state = TrainState.load(args.checkpoint) if args.checkpoint else None
    if phase == "stage1":
        if state is not None and state.phase != "stage1":
            raise ValueError("Stage 1 resumes only from a stage-1 checkpoint.")
        state = processor.train_stage1(state, steps=args.steps)
    elif phase == "stage2":
        state = processor.train_stage2(state, init=args.init, steps=args.steps)
    else:
        if state is None:
            raise ValueError("Fine-tuning needs --checkpoint with a stage-2 state.")
        state = processor.finetune_imperfect(state, steps=args.steps)
    processor.save_checkpoint(state)


def cmd_reconstruct(args: argparse.Namespace, settings: Settings) -> None:
    model = load_model(_require(args.checkpoint, "--checkpoint"))
    views = read_dataset(_require(args.scene, "--scene"))
    inputs, held_out = split_views(views, args.views)
    out = Path(_require(args.out, "--out"))
    with torch.no_grad():
        cloud = model.reconstruct(inputs)
        renders = model.render(cloud, [view.camera for view in held_out])
    export_ply(cloud, out / "cloud.ply")
    for index, render in enumerate(renders):
        write_png(out / f"novel_{index}.png", render.as_rgba())
    logger.info(f"Reconstructed from {len(inputs)} views; wrote {len(renders)} novel views to '{out}'.")


def _ground_truth(scene: str) -> GaussianCloud:
    cloud = read_ground_truth(scene)
    if cloud is None:
        raise FileNotFoundError(f"Scene '{scene}' has no ground-truth cloud.")
    return cloud


def cmd_select_views(args: argparse.Namespace, settings: Settings) -> None:
    cloud = _ground_truth(_require(args.scene, "--scene"))
    rng = np.random.default_rng(settings.SEED)
    model = load_model(args.checkpoint) if args.checkpoint else None
    corrupt = pick_corrupt_indices(rng, len(settings.VIEW_ELEVATIONS) + settings.VIEW_AZIMUTH_COUNT, args.corrupt, exclude=pool_query_indices(settings))
    pool = synth_candidate_pool(cloud, settings, rng, model=model, corrupt_indices=corrupt)
    classifier = QualityClassifier.load(args.classifier) if args.classifier else None
    report = select_views(pool, classifier, settings.matcher_config(), settings.selection_config())
    payload = report.model_dump()
    payload["corrupted"] = [i for i, flag in enumerate(pool.corrupted) if flag]
    write_json(_require(args.out, "--out"), payload)


def cmd_train_classifier(args: argparse.Namespace, settings: Settings) -> None:
    shapes = ["sphere_shell", "box", "two_blob", "ring"]
    clouds = [generate_cloud(SceneSpec(shape=shapes[i % len(shapes)], seed=settings.SEED + i)) for i in range(args.scenes)]
    rng = np.random.default_rng(settings.SEED)
    features, labels = quality_training_samples(clouds, settings, rng)
    classifier = train_quality_classifier(features, labels, settings.classifier_config(), seed=settings.SEED)
    classifier.save(_require(args.out, "--out"))


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> None:
    scene = _require(args.scene, "--scene")
    views = read_dataset(scene)
    if args.checkpoint:
        model = load_model(args.checkpoint)
        with torch.no_grad():
            cloud = model.reconstruct(split_views(views, args.views)[0])
    else:
        cloud = voxelize_cloud(_ground_truth(scene), settings.GRID_SIZE, settings.activation_config())
    camera = views[0].camera
    catalog = noise_catalog(
        cloud, camera, settings.noise_config(), settings.render_config(), settings.background, settings.SEED, settings.activation_config()
    )
    out = Path(_require(args.out, "--out"))
    for name, image in catalog.items():
        write_png(out / f"{name}.png", image.as_rgba())


def cmd_eval(args: argparse.Namespace, settings: Settings) -> None:
    model = load_model(_require(args.checkpoint, "--checkpoint"))
    scenes = load_scenes(_require(args.scene, "--scene"))
    results = []
    for scene in scenes:
        results.extend(evaluate_scene(model, scene, settings.EVAL_VIEW_COUNTS, settings.CHAMFER_OPACITY_THRESHOLD))
    table = format_metrics_table(results)
    logger.info("\n" + table)
    if args.out:
        write_json(args.out, [result.model_dump() for result in results])


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], None]] = {
    "gen-scene": cmd_gen_scene,
    "render": cmd_render,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "select-views": cmd_select_views,
    "train-classifier": cmd_train_classifier,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Runs one workbench command and returns the process exit status."""
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        overrides = {"SEED": args.seed} if args.seed is not None else {}
        settings = load_settings(args.config, **overrides)
        logging.getLogger().setLevel(settings.LOG_LEVEL.strip().upper())
        logger.info(f"Running '{args.command}'.")
        COMMANDS[args.command](args, settings)
    except (ValueError, RuntimeError, OSError) as error:
        logger.error(f"Command '{args.command}' failed: {error}", exc_info=True)
        sys.stderr.write(f"error: {error}\n")
        return 1
    logger.info(f"Command '{args.command}' finished.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
