"""
Orchestrates the three-phase training program of the reconstructor.

1. Stage 1 pre-trains the encoder and the decoder's trunk, color and opacity
   heads through volume rendering, with 1 to 16 input views per scene.
2. Stage 2 transfers those weights into a fresh Gaussian decoder and trains the
   full model through the splatting rasterizer, with 1 to 32 elevation-weighted
   input views.
3. Fine-tuning feeds the model its own corrupted renders as inputs and
   supervises it with clean views at a lower learning rate.

Every stochastic choice is drawn from one numpy generator whose state is part
of the checkpoint, so a resumed run continues exactly like an uninterrupted one.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union
import numpy as np
import torch
from app.config import Settings
from app.core.cameras import PosedView
from app.core.gaussians import GaussianCloud
from app.core.reconstructor import GaussianReconstructor
from app.core.triplane import transfer_nerf_heads
from app.logging_config import close_metrics_logger, get_metrics_logger
from app.models import OptimConfig, TrainingPhase
from app.processing.losses import LossTerms, composite_loss
from app.processing.optim import build_optimizer, clip_gradients, global_grad_norm, lr_at, set_lr
from app.processing.sampling import sample_views_weighted
from app.services.dataset_service import list_scenes, read_dataset, read_ground_truth
from app.services.simulation_service import simulate_imperfect_inputs
from app.state_manager import (
    load_tensors,
    pack_optimizer,
    restore_rng,
    rng_state,
    save_tensors,
    unpack_optimizer,
)

logger = logging.getLogger(__name__)

STAGE1_MIN_VIEWS = 16
_MODEL_PREFIX = "model."
_LOSS_KEYS = ("total", "l2", "perceptual", "opacity")


@dataclass
class SceneData:
    """Views of one training scene and, when known, its ground-truth cloud."""
    views: List[PosedView]
    cloud: Optional[GaussianCloud] = None
    name: str = "scene"


def load_scenes(root: Union[str, Path]) -> List[SceneData]:
    """Reads every scene directory below `root` (or `root` itself when it is a scene)."""
    scenes = [SceneData(views=read_dataset(path), cloud=read_ground_truth(path), name=path.name) for path in list_scenes(root)]
    if not scenes:
        raise FileNotFoundError(f"No scene datasets found under '{root}'.")
    logger.info(f"Loaded {len(scenes)} scenes from '{root}'.")
    return scenes


@dataclass
class TrainState:
    """Weights, optimizer moments, step counter, generator state and phase of a run."""
    model: GaussianReconstructor
    optimizer: torch.optim.Optimizer
    optim_cfg: OptimConfig
    step: int
    rng: np.random.Generator
    phase: TrainingPhase

    def save(self, path: Union[str, Path]) -> Path:
        """
        Writes the state as an FLXR checkpoint.
        Raises:
            ValueError: If the model holds non-float32 parameters.
        """
        tensors: Dict[str, torch.Tensor] = {
            f"{_MODEL_PREFIX}{name}": value for name, value in self.model.state_dict().items()
        }
        optim_tensors, optim_meta = pack_optimizer(self.optimizer)
        tensors.update(optim_tensors)
        metadata = {
            "kind": "train_state",
            "phase": self.phase,
            "step": self.step,
            "rng": rng_state(self.rng),
            "model": self.model.config_metadata(),
            "optim_cfg": self.optim_cfg.model_dump(),
            "optimizer": optim_meta,
        }
        return save_tensors(path, tensors, metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainState":
        """
        Restores a state written by `save`.
        Raises:
            RuntimeError: If the checkpoint holds something other than a training state.
        """
        tensors, metadata = load_tensors(path)
        if metadata.get("kind") != "train_state":
            raise RuntimeError(f"Checkpoint '{path}' does not hold a training state.")
        model = GaussianReconstructor.from_metadata(metadata["model"])
        model_state = {name[len(_MODEL_PREFIX):]: value for name, value in tensors.items() if name.startswith(_MODEL_PREFIX)}
        model.load_state_dict(model_state, strict=True)
        optim_cfg = OptimConfig(**metadata["optim_cfg"])
        optimizer = build_optimizer(model, optim_cfg)
        optimizer.load_state_dict(unpack_optimizer(tensors, metadata["optimizer"]))
        logger.info(f"Restored {metadata['phase']} state at step {metadata['step']} from '{path}'.")
        return cls(
            model=model,
            optimizer=optimizer,
            optim_cfg=optim_cfg,
            step=int(metadata["step"]),
            rng=restore_rng(metadata["rng"]),
            phase=metadata["phase"],
        )


def load_model(path: Union[str, Path]) -> GaussianReconstructor:
    """The reconstructor of a training checkpoint, switched to eval mode."""
    model = TrainState.load(path).model
    model.eval()
    return model


class TrainingProcessor:
    """Runs the training phases over a fixed list of scenes."""

    def __init__(
        self,
        settings: Settings,
        scenes: Sequence[SceneData],
        output_dir: Optional[Union[str, Path]] = None,
        run_name: str = "train",
    ) -> None:
        if not scenes:
            raise ValueError("Training needs at least one scene.")
        self.settings = settings
        self.scenes = list(scenes)
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.run_name = run_name
        self.loss_cfg = settings.loss_config()
        torch.use_deterministic_algorithms(True, warn_only=True)
        self._reset_summary()

    def _reset_summary(self) -> None:
        self.summary = {
            "phase": "",
            "steps_run": 0,
            "skipped_steps": 0,
            "first_loss": float("nan"),
            "last_loss": float("nan"),
            "checkpoints_written": 0,
            "max_clipped_norm": 0.0,
        }

    # --- Phase entry points ---

    def new_state(self, phase: TrainingPhase, model: Optional[GaussianReconstructor] = None, seed: Optional[int] = None) -> TrainState:
        """A fresh state for `phase`; a new model is initialized from the seed when none is given."""
        seed = self.settings.SEED if seed is None else seed
        if model is None:
            torch.manual_seed(seed)
            model = GaussianReconstructor.from_settings(self.settings)
        optim_cfg = self.settings.optim_config(phase)
        return TrainState(
            model=model,
            optimizer=build_optimizer(model, optim_cfg),
            optim_cfg=optim_cfg,
            step=0,
            rng=np.random.default_rng(seed),
            phase=phase,
        )

    def train_stage1(self, state: Optional[TrainState] = None, steps: Optional[int] = None) -> TrainState:
        """
        NeRF pre-training through volume rendering.
        Args:
            state: A stage-1 state to continue; a fresh one is created when None.
            steps: Steps to run in this call; runs to the end of the schedule when None.
        Returns:
            TrainState: The updated stage-1 state.
        Raises:
            ValueError: If a scene has fewer than sixteen views or the state belongs to another phase.
        """
        small = [scene.name for scene in self.scenes if len(scene.views) < STAGE1_MIN_VIEWS]
        if small:
            raise ValueError(f"Stage 1 needs at least {STAGE1_MIN_VIEWS} views per scene; too small: {small}.")
        state = state or self.new_state("stage1")
        return self._run(state, "stage1", steps)

    def train_stage2(
        self,
        state1: Optional[TrainState] = None,
        init: Literal["transfer", "fresh"] = "transfer",
        steps: Optional[int] = None,
    ) -> TrainState:
        """
        Gaussian-splatting training. A stage-1 state is converted by transferring
        its encoder and NeRF heads (or ignored with init="fresh"); a stage-2 state
        is resumed as is.
        Raises:
            ValueError: If transfer is requested without a stage-1 state or the decoder shapes differ.
        """
        if state1 is not None and state1.phase == "stage2":
            return self._run(state1, "stage2", steps)
        if init == "fresh":
            state = self.new_state("stage2")
        else:
            if state1 is None or state1.phase != "stage1":
                raise ValueError("Transfer initialization needs a stage-1 state.")
            state = self.new_state("stage2", model=self.transfer_model(state1.model))
            state.rng = state1.rng
        logger.info(f"Stage 2 initialized with init='{init}'.")
        return self._run(state, "stage2", steps)

    def transfer_model(self, pretrained: GaussianReconstructor) -> GaussianReconstructor:
        """A stage-2 model with the pretrained encoder and trunk/color/opacity decoder weights."""
        torch.manual_seed(self.settings.SEED)
        model = GaussianReconstructor(
            pretrained.encoder_cfg, pretrained.decoder_cfg, pretrained.activation_cfg, pretrained.render_cfg
        )
        model.encoder.load_state_dict(pretrained.encoder.state_dict())
        model.decoder = transfer_nerf_heads(pretrained.decoder, model.decoder)
        return model

    def finetune_imperfect(self, state2: TrainState, steps: Optional[int] = None) -> TrainState:
        """
        Robustness fine-tuning on self-rendered imperfect inputs. A stage-2 state
        starts a new fine-tuning schedule; a fine-tuning state is resumed.
        Raises:
            ValueError: If the state is neither a stage-2 nor a fine-tuning state.
        """
        if state2.phase == "finetune":
            return self._run(state2, "finetune", steps)
        if state2.phase != "stage2":
            raise ValueError(f"Fine-tuning starts from a stage-2 state, got '{state2.phase}'.")
        state = self.new_state("finetune", model=state2.model)
        state.rng = state2.rng
        return self._run(state, "finetune", steps)

    def resume(self, state: TrainState, steps: Optional[int] = None) -> TrainState:
        """Continues a restored state in its own phase."""
        handlers = {"stage1": self.train_stage1, "stage2": self.train_stage2, "finetune": self.finetune_imperfect}
        return handlers[state.phase](state, steps=steps)

    # --- Step loop ---

    def _run(self, state: TrainState, phase: TrainingPhase, steps: Optional[int]) -> TrainState:
        if state.phase != phase:
            raise ValueError(f"Cannot run phase '{phase}' on a '{state.phase}' state.")
        self._reset_summary()
        self.summary["phase"] = phase
        end = state.optim_cfg.total_steps if steps is None else min(state.step + steps, state.optim_cfg.total_steps)
        metrics = get_metrics_logger(self._metrics_path(), self.run_name) if self.output_dir is not None else None
        logger.info(f"Starting {phase} at step {state.step}, running to step {end}.")
        state.model.train()
        try:
            while state.step < end:
                record = self._step(state, phase)
                if metrics is not None:
                    metrics.info(" ".join(f"{key}={_format(value)}" for key, value in record.items()))
                state.step += 1
                self.summary["steps_run"] += 1
                if self.output_dir is not None and state.step % self.settings.CHECKPOINT_EVERY == 0:
                    self.save_checkpoint(state)
        finally:
            if metrics is not None:
                close_metrics_logger(metrics)
            self._log_summary()
        return state

    def _step(self, state: TrainState, phase: TrainingPhase) -> Dict[str, object]:
        lr = lr_at(state.step, state.optim_cfg)
        set_lr(state.optimizer, lr)
        state.optimizer.zero_grad(set_to_none=True)
        batch_terms: List[LossTerms] = []
        view_counts: List[int] = []
        for _ in range(state.optim_cfg.batch_scenes):
            scene = self.scenes[int(state.rng.integers(len(self.scenes)))]
            if phase == "stage1":
                terms, count = self._stage1_scene(state, scene)
            elif phase == "stage2":
                terms, count = self._stage2_scene(state, scene)
            else:
                terms, count = self._finetune_scene(state, scene)
            (terms.total / state.optim_cfg.batch_scenes).backward()
            batch_terms.append(terms)
            view_counts.append(count)

        losses = {key: float(np.mean([t.as_floats()[key] for t in batch_terms])) for key in _LOSS_KEYS}
        record: Dict[str, object] = {"phase": phase, "step": state.step, "lr": lr, "views": max(view_counts)}
        record.update(losses)
        if not np.isfinite(losses["total"]):
            logger.warning(f"Non-finite loss at {phase} step {state.step}; skipping the update.")
            state.optimizer.zero_grad(set_to_none=True)
            self.summary["skipped_steps"] += 1
            record.update(grad_norm=float("nan"), clipped_norm=float("nan"))
            return record
        grad_norm = clip_gradients(state.model, state.optim_cfg.grad_clip)
        clipped = global_grad_norm(state.model.parameters())
        state.optimizer.step()
        record.update(grad_norm=grad_norm, clipped_norm=clipped)
        if np.isnan(self.summary["first_loss"]):
            self.summary["first_loss"] = losses["total"]
        self.summary["last_loss"] = losses["total"]
        self.summary["max_clipped_norm"] = max(self.summary["max_clipped_norm"], clipped)
        return record

    def _draw_view_count(self, state: TrainState, available: int) -> int:
        count = int(state.rng.integers(state.optim_cfg.min_input_views, state.optim_cfg.max_input_views + 1))
        return min(count, available)

    def _supervise(self, state: TrainState, target: PosedView, render_fn) -> LossTerms:
        patch = state.optim_cfg.supervision_patch
        if patch and patch < min(target.camera.width, target.camera.height):
            x0 = int(state.rng.integers(0, target.camera.width - patch + 1))
            y0 = int(state.rng.integers(0, target.camera.height - patch + 1))
            target = target.crop(x0, y0, patch, patch)
        return composite_loss(render_fn(target.camera), target, self.loss_cfg)

    def _mean_terms(self, terms: List[LossTerms]) -> LossTerms:
        return LossTerms(**{key: torch.stack([getattr(t, key) for t in terms]).mean() for key in _LOSS_KEYS})

    def _stage1_scene(self, state: TrainState, scene: SceneData):
        views = scene.views
        count = self._draw_view_count(state, len(views))
        inputs = [views[int(i)] for i in state.rng.choice(len(views), size=count, replace=False)]
        targets = [views[int(i)] for i in state.rng.choice(len(views), size=min(state.optim_cfg.target_views, len(views)), replace=False)]
        tri = state.model.encode(inputs)
        terms = [self._supervise(state, target, lambda cam: state.model.render_nerf(tri, [cam])[0]) for target in targets]
        return self._mean_terms(terms), count

    def _stage2_scene(self, state: TrainState, scene: SceneData):
        views = scene.views
        count = self._draw_view_count(state, len(views))
        inputs = [views[i] for i in sample_views_weighted(views, state.rng, count)]
        targets = [views[i] for i in sample_views_weighted(views, state.rng, state.optim_cfg.target_views)]
        cloud = state.model.reconstruct(inputs)
        terms = [self._supervise(state, target, lambda cam: state.model.render(cloud, [cam])[0]) for target in targets]
        return self._mean_terms(terms), count

    def _finetune_scene(self, state: TrainState, scene: SceneData):
        batch = simulate_imperfect_inputs(
            state.model,
            scene.views,
            state.rng,
            self.settings.noise_config(),
            target_count=state.optim_cfg.target_views,
            target_sampler=sample_views_weighted,
        )
        cloud = state.model.reconstruct(batch.inputs)
        terms = [self._supervise(state, target, lambda cam: state.model.render(cloud, [cam])[0]) for target in batch.targets]
        return self._mean_terms(terms), len(batch.inputs)

    # --- Persistence & reporting ---

    def _metrics_path(self) -> Path:
        return self.output_dir / self.settings.METRICS_LOG_NAME

    def checkpoint_path(self, phase: TrainingPhase) -> Path:
        if self.output_dir is None:
            raise ValueError("No output directory configured for checkpoints.")
        return self.output_dir / f"{phase}.flxr"

    def save_checkpoint(self, state: TrainState) -> Path:
        path = state.save(self.checkpoint_path(state.phase))
        self.summary["checkpoints_written"] += 1
        return path

    def _log_summary(self) -> None:
        """Logs the summary report of the last phase run."""
        report = f"""
        \n-------------------------------------------------
        TRAINING RUN SUMMARY ({self.summary['phase']})
        -------------------------------------------------
        - Steps Run:                  {self.summary['steps_run']}
        - Skipped (non-finite):       {self.summary['skipped_steps']}
        - First Loss:                 {self.summary['first_loss']:.6f}
        - Last Loss:                  {self.summary['last_loss']:.6f}
        - Max Clipped Grad Norm:      {self.summary['max_clipped_norm']:.6f}
        - Checkpoints Written:        {self.summary['checkpoints_written']}
        -------------------------------------------------
        """
        logger.info(report)


def _format(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.8e}"
    return str(value)
