"""
Trainer - Local pre-training, end-to-end recurrent training and per-scene
fine-tuning over one SceneDataset.

STAGES:
    local     encoder, G, J and R learn to render single local volumes
    end2end   every network, supervised on each local volume and each
              intermediate global volume of a sampled key-frame window
    finetune  grid features and R only; prune + subdivide every
              `subdivide_stride` iterations

All randomness (frame choice, ray batches, sample jitter) comes from one
numpy Generator whose state is checkpointed, so a resumed run replays the
uninterrupted loss curve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from config import ArchitectureConfig, TrainConfig
from geometry.camera import CameraView, pixel_rays
from grid.sparse_grid import GridSpec, SparseVoxelGrid, prune, subdivide
from hooks import EvaluationEvent, HookProvider, IterationEvent, PipelineHooks, TopologyEvent
from models import DECODER_PREFIX, RECONSTRUCTION_PREFIXES, build_parameter_store
from neural import AdamState, NonFiniteGradientError, ParameterStore, Tape, adam_step, backward
from reconstruction import FusionState, fuse_sequence, reconstruct_frame
from rendering import RenderSettings, make_density_probe, render_image, render_pixel_batch
from scene import SceneDataset, psnr

from .checkpoint import Checkpoint
from .losses import loss_fuse, loss_local

logger = logging.getLogger(__name__)

GRID_FEATURES = "grid.features"


class TrainingDivergedError(FloatingPointError):
    """The loss or a gradient became NaN or inf."""


@dataclass(frozen=True)
class RayBatch:
    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3)
    colors: torch.Tensor  # (N, 3)


def render_settings(dataset: SceneDataset, config: TrainConfig) -> RenderSettings:
    return RenderSettings(
        near=dataset.near,
        far=dataset.far,
        samples_per_voxel=config.samples_per_voxel,
        background=dataset.background,
        chunk=config.render_chunk,
    )


def draw_rays(
    views: Sequence[CameraView],
    positions: Sequence[int],
    count: int,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float64,
) -> RayBatch:
    """
    Uniform (frame, pixel) pairs from views[positions].

    Rays are grouped by frame in the order the frames were drawn.
    """
    frames = rng.choice(np.asarray(positions), size=count)
    origins, directions, colors = [], [], []
    for position in np.unique(frames):
        view = views[int(position)]
        k = view.intrinsics
        pixels = rng.integers(0, k.width * k.height, size=int((frames == position).sum()))
        o, d = pixel_rays(view, pixels)
        origins.append(o)
        directions.append(d)
        colors.append(view.image.reshape(-1, 3)[pixels])
    return RayBatch(
        origins=np.concatenate(origins),
        directions=np.concatenate(directions),
        colors=torch.as_tensor(np.concatenate(colors), dtype=dtype),
    )


def neighborhood_span(neighbors: Iterable[int]) -> list[int]:
    """Every position between the first and last neighbor (supervision frames)."""
    neighbors = list(neighbors)
    return list(range(min(neighbors), max(neighbors) + 1))


class Trainer:
    """
    One training stage over one dataset.

    Usage:
        trainer = Trainer(dataset, TrainConfig(stage="local", iterations=500), hooks=[LoggingHook()])
        checkpoint = trainer.run()

        # Later, continue where it stopped
        trainer = Trainer.from_checkpoint(dataset, checkpoint, iterations=1000)
        checkpoint = trainer.run()
    """

    def __init__(
        self,
        dataset: SceneDataset,
        config: TrainConfig,
        arch: ArchitectureConfig | None = None,
        params: ParameterStore | None = None,
        grid: SparseVoxelGrid | None = None,
        hooks: list[HookProvider] | None = None,
        dtype: torch.dtype | None = None,
    ):
        keys = dataset.key_frames(config.key_frame_stride)
        if config.stage != "finetune" and len(keys) < config.neighbors:
            raise ValueError(f"dataset has {len(keys)} key frames, fewer than K={config.neighbors}")
        if config.stage == "finetune" and grid is None:
            raise ValueError("finetune needs a reconstructed global grid")

        self.dataset = dataset
        self.config = config
        self.arch = arch or ArchitectureConfig()
        self.params = params or build_parameter_store(self.arch, seed=config.seed, dtype=dtype)
        self.rng = np.random.default_rng(config.seed)
        self.hooks = PipelineHooks.from_providers(hooks)
        self.settings = render_settings(dataset, config)
        self.spec: GridSpec = dataset.grid_spec(config.voxel_size, self.arch.volume_channels)
        self.iteration = 0
        self.last_loss = math.nan

        self.grid: SparseVoxelGrid | None = None
        if grid is not None:
            leaf = grid.features.detach().clone().to(self.params.dtype).requires_grad_(True)
            self.grid = grid.with_features(leaf)

        self.adam = AdamState(self.trainable(), lr=config.lr)

    @classmethod
    def from_checkpoint(
        cls,
        dataset: SceneDataset,
        checkpoint: Checkpoint,
        hooks: list[HookProvider] | None = None,
        **overrides,
    ) -> "Trainer":
        """Restore parameters, optimizer moments, grid, iteration and RNG state."""
        config = checkpoint.train_config.replace(**overrides) if overrides else checkpoint.train_config
        params = ParameterStore.from_state_dict(checkpoint.params, seed=config.seed)
        trainer = cls(dataset, config, checkpoint.arch, params, checkpoint.grid, hooks)
        trainer.adam.load_state_dict(checkpoint.adam)
        trainer.iteration = checkpoint.iteration
        if checkpoint.rng_state:
            trainer.rng.bit_generator.state = checkpoint.rng_state
        return trainer

    # -- parameter groups ---------------------------------------------------

    def trainable(self) -> dict[str, torch.Tensor]:
        stage = self.config.stage
        if stage == "local":
            return self.params.group(*RECONSTRUCTION_PREFIXES, DECODER_PREFIX)
        if stage == "end2end":
            return dict(self.params.items())
        return {GRID_FEATURES: self.grid.features, **self.params.group(DECODER_PREFIX)}

    @property
    def views(self) -> list[CameraView]:
        return self.dataset.train_views

    def key_frames(self) -> list[int]:
        return self.dataset.key_frames(self.config.key_frame_stride)

    # -- steps --------------------------------------------------------------

    def _tape(self) -> Tape:
        tape = Tape()
        for name, tensor in self.adam.params.items():
            tape.watch(name, tensor)
        return tape

    def _apply(self, tape: Tape, loss: torch.Tensor, frame: int | None = None) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"{self.config.stage} iteration {self.iteration}: loss is {value} "
                f"(last finite loss {self.last_loss:.6g}, frame {frame})"
            )
        grads = backward(tape, loss, self.adam.params)
        try:
            adam_step(self.adam, grads)
        except NonFiniteGradientError as e:
            raise TrainingDivergedError(f"{self.config.stage} iteration {self.iteration}: {e}") from e
        self.last_loss = value
        self.hooks.invoke_callbacks(IterationEvent(stage=self.config.stage, iteration=self.iteration, loss=value, frame=frame))
        return value

    def local_step(self) -> float:
        keys = self.key_frames()
        position = keys[int(self.rng.integers(len(keys)))]
        tape = self._tape()
        local = reconstruct_frame(
            self.views,
            position,
            self.params,
            self.arch,
            self.config,
            self.spec,
            self.dataset.bounds,
            tape,
            key_frames=keys,
        )
        batch = draw_rays(self.views, neighborhood_span(local.neighbors), self.config.rays_per_batch, self.rng, self.params.dtype)
        out = render_pixel_batch(batch.origins, batch.directions, local.grid, self.params, self.arch, self.settings, self.rng, tape)
        loss = loss_local(out.color, batch.colors, tape)
        return self._apply(tape, loss, frame=self.views[position].frame_index)

    def end2end_step(self) -> float:
        keys = self.key_frames()
        size = min(self.config.fusion_window, len(keys))
        start = int(self.rng.integers(len(keys) - size + 1))
        window = keys[start : start + size]
        tape = self._tape()
        result = fuse_sequence(
            self.views,
            window,
            self.params,
            self.arch,
            self.config,
            self.spec,
            self.dataset.bounds,
            prune_enabled=self.iteration >= self.config.prune_warmup_iterations,
            tape=tape,
            keep_snapshots=True,
            key_frames=keys,
        )
        terms = []
        for local, snapshot in zip(result.locals, result.snapshots):
            batch = draw_rays(self.views, neighborhood_span(local.neighbors), self.config.rays_per_batch, self.rng, self.params.dtype)
            local_out = render_pixel_batch(batch.origins, batch.directions, local.grid, self.params, self.arch, self.settings, self.rng, tape)
            fused_out = render_pixel_batch(batch.origins, batch.directions, snapshot, self.params, self.arch, self.settings, self.rng, tape)
            terms.append((local_out.color, fused_out.color, batch.colors))
        loss = loss_fuse(terms, tape)
        return self._apply(tape, loss, frame=self.views[window[0]].frame_index)

    def finetune_step(self) -> float:
        tape = self._tape()
        batch = draw_rays(self.views, range(len(self.views)), self.config.rays_per_batch, self.rng, self.params.dtype)
        out = render_pixel_batch(batch.origins, batch.directions, self.grid, self.params, self.arch, self.settings, self.rng, tape)
        loss = loss_local(out.color, batch.colors, tape)
        return self._apply(tape, loss)

    def refine_topology(self) -> None:
        """Prune transparent voxels, split the rest into 8 children, reset their moments."""
        before = len(self.grid)
        pruned = prune(
            self.grid.detach(),
            make_density_probe(self.grid, self.params, self.arch),
            self.config.prune_gamma,
            self.config.prune_samples_per_axis,
        ).grid
        self.hooks.invoke_callbacks(TopologyEvent("prune", self.iteration, before, len(pruned)))
        children = subdivide(pruned)
        leaf = children.features.detach().clone().requires_grad_(True)
        self.grid = children.with_features(leaf)
        self.adam.rebind(GRID_FEATURES, leaf)
        self.hooks.invoke_callbacks(TopologyEvent("subdivide", self.iteration, len(pruned), len(self.grid)))
        logger.info("topology at iteration %d: %d -> %d -> %d voxels", self.iteration, before, len(pruned), len(self.grid))

    def step(self) -> float:
        stage = self.config.stage
        if stage == "local":
            loss = self.local_step()
        elif stage == "end2end":
            loss = self.end2end_step()
        else:
            loss = self.finetune_step()
        self.iteration += 1
        if stage == "finetune":
            if self.iteration % self.config.subdivide_stride == 0:
                self.refine_topology()
            if self.iteration % self.config.eval_every == 0:
                self.evaluate()
        return loss

    def run(self) -> Checkpoint:
        """Step until config.iterations and return the resulting checkpoint."""
        logger.info("%s: iterations %d -> %d", self.config.stage, self.iteration, self.config.iterations)
        while self.iteration < self.config.iterations:
            self.step()
        return self.checkpoint()

    # -- evaluation ---------------------------------------------------------

    def evaluate(self) -> float:
        """Mean PSNR of the fine-tuned grid over held-out views (train views when none are held out)."""
        split = "heldout" if self.dataset.heldout else "train"
        views = self.dataset.heldout_views or self.views
        value = mean_psnr(views, self.grid, self.params, self.arch, self.settings)
        self.hooks.invoke_callbacks(EvaluationEvent(stage=self.config.stage, iteration=self.iteration, psnr=value, split=split))
        return value

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.params.state_dict(),
            train_config=self.config,
            arch=self.arch,
            adam=self.adam.state_dict(),
            grid=None if self.grid is None else self.grid.detach(),
            stage=self.config.stage,
            iteration=self.iteration,
            rng_state=self.rng.bit_generator.state,
        )


# =============================================================================
# EVALUATION HELPERS
# =============================================================================


def mean_psnr(
    views: Sequence[CameraView],
    grid: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    settings: RenderSettings,
) -> float:
    scores = [psnr(render_image(view, grid, params, arch, settings)[0], view.image) for view in views]
    return float(np.mean(scores))


def local_psnr(
    dataset: SceneDataset, params: ParameterStore, arch: ArchitectureConfig, config: TrainConfig, positions: Sequence[int]
) -> list[float]:
    """PSNR of each key-frame position rendered from its own local volume."""
    settings = render_settings(dataset, config)
    keys = dataset.key_frames(config.key_frame_stride)
    spec = dataset.grid_spec(config.voxel_size, arch.volume_channels)
    views = dataset.train_views
    scores = []
    with torch.no_grad():
        for position in positions:
            local = reconstruct_frame(views, position, params, arch, config, spec, dataset.bounds, key_frames=keys)
            scores.append(psnr(render_image(views[position], local.grid, params, arch, settings)[0], views[position].image))
    return scores


def reconstruct_scene(
    dataset: SceneDataset,
    params: ParameterStore,
    arch: ArchitectureConfig,
    config: TrainConfig,
    hooks: list[HookProvider] | None = None,
    keep_snapshots: bool = False,
):
    """Direct inference: fuse every key frame of the train split without gradients."""
    spec = dataset.grid_spec(config.voxel_size, arch.volume_channels)
    keys = dataset.key_frames(config.key_frame_stride)
    with torch.no_grad():
        return fuse_sequence(
            dataset.train_views,
            keys,
            params,
            arch,
            config,
            spec,
            dataset.bounds,
            prune_enabled=True,
            state=FusionState.empty(spec, dtype=params.dtype),
            keep_snapshots=keep_snapshots,
            hooks=PipelineHooks.from_providers(hooks),
            key_frames=keys,
        )


def train_stage_local(
    dataset: SceneDataset,
    config: TrainConfig,
    arch: ArchitectureConfig | None = None,
    hooks: list[HookProvider] | None = None,
) -> Checkpoint:
    return Trainer(dataset, config.replace(stage="local"), arch, hooks=hooks).run()


def train_stage_end2end(
    dataset: SceneDataset,
    config: TrainConfig,
    init: Checkpoint | None = None,
    arch: ArchitectureConfig | None = None,
    hooks: list[HookProvider] | None = None,
) -> Checkpoint:
    """Start from the local stage's parameters; fresh optimizer and RNG."""
    config = config.replace(stage="end2end")
    if init is None:
        logger.warning("end2end training from scratch (no local-stage checkpoint)")
        return Trainer(dataset, config, arch, hooks=hooks).run()
    params = ParameterStore.from_state_dict(init.params, seed=config.seed)
    return Trainer(dataset, config, init.arch, params, hooks=hooks).run()


def finetune(
    dataset: SceneDataset,
    config: TrainConfig,
    init: Checkpoint,
    hooks: list[HookProvider] | None = None,
) -> Checkpoint:
    """
    Optimize the global grid's features and the decoder for one scene.

    Raises:
        ValueError: the checkpoint has no global grid
    """
    if init.grid is None:
        raise ValueError("finetune needs a checkpoint with a reconstructed grid (run reconstruct first)")
    config = config.replace(stage="finetune")
    params = ParameterStore.from_state_dict(init.params, seed=config.seed)
    return Trainer(dataset, config, init.arch, params, init.grid, hooks).run()
