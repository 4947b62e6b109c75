"""The floor-plan-conditioned diffusion policy: network, losses, training loop, checkpoints and inference.

Positions handed to the network live in a per-scene *plan frame*: the floor plan is padded to a square of side
``S`` meters and every coordinate is mapped to ``(p - center) / (S / 2)``, so the whole plan spans ``[-1, 1]``.
Distances are scaled by the same ``S / 2``. Actions are scaled by the largest absolute action component of the
training set.

"""

import csv
import dataclasses
import json
import math
from argparse import ArgumentParser, Namespace
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor, nn
from tqdm import tqdm, trange

from .cache import LRUCache
from .config import PolicyConfig, RunConfig, SimConfig, TrainConfig, derive_seed
from .diffusion import NoiseSchedule, forward_noise, sample, square_cosine_schedule
from .episodes import DatasetError, Episode, load_dataset
from .errors import FlonavError
from .floorgrid import CellState, GridMap, Scene, WorldPoint, load_scenes
from .planner import Action, Pose
from .plugins import Command
from .simulator import AgentState, Observation, raycast

log = getLogger("policy")


class NonFiniteLossError(FlonavError):
    pass


class CheckpointError(FlonavError):
    pass


class TrainingError(FlonavError):
    pass


class Variant(Enum):
    LOC = "loc"
    """the pose comes from an external localizer"""
    NAIVE = "naive"
    """the network estimates the pose itself"""


class PlanFrame(NamedTuple):
    center_x: float
    center_y: float
    half_extent: float

    def normalize_point(self, p: Tuple[float, float]) -> Tuple[float, float]:
        return (p[0] - self.center_x) / self.half_extent, (p[1] - self.center_y) / self.half_extent

    def denormalize_point(self, q: Tuple[float, float]) -> WorldPoint:
        return WorldPoint(q[0] * self.half_extent + self.center_x, q[1] * self.half_extent + self.center_y)

    def encode_pose(self, pose: Pose) -> np.ndarray:
        x, y = self.normalize_point((pose.x, pose.y))
        return np.array([x, y, math.cos(pose.theta), math.sin(pose.theta)], dtype=np.float64)

    def decode_pose(self, encoded: Sequence[float]) -> Pose:
        x, y = self.denormalize_point((float(encoded[0]), float(encoded[1])))
        return Pose(x, y, math.atan2(float(encoded[3]), float(encoded[2])))


def plan_frame(grid: GridMap) -> PlanFrame:
    half = max(grid.width, grid.height) * grid.resolution / 2
    return PlanFrame(grid.offset.x + half, grid.offset.y + half, half)


_PLAN_FEATURES: LRUCache[Tuple[str, int], np.ndarray] = LRUCache(max_size=128)


def plan_features(grid: GridMap, size: int) -> np.ndarray:
    """Free-space fraction of each cell of a ``size x size`` box-filtered copy of the square-padded plan."""
    key = (grid.fingerprint, size)
    cached = _PLAN_FEATURES.get(key, None)
    if cached is None:
        side = max(grid.width, grid.height)
        padded = np.zeros((side, side), dtype=np.uint8)
        padded[: grid.height, : grid.width] = np.where(grid.free_mask, CellState.FREE, CellState.OCCUPIED)
        image = Image.fromarray(padded).resize((size, size), Image.Resampling.BOX)
        cached = np.asarray(image, dtype=np.float64).reshape(-1) / 255.0
        cached.setflags(write=False)
        _PLAN_FEATURES[key] = cached
    return cached


@dataclass(frozen=True)
class ActionNormalizer:
    scale: float

    @staticmethod
    def fit(episodes: Sequence[Episode]) -> "ActionNormalizer":
        largest = max((max(abs(a.dx), abs(a.dy)) for episode in episodes for a in episode.actions), default=0.0)
        return ActionNormalizer(largest if largest > 0 else 1.0)

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        return np.asarray(actions, dtype=np.float64) / self.scale

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        return np.asarray(actions, dtype=np.float64) * self.scale


class SinusoidalStepEmbedding(nn.Module):
    """Sinusoidal embedding of the diffusion step index."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, k: Tensor) -> Tensor:
        half_dim = self.dim // 2
        emb = math.log(10000) / (half_dim - 1)
        emb = torch.exp(torch.arange(half_dim, dtype=torch.float64, device=k.device) * -emb)
        emb = k.to(torch.float64).unsqueeze(-1) * emb.unsqueeze(0)
        return torch.cat((emb.sin(), emb.cos()), dim=-1)


def mlp(inputs: int, hidden: int, outputs: int, activation: Callable[[], nn.Module] = nn.ReLU) -> nn.Sequential:
    return nn.Sequential(nn.Linear(inputs, hidden), activation(), nn.Linear(hidden, outputs))


class DenseResidualBlock(nn.Module):
    """Residual MLP block whose hidden activations are shifted by a projection of the condition."""

    def __init__(self, hidden: int, cond_dim: int):
        super().__init__()
        self.linear1 = nn.Linear(hidden, hidden)
        self.cond_encoder = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, hidden))
        self.linear2 = nn.Linear(hidden, hidden)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        out = F.mish(self.linear1(x)) + self.cond_encoder(cond)
        return x + self.linear2(F.mish(out))


class DenseTrunk(nn.Module):
    def __init__(self, horizon: int, hidden: int, blocks: int, cond_dim: int):
        super().__init__()
        self.horizon = horizon
        self.input = nn.Linear(horizon * 2, hidden)
        self.blocks = nn.ModuleList([DenseResidualBlock(hidden, cond_dim) for _ in range(blocks)])
        self.output = nn.Linear(hidden, horizon * 2)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        h = self.input(x.reshape(x.shape[0], -1))
        for block in self.blocks:
            h = block(h, cond)
        return self.output(F.mish(h)).reshape(x.shape[0], self.horizon, 2)


class Conv1dBlock(nn.Module):
    """Conv1d --> GroupNorm --> Mish"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
            nn.GroupNorm(math.gcd(8, out_channels), out_channels),
            nn.Mish(),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.block(x)


class ConditionalResidualBlock1d(nn.Module):
    """Residual 1D convolution block with FiLM bias modulation by the condition."""

    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.conv1 = Conv1dBlock(channels, channels)
        self.cond_encoder = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, channels))
        self.conv2 = Conv1dBlock(channels, channels)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        out = self.conv1(x) + self.cond_encoder(cond).unsqueeze(-1)
        return self.conv2(out) + x


class ConvTrunk(nn.Module):
    def __init__(self, hidden: int, blocks: int, cond_dim: int):
        super().__init__()
        self.input = nn.Conv1d(2, hidden, 1)
        self.blocks = nn.ModuleList([ConditionalResidualBlock1d(hidden, cond_dim) for _ in range(blocks)])
        self.output = nn.Conv1d(hidden, 2, 1)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        h = self.input(x.transpose(1, 2))
        for block in self.blocks:
            h = block(h, cond)
        return self.output(h).transpose(1, 2)


POSE_DIM = 4
GOAL_DIM = 2


class FloDiffNet(nn.Module):
    """Context encoder, pose and distance heads, and the conditional noise-prediction network."""

    def __init__(self, cfg: PolicyConfig, num_rays: int):
        super().__init__()
        self.cfg = cfg
        self.num_rays = num_rays
        c = cfg.context_dim
        self.observation_encoder = mlp(num_rays, cfg.encoder_hidden, c)
        self.plan_encoder = mlp(cfg.plan_size * cfg.plan_size, cfg.encoder_hidden, c)
        if cfg.positional_encoding:
            self.positions: Optional[nn.Parameter] = nn.Parameter(torch.zeros(cfg.context_length + 2, c))
        else:
            self.positions = None
        layer = nn.TransformerEncoderLayer(
            d_model=c,
            nhead=cfg.n_heads,
            dim_feedforward=cfg.feedforward_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.fusion = nn.TransformerEncoder(
            layer, num_layers=cfg.n_layers, norm=nn.LayerNorm(c), enable_nested_tensor=False
        )
        self.pose_estimator = mlp(c, cfg.head_hidden, POSE_DIM)
        self.distance_estimator = mlp(c + POSE_DIM + GOAL_DIM, cfg.head_hidden, 1)
        self.step_encoder = nn.Sequential(
            SinusoidalStepEmbedding(cfg.step_embed_dim),
            nn.Linear(cfg.step_embed_dim, cfg.step_embed_dim * 2),
            nn.Mish(),
            nn.Linear(cfg.step_embed_dim * 2, cfg.step_embed_dim),
        )
        cond_dim = cfg.step_embed_dim + c + GOAL_DIM + POSE_DIM
        if cfg.trunk == "conv1d":
            self.trunk: nn.Module = ConvTrunk(cfg.trunk_hidden, cfg.trunk_blocks, cond_dim)
        else:
            self.trunk = DenseTrunk(cfg.horizon, cfg.trunk_hidden, cfg.trunk_blocks, cond_dim)
        self.double()

    def encode_context(self, rays: Tensor, plan: Tensor, mask_floorplan: bool = False) -> Tensor:
        """Fuses ``(B, l + 1, R)`` observation rays with ``(B, P * P)`` plan features into ``(B, C)``.

        The context vector is the fused plan token.

        """
        if rays.shape[-1] != self.num_rays or plan.shape[-1] != self.cfg.plan_size ** 2:
            raise ValueError(
                f"expected rays (..., {self.num_rays}) and plan (..., {self.cfg.plan_size ** 2}), "
                f"got {tuple(rays.shape)} and {tuple(plan.shape)}"
            )
        observation_tokens = self.observation_encoder(rays)
        plan_token = self.plan_encoder(plan).unsqueeze(1)
        if mask_floorplan:
            plan_token = torch.zeros_like(plan_token)
        tokens = torch.cat([observation_tokens, plan_token], dim=1)
        if self.positions is not None:
            tokens = tokens + self.positions[-tokens.shape[1] :].unsqueeze(0)
        return self.fusion(tokens)[:, -1]

    def pose_head(self, context: Tensor) -> Tensor:
        """``(x, y, cos, sin)`` with the angle pair on the unit circle."""
        raw = self.pose_estimator(context)
        return torch.cat([raw[:, :2], F.normalize(raw[:, 2:], dim=-1)], dim=-1)

    def distance_head(self, context: Tensor, pose: Tensor, goal: Tensor) -> Tensor:
        return F.softplus(self.distance_estimator(torch.cat([context, pose, goal], dim=-1))).squeeze(-1)

    @staticmethod
    def condition(context: Tensor, goal: Tensor, pose: Tensor) -> Tensor:
        return torch.cat([context, goal, pose], dim=-1)

    def denoise(self, noisy: Tensor, k: Union[int, Tensor], condition: Tensor) -> Tensor:
        if not isinstance(k, Tensor):
            k = torch.full((noisy.shape[0],), int(k), dtype=torch.long)
        cond = torch.cat([self.step_encoder(k), condition], dim=-1)
        return self.trunk(noisy, cond)


class TrainingBatch(NamedTuple):
    rays: Tensor
    """``(B, l + 1, R)``"""
    plan: Tensor
    """``(B, P * P)``"""
    goal: Tensor
    """``(B, 2)`` in the plan frame"""
    pose: Tensor
    """``(B, 4)``: plan-frame position, cosine and sine of the heading"""
    actions: Tensor
    """``(B, H_p, 2)`` normalized"""
    distance: Tensor
    """``(B,)`` remaining path length in plan-frame units"""

    @property
    def batch_size(self) -> int:
        return int(self.rays.shape[0])

    def slice(self, start: int, stop: int) -> "TrainingBatch":
        return TrainingBatch(*(field[start:stop] for field in self))


class Noise(NamedTuple):
    steps: Tensor
    """``(B,)`` diffusion steps in ``[1, K]``"""
    eps: Tensor

    def slice(self, start: int, stop: int) -> "Noise":
        return Noise(self.steps[start:stop], self.eps[start:stop])


def draw_noise(batch: TrainingBatch, sched: NoiseSchedule, generator: torch.Generator) -> Noise:
    steps = torch.randint(1, sched.steps + 1, (batch.batch_size,), generator=generator)
    eps = torch.randn(tuple(batch.actions.shape), generator=generator, dtype=torch.float64)
    return Noise(steps, eps)


def composite_loss(
    model: FloDiffNet,
    batch: TrainingBatch,
    sched: NoiseSchedule,
    noise: Noise,
    distance_weight: float,
    pose_weight: float,
    pose_input: Optional[Tensor],
    mask_floorplan: bool = False,
) -> Tensor:
    """Noise-prediction MSE plus weighted distance and pose regression terms.

    With ``pose_input=None`` the network conditions on its own pose estimate.

    """
    context = model.encode_context(batch.rays, batch.plan, mask_floorplan)
    pose_hat = model.pose_head(context) if pose_input is None or pose_weight != 0 else None
    pose = pose_input if pose_input is not None else pose_hat
    assert pose is not None
    noisy = forward_noise(batch.actions, noise.steps, noise.eps, sched)
    eps_hat = model.denoise(noisy, noise.steps, model.condition(context, batch.goal, pose))
    loss = F.mse_loss(eps_hat, noise.eps)
    if distance_weight != 0:
        loss = loss + distance_weight * F.mse_loss(model.distance_head(context, pose, batch.goal), batch.distance)
    if pose_weight != 0:
        assert pose_hat is not None
        loss = loss + pose_weight * F.mse_loss(pose_hat, batch.pose)
    return loss


def loss_naive(
    model: FloDiffNet,
    batch: TrainingBatch,
    sched: NoiseSchedule,
    noise: Noise,
    distance_weight: float = 0.001,
    pose_weight: float = 0.005,
    mask_floorplan: bool = False,
) -> Tensor:
    return composite_loss(model, batch, sched, noise, distance_weight, pose_weight, None, mask_floorplan)


def loss_loc(
    model: FloDiffNet,
    batch: TrainingBatch,
    sched: NoiseSchedule,
    noise: Noise,
    distance_weight: float = 0.001,
    mask_floorplan: bool = False,
) -> Tensor:
    return composite_loss(model, batch, sched, noise, distance_weight, 0.0, batch.pose, mask_floorplan)


def grad(loss_fn: Callable[[nn.Module, TrainingBatch], Tensor], batch: TrainingBatch, model: nn.Module) -> Tensor:
    """Flat gradient of ``loss_fn(model, batch)`` with respect to every parameter, in ``model.parameters()`` order.

    Raises:
        NonFiniteLossError: if the loss is NaN or infinite.

    """
    parameters = list(model.parameters())
    loss = loss_fn(model, batch)
    if not torch.isfinite(loss).all():
        raise NonFiniteLossError(f"loss is {loss.item()}")
    if not loss.requires_grad:
        return torch.zeros(sum(p.numel() for p in parameters), dtype=torch.float64)
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    return torch.cat(
        [(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, parameters)]
    )


@dataclass(frozen=True)
class EpisodeFeatures:
    """Per-pose network inputs of one demonstration, computed once before training."""

    rays: np.ndarray
    plan: np.ndarray
    frame: PlanFrame
    positions: np.ndarray
    orientations: np.ndarray
    actions: np.ndarray
    """normalized"""
    cumulative: np.ndarray
    """path length from the first pose to each pose, in meters"""

    @property
    def num_actions(self) -> int:
        return len(self.actions)


def episode_features(
    episode: Episode, scene: Scene, sim: SimConfig, cfg: PolicyConfig, normalizer: ActionNormalizer
) -> EpisodeFeatures:
    positions = episode.trajectory.positions
    rays = np.stack([raycast(scene.truth_map, pose, sim) for pose in episode.trajectory])
    segment_lengths = np.hypot(*np.diff(positions, axis=0).T)
    return EpisodeFeatures(
        rays=rays,
        plan=plan_features(scene.floor_plan, cfg.plan_size),
        frame=plan_frame(scene.floor_plan),
        positions=positions,
        orientations=episode.trajectory.orientations,
        actions=normalizer.normalize(np.array([[a.dx, a.dy] for a in episode.actions]).reshape(-1, 2)),
        cumulative=np.concatenate([[0.0], np.cumsum(segment_lengths)]),
    )


def history_indices(t: int, context_length: int) -> List[int]:
    """Indices of the ``context_length + 1`` most recent poses; the oldest repeats before the start."""
    return [max(i, 0) for i in range(t - context_length, t + 1)]


def draw_segment(rng: np.random.Generator, num_actions: int, action_horizon: int) -> Tuple[int, int]:
    """A segment start ``t`` and a relabeled goal index at least ``action_horizon`` poses later (or the end)."""
    t = int(rng.integers(0, num_actions))
    lowest = min(t + action_horizon, num_actions)
    return t, int(rng.integers(lowest, num_actions + 1))


Sample = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]
"""``(rays, plan, goal, pose, actions, distance)`` of one training segment"""


def training_sample(features: EpisodeFeatures, t: int, goal_index: int, cfg: PolicyConfig) -> Sample:
    frame = features.frame
    actions = np.zeros((cfg.horizon, 2), dtype=np.float64)
    # zero actions past the end of the episode
    chunk = features.actions[t : t + cfg.horizon]
    actions[: len(chunk)] = chunk
    pose = Pose(float(features.positions[t, 0]), float(features.positions[t, 1]), float(features.orientations[t]))
    goal = frame.normalize_point(tuple(features.positions[goal_index]))
    distance = (features.cumulative[goal_index] - features.cumulative[t]) / frame.half_extent
    return (
        features.rays[history_indices(t, cfg.context_length)],
        features.plan,
        np.array(goal, dtype=np.float64),
        frame.encode_pose(pose),
        actions,
        float(distance),
    )


def collate(samples: Sequence[Sample]) -> TrainingBatch:
    columns = list(zip(*samples))
    return TrainingBatch(*(torch.as_tensor(np.stack(column), dtype=torch.float64) for column in columns))


class LossRow(NamedTuple):
    epoch: int
    step: int
    loss: float


def _partitioned_gradients(
    model: FloDiffNet,
    batch: TrainingBatch,
    noise: Noise,
    loss_fn: Callable[[FloDiffNet, TrainingBatch, Noise], Tensor],
    workers: int,
) -> Tuple[float, List[Tensor]]:
    """Batch-mean loss and gradients, computed over ``workers`` fixed contiguous partitions and summed in order."""
    parameters = list(model.parameters())
    bounds = [int(b) for b in np.linspace(0, batch.batch_size, min(workers, batch.batch_size) + 1)]
    partitions = [(lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]

    def work(partition: Tuple[int, int]) -> Tuple[float, Sequence[Optional[Tensor]]]:
        lo, hi = partition
        loss = loss_fn(model, batch.slice(lo, hi), noise.slice(lo, hi)) * ((hi - lo) / batch.batch_size)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"non-finite training loss {loss.item()}")
        return loss.item(), torch.autograd.grad(loss, parameters, allow_unused=True)

    if len(partitions) == 1:
        results = [work(partitions[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(partitions)) as executor:
            results = list(executor.map(work, partitions))
    total = 0.0
    summed = [torch.zeros_like(p) for p in parameters]
    for loss, grads in results:
        total += loss
        for accumulator, g in zip(summed, grads):
            if g is not None:
                accumulator += g
    return total, summed


def build_model(cfg: PolicyConfig, num_rays: int, seed: int) -> FloDiffNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "init"))
        return FloDiffNet(cfg, num_rays)


class PolicyPlan(NamedTuple):
    actions: List[Action]
    pose_estimate: Optional[Pose]
    """the pose the plan was conditioned on"""
    distance_estimate: float
    """predicted remaining path length, in meters"""


class FloDiffPolicy:
    """A trained network together with everything needed to run it in a scene."""

    def __init__(
        self,
        model: FloDiffNet,
        variant: Variant,
        sensor: SimConfig,
        normalizer: ActionNormalizer,
        seed: int = 0,
        train_cfg: TrainConfig = TrainConfig(),
    ):
        if model.num_rays != sensor.num_rays:
            raise CheckpointError(f"network expects {model.num_rays} rays, sensor casts {sensor.num_rays}")
        self.model: FloDiffNet = model
        self.variant: Variant = variant
        self.sensor: SimConfig = sensor
        self.normalizer: ActionNormalizer = normalizer
        self.seed: int = seed
        self.train_cfg: TrainConfig = train_cfg
        self.schedule: NoiseSchedule = square_cosine_schedule(model.cfg.diffusion_steps)

    @property
    def cfg(self) -> PolicyConfig:
        return self.model.cfg

    def observe(self, state: AgentState, scene: Scene, goal: Tuple[float, float], pose: Optional[Pose]) -> Observation:
        """Raycasts with the sensor settings the network was trained with."""
        return Observation(raycast(scene.truth_map, state.pose, self.sensor), WorldPoint(*goal), pose)

    def plan(
        self,
        history: Sequence[Observation],
        floor_plan: GridMap,
        generator: torch.Generator,
        mask_floorplan: bool = False,
    ) -> PolicyPlan:
        """Samples a full ``H_p``-step plan from the newest observation and its predecessors."""
        if not history:
            raise ValueError("planning needs at least one observation")
        latest = history[-1]
        frame = plan_frame(floor_plan)
        indices = history_indices(len(history) - 1, self.cfg.context_length)
        rays = torch.as_tensor(np.stack([history[i].rays for i in indices]), dtype=torch.float64).unsqueeze(0)
        plan = torch.from_numpy(np.array(plan_features(floor_plan, self.cfg.plan_size))).unsqueeze(0)
        goal = torch.as_tensor(frame.normalize_point(latest.goal), dtype=torch.float64).unsqueeze(0)
        with torch.no_grad():
            context = self.model.encode_context(rays, plan, mask_floorplan)
            if self.variant is Variant.LOC:
                if latest.pose is None:
                    raise ValueError("the localized variant needs a pose estimate in its observation")
                pose = torch.as_tensor(frame.encode_pose(latest.pose), dtype=torch.float64).unsqueeze(0)
            else:
                pose = self.model.pose_head(context)
            condition = self.model.condition(context, goal, pose)
            normalized = sample(
                lambda a, k, cond: self.model.denoise(a.unsqueeze(0), k, cond).squeeze(0),
                condition,
                self.schedule,
                generator,
                shape=(self.cfg.horizon, 2),
            )
            distance = float(self.model.distance_head(context, pose, goal)[0]) * frame.half_extent
        actions = self.normalizer.denormalize(normalized.clamp(-1.0, 1.0).numpy())
        return PolicyPlan(
            [Action(float(dx), float(dy)) for dx, dy in actions],
            frame.decode_pose(pose[0].tolist()),
            distance,
        )

    def act(
        self,
        history: Sequence[Observation],
        floor_plan: GridMap,
        generator: torch.Generator,
        mask_floorplan: bool = False,
    ) -> PolicyPlan:
        """The first ``H_a`` actions of a freshly sampled plan."""
        plan = self.plan(history, floor_plan, generator, mask_floorplan)
        return plan._replace(actions=plan.actions[: self.cfg.action_horizon])


CHECKPOINT_FORMAT = "flonav-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(policy: FloDiffPolicy, path: Union[str, Path]):
    """Writes a JSON checkpoint; float64 parameters round-trip exactly."""
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": policy.variant.value,
        "seed": policy.seed,
        "policy": dataclasses.asdict(policy.cfg),
        "sensor": dataclasses.asdict(policy.sensor),
        "train": dataclasses.asdict(policy.train_cfg),
        "normalization": {"action_scale": policy.normalizer.scale},
        "parameters": {
            name: {"shape": list(tensor.shape), "values": tensor.detach().reshape(-1).tolist()}
            for name, tensor in policy.model.state_dict().items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, allow_nan=False)
        f.write("\n")


def load_checkpoint(path: Union[str, Path]) -> FloDiffPolicy:
    """Reads a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: if the file is missing, not a checkpoint, or does not match the network it describes.

    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except ValueError as e:
        raise CheckpointError(f"{path}: not a JSON checkpoint: {e}")
    if document.get("format") != CHECKPOINT_FORMAT or document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    try:
        cfg = PolicyConfig(**document["policy"])
        sensor = SimConfig(**document["sensor"])
        train_cfg = TrainConfig(**document["train"])
        model = FloDiffNet(cfg, sensor.num_rays)
        state = {
            name: torch.tensor(entry["values"], dtype=torch.float64).reshape(entry["shape"])
            for name, entry in document["parameters"].items()
        }
        model.load_state_dict(state, strict=True)
        return FloDiffPolicy(
            model,
            Variant(document["variant"]),
            sensor,
            ActionNormalizer(float(document["normalization"]["action_scale"])),
            int(document["seed"]),
            train_cfg,
        )
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CheckpointError(f"{path}: {e}")


@dataclass
class TrainingResult:
    policy: FloDiffPolicy
    loss_log: List[LossRow]

    def epoch_losses(self) -> List[float]:
        """Mean step loss of every epoch."""
        epochs: Dict[int, List[float]] = {}
        for row in self.loss_log:
            epochs.setdefault(row.epoch, []).append(row.loss)
        return [float(np.mean(epochs[epoch])) for epoch in sorted(epochs)]


def train(episodes: Sequence[Episode], scenes: Dict[str, Scene], config: RunConfig) -> TrainingResult:
    """Fits the policy to demonstrations by imitation.

    Every epoch draws ``segments_per_episode`` random segments from every episode, relabels their goals to a
    later point of the same episode, and takes one optimizer step per batch. Gradients are accumulated over
    ``config.workers`` fixed partitions of each batch; a fixed worker count gives bit-identical results.

    Raises:
        TrainingError: if there are no episodes or an episode's scene is missing.

    """
    if not episodes:
        raise TrainingError("cannot train on an empty dataset")
    train_cfg = config.train
    cfg = config.policy
    variant = Variant(train_cfg.variant)
    normalizer = ActionNormalizer.fit(episodes)
    features: List[EpisodeFeatures] = []
    for episode in tqdm(episodes, desc="precomputing observations", unit=" episodes", leave=False):
        if episode.scene_id not in scenes:
            raise TrainingError(f"dataset refers to scene {episode.scene_id!r}, which was not loaded")
        features.append(episode_features(episode, scenes[episode.scene_id], config.sim, cfg, normalizer))
    model = build_model(cfg, config.sim.num_rays, config.seed)
    policy = FloDiffPolicy(model, variant, config.sim, normalizer, config.seed, train_cfg)
    sched = policy.schedule
    optimizer = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)

    def loss_fn(net: FloDiffNet, batch: TrainingBatch, noise: Noise) -> Tensor:
        if variant is Variant.NAIVE:
            return loss_naive(
                net, batch, sched, noise, train_cfg.distance_weight, train_cfg.pose_weight, train_cfg.mask_floorplan
            )
        return loss_loc(net, batch, sched, noise, train_cfg.loc_distance_weight, train_cfg.mask_floorplan)

    loss_log: List[LossRow] = []
    step = 0
    for epoch in trange(train_cfg.epochs, desc="training", unit=" epochs", leave=False):
        rng = np.random.default_rng(derive_seed(config.seed, "segments", epoch))
        draws = [
            (i, *draw_segment(rng, features[i].num_actions, cfg.action_horizon))
            for i in range(len(features))
            for _ in range(train_cfg.segments_per_episode)
        ]
        order = rng.permutation(len(draws))
        for start in range(0, len(order), train_cfg.batch_size):
            chosen = [draws[j] for j in order[start : start + train_cfg.batch_size]]
            batch = collate([training_sample(features[i], t, g, cfg) for i, t, g in chosen])
            generator = torch.Generator().manual_seed(derive_seed(config.seed, "noise", epoch, step))
            noise = draw_noise(batch, sched, generator)
            loss, gradients = _partitioned_gradients(model, batch, noise, loss_fn, config.workers)
            optimizer.zero_grad(set_to_none=False)
            for parameter, gradient in zip(model.parameters(), gradients):
                parameter.grad = gradient
            optimizer.step()
            loss_log.append(LossRow(epoch, step, loss))
            step += 1
        if loss_log:
            log.info(f"epoch {epoch}: mean loss {np.mean([row.loss for row in loss_log if row.epoch == epoch]):.5f}")
    return TrainingResult(policy, loss_log)


def save_loss_log(rows: Sequence[LossRow], path: Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LossRow._fields)
        for row in rows:
            writer.writerow((row.epoch, row.step, repr(row.loss)))


def checkpoint_name(train_cfg: TrainConfig) -> str:
    return f"flodiff-{train_cfg.variant}" + ("-masked" if train_cfg.mask_floorplan else "")


class TrainCommand(Command):
    name = "train"
    help = "train a diffusion policy into OUTPUT/checkpoints/NAME.json"

    def __init_arguments__(self, parser: ArgumentParser):
        parser.add_argument(
            "--dataset", type=Path, default=None, help="dataset JSONL (default: OUTPUT/datasets/episodes.jsonl)"
        )
        parser.add_argument("--scenes", type=Path, default=None, help="scene directory (default: OUTPUT/scenes)")
        parser.add_argument(
            "--name", type=str, default=None, help="checkpoint name (default: flodiff-VARIANT[-masked])"
        )

    def run(self, args: Namespace) -> int:
        config = self.run_config(args)
        dataset = args.dataset if args.dataset is not None else args.output / "datasets" / "episodes.jsonl"
        scenes_dir = args.scenes if args.scenes is not None else args.output / "scenes"
        episodes = load_dataset(dataset)
        if not episodes:
            raise DatasetError(f"{dataset} holds no episodes")
        scenes = {scene.scene_id: scene for scene in load_scenes(scenes_dir)}
        result = train(episodes, scenes, config)
        directory = args.output / "checkpoints"
        directory.mkdir(parents=True, exist_ok=True)
        name = args.name if args.name is not None else checkpoint_name(config.train)
        save_checkpoint(result.policy, directory / f"{name}.json")
        save_loss_log(result.loss_log, directory / f"{name}.loss.csv")
        log.info(f"wrote {directory / f'{name}.json'} after {len(result.loss_log)} optimizer steps")
        return 0
