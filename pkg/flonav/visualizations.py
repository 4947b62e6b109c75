from argparse import ArgumentParser, Namespace
from logging import getLogger
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from .agents import NoisyPlan, StepLog, diagnose_pose_noise
from .errors import FlonavError
from .floorgrid import CellState, Scene, WorldPoint, load_scene
from .planner import Pose
from .plugins import Command
from .policy import load_checkpoint
from .simulator import OrientationMode

log = getLogger("visualizations")

PIXELS_PER_CELL = 4
FURNITURE = (200, 200, 200)
UNKNOWN = (127, 127, 127)
GOAL = (220, 30, 30)
START = (30, 60, 220)
NOISE = (240, 150, 20)
PALETTE = (
    (0, 158, 115),
    (213, 94, 0),
    (204, 121, 167),
    (86, 180, 233),
    (230, 159, 0),
    (0, 114, 178),
    (120, 80, 40),
)
GOAL_RADIUS_M = 0.15
ARROW_LENGTH_M = 0.5


class RenderError(FlonavError):
    pass


class _Canvas:
    def __init__(self, scene: Scene, scale: int):
        grid = scene.floor_plan
        self.scene = scene
        self.scale = scale
        self.pixels_per_meter = scale / grid.resolution
        rgb = np.zeros((grid.height, grid.width, 3), dtype=np.uint8)
        rgb[grid.cells == CellState.FREE] = 255
        rgb[grid.cells == CellState.UNKNOWN] = UNKNOWN
        rgb[scene.furniture_mask] = FURNITURE
        # row 0 of a grid is the lowest y; images grow downwards
        rgb = np.flipud(rgb).repeat(scale, axis=0).repeat(scale, axis=1)
        self.image = Image.fromarray(np.ascontiguousarray(rgb))
        self.draw = ImageDraw.Draw(self.image)

    def to_image(self, p: Tuple[float, float]) -> Tuple[float, float]:
        grid = self.scene.floor_plan
        return (
            (p[0] - grid.offset.x) * self.pixels_per_meter,
            self.image.height - (p[1] - grid.offset.y) * self.pixels_per_meter,
        )

    def polyline(self, points: np.ndarray, color: Tuple[int, int, int], width: int):
        if len(points) >= 2:
            self.draw.line([self.to_image(tuple(p)) for p in points], fill=color, width=width)

    def disk(self, center: Tuple[float, float], radius_m: float, color: Tuple[int, int, int]):
        x, y = self.to_image(center)
        r = max(radius_m * self.pixels_per_meter, 1.0)
        self.draw.ellipse([x - r, y - r, x + r, y + r], fill=color)

    def arrow(self, pose: Pose, color: Tuple[int, int, int]):
        length = ARROW_LENGTH_M * self.pixels_per_meter
        x, y = self.to_image(pose.position)
        # image y points down
        dx, dy = np.cos(pose.theta), -np.sin(pose.theta)
        tip = (x + length * dx, y + length * dy)
        head = 0.35 * length
        left = (tip[0] - head * (dx - 0.6 * dy), tip[1] - head * (dy + 0.6 * dx))
        right = (tip[0] - head * (dx + 0.6 * dy), tip[1] - head * (dy - 0.6 * dx))
        self.draw.line([(x, y), tip], fill=color, width=max(self.scale // 2, 1))
        self.draw.polygon([tip, left, right], fill=color)


def render_trajectory(
    scene: Scene,
    logs: Sequence[StepLog] = (),
    goals: Sequence[Tuple[float, float]] = (),
    start: Optional[Pose] = None,
    noise_plans: Sequence[NoisyPlan] = (),
    scale: int = PIXELS_PER_CELL,
) -> Image.Image:
    """Draws step logs over the floor plan, with the truth map's furniture in light gray.

    Each log gets the next palette color. Goal markers are red disks and the start is a blue arrow; both default
    to the ones recorded in the first log.

    Raises:
        RenderError: if a log was recorded in another scene.

    """
    for step_log in logs:
        if step_log.scene_id != scene.scene_id:
            raise RenderError(f"step log of {step_log.scene_id!r} cannot be drawn over {scene.scene_id!r}")
    if scale < 1:
        raise RenderError(f"the render scale must be at least 1 pixel per cell, got {scale}")
    canvas = _Canvas(scene, scale)
    for plan in noise_plans:
        canvas.polyline(plan.positions, NOISE, 1)
        canvas.disk(plan.estimate.position, GOAL_RADIUS_M / 3, NOISE)
    for i, step_log in enumerate(logs):
        canvas.polyline(step_log.positions(), PALETTE[i % len(PALETTE)], max(scale // 2, 1))
    markers = list(goals) if goals else [step_log.goal for step_log in logs[:1]]
    for goal in markers:
        canvas.disk(goal, GOAL_RADIUS_M, GOAL)
    if start is None and logs:
        start = logs[0].start
    if start is not None:
        canvas.arrow(start, START)
    return canvas.image


def save_render(image: Image.Image, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")


class RenderCommand(Command):
    name = "render"
    help = "draw step logs and localization-noise plans over a scene into OUTPUT/renders/NAME.png"

    def __init_arguments__(self, parser: ArgumentParser):
        parser.add_argument("scene", type=str, help="id of the scene to draw")
        parser.add_argument("step_logs", type=Path, nargs="*", help="step logs written by `flonav eval --step-logs`")
        parser.add_argument("--scenes", type=Path, default=None, help="scene directory (default: OUTPUT/scenes)")
        parser.add_argument("--name", type=str, default=None, help="render name (default: the scene id)")
        parser.add_argument(
            "--noise",
            action="store_true",
            help="also plan from noisy copies of the start pose with a localized policy and draw every plan",
        )
        parser.add_argument(
            "--checkpoint",
            type=Path,
            default=None,
            help="policy for --noise (default: OUTPUT/checkpoints/flodiff-loc.json)",
        )
        parser.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "THETA"), default=None)
        parser.add_argument("--goal", type=float, nargs=2, metavar=("X", "Y"), default=None)
        parser.add_argument("--samples", type=int, default=20, help="noisy poses to plan from (default: 20)")
        parser.add_argument(
            "--orientation",
            choices=[mode.value for mode in OrientationMode],
            default=OrientationMode.KEEP.value,
            help="keep the true heading or redraw it uniformly (default: keep)",
        )

    def run(self, args: Namespace) -> int:
        config = self.run_config(args)
        scenes_dir = args.scenes if args.scenes is not None else args.output / "scenes"
        scene = load_scene(scenes_dir / args.scene)
        logs = [StepLog.load(path) for path in tqdm(args.step_logs, desc="reading step logs", unit=" logs", leave=False)]
        start = Pose(*args.start) if args.start is not None else (logs[0].start if logs else None)
        goal = WorldPoint(*args.goal) if args.goal is not None else (logs[0].goal if logs else None)
        noise_plans: Sequence[NoisyPlan] = ()
        if args.noise:
            if start is None or goal is None:
                raise RenderError("--noise needs a start and a goal, from --start/--goal or a step log")
            checkpoint = args.checkpoint
            if checkpoint is None:
                checkpoint = args.output / "checkpoints" / "flodiff-loc.json"
            noise_plans = diagnose_pose_noise(
                load_checkpoint(checkpoint),
                scene,
                start,
                goal,
                config.benchmark.noise_variance,
                OrientationMode(args.orientation),
                args.samples,
                config.seed,
            )
        image = render_trajectory(scene, logs, [goal] if goal is not None else (), start, noise_plans)
        path = args.output / "renders" / f"{args.name if args.name is not None else scene.scene_id}.png"
        save_render(image, path)
        log.info(f"wrote {path}")
        return 0
