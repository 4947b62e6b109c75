"""Occupancy grids, coordinate transforms, obstacle inflation, and the synthetic scene generator.

Grids are indexed ``cells[row, col]``. Column ``c`` spans world ``x`` in ``[c, c + 1) * resolution + offset.x``
and row ``r`` spans world ``y`` in ``[r, r + 1) * resolution + offset.y``, so row 0 is the southern edge of the
map. Images store row 0 as their top line; renderers flip vertically.

"""

import hashlib
import math
from argparse import Namespace
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum, IntEnum
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from tqdm import tqdm

from .config import GeneratorConfig, RunConfig, derive_seed
from .errors import FlonavError
from .plugins import Command

log = getLogger("floorgrid")


class GridError(FlonavError):
    pass


class OutOfBoundsError(GridError, IndexError):
    pass


class MapFormatError(GridError):
    pass


class GenerationError(GridError):
    pass


class CellState(IntEnum):
    """Raster value of each cell state."""

    OCCUPIED = 0
    UNKNOWN = 127
    FREE = 255


CELL_VALUES = np.array([state.value for state in CellState], dtype=np.uint8)


class WorldPoint(NamedTuple):
    x: float
    y: float


class PixelCoord(NamedTuple):
    col: int
    row: int


class SizeClass(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @property
    def area_range(self) -> Tuple[float, float]:
        """Interior floor area range in square meters."""
        return AREA_RANGES[self]

    @property
    def index(self) -> int:
        return list(SizeClass).index(self)

    @staticmethod
    def parse(name: Union[str, "SizeClass"]) -> "SizeClass":
        if isinstance(name, SizeClass):
            return name
        try:
            return SizeClass(name.strip().lower())
        except ValueError:
            raise GridError(f"unknown size class {name!r}; expected one of small, medium, large")

    def __str__(self):
        return self.value


AREA_RANGES: Dict[SizeClass, Tuple[float, float]] = {
    SizeClass.SMALL: (14.0, 20.0),
    SizeClass.MEDIUM: (20.0, 80.0),
    SizeClass.LARGE: (80.0, 160.0),
}


class GridMap:
    """An immutable occupancy raster with a metric frame.

    Args:
        cells: ``(height, width)`` array of :class:`CellState` values.
        resolution: meters per cell.
        offset: world coordinates of the outer corner of cell ``(0, 0)``.
        scene_id: identifier of the scene this map belongs to.

    """

    def __init__(
        self,
        cells: np.ndarray,
        resolution: float,
        offset: Tuple[float, float] = (0.0, 0.0),
        scene_id: str = "",
    ):
        cells = np.array(cells, dtype=np.uint8, copy=True)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise GridError(f"a grid must be a non-empty 2D raster, got shape {cells.shape}")
        if not np.isin(cells, CELL_VALUES).all():
            bad = sorted(set(np.unique(cells)) - set(CELL_VALUES.tolist()))
            raise GridError(f"grid holds cell values {bad[:5]} outside {{0, 127, 255}}")
        if not (math.isfinite(resolution) and resolution > 0):
            raise GridError(f"resolution must be a positive number, got {resolution!r}")
        cells.setflags(write=False)
        self.cells: np.ndarray = cells
        self.resolution: float = float(resolution)
        self.offset: WorldPoint = WorldPoint(float(offset[0]), float(offset[1]))
        self.scene_id: str = scene_id
        self._fingerprint: Optional[str] = None

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def free_mask(self) -> np.ndarray:
        return self.cells == CellState.FREE

    @property
    def blocked_mask(self) -> np.ndarray:
        """Occupied or Unknown cells; both are obstacles for planning and collision."""
        return self.cells != CellState.FREE

    @property
    def fingerprint(self) -> str:
        """Digest of the raster and its frame."""
        if self._fingerprint is None:
            digest = hashlib.blake2b(digest_size=16)
            digest.update(repr((self.cells.shape, self.resolution, tuple(self.offset))).encode("utf-8"))
            digest.update(self.cells.tobytes())
            self._fingerprint = digest.hexdigest()
        return self._fingerprint

    def in_bounds(self, u: Tuple[int, int]) -> bool:
        col, row = u
        return 0 <= col < self.width and 0 <= row < self.height

    def state(self, u: Tuple[int, int]) -> CellState:
        if not self.in_bounds(u):
            raise OutOfBoundsError(f"pixel {tuple(u)} is outside the {self.width}x{self.height} grid")
        return CellState(int(self.cells[u[1], u[0]]))

    def is_free(self, u: Tuple[int, int]) -> bool:
        return self.in_bounds(u) and self.cells[u[1], u[0]] == CellState.FREE

    def pixel_to_world(self, u: Tuple[int, int]) -> WorldPoint:
        return pixel_to_world(u, self)

    def world_to_pixel(self, p: Tuple[float, float]) -> PixelCoord:
        return world_to_pixel(p, self)

    def with_cells(self, cells: np.ndarray) -> "GridMap":
        """A grid with the same frame and id but different contents."""
        return GridMap(cells, self.resolution, self.offset, self.scene_id)

    def same_frame(self, other: "GridMap") -> bool:
        return (
            self.cells.shape == other.cells.shape
            and self.resolution == other.resolution
            and self.offset == other.offset
        )

    def __eq__(self, other):
        return (
            isinstance(other, GridMap)
            and self.same_frame(other)
            and self.scene_id == other.scene_id
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(scene_id={self.scene_id!r}, width={self.width}, height={self.height}, "
            f"resolution={self.resolution!r}, offset={tuple(self.offset)!r})"
        )


def pixel_to_world(u: Tuple[int, int], grid: GridMap) -> WorldPoint:
    """World coordinates of the center of cell ``u``.

    Raises:
        OutOfBoundsError: if ``u`` is not a cell of ``grid``.

    """
    if not grid.in_bounds(u):
        raise OutOfBoundsError(f"pixel {tuple(u)} is outside the {grid.width}x{grid.height} grid")
    col, row = u
    return WorldPoint(
        (col + 0.5) * grid.resolution + grid.offset.x,
        (row + 0.5) * grid.resolution + grid.offset.y,
    )


def world_to_pixel(p: Tuple[float, float], grid: GridMap) -> PixelCoord:
    """The cell containing world point ``p``; a point on a cell edge belongs to the cell whose lower edge it is.

    Raises:
        OutOfBoundsError: if ``p`` lies outside the grid.

    """
    x, y = p
    col = math.floor((x - grid.offset.x) / grid.resolution)
    row = math.floor((y - grid.offset.y) / grid.resolution)
    u = PixelCoord(col, row)
    if not grid.in_bounds(u):
        raise OutOfBoundsError(f"world point ({x!r}, {y!r}) maps to {tuple(u)}, outside the grid")
    return u


def inflate(grid: GridMap, radius: float) -> GridMap:
    """Dilates every Occupied or Unknown cell by ``radius`` meters.

    A cell comes out Occupied iff some blocked input cell center lies within ``radius`` plus half a cell of its
    own center; every other cell comes out Free.

    """
    if not radius >= 0:
        raise GridError(f"inflation radius must be non-negative, got {radius!r}")
    blocked = grid.blocked_mask
    if not blocked.any():
        return grid.with_cells(np.full(grid.cells.shape, CellState.FREE, dtype=np.uint8))
    # squared center-to-center distances on a grid are integers
    squared = np.rint(ndimage.distance_transform_edt(~blocked) ** 2)
    reach = radius / grid.resolution + 0.5
    occupied = squared <= reach * reach * (1.0 + 1e-12)
    return grid.with_cells(np.where(occupied, CellState.OCCUPIED, CellState.FREE).astype(np.uint8))


def free_components(grid: GridMap) -> Tuple[np.ndarray, int]:
    """Labels the 4-connected components of the free cells (0 marks blocked cells)."""
    labels, count = ndimage.label(grid.free_mask)
    return labels, int(count)


@dataclass(frozen=True)
class Scene:
    """A furnished scene: the abstract floor plan and the map the agent actually moves in."""

    floor_plan: GridMap
    truth_map: GridMap
    size_class: SizeClass
    scene_id: str

    def __post_init__(self):
        if not self.floor_plan.same_frame(self.truth_map):
            raise GridError(f"scene {self.scene_id}: floor plan and truth map frames differ")
        if (self.floor_plan.blocked_mask & self.truth_map.free_mask).any():
            raise GridError(f"scene {self.scene_id}: a wall of the floor plan is free in the truth map")

    @property
    def resolution(self) -> float:
        return self.floor_plan.resolution

    @property
    def furniture_mask(self) -> np.ndarray:
        return self.truth_map.blocked_mask & self.floor_plan.free_mask

    def __eq__(self, other):
        return (
            isinstance(other, Scene)
            and self.scene_id == other.scene_id
            and self.size_class == other.size_class
            and self.floor_plan == other.floor_plan
            and self.truth_map == other.truth_map
        )

    def __hash__(self):
        return hash((self.scene_id, self.floor_plan.fingerprint, self.truth_map.fingerprint))


class Room(NamedTuple):
    """Half-open cell rectangle ``rows [r0, r1) x cols [c0, c1)``."""

    r0: int
    c0: int
    r1: int
    c1: int

    @property
    def rows(self) -> int:
        return self.r1 - self.r0

    @property
    def cols(self) -> int:
        return self.c1 - self.c0

    @property
    def area(self) -> int:
        return self.rows * self.cols


WALL_CELLS = 2
MIN_ROOM_SIDE_M = 2.2
FURNITURE_SIDE_M = (0.4, 1.6)
DOOR_KEEPOUT_M = 0.6
EXTRA_DOOR_PROBABILITY = 0.3
MAX_LAYOUT_ATTEMPTS = 50
SPLITS: Dict[SizeClass, Tuple[int, int]] = {
    SizeClass.SMALL: (0, 1),
    SizeClass.MEDIUM: (1, 3),
    SizeClass.LARGE: (3, 6),
}


def door_width(agent_radius: float, resolution: float) -> int:
    """Door gap in cells: at least four agent diameters."""
    return int(math.ceil(4 * 2 * agent_radius / resolution - 1e-9))


def _split_rooms(rng: np.random.Generator, interior: Room, splits: int, min_side: int) -> List[Room]:
    rooms = [interior]
    for _ in range(splits):
        candidates = [
            i for i, room in enumerate(rooms) if max(room.rows, room.cols) >= 2 * min_side + WALL_CELLS
        ]
        if not candidates:
            break
        i = max(candidates, key=lambda j: (rooms[j].area, -j))
        room = rooms.pop(i)
        if room.rows >= room.cols:
            at = room.r0 + int(rng.integers(min_side, room.rows - min_side - WALL_CELLS + 1))
            halves = [Room(room.r0, room.c0, at, room.c1), Room(at + WALL_CELLS, room.c0, room.r1, room.c1)]
        else:
            at = room.c0 + int(rng.integers(min_side, room.cols - min_side - WALL_CELLS + 1))
            halves = [Room(room.r0, room.c0, room.r1, at), Room(room.r0, at + WALL_CELLS, room.r1, room.c1)]
        rooms[i:i] = halves
    return rooms


def _shared_walls(rooms: Sequence[Room], min_span: int) -> nx.Graph:
    """Room adjacency; each edge carries the wall cells a door could open through."""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(rooms)))
    for i, a in enumerate(rooms):
        for j in range(i + 1, len(rooms)):
            b = rooms[j]
            for lower, upper in ((a, b), (b, a)):
                if lower.r1 + WALL_CELLS == upper.r0:
                    lo, hi = max(lower.c0, upper.c0), min(lower.c1, upper.c1)
                    if hi - lo >= min_span:
                        graph.add_edge(i, j, axis="row", wall=lower.r1, span=(lo, hi))
                elif lower.c1 + WALL_CELLS == upper.c0:
                    lo, hi = max(lower.r0, upper.r0), min(lower.r1, upper.r1)
                    if hi - lo >= min_span:
                        graph.add_edge(i, j, axis="col", wall=lower.c1, span=(lo, hi))
    return graph


def _door(rng: np.random.Generator, edge: Dict, width: int) -> Room:
    lo, hi = edge["span"]
    start = lo + int(rng.integers(0, hi - lo - width + 1))
    if edge["axis"] == "row":
        return Room(edge["wall"], start, edge["wall"] + WALL_CELLS, start + width)
    return Room(start, edge["wall"], start + width, edge["wall"] + WALL_CELLS)


def _layout(
    rng: np.random.Generator, size_class: SizeClass, resolution: float, agent_radius: float
) -> Tuple[np.ndarray, List[Room], List[Room]]:
    lo, hi = size_class.area_range
    min_side = int(math.ceil(MIN_ROOM_SIDE_M / resolution))
    width = door_width(agent_radius, resolution)
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        area = rng.uniform(lo, hi)
        aspect = rng.uniform(1.0, 1.6)
        cols = max(min_side, int(round(math.sqrt(area * aspect) / resolution)))
        rows = max(min_side, int(round(area / (cols * resolution) / resolution)))
        interior_area = rows * cols * resolution * resolution
        if not lo <= interior_area <= hi:
            continue
        if rng.random() < 0.5:
            rows, cols = cols, rows
        interior = Room(WALL_CELLS, WALL_CELLS, WALL_CELLS + rows, WALL_CELLS + cols)
        split_lo, split_hi = SPLITS[size_class]
        rooms = _split_rooms(rng, interior, int(rng.integers(split_lo, split_hi + 1)), min_side)
        adjacency = _shared_walls(rooms, width)
        for a, b in adjacency.edges:
            adjacency.edges[a, b]["weight"] = rng.random()
        if not nx.is_connected(adjacency):
            log.debug(f"discarding a disconnected {size_class} layout with {len(rooms)} rooms")
            continue
        tree = nx.minimum_spanning_tree(adjacency, weight="weight")
        door_edges = sorted(tree.edges)
        for a, b in sorted(adjacency.edges):
            if not tree.has_edge(a, b) and rng.random() < EXTRA_DOOR_PROBABILITY:
                door_edges.append((a, b))
        doors = [_door(rng, adjacency.edges[a, b], width) for a, b in door_edges]
        cells = np.full((rows + 2 * WALL_CELLS, cols + 2 * WALL_CELLS), CellState.OCCUPIED, dtype=np.uint8)
        for room in rooms + doors:
            cells[room.r0 : room.r1, room.c0 : room.c1] = CellState.FREE
        return cells, rooms, doors
    raise GenerationError(f"could not lay out a connected {size_class} scene in {MAX_LAYOUT_ATTEMPTS} attempts")


def _furnish(
    rng: np.random.Generator,
    plan: np.ndarray,
    rooms: Sequence[Room],
    doors: Sequence[Room],
    density: float,
    resolution: float,
    scene_id: str,
) -> np.ndarray:
    truth = plan.copy()
    free_cells = int((plan == CellState.FREE).sum())
    target = int(round(density * free_cells))
    if target == 0:
        return truth
    keepout = np.zeros(plan.shape, dtype=bool)
    margin = int(math.ceil(DOOR_KEEPOUT_M / resolution))
    for door in doors:
        keepout[
            max(door.r0 - margin, 0) : door.r1 + margin,
            max(door.c0 - margin, 0) : door.c1 + margin,
        ] = True
    side_lo = max(1, int(round(FURNITURE_SIDE_M[0] / resolution)))
    side_hi = max(side_lo, int(round(FURNITURE_SIDE_M[1] / resolution)))
    areas = np.array([room.area for room in rooms], dtype=np.float64)
    placed = 0
    max_attempts = 40 * max(1, target // (side_lo * side_lo)) + 200
    for _ in range(max_attempts):
        if placed >= target:
            break
        room = rooms[int(rng.choice(len(rooms), p=areas / areas.sum()))]
        rows = int(rng.integers(side_lo, side_hi + 1))
        cols = int(rng.integers(side_lo, side_hi + 1))
        if rows >= room.rows or cols >= room.cols:
            continue
        r0 = room.r0 + int(rng.integers(0, room.rows - rows + 1))
        c0 = room.c0 + int(rng.integers(0, room.cols - cols + 1))
        footprint = (slice(r0, r0 + rows), slice(c0, c0 + cols))
        if keepout[footprint].any() or (truth[footprint] != CellState.FREE).any():
            continue
        candidate = truth.copy()
        candidate[footprint] = CellState.OCCUPIED
        _, count = ndimage.label(candidate == CellState.FREE)
        if count != 1:
            continue
        truth = candidate
        placed += rows * cols
    if placed < target:
        log.warning(
            f"{scene_id}: placed {placed} of {target} furniture cells "
            f"(density {placed / free_cells:.3f} < {density:.3f})"
        )
    return truth


def synth_scene(
    seed: int,
    size_class: Union[str, SizeClass],
    furniture_density: float,
    resolution: float = 0.1,
    agent_radius: float = 0.18,
    scene_id: Optional[str] = None,
) -> Scene:
    """Generates a connected multi-room scene with furniture.

    The result is a pure function of the arguments.

    Raises:
        GenerationError: if no connected layout is found within the retry limit.

    """
    size_class = SizeClass.parse(size_class)
    if not 0 <= furniture_density < 1:
        raise GenerationError(f"furniture density must lie in [0, 1), got {furniture_density!r}")
    if seed < 0:
        raise GenerationError(f"scene seeds must be non-negative, got {seed}")
    if scene_id is None:
        scene_id = f"synth-{size_class}-{seed}"
    rng = np.random.default_rng([seed, size_class.index])
    plan_cells, rooms, doors = _layout(rng, size_class, resolution, agent_radius)
    truth_cells = _furnish(rng, plan_cells, rooms, doors, furniture_density, resolution, scene_id)
    scene = Scene(
        GridMap(plan_cells, resolution, (0.0, 0.0), scene_id),
        GridMap(truth_cells, resolution, (0.0, 0.0), scene_id),
        size_class,
        scene_id,
    )
    log.debug(f"{scene_id}: {len(rooms)} rooms, {len(doors)} doors, {int(scene.furniture_mask.sum())} furniture cells")
    return scene


MAP_FORMATS = {".png": "PNG", ".pgm": "PPM"}
SIDECAR_KEYS = ("resolution_m", "offset_x_m", "offset_y_m", "width", "height", "scene_id")
OPTIONAL_SIDECAR_KEYS = ("size_class",)


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".meta")


def _image_format(path: Path) -> str:
    try:
        return MAP_FORMATS[path.suffix.lower()]
    except KeyError:
        raise MapFormatError(f"{path}: unsupported map format {path.suffix!r}; expected .png or .pgm")


def save_map(grid: GridMap, path: Union[str, Path], size_class: Optional[SizeClass] = None):
    """Writes ``grid`` as an 8-bit grayscale raster plus a ``.meta`` sidecar next to it."""
    path = Path(path)
    image_format = _image_format(path)
    Image.fromarray(np.ascontiguousarray(grid.cells)).save(path, format=image_format)
    lines = [
        f"resolution_m={grid.resolution!r}",
        f"offset_x_m={grid.offset.x!r}",
        f"offset_y_m={grid.offset.y!r}",
        f"width={grid.width}",
        f"height={grid.height}",
        f"scene_id={grid.scene_id}",
    ]
    if size_class is not None:
        lines.append(f"size_class={size_class}")
    sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sidecar(path: Union[str, Path]) -> Dict[str, str]:
    """Parses the ``key=value`` sidecar of the map at ``path``.

    Raises:
        MapFormatError: if the sidecar is missing, malformed, or lacks a required key.

    """
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise MapFormatError(f"{path}: metadata sidecar {meta_path} does not exist")
    meta: Dict[str, str] = {}
    for line_number, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise MapFormatError(f"{meta_path}:{line_number}: expected key=value, got {line!r}")
        if key not in SIDECAR_KEYS and key not in OPTIONAL_SIDECAR_KEYS:
            raise MapFormatError(f"{meta_path}:{line_number}: unknown key {key!r}")
        meta[key] = value.strip()
    missing = [key for key in SIDECAR_KEYS if key not in meta]
    if missing:
        raise MapFormatError(f"{meta_path}: missing keys {', '.join(missing)}")
    return meta


def load_map(path: Union[str, Path]) -> GridMap:
    """Reads a map written by :func:`save_map`.

    Raises:
        MapFormatError: on a malformed image, a missing or malformed sidecar, or inconsistent dimensions.

    """
    path = Path(path)
    _image_format(path)
    meta = read_sidecar(path)
    try:
        with Image.open(path) as image:
            if image.mode != "L":
                raise MapFormatError(f"{path}: expected an 8-bit grayscale image, got mode {image.mode}")
            cells = np.array(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise MapFormatError(f"{path}: unreadable map image: {e}")
    try:
        width, height = int(meta["width"]), int(meta["height"])
        resolution = float(meta["resolution_m"])
        offset = (float(meta["offset_x_m"]), float(meta["offset_y_m"]))
    except ValueError as e:
        raise MapFormatError(f"{sidecar_path(path)}: {e}")
    if cells.shape != (height, width):
        raise MapFormatError(
            f"{path}: image is {cells.shape[1]}x{cells.shape[0]} but the sidecar says {width}x{height}"
        )
    try:
        return GridMap(cells, resolution, offset, meta["scene_id"])
    except GridError as e:
        raise MapFormatError(f"{path}: {e}")


FLOOR_PLAN_FILE = "floor_plan.png"
TRUTH_MAP_FILE = "truth_map.png"


def save_scene(scene: Scene, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_map(scene.floor_plan, directory / FLOOR_PLAN_FILE, scene.size_class)
    save_map(scene.truth_map, directory / TRUTH_MAP_FILE, scene.size_class)
    return directory


def load_scene(directory: Union[str, Path]) -> Scene:
    directory = Path(directory)
    floor_plan = load_map(directory / FLOOR_PLAN_FILE)
    truth_map = load_map(directory / TRUTH_MAP_FILE)
    if floor_plan.scene_id != truth_map.scene_id:
        raise MapFormatError(
            f"{directory}: floor plan belongs to {floor_plan.scene_id!r}, truth map to {truth_map.scene_id!r}"
        )
    size_class = SizeClass.parse(read_sidecar(directory / FLOOR_PLAN_FILE).get("size_class", "small"))
    return Scene(floor_plan, truth_map, size_class, floor_plan.scene_id)


def load_scenes(root: Union[str, Path], split: str = "all", test_fraction: float = 0.3) -> List[Scene]:
    """Loads every scene directory under ``root`` in name order, optionally restricted to one split.

    Raises:
        MapFormatError: if ``root`` holds no scenes.

    """
    root = Path(root)
    if not root.is_dir():
        raise MapFormatError(f"scene directory {root} does not exist")
    directories = sorted(p for p in root.iterdir() if (p / FLOOR_PLAN_FILE).exists())
    if not directories:
        raise MapFormatError(f"{root} contains no scenes")
    scenes = [load_scene(directory) for directory in directories]
    if split == "all":
        return scenes
    return [scene for scene in scenes if scene_split(scene.scene_id, test_fraction) == split]


def scene_split(scene_id: str, test_fraction: float) -> str:
    """Assigns a scene to ``"train"`` or ``"test"`` by a hash of its id, independent of the run seed."""
    if scene_id == "":
        raise GridError("scenes need an id to be assigned to a split")
    draw = derive_seed(0, "split", scene_id) / float(1 << 63)
    return "test" if draw < test_fraction else "train"


def scene_plan(generator: GeneratorConfig) -> List[SizeClass]:
    """The size class of every scene a generator configuration produces, cycling through its classes."""
    classes = [SizeClass.parse(name) for name in generator.size_classes.split(",") if name.strip()]
    if not classes:
        raise GridError("size_classes names no size class")
    return [classes[i % len(classes)] for i in range(generator.num_scenes)]


def _synth_indexed(job: Tuple[int, SizeClass, RunConfig]) -> Scene:
    index, size_class, config = job
    return synth_scene(
        derive_seed(config.seed, "scene", index),
        size_class,
        config.generator.furniture_density,
        resolution=config.generator.resolution,
        agent_radius=config.sim.agent_radius,
        scene_id=f"scene-{index:03d}-{size_class}",
    )


def synth_scenes(config: RunConfig) -> Iterable[Scene]:
    """Generates ``config.generator.num_scenes`` scenes in index order."""
    jobs = [(i, size_class, config) for i, size_class in enumerate(scene_plan(config.generator))]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            yield from executor.map(_synth_indexed, jobs)
    else:
        for job in jobs:
            yield _synth_indexed(job)


class SynthScenesCommand(Command):
    name = "synth-scenes"
    help = "generate synthetic furnished scenes into OUTPUT/scenes/"

    def run(self, args: Namespace) -> int:
        config = self.run_config(args)
        scenes_dir = args.output / "scenes"
        count = 0
        for scene in tqdm(
            synth_scenes(config),
            desc="synthesizing scenes",
            unit=" scenes",
            leave=False,
            total=config.generator.num_scenes,
        ):
            save_scene(scene, scenes_dir / scene.scene_id)
            count += 1
        log.info(f"wrote {count} scenes to {scenes_dir}")
        return 0
