from collections import OrderedDict
from collections.abc import MutableMapping
from typing import Generic, Iterator, Optional, Tuple, TypeVar, Union

from .floorgrid import GridMap, inflate

K = TypeVar("K")
V = TypeVar("V")
A = TypeVar("A")


NO_DEFAULT = object()


class LRUCache(Generic[K, V], MutableMapping):
    """A mapping that evicts its least recently used entry once it holds more than ``max_size`` items."""

    def __init__(self, max_size: Optional[int] = 64):
        self._items: OrderedDict[K, V] = OrderedDict()
        self.max_size: Optional[int] = max_size
        self.hits: int = 0
        self.misses: int = 0

    def get(self, k: K, default: A = NO_DEFAULT) -> Union[V, A]:  # type: ignore
        try:
            return self[k]
        except KeyError:
            if default is NO_DEFAULT:
                raise
            else:
                return default

    def __getitem__(self, k: K) -> V:
        try:
            ret = self._items[k]
        except KeyError:
            self.misses += 1
            raise
        self.hits += 1
        self._items.move_to_end(k, last=True)
        return ret

    def __setitem__(self, k: K, v: V) -> None:
        self._items[k] = v
        self._items.move_to_end(k, last=True)
        while self.max_size is not None and len(self._items) > self.max_size:
            self._items.popitem(last=False)

    def __delitem__(self, k: K) -> None:
        del self._items[k]

    def __contains__(self, k) -> bool:
        return k in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[K]:
        # snapshot: iteration must not observe its own reordering
        yield from list(self._items.keys())

    def clear(self) -> None:
        self._items.clear()
        self.hits = 0
        self.misses = 0


PlanningKey = Tuple[str, str, float]
"""``(scene_id, layer, radius)``; the layer is the fingerprint of the source raster."""

PLANNING_GRIDS: LRUCache[PlanningKey, GridMap] = LRUCache(max_size=64)
"""Process-wide cache of inflated planning grids."""


def planning_grid(grid: GridMap, radius: float) -> GridMap:
    """Returns ``inflate(grid, radius)``, inflating each distinct (map, radius) pair once per process."""
    key: PlanningKey = (grid.scene_id, grid.fingerprint, round(float(radius), 9))
    cached = PLANNING_GRIDS.get(key, None)
    if cached is None:
        cached = inflate(grid, radius)
        PLANNING_GRIDS[key] = cached
    return cached
