"""World generation: gridded service area, clustered users, UAV and RIS placement."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1

VIDEO, DATA, AUDIO = 1, 2, 3
SERVICE_CLASSES = (VIDEO, DATA, AUDIO)
SERVICE_NAMES = {VIDEO: "video", DATA: "data", AUDIO: "audio"}

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioError(ValueError):
    """Invalid scenario configuration or scenario file."""


class OutOfBoundsError(ScenarioError):
    """A position lies outside the service area."""


@dataclass(frozen=True)
class AreaGrid:
    width_m: float
    height_m: float
    cell_size_m: float

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0):
            raise ScenarioError(f"area must have positive extent, got {self.width_m} x {self.height_m}")
        if not self.cell_size_m > 0:
            raise ScenarioError(f"cell size must be positive, got {self.cell_size_m}")
        if self.cell_size_m > min(self.width_m, self.height_m):
            raise ScenarioError("cell size exceeds the smaller area dimension")

    @property
    def cols(self) -> int:
        return math.ceil(self.width_m / self.cell_size_m)

    @property
    def rows(self) -> int:
        return math.ceil(self.height_m / self.cell_size_m)

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m

    def cell_of(self, position) -> int:
        """Row-major cell index of an (x, y) position."""
        x, y = float(position[0]), float(position[1])
        if not self.contains(x, y):
            raise OutOfBoundsError(f"position ({x}, {y}) outside {self.width_m} x {self.height_m} area")
        col = min(int(x // self.cell_size_m), self.cols - 1)
        row = min(int(y // self.cell_size_m), self.rows - 1)
        return row * self.cols + col

    def cell_center(self, index: int) -> tuple[float, float]:
        if not 0 <= index < self.n_cells:
            raise OutOfBoundsError(f"cell index {index} outside 0..{self.n_cells - 1}")
        row, col = divmod(index, self.cols)
        # last row/col may be partial when the cell size does not divide the area
        x0, y0 = col * self.cell_size_m, row * self.cell_size_m
        x1 = min(x0 + self.cell_size_m, self.width_m)
        y1 = min(y0 + self.cell_size_m, self.height_m)
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    def col_row(self, index: int) -> tuple[int, int]:
        row, col = divmod(index, self.cols)
        return col, row

    def index(self, col: int, row: int) -> int:
        return row * self.cols + col

    def centers(self) -> np.ndarray:
        """All cell centers as an ``[n_cells, 2]`` array."""
        return np.array([self.cell_center(i) for i in range(self.n_cells)])


@dataclass(frozen=True)
class UserElement:
    id: int
    position: tuple[float, float, float]
    service_class: int


@dataclass(frozen=True)
class UavPose:
    id: int
    position: tuple[float, float, float]
    battery_j: float
    speed_mps: float = 0.0


@dataclass(frozen=True)
class RisDescriptor:
    id: int
    position: tuple[float, float, float]
    element_count: int
    element_spacing_m: float
    phase_bits: int

    def __post_init__(self):
        if self.element_count < 1:
            raise ScenarioError(f"RIS {self.id}: element_count must be >= 1")
        if self.phase_bits < 1:
            raise ScenarioError(f"RIS {self.id}: phase_bits must be >= 1")
        if not self.element_spacing_m > 0:
            raise ScenarioError(f"RIS {self.id}: element spacing must be positive")

    @property
    def levels(self) -> int:
        return 2 ** self.phase_bits


@dataclass(frozen=True)
class ClusterSpec:
    """Power-law cluster layout.

    Cluster ``k`` (1-based rank) receives a share of users proportional to
    ``k ** -exponent``. Centers are drawn uniformly when not given.
    """

    count: int = 4
    exponent: float = 2.0
    std_m: float = 30.0
    centers: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ScenarioError("cluster count must be >= 1")
        if not self.exponent > 1:
            raise ScenarioError("power-law exponent must be > 1")
        if self.std_m < 0:
            raise ScenarioError("cluster spread must be non-negative")
        if self.centers is not None and len(self.centers) != self.count:
            raise ScenarioError(f"{len(self.centers)} cluster centers given for {self.count} clusters")


@dataclass(frozen=True, eq=False)
class ScenarioState:
    area: AreaGrid
    seed: int | None
    ue_positions: np.ndarray  # [N, 3], z == 0
    ue_classes: np.ndarray  # [N], values in {1, 2, 3}
    uavs: tuple[UavPose, ...]
    ris: tuple[RisDescriptor, ...]
    altitude_m: float
    battery_init_j: float = 500e3
    battery_min_j: float = 20e3
    cluster_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        validate_scenario(self)

    @property
    def n_ues(self) -> int:
        return int(self.ue_positions.shape[0])

    @property
    def n_uavs(self) -> int:
        return len(self.uavs)

    @property
    def battery_capacity_j(self) -> float:
        return self.battery_init_j + self.battery_min_j

    def user(self, i: int) -> UserElement:
        x, y, z = (float(v) for v in self.ue_positions[i])
        return UserElement(i, (x, y, z), int(self.ue_classes[i]))

    def users(self) -> list[UserElement]:
        return [self.user(i) for i in range(self.n_ues)]

    def ue_cells(self) -> np.ndarray:
        return np.array([self.area.cell_of(p) for p in self.ue_positions], dtype=np.int64)

    def uav_cells(self) -> tuple[int, ...]:
        return tuple(self.area.cell_of(u.position) for u in self.uavs)

    def with_uav_count(self, count: int, seed: int) -> "ScenarioState":
        return replace(self, uavs=place_uavs(self.area, count, self.altitude_m,
                                             self.battery_capacity_j, np.random.default_rng(seed)))

    def with_ris(self, ris: Sequence[RisDescriptor]) -> "ScenarioState":
        return replace(self, ris=tuple(ris))

    def __eq__(self, other):
        if not isinstance(other, ScenarioState):
            return NotImplemented
        return (scenario_to_dict(self) == scenario_to_dict(other))


def validate_scenario(s: ScenarioState) -> None:
    pos = np.asarray(s.ue_positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ScenarioError(f"ue_positions must be [N, 3], got {pos.shape}")
    cls = np.asarray(s.ue_classes)
    if cls.shape != (pos.shape[0],):
        raise ScenarioError("ue_classes length does not match ue_positions")
    if pos.shape[0] and not np.isin(cls, SERVICE_CLASSES).all():
        raise ScenarioError("service classes must be 1 (video), 2 (data) or 3 (audio)")
    if pos.shape[0]:
        if np.any(pos[:, 2] != 0.0):
            raise ScenarioError("UE z-coordinates must be exactly 0")
        bad = ~((pos[:, 0] >= 0) & (pos[:, 0] <= s.area.width_m)
                & (pos[:, 1] >= 0) & (pos[:, 1] <= s.area.height_m))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise OutOfBoundsError(f"UE {i} at ({pos[i, 0]}, {pos[i, 1]}) lies outside the area")
    if not s.altitude_m > 0:
        raise ScenarioError("UAV altitude must be positive")
    if s.battery_init_j <= 0 or s.battery_min_j < 0:
        raise ScenarioError("battery budget must be positive and reserve non-negative")
    for u in s.uavs:
        x, y, z = u.position
        if not s.area.contains(x, y):
            raise OutOfBoundsError(f"UAV {u.id} at ({x}, {y}) lies outside the area")
        if z != s.altitude_m:
            raise ScenarioError(f"UAV {u.id} altitude {z} differs from configured {s.altitude_m}")
    if s.ris:
        m = {r.element_count for r in s.ris}
        b = {r.phase_bits for r in s.ris}
        if len(m) != 1 or len(b) != 1:
            raise ScenarioError("all RIS must share element_count and phase_bits")


def power_law_counts(n: int, clusters: int, exponent: float) -> np.ndarray:
    """Split ``n`` into cluster counts proportional to ``rank ** -exponent``.

    Largest-remainder rounding, so each count is within one of its exact share.
    """
    weights = np.arange(1, clusters + 1, dtype=np.float64) ** -exponent
    exact = n * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = n - int(counts.sum())
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def _proportional_split(n: int, proportions: Sequence[float]) -> np.ndarray:
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape != (3,) or np.any(p < 0) or p.sum() <= 0:
        raise ScenarioError("class mix must be three non-negative proportions")
    exact = n * p / p.sum()
    counts = np.floor(exact).astype(np.int64)
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[: n - int(counts.sum())]] += 1
    return counts


def place_uavs(area: AreaGrid, count: int, altitude_m: float, battery_j: float,
               rng: np.random.Generator) -> tuple[UavPose, ...]:
    """One UAV per distinct random cell, at the cell center."""
    if count > area.n_cells:
        raise ScenarioError(f"{count} UAVs do not fit in {area.n_cells} cells")
    cells = rng.choice(area.n_cells, size=count, replace=False)
    out = []
    for k, c in enumerate(cells):
        x, y = area.cell_center(int(c))
        out.append(UavPose(k, (x, y, float(altitude_m)), float(battery_j)))
    return tuple(out)


def make_ris(positions: Sequence[Sequence[float]], element_count: int, phase_bits: int,
             element_spacing_m: float | None = None, carrier_hz: float = 1e9) -> tuple[RisDescriptor, ...]:
    if element_spacing_m is None:
        element_spacing_m = SPEED_OF_LIGHT / carrier_hz / 2.0
    return tuple(
        RisDescriptor(k, (float(p[0]), float(p[1]), float(p[2])), int(element_count),
                      float(element_spacing_m), int(phase_bits))
        for k, p in enumerate(positions)
    )


def generate_scenario(
    seed: int,
    area: AreaGrid,
    n_ues: int,
    clusters: ClusterSpec = ClusterSpec(),
    uav_count: int = 2,
    ris: Sequence[RisDescriptor] = (),
    *,
    altitude_m: float = 100.0,
    class_mix: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    battery_init_j: float = 500e3,
    battery_min_j: float = 20e3,
) -> ScenarioState:
    if n_ues <= 0:
        raise ScenarioError("n_ues must be positive")
    rng = np.random.default_rng(seed)
    if clusters.centers is not None:
        centers = np.asarray(clusters.centers, dtype=np.float64)
        for cx, cy in centers:
            if not area.contains(cx, cy):
                raise OutOfBoundsError(f"cluster center ({cx}, {cy}) lies outside the area")
    else:
        centers = np.column_stack([rng.uniform(0, area.width_m, clusters.count),
                                   rng.uniform(0, area.height_m, clusters.count)])
    counts = power_law_counts(n_ues, clusters.count, clusters.exponent)
    xy = []
    ids = []
    for k, (c, n) in enumerate(zip(centers, counts)):
        pts = rng.normal(c, clusters.std_m, size=(int(n), 2))
        xy.append(pts)
        ids.append(np.full(int(n), k, dtype=np.int64))
    xy = np.vstack(xy)
    xy[:, 0] = np.clip(xy[:, 0], 0.0, area.width_m)
    xy[:, 1] = np.clip(xy[:, 1], 0.0, area.height_m)
    positions = np.column_stack([xy, np.zeros(n_ues)])

    per_class = _proportional_split(n_ues, class_mix)
    classes = np.repeat(np.array(SERVICE_CLASSES), per_class)
    rng.shuffle(classes)

    uavs = place_uavs(area, uav_count, altitude_m, battery_init_j + battery_min_j, rng)
    return ScenarioState(area, seed, positions, classes, uavs, tuple(ris), float(altitude_m),
                         float(battery_init_j), float(battery_min_j), np.concatenate(ids))


def scenario_to_dict(s: ScenarioState) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": s.seed,
        "area": {"width_m": s.area.width_m, "height_m": s.area.height_m,
                 "cell_size_m": s.area.cell_size_m},
        "altitude_m": s.altitude_m,
        "battery": {"init_j": s.battery_init_j, "min_j": s.battery_min_j},
        "ues": [
            {"id": i, "x": float(p[0]), "y": float(p[1]), "z": float(p[2]),
             "class": int(c),
             **({"cluster": int(s.cluster_ids[i])} if s.cluster_ids is not None else {})}
            for i, (p, c) in enumerate(zip(s.ue_positions, s.ue_classes))
        ],
        "uavs": [
            {"id": u.id, "x": u.position[0], "y": u.position[1], "z": u.position[2],
             "battery_j": u.battery_j, "speed_mps": u.speed_mps}
            for u in s.uavs
        ],
        "ris": [
            {"id": r.id, "x": r.position[0], "y": r.position[1], "z": r.position[2],
             "elements": r.element_count, "spacing_m": r.element_spacing_m, "bits": r.phase_bits}
            for r in s.ris
        ],
    }


def scenario_from_dict(doc: dict) -> ScenarioState:
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ScenarioError("scenario document has no schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema_version {doc['schema_version']!r} "
                            f"(expected {SCHEMA_VERSION})")
    try:
        a = doc["area"]
        area = AreaGrid(float(a["width_m"]), float(a["height_m"]), float(a["cell_size_m"]))
        ues = doc["ues"]
        positions = np.array([[u["x"], u["y"], u["z"]] for u in ues], dtype=np.float64).reshape(-1, 3)
        classes = np.array([u["class"] for u in ues], dtype=np.int64)
        cluster_ids = None
        if ues and all("cluster" in u for u in ues):
            cluster_ids = np.array([u["cluster"] for u in ues], dtype=np.int64)
        uavs = tuple(UavPose(int(u["id"]), (float(u["x"]), float(u["y"]), float(u["z"])),
                             float(u["battery_j"]), float(u.get("speed_mps", 0.0)))
                     for u in doc["uavs"])
        ris = tuple(RisDescriptor(int(r["id"]), (float(r["x"]), float(r["y"]), float(r["z"])),
                                  int(r["elements"]), float(r["spacing_m"]), int(r["bits"]))
                    for r in doc["ris"])
        battery = doc.get("battery", {})
        return ScenarioState(area, doc.get("seed"), positions, classes, uavs, ris,
                             float(doc["altitude_m"]), float(battery.get("init_j", 500e3)),
                             float(battery.get("min_j", 20e3)), cluster_ids)
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario document: missing or invalid field {exc}") from exc


def save_scenario(s: ScenarioState, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1) + "\n")


def load_scenario(path) -> ScenarioState:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is corrupt or truncated: {exc}") from exc
    return scenario_from_dict(doc)
