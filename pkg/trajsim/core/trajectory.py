"""Trajectory types, CSV ingestion, filtering and dataset splitting."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from trajsim.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CSV_HEADER = ("traj_id", "seq", "lon", "lat")
SPLIT_NAMES = ("train", "eval", "test")


class Point(NamedTuple):
    """A single GPS fix in degrees."""

    lon: float
    lat: float


@dataclass(frozen=True)
class BoundingBox:
    """Closed lon/lat rectangle in degrees."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        values = (self.lon_min, self.lon_max, self.lat_min, self.lat_max)
        if not all(math.isfinite(v) for v in values):
            raise ConfigError(f"Bounding box values must be finite, got {values}")
        if not self.lon_min < self.lon_max:
            raise ConfigError(
                f"Degenerate bounding box: lon_min {self.lon_min} >= lon_max {self.lon_max}"
            )
        if not self.lat_min < self.lat_max:
            raise ConfigError(
                f"Degenerate bounding box: lat_min {self.lat_min} >= lat_max {self.lat_max}"
            )

    def contains(self, coords: np.ndarray) -> np.ndarray:
        """Per-point membership mask for an (n, 2) lon/lat array."""
        lon, lat = coords[:, 0], coords[:, 1]
        return (
            (lon >= self.lon_min) & (lon <= self.lon_max)
            & (lat >= self.lat_min) & (lat <= self.lat_max)
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered GPS points of one moving object.

    ``coords`` is a read-only (n, 2) float64 array with columns (lon, lat).
    """

    id: str
    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(coords)):
            bad = int(np.argmax(~np.isfinite(coords).all(axis=1)))
            raise DataError(f"Trajectory {self.id!r}: point {bad} is not finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_points(cls, traj_id: str, points: Iterable[Tuple[float, float]]) -> "Trajectory":
        return cls(traj_id, np.array(list(points), dtype=np.float64).reshape(-1, 2))

    @property
    def points(self) -> List[Point]:
        return [Point(float(lon), float(lat)) for lon, lat in self.coords]

    def __len__(self) -> int:
        return len(self.coords)

    def __repr__(self) -> str:
        return f"Trajectory(id={self.id!r}, n={len(self)})"


@dataclass
class DatasetSplit:
    """Disjoint train / eval / test id lists."""

    train: List[str] = field(default_factory=list)
    eval: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.eval), len(self.test)

    def subset(self, name: str) -> List[str]:
        if name == "all":
            return self.train + self.eval + self.test
        if name not in SPLIT_NAMES:
            raise ConfigError(f"Unknown split {name!r}; expected one of {SPLIT_NAMES + ('all',)}")
        return getattr(self, name)

    def to_dict(self) -> Dict[str, List[str]]:
        return {"train": list(self.train), "eval": list(self.eval), "test": list(self.test)}


def load_trajectories(path: Union[str, Path], format: str = "csv") -> List[Trajectory]:
    """Read trajectories from a ``traj_id,seq,lon,lat`` CSV file.

    Rows are grouped by ``traj_id`` in order of first appearance; points keep
    file order and ``seq`` must count 0, 1, 2, ... within each trajectory.
    """
    if format != "csv":
        raise DataError(f"Unsupported ingestion format {format!r}; only 'csv' is available")
    path = Path(path)
    if not path.exists():
        raise DataError(f"Trajectory file not found: {path}")

    grouped: Dict[str, List[Tuple[float, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{line}: expected 4 fields, got {len(row)}")
            traj_id = row[0].strip()
            try:
                seq = int(row[1])
                lon = float(row[2])
                lat = float(row[3])
            except ValueError as e:
                raise DataError(f"{path}:{line}: malformed row {row!r} ({e})") from None
            if not (math.isfinite(lon) and math.isfinite(lat)):
                raise DataError(f"{path}:{line}: non-finite coordinate in row {row!r}")

            points = grouped.setdefault(traj_id, [])
            if seq < len(points):
                raise DataError(f"{path}:{line}: duplicate point ({traj_id}, {seq})")
            if seq != len(points):
                raise DataError(
                    f"{path}:{line}: trajectory {traj_id!r} expected seq {len(points)}, got {seq}"
                )
            points.append((lon, lat))

    trajs = [Trajectory.from_points(traj_id, pts) for traj_id, pts in grouped.items()]
    logger.debug("Loaded %d trajectories from %s", len(trajs), path)
    return trajs


def write_trajectories(trajs: Sequence[Trajectory], fh) -> int:
    """Write trajectories to an open text handle in the ingestion CSV format.

    Returns the number of point rows written.
    """
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    rows = 0
    for traj in trajs:
        for seq, (lon, lat) in enumerate(traj.coords):
            writer.writerow((traj.id, seq, repr(float(lon)), repr(float(lat))))
            rows += 1
    return rows


def preprocess(
    trajs: Sequence[Trajectory], bbox: BoundingBox, min_len: int = 20, max_len: int = 200
) -> List[Trajectory]:
    """Drop trajectories leaving ``bbox`` or outside ``[min_len, max_len]`` points."""
    if min_len < 2:
        raise ConfigError(f"filter.min_len must be >= 2, got {min_len}")
    if min_len > max_len:
        raise ConfigError(f"filter.min_len ({min_len}) exceeds filter.max_len ({max_len})")

    kept = []
    outside = too_short = too_long = 0
    for traj in trajs:
        n = len(traj)
        if n < min_len:
            too_short += 1
        elif n > max_len:
            too_long += 1
        elif not bool(np.all(bbox.contains(traj.coords))):
            outside += 1
        else:
            kept.append(traj)
    logger.info(
        "Preprocess kept %d of %d trajectories (outside bbox: %d, too short: %d, too long: %d)",
        len(kept), len(trajs), outside, too_short, too_long,
    )
    return kept


def split_sizes(count: int, ratio: Sequence[float] = (7, 1, 2)) -> Tuple[int, int, int]:
    """Largest-remainder apportionment of ``count`` items; ties go to the earlier split."""
    total = float(sum(ratio))
    quotas = [count * r / total for r in ratio]
    sizes = [int(math.floor(q)) for q in quotas]
    leftover = count - sum(sizes)
    # stable sort keeps train ahead of eval ahead of test on equal remainders
    order = sorted(range(len(ratio)), key=lambda i: -(quotas[i] - sizes[i]))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def split_dataset(
    ids: Sequence[str], ratio: Sequence[float] = (7, 1, 2), seed: int = 0
) -> DatasetSplit:
    """Shuffle ``ids`` with ``seed`` and cut them into train / eval / test."""
    if len(ids) == 0:
        raise DataError("Cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise DataError("Trajectory ids must be unique to split a dataset")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ConfigError(f"Split ratio must be three non-negative numbers, got {tuple(ratio)}")

    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    n_train, n_eval, _ = split_sizes(len(ids), ratio)
    return DatasetSplit(
        train=shuffled[:n_train],
        eval=shuffled[n_train:n_train + n_eval],
        test=shuffled[n_train + n_eval:],
    )


def resample(traj: Trajectory, n: int, scale: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Resample a trajectory to ``n`` points spaced evenly by arc length.

    ``scale`` multiplies (lon, lat) before measuring arc length, e.g. the
    meters-per-degree factors of a projection; the output stays in degrees.
    """
    if n < 2:
        raise ConfigError(f"Resample length must be >= 2, got {n}")
    coords = traj.coords
    if len(coords) == 0:
        raise DataError(f"Trajectory {traj.id!r} is empty")
    if len(coords) == 1:
        return np.repeat(coords, n, axis=0)

    steps = np.diff(coords, axis=0)
    if scale is not None:
        steps = steps * np.asarray(scale, dtype=np.float64)
    cumulative = np.concatenate(([0.0], np.cumsum(np.sqrt((steps ** 2).sum(axis=1)))))
    if cumulative[-1] == 0.0:
        return np.repeat(coords[:1], n, axis=0)

    targets = np.linspace(0.0, cumulative[-1], n)
    return np.column_stack(
        [np.interp(targets, cumulative, coords[:, 0]), np.interp(targets, cumulative, coords[:, 1])]
    )
