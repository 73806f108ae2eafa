"""All-pairs heuristic distance matrices and their binary file format."""

import logging
import os
import struct
import time
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from trajsim.core.grid import Projection
from trajsim.core.heuristics import METRIC_CODES, METRICS, as_points, fill_row
from trajsim.core.trajectory import Trajectory
from trajsim.errors import DataError, NumericError
from trajsim.utils.output import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b"TSDM"
VERSION = 1
_HEADER = struct.Struct("<4sIBQ")
SYMMETRY_TOLERANCE = 1e-9
_IDS_TAG = "# crc32 "


@dataclass(eq=False)
class DistanceMatrix:
    """Dense symmetric N x N ground-truth distances for one metric."""

    values: np.ndarray
    metric_tag: str
    ids: Optional[List[str]] = None

    @property
    def n_trajs(self) -> int:
        return self.values.shape[0]

    def validate(self, sample: Optional[int] = None, seed: int = 0) -> None:
        """Check shape, finiteness, zero diagonal and (sampled) symmetry."""
        if self.metric_tag not in METRIC_CODES:
            raise DataError(f"Unknown metric tag {self.metric_tag!r}")
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DataError(f"Distance matrix must be square, got shape {v.shape}")
        if self.ids is not None and len(self.ids) != v.shape[0]:
            raise DataError(f"Matrix has {v.shape[0]} rows but {len(self.ids)} ids")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("Distance matrix entries must be finite and non-negative")
        if np.any(np.diagonal(v) != 0.0):
            raise DataError("Distance matrix diagonal must be zero")
        n = v.shape[0]
        if sample is None or n * n <= sample:
            asym = np.abs(v - v.T)
        else:
            rng = np.random.default_rng(seed)
            i, j = rng.integers(n, size=sample), rng.integers(n, size=sample)
            asym = np.abs(v[i, j] - v[j, i])
        if asym.size and float(asym.max()) > SYMMETRY_TOLERANCE:
            raise DataError(f"Distance matrix is not symmetric (max deviation {asym.max():.3g})")

    def submatrix(self, ids: Sequence[str]) -> "DistanceMatrix":
        """Restrict to ``ids`` (in the given order) using the stored id list."""
        if self.ids is None:
            raise DataError("Matrix carries no id list; cannot select a subset by id")
        index = {tid: k for k, tid in enumerate(self.ids)}
        missing = [tid for tid in ids if tid not in index]
        if missing:
            raise DataError(f"{len(missing)} ids are not in the distance matrix, e.g. {missing[0]!r}")
        rows = np.array([index[tid] for tid in ids], dtype=np.int64)
        return DistanceMatrix(self.values[np.ix_(rows, rows)], self.metric_tag, list(ids))


def default_threads() -> int:
    return os.cpu_count() or 1


def build_matrix(
    trajs: Sequence[Trajectory],
    metric_tag: str,
    projection: Optional[Projection] = None,
    threads: Optional[int] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> DistanceMatrix:
    """Compute the upper triangle on a thread pool and mirror it.

    Each work item fills one row slice of the output, so the result does not
    depend on the schedule or on ``threads``. ``progress`` is called from the
    calling thread with the number of pairs finished by each work item.
    """
    if metric_tag not in METRIC_CODES:
        raise DataError(f"Unknown metric {metric_tag!r}; expected one of {METRICS}")
    n = len(trajs)
    if n < 2:
        raise DataError(f"Need at least 2 trajectories to build a distance matrix, got {n}")
    min_points = 2 if metric_tag == "sspd" else 1
    for k, traj in enumerate(trajs):
        if len(traj) < min_points:
            partner = 1 if k == 0 else 0
            raise DataError(
                f"pair ({min(k, partner)}, {max(k, partner)}): trajectory {traj.id!r} has "
                f"{len(traj)} points; {metric_tag} needs at least {min_points}"
            )

    points = [as_points(t, projection) for t in trajs]
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(p) for p in points])
    flat = np.ascontiguousarray(np.vstack(points))
    code = METRIC_CODES[metric_tag]
    values = np.zeros((n, n), dtype=np.float64)

    workers = threads or default_threads()
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fill_row, flat, offsets, i, code, values[i]): i for i in range(n - 1)}
        for future in as_completed(futures):
            i = futures[future]
            future.result()
            if progress is not None:
                progress(n - 1 - i)

    upper = np.triu_indices(n, k=1)
    values[(upper[1], upper[0])] = values[upper]
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise NumericError(f"pair ({i}, {j}) = ({trajs[i].id}, {trajs[j].id}): non-finite distance")

    pairs = n * (n - 1) // 2
    elapsed = max(time.perf_counter() - started, 1e-9)
    logger.info("Built %s matrix: %d pairs in %.2fs (%.0f pairs/s, %d threads)",
                metric_tag, pairs, elapsed, pairs / elapsed, workers)
    return DistanceMatrix(values, metric_tag, [t.id for t in trajs])


def ids_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids")


def save_matrix(matrix: DistanceMatrix, path: Union[str, Path]) -> None:
    """Write ``matrix`` in the TSDM layout, plus an ``.ids`` sidecar when ids are known.

    The sidecar goes first and records the CRC-32 of the matrix bytes, so a sidecar
    left over from another matrix is detected on load.
    """
    matrix.validate()
    values = np.ascontiguousarray(matrix.values, dtype="<f8")
    payload = _HEADER.pack(MAGIC, VERSION, METRIC_CODES[matrix.metric_tag], matrix.n_trajs) + values.tobytes(order="C")
    sidecar = ids_path(path)
    if matrix.ids is not None:
        with atomic_write(sidecar) as f:
            f.write(f"{_IDS_TAG}{zlib.crc32(payload):08x}\n")
            f.write("".join(f"{tid}\n" for tid in matrix.ids))
    elif sidecar.exists():
        sidecar.unlink()
    with atomic_write(path, binary=True) as f:
        f.write(payload)


def _read_ids(sidecar: Path, raw: bytes) -> List[str]:
    lines = sidecar.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_IDS_TAG):
        raise DataError(f"{sidecar}: missing '{_IDS_TAG}' header line")
    stored = lines[0][len(_IDS_TAG):].strip()
    if stored != f"{zlib.crc32(raw):08x}":
        raise DataError(f"{sidecar}: ids were written for a different matrix (checksum {stored})")
    return lines[1:]


def load_matrix(path: Union[str, Path], symmetry_sample: int = 10_000) -> DistanceMatrix:
    """Read a TSDM file, validating magic, size, zero diagonal and sampled symmetry."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Distance matrix file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, tag, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if tag >= len(METRICS):
        raise DataError(f"{path}: unknown metric tag {tag}")
    expected = _HEADER.size + 8 * n * n
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for N={n}, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, n).astype(np.float64)

    sidecar = ids_path(path)
    ids = _read_ids(sidecar, raw) if sidecar.exists() else None
    matrix = DistanceMatrix(values, METRICS[tag], ids)
    matrix.validate(sample=symmetry_sample)
    return matrix


def check_ids(matrix: DistanceMatrix, ids: Sequence[str], source: str = "CSV") -> None:
    """Raise ``DataError`` unless the matrix covers ``ids`` in the same order."""
    if matrix.n_trajs != len(ids):
        raise DataError(f"Matrix has {matrix.n_trajs} trajectories but the {source} has {len(ids)}")
    if matrix.ids is not None and list(matrix.ids) != list(ids):
        first = next(k for k, (a, b) in enumerate(zip(matrix.ids, ids)) if a != b)
        raise DataError(
            f"Matrix id {matrix.ids[first]!r} at row {first} does not match {source} id {ids[first]!r}"
        )
