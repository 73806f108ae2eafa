"""Top-k similarity search over embeddings and its agreement with heuristic ground truth."""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from trajsim.core.matrix import DistanceMatrix
from trajsim.errors import ConfigError, DataError
from trajsim.utils.output import sibling, write_csv, write_json

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 20)
RECALL_T, RECALL_K = 5, 20
_METRIC_NAME = re.compile(r"^([A-Z]+\d*)@(\d+)$")


@dataclass(frozen=True)
class Ranking:
    """Candidate ids for one query, best first, query excluded."""

    query_id: str
    ids: Tuple[str, ...]
    distances: Optional[Tuple[float, ...]] = None

    def __len__(self) -> int:
        return len(self.ids)

    def top(self, k: int) -> Tuple[str, ...]:
        return self.ids[:k]


def _order(distances: np.ndarray, ids: np.ndarray) -> np.ndarray:
    id_rank = np.argsort(np.argsort(ids, kind="stable"), kind="stable")
    # lexsort uses the last key as primary
    return np.lexsort((id_rank, distances))


def _ranking(query_id: str, distances: np.ndarray, ids: Sequence[str], exclude: Optional[int]) -> Ranking:
    ids = np.asarray(ids, dtype=str)
    keep = np.ones(len(ids), dtype=bool)
    if exclude is not None:
        keep[exclude] = False
    if not keep.any():
        raise DataError(f"No candidates to rank for query {query_id!r}")
    distances, ids = distances[keep], ids[keep]
    order = _order(distances, ids)
    return Ranking(query_id, tuple(ids[order].tolist()), tuple(distances[order].tolist()))


def rank_candidates(
    query_emb: np.ndarray,
    cand_embs: np.ndarray,
    cand_ids: Sequence[str],
    query_id: str = "",
    exclude: Optional[int] = None,
) -> Ranking:
    """Order candidates by Euclidean embedding distance, ties by id."""
    cand_embs = np.asarray(cand_embs, dtype=np.float64)
    if cand_embs.ndim != 2 or len(cand_embs) != len(cand_ids):
        raise DataError(f"Candidate embeddings {cand_embs.shape} do not match {len(cand_ids)} ids")
    if not (np.all(np.isfinite(cand_embs)) and np.all(np.isfinite(query_emb))):
        raise DataError("Embeddings must be finite to rank candidates")
    dist = np.sqrt(((cand_embs - np.asarray(query_emb, dtype=np.float64)) ** 2).sum(axis=1))
    return _ranking(query_id, dist, cand_ids, exclude)


def truth_ranking(matrix: DistanceMatrix, query: int, ids: Sequence[str]) -> Ranking:
    """Ground-truth ranking by ascending heuristic distance, self excluded, ties by id."""
    return _ranking(ids[query], matrix.values[query], ids, query)


def hr_at_k(pred: Ranking, truth: Ranking, k: int) -> float:
    """|top-k(pred) & top-k(truth)| / k."""
    if k < 1:
        raise ConfigError(f"HR@k needs k >= 1, got {k}")
    limit = min(len(pred), len(truth))
    if k > limit:
        raise DataError(f"k={k} exceeds the {limit} ranked candidates")
    return len(set(pred.top(k)) & set(truth.top(k))) / k


def recall_t_at_k(pred: Ranking, truth: Ranking, t: int, k: int) -> float:
    """Share of the truth top-t found in the predicted top-k."""
    if not 1 <= t <= k:
        raise ConfigError(f"Recall needs 1 <= t <= k, got t={t}, k={k}")
    if k > len(pred) or t > len(truth):
        raise DataError(f"t={t}, k={k} exceed ranking lengths {len(truth)}, {len(pred)}")
    return len(set(truth.top(t)) & set(pred.top(k))) / t


def metric_names(n_candidates: int, ks: Sequence[int] = DEFAULT_KS, t5k20: bool = True) -> List[str]:
    """Metrics computable with ``n_candidates`` per query; larger k values are dropped."""
    names = [f"HR@{k}" for k in ks if k <= n_candidates]
    dropped = [k for k in ks if k > n_candidates]
    if t5k20:
        if RECALL_K <= n_candidates:
            names.append(f"R{RECALL_T}@{RECALL_K}")
        else:
            dropped.append(RECALL_K)
    if dropped:
        logger.warning("Only %d candidates per query; skipping k=%s", n_candidates, sorted(set(dropped)))
    return names


def _score(name: str, pred: Ranking, truth: Ranking) -> float:
    kind, k = split_metric_name(name)
    if kind == "HR":
        return hr_at_k(pred, truth, k)
    return recall_t_at_k(pred, truth, int(kind[1:]), k)


def query_metrics(
    embs: np.ndarray,
    ids: Sequence[str],
    truth: DistanceMatrix,
    ks: Sequence[int] = DEFAULT_KS,
    t5k20: bool = True,
) -> Dict[str, np.ndarray]:
    """Per-query metric values, in ``ids`` order."""
    ids = list(ids)
    embs = np.asarray(embs, dtype=np.float64)
    if truth.ids is not None and list(truth.ids) != ids:
        raise DataError("Embedding ids and ground-truth matrix ids differ")
    if truth.n_trajs != len(ids) or len(embs) != len(ids):
        raise DataError(
            f"Ground truth covers {truth.n_trajs} trajectories but {len(embs)} embeddings were given for {len(ids)} ids"
        )
    if len(ids) < 2:
        raise DataError("Retrieval evaluation needs at least two trajectories")

    names = metric_names(len(ids) - 1, ks, t5k20)
    values = {name: np.zeros(len(ids)) for name in names}
    for q in range(len(ids)):
        pred = rank_candidates(embs[q], embs, ids, ids[q], exclude=q)
        gold = truth_ranking(truth, q, ids)
        for name in names:
            values[name][q] = _score(name, pred, gold)
    return values


def evaluate_suite(
    embs: np.ndarray,
    ids: Sequence[str],
    truth: DistanceMatrix,
    ks: Sequence[int] = DEFAULT_KS,
    t5k20: bool = True,
) -> Dict[str, float]:
    """Mean HR@k (and Recall-5@20) over every query of the id set."""
    per_query = query_metrics(embs, ids, truth, ks, t5k20)
    return {name: float(np.sum(v) / len(v)) for name, v in per_query.items()}


def split_metric_name(name: str) -> Tuple[str, int]:
    """Split a metric name such as ``R5@20`` into (``R5``, 20)."""
    match = _METRIC_NAME.match(name)
    if match is None:
        raise DataError(f"Not a metric name: {name!r}")
    return match.group(1), int(match.group(2))


def write_report(
    report: Dict[str, float], path: Union[str, Path], extra: Optional[Dict[str, object]] = None
) -> Tuple[Path, Path]:
    """Write ``<path>.csv`` (metric,k,value rows) and ``<path>.json``."""
    rows = []
    for name, value in report.items():
        kind, k = split_metric_name(name)
        rows.append((kind, k, repr(float(value))))
    csv_path, json_path = sibling(path, ".csv"), sibling(path, ".json")
    write_csv(csv_path, ("metric", "k", "value"), rows)
    write_json(json_path, {"metrics": report, **(extra or {})})
    return csv_path, json_path
