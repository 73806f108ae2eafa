"""Bridge pretraining and ranking-loss fine-tuning loops with early stopping."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from trajsim.core.grid import GridSpec
from trajsim.core.matrix import DistanceMatrix
from trajsim.core.trajectory import Trajectory, resample
from trajsim.errors import DataError, NumericError
from trajsim.eval.retrieval import evaluate_suite
from trajsim.model.bridge import BridgeSchedule, pretrain_loss
from trajsim.model.features import TrajectoryFeatures, featurize, featurize_points
from trajsim.model.losses import LossWeights, batch_loss, similarity_from_distance
from trajsim.model.sam import SamModel
from trajsim.nn import tensor as T
from trajsim.nn.optim import Adam
from trajsim.nn.tensor import Tensor

logger = logging.getLogger(__name__)

# list losses need two candidates besides the query
MIN_BATCH = 3
EVAL_SEED_OFFSET = 1_000_003


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    components: Dict[str, float] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)

    def row(self) -> Dict[str, float]:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "eval_loss": self.eval_loss,
                **self.components, **self.metrics}


@dataclass
class TrainResult:
    best_epoch: int
    best_eval_loss: float
    history: List[EpochRecord]
    stopped_early: bool = False


EpochCallback = Callable[[EpochRecord], None]


class EarlyStopping:
    """Tracks the best value seen and how many epochs have passed without improving it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass(frozen=True)
class PretrainSettings:
    epochs: int = 20
    patience: int = 5
    batch_size: int = 128
    lr: float = 0.001
    resample_len: int = 64
    t_min: float = 0.01
    t_max: float = 0.99
    seed: int = 0


@dataclass(frozen=True)
class FinetuneSettings:
    epochs: int = 30
    patience: int = 10
    batch_size: int = 128
    lr: float = 0.001
    weights: LossWeights = LossWeights()
    seed: int = 0


def make_batches(count: int, batch_size: int, rng: np.random.Generator, minimum: int = 1) -> List[np.ndarray]:
    """Shuffled index batches; a tail smaller than ``minimum`` joins the previous batch."""
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < minimum:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _check_finite(value: float, stage: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"{stage} loss became non-finite at epoch {epoch}")
    return value


def bridge_pool(trajs: Sequence[Trajectory], grid: GridSpec, n: int) -> List[TrajectoryFeatures]:
    """Arc-length resampled feature pairs, one per trajectory."""
    scale = grid.projection.scale
    return [featurize_points(resample(traj, n, scale=scale), grid) for traj in trajs]


def _pair_indices(count: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    order = rng.permutation(count)
    return [(int(order[i]), int(order[i + 1])) for i in range(0, count - 1, 2)]


def _mean_bridge_loss(model: SamModel, pool, pairs, schedule, rng, settings: PretrainSettings) -> Tensor:
    losses = [
        pretrain_loss(model, pool[a], pool[b], schedule, rng, (settings.t_min, settings.t_max))
        for a, b in pairs
    ]
    return T.mean(T.concat_cols(*(T.reshape(loss, (1,)) for loss in losses)))


def pretrain(
    model: SamModel,
    train: Sequence[Trajectory],
    eval_trajs: Sequence[Trajectory],
    grid: GridSpec,
    schedule: BridgeSchedule,
    settings: PretrainSettings = PretrainSettings(),
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """Fit the encoder to predict pre-encoded bridge means; keeps the best eval-loss parameters.

    Each epoch pairs consecutive trajectories of a fresh permutation of ``train``.
    Eval pairs, times and noise are fixed by the seed so eval losses are comparable.
    """
    if len(train) < 2:
        raise DataError(f"Pretraining needs at least 2 training trajectories, got {len(train)}")
    rng = np.random.default_rng(settings.seed)
    pool = bridge_pool(train, grid, settings.resample_len)
    eval_pool = bridge_pool(eval_trajs, grid, settings.resample_len) if len(eval_trajs) >= 2 else None
    if eval_pool is None:
        logger.warning("Eval split has fewer than 2 trajectories; early stopping follows the training loss")
    eval_pairs = _pair_indices(len(eval_pool), np.random.default_rng(settings.seed + EVAL_SEED_OFFSET)) if eval_pool else []

    optimizer = Adam(lr=settings.lr)
    stopper = EarlyStopping(settings.patience)
    best_state = model.params.state()
    history: List[EpochRecord] = []
    pairs_per_batch = max(1, settings.batch_size // 2)

    for epoch in range(1, settings.epochs + 1):
        pairs = _pair_indices(len(pool), rng)
        total = 0.0
        for start in range(0, len(pairs), pairs_per_batch):
            chunk = pairs[start:start + pairs_per_batch]
            loss = _mean_bridge_loss(model, pool, chunk, schedule, rng, settings)
            model.params.backward(loss)
            optimizer.step(model.params)
            total += loss.item() * len(chunk)
        train_loss = _check_finite(total / len(pairs), "Pretraining", epoch)

        if eval_pool:
            eval_rng = np.random.default_rng(settings.seed + EVAL_SEED_OFFSET)
            eval_loss = _mean_bridge_loss(model.frozen(), eval_pool, eval_pairs, schedule, eval_rng, settings).item()
        else:
            eval_loss = train_loss
        record = EpochRecord(epoch, train_loss, _check_finite(eval_loss, "Pretraining eval", epoch))
        history.append(record)
        if stopper.update(epoch, record.eval_loss):
            best_state = model.params.state()
        logger.debug("pretrain epoch %d: train %.6f eval %.6f", epoch, train_loss, record.eval_loss)
        if on_epoch is not None:
            on_epoch(record)
        if stopper.should_stop:
            logger.info("Early stopping after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break

    model.params.load_state(best_state)
    return TrainResult(stopper.best_epoch, stopper.best, history, stopped_early=stopper.should_stop)


@dataclass
class FinetuneData:
    """Features and ground truth of one split, in matrix order."""

    ids: List[str]
    features: List[TrajectoryFeatures]
    matrix: DistanceMatrix

    def target(self, tau: float) -> np.ndarray:
        return similarity_from_distance(self.matrix.values, tau)


def finetune_data(trajs: Sequence[Trajectory], grid: GridSpec, matrix: DistanceMatrix) -> FinetuneData:
    ids = [t.id for t in trajs]
    return FinetuneData(ids, [featurize(t, grid) for t in trajs], matrix.submatrix(ids))


def _eval_loss(model: SamModel, data: FinetuneData, target: np.ndarray, settings: FinetuneSettings) -> float:
    frozen = model.frozen()
    embs = frozen.embed(data.features)
    batches = [np.arange(i, min(i + settings.batch_size, len(embs))) for i in range(0, len(embs), settings.batch_size)]
    if len(batches) > 1 and len(batches[-1]) < MIN_BATCH:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    total = 0.0
    for idx in batches:
        total += batch_loss(Tensor(embs[idx]), target[np.ix_(idx, idx)], settings.weights).total.item() * len(idx)
    return total / len(embs)


def finetune(
    model: SamModel,
    train: FinetuneData,
    eval_data: Optional[FinetuneData],
    tau: float,
    settings: FinetuneSettings = FinetuneSettings(),
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """Train on batches where every member ranks the other members by target similarity.

    Per batch: encode, compare predicted with target similarities under the
    weighted MSE + ListNet + rank-decay ListNet loss, backpropagate and update.
    The parameters with the lowest eval loss are restored at the end.
    """
    if len(train.ids) < MIN_BATCH:
        raise DataError(f"Fine-tuning needs at least {MIN_BATCH} training trajectories, got {len(train.ids)}")
    rng = np.random.default_rng(settings.seed)
    train_target = train.target(tau)
    use_eval = eval_data is not None and len(eval_data.ids) >= MIN_BATCH
    if not use_eval:
        logger.warning("Eval split has fewer than %d trajectories; early stopping follows the training loss", MIN_BATCH)
    eval_target = eval_data.target(tau) if use_eval else None

    optimizer = Adam(lr=settings.lr)
    stopper = EarlyStopping(settings.patience)
    best_state = model.params.state()
    history: List[EpochRecord] = []

    for epoch in range(1, settings.epochs + 1):
        sums = {"mse": 0.0, "listnet": 0.0, "rd_listnet": 0.0}
        total = 0.0
        for idx in make_batches(len(train.ids), settings.batch_size, rng, minimum=MIN_BATCH):
            embeddings = model.encode_batch([train.features[i] for i in idx])
            loss = batch_loss(embeddings, train_target[np.ix_(idx, idx)], settings.weights)
            model.params.backward(loss.total)
            optimizer.step(model.params)
            total += loss.total.item() * len(idx)
            for name in sums:
                sums[name] += getattr(loss, name).item() * len(idx)
        n = len(train.ids)
        train_loss = _check_finite(total / n, "Fine-tuning", epoch)
        components = {name: value / n for name, value in sums.items()}

        metrics: Dict[str, float] = {}
        if use_eval:
            eval_loss = _check_finite(_eval_loss(model, eval_data, eval_target, settings), "Fine-tuning eval", epoch)
            metrics = evaluate_suite(model.embed(eval_data.features), eval_data.ids, eval_data.matrix)
        else:
            eval_loss = train_loss
        record = EpochRecord(epoch, train_loss, eval_loss, components, metrics)
        history.append(record)
        if stopper.update(epoch, eval_loss):
            best_state = model.params.state()
        logger.debug("finetune epoch %d: train %.6f eval %.6f %s", epoch, train_loss, eval_loss, metrics)
        if on_epoch is not None:
            on_epoch(record)
        if stopper.should_stop:
            logger.info("Early stopping after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break

    model.params.load_state(best_state)
    return TrainResult(stopper.best_epoch, stopper.best, history, stopped_early=stopper.should_stop)
