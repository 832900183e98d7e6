"""Backbone wrapper, optimizer, checkpoints and the offline / online training loops."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from polyroute.backends import Embedder
from polyroute.config_space import Configuration, ConfigurationSpace, QueryTask, ScoreTensor
from polyroute.errors import ArchitectureError, IncompleteScores, TrainingDiverged
from polyroute.selector.model import (
    DEFAULT_CHANNELS,
    HeadParams,
    init_head,
    mse_dense,
    mse_sparse,
    predict,
    predict_backward,
    selection_mask,
)
from polyroute.selector.select import sample_index, selector_metrics

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Backbone:
    """Frozen text embedder producing task and configuration embeddings."""

    def __init__(self, embedder: Embedder, projection_dim: Optional[int] = None):
        if projection_dim is not None and projection_dim != embedder.dimension:
            raise ArchitectureError(
                f"embedder {embedder.provider_id} has dimension {embedder.dimension}, expected {projection_dim}")
        self.embedder = embedder
        self.e = embedder.dimension

    @property
    def provider_id(self) -> str:
        return self.embedder.provider_id

    def embed_task(self, task: QueryTask) -> np.ndarray:
        return self.embedder.embed_array([task.description()])[0]

    def embed_tasks(self, tasks: Sequence[QueryTask]) -> np.ndarray:
        return self.embedder.embed_array([t.description() for t in tasks])

    def embed_configs(self, space: ConfigurationSpace) -> np.ndarray:
        vecs = self.embedder.embed_array([c.canonical_text() for c in space.enumerate()])
        return vecs.T.reshape((self.e,) + space.shape)


def embed_task(task: QueryTask, backbone: Backbone) -> np.ndarray:
    return backbone.embed_task(task)


@dataclass
class Hyper:
    lr: float = 1e-3
    batch_size: int = 16
    online_batch_size: int = 16
    epochs_offline: int = 100
    epochs_online: int = 10
    temperature: float = 1.0
    seed: int = 0
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    kernel: int = 3
    adapter: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict) -> "Hyper":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    params: HeadParams
    optimizer: Adam
    hyper: Hyper
    rng: np.random.Generator
    epoch: int = 0
    space: Optional[ConfigurationSpace] = None
    backbone_id: Optional[str] = None

    @classmethod
    def fresh(cls, e: int, rank: int = 3, hyper: Hyper = Hyper(), space: Optional[ConfigurationSpace] = None,
              backbone_id: Optional[str] = None) -> "TrainState":
        rng = np.random.default_rng(hyper.seed)
        params = init_head(e, rank, hyper.channels, hyper.kernel, rng, hyper.adapter)
        opt = Adam(hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
        return cls(params, opt, hyper, rng, 0, space, backbone_id)

    # -------------------------------------------------------- checkpoints

    def save(self, path) -> Path:
        """Write an ``.npz`` archive: tensors plus a JSON manifest entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": CHECKPOINT_VERSION,
            "architecture": self.params.manifest(),
            "hyper": asdict(self.hyper),
            "epoch": self.epoch,
            "adam_t": self.optimizer.t,
            "rng_state": self.rng.bit_generator.state,
            "space": self.space.to_json() if self.space else None,
            "backbone_id": self.backbone_id,
        }
        arrays = {f"param/{k}": v for k, v in self.params.arrays().items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.optimizer.v.items()})
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=1))
            zf.writestr("tensors.npz", buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "TrainState":
        with zipfile.ZipFile(Path(path)) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            tensors = np.load(io.BytesIO(zf.read("tensors.npz")))
            arrays = {k: tensors[k] for k in tensors.files}
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ArchitectureError(f"unsupported checkpoint version {manifest.get('version')}")
        params = HeadParams.from_arrays(
            manifest["architecture"], {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
        hyper = Hyper.from_dict(manifest["hyper"])
        opt = Adam(hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
        opt.t = manifest["adam_t"]
        opt.m = {k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")}
        opt.v = {k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")}
        rng = np.random.default_rng()
        rng.bit_generator.state = manifest["rng_state"]
        space = ConfigurationSpace.from_json(manifest["space"]) if manifest.get("space") else None
        return cls(params, opt, hyper, rng, manifest["epoch"], space, manifest.get("backbone_id"))


def backward_and_step(state: TrainState, cache, d_y_hat: np.ndarray) -> TrainState:
    grads = predict_backward(state.params, cache, d_y_hat)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name}")
    state.optimizer.step(state.params.arrays(), grads)
    return state


class _JsonlLog:
    def __init__(self, path):
        self.fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, rec):
        if self.fh:
            self.fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def fit_offline(state: TrainState, task_raw: np.ndarray, config_raw: np.ndarray, targets: np.ndarray,
                applicable: Optional[np.ndarray] = None, epochs: Optional[int] = None,
                log_path=None, checkpoint_dir=None,
                on_epoch: Optional[Callable[[TrainState, float], None]] = None) -> TrainState:
    """Dense-MSE training on pre-embedded tasks; ``targets`` is ``(N, *grid)``."""
    epochs = state.hyper.epochs_offline if epochs is None else epochs
    targets = np.asarray(targets, dtype=float)
    if applicable is None:
        applicable = np.ones(targets.shape, dtype=bool)
    logger = _JsonlLog(log_path)
    try:
        for _ in range(epochs):
            total, count = 0.0, 0
            for idx in _batches(state.rng, len(task_raw), state.hyper.batch_size):
                y_hat, cache = predict(state.params, task_raw[idx], config_raw, keep=True)
                loss, dy = mse_dense(y_hat, targets[idx], applicable[idx])
                backward_and_step(state, cache, dy)
                total += loss * len(idx)
                count += len(idx)
                logger.write({"epoch": state.epoch, "loss": loss, "mode": "offline"})
            state.epoch += 1
            mean_loss = total / max(count, 1)
            log.debug("offline epoch %d loss %.5f", state.epoch, mean_loss)
            if checkpoint_dir is not None:
                state.save(Path(checkpoint_dir) / f"epoch{state.epoch:04d}.ckpt")
            if on_epoch is not None:
                on_epoch(state, mean_loss)
    finally:
        logger.close()
    return state


def fit_online(state: TrainState, task_raw: np.ndarray, config_raw: np.ndarray,
               oracle: Callable[[int, int], float], applicable: Optional[np.ndarray] = None,
               epochs: Optional[int] = None, temperature: Optional[float] = None,
               log_path=None, space: Optional[ConfigurationSpace] = None) -> TrainState:
    """Bandit-style adaptation: sample one configuration per task, observe only its score.

    ``oracle(task_position, linear_index)`` returns the realised score.
    """
    epochs = state.hyper.epochs_online if epochs is None else epochs
    temperature = state.hyper.temperature if temperature is None else temperature
    grid = config_raw.shape[1:]
    if applicable is None:
        applicable = np.ones((len(task_raw),) + grid, dtype=bool)
    logger = _JsonlLog(log_path)
    try:
        for _ in range(epochs):
            for idx in _batches(state.rng, len(task_raw), state.hyper.online_batch_size):
                y_hat, cache = predict(state.params, task_raw[idx], config_raw, keep=True)
                masks = np.zeros_like(y_hat)
                observed = np.zeros(len(idx))
                for j, i in enumerate(idx):
                    sel = sample_index(y_hat[j], temperature, state.rng, applicable[i])
                    observed[j] = oracle(int(i), sel)
                    masks[j] = selection_mask(grid, sel)
                    logger.write({
                        "epoch": state.epoch,
                        "selected_config": space.multi_index(sel).to_dict() if space else sel,
                        "y": float(observed[j]),
                        "mode": "online",
                    })
                loss, dy = mse_sparse(y_hat, masks, observed)
                backward_and_step(state, cache, dy)
                logger.write({"epoch": state.epoch, "loss": loss, "mode": "online"})
            state.epoch += 1
    finally:
        logger.close()
    return state


# ---------------------------------------------------------------- task-level API


def _stack_scores(scores: Sequence[ScoreTensor]) -> tuple[np.ndarray, np.ndarray]:
    for s in scores:
        s.require_dense()
    return np.stack([s.values for s in scores]), np.stack([s.applicable_mask for s in scores])


def train_offline(dataset: Sequence[tuple[QueryTask, ScoreTensor]], backbone: Backbone, space: ConfigurationSpace,
                  epochs: Optional[int] = None, hyper: Hyper = Hyper(), state: Optional[TrainState] = None,
                  log_path=None, checkpoint_dir=None) -> TrainState:
    if not dataset:
        raise IncompleteScores("empty training set")
    tasks = [t for t, _ in dataset]
    targets, applicable = _stack_scores([y for _, y in dataset])
    if targets.shape[1:] != space.shape:
        raise ArchitectureError(f"score shape {targets.shape[1:]} != space shape {space.shape}")
    if state is None:
        state = TrainState.fresh(backbone.e, len(space.shape), hyper, space, backbone.provider_id)
    return fit_offline(state, backbone.embed_tasks(tasks), backbone.embed_configs(space), targets, applicable,
                       epochs, log_path, checkpoint_dir)


def train_online(state: TrainState, tasks: Sequence[QueryTask], env: Callable[[QueryTask, Configuration], float],
                 backbone: Backbone, space: ConfigurationSpace, epochs: Optional[int] = None,
                 temperature: Optional[float] = None, applicable: Optional[np.ndarray] = None,
                 log_path=None) -> TrainState:
    tasks = list(tasks)

    def oracle(i, k):
        return float(env(tasks[i], space.multi_index(k)))

    return fit_online(state, backbone.embed_tasks(tasks), backbone.embed_configs(space), oracle, applicable,
                      epochs, temperature, log_path, space)


def predict_tasks(state: TrainState, tasks: Sequence[QueryTask], backbone: Backbone,
                  space: ConfigurationSpace) -> np.ndarray:
    return predict(state.params, backbone.embed_tasks(tasks), backbone.embed_configs(space))


def evaluate(state: TrainState, testset: Sequence[tuple[QueryTask, ScoreTensor]], backbone: Backbone,
             space: ConfigurationSpace) -> dict[str, float]:
    tasks = [t for t, _ in testset]
    truth, applicable = _stack_scores([y for _, y in testset])
    pred = predict_tasks(state, tasks, backbone, space)
    return selector_metrics(pred, truth, applicable)
