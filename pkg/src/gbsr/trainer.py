"""Training loop: Adam on the recorded objective, periodic evaluation,
best-checkpoint tracking with patience-based early stopping, and a binary
checkpoint format.

Reproducibility contract: a fixed config seed fully determines parameter
init, batch draws, relaxation draws, and therefore the training log and the
checkpoint bytes.  All randomness flows through one generator in a fixed
order: init first, then per epoch (batch draw, relaxation draw) per batch.
"""

from __future__ import annotations

import ast
import math
import struct
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import backbone
from . import data as data_mod
from . import evaluation, objective
from .backbone import EmbeddingTable, MAX_LAYERS
from .data import Dataset
from .denoiser import DenoiserParams, denoise
from .errors import CheckpointError, ConfigError, NumericError
from .graph import build_adjacency, layout_for
from .ioutil import atomic_write_bytes

INIT_SCALE = 0.01  # std of the Gaussian embedding and MLP init

CHECKPOINT_MAGIC = b"GBSRCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    layers: int = 3
    learning_rate: float = 0.001
    batch_size: int = 2048
    reg_lambda: float = 1e-4
    beta: float = 1.0
    sigma_sq: float = 1.0
    temperature: float = 0.2
    epsilon: float = 0.5
    epochs: int = 100
    eval_every: int = 1
    patience: int = 50
    seed: int = 0
    cutoffs: tuple = (10, 20)
    detach_original: bool = False
    kernel_normalize: bool = True
    validation_ratio: float = 0.0

    def validate(self) -> None:
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if not (1 <= self.layers <= MAX_LAYERS):
            raise ConfigError(f"layers must lie in [1, {MAX_LAYERS}], got {self.layers}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.reg_lambda < 0.0:
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not (self.sigma_sq > 0.0):
            raise ConfigError(f"sigma_sq must be > 0, got {self.sigma_sq}")
        if not (self.temperature > 0.0):
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not self.cutoffs or any((not isinstance(n, int)) or n < 1 for n in self.cutoffs):
            raise ConfigError(f"cutoffs must be positive integers, got {self.cutoffs}")
        if not (0.0 <= self.validation_ratio < 1.0):
            raise ConfigError(f"validation_ratio must lie in [0, 1), got {self.validation_ratio}")

    @property
    def selection_cutoff(self) -> int:
        return 20 if 20 in self.cutoffs else max(self.cutoffs)


class Adam:
    """Per-block moment estimates with bias correction."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(value))
            v = self.v.setdefault(name, np.zeros_like(value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            value -= self.learning_rate * (m / correction1) / (
                np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainState:
    embeddings: EmbeddingTable
    denoiser: DenoiserParams
    adam: Adam
    epoch: int = 0
    best_metric: float = float("-inf")

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            "embeddings": self.embeddings.matrix,
            "layer1_weight": self.denoiser.layer1_weight,
            "layer1_bias": self.denoiser.layer1_bias,
            "layer2_weight": self.denoiser.layer2_weight,
            "layer2_bias": self.denoiser.layer2_bias,
        }


def init(config: TrainConfig, dataset: Dataset, rng: np.random.Generator) -> TrainState:
    config.validate()
    matrix = rng.normal(0.0, INIT_SCALE, size=(dataset.node_count, config.embedding_dim))
    table = EmbeddingTable(matrix, config.layers)
    den = DenoiserParams.init(config.embedding_dim, rng, scale=INIT_SCALE,
                              temperature=config.temperature,
                              observation_bias=config.epsilon)
    return TrainState(table, den, Adam(config.learning_rate))


def train_epoch(state: TrainState, dataset: Dataset, config: TrainConfig,
                rng: np.random.Generator) -> Tuple[TrainState, objective.LossBreakdown]:
    """One pass of ceil(|train| / batch_size) sampled batches; returns the
    state (updated in place) and the batch-averaged loss breakdown."""
    layout = layout_for(dataset)
    n_batches = max(1, math.ceil(dataset.train_pairs.shape[0] / config.batch_size))
    sums = np.zeros(4)  # rec, ib, reg, total
    for b in range(n_batches):
        batch = data_mod.sample_batch_arrays(dataset, config.batch_size, rng)
        deltas = rng.uniform(size=layout.social_count)
        try:
            breakdown, grads = objective.gradients(
                state.embeddings.matrix, state.denoiser, layout, batch, deltas,
                layers=config.layers, beta=config.beta,
                reg_lambda=config.reg_lambda, sigma_sq=config.sigma_sq,
                detach_original=config.detach_original,
                kernel_normalize=config.kernel_normalize)
        except NumericError as err:
            raise NumericError(f"epoch {state.epoch + 1}, batch {b}: {err}") from err
        state.adam.step(state.parameters(), grads)
        sums += (breakdown.rec_loss, breakdown.ib_loss,
                 breakdown.reg_loss, breakdown.total)
    state.epoch += 1
    rec, ib, reg, total = (sums / n_batches).tolist()
    return state, objective.LossBreakdown(rec, ib, reg, total,
                                          config.beta, config.reg_lambda)


def evaluate_state(state: TrainState, dataset: Dataset,
                   config: TrainConfig) -> "evaluation.MetricsReport":
    """Deterministic-mode denoise, forward, rank: the evaluation readout."""
    cmap = denoise(state.denoiser, state.embeddings.matrix, dataset,
                   mode="deterministic")
    adj = build_adjacency(dataset, cmap)
    reps = backbone.forward(state.embeddings, adj)
    return evaluation.evaluate(reps, dataset, config.cutoffs)


def _snapshot(state: TrainState, config: TrainConfig) -> dict:
    adam = state.adam
    return {
        "embeddings": state.embeddings.matrix.copy(),
        "denoiser": DenoiserParams(
            state.denoiser.layer1_weight.copy(), state.denoiser.layer1_bias.copy(),
            state.denoiser.layer2_weight.copy(), state.denoiser.layer2_bias.copy(),
            state.denoiser.temperature, state.denoiser.observation_bias),
        "adam_m": {k: v.copy() for k, v in adam.m.items()},
        "adam_v": {k: v.copy() for k, v in adam.v.items()},
        "adam_step": adam.step_count,
        "epoch": state.epoch,
        "best_metric": state.best_metric,
        "layers": config.layers,
        "learning_rate": config.learning_rate,
    }


def _restore(snap: dict) -> TrainState:
    adam = Adam(snap["learning_rate"])
    adam.step_count = snap["adam_step"]
    adam.m = {k: v.copy() for k, v in snap["adam_m"].items()}
    adam.v = {k: v.copy() for k, v in snap["adam_v"].items()}
    den = snap["denoiser"]
    state = TrainState(
        EmbeddingTable(snap["embeddings"].copy(), snap["layers"]),
        DenoiserParams(den.layer1_weight.copy(), den.layer1_bias.copy(),
                       den.layer2_weight.copy(), den.layer2_bias.copy(),
                       den.temperature, den.observation_bias),
        adam, snap["epoch"], snap["best_metric"])
    return state


def _carve_validation(dataset: Dataset, config: TrainConfig) -> Dataset:
    """Move a per-user slice of train into a held-out selection split."""
    vrng = np.random.default_rng([config.seed, 0x5E1EC7])
    items_by_user = [list(dataset.train_items_of(u)) for u in range(dataset.user_count)]
    train, val = data_mod._split_per_user(items_by_user, 1.0 - config.validation_ratio, vrng)
    return Dataset(dataset.user_count, dataset.item_count, train, val,
                   dataset.social_pairs)


def fit(config: TrainConfig, dataset: Dataset) -> Tuple[TrainState, List[dict]]:
    """Train to completion; returns the best-selection-metric state and the
    structured training log (one dict per record, JSON-serializable)."""
    config.validate()
    work = _carve_validation(dataset, config) if config.validation_ratio > 0 else dataset
    rng = np.random.default_rng(config.seed)
    state = init(config, work, rng)
    log: List[dict] = [{"event": "config", **config_as_dict(config)}]
    best_snapshot: Optional[dict] = None
    evals_since_best = 0
    for epoch in range(1, config.epochs + 1):
        state, losses = train_epoch(state, work, config, rng)
        record = {"epoch": epoch, "rec_loss": losses.rec_loss,
                  "ib_loss": losses.ib_loss, "reg_loss": losses.reg_loss,
                  "total_loss": losses.total}
        if epoch % config.eval_every == 0:
            report = evaluate_state(state, work, config)
            for n in config.cutoffs:
                record[f"recall@{n}"] = report.recall[n]
                record[f"ndcg@{n}"] = report.ndcg[n]
            metric = report.recall[config.selection_cutoff]
            if metric > state.best_metric:
                state.best_metric = metric
                best_snapshot = _snapshot(state, config)
                evals_since_best = 0
                record["improved"] = True
            else:
                evals_since_best += 1
                record["improved"] = False
            record["best_metric"] = state.best_metric
            log.append(record)
            if evals_since_best >= config.patience:
                log.append({"event": "early_stop", "epoch": epoch,
                            "best_metric": state.best_metric})
                break
        else:
            log.append(record)
    best = _restore(best_snapshot) if best_snapshot is not None else state
    return best, log


# -- config serialization ----------------------------------------------------


def config_as_dict(config: TrainConfig) -> dict:
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(values)
    if "cutoffs" in kwargs:
        kwargs["cutoffs"] = tuple(kwargs["cutoffs"])
    config = TrainConfig(**kwargs)
    config.validate()
    return config


def _config_lines(config: TrainConfig, extra: dict) -> bytes:
    lines = []
    for f in fields(config):
        lines.append(f"{f.name}={getattr(config, f.name)!r}")
    for key, value in extra.items():
        lines.append(f"{key}={value!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_lines(payload: bytes) -> dict:
    out = {}
    for lineno, line in enumerate(payload.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed config line {lineno}: {line!r}")
        key, _, raw = line.partition("=")
        try:
            out[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError) as err:
            # literal_eval rejects inf/nan, which repr emits for them
            try:
                out[key] = float(raw)
            except ValueError:
                raise CheckpointError(
                    f"malformed config line {lineno}: {line!r}") from err
    return out


# -- binary checkpoints ------------------------------------------------------


def _checkpoint_arrays(state: TrainState) -> List[Tuple[str, np.ndarray]]:
    params = state.parameters()
    arrays = [(name, params[name]) for name in objective.PARAM_BLOCKS]
    for prefix, store in (("m", state.adam.m), ("v", state.adam.v)):
        for name in objective.PARAM_BLOCKS:
            arrays.append((f"{prefix}.{name}",
                           store.get(name, np.zeros_like(params[name]))))
    return arrays


def save_checkpoint(state: TrainState, config: TrainConfig, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    arrays = _checkpoint_arrays(state)
    chunks.append(struct.pack("<I", len(arrays)))
    for _, arr in arrays:
        arr = np.asarray(arr, dtype=np.float64)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    extra = {"epoch": state.epoch, "adam_step": state.adam.step_count,
             "best_metric": state.best_metric}
    payload = _config_lines(config, extra)
    chunks.append(struct.pack("<Q", len(payload)))
    chunks.append(payload)
    atomic_write_bytes(path, b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> Tuple[TrainState, TrainConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32()
    arrays: List[np.ndarray] = []
    for _ in range(count):
        ndim = r.u32()
        if ndim > 8:
            raise CheckpointError(f"{path}: implausible array rank {ndim}")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
        arrays.append(np.array(data, dtype=np.float64))
    payload_len = r.u64()
    values = _parse_config_lines(r.take(payload_len))
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")

    extra = {k: values.pop(k) for k in ("epoch", "adam_step", "best_metric")
             if k in values}
    if "cutoffs" in values:
        values["cutoffs"] = tuple(values["cutoffs"])
    try:
        config = TrainConfig(**values)
        config.validate()
    except (TypeError, ConfigError) as err:
        raise CheckpointError(f"{path}: bad embedded config: {err}") from err

    expected = len(objective.PARAM_BLOCKS) * 3
    if len(arrays) != expected:
        raise CheckpointError(f"{path}: expected {expected} arrays, found {len(arrays)}")
    named = dict(zip(objective.PARAM_BLOCKS, arrays[:5]))
    table = EmbeddingTable(named["embeddings"], config.layers)
    den = DenoiserParams(named["layer1_weight"], named["layer1_bias"],
                         named["layer2_weight"], named["layer2_bias"],
                         config.temperature, config.epsilon)
    adam = Adam(config.learning_rate)
    adam.step_count = int(extra.get("adam_step", 0))
    adam.m = dict(zip(objective.PARAM_BLOCKS, arrays[5:10]))
    adam.v = dict(zip(objective.PARAM_BLOCKS, arrays[10:15]))
    state = TrainState(table, den, adam, int(extra.get("epoch", 0)),
                       float(extra.get("best_metric", float("-inf"))))
    return state, config
