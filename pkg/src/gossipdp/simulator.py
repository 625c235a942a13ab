"""Decentralized and federated DP training of multinomial logistic regression.

Models are ``(dims + 1) × classes`` weight matrices; the last row is the
bias, matched by a constant feature appended to every record. All training is
full-batch. Randomness is drawn from per-``(seed, node, round)`` substreams so
results do not depend on evaluation order.
"""

from __future__ import annotations

import dataclasses
import enum
import gzip
import io
import math
import os
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from gossipdp import accountant, sensitivity as sens
from gossipdp.errors import FormatError, ParameterError
from gossipdp.graph import Graph
from gossipdp.mixing import GossipMatrix, neighborhood_average_weights

_TRAIN_STREAM = 0
_EVAL_STREAM = 1


class Algorithm(str, enum.Enum):
    GOSSIP = "gossip"
    FEDAVG = "fedavg"


@dataclasses.dataclass(frozen=True, eq=False)
class LocalDataset:
    features: np.ndarray
    labels: np.ndarray
    owner: int = -1

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ParameterError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and y.min() < 0:
            raise ParameterError("labels must be non-negative")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    rounds: int
    learning_rate: float
    clip_norm: float
    noise_multiplier: float
    num_classes: int
    seed: int = 0
    algorithm: Algorithm = Algorithm.GOSSIP

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.rounds < 1:
            raise ParameterError("rounds must be >= 1")
        if not self.learning_rate >= 0:
            raise ParameterError("learning rate must be non-negative")
        if not self.clip_norm > 0:
            raise ParameterError("clip norm must be positive")
        if not self.noise_multiplier >= 0:
            raise ParameterError("noise multiplier must be non-negative")
        if self.num_classes < 1:
            raise ParameterError("need at least one class")


@dataclasses.dataclass
class TrainHistory:
    """One entry per round; round 0 is the initial state.

    ``final`` holds the models after the last round: ``(n, dims + 1, classes)``
    for gossip, ``(dims + 1, classes)`` for the federated server.
    """

    rounds: list[int] = dataclasses.field(default_factory=list)
    accuracy: list[float] = dataclasses.field(default_factory=list)
    dispersion: list[float] = dataclasses.field(default_factory=list)
    mean_loss: list[float] = dataclasses.field(default_factory=list)
    node_losses: list[np.ndarray] = dataclasses.field(default_factory=list)
    eval_node: int | None = None
    final: np.ndarray | None = None

    def append(self, t: int, acc: float, disp: float, losses: np.ndarray) -> None:
        self.rounds.append(t)
        self.accuracy.append(float(acc))
        self.dispersion.append(float(disp))
        self.mean_loss.append(float(np.mean(losses)))
        self.node_losses.append(np.asarray(losses, dtype=float))

    def to_csv(self) -> str:
        lines = ["round,accuracy,dispersion,mean_loss"]
        for row in zip(self.rounds, self.accuracy, self.dispersion, self.mean_loss):
            lines.append("{},{!r},{!r},{!r}".format(*row))
        return "\n".join(lines) + "\n"


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def zero_model(dims: int, classes: int) -> np.ndarray:
    return np.zeros((dims + 1, classes))


def loss(model: np.ndarray, data: LocalDataset) -> float:
    """Mean cross-entropy."""
    logp = log_softmax(_augment(data.features) @ model, axis=1)
    return float(-logp[np.arange(len(data)), data.labels].mean())


def accuracy(model: np.ndarray, data: LocalDataset) -> float:
    if len(data) == 0:
        return float("nan")
    pred = np.argmax(_augment(data.features) @ model, axis=1)
    return float(np.mean(pred == data.labels))


def clipped_gradients(model: np.ndarray, data: LocalDataset, clip_norm: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-record gradient factors ``(x̃, r)`` with ``∇_k = x̃_k r_kᵀ``, each clipped to norm ``clip_norm``.

    The outer product has Frobenius norm ``‖x̃_k‖·‖r_k‖``, so the scaling is
    applied to ``r`` without materializing per-record matrices.
    """
    xa = _augment(data.features)
    k = model.shape[1]
    if data.labels.size and data.labels.max() >= k:
        raise ParameterError(f"label {int(data.labels.max())} out of range for {k} classes")
    r = softmax(xa @ model, axis=1)
    r[np.arange(len(data)), data.labels] -= 1.0
    norms = np.linalg.norm(xa, axis=1) * np.linalg.norm(r, axis=1)
    if math.isinf(clip_norm):
        scale = np.ones_like(norms)
    else:
        scale = np.minimum(1.0, np.divide(clip_norm, norms, out=np.ones_like(norms), where=norms > 0))
    return xa, r * scale[:, None]


def mean_clipped_gradient(model: np.ndarray, data: LocalDataset, clip_norm: float) -> np.ndarray:
    xa, r = clipped_gradients(model, data, clip_norm)
    return xa.T @ r / len(data)


def local_dp_step(
    model: np.ndarray,
    data: LocalDataset,
    learning_rate: float,
    clip_norm: float,
    noise_std: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One full-batch DP gradient step.

    Noise has per-coordinate standard deviation ``noise_std·C/|D|``, the
    sensitivity of the clipped mean under adding or removing one record.
    """
    if len(data) == 0:
        raise ParameterError("empty dataset")
    if noise_std < 0 or clip_norm < 0:
        raise ParameterError("noise_std and clip_norm must be non-negative")
    grad = mean_clipped_gradient(model, data, clip_norm)
    if noise_std > 0 and clip_norm > 0:
        if rng is None:
            raise ParameterError("a generator is required when noise_std > 0")
        grad = grad + rng.standard_normal(grad.shape) * (noise_std * clip_norm / len(data))
    return model - learning_rate * grad


def node_rng(seed: int, node: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _TRAIN_STREAM, node, t]))


def eval_node(seed: int, n: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _EVAL_STREAM]))
    return int(rng.integers(n))


def dispersion(models: np.ndarray) -> float:
    """Largest Frobenius distance between any two node models."""
    flat = models.reshape(models.shape[0], -1)
    return float(max(np.linalg.norm(flat - flat[i], axis=1).max() for i in range(flat.shape[0])))


def _check_datasets(datasets: Sequence[LocalDataset], cfg: TrainConfig) -> int:
    if not datasets:
        raise ParameterError("no datasets")
    dims = {d.dims for d in datasets}
    if len(dims) != 1:
        raise ParameterError(f"datasets disagree on feature dimension: {sorted(dims)}")
    for d in datasets:
        if len(d) == 0:
            raise ParameterError(f"dataset of node {d.owner} is empty")
        if d.labels.max() >= cfg.num_classes:
            raise ParameterError(f"label {int(d.labels.max())} out of range for {cfg.num_classes} classes")
    return dims.pop()


def dp_gossip_avg(
    graph: Graph,
    W: GossipMatrix,
    datasets: Sequence[LocalDataset],
    cfg: TrainConfig,
    test: LocalDataset,
    initial_models: np.ndarray | None = None,
) -> TrainHistory:
    """Every round each node takes a local DP step, then models are mixed by ``W``."""
    n = graph.n
    w = W.W if isinstance(W, GossipMatrix) else np.asarray(W, dtype=float)
    if w.shape != (n, n):
        raise ParameterError(f"W is {w.shape}, graph has {n} nodes")
    if len(datasets) != n:
        raise ParameterError(f"{len(datasets)} datasets for {n} nodes")
    dims = _check_datasets(datasets, cfg)
    if test.dims != dims:
        raise ParameterError("test set dimension mismatch")
    shape = (dims + 1, cfg.num_classes)
    if initial_models is None:
        models = np.zeros((n,) + shape)
    else:
        models = np.array(initial_models, dtype=float)
        if models.shape != (n,) + shape:
            raise ParameterError(f"initial models have shape {models.shape}, expected {(n,) + shape}")

    hist = TrainHistory(eval_node=eval_node(cfg.seed, n))

    def record(t: int) -> None:
        losses = np.array([loss(models[i], datasets[i]) for i in range(n)])
        hist.append(t, accuracy(models[hist.eval_node], test), dispersion(models), losses)

    record(0)
    for t in range(1, cfg.rounds + 1):
        for i in range(n):
            models[i] = local_dp_step(models[i], datasets[i], cfg.learning_rate, cfg.clip_norm,
                                      cfg.noise_multiplier, node_rng(cfg.seed, i, t))
        models = np.einsum("ij,jab->iab", w, models)
        record(t)
    hist.final = models
    return hist


def dp_fedavg(datasets: Sequence[LocalDataset], cfg: TrainConfig, test: LocalDataset) -> TrainHistory:
    """Server-side averaging of client updates; client noise multiplier is ``σ/√n``."""
    n = len(datasets)
    dims = _check_datasets(datasets, cfg)
    if test.dims != dims:
        raise ParameterError("test set dimension mismatch")
    model = zero_model(dims, cfg.num_classes)
    client_sigma = cfg.noise_multiplier / math.sqrt(n)
    hist = TrainHistory()

    def record(t: int) -> None:
        losses = np.array([loss(model, d) for d in datasets])
        hist.append(t, accuracy(model, test), 0.0, losses)

    record(0)
    for t in range(1, cfg.rounds + 1):
        update = np.zeros_like(model)
        for i, d in enumerate(datasets):
            local = local_dp_step(model, d, cfg.learning_rate, cfg.clip_norm, client_sigma, node_rng(cfg.seed, i, t))
            update += local - model
        model = model + update / n
        record(t)
    hist.final = model
    return hist


def lr_grid(i_values: Sequence[int] = range(0, 7)) -> list[float]:
    """``10^{-i/2}`` for each ``i``, largest rate first."""
    return [10.0 ** (-i / 2) for i in sorted(set(int(i) for i in i_values))]


def tune_lr(run: Callable[[float], TrainHistory], grid: Sequence[float]) -> tuple[float, TrainHistory]:
    """Rate with the best final accuracy; ties go to the smaller rate."""
    best: tuple[float, TrainHistory] | None = None
    for lr in sorted(grid):
        h = run(lr)
        if best is None or h.accuracy[-1] > best[1].accuracy[-1]:
            best = (lr, h)
    if best is None:
        raise ParameterError("empty learning-rate grid")
    return best


@dataclasses.dataclass(frozen=True)
class MatchedNoise:
    """Noise levels giving DP-GossipAvg and DP-FedAvg the same reported mean ε.

    ``rescale`` maps sensitivities in model units to the accountant's unit
    convention: one record moves node ``j``'s message by at most
    ``learning_rate·clip_norm/|D_j|`` per round.
    """

    gossip_sigma: float
    fedavg_sigma: float
    epsilon: float
    delta: float
    rounds: int
    rescale: tuple[float, ...]


def matched_noise(
    graph: Graph,
    datasets: Sequence[LocalDataset],
    cfg: TrainConfig,
    delta: float = accountant.DEFAULT_DELTA,
    W: GossipMatrix | None = None,
    threads: int | None = None,
) -> MatchedNoise:
    """Account DP-GossipAvg's messages under the no-summation model, then calibrate FedAvg.

    Messages are the locally updated models, which evolve as the
    ``(W, I, e_jᵀ)`` system; the noise multiplier is already in units of the
    per-round sensitivity, so ``σ`` enters the accountant unchanged.
    """
    if not cfg.noise_multiplier > 0:
        raise ParameterError("matching needs a positive noise multiplier")
    W = neighborhood_average_weights(graph) if W is None else W
    deltas = sens.pairwise_sensitivities(sens.Variant.NO_SS, W, cfg.rounds, correction=True, threads=threads)
    eps = accountant.mean_epsilon(deltas, cfg.noise_multiplier, delta)
    fed = accountant.central_sigma_for_epsilon(eps, cfg.rounds, delta)
    rescale = tuple(cfg.learning_rate * cfg.clip_norm / len(d) for d in datasets)
    return MatchedNoise(cfg.noise_multiplier, fed, eps, delta, cfg.rounds, rescale)


def partition_iid(pool: LocalDataset, nodes: int, seed: int) -> list[LocalDataset]:
    """Shuffle and deal records into ``nodes`` shards whose sizes differ by at most one."""
    if nodes < 1:
        raise ParameterError("nodes must be >= 1")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(len(pool))
    return [LocalDataset(pool.features[idx], pool.labels[idx], owner=i)
            for i, idx in enumerate(np.array_split(perm, nodes))]


def synth_classification(
    seed: int,
    nodes: int,
    records_per_node: int,
    dims: int,
    classes: int,
    test_records: int | None = None,
    separation: float = 4.0,
) -> tuple[list[LocalDataset], LocalDataset]:
    """Gaussian blobs with unit covariance around class means ``separation`` apart in norm."""
    if min(nodes, records_per_node, dims, classes) < 1:
        raise ParameterError("all counts must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    means = rng.standard_normal((classes, dims))
    means *= separation / np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    total = nodes * records_per_node
    test_records = max(1, total // 4) if test_records is None else test_records

    def draw(k: int) -> LocalDataset:
        y = rng.integers(classes, size=k)
        return LocalDataset(means[y] + rng.standard_normal((k, dims)), y)

    train, test = draw(total), draw(test_records)
    shards = [LocalDataset(train.features[i::nodes], train.labels[i::nodes], owner=i) for i in range(nodes)]
    return shards, test


def _read_bytes(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, name: str) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{name}: truncated header")
    got = int.from_bytes(raw[:4], "big")
    if got != magic:
        raise FormatError(f"{name}: magic {got:#010x}, expected {magic:#010x}")
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{name}: truncated header")
    shape = tuple(int.from_bytes(raw[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim))
    count = math.prod(shape)
    if len(raw) - head != count:
        raise FormatError(f"{name}: {len(raw) - head} payload bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(shape)


def load_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike) -> LocalDataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), 0x00000803, "images")
    labels = _parse_idx(_read_bytes(labels_path), 0x00000801, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return LocalDataset(images.reshape(images.shape[0], -1) / 255.0, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Encode uint8 arrays as IDX bytes; inverse of :func:`load_idx` up to scaling."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)

    def enc(arr: np.ndarray, magic_low: int) -> bytes:
        buf = io.BytesIO()
        buf.write(bytes([0, 0, 0x08, magic_low]))
        for s in arr.shape:
            buf.write(int(s).to_bytes(4, "big"))
        buf.write(arr.tobytes())
        return buf.getvalue()

    return enc(images, images.ndim), enc(labels, 1)
