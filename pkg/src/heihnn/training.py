"""Training loop, evaluation, PGD feature perturbation and the alpha/beta sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .data import Dataset
from .diffmath import Value
from .hypergraph import build_hypergraph
from .model import SWEEP_GRID, HeIHNN, ModelConfig, predict

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss is {loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.0005
    epochs: int = 200
    patience: int | None = None
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])


class Optimizer:
    """Adam or plain gradient descent, both with decoupled weight decay (scaled by lr)."""

    def __init__(self, params: dict[str, Value], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        b1, b2 = c.betas
        for k, p in self.params.items():
            g = p.grad
            if c.optimizer == "adam":
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                mhat = self.m[k] / (1 - b1 ** self.t)
                vhat = self.v[k] / (1 - b2 ** self.t)
                update = mhat / (np.sqrt(vhat) + c.eps)
            else:
                update = g
            p.data -= c.lr * update + c.lr * c.weight_decay * p.data

    def zero_grad(self) -> None:
        dm.zero_grads(self.params.values())


def accuracy(logits, labels, indices) -> float:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("accuracy needs at least one index")
    return float(np.mean(predict(logits)[idx] == np.asarray(labels)[idx]))


def micro_f1(pred, labels) -> float:
    """Micro-averaged F1 over classes; equals accuracy for single-label data."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    classes = np.union1d(pred, labels)
    tp = sum(np.sum((pred == c) & (labels == c)) for c in classes)
    fp = sum(np.sum((pred == c) & (labels != c)) for c in classes)
    fn = sum(np.sum((pred != c) & (labels == c)) for c in classes)
    return float(2 * tp / (2 * tp + fp + fn))


def evaluate(model: HeIHNN, dataset: Dataset, indices, features=None) -> float:
    x = dataset.features if features is None else features
    logits = model.forward(dataset.hypergraph, x, training=False)
    return accuracy(logits, dataset.labels, indices)


def train(model: HeIHNN, dataset: Dataset, tcfg: TrainConfig) -> TrainHistory:
    h = dataset.hypergraph
    params = model.trainable()
    opt = Optimizer(params, tcfg)
    hist = TrainHistory()
    x = Value(dataset.features)
    best, stale = np.inf, 0
    for epoch in range(1, tcfg.epochs + 1):
        opt.zero_grad()
        logits = model.forward(h, x, training=True)
        loss = dm.cross_entropy(logits, dataset.labels, dataset.train_idx)
        lv = float(loss.data[0, 0])
        if not np.isfinite(lv):
            raise TrainingDiverged(epoch, lv)
        dm.backward(loss)
        opt.step()

        clean = model.forward(h, x, training=False)
        hist.records.append(EpochRecord(
            epoch, lv,
            accuracy(clean, dataset.labels, dataset.train_idx),
            accuracy(clean, dataset.labels, dataset.test_idx),
        ))
        if tcfg.patience is not None:
            if lv < best - 1e-6:
                best, stale = lv, 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    log.info("early stop at epoch %d", epoch)
                    break
    hist.params = model.snapshot()
    return hist


def run_once(mcfg: ModelConfig, tcfg: TrainConfig, dataset: Dataset, seed: int):
    """Train a fresh model with ``seed`` driving both the split and the initialization."""
    ds = dataset.resplit(seed)
    model = HeIHNN(mcfg.with_(seed=seed), ds.features.shape[1], ds.n_classes)
    hist = train(model, ds, tcfg)
    return model, ds, hist


def pgd_perturb(model: HeIHNN, dataset: Dataset, eps: float, steps: int = 10,
                step_size: float | None = None) -> np.ndarray:
    """L-infinity PGD on the test rows' features, ascending the test cross-entropy."""
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    x_orig = dataset.features
    if eps == 0 or steps == 0:
        return x_orig.copy()
    step_size = eps / 4 if step_size is None else step_size
    rows = dataset.test_idx
    x = x_orig.copy()
    base = x_orig[rows]
    for _ in range(steps):
        xv = Value(x, requires_grad=True)
        logits = model.forward(dataset.hypergraph, xv, training=False)
        loss = dm.cross_entropy(logits, dataset.labels, rows)
        dm.backward(loss)
        x[rows] = _project(x[rows] + step_size * np.sign(xv.grad[rows]), base, eps)
    return x


def _project(x: np.ndarray, base: np.ndarray, eps: float) -> np.ndarray:
    """Clip into the eps-ball around ``base`` so that |x - base| <= eps holds in floating point."""
    x = base + np.clip(x - base, -eps, eps)
    over = np.abs(x - base) > eps
    while over.any():  # base + eps can round one ulp outside the ball
        x[over] = np.nextafter(x[over], base[over])
        over = np.abs(x - base) > eps
    return x


@dataclass
class SweepResult:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    acc: np.ndarray  # mean test accuracy, rows alpha, columns beta
    std: np.ndarray

    @property
    def best(self) -> tuple[float, float, float]:
        i, j = np.unravel_index(np.argmax(self.acc), self.acc.shape)
        return self.alphas[i], self.betas[j], float(self.acc[i, j])

    def rows(self):
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                yield a, b, float(self.acc[i, j]), float(self.std[i, j])


def _sweep_cell(args):
    mcfg, tcfg, dataset, seeds = args
    accs = []
    for s in seeds:
        model, ds, _ = run_once(mcfg, tcfg, dataset, s)
        accs.append(evaluate(model, ds, ds.test_idx))
    return float(np.mean(accs)), float(np.std(accs))


def sweep(mcfg: ModelConfig, tcfg: TrainConfig, dataset: Dataset, alphas=SWEEP_GRID,
          betas=SWEEP_GRID, repeats: int = 1, seed: int = 0, jobs: int = 1) -> SweepResult:
    """Train one model per (alpha, beta) cell; every cell shares seeds ``seed .. seed+repeats-1``."""
    alphas, betas = tuple(alphas), tuple(betas)
    if not alphas or not betas:
        raise ValueError("sweep grid must be nonempty")
    seeds = [seed + r for r in range(repeats)]
    tasks = [(mcfg.with_(alpha=a, beta=b), tcfg, dataset, seeds) for a in alphas for b in betas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    acc = np.array([r[0] for r in results]).reshape(len(alphas), len(betas))
    std = np.array([r[1] for r in results]).reshape(len(alphas), len(betas))
    return SweepResult(alphas, betas, acc, std)


def model_gradient_errors(model: HeIHNN, dataset: Dataset, eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error of backprop vs central differences on the training loss.

    Dropout must be off in ``model.cfg`` for the loss to be deterministic.
    """
    if model.cfg.dropout != 0.0:
        raise ValueError("gradient check needs dropout 0")
    h, x = dataset.hypergraph, Value(dataset.features)

    def loss(_):
        logits = model.forward(h, x, training=False)
        return dm.cross_entropy(logits, dataset.labels, dataset.train_idx)

    params = model.trainable()
    errors = {}
    for name, p in params.items():
        dm.zero_grads(params.values())
        errors[name] = dm.grad_check(loss, p, eps)
    dm.zero_grads(params.values())
    return errors


def gradcheck_instance(seed: int = 0, n: int = 6, m: int = 4, features: int = 3,
                       classes: int = 3) -> Dataset:
    """Small random hypergraph with random features for finite-difference checks."""
    rng = dm.make_rng(seed)
    while True:
        edges = [sorted(rng.choice(n, size=int(rng.integers(2, 4)), replace=False).tolist())
                 for _ in range(m)]
        if len({v for e in edges for v in e}) == n:
            break
    h = build_hypergraph(n, edges)
    x = rng.standard_normal((n, features))
    labels = np.arange(n) % classes
    idx = np.arange(n)
    return Dataset(h, x, labels, idx, idx)
