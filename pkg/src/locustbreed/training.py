"""Adam/AdamW, early stopping and the seeded mini-batch training loop."""
from __future__ import annotations

import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import FeatureSet
from .metrics import evaluate_scores
from .models import BreedingModel, Checkpoint, make_batch

OPTIMIZERS = ("adam", "adamw")
SELECTION_METRICS = ("f1", "accuracy", "roc_auc", "precision", "recall")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.value = epoch, batch, value


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1  # only used by adamw
    rng_seed: int = 0
    selection_metric: str = "f1"
    averaging: str = "binary"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
        if self.averaging not in ("binary", "macro"):
            raise ValueError(f"averaging must be binary or macro, got {self.averaging!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")

    @classmethod
    def for_architecture(cls, architecture: str, **overrides) -> TrainConfig:
        """Per-family defaults: AdamW for 10 epochs on chips, Adam for 200 otherwise."""
        base = {"max_epochs": 10, "optimizer": "adamw"} if architecture == "prithvi_lb" else {}
        base.update(overrides)
        return cls(**base)

    @property
    def effective_weight_decay(self) -> float:
        return self.weight_decay if self.optimizer == "adamw" else 0.0


# --- optimizers ------------------------------------------------------------

def adam_step(params, grads, state: dict, cfg: TrainConfig):
    """One bias-corrected Adam update; returns (new_params, new_state).

    ``state`` holds ``t`` and per-parameter lists ``m`` and ``v``; an empty
    dict starts from zero moments.
    """
    t = state.get("t", 0) + 1
    m_prev = state.get("m") or [np.zeros_like(p) for p in params]
    v_prev = state.get("v") or [np.zeros_like(p) for p in params]
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"t": t, "m": new_m, "v": new_v}


def adamw_step(params, grads, state: dict, cfg: TrainConfig):
    """Decoupled weight decay ``theta -= lr*wd*theta`` followed by the Adam update."""
    decay = 1.0 - cfg.learning_rate * cfg.weight_decay
    return adam_step([p * decay for p in params], grads, state, cfg)


class Adam:
    """Stateful optimizer over named tensors of a module."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self) -> None:
        step = adamw_step if self.cfg.optimizer == "adamw" else adam_step
        names = [n for n, _ in self.params]
        datas = [p.data for _, p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for _, p in self.params]
        state = {"t": self.t, "m": [self.m[n] for n in names], "v": [self.v[n] for n in names]}
        new_p, state = step(datas, grads, state, self.cfg)
        for (name, p), d, m, v in zip(self.params, new_p, state["m"], state["v"]):
            p.data, self.m[name], self.v[name] = d, m, v
        self.t = state["t"]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{n}": a for n, a in self.m.items()}
        out.update({f"adam.v.{n}": a for n, a in self.v.items()})
        return out

    def load_state(self, t: int, arrays: dict[str, np.ndarray]) -> None:
        self.t = t
        for n, _ in self.params:
            self.m[n] = np.array(arrays[f"adam.m.{n}"])
            self.v[n] = np.array(arrays[f"adam.v.{n}"])


# --- early stopping ----------------------------------------------------------

@dataclass
class EarlyStopping:
    """Tracks the best epoch; strict improvement only, the first epoch always counts."""

    patience: int
    best: float | None = None
    best_epoch: int | None = None
    bad_epochs: int = 0

    def update(self, epoch: int, value: float) -> bool:
        improved = self.best_epoch is None or (
            not math.isnan(value) and (math.isnan(self.best) or value > self.best)
        )
        if improved:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def stopping_epoch(trace, patience: int, max_epochs: int | None = None) -> int:
    """Epoch (1-based) at which training halts for a given metric trace."""
    es = EarlyStopping(patience)
    last = len(trace) if max_epochs is None else min(max_epochs, len(trace))
    for epoch in range(1, last + 1):
        es.update(epoch, trace[epoch - 1])
        if es.should_stop:
            return epoch
    return last


# --- training loop -------------------------------------------------------------

@dataclass
class TrainReport:
    architecture: str
    selection_metric: str
    epochs: list[dict] = field(default_factory=list)
    selected_epoch: int | None = None
    stopped_early: bool = False
    wall_clock_seconds: float = 0.0

    def to_json(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_clock_seconds")
        return out

    @classmethod
    def from_json(cls, obj: dict) -> TrainReport:
        return cls(**{"wall_clock_seconds": 0.0, **obj})


def batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    """Shuffled batches; a short trailing batch of exactly one sample is dropped."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batch_size > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def predict_scores(model: BreedingModel, fs: FeatureSet, batch_size: int = 64) -> np.ndarray:
    out = [
        model.point_scores(make_batch(fs, model.family, np.arange(i, min(i + batch_size, len(fs)))))
        for i in range(0, len(fs), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros(0)


def _metric(val: dict, name: str, averaging: str) -> float:
    value = val["roc_auc"] if name == "roc_auc" else val[averaging][name]
    return float("nan") if value is None else float(value)


def _stdout(line: str) -> None:
    print(line, file=sys.stdout, flush=True)


def train(
    model: BreedingModel,
    train_set: FeatureSet,
    val_set: FeatureSet,
    cfg: TrainConfig,
    log=_stdout,
    state_path=None,
    resume: Checkpoint | None = None,
) -> tuple[Checkpoint, TrainReport]:
    """Train ``model`` in place and return the best-validation checkpoint.

    With ``state_path`` a resumable checkpoint (parameters, optimizer moments,
    RNG state, best-so-far tensors and the report) is written after every
    epoch; pass it back as ``resume`` to continue bit-exactly.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    started = time.perf_counter()
    named = model.named_parameters()
    opt = Adam(named, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    stopper = EarlyStopping(cfg.patience)
    report = TrainReport(model.config.architecture, cfg.selection_metric)
    best = model.state_dict()
    model.fit_begin(train_set)

    if resume is not None:
        st = resume.training_state
        model.load_state_dict(resume.parameters)
        opt.load_state(st["adam_t"], resume.extra)
        rng.bit_generator.state = st["rng"]
        stopper = EarlyStopping(**{**st["early"], "patience": cfg.patience})
        report = TrainReport.from_json(st["report"])
        best = {n: resume.extra[f"best.{n}"] for n in best}

    start_epoch = len(report.epochs) + 1
    if stopper.should_stop:
        start_epoch = cfg.max_epochs + 1
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        losses = []
        for b, idx in enumerate(batch_indices(rng, len(train_set), cfg.batch_size), start=1):
            model.zero_grad()
            loss = model.loss(make_batch(train_set, model.family, idx))
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            opt.step()
            losses.append(value)
        val = evaluate_scores(predict_scores(model, val_set), val_set.labels)
        metric = _metric(val, cfg.selection_metric, cfg.averaging)
        train_loss = float(np.mean(losses))
        if stopper.update(epoch, metric):
            best = model.state_dict()
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, "validation": val})
        report.selected_epoch = stopper.best_epoch
        auc = val["roc_auc"]
        log(
            f"epoch {epoch:4d}  loss {train_loss:.6f}  "
            f"val_{cfg.selection_metric} {metric:.4f}  val_roc_auc "
            + ("n/a" if auc is None else f"{auc:.4f}")
        )
        if stopper.should_stop and epoch < cfg.max_epochs:
            report.stopped_early = True
        if state_path is not None:
            Checkpoint(
                model.config,
                model.state_dict(),
                {
                    "adam_t": opt.t,
                    "rng": rng.bit_generator.state,
                    "early": asdict(stopper),
                    "report": report.to_json(),
                    "train_config": asdict(cfg),
                },
                {**opt.state_arrays(), **{f"best.{n}": a for n, a in best.items()}},
            ).save(state_path)
        if stopper.should_stop:
            break

    model.load_state_dict(best)
    model.fit_end(val_set)
    report.wall_clock_seconds = time.perf_counter() - started
    ckpt = Checkpoint(
        model.config,
        model.state_dict(),
        {"selected_epoch": report.selected_epoch, "train_config": asdict(cfg), "report": report.to_json()},
    )
    return ckpt, report


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
