"""Training loop (SGD + momentum, two-phase LR), evaluation, baseline,
and checkpointing.

Batch size is 1: each example gets its own graph, backward pass, and
parameter update. The learning rate is ``lr_first_half`` for the first
floor(epochs/2) epochs and ``lr_second_half`` afterwards. Examples are
visited in a seeded-shuffled order each epoch; all randomness (shuffling
and the wrong-candidate draw of objective 1) flows from one generator so a
(seed, config, dataset) triple fully determines the run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset, DatasetError
from .model import ModelConfig, ModelParams, example_loss, pool, similarity_for_example
from .objectives import NUM_CANDIDATES, predict, sample_wrong_candidate
from .autodiff import Graph, ShapeError

CHECKPOINT_FORMAT = "stepalign-checkpoint-v1"


@dataclass
class SgdConfig:
    lr_first_half: float = 0.4
    lr_second_half: float = 0.08
    momentum: float = 0.9
    epochs: int = 30
    rng_seed: int = 0

    def __post_init__(self):
        if self.lr_first_half <= 0 or self.lr_second_half <= 0:
            raise ValueError("SgdConfig: learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"SgdConfig: momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 0:
            raise ValueError(f"SgdConfig: epochs must be >= 0, got {self.epochs}")


def lr_at(epoch: int, config: SgdConfig) -> float:
    """First floor(epochs/2) epochs on the first rate, the rest on the second."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"lr_at: epoch {epoch} out of range [0, {config.epochs})")
    return config.lr_first_half if epoch < config.epochs // 2 else config.lr_second_half


@dataclass
class TrainState:
    """Optimizer state: velocity per parameter, next epoch, RNG state."""

    velocities: dict
    epoch: int = 0
    rng_state: dict | None = None


def init_train_state(params: ModelParams, sgd: SgdConfig) -> TrainState:
    rng = np.random.default_rng([sgd.rng_seed, 1])
    velocities = {name: np.zeros_like(p.data) for name, p in params.named_parameters().items()}
    return TrainState(velocities=velocities, epoch=0, rng_state=rng.bit_generator.state)


def sgd_step(named_params: dict, velocities: dict, lr: float, momentum: float) -> None:
    """Classical momentum: v <- momentum*v + grad; param <- param - lr*v.

    A parameter with no gradient this step (grad None) contributes zero.
    """
    for name, p in named_params.items():
        v = velocities.get(name)
        if v is None or v.shape != p.data.shape:
            raise ShapeError(
                f"sgd_step: velocity for '{name}' has shape "
                f"{None if v is None else v.shape}, parameter has {p.data.shape}"
            )
        if p.grad is not None and p.grad.shape != p.data.shape:
            raise ShapeError(
                f"sgd_step: gradient for '{name}' has shape {p.grad.shape}, "
                f"parameter has {p.data.shape}"
            )
        v *= momentum
        if p.grad is not None:
            v += p.grad
        p.data -= lr * v


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


def _check_dataset(params: ModelParams, dataset: Dataset) -> None:
    cfg = params.config
    if dataset.vocab_size > cfg.vocab_size:
        raise DatasetError(
            f"dataset vocab_size {dataset.vocab_size} exceeds model vocab_size {cfg.vocab_size}"
        )
    if cfg.fusion != "none":
        if dataset.feature_dim is None:
            raise DatasetError(f"fusion '{cfg.fusion}' requires a dataset with image features")
        if dataset.feature_dim != cfg.feature_dim:
            raise DatasetError(
                f"dataset feature_dim {dataset.feature_dim} != model feature_dim {cfg.feature_dim}"
            )


def train(
    params: ModelParams,
    train_set: Dataset,
    objective,
    sgd: SgdConfig,
    pooling_mode: str = "constrained",
    state: TrainState | None = None,
    stop_after: int | None = None,
) -> tuple:
    """Train in place; returns (per-epoch stats, final TrainState).

    ``stop_after`` interrupts the run after that epoch index without
    shortening the LR schedule (which depends on the total epoch count).
    Passing the returned TrainState back in resumes exactly: the schedule
    continues from the stored epoch and the restored RNG state reproduces
    the uninterrupted run's shuffles and draws.
    """
    _check_dataset(params, train_set)
    named = params.named_parameters()
    if state is None:
        state = init_train_state(params, sgd)
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    history = []
    last = sgd.epochs if stop_after is None else min(stop_after, sgd.epochs)
    for epoch in range(state.epoch, last):
        lr = lr_at(epoch, sgd)
        order = rng.permutation(len(train_set.examples))
        total = 0.0
        for idx in order:
            ex = train_set.examples[int(idx)]
            g = Graph()
            r = (
                sample_wrong_candidate(ex.answer, rng)
                if objective.objective_kind == "obj1"
                else None
            )
            loss, _ = example_loss(
                g, params, ex, objective.objective_kind, pooling_mode, r=r, margin=objective.margin
            )
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"train: non-finite loss {value} at epoch {epoch}, example {ex.id}"
                )
            params.zero_grad()
            g.backward(loss)
            sgd_step(named, state.velocities, lr, sgd.momentum)
            total += value
        history.append(EpochStats(epoch=epoch, mean_loss=total / len(train_set.examples), lr=lr))
        state.epoch = epoch + 1
        state.rng_state = rng.bit_generator.state
    return history, state


@dataclass
class ExampleRecord:
    id: str
    predicted: int
    gold: int
    ranking: tuple
    m: tuple


@dataclass
class EvalReport:
    accuracy: float
    p_at_2: float
    records: tuple

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "p_at_2": self.p_at_2,
            "records": [asdict(r) for r in self.records],
        }


def _report_from_records(records) -> EvalReport:
    n = len(records)
    correct = sum(1 for r in records if r.predicted == r.gold)
    top2 = sum(1 for r in records if r.gold in r.ranking[:2])
    return EvalReport(accuracy=correct / n, p_at_2=top2 / n, records=tuple(records))


def evaluate(params: ModelParams, dataset: Dataset, pooling_mode: str = "constrained") -> EvalReport:
    """Accuracy and p@2 of argmax-over-m prediction, in dataset order."""
    _check_dataset(params, dataset)
    if not dataset.examples:
        raise DatasetError("evaluate: dataset has no examples")
    records = []
    for ex in dataset.examples:
        g = Graph()
        s = similarity_for_example(g, params, ex)
        align = pool(s, pooling_mode)
        predicted, ranking = predict(align)
        records.append(
            ExampleRecord(id=ex.id, predicted=predicted, gold=ex.answer, ranking=ranking, m=align.selected)
        )
    return _report_from_records(records)


def hasty_baseline(dataset: Dataset) -> EvalReport:
    """Question-candidate surface similarity only; the recipe body is ignored.

    Picks the candidate with the highest Jaccard overlap (over token id
    sets) with the union of the question items' tokens; ties go to the
    lower candidate index.
    """
    if not dataset.examples:
        raise DatasetError("hasty_baseline: dataset has no examples")
    records = []
    for ex in dataset.examples:
        question = set()
        for item in ex.question_items:
            question |= set(item.tokens)
        overlaps = []
        for cand in ex.candidates:
            cand_set = set(cand)
            union = cand_set | question
            overlaps.append(len(cand_set & question) / len(union) if union else 0.0)
        ranking = tuple(sorted(range(NUM_CANDIDATES), key=lambda c: (-overlaps[c], c)))
        records.append(
            ExampleRecord(
                id=ex.id,
                predicted=ranking[0],
                gold=ex.answer,
                ranking=ranking,
                m=tuple(overlaps),
            )
        )
    return _report_from_records(records)


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(path, params: ModelParams, state: TrainState | None = None) -> None:
    """JSON checkpoint: config echo, per-parameter shapes + flat values.

    Values round-trip exactly (shortest-repr float serialization), so a
    save/load cycle reproduces evaluation output bit for bit.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(params.config),
        "parameters": {
            name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in params.named_parameters().items()
        },
        "train_state": None
        if state is None
        else {
            "epoch": state.epoch,
            "velocities": {k: v.reshape(-1).tolist() for k, v in state.velocities.items()},
            "rng_state": state.rng_state,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Rebuild (ModelParams, TrainState | None); rejects malformed files."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ValueError(f"checkpoint {path}: parse error: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"checkpoint {path}: not a {CHECKPOINT_FORMAT} file")
    cfg_dict = dict(doc["model_config"])
    cfg_dict["mlp_hidden_dims"] = tuple(cfg_dict["mlp_hidden_dims"])
    config = ModelConfig(**cfg_dict)
    params = ModelParams(config, seed=0)
    named = params.named_parameters()
    stored = doc["parameters"]
    if set(stored) != set(named):
        raise ValueError(
            f"checkpoint {path}: parameter names do not match the declared config "
            f"(missing {sorted(set(named) - set(stored))}, "
            f"unexpected {sorted(set(stored) - set(named))})"
        )
    for name, p in named.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if shape != tuple(p.shape) or values.size != p.data.size:
            raise ValueError(
                f"checkpoint {path}: parameter '{name}' declares shape {shape} with "
                f"{values.size} values, model expects {tuple(p.shape)}"
            )
        p.data = values.reshape(shape)
    raw_state = doc.get("train_state")
    state = None
    if raw_state is not None:
        velocities = {}
        for name, flat in raw_state["velocities"].items():
            if name not in named:
                raise ValueError(f"checkpoint {path}: velocity for unknown parameter '{name}'")
            arr = np.asarray(flat, dtype=np.float64)
            if arr.size != named[name].data.size:
                raise ValueError(f"checkpoint {path}: velocity size mismatch for '{name}'")
            velocities[name] = arr.reshape(named[name].data.shape)
        state = TrainState(
            velocities=velocities,
            epoch=int(raw_state["epoch"]),
            rng_state=raw_state["rng_state"],
        )
    return params, state
