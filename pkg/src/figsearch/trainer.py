"""Two-stage training protocol: fit the lower branch on type labels, freeze
it, then fit the upper branch and main head on class labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledExample
from .errors import ParameterError, ProtocolError
from .network import (DualNetConfig, ModelParams, cross_entropy, loss_and_grads,
                      one_hot, sgd_step, _branch_forward, _head_forward)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs_aux: int = 15    # 50 when training on full-size corpora
    epochs_main: int = 10
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> None:
        if self.lr < 0:
            raise ParameterError("lr must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs_aux < 1 or self.epochs_main < 1:
            raise ParameterError("epoch counts must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    stage: str
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps({
            "stage": r.stage, "epoch": r.epoch,
            "train_loss": r.train_loss, "val_loss": r.val_loss,
            "val_accuracy": r.val_accuracy,
        }, sort_keys=True) for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")


def _to_arrays(examples: list[LabeledExample], cfg: DualNetConfig, dtype):
    x = np.stack([ex.image for ex in examples]).astype(dtype)[..., None]
    types = np.array([ex.type_label for ex in examples])
    classes = np.array([ex.class_label for ex in examples])
    return x, types, classes


def _epoch_order(n: int, seed: int, stage: int, epoch: int, shuffle: bool):
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, 41, stage, epoch]).permutation(n)


def _eval_aux(params, cfg, x, types):
    feat, _ = _branch_forward(params.groups["lower"], cfg.lower, x)
    probs = _head_forward(params.groups["aux_head"], feat)
    loss = cross_entropy(probs, one_hot(types, cfg.type_count, dtype=probs.dtype))
    acc = float((probs.argmax(axis=1) == types).mean())
    return loss, acc


def _eval_main(params, cfg, x, classes):
    lf, _ = _branch_forward(params.groups["lower"], cfg.lower, x)
    uf, _ = _branch_forward(params.groups["upper"], cfg.upper, x)
    probs = _head_forward(params.groups["main_head"], np.concatenate([lf, uf], axis=1))
    loss = cross_entropy(probs, one_hot(classes, cfg.class_count, dtype=probs.dtype))
    acc = float((probs.argmax(axis=1) == classes).mean())
    return loss, acc


def _run_stage(params, cfg, task, stage_idx, epochs, train, val, tc):
    x, types, classes = _to_arrays(train, cfg, params.dtype)
    labels = types if task == "aux" else classes
    k = cfg.type_count if task == "aux" else cfg.class_count
    truth = one_hot(labels, k, dtype=params.dtype)
    vx, vtypes, vclasses = _to_arrays(val, cfg, params.dtype) if val else (None, None, None)
    n = x.shape[0]
    history = TrainHistory()
    drop_rng = (np.random.default_rng([tc.seed, 53, stage_idx])
                if cfg.dropout > 0 else None)
    for epoch in range(epochs):
        order = _epoch_order(n, tc.seed, stage_idx, epoch, tc.shuffle)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            sel = order[start : start + tc.batch_size]
            kwargs = {"aux_truth": truth[sel]} if task == "aux" else {"main_truth": truth[sel]}
            loss, _, grads = loss_and_grads(params, cfg, x[sel], task=task,
                                            dropout_rng=drop_rng, **kwargs)
            params = sgd_step(params, grads, tc.lr)
            # short final batch contributes by its true size
            total += loss * len(sel)
        train_loss = total / n
        if val:
            val_loss, val_acc = (_eval_aux(params, cfg, vx, vtypes) if task == "aux"
                                 else _eval_main(params, cfg, vx, vclasses))
        else:
            val_loss, val_acc = float("nan"), float("nan")
        history.records.append(EpochRecord(
            stage=task, epoch=epoch, train_loss=float(train_loss),
            val_loss=float(val_loss), val_accuracy=val_acc))
    return params, history


def train_aux(params: ModelParams, cfg: DualNetConfig,
              train_set: list[LabeledExample], val_set: list[LabeledExample],
              tc: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Stage 1: fit the lower branch and aux head on type labels.

    Upper-branch and main-head groups receive exactly zero gradient during
    this stage; freezing is left to freeze_lower so the returned params
    carry unchanged frozen flags.
    """
    tc.validate()
    if not train_set:
        raise ParameterError("training set is empty")
    return _run_stage(params, cfg, "aux", 0, tc.epochs_aux, train_set, val_set, tc)


def freeze_lower(params: ModelParams) -> ModelParams:
    """Mark the lower branch and aux head frozen; values untouched. Idempotent."""
    frozen = dict(params.frozen)
    frozen["lower"] = True
    frozen["aux_head"] = True
    return ModelParams(groups=params.groups, frozen=frozen)


def train_main(params: ModelParams, cfg: DualNetConfig,
               train_set: list[LabeledExample], val_set: list[LabeledExample],
               tc: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Stage 2: fit the upper branch and main head on class labels.

    Requires the lower branch to be frozen first; that ordering is the
    protocol, so violating it raises instead of silently training.
    """
    tc.validate()
    if not params.frozen.get("lower", False):
        raise ProtocolError("train_main requires freeze_lower first")
    if not train_set:
        raise ParameterError("training set is empty")
    return _run_stage(params, cfg, "main", 1, tc.epochs_main, train_set, val_set, tc)
