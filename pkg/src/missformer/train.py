"""Training loop: SGD with momentum and weight decay under a poly LR schedule.

Everything is seeded; the same (config, seed) pair reproduces the metric log
byte for byte. Non-finite losses or gradients abort the run, keeping the
best checkpoint written so far.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Sample, SynthSpec, augment_sample, collate, gen_dataset
from .metrics import append_metrics_csv, evaluate_masks, metric_rows, seg_loss
from .model import MissFormer, ModelConfig, save_checkpoint
from .module import Module
from .tensor import ConfigError, NumericError, Tensor, no_grad


def poly_lr(iteration: int, max_iter: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - iteration/max_iter)^power, clamped to 0 past the end."""
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    if iteration >= max_iter:
        return 0.0
    return base_lr * (1.0 - iteration / max_iter) ** power


class SgdMomentum:
    """v <- mu*v + (g + wd*w); w <- w - lr*v, with lr from the poly schedule."""

    def __init__(
        self,
        named_params,
        max_iter: int,
        base_lr: float = 0.05,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        power: float = 0.9,
    ):
        self.params = list(named_params)
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.max_iter = max_iter
        self.power = power  # 0 gives a constant learning rate
        self.iteration = 0

    @property
    def lr(self) -> float:
        return poly_lr(self.iteration, self.max_iter, self.base_lr, self.power)

    def step(self) -> float:
        bad = [name for name, p in self.params if p.grad is not None and not np.isfinite(p.grad).all()]
        if bad:
            raise NumericError(f"step rejected: non-finite gradients in {bad[:5]}")
        lr = self.lr
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= lr * v
        self.iteration += 1
        return lr


@dataclass
class TrainParams:
    epochs: int = 50
    batch_size: int = 4
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    eval_every: int = 1
    augment: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))

    @staticmethod
    def from_dict(d: dict) -> "TrainParams":
        unknown = set(d) - set(TrainParams.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train param(s): {sorted(unknown)}")
        return TrainParams(**d)


@dataclass
class TrainResult:
    best_dsc: float
    best_epoch: int
    final_loss: float
    losses: list[float]
    checkpoint_dir: str | None
    metrics_path: str | None
    aborted: bool = False
    abort_reason: str = ""
    history: list = field(default_factory=list)  # (epoch, split, mean_dsc)


def predict_masks(model: MissFormer, samples: list[Sample], batch_size: int = 8) -> list[np.ndarray]:
    preds = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            images, _ = collate(samples[start : start + batch_size])
            logits = model(Tensor(images))
            preds.extend(np.argmax(logits.data, axis=1).astype(np.int64))
    return preds


def evaluate(model: MissFormer, samples: list[Sample], batch_size: int = 8) -> dict:
    """Per-class and mean DSC/HD95/HD100 of a model over a sample list."""
    preds = predict_masks(model, samples, batch_size)
    gts = [s.label for s in samples]
    return evaluate_masks(preds, gts, model.config.num_classes)


def train(
    model_config: ModelConfig,
    data_spec: SynthSpec,
    params: TrainParams,
    out_dir: str | None = None,
    model: MissFormer | None = None,
    train_samples: list[Sample] | None = None,
    val_samples: list[Sample] | None = None,
    stop_dsc: float | None = None,
) -> TrainResult:
    """Full loop: shuffle, forward, loss, backward, SGD step with poly LR.

    Writes ``metrics.csv`` (per-eval DSC/HD rows), ``loss.csv`` and the
    best-val-DSC checkpoint under ``out_dir`` when given. ``stop_dsc`` stops
    early once the train-split mean foreground DSC reaches the threshold.
    """
    if train_samples is None or val_samples is None:
        gen_train, gen_val = gen_dataset(data_spec)
        train_samples = train_samples or gen_train
        val_samples = val_samples or gen_val
    if model is None:
        model = MissFormer(model_config, seed=params.seed)

    steps_per_epoch = max(1, (len(train_samples) + params.batch_size - 1) // params.batch_size)
    max_iter = params.epochs * steps_per_epoch
    optimizer = SgdMomentum(
        list(model.named_parameters()),
        max_iter=max_iter,
        base_lr=params.base_lr,
        momentum=params.momentum,
        weight_decay=params.weight_decay,
    )
    rng = np.random.default_rng(params.seed)

    metrics_path = loss_path = ckpt_dir = None
    loss_fh = loss_writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        loss_path = os.path.join(out_dir, "loss.csv")
        ckpt_dir = os.path.join(out_dir, "checkpoint-best")
        for path in (metrics_path, loss_path):
            if os.path.exists(path):
                os.remove(path)
        loss_fh = open(loss_path, "w", newline="")
        loss_writer = csv.writer(loss_fh)
        loss_writer.writerow(("iteration", "lr", "loss"))

    losses: list[float] = []
    history = []
    best_dsc, best_epoch = -1.0, -1
    aborted, abort_reason = False, ""

    def run_eval(epoch: int) -> float:
        train_res = evaluate(model, train_samples)
        val_res = evaluate(model, val_samples)
        rows = metric_rows(train_res, epoch, "train") + metric_rows(val_res, epoch, "val")
        if metrics_path:
            append_metrics_csv(metrics_path, rows)
        history.append((epoch, "train", train_res["mean"][0]))
        history.append((epoch, "val", val_res["mean"][0]))
        nonlocal best_dsc, best_epoch
        if val_res["mean"][0] > best_dsc:
            best_dsc, best_epoch = val_res["mean"][0], epoch
            if ckpt_dir:
                save_checkpoint(
                    ckpt_dir,
                    model,
                    extra={"epoch": epoch, "val_dsc": best_dsc, "data": data_spec.to_dict()},
                )
        return train_res["mean"][0]

    try:
        stop = False
        for epoch in range(params.epochs):
            order = rng.permutation(len(train_samples))
            for start in range(0, len(order), params.batch_size):
                batch = [train_samples[i] for i in order[start : start + params.batch_size]]
                if params.augment:
                    batch = [augment_sample(s, rng) for s in batch]
                images, labels = collate(batch)
                model.zero_grad()
                loss = seg_loss(model(Tensor(images)), labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at iteration {optimizer.iteration}")
                loss.backward()
                lr = optimizer.step()
                losses.append(value)
                if loss_writer:
                    loss_writer.writerow((optimizer.iteration - 1, repr(lr), repr(value)))
            if (epoch + 1) % params.eval_every == 0 or epoch == params.epochs - 1:
                train_dsc = run_eval(epoch)
                if stop_dsc is not None and train_dsc >= stop_dsc:
                    stop = True
            if stop:
                break
        if params.epochs == 0 and ckpt_dir:
            save_checkpoint(
                ckpt_dir,
                model,
                extra={"epoch": -1, "val_dsc": -1.0, "data": data_spec.to_dict()},
            )
    except NumericError as exc:
        aborted, abort_reason = True, str(exc)
    finally:
        if loss_fh:
            loss_fh.close()

    return TrainResult(
        best_dsc=best_dsc,
        best_epoch=best_epoch,
        final_loss=losses[-1] if losses else float("nan"),
        losses=losses,
        checkpoint_dir=ckpt_dir,
        metrics_path=metrics_path,
        aborted=aborted,
        abort_reason=abort_reason,
        history=history,
    )
