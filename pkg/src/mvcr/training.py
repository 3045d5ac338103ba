"""Optimization protocol: dual-rate Adam, pretraining phase, joint phase.

Runs with pools first pretrain them alone on the reconstruction loss with the
backbone and head frozen, then fine-tune everything jointly: the task loss
updates all parameters at the small rate while the reconstruction loss
additionally updates the pools at the large rate, in that fixed order within
each step. Runs without pools (vanilla or baseline-regularized) skip the
pretraining phase and train for the joint epochs only, which keeps them
comparable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import augment, nn
from . import tensor as T
from .data import TaskData, iter_batches
from .model import Batch, EncoderModel
from .tensor import Tape, Tensor

PHASES = ("hae_pretrain", "joint")


@dataclass(frozen=True)
class TrainSchedule:
    total_epochs: int = 100
    pretrain_epochs: int = 20
    batch_size: int = 32
    lr_task: float = 2e-5
    lr_mse: float = 2e-3
    seed: int = 0
    baseline_kind: str | None = None
    baseline_strength: float = 0.0
    eval_every: int = 1

    def __post_init__(self):
        if not 0 <= self.pretrain_epochs <= self.total_epochs:
            raise ValueError(
                f"pretrain epochs {self.pretrain_epochs} must fit in "
                f"{self.total_epochs} total")
        if self.lr_task <= 0 or self.lr_mse <= 0:
            raise ValueError("learning rates must be positive")
        if self.baseline_kind is not None \
                and self.baseline_kind not in nn.BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.baseline_kind!r}; "
                             f"expected one of {nn.BASELINE_KINDS}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


class Adam:
    """Adam with one shared step counter; absent gradients count as zero."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor],
             grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p in params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            m = self._m.get(id(p))
            if m is None:
                m = self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)
            v = self._v[id(p)]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)


@dataclass
class TrainRun:
    """History plus parameter snapshots at the best dev epoch and the end."""

    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev: float = -np.inf
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    final_state: dict[str, np.ndarray] = field(default_factory=dict)


def _snapshot(model: EncoderModel) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.named_params().items()}


def _total_recon(model: EncoderModel, acts, seed: int, step: int,
                 pad_mask, trace=None) -> Tensor | None:
    total = None
    for layer in sorted(acts):
        loss = augment.reconstruction_loss(
            acts[layer], model.pools[layer], model.mvcr_cfg, seed, step,
            layer, pad_mask, trace)
        total = loss if total is None else T.add(total, loss)
    return total


def _check_finite(epoch: int, step: int, **losses: float) -> None:
    bad = {k: v for k, v in losses.items()
           if v is not None and not np.isfinite(v)}
    if bad:
        raise FloatingPointError(
            f"non-finite loss at epoch {epoch} step {step}: {bad}; "
            f"finite losses: { {k: v for k, v in losses.items() if k not in bad} }")


def train_step(model: EncoderModel, batch: Batch, sched: TrainSchedule,
               phase: str, step: int, opt_task: Adam, opt_mse: Adam,
               epoch: int = 0, init_state: dict[str, np.ndarray] | None = None,
               trace=None) -> dict:
    """One optimizer step; returns {task_loss, mse_loss} (absent as None)."""
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    seed = sched.seed

    if phase == "hae_pretrain":
        with Tape() as tape:
            _, acts = model.encode(batch.ids, "train", seed, step,
                                   batch.pad_mask, trace)
            recon = _total_recon(model, acts, seed, step, batch.pad_mask,
                                 trace)
        if recon is None:
            raise ValueError("pretraining phase needs insertion pools")
        mse_val = float(recon.data)
        _check_finite(epoch, step, mse_loss=mse_val)
        grads = T.backward(tape, recon)
        opt_mse.step(model.hae_params(), grads)
        return {"task_loss": None, "mse_loss": mse_val}

    baseline = None
    if sched.baseline_kind in ("dropout", "gaussian_noise"):
        baseline = (sched.baseline_kind, sched.baseline_strength)
    with Tape() as tape:
        task_loss, _, acts = model.task_forward(batch, "train", seed, step,
                                                trace, baseline)
        if sched.baseline_kind == "weight_decay_to_init":
            if init_state is None:
                raise ValueError("weight_decay_to_init needs the initial "
                                 "parameter snapshot")
            named = model.named_params()
            decay_params = [named[k] for k in sorted(named)
                            if not k.startswith("hae.")]
            inits = [init_state[k] for k in sorted(named)
                     if not k.startswith("hae.")]
            task_loss = T.add(task_loss, nn.weight_decay_to_init(
                decay_params, inits, sched.baseline_strength))
        recon = _total_recon(model, acts, seed, step, batch.pad_mask, trace)
        task_val = float(task_loss.data)
        mse_val = None if recon is None else float(recon.data)
    _check_finite(epoch, step, task_loss=task_val, mse_loss=mse_val)
    g_task = T.backward(tape, task_loss)
    g_mse = T.backward(tape, recon) if recon is not None else None
    opt_task.step(model.all_params(), g_task)
    if g_mse is not None:
        opt_mse.step(model.hae_params(), g_mse)
    if sched.baseline_kind == "mixout":
        if init_state is None:
            raise ValueError("mixout needs the initial parameter snapshot")
        named = model.named_params()
        keys = [k for k in sorted(named) if not k.startswith("hae.")]
        nn.mixout([named[k] for k in keys], [init_state[k] for k in keys],
                  sched.baseline_strength, seed, step)
    return {"task_loss": task_val, "mse_loss": mse_val}


# ---------------------------------------------------------------------------
# metrics

def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    return float((preds == labels).mean())


def token_f1(preds: np.ndarray, labels: np.ndarray,
             mask: np.ndarray) -> float:
    """Micro F1 over non-background tags at scored positions."""
    p, l = preds[mask], labels[mask]
    tp = int(((p == l) & (l != 0)).sum())
    pred_pos = int((p != 0).sum())
    true_pos = int((l != 0).sum())
    if pred_pos == 0 or true_pos == 0 or tp == 0:
        return 0.0
    precision = tp / pred_pos
    recall = tp / true_pos
    return 2 * precision * recall / (precision + recall)


def evaluate(model: EncoderModel, split, batch_size: int = 64,
             mvcr_at_inference: bool = False, eval_seed: int = 909) -> float:
    """Accuracy (sequence task) or micro F1 (token task) over a split.

    mvcr_at_inference keeps the stochastic path active with a fixed eval
    seed; the default evaluates the plugged-out behavior.
    """
    all_preds, all_labels, all_masks = [], [], []
    for i, batch in enumerate(iter_batches(split, batch_size, 0, 0,
                                           shuffle=False)):
        with Tape():
            _, preds, _ = model.task_forward(
                batch, "eval", seed=eval_seed, step=i,
                mvcr_at_inference=mvcr_at_inference)
        all_preds.append(preds)
        all_labels.append(batch.labels)
        if batch.label_mask is not None:
            all_masks.append(batch.label_mask)
    preds = np.concatenate(all_preds)
    labels = np.concatenate(all_labels)
    if model.cfg.task == "sequence-classify":
        return accuracy(preds, labels)
    mask = np.concatenate(all_masks) if all_masks \
        else np.ones_like(labels, dtype=bool)
    return token_f1(preds, labels, mask)


# ---------------------------------------------------------------------------
# full runs

def run_training(model: EncoderModel, dataset: TaskData,
                 sched: TrainSchedule, log_path=None) -> TrainRun:
    """Phased training with best-dev selection and a JSONL epoch log."""
    for name, split in (("train", dataset.train), ("dev", dataset.dev),
                        ("test", dataset.test)):
        if len(split) == 0:
            raise ValueError(f"{name} split is empty")

    init_state = _snapshot(model)
    opt_task = Adam(sched.lr_task)
    opt_mse = Adam(sched.lr_mse)
    n_pretrain = sched.pretrain_epochs if model.pools else 0
    n_joint = sched.total_epochs - sched.pretrain_epochs
    run = TrainRun()
    log_file = open(log_path, "w") if log_path else None
    step = 0
    try:
        for epoch in range(1, n_pretrain + n_joint + 1):
            phase = "hae_pretrain" if epoch <= n_pretrain else "joint"
            t0 = time.monotonic()
            task_losses, mse_losses = [], []
            for batch in iter_batches(dataset.train, sched.batch_size,
                                      sched.seed, epoch):
                metrics = train_step(model, batch, sched, phase, step,
                                     opt_task, opt_mse, epoch, init_state)
                step += 1
                if metrics["task_loss"] is not None:
                    task_losses.append(metrics["task_loss"])
                if metrics["mse_loss"] is not None:
                    mse_losses.append(metrics["mse_loss"])
            do_eval = phase == "joint" and (
                epoch % sched.eval_every == 0
                or epoch == n_pretrain + n_joint)
            dev = evaluate(model, dataset.dev, sched.batch_size) \
                if do_eval else None
            test = evaluate(model, dataset.test, sched.batch_size) \
                if do_eval else None
            record = {
                "epoch": epoch,
                "phase": phase,
                "task_loss": None if not task_losses
                else float(np.mean(task_losses)),
                "mse_loss": None if not mse_losses
                else float(np.mean(mse_losses)),
                "dev_metric": dev,
                "test_metric": test,
                "wall_ms": int((time.monotonic() - t0) * 1000),
            }
            run.history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if dev is not None and dev > run.best_dev:
                run.best_dev = dev
                run.best_epoch = epoch
                run.best_state = _snapshot(model)
    finally:
        if log_file:
            log_file.close()
    run.final_state = _snapshot(model)
    if not run.best_state:  # no eval epochs at all
        run.best_state = run.final_state
        run.best_epoch = len(run.history)
    return run


def load_state(model: EncoderModel, state: dict[str, np.ndarray]) -> None:
    """Copy a snapshot back into the model's parameters."""
    named = model.named_params()
    missing = sorted(set(named) - set(state))
    extra = sorted(set(state) - set(named))
    if missing or extra:
        raise ValueError(f"state mismatch; missing {missing[:3]}, "
                         f"unexpected {extra[:3]}")
    for k, p in named.items():
        if p.data.shape != state[k].shape:
            raise ValueError(f"shape mismatch for {k}: "
                             f"{p.data.shape} vs {state[k].shape}")
        p.data = state[k].astype(p.data.dtype).copy()
