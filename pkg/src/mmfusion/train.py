"""Training loop: shuffled minibatches, composite loss, AdamW updates."""

from __future__ import annotations

import numpy as np

from .data import labels_of
from .decision import LossBreakdown
from .metrics import compute_metrics
from .optim import AdamW, param_groups
from .tensor import backward


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        self.step = step
        super().__init__(f"non-finite loss {value!r} at optimization step {step}")


def build_optimizer(model):
    tc = model.cfg.trainer
    groups = param_groups(
        model.loss_parameters(),
        {"text_encoder.": tc.lr_text, "image_encoder.": tc.lr_image},
        tc.lr_other)
    return AdamW(groups, weight_decay=tc.weight_decay)


def train_epoch(model, samples, optimizer, vocab_size, shuffle_rng, dropout_rng):
    """One pass over shuffled data; returns the mean LossBreakdown and the
    global step counter reached."""
    order = shuffle_rng.permutation(len(samples))
    batch_size = model.cfg.trainer.batch_size
    sums = np.zeros(4)
    n_batches = 0
    for start in range(0, len(samples), batch_size):
        batch = [samples[i] for i in order[start:start + batch_size]]
        text_b, image_b = model.batches_for(batch, vocab_size)
        try:
            preds = model.forward_batch(text_b, image_b, training=True, rng=dropout_rng)
            total, breakdown = model.loss(preds, labels_of(batch))
        except ValueError as exc:
            if "non-finite" in str(exc):
                raise TrainingDiverged(optimizer.step_count + 1, str(exc)) from exc
            raise
        if not np.isfinite(breakdown.total):
            raise TrainingDiverged(optimizer.step_count + 1, breakdown.total)
        model.zero_grad()
        backward(total)
        optimizer.step()
        sums += (breakdown.loss_text, breakdown.loss_interaction,
                 breakdown.loss_image, breakdown.total)
        n_batches += 1
    model.zero_grad()
    mean = sums / max(n_batches, 1)
    return LossBreakdown(loss_text=mean[0], loss_interaction=mean[1],
                         loss_image=mean[2], gamma=model.cfg.decision.gamma,
                         total=mean[3])


def train_model(model, dataset, log=None):
    """Full training run over the train split; returns per-epoch breakdowns."""
    cfg = model.cfg
    samples = dataset.split("train")
    optimizer = build_optimizer(model)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    history = []
    for epoch in range(cfg.trainer.epochs):
        breakdown = train_epoch(model, samples, optimizer,
                                len(dataset.vocab), shuffle_rng, dropout_rng)
        history.append(breakdown)
        if log:
            log(epoch, breakdown)
    return history


def evaluate(model, samples, vocab_size, batch_size=32):
    """Fused probabilities over an evaluation split (inference mode)."""
    probs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        text_b, image_b = model.batches_for(chunk, vocab_size)
        preds = model.forward_batch(text_b, image_b, training=False)
        fused, _ = model.predict_probs(preds)
        probs.append(fused)
    return np.concatenate(probs, axis=0), labels_of(samples)


def evaluate_metrics(model, samples, vocab_size, n_classes, batch_size=32):
    fused, labels = evaluate(model, samples, vocab_size, batch_size=batch_size)
    return compute_metrics(fused, labels, n_classes=n_classes)
