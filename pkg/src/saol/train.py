"""SGD training loop with a cosine schedule, mixing losses, and resume.

Checkpoints taken at epoch boundaries capture parameters, momentum buffers,
the epoch counter, and the data generator state, so a resumed float32 run
retraces the interrupted one bitwise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .checkpoint import save_state
from .cutmix import downsample_mask, sample_cutmix
from .data import MetricsLog, augment_batch, one_hot
from .head import SaolClassifier
from .losses import LossConfig, total_loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    cutmix: bool = True
    cutmix_alpha: float = 1.0
    use_ss1: bool = True
    use_ss2: bool = True
    use_sd: bool = True
    beta: float = 0.5
    w_sl: float = 1.0
    w_ss1: float = 1.0
    w_ss2: float = 1.0
    w_sd: float = 1.0
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if (self.use_ss1 or self.use_ss2) and not self.cutmix:
            raise ValueError("mask and map consistency losses need cutmix enabled")
        self.loss_config()  # reject bad beta or loss weights on construction

    def loss_config(self) -> LossConfig:
        return LossConfig(
            use_ss1=self.use_ss1,
            use_ss2=self.use_ss2,
            use_sd=self.use_sd,
            beta=self.beta,
            w_sl=self.w_sl,
            w_ss1=self.w_ss1,
            w_ss2=self.w_ss2,
            w_sd=self.w_sd,
        )


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Half-cosine decay from ``base_lr`` at epoch 0 toward zero."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


class SGD:
    """Momentum SGD with coupled weight decay on every parameter.

    v <- mu v + g + wd p; p <- p - lr v. Buffers are kept in the parameter
    dtype so a saved-and-restored optimizer continues identically.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        *,
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
    ):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def load_velocity(self, velocity: dict[str, np.ndarray]) -> None:
        for k, v in velocity.items():
            if k not in self.velocity:
                raise KeyError(f"momentum buffer for unknown parameter {k!r}")
            self.velocity[k] = v.astype(self.params[k].data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                continue
            dtype = p.data.dtype
            g = p.grad.astype(dtype, copy=False)
            v = (self.momentum * self.velocity[k] + g + self.weight_decay * p.data).astype(
                dtype, copy=False
            )
            self.velocity[k] = v
            p.data = (p.data - self.lr * v).astype(dtype, copy=False)


def evaluate(
    model: SaolClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    *,
    batch_size: int = 256,
) -> dict[str, float]:
    """Top-1 accuracy of the attended head and, when present, the pooled one."""
    hits = 0
    gap_hits = 0
    n = len(labels)
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size].astype(model.dtype, copy=False)
        yb = labels[start : start + batch_size]
        with no_grad():
            out = model(xb)
        hits += int((out.probs.data.argmax(axis=1) == yb).sum())
        if out.gapfc_probs is not None:
            gap_hits += int((out.gapfc_probs.data.argmax(axis=1) == yb).sum())
    scores = {"acc_saol": hits / n}
    if model.gapfc is not None:
        scores["acc_gapfc"] = gap_hits / n
    return scores


def train(
    model: SaolClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    *,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    metrics_path: str | None = None,
    checkpoint_path: str | None = None,
    start_epoch: int = 0,
    rng: np.random.Generator | None = None,
    velocity: dict[str, np.ndarray] | None = None,
    stop_after: int | None = None,
    log=None,
) -> dict[str, float]:
    """Run epochs ``start_epoch``..``epochs`` and return final metrics.

    ``rng`` and ``velocity`` continue an interrupted run; by default both
    start fresh from ``config.seed``. The single generator drives shuffling,
    augmentation, and mixing in a fixed order, which is what makes resumed
    trajectories reproduce exactly. ``stop_after`` ends the run early at
    that epoch boundary while keeping the full-horizon schedule, leaving a
    checkpoint a later call can pick up.
    """
    num_classes = model.head_config.num_classes
    if labels.max() >= num_classes:
        raise ValueError(f"label {labels.max()} outside the model's {num_classes} classes")
    if (val_images is None) != (val_labels is None):
        raise ValueError("validation images and labels come together")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    optimizer = SGD(
        model.named_params(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    if velocity:
        optimizer.load_velocity(velocity)
    loss_config = config.loss_config()
    metrics = MetricsLog(metrics_path) if metrics_path else None
    targets = one_hot(labels, num_classes)
    n = len(labels)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    scores: dict[str, float] = {}

    for epoch in range(start_epoch, config.epochs):
        optimizer.lr = cosine_lr(config.lr, epoch, config.epochs)
        t0 = time.time()
        perm = rng.permutation(n)
        sums = {"sl": 0.0, "ss1": 0.0, "ss2": 0.0, "sd": 0.0}
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = images[idx].astype(model.dtype, copy=False)
            yb = targets[idx].astype(model.dtype, copy=False)
            if config.augment:
                xb = augment_batch(xb, rng)
            mask_down = None
            teacher_maps = None
            if config.cutmix:
                mixed = sample_cutmix(xb, yb, alpha=config.cutmix_alpha, rng=rng)
                x_in, y_in = mixed.x, mixed.y
            else:
                x_in, y_in = xb, yb
            out = model(x_in)
            if config.use_ss1 or config.use_ss2:
                grid = out.class_maps.shape[2:]
                mask_down = downsample_mask(mixed.mask, grid)
            if config.use_ss2:
                # the map teacher is a stop-gradient target, so its forward
                # pass can skip graph recording entirely
                with no_grad():
                    teacher_maps = model(xb[mixed.partner]).class_maps
            parts = total_loss(
                out, y_in, loss_config, mask_down=mask_down, teacher_maps=teacher_maps
            )
            optimizer.zero_grad()
            parts["total"].backward()
            optimizer.step()
            for key in sums:
                if key in parts:
                    sums[key] += float(parts[key].data)
        means = {k: v / steps_per_epoch for k, v in sums.items()}

        if val_images is not None:
            scores = evaluate(model, val_images, val_labels, batch_size=config.batch_size)
        else:
            scores = evaluate(model, images, labels, batch_size=config.batch_size)
        if metrics is not None:
            metrics.append(
                epoch,
                (epoch + 1) * steps_per_epoch,
                means,
                scores["acc_saol"],
                scores.get("acc_gapfc", 0.0),
            )
        if checkpoint_path is not None:
            save_state(
                checkpoint_path,
                model,
                momentum=optimizer.velocity,
                epoch=epoch + 1,
                rng=rng,
            )
        if log is not None:
            acc = " ".join(f"{k}={v:.4f}" for k, v in scores.items())
            log(
                f"epoch {epoch + 1}/{config.epochs} "
                f"loss={means['sl']:.4f} {acc} ({time.time() - t0:.1f}s)"
            )
        if stop_after is not None and epoch + 1 >= stop_after:
            break
    return scores
