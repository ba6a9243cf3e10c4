"""Training loop, evaluation metrics, and run reporting.

A training step follows the multitask recipe: cross-entropy on the
classifier (fed by the invariant map), smooth L1 on the sin/cos orientation
head (fed by the sensitive map), and, when weighted, the invariance term
comparing the block's invariant output for the original features against
each rotated copy of those features. Runs are bitwise deterministic for a
fixed seed on one thread.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig, config_from_text
from .data import Dataset
from .losses import (LossConfig, LossReport, classification_loss, l_ri_star, median_sigma,
                     regression_loss, total_loss)
from .model import Model, ModelSpec
from .optim import Sgd
from .rng import Prng
from .rotation import angle_set, rotate_map
from .tensor import OverflowInComputeError, Tensor, no_grad
from .losses import _row_invariance


@dataclass
class OptSettings:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay: float = 0.95
    lr_decay_every: int = 10
    batch_size: int = 32


@dataclass
class MetricsReport:
    accuracy: float
    angular_mae: float
    invariance_score: float
    rs_invariance_score: float
    loss_history: list[LossReport] = field(default_factory=list)
    param_total: int = 0
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        d = {"accuracy": self.accuracy, "angular_mae": self.angular_mae,
             "invariance_score": self.invariance_score,
             "rs_invariance_score": self.rs_invariance_score,
             "loss_history": [[h.cls, h.reg, h.ri, h.total] for h in self.loss_history],
             "param_total": self.param_total, "wall_time_s": self.wall_time_s}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        return cls(accuracy=d["accuracy"], angular_mae=d["angular_mae"],
                   invariance_score=d["invariance_score"],
                   rs_invariance_score=d["rs_invariance_score"],
                   loss_history=[LossReport(*row) for row in d["loss_history"]],
                   param_total=d["param_total"], wall_time_s=d["wall_time_s"])


def history_csv(history: list[LossReport]) -> str:
    """Deterministic per-epoch loss table (no timing columns on purpose)."""
    lines = ["epoch,cls,reg,ri,total"]
    for i, h in enumerate(history):
        lines.append(f"{i},{h.cls!r},{h.reg!r},{h.ri!r},{h.total!r}")
    return "\n".join(lines) + "\n"


def model_spec_from_config(cfg: RunConfig) -> ModelSpec:
    return ModelSpec(image_size=cfg["data.image_size"], num_classes=cfg["data.classes"],
                     block=cfg["model.block"], rfn=cfg.rfn_config(),
                     init_std=cfg["optim.init_std"]).validate()


def opt_settings_from_config(cfg: RunConfig) -> OptSettings:
    return OptSettings(lr=cfg["optim.lr"], momentum=cfg["optim.momentum"],
                       weight_decay=cfg["optim.weight_decay"],
                       lr_decay=cfg["optim.lr_decay"],
                       lr_decay_every=cfg["optim.lr_decay_every"],
                       batch_size=cfg["train.batch_size"])


def model_from_checkpoint(ck: Checkpoint) -> Model:
    cfg = config_from_text(ck.config_text)
    model = Model(model_spec_from_config(cfg), seed=cfg["train.seed"])
    model.load_state(ck.tensors)
    return model


def _ri_loss_term(model: Model, out, images: Tensor, loss_cfg: LossConfig,
                  rotate_target: str, pick_angle: int | None):
    """Invariance term: block outputs for original vs rotated inputs."""
    n = model.spec.rfn.n
    if model.spec.block != "rfn" or loss_cfg.lambda_ri == 0.0 or n < 2:
        return Tensor(np.zeros((), dtype=np.float32))
    angles = list(angle_set(n))[1:]
    if pick_angle is not None:
        angles = [angles[pick_angle % len(angles)]]
    if rotate_target == "features":
        rotated = [model.block_apply(rotate_map(out.features, th))[0] for th in angles]
    else:
        rotated = [model.forward(rotate_map(images, th)).ri for th in angles]
    sigma = loss_cfg.sigma
    if loss_cfg.sigma_mode == "median":
        avg = rotated[0].data if len(rotated) == 1 else \
            np.mean([r.data for r in rotated], axis=0)
        flat = avg.reshape(avg.shape[0], -1)
        sigma = median_sigma(Tensor(out.ri.data.reshape(flat.shape)), Tensor(flat))
    return l_ri_star(out.ri, rotated, sigma, loss_cfg.kernel_form)


def train(spec: ModelSpec, dataset: Dataset, opt: OptSettings, epochs: int, seed: int,
          loss_cfg: LossConfig | None = None, eval_dataset: Dataset | None = None,
          config_text: str = "", rotate_target: str = "features",
          ri_angle_sample: bool = False) -> tuple[Checkpoint, MetricsReport]:
    """Deterministic single-threaded training; returns final weights + metrics.

    With epochs = 0 the checkpoint holds the initialization and the loss
    history is empty. A non-finite loss aborts, naming the epoch and batch.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    loss_cfg = (loss_cfg or LossConfig()).validate()
    start = time.perf_counter()
    model = Model(spec, seed=seed)
    optimizer = Sgd(model.params, lr=opt.lr, momentum=opt.momentum,
                    weight_decay=opt.weight_decay)
    shuffle_stream = Prng(seed).spawn(0x22)
    angle_stream = Prng(seed).spawn(0x33)

    images = dataset.images()
    labels = dataset.labels()
    targets = dataset.orientation_targets()
    n_samples = len(dataset)
    history: list[LossReport] = []

    for epoch in range(epochs):
        optimizer.lr = opt.lr * opt.lr_decay ** (epoch // opt.lr_decay_every)
        order = shuffle_stream.shuffled_indices(n_samples)
        sums = np.zeros(4)
        seen = 0
        for b, lo in enumerate(range(0, n_samples, opt.batch_size)):
            idx = order[lo:lo + opt.batch_size]
            xb = Tensor(images[idx], requires_grad=False)
            try:
                out = model.forward(xb)
                cls = classification_loss(out.logits, labels[idx])
                reg = regression_loss(out.orientation, Tensor(targets[idx]))
                pick = int(angle_stream.integers(1, 8)[0]) if ri_angle_sample else None
                ri = _ri_loss_term(model, out, xb, loss_cfg, rotate_target, pick)
                total, report = total_loss(cls, reg, ri, loss_cfg)
            except OverflowInComputeError as e:
                raise RuntimeError(f"training diverged at epoch {epoch} batch {b}: {e}") from e
            if not math.isfinite(report.total):
                raise RuntimeError(f"non-finite loss at epoch {epoch} batch {b}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums += np.array([report.cls, report.reg, report.ri, report.total]) * len(idx)
            seen += len(idx)
        means = sums / seen
        history.append(LossReport(cls=float(means[0]), reg=float(means[1]),
                                  ri=float(means[2]), total=float(means[3])))

    report = evaluate(model, eval_dataset if eval_dataset is not None else dataset,
                      loss_cfg)
    report.loss_history = history
    report.wall_time_s = time.perf_counter() - start
    ck = Checkpoint(config_text=config_text, tensors=model.state())
    return ck, report


def _wrap_angle(delta: np.ndarray) -> np.ndarray:
    return np.abs((delta + math.pi) % (2.0 * math.pi) - math.pi)


def evaluate(model: Model, dataset: Dataset, loss_cfg: LossConfig | None = None,
             batch_size: int = 128) -> MetricsReport:
    """Pure evaluation pass: accuracy, angular error, invariance of both maps.

    The invariance score is the mean normalized-kernel distance between the
    block output for the features and for their quarter-turn rotation.
    """
    if len(dataset) == 0:
        raise ValueError("evaluation dataset is empty")
    loss_cfg = (loss_cfg or LossConfig()).validate()
    start = time.perf_counter()
    images = dataset.images()
    labels = dataset.labels()
    targets = dataset.orientation_targets()
    orientations = dataset.orientations().astype(np.float64)

    correct = 0
    ang_err = np.zeros(0)
    ri_rows: list[np.ndarray] = []
    rs_rows: list[np.ndarray] = []
    sums = np.zeros(3)

    with no_grad(), warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # single-angle term warning
        for lo in range(0, len(dataset), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(dataset)))
            xb = Tensor(images[idx])
            out = model.forward(xb)
            correct += int((out.logits.data.argmax(axis=1) == labels[idx]).sum())
            pred_theta = np.arctan2(out.orientation.data[:, 0].astype(np.float64),
                                    out.orientation.data[:, 1].astype(np.float64))
            ang_err = np.concatenate([ang_err, _wrap_angle(pred_theta - orientations[idx])])

            feats_rot = rotate_map(out.features, math.pi / 2)
            ri_r, rs_r, _ = model.block_apply(feats_rot)
            ri_rows.append(_invariance_rows(out.ri.data, ri_r.data, loss_cfg.sigma))
            rs_rows.append(_invariance_rows(out.rs.data, rs_r.data, loss_cfg.sigma))

            cls = classification_loss(out.logits, labels[idx])
            reg = regression_loss(out.orientation, Tensor(targets[idx]))
            ri = _ri_loss_term(model, out, xb, loss_cfg, "features", None)
            sums += np.array([float(cls.data), float(reg.data), float(ri.data)]) * len(idx)

    means = sums / len(dataset)
    _, loss_report = total_loss(float(means[0]), float(means[1]), float(means[2]), loss_cfg)
    return MetricsReport(accuracy=correct / len(dataset),
                         angular_mae=float(ang_err.mean()),
                         invariance_score=float(np.concatenate(ri_rows).mean()),
                         rs_invariance_score=float(np.concatenate(rs_rows).mean()),
                         loss_history=[loss_report],
                         param_total=model.count_params(),
                         wall_time_s=time.perf_counter() - start)


def _invariance_rows(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    rows_a = Tensor(a.reshape(a.shape[0], -1).astype(np.float64))
    rows_b = Tensor(b.reshape(b.shape[0], -1).astype(np.float64))
    return _row_invariance(rows_a, rows_b, sigma).data
