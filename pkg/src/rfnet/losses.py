"""Invariance metric and the multitask training losses.

The invariance term compares the block's invariant outputs before and after
rotating its input. Both maps are flattened, L2-normalized, and compared
through a Gaussian RBF kernel; the loss is the kernel-induced squared
distance 2 * (1 - k), which is zero exactly at equality and bounded by 2.
(The raw kernel similarity is also available for comparison runs.)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, ShapeError, add, affine, exp, mean, reduce_sum, reshape,
                     rows_l2_normalize, rows_sq_distance, smooth_l1,
                     softmax_cross_entropy)

KERNEL_FORMS = ("distance", "similarity")


@dataclass
class LossConfig:
    sigma: float = 1.0
    lambda_reg: float = 0.2
    lambda_ri: float = 0.5
    kernel_form: str = "distance"
    sigma_mode: str = "fixed"  # or "median": sigma from the batch's median distance

    def validate(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.lambda_reg < 0 or self.lambda_ri < 0:
            raise ValueError("loss weights must be non-negative")
        if self.kernel_form not in KERNEL_FORMS:
            raise ValueError(f"kernel_form must be one of {KERNEL_FORMS}")
        if self.sigma_mode not in ("fixed", "median"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        return self


@dataclass
class LossReport:
    cls: float
    reg: float
    ri: float
    total: float


def _as_rows(t: Tensor) -> Tensor:
    """Flatten to (B, D), treating the leading axis as the batch."""
    if t.data.ndim == 1:
        return reshape(t, (1, t.shape[0]))
    return reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))


def _row_kernel(a_rows: Tensor, b_rows: Tensor, sigma: float) -> Tensor:
    """Row-wise Gaussian RBF similarity exp(-|a-b|^2 / (2 sigma^2)) -> (B,)."""
    return exp(affine(rows_sq_distance(a_rows, b_rows), -1.0 / (2.0 * sigma * sigma), 0.0))


def rbf_kernel(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    """Gaussian RBF similarity of two equal-length vectors, in (0, 1]."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if a.data.size != b.data.size:
        raise ShapeError(f"rbf_kernel length mismatch: {a.shape} vs {b.shape}")
    k = _row_kernel(reshape(a, (1, a.data.size)), reshape(b, (1, b.data.size)), sigma)
    return reshape(k, ())


def median_sigma(a: Tensor, b: Tensor) -> float:
    """Median row-wise distance of the normalized pair; the median heuristic."""
    an = rows_l2_normalize(_as_rows(a)).data
    bn = rows_l2_normalize(_as_rows(b)).data
    med = float(np.median(np.sqrt(((an - bn) ** 2).sum(axis=1))))
    return max(med, 1e-6)


def _row_invariance(a: Tensor, b: Tensor, sigma: float, form: str = "distance") -> Tensor:
    """Per-row invariance term on L2-normalized rows -> (B,)."""
    k = _row_kernel(rows_l2_normalize(_as_rows(a)), rows_l2_normalize(_as_rows(b)), sigma)
    if form == "similarity":
        return k
    if form == "distance":
        return affine(k, -2.0, 2.0)
    raise ValueError(f"kernel_form must be one of {KERNEL_FORMS}, got {form!r}")


def invariance_distance(y0: Tensor, yr: Tensor, sigma: float = 1.0) -> Tensor:
    """Kernel-induced squared distance of two normalized maps, in [0, 2).

    Zero exactly when the normalized inputs coincide. All-zero inputs have no
    normalization and raise.
    """
    if y0.shape != yr.shape:
        raise ShapeError(f"invariance_distance shapes {y0.shape} vs {yr.shape}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = _row_invariance(reshape(y0, (1, y0.data.size)), reshape(yr, (1, yr.data.size)), sigma)
    return reshape(d, ())


def l_ri_star(ri_unrotated: Tensor, ri_rotated: list[Tensor], sigma: float = 1.0,
              form: str = "distance") -> Tensor:
    """Batch-mean invariance term against the average of the rotated outputs.

    ri_unrotated is (B, ...); ri_rotated holds the block outputs for the n-1
    nonzero angles, each (B, ...). With no rotated copies (n = 1) the term is
    zero by convention and a warning is emitted.
    """
    if not ri_rotated:
        warnings.warn("invariance term is zero: no rotated outputs (angle count 1)")
        return Tensor(np.zeros((), dtype=ri_unrotated.dtype))
    for t in ri_rotated:
        if t.shape != ri_unrotated.shape:
            raise ShapeError(f"rotated output shape {t.shape} vs {ri_unrotated.shape}")
    avg = ri_rotated[0]
    for t in ri_rotated[1:]:
        avg = add(avg, t)
    avg = affine(avg, 1.0 / len(ri_rotated), 0.0)
    return mean(_row_invariance(ri_unrotated, avg, sigma, form))


def l_ri_full(ri_unrotated: Tensor, ri_rotated: list[Tensor], sigma: float = 1.0,
              form: str = "distance") -> Tensor:
    """The exact per-angle double sum with 1/(2 N (n-1)) normalization.

    Kept as the reference for the averaged substitute above; the two differ
    in general because the kernel of a mean is not the mean of kernels.
    """
    if not ri_rotated:
        warnings.warn("invariance term is zero: no rotated outputs (angle count 1)")
        return Tensor(np.zeros((), dtype=ri_unrotated.dtype))
    n_batch = ri_unrotated.shape[0] if ri_unrotated.data.ndim > 1 else 1
    total = None
    for t in ri_rotated:
        if t.shape != ri_unrotated.shape:
            raise ShapeError(f"rotated output shape {t.shape} vs {ri_unrotated.shape}")
        term = reduce_sum(_row_invariance(ri_unrotated, t, sigma, form))
        total = term if total is None else add(total, term)
    return affine(total, 1.0 / (2.0 * n_batch * len(ri_rotated)), 0.0)


def classification_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of (B, K) logits against integer labels."""
    return softmax_cross_entropy(logits, labels)


def regression_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Smooth L1 (quadratic inside |x| < 1, linear outside), mean over elements."""
    return smooth_l1(pred, target)


def _term_value(term) -> float:
    return float(term.data) if isinstance(term, Tensor) else float(term)


def total_loss(cls, reg, ri, config: LossConfig) -> tuple[Tensor | float, LossReport]:
    """Combine the three terms: total = cls + lambda_reg * reg + lambda_ri * ri.

    Terms may be scalar Tensors (training: the combination stays on the
    graph; zero-weight terms are left out of it) or plain floats (reporting).
    Returns the combined total alongside a plain-float report.
    """
    config.validate()
    values = {"cls": _term_value(cls), "reg": _term_value(reg), "ri": _term_value(ri)}
    for name, v in values.items():
        if not np.isfinite(v):
            raise FloatingPointError(f"loss term {name!r} is non-finite: {v}")
        if v < 0:
            raise ValueError(f"loss term {name!r} must be non-negative, got {v}")

    if any(isinstance(t, Tensor) for t in (cls, reg, ri)):
        def _t(x):
            return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        total = _t(cls)
        if config.lambda_reg != 0.0:
            total = add(total, affine(_t(reg), config.lambda_reg, 0.0))
        if config.lambda_ri != 0.0:
            total = add(total, affine(_t(ri), config.lambda_ri, 0.0))
        total_value = float(total.data)
    else:
        total = values["cls"] + config.lambda_reg * values["reg"] + config.lambda_ri * values["ri"]
        total_value = total
    report = LossReport(cls=values["cls"], reg=values["reg"], ri=values["ri"], total=total_value)
    return total, report
