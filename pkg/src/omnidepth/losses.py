"""ERP-area-weighted depth losses with analytic gradients, and masked metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EmptyMaskError",
    "LossConfig",
    "MetricsReport",
    "average_reports",
    "data_term",
    "depth_loss",
    "grad_term",
    "huber",
    "latitude_weights",
    "masked_mean",
    "metrics",
]

METRIC_EPS = 1e-6
DELTA_THRESHOLD = 1.25


class EmptyMaskError(ValueError):
    """Raised when a masked reduction has no supporting pixels."""


@dataclass(frozen=True)
class LossConfig:
    delta: float = 1.0
    grad_weight: float = 0.5
    scales: int = 4
    use_confidence: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("huber delta must be positive")
        if self.scales < 1:
            raise ValueError("need at least one gradient scale")
        if self.grad_weight < 0:
            raise ValueError("grad_weight must be non-negative")


def latitude_weights(height: int) -> np.ndarray:
    """Per-row solid-angle factor ``cos(phi(v))`` at ERP row centres."""
    if height < 1:
        raise ValueError("height must be at least 1")
    v = np.arange(height, dtype=np.float64)
    return np.cos(np.pi * ((v + 0.5) / height - 0.5))


def huber(r: np.ndarray, delta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Huber value and derivative: ``r^2/2`` inside ``|r| <= delta``,
    ``delta (|r| - delta/2)`` outside."""
    a = np.abs(r)
    quad = a <= delta
    val = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    der = np.where(quad, r, delta * np.sign(r))
    return val, der


def _prep(pred, gt, mask, conf):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"pred and gt must be equal 2-D arrays, got {pred.shape} and {gt.shape}")
    m = np.ones(pred.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    c = np.ones(pred.shape) if conf is None else np.asarray(conf, dtype=np.float64)
    if m.shape != pred.shape or c.shape != pred.shape:
        raise ValueError("mask and confidence must match the depth shape")
    return pred, gt, m, c


def data_term(pred, gt, mask=None, conf=None, weights=None, delta: float = 1.0):
    """``sum_v,u w(v) M C huber(pred - gt)`` and its gradient w.r.t. ``pred``."""
    pred, gt, m, c = _prep(pred, gt, mask, conf)
    w = latitude_weights(pred.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    scale = w[:, None] * m * c
    val, der = huber(pred - gt, delta)
    return float(np.sum(scale * val)), scale * der


def _check_scales(height: int, scales: int) -> None:
    if scales < 1:
        raise ValueError("need at least one gradient scale")
    if scales > 1 and height / 2 ** (scales - 1) < 2:
        raise ValueError(f"height {height} is too small for {scales} gradient scales")


def grad_term(pred, gt, mask=None, conf=None, scales: int = 1, delta: float = 1.0):
    """Multi-scale gradient matching loss and its gradient w.r.t. ``pred``.

    At scale ``r`` the maps are decimated with stride ``2^r``; forward
    differences along u and v of ``pred - gt`` enter a Huber penalty. A
    difference is supervised when both endpoints are masked, its confidence
    is the smaller endpoint confidence, and its row weight is that of the
    difference's first row on the decimated grid. Scales are averaged.
    """
    pred, gt, m, c = _prep(pred, gt, mask, conf)
    _check_scales(pred.shape[0], scales)
    e_full = pred - gt
    grad = np.zeros_like(pred)
    total = 0.0
    for r in range(scales):
        s = 2**r
        e = e_full[::s, ::s]
        mm = m[::s, ::s]
        cc = c[::s, ::s]
        w = latitude_weights(e.shape[0])[:, None]
        g = np.zeros_like(e)

        du = e[:, 1:] - e[:, :-1]
        wu = w * mm[:, 1:] * mm[:, :-1] * np.minimum(cc[:, 1:], cc[:, :-1])
        val, der = huber(du, delta)
        total_r = np.sum(wu * val)
        g[:, 1:] += wu * der
        g[:, :-1] -= wu * der

        dv = e[1:, :] - e[:-1, :]
        wv = w[:-1] * mm[1:, :] * mm[:-1, :] * np.minimum(cc[1:, :], cc[:-1, :])
        val, der = huber(dv, delta)
        total_r += np.sum(wv * val)
        g[1:, :] += wv * der
        g[:-1, :] -= wv * der

        total += total_r
        grad[::s, ::s] += g
    return float(total / scales), grad / scales


def depth_loss(preds, gts, masks=None, confs=None, config: LossConfig = LossConfig()):
    """Frame-averaged ``data + grad_weight * grad`` over ``(S, H, W)`` stacks.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``preds``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] < 1:
        raise ValueError("preds must be a non-empty (S, H, W) stack")
    n = preds.shape[0]
    _check_scales(preds.shape[1], config.scales)

    def pick(a, s):
        return None if a is None else np.asarray(a)[s]

    loss = 0.0
    grad = np.zeros_like(preds)
    for s in range(n):
        conf = pick(confs, s) if config.use_confidence else None
        ld, gd = data_term(preds[s], np.asarray(gts)[s], pick(masks, s), conf, delta=config.delta)
        loss += ld
        grad[s] += gd
        if config.grad_weight:
            lg, gg = grad_term(preds[s], np.asarray(gts)[s], pick(masks, s), conf, config.scales, config.delta)
            loss += config.grad_weight * lg
            grad[s] += config.grad_weight * gg
    return loss / n, grad / n


# -- metrics --------------------------------------------------------------


def masked_mean(f, mask) -> float:
    f = np.asarray(f, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    z = int(m.sum())
    if z == 0:
        raise EmptyMaskError("mask selects no pixels")
    return float(np.sum(f[m]) / z)


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    rmse: float
    log10: float
    delta_1_25: float
    pixels: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(float(d["abs_rel"]), float(d["rmse"]), float(d["log10"]), float(d["delta_1_25"]), int(d["pixels"]))


def metrics(pred, gt, mask_gt=None, mask_method=None, eps: float = METRIC_EPS) -> MetricsReport:
    """Depth metrics over the intersection of the ground-truth and method masks."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    m = np.ones(gt.shape, dtype=bool)
    for extra in (mask_gt, mask_method):
        if extra is not None:
            extra = np.asarray(extra, dtype=bool)
            if extra.shape != gt.shape:
                raise ValueError("masks must match the depth shape")
            m &= extra
    z = int(m.sum())
    if z == 0:
        raise EmptyMaskError("intersection mask is empty")
    p, g = pred[m], gt[m]
    if np.any(~(p > 0)) or np.any(~(g > 0)):
        raise ValueError("depths inside the evaluation mask must be positive")
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / (g + eps))),
        rmse=float(math.sqrt(np.mean(diff * diff))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        delta_1_25=float(np.mean(ratio < DELTA_THRESHOLD)),
        pixels=z,
    )


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of per-scene reports; ``pixels`` is the total count."""
    if not reports:
        raise ValueError("no reports to average")
    n = len(reports)
    return MetricsReport(
        abs_rel=sum(r.abs_rel for r in reports) / n,
        rmse=sum(r.rmse for r in reports) / n,
        log10=sum(r.log10 for r in reports) / n,
        delta_1_25=sum(r.delta_1_25 for r in reports) / n,
        pixels=sum(r.pixels for r in reports),
    )
