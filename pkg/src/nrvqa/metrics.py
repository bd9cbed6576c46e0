"""SROCC and PLCC between predicted and reference quality scores."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedCorrelationError


@dataclass
class EvalReport:
    n: int
    srocc: float
    plcc: float
    logistic_fit_applied: bool = False
    undefined: bool = False
    note: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"{x.size} predictions vs {y.size} labels")
    if x.size < 2:
        raise ShapeError("correlation needs at least two samples")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise UndefinedCorrelationError("non-finite values in correlation input")
    return x, y


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def srocc(predictions, labels) -> float:
    """Spearman correlation: Pearson on mid-ranks (ties get their average rank)."""
    x, y = _pair(predictions, labels)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def logistic4(x, b1, b2, b3, b4):
    return (b1 - b2) / (1.0 + np.exp(-(x - b3) / np.abs(b4))) + b2


def fit_logistic(predictions, labels) -> np.ndarray | None:
    """Least-squares fit of the 4-parameter logistic mapping predictions onto labels.

    Returns the mapped predictions, or None when the fit does not converge.
    """
    x, y = _pair(predictions, labels)
    p0 = [y.max(), y.min(), float(np.median(x)), float(np.std(x)) or 1.0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", OptimizeWarning)
            warnings.simplefilter("ignore", RuntimeWarning)
            params, _ = curve_fit(logistic4, x, y, p0=p0, maxfev=20000)
    except (RuntimeError, OptimizeWarning, ValueError):
        return None
    mapped = logistic4(x, *params)
    if not np.isfinite(mapped).all() or np.ptp(mapped) == 0.0:
        return None
    return mapped


def _plcc(predictions, labels, apply_logistic: bool) -> tuple[float, bool]:
    x, y = _pair(predictions, labels)
    if apply_logistic:
        pearson(x, y)  # surface zero variance before fitting
        mapped = fit_logistic(x, y)
        if mapped is not None:
            return pearson(mapped, y), True
        warnings.warn("logistic fit did not converge; reporting raw PLCC", RuntimeWarning, stacklevel=3)
    return pearson(x, y), False


def plcc(predictions, labels, apply_logistic: bool = False) -> float:
    return _plcc(predictions, labels, apply_logistic)[0]


def evaluate_predictions(predictions, labels, apply_logistic: bool = False) -> EvalReport:
    """Build an EvalReport; zero-variance inputs give a flagged report with NaN metrics."""
    x = np.asarray(predictions, dtype=np.float64).ravel()
    try:
        s = srocc(predictions, labels)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p, fitted = _plcc(predictions, labels, apply_logistic)
    except UndefinedCorrelationError as exc:
        return EvalReport(int(x.size), math.nan, math.nan, False, True, str(exc))
    note = "logistic fit failed, raw PLCC" if apply_logistic and not fitted else ""
    return EvalReport(int(x.size), s, p, fitted, False, note)
