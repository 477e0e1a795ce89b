"""Per-arm state-conditional success probability.

A soft-margin RBF kernel classifier is fitted to (state, outcome)
samples by dual coordinate ascent (most-violating-pair updates, box
constraint C), then its raw decision values are calibrated to
probabilities with a sigmoid fitted by damped Newton maximum
likelihood.  High-dimensional binary states with few observations are
exactly the regime this classifier family handles well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import backend

DEFAULT_TOL = 1e-3


class SingleClassError(ValueError):
    """Training data contains only one outcome label."""


@dataclass(eq=False)
class SuccessModel:
    support_states: np.ndarray  # (n_support, dim) float64 of 0/1 values
    dual_coefs: np.ndarray      # y_i * alpha_i, |coef| <= reg_c
    bias: float
    bandwidth: float
    reg_c: float
    platt_a: float | None = None
    platt_b: float | None = None
    platt_warned: bool = False

    def __post_init__(self):
        if len(self.support_states) != len(self.dual_coefs):
            raise ValueError("support set and coefficients differ in length")
        if len(self.support_states) < 1:
            raise ValueError("model needs at least one support state")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def calibrated(self) -> bool:
        return self.platt_a is not None and self.platt_b is not None


def rbf_kernel(x, y, bandwidth: float) -> float:
    """exp(-|x - y|^2 / (2 bandwidth^2)); symmetric, in (0, 1]."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("mismatched dimensions")
    diff = x - y
    return float(math.exp(-float(diff @ diff) / (2.0 * bandwidth * bandwidth)))


def median_bandwidth(states: np.ndarray) -> float:
    """Median pairwise Euclidean distance, floored so the kernel keeps
    reach across the state cube.

    Samples often cluster in one region of the cube; the raw median
    then yields a kernel too local to say anything about distant
    states, which is exactly where predictions get queried.  The floor
    of sqrt(dim)/2 keeps moderately far states inside the kernel's
    support.  Returns 1.0 for degenerate inputs.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        return 1.0
    floor = math.sqrt(x.shape[1]) / 2.0
    norms = (x * x).sum(axis=1)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    iu = np.triu_indices(len(x), k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return max(med, floor, 1.0)


def train(states, labels, reg_c: float = 1.0, bandwidth: float | None = None,
          tol: float = DEFAULT_TOL) -> SuccessModel:
    """Fit the dual classifier; returns an uncalibrated model.

    Solver: coordinate ascent on the most-violating pair, stopping when
    the maximal KKT violation falls under ``tol`` or after 10*N pair
    updates.  Raises SingleClassError unless both labels are present.
    """
    x = np.ascontiguousarray(np.asarray(states, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(labels, dtype=np.float64))
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("states must be (n, dim) aligned with labels")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassError("training needs both success and failure rows")
    if bandwidth is None:
        bandwidth = median_bandwidth(x)

    gram = backend.rbf_gram(x, bandwidth)
    alpha, bias, _, _ = backend.smo_solve(gram, y, reg_c, tol, 10 * len(y))

    keep = alpha > 1e-9
    if not keep.any():
        keep[int(np.argmax(alpha))] = True
    return SuccessModel(
        support_states=x[keep].copy(),
        dual_coefs=(y[keep] * alpha[keep]).copy(),
        bias=float(bias),
        bandwidth=float(bandwidth),
        reg_c=float(reg_c),
    )


def decision_value(model: SuccessModel, state) -> float:
    """Kernel expansion sum(coef_i * k(support_i, state)) + bias."""
    query = np.ascontiguousarray(np.asarray(state, dtype=np.float64))
    k = backend.rbf_vec(model.support_states, query, model.bandwidth)
    return float(model.dual_coefs @ k + model.bias)


@dataclass
class PlattFit:
    alpha: float
    beta: float
    converged: bool
    n_iter: int
    nll_path: list[float] = field(default_factory=list)


def fit_platt(scores, labels, max_iter: int = 100, tol: float = 1e-5) -> PlattFit:
    """Sigmoid calibration 1/(1 + exp(a*f + b)) by maximum likelihood.

    Damped Newton on the negative log-likelihood with the usual
    smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2); the Armijo
    backtracking guarantees the recorded likelihood path is monotone.
    Hitting the iteration cap returns the best iterate with a warning
    flag instead of failing.
    """
    f = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    if len(f) != len(lab):
        raise ValueError("scores and labels differ in length")
    n_pos = int((lab > 0).sum())
    n_neg = int((lab < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("calibration needs both labels")

    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(lab > 0, hi, lo)

    def objective(a: float, b: float) -> float:
        z = a * f + b
        vals = np.where(
            z >= 0,
            t * z + np.log1p(np.exp(-np.clip(z, 0, None))),
            (t - 1.0) * z + np.log1p(np.exp(np.clip(z, None, 0))),
        )
        return float(vals.sum())

    a = 0.0
    b = math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(a, b)
    path = [fval]
    sigma = 1e-12
    min_step = 1e-10
    converged = False
    it = 0

    for it in range(1, max_iter + 1):
        z = a * f + b
        p = np.empty_like(z)
        pos = z >= 0
        ez = np.exp(-z[pos])
        p[pos] = ez / (1.0 + ez)
        p[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        d1 = t - p
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < tol and abs(g2) < tol:
            converged = True
            it -= 1
            break
        d2 = p * (1.0 - p)
        h11 = float((f * f * d2).sum()) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float((f * d2).sum())
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db

        step = 1.0
        while step >= min_step:
            new_a = a + step * da
            new_b = b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                path.append(fval)
                break
            step /= 2.0
        else:
            break  # line search failed; keep best iterate

    return PlattFit(alpha=a, beta=b, converged=converged, n_iter=it,
                    nll_path=path)


def calibrate(model: SuccessModel, states, labels) -> SuccessModel:
    """Fit the sigmoid on the model's decision values; mutates model."""
    scores = [decision_value(model, s) for s in states]
    fit = fit_platt(scores, labels)
    model.platt_a = fit.alpha
    model.platt_b = fit.beta
    model.platt_warned = not fit.converged
    return model


def predict_success(model: SuccessModel, state) -> float:
    """Calibrated probability 1/(1 + exp(a*f + b)); strictly in (0, 1)."""
    if not model.calibrated:
        raise RuntimeError("model is not calibrated")
    z = model.platt_a * decision_value(model, state) + model.platt_b
    z = min(500.0, max(-500.0, z))
    return 1.0 / (1.0 + math.exp(z))


def marginal_success(model: SuccessModel, probe: Sequence) -> float:
    """Mean predicted success over a non-empty probe set."""
    if len(probe) == 0:
        raise ValueError("probe set must be non-empty")
    return sum(predict_success(model, s) for s in probe) / len(probe)


def fit_success_model(states, labels, reg_c: float = 1.0,
                      bandwidth: float | None = None) -> SuccessModel:
    """Train and calibrate in one step on the same sample set."""
    model = train(states, labels, reg_c=reg_c, bandwidth=bandwidth)
    return calibrate(model, states, labels)
