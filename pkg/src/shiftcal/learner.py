"""Shallow softmax classifiers trained by weighted cross-entropy gradient descent.

One learner serves three roles: the classifier being calibrated, the
source-vs-target discriminator, and the inner optimizer for Platt scaling.
The objective is always

    sum_i w_i * -log p(y_i | x_i) / sum_i w_i  +  l2_penalty * sum ||W||^2

so multiplying every weight by a positive constant changes nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateWeightsError, NumericError, OptimizationError, ShapeError

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))

__all__ = [
    "LearnerConfig",
    "ProbabilisticModel",
    "softmax",
    "log_softmax",
    "weighted_nll",
    "loss_and_grad",
    "fit",
    "predict_logits",
    "predict_proba",
    "check_weights",
]


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters for :func:`fit`.

    ``architecture="linear"`` is multinomial logistic regression.  With
    ``"mlp"``, ``hidden_units`` lists the width of each hidden layer, so
    ``(16,)`` is one layer and ``(32, 32)`` two.  ``batch_size=None`` means
    full-batch descent with backtracking; an integer switches to plain
    mini-batch SGD at a fixed learning rate.  ``optimizer="lbfgs"`` replaces
    gradient descent with scipy's L-BFGS-B on the same objective and
    gradient (``learning_rate`` and ``batch_size`` are then ignored).
    """

    architecture: Literal["linear", "mlp"] = "linear"
    hidden_units: tuple = (16,)
    activation: Literal["tanh", "relu"] = "tanh"
    l2_penalty: float = 0.0
    learning_rate: float = 1.0
    max_epochs: int = 500
    batch_size: int | None = None
    tolerance: float = 1e-9
    seed: int = 0
    optimizer: Literal["gd", "lbfgs"] = "gd"

    def __post_init__(self):
        if isinstance(self.hidden_units, int):
            object.__setattr__(self, "hidden_units", (self.hidden_units,))
        else:
            object.__setattr__(self, "hidden_units", tuple(int(h) for h in self.hidden_units))
        if self.architecture not in ("linear", "mlp"):
            raise ValueError(f"architecture must be 'linear' or 'mlp', got {self.architecture!r}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be 'tanh' or 'relu', got {self.activation!r}")
        if self.architecture == "mlp" and (not self.hidden_units or min(self.hidden_units) < 1):
            raise ValueError("mlp needs at least one hidden layer with >= 1 unit")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.optimizer not in ("gd", "lbfgs"):
            raise ValueError(f"optimizer must be 'gd' or 'lbfgs', got {self.optimizer!r}")

    @property
    def layer_widths(self) -> tuple:
        return self.hidden_units if self.architecture == "mlp" else ()


def _activate(z, activation):
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z, a, activation):
    if activation == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(z.dtype)


@dataclass(frozen=True, eq=False)
class ProbabilisticModel:
    """A fitted feed-forward softmax classifier.

    ``weights[i]`` has shape ``(fan_in, fan_out)`` and the forward pass is
    ``a = act(a @ W + b)`` for hidden layers, with a linear output layer.
    """

    weights: tuple
    biases: tuple
    activation: str = "tanh"
    training_loss_trace: tuple = field(default=())

    def __post_init__(self):
        W = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        b = tuple(np.array(v, dtype=np.float64) for v in self.biases)
        if len(W) != len(b) or not W:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or v.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {v.shape} do not match")
            if i and W[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} fan-in {w.shape[0]} != previous fan-out")
        for a in W + b:
            a.flags.writeable = False
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "training_loss_trace", tuple(float(v) for v in self.training_loss_trace))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def architecture(self) -> str:
        return "linear" if len(self.weights) == 1 else "mlp"

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs with {self.input_dim} columns, got shape {X.shape}")
        return X

    def hidden(self, X) -> np.ndarray:
        """Penultimate activations (the inputs themselves for a linear model)."""
        a = self._check(X)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = _activate(a @ W + b, self.activation)
        return a

    def logits(self, X) -> np.ndarray:
        return self.hidden(X) @ self.weights[-1] + self.biases[-1]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "activation": self.activation,
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
            "training_loss_trace": list(self.training_loss_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbabilisticModel":
        W, b = [], []
        for layer in d["layers"]:
            W.append(np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"]))
            b.append(np.array(layer["bias"], dtype=np.float64))
        return cls(tuple(W), tuple(b), d.get("activation", "tanh"),
                   tuple(d.get("training_loss_trace", ())))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "ProbabilisticModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def predict_logits(model: ProbabilisticModel, X) -> np.ndarray:
    return model.logits(X)


def predict_proba(model: ProbabilisticModel, X) -> np.ndarray:
    return model.predict_proba(X)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    """Row-wise softmax with max-subtraction; works on a vector or a matrix."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def check_weights(weights, n) -> np.ndarray:
    """Validate a weight vector of length ``n``; ``None`` means all ones."""
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"weights shape {w.shape} does not match {n} samples")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeightsError("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise DegenerateWeightsError("weights sum to zero")
    return w


def weighted_nll(probs, labels, weights=None) -> float:
    """Weighted mean negative log-likelihood, ``sum w_i * -log p_i[y_i] / sum w_i``.

    Probabilities are floored at 1e-12 before the log.
    """
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or y.shape != (P.shape[0],):
        raise ShapeError(f"probs {P.shape} and labels {y.shape} do not match")
    if not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise NumericError("probability rows must sum to 1")
    w = check_weights(weights, P.shape[0])
    picked = np.maximum(P[np.arange(P.shape[0]), y], PROB_FLOOR)
    return float(np.dot(w, -np.log(picked)) / w.sum())


def _forward(params, X, activation):
    pre, acts = [], [X]
    a = X
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        z = a @ params[2 * i] + params[2 * i + 1]
        a = _activate(z, activation)
        pre.append(z)
        acts.append(a)
    logits = a @ params[-2] + params[-1]
    return logits, pre, acts


def loss_and_grad(params: Sequence[np.ndarray], X, y, weights=None, l2_penalty=0.0,
                  activation="tanh"):
    """Objective value and its gradient w.r.t. ``params = [W0, b0, W1, b1, ...]``.

    ``weights`` are normalized internally, so only their proportions matter.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    w = check_weights(weights, n)
    w = w / w.sum()
    logits, pre, acts = _forward(params, X, activation)
    logp = log_softmax(logits)
    picked = logp[np.arange(n), y]
    active = picked > LOG_PROB_FLOOR
    loss = -float(np.dot(w, np.maximum(picked, LOG_PROB_FLOOR)))

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta *= (w * active)[:, None]

    n_layers = len(params) // 2
    grads = [None] * len(params)
    for i in reversed(range(n_layers)):
        W = params[2 * i]
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ W.T) * _activation_grad(pre[i - 1], acts[i], activation)
    if l2_penalty:
        for i in range(n_layers):
            W = params[2 * i]
            loss += l2_penalty * float(np.sum(W * W))
            grads[2 * i] = grads[2 * i] + 2.0 * l2_penalty * W
    return loss, grads


def _init_params(widths, seed):
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        params.append(rng.normal(0.0, 0.1, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


_MAX_HALVINGS = 60
_STEP_GROWTH = 1.5


def fit(config: LearnerConfig, X, y, weights=None, *, n_classes=None,
        init: ProbabilisticModel | None = None) -> ProbabilisticModel:
    """Fit a classifier by minimizing the weighted, L2-penalized cross-entropy.

    Parameters
    ----------
    config : LearnerConfig
    X : array, shape (n, d)
    y : int array, shape (n,)
    weights : array, shape (n,), optional
        Nonnegative per-sample weights; all ones when omitted.
    n_classes : int, optional
        Defaults to ``1 + max(y)``.
    init : ProbabilisticModel, optional
        Warm start.  Its layer shapes must match ``config``; otherwise weights
        are drawn from N(0, 0.1^2) with ``config.seed`` and biases are zero.

    Returns
    -------
    ProbabilisticModel
        With ``training_loss_trace`` holding the objective after every epoch,
        starting with the initial value.  In full-batch mode a step is only
        accepted if it does not increase the objective (the learning rate is
        halved until it does, and grows by 1.5x after each accepted step).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],) or X.shape[0] < 1:
        raise ShapeError(f"X {X.shape} and y {y.shape} are inconsistent")
    w = check_weights(weights, X.shape[0])
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if k < 2 or y.min() < 0 or y.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}) with k >= 2")
    widths = (X.shape[1],) + config.layer_widths + (k,)

    if init is not None:
        params = [np.array(p, dtype=np.float64) for p in init.params()]
        shapes = [p.shape for p in _init_params(widths, 0)]
        if [p.shape for p in params] != shapes:
            raise ShapeError("warm-start model does not match the configured architecture")
    else:
        params = _init_params(widths, config.seed)

    def objective(p):
        return loss_and_grad(p, X, y, w, config.l2_penalty, config.activation)

    try:
        loss, grads = objective(params)
    except NumericError:
        loss = np.nan
    if not np.isfinite(loss):
        raise OptimizationError("initial loss is not finite", epoch=0)
    trace = [loss]

    if config.optimizer == "lbfgs":
        params, trace = _fit_lbfgs(objective, params, config, trace)
    elif config.batch_size is None:
        lr = config.learning_rate
        for epoch in range(1, config.max_epochs + 1):
            for _ in range(_MAX_HALVINGS):
                cand = [p - lr * g for p, g in zip(params, grads)]
                with np.errstate(over="ignore", invalid="ignore"):
                    try:
                        new_loss, new_grads = objective(cand)
                    except NumericError:
                        new_loss = np.inf
                if np.isfinite(new_loss) and new_loss <= loss:
                    break
                lr *= 0.5
            else:
                break
            improvement = loss - new_loss
            params, loss, grads = cand, new_loss, new_grads
            trace.append(loss)
            lr *= _STEP_GROWTH
            if improvement < config.tolerance:
                break
    else:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        n = X.shape[0]
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                if not w[idx].sum() > 0:
                    continue
                try:
                    _, g = loss_and_grad(params, X[idx], y[idx], w[idx],
                                         config.l2_penalty, config.activation)
                except NumericError:
                    raise OptimizationError("non-finite activations", epoch=epoch) from None
                params = [p - config.learning_rate * gi for p, gi in zip(params, g)]
            try:
                new_loss, _ = objective(params)
            except NumericError:
                new_loss = np.nan
            if not np.isfinite(new_loss):
                raise OptimizationError("loss is not finite", epoch=epoch)
            improvement = loss - new_loss
            loss = new_loss
            trace.append(loss)
            if abs(improvement) < config.tolerance:
                break

    return ProbabilisticModel(tuple(params[0::2]), tuple(params[1::2]), config.activation,
                              tuple(trace))


def _fit_lbfgs(objective, params, config, trace):
    from scipy.optimize import minimize

    shapes = [p.shape for p in params]
    sizes = [p.size for p in params]

    def unflatten(theta):
        return [chunk.reshape(shape)
                for chunk, shape in zip(np.split(theta, np.cumsum(sizes)[:-1]), shapes)]

    def f(theta):
        try:
            loss, grads = objective(unflatten(theta))
        except NumericError:
            return np.inf, np.zeros_like(theta)
        return loss, np.concatenate([g.ravel() for g in grads])

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    if config.max_epochs == 0:
        return params, trace
    res = minimize(f, np.concatenate([p.ravel() for p in params]), jac=True, method="L-BFGS-B",
                   callback=record,
                   options={"maxiter": config.max_epochs, "ftol": config.tolerance, "gtol": 1e-10})
    if not np.isfinite(res.fun):
        raise OptimizationError("loss is not finite", epoch=len(trace))
    params = unflatten(res.x)
    final, _ = objective(params)
    if final < trace[-1]:
        trace.append(final)
    return params, trace


def zero_model(input_dim: int, n_classes: int) -> ProbabilisticModel:
    """Linear model with all-zero parameters; predicts the uniform distribution."""
    return ProbabilisticModel((np.zeros((input_dim, n_classes)),), (np.zeros(n_classes),))
