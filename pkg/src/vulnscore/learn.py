"""Linear classifiers over the feature space: Fisher discriminant and SVM.

Both models are trained on standardized columns and produce the same kind of
decision function, f(x) = w . standardize(x) + b, with the tie at exactly 0
classified as vulnerable (the conservative choice for a security screen).

The SVM solves the weighted soft-margin dual by deterministic coordinate
ascent in fixed index order, one instance at a time, with per-instance box
constraints 0 <= alpha_i <= C * weight_i. There is no equality constraint:
the bias is recovered afterwards from the unbounded support vectors (or from
the midpoint of the interval the optimality conditions leave for it). A
sweep whose largest projected-gradient violation falls below ``tol`` is
confirmed by a frozen-weights re-check, so the reported convergence is a
static optimality certificate, not just a by-product of the sweep order.

Instance weights realize metadata-presence weighting: an instance showing
more nonzero layer-3 features can be penalized more heavily for margin
violations. With beta = 0 all weights are exactly 1.0 and training is
bit-for-bit identical to the unweighted problem.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, FeatureVector, Label, Layer, atomic_write_text
from .errors import (
    FormatError,
    ModelError,
    SchemaVersionError,
    UnknownFeatureError,
    ValidationError,
)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


MODEL_SCHEMA_VERSION = "1"


# ---------------------------------------------------------------------------
# Standardization and design matrices


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray
    zero_var: np.ndarray  # bool per column

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        var = X.var(axis=0)  # population variance; n is the fold size, not a sample
        zero = var == 0.0
        sd = np.sqrt(var)
        sd[zero] = 1.0
        return cls(mean, sd, zero)

    def transform(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.mean) / self.sd
        if self.zero_var.any():
            Z[..., self.zero_var] = 0.0
        return Z


@dataclass
class DesignMatrix:
    X: np.ndarray  # standardized rows
    y: np.ndarray  # +1 vulnerable / -1 benign_flaw
    weights: np.ndarray
    features: tuple
    standardizer: Standardizer
    imputation: np.ndarray  # raw column means used for missing values
    raw: np.ndarray  # imputed raw matrix (pre-standardization)


def resolve_mask(dataset: Dataset, mask=None) -> tuple:
    """Feature names selected by ``mask``, in dictionary order."""
    names = dataset.dictionary.names()
    if mask is None:
        selected = list(names)
    else:
        wanted = set(mask)
        for name in wanted:
            dataset.dictionary.get(name)  # raises UnknownFeatureError
        selected = [n for n in names if n in wanted]
    if not selected:
        raise ValidationError("feature mask selects no features", rule="mask")
    return tuple(selected)


def raw_matrix(dataset: Dataset, features) -> np.ndarray:
    """Raw values with NaN for missing entries, rows in dataset order."""
    n, p = len(dataset.instances), len(features)
    M = np.full((n, p), np.nan)
    index = {name: j for j, name in enumerate(features)}
    for i, inst in enumerate(dataset.instances):
        for name, value in inst.features.values.items():
            j = index.get(name)
            if j is not None:
                M[i, j] = float(value)
    return M


def labels_vector(dataset: Dataset) -> np.ndarray:
    return np.array(
        [1.0 if inst.label is Label.VULNERABLE else -1.0 for inst in dataset.instances]
    )


def build_design_matrix(dataset: Dataset, mask=None, weights=None) -> DesignMatrix:
    """Impute, standardize, and label a dataset restricted to ``mask``.

    Missing entries take the column mean over present values (0.0 when a
    column is entirely missing); both the imputation values and the
    standardizer are learned from this dataset, so call it on training rows
    only and reuse the resulting model parameters on anything held out.
    """
    if not dataset.instances:
        raise ValidationError("empty dataset", rule="empty")
    features = resolve_mask(dataset, mask)
    y = labels_vector(dataset)
    if len(set(y.tolist())) < 2:
        raise ModelError("training data contains a single class")

    M = raw_matrix(dataset, features)
    imputation = np.zeros(M.shape[1])
    for j in range(M.shape[1]):
        col = M[:, j]
        present = ~np.isnan(col)
        if present.any():
            imputation[j] = col[present].mean()
        col[~present] = imputation[j]

    if weights is None:
        w = np.ones(len(dataset.instances))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(dataset.instances),):
            raise ValidationError("instance weights length mismatch", rule="weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("instance weights must be positive finite", rule="weights")

    standardizer = Standardizer.fit(M)
    X = standardizer.transform(M)
    return DesignMatrix(X, y, w, features, standardizer, imputation, M)


def layer3_instance_weights(dataset: Dataset, beta: float = 1.0) -> np.ndarray:
    """1 + beta * (nonzero layer-3 features present) / (layer-3 features total).

    Instances documented with more metadata get proportionally more weight;
    beta = 0 turns the rule off exactly.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative", rule="beta")
    l3 = dataset.dictionary.layer_names(Layer.L3)
    total = len(l3)
    weights = np.ones(len(dataset.instances))
    if total == 0 or beta == 0:
        return weights
    for i, inst in enumerate(dataset.instances):
        hits = sum(1 for name in l3 if inst.features.values.get(name, 0) != 0)
        weights[i] = 1.0 + beta * hits / total
    return weights


# ---------------------------------------------------------------------------
# Trained models


@dataclass
class TrainedModel:
    kind: str  # 'fda' | 'svm'
    features: tuple
    w: np.ndarray
    b: float
    standardizer: Standardizer
    imputation: np.ndarray
    hyperparams: dict
    training: dict  # {'converged': bool, 'epochs': int}
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def standardize_raw(self, R: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(R)


def _model_raw_rows(model: TrainedModel, mappings) -> np.ndarray:
    R = np.empty((len(mappings), len(model.features)))
    for i, mapping in enumerate(mappings):
        values = mapping.values if isinstance(mapping, FeatureVector) else mapping
        for j, name in enumerate(model.features):
            v = values.get(name)
            R[i, j] = model.imputation[j] if v is None else float(v)
    return R


def decision_value(model: TrainedModel, x) -> float:
    """w . standardize(x) + b for one instance (FeatureVector or dict)."""
    R = _model_raw_rows(model, [x])
    return float(model.standardize_raw(R)[0] @ model.w + model.b)


def decision_values(model: TrainedModel, dataset: Dataset) -> np.ndarray:
    R = _model_raw_rows(model, [inst.features for inst in dataset.instances])
    return model.standardize_raw(R) @ model.w + model.b


def predict(model: TrainedModel, x) -> Label:
    return Label.VULNERABLE if decision_value(model, x) >= 0 else Label.BENIGN_FLAW


def predict_dataset(model: TrainedModel, dataset: Dataset) -> list:
    return [
        Label.VULNERABLE if v >= 0 else Label.BENIGN_FLAW
        for v in decision_values(model, dataset)
    ]


# ---------------------------------------------------------------------------
# Fisher discriminant


def train_fda(matrix: DesignMatrix, ridge_lambda: float = 1e-6) -> TrainedModel:
    """Fisher discriminant on standardized rows, with ridge-stabilized scatter.

    Solves (S_W + lambda * trace(S_W)/p * I) w = mu_pos - mu_neg, where S_W
    and the class means are instance-weighted; the threshold sits midway
    between the projected class means. w is scaled to unit norm afterwards
    (with b scaled alike), which leaves every prediction unchanged.
    """
    if ridge_lambda < 0:
        raise ValidationError("ridge_lambda must be non-negative", rule="hyperparam")
    X, y, wts = matrix.X, matrix.y, matrix.weights
    pos = y > 0
    neg = ~pos
    if not pos.any() or not neg.any():
        raise ModelError("training data contains a single class")
    p = X.shape[1]
    if p == 0:
        raise ValidationError("no features to train on", rule="mask")

    wp, wn = wts[pos], wts[neg]
    mu_p = (wp[:, None] * X[pos]).sum(axis=0) / wp.sum()
    mu_n = (wn[:, None] * X[neg]).sum(axis=0) / wn.sum()
    Dp = X[pos] - mu_p
    Dn = X[neg] - mu_n
    S_w = (wp[:, None] * Dp).T @ Dp + (wn[:, None] * Dn).T @ Dn

    trace = float(np.trace(S_w))
    ridge = ridge_lambda * (trace / p if trace > 0 else 1.0)
    A = S_w + ridge * np.eye(p)
    try:
        w = np.linalg.solve(A, mu_p - mu_n)
    except np.linalg.LinAlgError as exc:
        raise ModelError(
            "singular within-class scatter; increase ridge_lambda"
        ) from exc

    b = float(-w @ (mu_p + mu_n) / 2.0)
    norm = float(np.linalg.norm(w))
    if norm > 0:
        w = w / norm
        b = b / norm
    return TrainedModel(
        kind="fda",
        features=matrix.features,
        w=w,
        b=b,
        standardizer=matrix.standardizer,
        imputation=matrix.imputation,
        hyperparams={"ridge_lambda": ridge_lambda},
        training={"converged": True, "epochs": 0},
    )


# ---------------------------------------------------------------------------
# SVM dual coordinate ascent


@njit(cache=True)
def _static_kkt_violation(X, y, U, alpha, w):
    """Largest projected-gradient magnitude with w frozen."""
    n, p = X.shape
    worst = 0.0
    for i in range(n):
        fx = 0.0
        for j in range(p):
            fx += w[j] * X[i, j]
        G = y[i] * fx - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = G if G < 0.0 else 0.0
        elif a >= U[i]:
            pg = G if G > 0.0 else 0.0
        else:
            pg = G
        if pg < 0.0:
            pg = -pg
        if pg > worst:
            worst = pg
    return worst


@njit(cache=True)
def _svm_cd_solve(X, y, U, tol, max_epochs):
    """Coordinate ascent over the box-constrained dual, fixed index order.

    Returns (alpha, w, epochs, violation, converged). Convergence requires a
    sweep whose running violation is within tol AND a frozen-w re-check, so
    the returned violation is a static certificate.
    """
    n, p = X.shape
    alpha = np.zeros(n)
    w = np.zeros(p)
    qd = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * X[i, j]
        qd[i] = s

    epochs = 0
    violation = np.inf
    converged = False
    while epochs < max_epochs:
        sweep_worst = 0.0
        for i in range(n):
            a = alpha[i]
            if qd[i] <= 0.0:
                # zero row: dual is linear in alpha_i, optimum at the bound
                alpha[i] = U[i]
                continue
            fx = 0.0
            for j in range(p):
                fx += w[j] * X[i, j]
            G = y[i] * fx - 1.0
            if a <= 0.0:
                pg = G if G < 0.0 else 0.0
            elif a >= U[i]:
                pg = G if G > 0.0 else 0.0
            else:
                pg = G
            apg = -pg if pg < 0.0 else pg
            if apg > sweep_worst:
                sweep_worst = apg
            if pg != 0.0:
                new_a = a - G / qd[i]
                if new_a < 0.0:
                    new_a = 0.0
                elif new_a > U[i]:
                    new_a = U[i]
                delta = new_a - a
                if delta != 0.0:
                    alpha[i] = new_a
                    yi = y[i]
                    for j in range(p):
                        w[j] += delta * yi * X[i, j]
        epochs += 1
        if sweep_worst <= tol:
            violation = _static_kkt_violation(X, y, U, alpha, w)
            if violation <= tol:
                converged = True
                break
        else:
            violation = sweep_worst
    if not converged:
        violation = _static_kkt_violation(X, y, U, alpha, w)
    return alpha, w, epochs, violation, converged


def svm_dual_objective(X, y, alpha) -> float:
    """sum(alpha) - 0.5 * ||sum_i alpha_i y_i x_i||^2."""
    w = X.T @ (alpha * y)
    return float(alpha.sum() - 0.5 * w @ w)


def _recover_bias(X, y, U, alpha, w) -> float:
    free = (alpha > 0.0) & (alpha < U)
    fx = X @ w
    if free.any():
        return float(np.mean(y[free] - fx[free]))
    # Every multiplier is at a bound; optimality leaves an interval for b.
    lo, hi = -math.inf, math.inf
    for i in range(len(y)):
        if alpha[i] <= 0.0:  # need y(fx + b) >= 1
            if y[i] > 0:
                lo = max(lo, 1.0 - fx[i])
            else:
                hi = min(hi, -1.0 - fx[i])
        else:  # at the upper bound: need y(fx + b) <= 1
            if y[i] > 0:
                hi = min(hi, 1.0 - fx[i])
            else:
                lo = max(lo, -1.0 - fx[i])
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return float(hi)
    if math.isinf(hi):
        return float(lo)
    return float((lo + hi) / 2.0)


def train_svm(
    matrix: DesignMatrix,
    C: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 10000,
) -> TrainedModel:
    """Weighted soft-margin linear SVM; see the module docstring for the dual.

    Non-convergence within ``max_iter`` epochs is not an error: the model is
    returned with training.converged = False and the residual violation in
    diagnostics.
    """
    if C <= 0:
        raise ValidationError("C must be positive", rule="hyperparam")
    if tol <= 0:
        raise ValidationError("tol must be positive", rule="hyperparam")
    if max_iter < 1:
        raise ValidationError("max_iter must be at least 1", rule="hyperparam")
    X, y = matrix.X, matrix.y
    if not (y > 0).any() or not (y < 0).any():
        raise ModelError("training data contains a single class")

    Xc = np.ascontiguousarray(X, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.float64)
    U = np.ascontiguousarray(C * matrix.weights, dtype=np.float64)
    alpha, w, epochs, violation, converged = _svm_cd_solve(
        Xc, yc, U, float(tol), int(max_iter)
    )
    b = _recover_bias(Xc, yc, U, alpha, w)
    return TrainedModel(
        kind="svm",
        features=matrix.features,
        w=w,
        b=b,
        standardizer=matrix.standardizer,
        imputation=matrix.imputation,
        hyperparams={"C": C, "tol": tol, "max_iter": max_iter},
        training={"converged": bool(converged), "epochs": int(epochs)},
        alpha=alpha,
        diagnostics={"kkt_violation": float(violation)},
    )


# ---------------------------------------------------------------------------
# Serialization


def model_to_json_dict(model: TrainedModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": model.kind,
        "features": list(model.features),
        "w": [float(v) for v in model.w],
        "b": float(model.b),
        "standardizer": {
            "mean": [float(v) for v in model.standardizer.mean],
            "sd": [float(v) for v in model.standardizer.sd],
            "zero_var": [bool(v) for v in model.standardizer.zero_var],
        },
        "imputation": [float(v) for v in model.imputation],
        "hyperparams": model.hyperparams,
        "training": {
            "converged": bool(model.training.get("converged", False)),
            "epochs": int(model.training.get("epochs", 0)),
        },
    }


def model_from_json_dict(obj) -> TrainedModel:
    if not isinstance(obj, dict):
        raise FormatError("model file must contain a JSON object")
    version = obj.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported model schema_version {version!r} "
            f"(expected {MODEL_SCHEMA_VERSION!r})"
        )
    kind = obj.get("kind")
    if kind not in ("fda", "svm"):
        raise FormatError(f"unknown model kind {kind!r}")
    try:
        features = tuple(obj["features"])
        w = np.array(obj["w"], dtype=float)
        b = float(obj["b"])
        std = obj["standardizer"]
        standardizer = Standardizer(
            np.array(std["mean"], dtype=float),
            np.array(std["sd"], dtype=float),
            np.array(std["zero_var"], dtype=bool),
        )
        imputation = np.array(obj["imputation"], dtype=float)
        hyperparams = dict(obj["hyperparams"])
        training = dict(obj["training"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model record: {exc}") from exc
    p = len(features)
    for arr, label in ((w, "w"), (standardizer.mean, "mean"), (standardizer.sd, "sd"),
                       (standardizer.zero_var, "zero_var"), (imputation, "imputation")):
        if arr.shape != (p,):
            raise FormatError(f"model field {label!r} length does not match features")
    if not np.all(np.isfinite(w)):
        raise FormatError("model weights must be finite")
    return TrainedModel(kind, features, w, b, standardizer, imputation,
                        hyperparams, training)


def save_model(model: TrainedModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_json_dict(model), indent=2) + "\n")


def load_model(path) -> TrainedModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed model JSON: {exc}") from exc
    return model_from_json_dict(obj)
