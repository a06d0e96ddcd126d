"""
Soft-margin SVM trained by sequential minimal optimization (SMO).

Binary machines use Platt's two-loop heuristic with a seeded random
first-choice sweep and a |E1 - E2| second choice. Convergence is judged on
the maximal KKT violation (b_low - b_up <= 2 tol); if the heuristic loop
stops short of that, maximal-violating-pair steps finish the job.

Multiclass problems are composed one-vs-one with majority voting.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .config import SCHEMA_VERSION
from .core import derive_seed
from .errors import (
    ConfigError,
    ConvergenceError,
    DataContractError,
    DatasetError,
    DimensionMismatch,
    TrainingError,
)

logger = logging.getLogger(__name__)

KERNELS = ("linear", "rbf")
STEP_EPS = 1e-10  # relative alpha change below which a pair step is rejected
BOUND_EPS = 1e-8  # alphas within BOUND_EPS * C of a bound are snapped onto it

# =============================================================================
# Types
# =============================================================================


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float | None = None  # None: resolved from the training data

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if self.gamma is not None and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be finite and > 0, got {self.gamma}")


@dataclass(frozen=True)
class SvmParams:
    c: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    tol: float = 1e-3
    max_passes: int = 10
    max_iter: int = 10000
    seed: int = 0
    standardize: bool = False

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"C must be positive, got {self.c}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_passes < 1 or self.max_iter < 1:
            raise ConfigError("max_passes and max_iter must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingDiagnostics:
    converged: bool
    iterations: int
    full_sweeps: int
    kkt_gap: float
    dual_objective: float
    n_support: int


@dataclass(frozen=True, eq=False)
class BinaryModel:
    """f(x) = sum(alphas_signed * K(sv, x)) + bias; f >= 0 votes class_pair[0]."""

    support_vectors: np.ndarray
    alphas_signed: np.ndarray
    bias: float
    kernel: KernelSpec
    class_pair: tuple[int, int]
    diagnostics: TrainingDiagnostics | None = None

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.alphas_signed) == 0:
            return np.full(X.shape[0], self.bias)
        return kernel_matrix(X, self.support_vectors, self.kernel) @ self.alphas_signed + self.bias

    def predict_signs(self, X) -> np.ndarray:
        return np.where(self.decision(X) >= 0, 1, -1)


@dataclass(frozen=True, eq=False)
class MultiClassModel:
    classes: tuple[int, ...]
    models: tuple[BinaryModel, ...]
    n_features: int
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        expected = len(self.classes) * (len(self.classes) - 1) // 2
        if len(self.models) != expected:
            raise TrainingError(f"{len(self.models)} binary models for {len(self.classes)} classes")

    @property
    def kernel(self) -> KernelSpec:
        return self.models[0].kernel

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return X

    @property
    def diagnostics(self) -> list[TrainingDiagnostics]:
        return [m.diagnostics for m in self.models if m.diagnostics is not None]

    @property
    def converged(self) -> bool:
        return all(d.converged for d in self.diagnostics)


# =============================================================================
# Kernels
# =============================================================================


def kernel_matrix(A, B, kernel: KernelSpec) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if kernel.kind == "linear":
        return A @ B.T
    if kernel.gamma is None:
        raise ConfigError("rbf gamma is unresolved")
    return np.exp(-kernel.gamma * cdist(A, B, "sqeuclidean"))


def resolve_kernel(kernel: KernelSpec, X) -> KernelSpec:
    """Fill in gamma = 1 / (d * mean feature variance) for rbf when unset."""
    if kernel.kind != "rbf" or kernel.gamma is not None:
        return kernel
    X = np.atleast_2d(np.asarray(X, dtype=float))
    variance = float(X.var(axis=0).mean())
    gamma = 1.0 / (X.shape[1] * variance) if variance > 0 else 1.0
    return replace(kernel, gamma=gamma)


# =============================================================================
# SMO
# =============================================================================


class _Smo:
    def __init__(self, K: np.ndarray, y: np.ndarray, c: float, tol: float, rng: np.random.Generator):
        self.K = K
        self.y = y
        self.c = c
        self.tol = tol
        self.rng = rng
        self.n = len(y)
        self.margin = BOUND_EPS * c
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.errors = -y.astype(float)  # f(x_i) - y_i with alpha = 0, b = 0
        self.steps = 0

    def non_bound(self) -> np.ndarray:
        return np.flatnonzero((self.alpha > self.margin) & (self.alpha < self.c - self.margin))

    def snap(self, a: float) -> float:
        if a < self.margin:
            return 0.0
        if a > self.c - self.margin:
            return self.c
        return a

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        K, y, c = self.K, self.y, self.c
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = self.errors[i1], self.errors[i2]
        s = y1 * y2

        if y1 != y2:
            lo, hi = max(0.0, a2 - a1), min(c, c + a2 - a1)
        else:
            lo, hi = max(0.0, a1 + a2 - c), min(c, a1 + a2)
        if hi - lo <= 0:
            return False

        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2 * k12
        if eta > 0:
            a2_new = min(hi, max(lo, a2 + y2 * (e1 - e2) / eta))
        else:
            # Objective (to minimize) at both ends of the segment
            f1 = y1 * (e1 - self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (e2 - self.b) - s * a1 * k12 - a2 * k22
            l1 = a1 + s * (a2 - lo)
            h1 = a1 + s * (a2 - hi)
            lo_obj = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12
            hi_obj = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12
            if lo_obj < hi_obj - STEP_EPS:
                a2_new = lo
            elif lo_obj > hi_obj + STEP_EPS:
                a2_new = hi
            else:
                a2_new = a2
        a2_new = self.snap(a2_new)

        if abs(a2_new - a2) < STEP_EPS * (a2_new + a2 + STEP_EPS):
            return False
        a1_raw = min(c, max(0.0, a1 + s * (a2 - a2_new)))
        a1_new = self.snap(a1_raw)
        if a1_new != a1_raw:
            # keep sum(alpha * y) fixed after moving a1 onto a bound
            a2_new = self.snap(min(c, max(0.0, a2 + s * (a1 - a1_new))))

        d1 = y1 * (a1_new - a1)
        d2 = y2 * (a2_new - a2)
        b1 = self.b - e1 - d1 * k11 - d2 * k12
        b2 = self.b - e2 - d1 * k12 - d2 * k22
        if 0 < a1_new < c:
            b_new = b1
        elif 0 < a2_new < c:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)

        self.errors += d1 * K[i1] + d2 * K[i2] + (b_new - self.b)
        self.alpha[i1], self.alpha[i2] = a1_new, a2_new
        self.b = b_new
        self.steps += 1
        return True

    def examine(self, i2: int) -> int:
        y2, a2, e2 = self.y[i2], self.alpha[i2], self.errors[i2]
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.c) or (r2 > self.tol and a2 > 0)):
            return 0

        non_bound = self.non_bound()
        if len(non_bound) > 1:
            i1 = int(non_bound[np.argmax(np.abs(self.errors[non_bound] - e2))])
            if self.take_step(i1, i2):
                return 1
        for i1 in np.roll(non_bound, -int(self.rng.integers(max(1, len(non_bound))))):
            if self.take_step(int(i1), i2):
                return 1
        for i1 in np.roll(np.arange(self.n), -int(self.rng.integers(self.n))):
            if self.take_step(int(i1), i2):
                return 1
        return 0

    def gradients(self) -> np.ndarray:
        """F_i = sum_j alpha_j y_j K_ij - y_i, recomputed from scratch."""
        return self.K @ (self.alpha * self.y) - self.y

    def violating_pair(self, F: np.ndarray) -> tuple[int, int, float, float]:
        y, a = self.y, self.alpha
        below = a < self.c - self.margin
        above = a > self.margin
        up = ((y > 0) & below) | ((y < 0) & above)
        low = ((y > 0) & above) | ((y < 0) & below)
        i_up = int(np.flatnonzero(up)[np.argmin(F[up])])
        i_low = int(np.flatnonzero(low)[np.argmax(F[low])])
        return i_up, i_low, float(F[i_up]), float(F[i_low])

    def run(self, max_passes: int, max_iter: int) -> tuple[int, bool]:
        sweeps = 0
        num_changed = 0
        examine_all = True
        while (num_changed > 0 or examine_all) and self.steps < max_iter:
            if examine_all and sweeps >= max_passes:
                break
            num_changed = 0
            if examine_all:
                sweeps += 1
                candidates = self.rng.permutation(self.n)
            else:
                candidates = self.rng.permutation(self.non_bound())
            for i in candidates:
                num_changed += self.examine(int(i))
                if self.steps >= max_iter:
                    break
            if examine_all:
                examine_all = False
            elif num_changed == 0:
                examine_all = True

        # Finish on maximal violating pairs when the heuristic stopped early
        while self.steps < max_iter:
            self.errors = self.gradients() + self.b
            i_up, i_low, b_up, b_low = self.violating_pair(self.errors - self.b)
            if b_low - b_up <= 2 * self.tol:
                break
            if self.take_step(i_low, i_up):
                continue
            # Maximal pair stalled: one heuristic sweep over every point before giving up
            changed = 0
            for i in self.rng.permutation(self.n):
                changed += self.examine(int(i))
                if self.steps >= max_iter:
                    break
            if changed == 0:
                break
        return sweeps, self.steps < max_iter


def _dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def _check_training_input(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatch(f"X has shape {X.shape} but y has {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training rows contain non-finite values")


def train_binary(
    X,
    y,
    p: SvmParams,
    class_pair: tuple[int, int] = (1, -1),
) -> BinaryModel:
    """
    Train one soft-margin SVM on labels in {+1, -1}.

    Hitting max_iter or max_passes before the KKT gap closes is not an
    error; it is reported through `diagnostics.converged`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    _check_training_input(X, y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("binary labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set has a single class")

    kernel = resolve_kernel(p.kernel, X)
    K = kernel_matrix(X, X, kernel)
    smo = _Smo(K, y, p.c, p.tol, np.random.default_rng(p.seed))
    sweeps, _ = smo.run(p.max_passes, p.max_iter)

    alpha = smo.alpha
    F = smo.gradients()
    _, _, b_up, b_low = smo.violating_pair(F)
    gap = max(0.0, b_low - b_up)
    margin = 1e-8 * p.c
    free = (alpha > margin) & (alpha < p.c - margin)
    bias = float(-F[free].mean()) if np.any(free) else -0.5 * (b_up + b_low)

    support = alpha > 0
    diagnostics = TrainingDiagnostics(
        converged=gap <= 2 * p.tol,
        iterations=smo.steps,
        full_sweeps=sweeps,
        kkt_gap=gap,
        dual_objective=_dual_objective(K, y, alpha),
        n_support=int(support.sum()),
    )
    if not diagnostics.converged:
        logger.warning(
            f"⚠️  SMO stopped before convergence for pair {class_pair}: "
            f"gap {gap:.3g} after {smo.steps} steps"
        )
    return BinaryModel(
        support_vectors=X[support].copy(),
        alphas_signed=(alpha * y)[support],
        bias=bias,
        kernel=kernel,
        class_pair=class_pair,
        diagnostics=diagnostics,
    )


def train_multiclass(
    X,
    y,
    p: SvmParams,
    n_classes: int | None = None,
    strict: bool = False,
) -> MultiClassModel:
    """
    One binary machine per class pair (i < j), trained on that pair's rows.

    Class indices are 0..n_classes-1; by default the classes present in y.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    _check_training_input(X, y)
    classes = tuple(range(n_classes)) if n_classes is not None else tuple(int(v) for v in np.unique(y))
    if len(classes) < 2:
        raise TrainingError(f"need at least 2 classes, got {len(classes)}")

    mean = scale = None
    if p.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - mean) / scale
    kernel = resolve_kernel(p.kernel, X)
    logger.debug(f"🧠 Training {len(classes)}-class SVM, kernel={kernel.kind}, gamma={kernel.gamma}")

    models = []
    for i, j in combinations(classes, 2):
        rows = (y == i) | (y == j)
        if not np.any(y == i) or not np.any(y == j):
            raise TrainingError(f"class pair ({i}, {j}) has an empty side")
        binary_params = replace(p, kernel=kernel, seed=derive_seed(p.seed, "pair", i, j))
        model = train_binary(X[rows], np.where(y[rows] == i, 1.0, -1.0), binary_params, (i, j))
        if strict and not model.diagnostics.converged:
            raise ConvergenceError(
                f"SMO did not converge for class pair ({i}, {j}): kkt gap {model.diagnostics.kkt_gap:.3g}"
            )
        models.append(model)

    return MultiClassModel(classes=classes, models=tuple(models), n_features=X.shape[1], mean=mean, scale=scale)


# =============================================================================
# Prediction
# =============================================================================


def predict_batch(m: MultiClassModel, X) -> np.ndarray:
    """Class index per row by one-vs-one vote."""
    X = m.transform(X)
    position = {c: k for k, c in enumerate(m.classes)}
    n = X.shape[0]
    votes = np.zeros((n, len(m.classes)), dtype=int)
    strength = np.zeros((n, len(m.classes)))

    for model in m.models:
        f = model.decision(X)
        winner = np.where(f >= 0, position[model.class_pair[0]], position[model.class_pair[1]])
        votes[np.arange(n), winner] += 1
        strength[np.arange(n), winner] += np.abs(f)

    out = np.empty(n, dtype=int)
    for r in range(n):
        tied = np.flatnonzero(votes[r] == votes[r].max())
        if len(tied) > 1:
            best = strength[r, tied].max()
            tied = tied[strength[r, tied] == best]
        out[r] = m.classes[int(tied[0])]
    return out


def predict(m: MultiClassModel, x) -> int:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single feature vector")
    return int(predict_batch(m, x[None, :])[0])


def accuracy(m: MultiClassModel, X, y) -> float:
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise DataContractError("evaluation set is empty")
    return float(np.mean(predict_batch(m, X) == y))


def confusion_matrix(m: MultiClassModel, X, y, n_classes: int | None = None) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y = np.asarray(y, dtype=int)
    size = n_classes or (max(m.classes) + 1)
    counts = np.zeros((size, size), dtype=int)
    np.add.at(counts, (y, predict_batch(m, X)), 1)
    return counts


# =============================================================================
# Persistence
# =============================================================================


def _model_to_dict(m: MultiClassModel) -> dict:
    return {
        "classes": list(m.classes),
        "n_features": m.n_features,
        "kernel": {"kind": m.kernel.kind, "gamma": m.kernel.gamma},
        "standardize": None
        if m.mean is None
        else {"mean": m.mean.tolist(), "scale": m.scale.tolist()},
        "binaries": [
            {
                "class_pair": list(b.class_pair),
                "bias": b.bias,
                "alphas_signed": b.alphas_signed.tolist(),
                "support_vectors": b.support_vectors.tolist(),
                "diagnostics": asdict(b.diagnostics) if b.diagnostics else None,
            }
            for b in m.models
        ],
    }


def save_model(path: str | Path, m: MultiClassModel, context: dict | None = None) -> Path:
    """Versioned JSON; floats are written with round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "schemaVersion": SCHEMA_VERSION,
        "documentType": "svm-model",
        "model": _model_to_dict(m),
        "context": context or {},
    }
    with open(path, "w") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    logger.info(f"💾 Saved model ({len(m.models)} binary machines) to {path}")
    return path


def load_model(path: str | Path) -> tuple[MultiClassModel, dict]:
    path = Path(path)
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"model file {path} not found") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"model file {path} is not valid JSON: {e}") from None
    if document.get("documentType") != "svm-model":
        raise DatasetError(f"{path} is not an svm-model document")
    if document.get("schemaVersion", "").split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise DatasetError(f"unsupported model schemaVersion {document.get('schemaVersion')!r}")

    data = document["model"]
    kernel = KernelSpec(**data["kernel"])
    n_features = int(data["n_features"])
    models = []
    for b in data["binaries"]:
        svs = np.asarray(b["support_vectors"], dtype=float).reshape(-1, n_features)
        diagnostics = TrainingDiagnostics(**b["diagnostics"]) if b.get("diagnostics") else None
        models.append(
            BinaryModel(
                support_vectors=svs,
                alphas_signed=np.asarray(b["alphas_signed"], dtype=float),
                bias=float(b["bias"]),
                kernel=kernel,
                class_pair=tuple(b["class_pair"]),
                diagnostics=diagnostics,
            )
        )
    standardize = data.get("standardize")
    model = MultiClassModel(
        classes=tuple(data["classes"]),
        models=tuple(models),
        n_features=n_features,
        mean=None if standardize is None else np.asarray(standardize["mean"], dtype=float),
        scale=None if standardize is None else np.asarray(standardize["scale"], dtype=float),
    )
    return model, document.get("context", {})


def describe_model(m: MultiClassModel, class_names: Sequence[str] | None = None) -> str:
    lines = [f"{len(m.classes)} classes, {len(m.models)} binary machines, kernel={m.kernel.kind}"]
    for b in m.models:
        a, z = (class_names[c] if class_names else str(c) for c in b.class_pair)
        d = b.diagnostics
        status = "" if d is None else f" converged={d.converged} sv={d.n_support} gap={d.kkt_gap:.2e}"
        lines.append(f"  {a} vs {z}:{status}")
    return "\n".join(lines)
