"""Calibrated RBF-SVM channels, cross-validation, and posterior late fusion.

Each representation channel is classified by a one-vs-rest SVM whose binary
machines are solved by SMO; per-class sigmoid calibration is fitted on
out-of-fold decision values, and the sigmoid outputs are sum-normalized
into posteriors.  Hyperparameters are grid-searched on inner folds against
macro-F1.  Everything that fits parameters (standardization, the grid, the
calibration) only ever sees training rows of the current fold.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._smo import smo_solve
from .evalkit import EvalReport, accuracy, confusion_matrix, macro_f1, majority_baseline
from .util import derive_seed, read_matrix_csv, write_matrix_csv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvmConfig:
    c_grid: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    gamma_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    tol: float = 1e-3  # KKT tolerance for the SMO solver
    inner_folds: int = 5
    max_iter: int = 100_000  # pair updates; safety valve for degenerate cells

    def validate(self) -> None:
        if not self.c_grid or not self.gamma_grid:
            raise ValueError("hyperparameter grids must be nonempty")
        if any(c <= 0 for c in self.c_grid) or any(g <= 0 for g in self.gamma_grid):
            raise ValueError("grid values must be positive")


@dataclass
class RepresentationChannel:
    """One named n x d representation aligned to a shared domain ordering."""

    name: str
    matrix: np.ndarray
    coverage: np.ndarray  # per domain: does the source actually cover it?

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.matrix.shape[0] != len(self.coverage):
            raise ValueError("coverage mask must have one entry per row")


def rbf_kernel(x1: np.ndarray, x2: np.ndarray, gamma: float) -> np.ndarray:
    sq1 = np.sum(x1 * x1, axis=1)[:, None]
    sq2 = np.sum(x2 * x2, axis=1)[None, :]
    d2 = np.maximum(sq1 + sq2 - 2.0 * (x1 @ x2.T), 0.0)
    return np.exp(-gamma * d2)


# --- sigmoid calibration ------------------------------------------------------


def fit_platt_sigmoid(decision: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Fit (A, B) of P(y=1 | f) = 1 / (1 + exp(A f + B)) by Newton steps with
    backtracking, on regularized targets (the standard sigmoid-fitting
    routine for SVM outputs)."""
    decision = np.asarray(decision, dtype=float)
    target = np.asarray(target, dtype=bool)
    prior1 = int(target.sum())
    prior0 = len(target) - prior1
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(target, hi, lo)

    def objective(a: float, b: float) -> float:
        f_ab = decision * a + b
        pos = f_ab >= 0
        val = np.empty_like(f_ab)
        val[pos] = t[pos] * f_ab[pos] + np.log1p(np.exp(-f_ab[pos]))
        val[~pos] = (t[~pos] - 1.0) * f_ab[~pos] + np.log1p(np.exp(f_ab[~pos]))
        return float(val.sum())

    a, b = 0.0, math.log((prior0 + 1.0) / (prior1 + 1.0))
    fval = objective(a, b)
    sigma = 1e-12
    for _ in range(100):
        f_ab = decision * a + b
        pos = f_ab >= 0
        p = np.empty_like(f_ab)
        q = np.empty_like(f_ab)
        p[pos] = np.exp(-f_ab[pos]) / (1.0 + np.exp(-f_ab[pos]))
        q[pos] = 1.0 / (1.0 + np.exp(-f_ab[pos]))
        p[~pos] = 1.0 / (1.0 + np.exp(f_ab[~pos]))
        q[~pos] = np.exp(f_ab[~pos]) / (1.0 + np.exp(f_ab[~pos]))
        d2 = p * q
        h11 = float(np.sum(decision * decision * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(decision * d2))
        d1 = t - p
        g1 = float(np.sum(decision * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            new_a, new_b = a + step * da, b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    return a, b


def platt_probability(decision: np.ndarray, a: float, b: float) -> np.ndarray:
    f_ab = np.asarray(decision, dtype=float) * a + b
    out = np.empty_like(f_ab)
    pos = f_ab >= 0
    out[pos] = np.exp(-f_ab[pos]) / (1.0 + np.exp(-f_ab[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(f_ab[~pos]))
    return out


# --- one-vs-rest calibrated SVM ----------------------------------------------


@dataclass
class CalibratedSvm:
    n_classes: int
    c_value: float
    gamma: float
    x_train: np.ndarray
    coef: np.ndarray  # (n_train, n_classes): alpha_i * y_i per binary machine
    intercepts: np.ndarray
    platt: np.ndarray  # (n_classes, 2): sigmoid (A, B) per machine
    constant_class: int | None = None


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold assignment (round-robin within each
    class after a seeded shuffle).  Classes smaller than ``folds`` simply
    reach fewer folds; that is logged as a best-effort fallback."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.zeros(len(y), dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        members = np.nonzero(y == cls)[0]
        if len(members) < folds:
            log.warning(
                "class %r has %d members for %d folds; stratification is best-effort",
                cls, len(members), folds,
            )
        members = members[rng.permutation(len(members))]
        for pos, idx in enumerate(members):
            fold_of[idx] = (offset + pos) % folds
        offset += len(members)
    return fold_of


def _binary_machine(
    k_train: np.ndarray, y_bin: np.ndarray, c_value: float, tol: float, max_iter: int
) -> tuple[np.ndarray, float]:
    if np.all(y_bin > 0) or np.all(y_bin < 0):
        return np.zeros(len(y_bin)), float(y_bin[0])
    alpha, b, converged = smo_solve(k_train, y_bin, c_value, tol, max_iter)
    if not converged:
        log.debug("SMO hit the pass limit (C=%g); using the current iterate", c_value)
    return alpha * y_bin, b


def _ovr_decisions(
    k_eval: np.ndarray, coef: np.ndarray, intercepts: np.ndarray
) -> np.ndarray:
    # einsum (fixed loop order) keeps equal kernel rows giving bitwise-equal
    # decisions, which BLAS row blocking does not guarantee
    return np.einsum("ij,jc->ic", k_eval, coef) + intercepts[None, :]


def train_svm_rbf(
    x: np.ndarray, y: np.ndarray, n_classes: int, config: SvmConfig | None = None, seed: int = 0
) -> CalibratedSvm:
    """Grid-search (C, gamma) on inner folds by macro-F1, calibrate the
    winner's machines on its out-of-fold decision values, refit on all rows.

    ``x`` is expected to be standardized already.  Single-class input
    degenerates to a constant predictor (with a warning).
    """
    config = config or SvmConfig()
    config.validate()
    x = np.ascontiguousarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    present = np.unique(y)
    if len(present) == 1:
        log.warning("single-class training input; returning a constant predictor")
        return CalibratedSvm(
            n_classes, config.c_grid[0], config.gamma_grid[0],
            x[:1], np.zeros((1, n_classes)), np.zeros(n_classes),
            np.zeros((n_classes, 2)), constant_class=int(present[0]),
        )

    folds = min(config.inner_folds, len(y))
    fold_of = stratified_folds(y, folds, derive_seed(seed, "svm.inner_folds"))
    class_list = list(range(n_classes))
    cells: dict[tuple[int, int], dict] = {
        (ci, gi): {"f1": [], "oof": np.zeros((len(y), n_classes))}
        for ci in range(len(config.c_grid))
        for gi in range(len(config.gamma_grid))
    }
    for gi, gamma in enumerate(config.gamma_grid):
        kernel = rbf_kernel(x, x, gamma)
        for f in range(folds):
            va = fold_of == f
            tr = ~va
            if not va.any() or not tr.any():
                continue
            k_tr = np.ascontiguousarray(kernel[np.ix_(tr, tr)])
            k_va = kernel[np.ix_(va, tr)]
            y_tr = y[tr]
            for ci, c_value in enumerate(config.c_grid):
                dec = np.zeros((int(va.sum()), n_classes))
                for cls in class_list:
                    y_bin = np.where(y_tr == cls, 1.0, -1.0)
                    coef, b = _binary_machine(k_tr, y_bin, c_value, config.tol, config.max_iter)
                    dec[:, cls] = np.einsum("ij,j->i", k_va, coef) + b
                cell = cells[(ci, gi)]
                cell["oof"][va] = dec
                pred = np.argmax(dec, axis=1)
                cell["f1"].append(macro_f1(y[va].tolist(), pred.tolist(), class_list))

    best_key, best_score = None, -1.0
    for ci in range(len(config.c_grid)):
        for gi in range(len(config.gamma_grid)):
            score = float(np.mean(cells[(ci, gi)]["f1"]))
            if score > best_score:
                best_key, best_score = (ci, gi), score
    ci, gi = best_key
    c_value, gamma = config.c_grid[ci], config.gamma_grid[gi]
    oof_dec = cells[best_key]["oof"]

    platt = np.zeros((n_classes, 2))
    for cls in class_list:
        platt[cls] = fit_platt_sigmoid(oof_dec[:, cls], y == cls)

    kernel = np.ascontiguousarray(rbf_kernel(x, x, gamma))
    coef = np.zeros((len(y), n_classes))
    intercepts = np.zeros(n_classes)
    for cls in class_list:
        y_bin = np.where(y == cls, 1.0, -1.0)
        coef[:, cls], intercepts[cls] = _binary_machine(
            kernel, y_bin, c_value, config.tol, config.max_iter
        )
    return CalibratedSvm(n_classes, c_value, gamma, x.copy(), coef, intercepts, platt)


def decision_function(model: CalibratedSvm, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.x_train.shape[1]:
        raise ValueError(
            f"expected {model.x_train.shape[1]} features, got shape {x.shape}"
        )
    if model.constant_class is not None:
        dec = -np.ones((len(x), model.n_classes))
        dec[:, model.constant_class] = 1.0
        return dec
    kernel = rbf_kernel(x, model.x_train, model.gamma)
    return _ovr_decisions(kernel, model.coef, model.intercepts)


def predict_proba(model: CalibratedSvm, x: np.ndarray) -> np.ndarray:
    """Sum-normalized per-class sigmoid outputs; rows sum to 1."""
    dec = decision_function(model, x)
    if model.constant_class is not None:
        proba = np.zeros_like(dec)
        proba[:, model.constant_class] = 1.0
        return proba
    proba = np.empty_like(dec)
    for cls in range(model.n_classes):
        proba[:, cls] = platt_probability(dec[:, cls], *model.platt[cls])
    proba = np.clip(proba, 1e-12, 1.0 - 1e-12)
    return proba / proba.sum(axis=1, keepdims=True)


def predict(model: CalibratedSvm, x: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba(model, x), axis=1)


def model_fingerprint(model: CalibratedSvm, scaler: tuple[np.ndarray, np.ndarray] | None = None) -> str:
    h = hashlib.sha256()
    for arr in (model.coef, model.intercepts, model.platt, model.x_train):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.float64(model.c_value).tobytes())
    h.update(np.float64(model.gamma).tobytes())
    if scaler is not None:
        h.update(np.ascontiguousarray(scaler[0]).tobytes())
        h.update(np.ascontiguousarray(scaler[1]).tobytes())
    return h.hexdigest()


# --- cross-validation ---------------------------------------------------------


def standardize_fit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def standardize_apply(x: np.ndarray, scaler: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = scaler
    return (x - mean) / std


def fit_channel_fold(
    x: np.ndarray,
    y_int: np.ndarray,
    n_classes: int,
    train_mask: np.ndarray,
    config: SvmConfig,
    seed: int,
) -> tuple[tuple[np.ndarray, np.ndarray], CalibratedSvm]:
    """Fit scaler + calibrated SVM strictly from training rows of one fold."""
    scaler = standardize_fit(x[train_mask])
    model = train_svm_rbf(
        standardize_apply(x[train_mask], scaler), y_int[train_mask], n_classes, config, seed
    )
    return scaler, model


@dataclass
class ChannelCvResult:
    report: EvalReport
    oof_posterior: np.ndarray
    fold_of: np.ndarray
    chosen: list[dict] = field(default_factory=list)
    fingerprints: list[str] = field(default_factory=list)


def cross_validate(
    channels: Mapping[str, np.ndarray],
    labels: Sequence[str],
    classes: Sequence[str],
    folds: int = 5,
    seed: int = 0,
    svm: SvmConfig | None = None,
    task: str = "task",
) -> dict[str, ChannelCvResult]:
    """Stratified k-fold evaluation of every channel on the same fold split.

    Per fold and channel: standardize on the training rows, grid-search and
    calibrate inside them, then score the held-out rows.  Deterministic:
    fold assignment comes from ``seed`` and each (channel, fold) cell has a
    pre-derived seed, so results do not depend on evaluation order.
    """
    svm = svm or SvmConfig()
    class_list = list(classes)
    class_index = {c: i for i, c in enumerate(class_list)}
    y_int = np.array([class_index[l] for l in labels], dtype=np.int64)
    n = len(y_int)
    for name, matrix in channels.items():
        if matrix.shape[0] != n:
            raise ValueError(f"channel {name!r} has {matrix.shape[0]} rows, expected {n}")
    fold_of = stratified_folds(y_int, folds, derive_seed(seed, "cv.folds"))

    results: dict[str, ChannelCvResult] = {}
    for name in channels:
        x = np.asarray(channels[name], dtype=float)
        oof = np.zeros((n, len(class_list)))
        fold_f1, fold_acc = [], []
        confusion = np.zeros((len(class_list), len(class_list)), dtype=int)
        chosen, fingerprints = [], []
        for f in range(folds):
            te = fold_of == f
            tr = ~te
            if not te.any():
                continue
            scaler, model = fit_channel_fold(
                x, y_int, len(class_list), tr, svm, derive_seed(seed, f"cv.{name}.fold{f}")
            )
            posterior = predict_proba(model, standardize_apply(x[te], scaler))
            oof[te] = posterior
            pred = np.argmax(posterior, axis=1)
            true_f = [class_list[i] for i in y_int[te]]
            pred_f = [class_list[i] for i in pred]
            fold_f1.append(macro_f1(true_f, pred_f, class_list))
            fold_acc.append(accuracy(true_f, pred_f))
            confusion += np.array(confusion_matrix(true_f, pred_f, class_list))
            chosen.append({"fold": f, "C": model.c_value, "gamma": model.gamma})
            fingerprints.append(model_fingerprint(model, scaler))
        report = EvalReport(
            task=task,
            channel=name,
            classes=tuple(class_list),
            fold_macro_f1=fold_f1,
            fold_accuracy=fold_acc,
            confusion=confusion.tolist(),
            details={"chosen": chosen},
        )
        results[name] = ChannelCvResult(report, oof, fold_of, chosen, fingerprints)
    return results


def majority_cv(
    labels: Sequence[str],
    classes: Sequence[str],
    folds: int = 5,
    seed: int = 0,
    task: str = "task",
) -> ChannelCvResult:
    """Majority-class baseline evaluated on the same folds as the channels."""
    class_list = list(classes)
    class_index = {c: i for i, c in enumerate(class_list)}
    y_int = np.array([class_index[l] for l in labels], dtype=np.int64)
    fold_of = stratified_folds(y_int, folds, derive_seed(seed, "cv.folds"))
    oof = np.zeros((len(y_int), len(class_list)))
    fold_f1, fold_acc = [], []
    confusion = np.zeros((len(class_list), len(class_list)), dtype=int)
    for f in range(folds):
        te = fold_of == f
        tr = ~te
        if not te.any():
            continue
        winner = majority_baseline([class_list[i] for i in y_int[tr]])
        oof[te, class_index[winner]] = 1.0
        true_f = [class_list[i] for i in y_int[te]]
        pred_f = [winner] * int(te.sum())
        fold_f1.append(macro_f1(true_f, pred_f, class_list))
        fold_acc.append(accuracy(true_f, pred_f))
        confusion += np.array(confusion_matrix(true_f, pred_f, class_list))
    report = EvalReport(
        task=task,
        channel="majority_baseline",
        classes=tuple(class_list),
        fold_macro_f1=fold_f1,
        fold_accuracy=fold_acc,
        confusion=confusion.tolist(),
    )
    return ChannelCvResult(report, oof, fold_of)


# --- late fusion ---------------------------------------------------------------


def late_fuse(posteriors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Convex combination of per-channel posterior matrices."""
    if not posteriors:
        raise ValueError("no posteriors to fuse")
    mats = [np.asarray(p, dtype=float) for p in posteriors]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("posterior matrices must share one shape")
    w = np.asarray(weights, dtype=float)
    if len(w) != len(mats):
        raise ValueError("one weight per posterior matrix")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    fused = np.zeros(shape)
    for wi, m in zip(w, mats):
        fused += wi * m
    return fused


def _simplex_grid(k: int, steps: int):
    """All weight vectors with entries i/steps summing to 1, lexicographic."""

    def rec(prefix, remaining, slots):
        if slots == 1:
            yield prefix + [remaining]
            return
        for i in range(remaining + 1):
            yield from rec(prefix + [i], remaining - i, slots - 1)

    for combo in rec([], steps, k):
        yield np.array(combo, dtype=float) / steps


def fit_fusion_weights(
    posteriors: Sequence[np.ndarray],
    labels: Sequence[str],
    classes: Sequence[str],
    resolution: float = 0.05,
) -> np.ndarray:
    """Simplex grid search maximizing out-of-fold macro-F1.

    The uniform vector wins any tie with the grid maximum, so identical
    channels come back uniformly weighted.
    """
    k = len(posteriors)
    if k == 0:
        raise ValueError("no posteriors given")
    class_list = list(classes)
    y = list(labels)

    def score(w: np.ndarray) -> float:
        fused = late_fuse(posteriors, w)
        pred = [class_list[i] for i in np.argmax(fused, axis=1)]
        return macro_f1(y, pred, class_list)

    if k == 1:
        return np.array([1.0])
    uniform = np.full(k, 1.0 / k)
    uniform_score = score(uniform)
    best_w, best_score = None, -1.0
    steps = round(1.0 / resolution)
    for w in _simplex_grid(k, steps):
        s = score(w)
        if s > best_score + 1e-12:
            best_w, best_score = w, s
    if uniform_score >= best_score - 1e-12:
        return uniform
    return best_w


# --- channel files --------------------------------------------------------------


def write_channel_csv(channel: RepresentationChannel, domains: Sequence[str], path: str | Path) -> None:
    write_matrix_csv(path, domains, channel.matrix, prefix="v")


def ingest_external_representation(
    path: str | Path, domain_order: Sequence[str], name: str | None = None
) -> RepresentationChannel:
    """Align an externally produced vector file to the shared domain order.

    Domains absent from the file get zero vectors with coverage=False;
    domains in the file but not in the ordering are an error.
    """
    file_domains, matrix = read_matrix_csv(path)
    known = set(domain_order)
    unknown = sorted(set(file_domains) - known)
    if unknown:
        raise ValueError(f"{path}: unknown domains in channel file: {', '.join(unknown)}")
    index = {d: i for i, d in enumerate(file_domains)}
    out = np.zeros((len(domain_order), matrix.shape[1]))
    coverage = np.zeros(len(domain_order), dtype=bool)
    for row, domain in enumerate(domain_order):
        if domain in index:
            out[row] = matrix[index[domain]]
            coverage[row] = True
    missing = int((~coverage).sum())
    if missing:
        log.info("%s: %d domains not covered; using zero vectors", path, missing)
    return RepresentationChannel(name or Path(path).stem, out, coverage)
