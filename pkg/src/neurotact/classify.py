"""PCA + LDA texture classification and the experiment protocols built on it."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

COND_LIMIT = 1e12
SHRINKAGE = 1e-6


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray        # [n_features, n_components]
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaBasis":
        return cls(np.asarray(d["mean"]), np.asarray(d["components"]),
                   np.asarray(d["explained_variance"]))


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _top_eigh(sym: np.ndarray, k: int):
    # only the k largest eigenpairs are computed
    m = sym.shape[0]
    return linalg.eigh(sym, subset_by_index=[m - k, m - 1])


def pca_fit(matrix, n_components: int) -> PcaBasis:
    """Leading eigenvectors of the sample covariance of ``matrix``.

    Uses the feature covariance when features <= rows and the row Gram matrix
    otherwise; both are exact symmetric eigendecompositions. Each component's
    largest-magnitude entry is made positive.
    """
    X = np.asarray(matrix, dtype=float)
    n, p = X.shape
    if n_components < 1 or n_components > min(n - 1, p):
        raise ValueError(
            f"cannot fit {n_components} components to a {n}x{p} matrix "
            f"(at most {min(n - 1, p)})")
    mean = X.mean(axis=0)
    Xc = X - mean
    if p <= n:
        cov = Xc.T @ Xc / (n - 1)
        w, V = _top_eigh(cov, n_components)
        order = np.argsort(w)[::-1][:n_components]
        w, V = w[order], V[:, order]
    else:
        gram = Xc @ Xc.T
        w, U = _top_eigh(gram, n_components)
        order = np.argsort(w)[::-1][:n_components]
        w, U = w[order], U[:, order]
        if w[-1] <= max(w[0], 1.0) * 1e-12:
            raise ValueError(
                f"requested {n_components} components but the data has lower rank")
        V = Xc.T @ U / np.sqrt(w)
        w = w / (n - 1)
    w = np.clip(w, 0.0, None)
    return PcaBasis(mean, _fix_signs(V), w)


def pca_project(basis: PcaBasis, matrix, n_components: int | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(matrix, dtype=float))
    if X.shape[1] != basis.mean.size:
        raise ValueError(
            f"matrix has {X.shape[1]} columns, basis expects {basis.mean.size}")
    comps = basis.components if n_components is None else basis.components[:, :n_components]
    return (X - basis.mean) @ comps


@dataclass(frozen=True)
class LdaModel:
    classes: np.ndarray
    means: np.ndarray          # [n_classes, dim]
    covariance: np.ndarray     # pooled within-class, regularized if needed
    priors: np.ndarray
    regularized: bool = False

    def to_dict(self) -> dict:
        return {"classes": [str(c) for c in self.classes], "means": self.means.tolist(),
                "covariance": self.covariance.tolist(), "priors": self.priors.tolist(),
                "regularized": self.regularized}

    @classmethod
    def from_dict(cls, d: dict) -> "LdaModel":
        return cls(np.asarray(d["classes"]), np.asarray(d["means"]),
                   np.asarray(d["covariance"]), np.asarray(d["priors"]), d["regularized"])


def _regularize(cov: np.ndarray):
    dim = cov.shape[0]
    try:
        cond = np.linalg.cond(cov)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        scale = np.trace(cov) / dim
        if scale <= 0:
            scale = 1.0
        return cov + SHRINKAGE * scale * np.eye(dim), True
    return cov, False


def _class_stats(scores, y, n_classes):
    dim = scores.shape[1]
    means = np.zeros((n_classes, dim))
    scatter = np.zeros((dim, dim))
    for c in range(n_classes):
        Xc = scores[y == c]
        if Xc.shape[0] < 2:
            raise ValueError("LDA needs at least 2 samples per class")
        means[c] = Xc.mean(axis=0)
        D = Xc - means[c]
        scatter += D.T @ D
    return means, scatter


def lda_fit(scores, labels) -> LdaModel:
    """Multi-class LDA with pooled covariance and uniform priors.

    When the pooled covariance has condition number above 1e12 (or is
    singular), ``1e-6 * trace/dim`` is added to its diagonal.
    """
    X = np.atleast_2d(np.asarray(scores, dtype=float))
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    if classes.size < 2:
        raise ValueError("LDA needs at least 2 classes")
    means, scatter = _class_stats(X, y, classes.size)
    cov, reg = _regularize(scatter / (X.shape[0] - classes.size))
    priors = np.full(classes.size, 1.0 / classes.size)
    return LdaModel(classes, means, cov, priors, reg)


def _discriminants(means, cov, priors, X):
    W = np.linalg.solve(cov, means.T)                 # [dim, n_classes]
    bias = -0.5 * np.sum(means.T * W, axis=0) + np.log(priors)
    return X @ W + bias


def lda_decision(model: LdaModel, scores) -> np.ndarray:
    X = np.atleast_2d(np.asarray(scores, dtype=float))
    return _discriminants(model.means, model.covariance, model.priors, X)


def lda_predict(model: LdaModel, scores) -> np.ndarray:
    """Class with the largest discriminant; ties go to the lowest class index."""
    return model.classes[np.argmax(lda_decision(model, scores), axis=1)]


def confusion_matrix(truth, predicted, classes) -> np.ndarray:
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    truth, predicted = list(truth), list(predicted)
    if len(truth) != len(predicted):
        raise ValueError("truth and predictions differ in length")
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        if t not in index or p not in index:
            raise ValueError(f"unknown label {t if t not in index else p!r}")
        out[index[t], index[p]] += 1
    return out


@dataclass
class ExperimentResult:
    accuracies: np.ndarray
    pcs: int
    dispersion_kind: str = "std"
    confusion: np.ndarray | None = None
    correct: int = 0
    tested: int = 0

    @property
    def n(self) -> int:
        return int(np.size(self.accuracies))

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def dispersion(self) -> float:
        acc = np.asarray(self.accuracies, dtype=float)
        if acc.size < 2:
            return 0.0
        sd = float(acc.std(ddof=1))
        return sd / np.sqrt(acc.size) if self.dispersion_kind == "sem" else sd

    def merged(self, other: "ExperimentResult") -> "ExperimentResult":
        conf = None
        if self.confusion is not None and other.confusion is not None:
            conf = self.confusion + other.confusion
        return ExperimentResult(np.concatenate([self.accuracies, other.accuracies]), self.pcs,
                                self.dispersion_kind, conf, self.correct + other.correct,
                                self.tested + other.tested)


class _Accumulator:
    """Per-PC accuracy bookkeeping across repeats."""

    def __init__(self, pcs, n_classes, dispersion_kind="std"):
        self.pcs = list(pcs)
        self.kind = dispersion_kind
        self.acc = {p: [] for p in self.pcs}
        self.conf = {p: np.zeros((n_classes, n_classes), dtype=np.int64) for p in self.pcs}
        self.correct = {p: 0 for p in self.pcs}
        self.tested = {p: 0 for p in self.pcs}
        self._rep = None

    def start_repeat(self):
        self._rep = {p: [0, 0] for p in self.pcs}

    def add(self, pc, truth, pred):
        ok = int(np.sum(truth == pred))
        self._rep[pc][0] += ok
        self._rep[pc][1] += truth.size
        np.add.at(self.conf[pc], (truth, pred), 1)

    def end_repeat(self):
        for p, (ok, n) in self._rep.items():
            self.acc[p].append(ok / n if n else np.nan)
            self.correct[p] += ok
            self.tested[p] += n

    def results(self) -> dict:
        return {p: ExperimentResult(np.asarray(self.acc[p]), p, self.kind, self.conf[p],
                                    self.correct[p], self.tested[p]) for p in self.pcs}


def _fit_predict_sweep(train_X, train_y, test_sets, pcs, n_classes, acc: _Accumulator):
    """Fit PCA once with max(pcs) components, then LDA on each leading subset."""
    pmax = max(pcs)
    basis = pca_fit(train_X, pmax)
    Z = pca_project(basis, train_X)
    means, scatter = _class_stats(Z, train_y, n_classes)
    dof = Z.shape[0] - n_classes
    priors = np.full(n_classes, 1.0 / n_classes)
    test_Z = [(pca_project(basis, X), y) for X, y in test_sets]
    for p in pcs:
        cov, _ = _regularize(scatter[:p, :p] / dof)
        W = np.linalg.solve(cov, means[:, :p].T)
        bias = -0.5 * np.sum(means[:, :p].T * W, axis=0) + np.log(priors)
        for (TZ, ty), a in zip(test_Z, acc):
            pred = np.argmax(TZ[:, :p] @ W + bias, axis=1)
            a.add(p, ty, pred)


def stratified_folds(y, k, rng) -> list[np.ndarray]:
    folds = [[] for _ in range(k)]
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        if idx.size < k:
            raise ValueError(f"class {c} has {idx.size} samples, fewer than k={k}")
        for f, part in enumerate(np.array_split(idx, k)):
            folds[f].extend(part.tolist())
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


def _as_pcs(pcs):
    return [int(pcs)] if np.isscalar(pcs) else [int(p) for p in pcs]


def kfold_eval(matrix, labels, pcs, k: int = 4, n_repeats: int = 20, seed: int = 0,
               per_class: int | None = None, dispersion_kind: str = "std",
               strata=None) -> dict:
    """Repeated stratified k-fold accuracy for each PC count.

    Each repeat draws ``per_class`` trials per class (all when None), or per
    value of ``strata`` when given (textures, for the group task), splits
    them into k stratified folds and pools the test predictions of all folds
    into one accuracy. PCA is fit on each training fold only. Returns
    ``{pcs: ExperimentResult}``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    X = np.asarray(matrix, dtype=float)
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    pcs = _as_pcs(pcs)
    rng = np.random.default_rng(seed)
    acc = _Accumulator(pcs, classes.size, dispersion_kind)
    _, draw = (np.unique(np.asarray(strata), return_inverse=True) if strata is not None
               else (classes, y))
    if draw.size != y.size:
        raise ValueError("strata must have one entry per row")
    for _ in range(n_repeats):
        if per_class is None:
            pool = np.arange(y.size)
        else:
            pool = np.sort(np.concatenate([
                rng.choice(np.flatnonzero(draw == c), per_class, replace=False)
                for c in range(draw.max() + 1)]))
        acc.start_repeat()
        for test_local in stratified_folds(y[pool], k, rng):
            mask = np.zeros(pool.size, bool)
            mask[test_local] = True
            tr, te = pool[~mask], pool[mask]
            _fit_predict_sweep(X[tr], y[tr], [(X[te], y[te])], pcs, classes.size, [acc])
        acc.end_repeat()
    return acc.results()


def fold_sizes(n_trials: int, k: int = 4) -> tuple[int, int]:
    """(train, test) trial counts of one fold."""
    test = n_trials // k
    return n_trials - test, test


TRAIN_SPEEDS = (40, 60, 80)
TRAIN_FORCES = (250, 500)
BUCKETS = ("untrained-both", "untrained-force", "untrained-speed", "trained-both")


def condition_bucket(speed, force, train_speeds=TRAIN_SPEEDS, train_forces=TRAIN_FORCES) -> str:
    s_ok = speed in train_speeds
    f_ok = force in train_forces
    if s_ok and f_ok:
        return "trained-both"
    if s_ok:
        return "untrained-force"
    if f_ok:
        return "untrained-speed"
    return "untrained-both"


def bucket_cells(speeds, forces, train_speeds=TRAIN_SPEEDS, train_forces=TRAIN_FORCES) -> dict:
    cells = {b: [] for b in BUCKETS}
    for s in speeds:
        for f in forces:
            cells[condition_bucket(s, f, train_speeds, train_forces)].append((s, f))
    return cells


def extrapolation_eval(matrix, labels, speeds, forces, pcs, seed: int = 0, n_repeats: int = 20,
                       train_speeds=TRAIN_SPEEDS, train_forces=TRAIN_FORCES,
                       train_fraction: float = 0.75) -> dict:
    """Train on trained speed-force cells only and score each test bucket.

    In every trained cell, ``train_fraction`` of each texture's trials train
    and the rest test; from untrained cells the same number of test trials per
    texture is drawn. Returns ``{bucket: {pcs: ExperimentResult}}``.
    """
    X = np.asarray(matrix, dtype=float)
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    speeds = np.asarray(speeds)
    forces = np.asarray(forces)
    cells = bucket_cells(sorted(set(speeds.tolist())), sorted(set(forces.tolist())),
                         train_speeds, train_forces)
    missing = [b for b in BUCKETS if not cells[b]]
    if missing:
        raise ValueError(f"dataset has no speed-force cells for buckets {missing}")
    pcs = _as_pcs(pcs)
    rng = np.random.default_rng(seed)
    accs = {b: _Accumulator(pcs, classes.size) for b in BUCKETS}
    for _ in range(n_repeats):
        train, tests = [], {b: [] for b in BUCKETS}
        for b in BUCKETS:
            for s, f in cells[b]:
                for c in range(classes.size):
                    idx = rng.permutation(np.flatnonzero((speeds == s) & (forces == f) & (y == c)))
                    if idx.size < 2:
                        raise ValueError(f"cell ({s}, {f}) has too few trials for class {classes[c]}")
                    n_train = int(round(train_fraction * idx.size))
                    n_test = idx.size - n_train
                    if b == "trained-both":
                        train.extend(idx[:n_train].tolist())
                        tests[b].extend(idx[n_train:].tolist())
                    else:
                        tests[b].extend(idx[:n_test].tolist())
        train = np.sort(np.asarray(train))
        for a in accs.values():
            a.start_repeat()
        test_sets = [(X[np.asarray(tests[b])], y[np.asarray(tests[b])]) for b in BUCKETS]
        _fit_predict_sweep(X[train], y[train], test_sets, pcs, classes.size,
                           [accs[b] for b in BUCKETS])
        for a in accs.values():
            a.end_repeat()
    return {b: accs[b].results() for b in BUCKETS}


def save_model(path, basis: PcaBasis, model: LdaModel, center: np.ndarray | None = None,
               n_components: int | None = None) -> None:
    doc = {"pca": basis.to_dict(), "lda": model.to_dict(),
           "center": None if center is None else np.asarray(center).tolist(),
           "n_components": n_components or basis.n_components}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    center = None if doc["center"] is None else np.asarray(doc["center"])
    return PcaBasis.from_dict(doc["pca"]), LdaModel.from_dict(doc["lda"]), center, doc["n_components"]
