"""Severe-sadness prediction from daily phenotypes.

Two classifiers are evaluated with leave-one-participant-out folds and a
per-participant AUC:

* logistic regression with ridge-penalized per-participant intercept
  offsets, a fixed-effect stand-in for a random participant intercept;
* a 200-tree random forest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier

from .analysis import WelchResult, welch_t
from .errors import AllSkipped, InsufficientSamples, NoClassVariation
from .phenotypes import FEATURE_COLUMNS

MIXED_MODEL_NOTE = (
    "random participant intercepts approximated by ridge-penalized fixed offsets; "
    "held-out participants receive offset 0"
)


@dataclass(eq=False)
class ModelInput:
    X: np.ndarray  # n x 7, columns ordered as FEATURE_COLUMNS
    y: np.ndarray  # bool
    participants: np.ndarray  # str
    group: Optional[str] = None
    n_dropped: int = 0

    def __len__(self):
        return len(self.y)

    def subset(self, mask) -> "ModelInput":
        return ModelInput(self.X[mask], self.y[mask], self.participants[mask], self.group)


def model_input(table: pd.DataFrame, group: Optional[str] = None) -> ModelInput:
    """Rows with all seven features and a label; others are dropped and counted."""
    df = table if group is None else table[table["group"].astype(str) == group]
    ok = df[FEATURE_COLUMNS].notna().all(axis=1) & df["severe_sad"].notna()
    kept = df[ok]
    return ModelInput(
        X=kept[FEATURE_COLUMNS].to_numpy(dtype=float),
        y=kept["severe_sad"].to_numpy(dtype=bool),
        participants=kept["participant_id"].astype(str).to_numpy(),
        group=group,
        n_dropped=int((~ok).sum()),
    )


# -- cohort ----------------------------------------------------------------------

@dataclass
class CohortSummary:
    eligible: list[str]
    counts: dict[str, tuple[int, int]]  # group -> (eligible, total)


def filter_cohort(table: pd.DataFrame, min_severe_days: int = 2) -> CohortSummary:
    """Participants with at least ``min_severe_days`` severe-sadness days."""
    df = table[["participant_id", "group", "severe_sad"]].copy()
    df["severe_sad"] = df["severe_sad"].fillna(False).astype(bool)
    per = df.groupby(["participant_id", "group"], as_index=False)["severe_sad"].sum()
    per["eligible"] = per["severe_sad"] >= min_severe_days
    counts = {
        str(g): (int(sub["eligible"].sum()), len(sub))
        for g, sub in per.groupby("group")
    }
    eligible = sorted(per.loc[per["eligible"], "participant_id"].astype(str))
    return CohortSummary(eligible, counts)


# -- standardization -----------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X) -> np.ndarray:
        return (X - self.mean) / self.sd


# -- logistic regression with participant offsets ------------------------------

@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    offsets: dict
    converged: bool
    n_iter: int
    objective_trace: list = field(default_factory=list)

    def decision_function(self, X, participants=None) -> np.ndarray:
        eta = np.asarray(X, dtype=float) @ self.weights + self.intercept
        if participants is not None:
            eta = eta + np.array([self.offsets.get(p, 0.0) for p in participants])
        return eta

    def predict_proba(self, X, participants=None) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision_function(X, participants)))


def _logistic_objective(eta, y, theta, penalized, lam):
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * lam * np.sum((theta * penalized) ** 2))


def fit_logistic(X, y, participants=None, lam: float = 1.0, max_iter: int = 500,
                 tol: float = 1e-8) -> LogisticModel:
    """Newton/IRLS fit of a ridge-penalized logistic model.

    Parameters are a global intercept (unpenalized), one weight per feature
    and one intercept offset per training participant (both penalized by
    ``lam``). Iterates until the gradient max-norm is below ``tol``; each
    step is halved until the objective does not increase.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise NoClassVariation("training labels contain one class only")
    n, k = X.shape
    if participants is None:
        ids = []
        Z = np.hstack([np.ones((n, 1)), X])
    else:
        ids, inv = np.unique(np.asarray(participants), return_inverse=True)
        onehot = np.zeros((n, len(ids)))
        onehot[np.arange(n), inv] = 1.0
        Z = np.hstack([np.ones((n, 1)), X, onehot])
    m = Z.shape[1]
    penalized = np.ones(m)
    penalized[0] = 0.0
    reg = lam * penalized

    theta = np.zeros(m)
    eta = Z @ theta
    obj = _logistic_objective(eta, y, theta, penalized, lam)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = Z.T @ (p - y) + reg * theta
        if np.max(np.abs(grad)) < tol:
            converged = True
            it -= 1
            break
        w = p * (1.0 - p)
        hess = (Z * w[:, None]).T @ Z + np.diag(reg)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # near the optimum the objective change drops below rounding noise,
        # so a step may be accepted if it is no worse than that noise
        slack = 1e-13 * (1.0 + abs(obj))
        scale = 1.0
        while True:
            cand = theta - scale * step
            cand_eta = Z @ cand
            cand_obj = _logistic_objective(cand_eta, y, cand, penalized, lam)
            if cand_obj <= obj + slack or scale < 1e-10:
                break
            scale *= 0.5
        if cand_obj > obj + slack:
            # no descent possible at machine precision
            converged = True
            break
        theta, eta, obj = cand, cand_eta, cand_obj
        trace.append(obj)
    else:
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = Z.T @ (p - y) + reg * theta
        converged = bool(np.max(np.abs(grad)) < tol)
    offsets = {str(pid): float(theta[1 + k + j]) for j, pid in enumerate(ids)}
    return LogisticModel(theta[1:1 + k].copy(), float(theta[0]), offsets, converged, it, trace)


# -- random forest -------------------------------------------------------------

@dataclass(eq=False)
class ForestModel:
    forest: RandomForestClassifier

    def predict_proba(self, X, participants=None) -> np.ndarray:
        """Fraction of trees voting for the severe class."""
        X = np.asarray(X, dtype=float)
        pos = int(np.flatnonzero(self.forest.classes_ == 1)[0])
        votes = np.zeros(len(X))
        for tree in self.forest.estimators_:
            votes += tree.predict(X) == pos
        return votes / len(self.forest.estimators_)


def fit_forest(X, y, seed: int = 0, n_trees: int = 200, max_features: Optional[int] = None,
               min_samples_leaf: int = 1, n_jobs: int = 1) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if y.min() == y.max():
        raise NoClassVariation("training labels contain one class only")
    if max_features is None:
        max_features = max(1, int(np.floor(np.sqrt(X.shape[1]))))
    rf = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features=max_features,
        min_samples_leaf=min_samples_leaf,
        bootstrap=True,
        random_state=seed,
        n_jobs=n_jobs,
    )
    rf.fit(X, y)
    return ForestModel(rf)


# -- evaluation ----------------------------------------------------------------

def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    n_pos = int(lab.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise NoClassVariation("AUC needs both classes")
    uniq, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    # average rank (1-based) of each distinct score
    ranks = np.cumsum(counts) - (counts - 1) / 2.0
    r_pos = ranks[inv][lab].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class FoldInfo:
    held_out: str
    train_participants: frozenset
    n_train: int
    standardizer: Optional[Standardizer]
    seed: int


@dataclass
class PredictionResult:
    group: Optional[str]
    method: str
    per_participant_auc: dict
    mean_auc: float
    sd_auc: float
    n_participants: int
    skipped: list
    n_days: dict = field(default_factory=dict)
    n_severe: dict = field(default_factory=dict)
    folds: dict = field(default_factory=dict)

    @property
    def aucs(self) -> np.ndarray:
        return np.array([self.per_participant_auc[p] for p in sorted(self.per_participant_auc)])


def fold_seed(seed: int, fold_index: int) -> int:
    """Seed for one fold, derived from (run seed, fold index) only."""
    return int(np.random.SeedSequence([seed, fold_index]).generate_state(1)[0])


def loocv_auc(data: ModelInput, method: str = "logistic", seed: int = 0, lam: float = 1.0,
              n_trees: int = 200, max_features: Optional[int] = None,
              min_samples_leaf: int = 1, standardize: bool = True,
              n_jobs: int = 1) -> PredictionResult:
    """Leave-one-participant-out evaluation with per-participant AUC.

    Participants whose held-out days are all one class are skipped.
    """
    if method not in ("logistic", "forest"):
        raise ValueError(f"unknown method {method!r}")
    people = sorted(set(data.participants.tolist()))
    if len(people) < 2:
        raise InsufficientSamples("LOOCV needs at least 2 participants")
    aucs, skipped, folds, n_days, n_severe = {}, [], {}, {}, {}
    for i, pid in enumerate(people):
        test = data.participants == pid
        y_test = data.y[test]
        n_days[pid] = int(test.sum())
        n_severe[pid] = int(y_test.sum())
        if y_test.all() or not y_test.any():
            skipped.append(pid)
            continue
        train = ~test
        X_train, X_test = data.X[train], data.X[test]
        scaler = None
        if standardize:
            scaler = Standardizer.fit(X_train)
            X_train, X_test = scaler.transform(X_train), scaler.transform(X_test)
        s = fold_seed(seed, i)
        if data.y[train].all() or not data.y[train].any():
            skipped.append(pid)
            continue
        if method == "logistic":
            model = fit_logistic(X_train, data.y[train], data.participants[train], lam=lam)
            scores = model.decision_function(X_test)
        else:
            model = fit_forest(X_train, data.y[train], seed=s, n_trees=n_trees,
                               max_features=max_features, min_samples_leaf=min_samples_leaf,
                               n_jobs=n_jobs)
            scores = model.predict_proba(X_test)
        aucs[pid] = auc(scores, y_test)
        folds[pid] = FoldInfo(pid, frozenset(data.participants[train].tolist()),
                              int(train.sum()), scaler, s)
    if not aucs:
        raise AllSkipped("every held-out participant had single-class labels")
    values = np.array([aucs[p] for p in sorted(aucs)])
    sd = float(values.std(ddof=1)) if len(values) > 1 else float("nan")
    return PredictionResult(data.group, method, aucs, float(values.mean()), sd, len(aucs),
                            skipped, n_days, n_severe, folds)


def compare_group_auc(result_pre: PredictionResult, result_post: PredictionResult) -> WelchResult:
    """Welch test of per-participant AUCs, PRE as sample a."""
    return welch_t(result_pre.aucs, result_post.aucs)


def prediction_table(results) -> pd.DataFrame:
    rows = []
    for r in results:
        for pid in sorted(r.n_days):
            rows.append({
                "participant_id": pid,
                "group": r.group,
                "method": r.method,
                "n_days": r.n_days[pid],
                "n_severe": r.n_severe[pid],
                "auc": r.per_participant_auc.get(pid, np.nan),
            })
    return pd.DataFrame(rows, columns=["participant_id", "group", "method", "n_days", "n_severe", "auc"])


def auc_summary_row(result_pre: PredictionResult, result_post: PredictionResult) -> dict:
    w = compare_group_auc(result_pre, result_post)
    return {
        "method": result_pre.method,
        "auc_mean_pre": result_pre.mean_auc,
        "auc_sd_pre": result_pre.sd_auc,
        "auc_mean_post": result_post.mean_auc,
        "auc_sd_post": result_post.sd_auc,
        "p": w.p_value,
    }
