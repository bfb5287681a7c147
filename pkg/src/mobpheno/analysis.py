"""PCA on pooled displacement profiles and Welch two-sample comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .ddp import DISPLACEMENT_LABELS
from .errors import InsufficientSamples, MetricMissingForGroup
from .ingest import Group


# -- symmetric eigensolver -----------------------------------------------------

def _off_norm(a: np.ndarray) -> float:
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return float(np.sqrt(np.sum(off * off)))


def jacobi_eigh(matrix, tol: float = 1e-10, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Sweeps until the off-diagonal Frobenius norm drops below ``tol``.
    Returns ``(eigenvalues, eigenvectors, sweeps)``
    sorted by descending eigenvalue, eigenvectors as columns.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    a = (a + a.T) / 2.0
    v = np.eye(n)
    sweeps = 0
    while _off_norm(a) >= tol:
        if sweeps >= max_sweeps:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) + 100.0 * abs(apq) == abs(h):
                    # pivot negligible against the diagonal gap: t ~ apq / h
                    t = apq / h
                else:
                    tau = h / (2.0 * apq)
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order], sweeps


# -- PCA -------------------------------------------------------------------------

@dataclass(eq=False)
class PcaModel:
    mean_vector: np.ndarray
    scale_vector: np.ndarray  # ones for covariance PCA
    loadings: np.ndarray  # p x K, orthonormal columns
    eigenvalues: np.ndarray  # all p, descending
    explained_variance_ratio: np.ndarray  # K
    scores: np.ndarray  # N x K

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    def cumulative_ratio(self, k: int) -> float:
        lam = np.clip(self.eigenvalues, 0.0, None)
        return float(lam[:k].sum() / lam.sum())

    def transform(self, x) -> np.ndarray:
        return ((np.asarray(x, dtype=float) - self.mean_vector) / self.scale_vector) @ self.loadings

    def inverse_transform(self, scores) -> np.ndarray:
        return (np.asarray(scores) @ self.loadings.T) * self.scale_vector + self.mean_vector


def pca_fit(x, k: int = 10, correlation: bool = False) -> PcaModel:
    """Covariance (or correlation) PCA of an N x p matrix.

    The largest-magnitude entry of every loading column is made positive.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if n < 2:
        raise InsufficientSamples("PCA needs at least 2 rows")
    if not 1 <= k <= p:
        raise ValueError(f"k must be in [1, {p}]")
    mean = x.mean(axis=0)
    scale = np.ones(p)
    if correlation:
        sd = x.std(axis=0, ddof=1)
        scale = np.where(sd > 0, sd, 1.0)
    z = (x - mean) / scale
    cov = z.T @ z / (n - 1)
    w, v, _ = jacobi_eigh(cov)
    pivot = np.argmax(np.abs(v), axis=0)
    v = v * np.where(v[pivot, np.arange(p)] < 0, -1.0, 1.0)
    lam = np.clip(w, 0.0, None)
    ratio = lam / lam.sum() if lam.sum() > 0 else np.zeros(p)
    loadings = v[:, :k]
    return PcaModel(mean, scale, loadings, w, ratio[:k], z @ loadings)


def loadings_table(model: PcaModel, labels=DISPLACEMENT_LABELS) -> pd.DataFrame:
    """Rows = PCs, columns = bin labels."""
    df = pd.DataFrame(model.loadings.T, columns=list(labels))
    df.insert(0, "pc", [f"PC{i + 1}" for i in range(model.n_components)])
    return df


def variance_table(model: PcaModel) -> pd.DataFrame:
    p = len(model.eigenvalues)
    lam = np.clip(model.eigenvalues, 0.0, None)
    ratio = lam / lam.sum() if lam.sum() > 0 else np.zeros(p)
    return pd.DataFrame({
        "pc": [f"PC{i + 1}" for i in range(p)],
        "eigenvalue": model.eigenvalues,
        "explained_ratio": ratio,
        "cumulative_ratio": np.cumsum(ratio),
    })


# displacement index i = movement into half-hour bin i + 1
MORNING = [i - 1 for i in range(16, 20)]   # 08:00-10:00
EVENING = [i - 1 for i in range(38, 42)]   # 19:00-21:00
MIDDAY = [i - 1 for i in range(22, 34)]    # 11:00-17:00


def morning_evening_contrast(loadings) -> pd.DataFrame:
    """Per PC: mean loading over 8-10am + 7-9pm vs over 11am-5pm.

    ``contrasting`` is true when the two means have opposite signs.
    """
    l = np.asarray(loadings)
    me = l[MORNING + EVENING].mean(axis=0)
    mid = l[MIDDAY].mean(axis=0)
    return pd.DataFrame({
        "pc": [f"PC{i + 1}" for i in range(l.shape[1])],
        "morning_evening": me,
        "midday": mid,
        "contrasting": np.sign(me) * np.sign(mid) < 0,
    })


# -- t distribution ------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 100_000, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float, xc: Optional[float] = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may pass 1 - x computed without cancellation.
    """
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(xc))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, xc) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


# -- Welch test ------------------------------------------------------------------

@dataclass
class WelchResult:
    mean_a: float
    mean_b: float
    t_statistic: float
    degrees_freedom: float
    p_value: float
    n_a: int
    n_b: int
    degenerate: bool = False


def welch_t(sample_a, sample_b) -> WelchResult:
    """Two-sided Welch t-test with Welch-Satterthwaite df (never rounded).

    Both samples with zero variance give p = 1 (equal means) or p = 0
    (different means), flagged as ``degenerate``.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise InsufficientSamples(f"Welch test needs n >= 2 per sample, got {na} and {nb}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(ma, mb, 0.0, float(na + nb - 2), 1.0, na, nb, True)
        t = math.copysign(math.inf, ma - mb)
        return WelchResult(ma, mb, t, float(na + nb - 2), 0.0, na, nb, True)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return WelchResult(ma, mb, t, df, t_two_sided_p(t, df), na, nb)


# -- group comparison ----------------------------------------------------------

@dataclass
class ComparisonRow:
    metric: str
    granularity: str
    mean_post: float
    mean_pre: float
    t: float
    df: float
    p: float
    n_post: int
    n_pre: int

    @property
    def welch(self) -> WelchResult:
        return WelchResult(self.mean_post, self.mean_pre, self.t, self.df, self.p,
                           self.n_post, self.n_pre)


REPORT_COLUMNS = ["metric", "granularity", "mean_post", "mean_pre", "t", "df", "p"]
POOLING_NOTE = (
    "day-granularity tests pool participant-days and ignore within-participant dependence"
)


def group_compare(table: pd.DataFrame, metric: str, granularity: str = "day") -> ComparisonRow:
    """Welch test of POST vs PRE values of ``metric``.

    With ``granularity='participant'`` a day-level table is first averaged
    per participant. ``t`` is positive when POST exceeds PRE.
    """
    if metric not in table:
        raise MetricMissingForGroup(f"metric {metric!r} not in table")
    df = table[["participant_id", "group", metric]].dropna()
    if granularity == "participant":
        df = df.groupby(["participant_id", "group"], as_index=False)[metric].mean()
    elif granularity != "day":
        raise ValueError(f"unknown granularity {granularity!r}")
    groups = df["group"].astype(str)
    post = df.loc[groups == Group.POST.value, metric].to_numpy(dtype=float)
    pre = df.loc[groups == Group.PRE.value, metric].to_numpy(dtype=float)
    for name, values in (("POST", post), ("PRE", pre)):
        if values.size == 0:
            raise MetricMissingForGroup(f"metric {metric!r} has no values for {name}")
    r = welch_t(post, pre)
    return ComparisonRow(metric, granularity, r.mean_a, r.mean_b, r.t_statistic,
                         r.degrees_freedom, r.p_value, r.n_a, r.n_b)


def comparison_table(rows) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.metric, r.granularity, r.mean_post, r.mean_pre, r.t, r.df, r.p] for r in rows],
        columns=REPORT_COLUMNS,
    )
