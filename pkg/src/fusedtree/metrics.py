"""Prediction performance metrics.

Survival discrimination uses rank-based statistics: Harrell's pairwise
concordance, the censoring-robust IPCW concordance (Kaplan-Meier
weights, truncated), and the cumulative/dynamic time-dependent AUC.
"""

import numpy as np

from .errors import DataError


def pmse(y, y_hat):
    """Mean squared prediction error."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise DataError("prediction and response lengths differ")
    if y.size == 0:
        raise DataError("empty input")
    return float(np.mean((y - y_hat) ** 2))


def km_censoring_survival(time, status):
    """Kaplan-Meier estimate of the censoring survival function G.

    Censorings play the role of events. Returns (times, surv) where
    surv[k] is G at times[k]; G is 1 before the first censoring time.
    """
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    order = np.argsort(time, kind="stable")
    t = time[order]
    cens = 1.0 - status[order]
    uniq = np.unique(t)
    at_risk = t.size - np.searchsorted(t, uniq, side="left")
    d_c = np.zeros(uniq.size)
    np.add.at(d_c, np.searchsorted(uniq, t[cens > 0]), 1.0)
    surv = np.cumprod(1.0 - d_c / at_risk)
    return uniq, surv


def _g_before(times, surv, t):
    """G(t-): the censoring survival just before each t."""
    pos = np.searchsorted(times, np.asarray(t, dtype=float), side="left")
    padded = np.concatenate([[1.0], surv])
    return padded[pos]


def _pair_score(eta_i, eta_j):
    """1 / 0.5 / 0 for concordant / tied / discordant risk ordering."""
    return np.where(eta_i > eta_j, 1.0, np.where(eta_i == eta_j, 0.5, 0.0))


def concordance(eta, time, status, variant="harrell", truncation=None):
    """Concordance index of risk scores against survival outcomes.

    ``harrell``: pairs (i, j) with t_i < t_j and an event at t_i;
    concordant when eta_i > eta_j, ties in eta count one half.
    ``ipcw``: the same pairs restricted to t_i < truncation, weighted by
    the inverse squared Kaplan-Meier censoring survival G(t_i-).
    """
    eta = np.asarray(eta, dtype=float)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    if variant not in ("harrell", "ipcw"):
        raise DataError(f"unknown concordance variant: {variant!r}")
    if truncation is None:
        events = time[status > 0]
        truncation = float(events.max()) if events.size else np.inf
    if variant == "ipcw":
        kt, ks = km_censoring_survival(time, status)
        g = np.clip(_g_before(kt, ks, time), 1e-12, None)
        w = 1.0 / (g * g)
    else:
        w = np.ones_like(time)

    num = 0.0
    den = 0.0
    for i in np.where(status > 0)[0]:
        if variant == "ipcw" and not time[i] < truncation:
            continue
        later = time > time[i]
        if not later.any():
            continue
        score = _pair_score(eta[i], eta[later])
        num += w[i] * score.sum()
        den += w[i] * np.count_nonzero(later)
    if den == 0:
        raise DataError("no comparable pairs")
    return float(num / den)


def td_auc(eta, time, status, horizon):
    """Cumulative/dynamic AUC at ``horizon`` with IPCW weights.

    Cases are events by the horizon, controls are rows still at risk
    past it; case weights are 1/G(t_i-) from the Kaplan-Meier censoring
    estimate.
    """
    eta = np.asarray(eta, dtype=float)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    cases = np.where((time <= horizon) & (status > 0))[0]
    controls = np.where(time > horizon)[0]
    if cases.size == 0 or controls.size == 0:
        raise DataError("need at least one case and one control at the horizon")
    kt, ks = km_censoring_survival(time, status)
    w = 1.0 / np.clip(_g_before(kt, ks, time[cases]), 1e-12, None)
    num = 0.0
    for i, wi in zip(cases, w):
        num += wi * _pair_score(eta[i], eta[controls]).sum()
    return float(num / (w.sum() * controls.size))
