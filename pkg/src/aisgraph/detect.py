"""Reasoning scores and peaks-over-threshold anomaly thresholds."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

PROB_CLIP = 1e-6
DEFAULT_GAMMAS = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass
class PointScore:
    track_id: str
    t: float
    E: float
    P: float
    RS: float
    label: int = 0
    ship_id: str = ""


@dataclass
class GpdFit:
    u: float
    xi: float
    sigma: float
    n: int
    n_exceed: int
    z_q: float
    q: float
    fallback: bool = False
    warning: str = ""


@dataclass
class AnomalyReport:
    scores: list[PointScore]
    fit: GpdFit
    gamma: float
    extra: dict = field(default_factory=dict)

    @property
    def n_anomalies(self) -> int:
        return sum(s.label for s in self.scores)

    def summary(self) -> dict:
        return {"gamma": self.gamma, "fit": asdict(self.fit), "n_points": len(self.scores),
                "n_anomalies": self.n_anomalies, **self.extra}

    def write(self, fh: IO[str]) -> None:
        """Line-delimited JSON: one record per point, then a summary record."""
        for s in self.scores:
            fh.write(json.dumps({"ship_id": s.ship_id, "track_id": s.track_id, "t": s.t, "E": s.E,
                                 "P": s.P, "RS": s.RS, "label": s.label}) + "\n")
        fh.write(json.dumps({"summary": self.summary()}, sort_keys=True) + "\n")


def read_report(fh: IO[str]) -> AnomalyReport:
    """Inverse of ``AnomalyReport.write``."""
    scores, summary = [], None
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        if "summary" in rec:
            summary = rec["summary"]
            continue
        scores.append(PointScore(rec["track_id"], rec["t"], rec["E"], rec["P"], rec["RS"], rec["label"],
                                 rec.get("ship_id", "")))
    if summary is None:
        raise ValueError("report has no summary record")
    extra = {k: v for k, v in summary.items() if k not in ("gamma", "fit", "n_points", "n_anomalies")}
    return AnomalyReport(scores, GpdFit(**summary["fit"]), summary["gamma"], extra)


# -- per-point components -------------------------------------------------

def node_recon_prob(A_hat: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-row geometric-mean Bernoulli likelihood of ``A`` under ``A_hat``.

    Works on a single (w, w) block or a stack (S, w, w); returns one
    probability per row.  One-node blocks get probability 1.
    """
    A_hat = np.clip(np.asarray(A_hat, dtype=float), PROB_CLIP, 1 - PROB_CLIP)
    A = np.broadcast_to(np.asarray(A, dtype=float), A_hat.shape)
    if A_hat.shape[-1] <= 1:
        return np.ones(A_hat.shape[:-1])
    loglik = A * np.log(A_hat) + (1 - A) * np.log1p(-A_hat)
    return np.exp(loglik.mean(axis=-1))


def reasoning_score(E, P, gamma: float):
    """(E + gamma * (1 - P)) / (1 + gamma)."""
    return (E + gamma * (1.0 - P)) / (1.0 + gamma)


# -- generalized Pareto fit ------------------------------------------------

def _gpd_loglik(y: np.ndarray, xi: float, sigma: float) -> float:
    if sigma <= 0:
        return -np.inf
    if abs(xi) < 1e-12:
        return -len(y) * math.log(sigma) - y.sum() / sigma
    arg = 1 + xi * y / sigma
    if np.any(arg <= 0):
        return -np.inf
    return -len(y) * math.log(sigma) - (1 + 1 / xi) * np.log(arg).sum()


def gpd_moments(y: np.ndarray) -> tuple[float, float]:
    """Method-of-moments (xi, sigma) for excesses ``y``."""
    m, v = y.mean(), y.var()
    if v <= 0:
        return 0.0, float(m)
    ratio = m * m / v
    return 0.5 * (1 - ratio), 0.5 * m * (ratio + 1)


def _profile(y: np.ndarray, theta: float) -> tuple[float, float, float]:
    """Grimshaw reduction: for theta = xi/sigma, xi and sigma have closed forms."""
    if abs(theta) < 1e-14:
        sigma = float(y.mean())
        return _gpd_loglik(y, 0.0, sigma), 0.0, sigma
    s = 1 + theta * y
    if np.any(s <= 0):
        return -np.inf, np.nan, np.nan
    xi = float(np.log(s).mean())
    if xi == 0:
        return -np.inf, np.nan, np.nan
    sigma = xi / theta
    return _gpd_loglik(y, xi, sigma), xi, sigma


def fit_gpd(y: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood (xi, sigma) for GPD excesses.

    Starts from the method-of-moments estimate and searches the one
    parameter theta = xi / sigma over a log-spaced grid on both sides of
    zero, then polishes the best bracket with a bounded scalar search.
    """
    y = np.asarray(y, dtype=float)
    ymax, ymean = float(y.max()), float(y.mean())
    xi_m, sigma_m = gpd_moments(y)
    lo = -1.0 / ymax * (1 - 1e-9)
    mags = np.logspace(-6, 0, 60)
    grid = np.concatenate([lo * mags[::-1], [0.0], (mags * 1e3 / ymean)])
    if sigma_m > 0:
        grid = np.append(grid, xi_m / sigma_m)
    grid = np.unique(grid[grid > lo])
    values = np.array([_profile(y, th)[0] for th in grid])
    i = int(np.nanargmax(values))
    best_theta = grid[i]
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    if b > a:
        res = minimize_scalar(lambda th: -_profile(y, th)[0], bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, abs(best_theta))})
        if res.success and -res.fun >= values[i]:
            best_theta = float(res.x)
    _, xi, sigma = _profile(y, best_theta)
    return float(xi), float(sigma)


def gpd_quantile(u: float, xi: float, sigma: float, q: float, n: int, n_exceed: int) -> float:
    r = q * n / n_exceed
    if abs(xi) < 1e-8:
        return u - sigma * math.log(r)
    return u + (sigma / xi) * (r ** (-xi) - 1)


def pot_threshold(scores, q: float = 1e-2, init_quantile: float = 0.98, min_exceed: int = 20) -> GpdFit:
    """Risk-``q`` threshold from a GPD fitted to excesses over the ``init_quantile`` level.

    With fewer than ``min_exceed`` excesses the empirical (1 - q) quantile is
    used instead and the fit is flagged as a fallback.
    """
    x = np.asarray(scores, dtype=float)
    n = len(x)
    if n == 0:
        raise ValueError("no scores to threshold")
    u = float(np.quantile(x, init_quantile))
    excess = x[x > u] - u
    if len(excess) < min_exceed:
        z = float(np.quantile(x, 1 - q))
        msg = f"only {len(excess)} excesses over u={u:.6g}; empirical quantile used"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return GpdFit(u, 0.0, float("nan"), n, len(excess), z, q, fallback=True, warning=msg)
    xi, sigma = fit_gpd(excess)
    z = gpd_quantile(u, xi, sigma, q, n, len(excess))
    return GpdFit(u, xi, sigma, n, len(excess), float(z), q)


def classify(scores: Sequence[PointScore], fit: GpdFit, gamma: float) -> AnomalyReport:
    """Label a point anomalous iff its RS is strictly above the fitted threshold."""
    out = []
    for s in scores:
        out.append(PointScore(s.track_id, s.t, s.E, s.P, s.RS, int(s.RS > fit.z_q), s.ship_id))
    return AnomalyReport(out, fit, gamma)


def tune_gamma(
    calib_E: np.ndarray,
    calib_P: np.ndarray,
    val_E: np.ndarray,
    val_P: np.ndarray,
    gammas: Sequence[float] = DEFAULT_GAMMAS,
    q: float = 1e-2,
    init_quantile: float = 0.98,
    min_exceed: int = 20,
) -> tuple[float, dict[float, float]]:
    """Pick gamma with the lowest false-alarm rate on clean validation points.

    For each candidate the POT threshold is fitted on the calibration scores
    and the rate is the fraction of validation scores above it.  Ties go to
    the smaller gamma; if every candidate produces constant scores the
    fallback gamma is 1.
    """
    rates: dict[float, float] = {}
    degenerate = True
    for g in sorted(gammas):
        cal = reasoning_score(np.asarray(calib_E), np.asarray(calib_P), g)
        val = reasoning_score(np.asarray(val_E), np.asarray(val_P), g)
        if np.ptp(cal) > 0 or np.ptp(val) > 0:
            degenerate = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = pot_threshold(cal, q, init_quantile, min_exceed)
        rates[g] = float(np.mean(val > fit.z_q)) if len(val) else 0.0
    if degenerate:
        return 1.0, rates
    return select_gamma(rates), rates


def select_gamma(rates: dict[float, float]) -> float:
    """argmin of false-alarm rate; ties broken toward the smaller gamma."""
    best = min(rates.values())
    return min(g for g, r in rates.items() if r == best)
