"""Posterior summaries, convergence checks and survival-curve grids."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frailty import box_mass2_array, survival2_array, survival_drop
from .likelihood import EligibilityTimeline, SubjectRecord

QUANTILES = (0.025, 0.5, 0.975)


# ---------------------------------------------------------------------------
# summaries


@dataclass
class PosteriorSummary:
    names: list
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_draws: int

    def row(self, name: str) -> tuple[float, float, float]:
        i = self.names.index(name)
        return float(self.median[i]), float(self.lower[i]), float(self.upper[i])

    def as_dict(self) -> dict:
        return {n: {"median": float(m), "lower": float(lo), "upper": float(hi), "n_draws": self.n_draws}
                for n, m, lo, hi in zip(self.names, self.median, self.lower, self.upper)}


def _draws_of(chains):
    if hasattr(chains, "draws"):
        chains = [chains]
    names = list(chains[0].parameter_names)
    for c in chains[1:]:
        if list(c.parameter_names) != names:
            raise ValueError("chains have different parameter columns")
    return names, np.vstack([c.draws for c in chains])


def summarize(chains) -> PosteriorSummary:
    """Posterior medians and 95% central intervals (linear interpolation quantiles), pooled over chains."""
    names, draws = _draws_of(chains)
    if draws.shape[0] == 0:
        raise ValueError("cannot summarise an empty chain")
    lo, med, hi = np.quantile(draws, QUANTILES, axis=0)
    return PosteriorSummary(names, med, lo, hi, int(draws.shape[0]))


def write_summary(summary: PosteriorSummary, csv_path, json_path=None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "median", "lower_2.5", "upper_97.5", "n_draws"])
        for n, (m, lo, hi) in zip(summary.names, zip(summary.median, summary.lower, summary.upper)):
            w.writerow([n, repr(float(m)), repr(float(lo)), repr(float(hi)), summary.n_draws])
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# convergence


def _taper(n: int, proportion: float) -> np.ndarray:
    # split cosine bell over `proportion` of the points at each end
    w = np.ones(n)
    m = int(math.floor(n * proportion))
    if m > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(m) + 0.5) / m))
        w[:m] = ramp
        w[n - m:] = ramp[::-1]
    return w


def spectrum0(x, taper: float = 0.04, n_freq: int | None = None) -> float:
    """Spectral density at frequency zero, scaled so that ``var(mean) ~ spectrum0 / n``.

    Tapered periodogram averaged over the lowest ``n_freq`` non-zero Fourier
    frequencies (default ``floor(sqrt(n))``).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    w = _taper(n, taper)
    y = (x - x.mean()) * w
    pg = np.abs(np.fft.rfft(y)) ** 2 / np.sum(w * w)
    k = n_freq or max(int(math.sqrt(n)), 1)
    k = min(k, pg.size - 1)
    return float(np.mean(pg[1:k + 1]))


def geweke(x, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Z-score comparing the mean of the first ``frac_a`` and the last ``frac_b`` of a chain."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError("geweke needs at least 100 draws")
    if not (0 < frac_a and 0 < frac_b and frac_a + frac_b <= 1):
        raise ValueError("window fractions must be positive and not overlap")
    a = x[: int(frac_a * n)]
    b = x[n - int(frac_b * n):]
    va, vb = spectrum0(a) / a.size, spectrum0(b) / b.size
    if not va + vb > 0:
        raise ValueError("chain segment has zero variance")
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of equal-length chains (rows are chains)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    m, n = x.shape
    if n < 100:
        raise ValueError("gelman_rubin needs chains of at least 100 draws")
    w = x.var(axis=1, ddof=1).mean()
    if not w > 0:
        raise ValueError("within-chain variance is zero")
    b = n * x.mean(axis=1).var(ddof=1)
    v = (n - 1) / n * w + b / n
    return float(math.sqrt(v / w))


def convergence_report(chains) -> dict:
    """Geweke z per chain and R-hat per parameter."""
    names, _ = _draws_of(chains)
    chains = [chains] if hasattr(chains, "draws") else list(chains)
    out = {}
    for i, name in enumerate(names):
        cols = [c.draws[:, i] for c in chains]
        entry = {}
        try:
            entry["geweke"] = [geweke(c) for c in cols]
        except ValueError as exc:
            entry["geweke_error"] = str(exc)
        if len(cols) > 1:
            length = min(len(c) for c in cols)
            try:
                entry["rhat"] = gelman_rubin([c[:length] for c in cols])
            except ValueError as exc:
                entry["rhat_error"] = str(exc)
        out[name] = entry
    return out


# ---------------------------------------------------------------------------
# lag laws evaluated over posterior draws


def first_lag_survival(rate, t, upper):
    """Survival of a single (optionally truncated) exponential lag."""
    rate = np.asarray(rate, dtype=float)
    t = np.asarray(t, dtype=float)
    if math.isinf(upper):
        return np.exp(-rate * t)
    num = np.exp(-rate * np.minimum(t, upper)) - np.exp(-rate * upper)
    return num / -np.expm1(-rate * upper)


def pair_survival(r1, r2, alpha, y1, y2, upper):
    """``P(Y1 > y1, Y2 > y2)`` for the two-lag law, renormalised on ``[0, upper]^2``."""
    a = np.clip(alpha, 1e-6, 1.0)
    if math.isinf(upper):
        return survival2_array(r1, y1, r2, y2, a)
    y1 = np.minimum(y1, upper)
    y2 = np.minimum(y2, upper)
    num = survival_drop(r1, y1, upper, a, r2 * y2) - survival_drop(r1, y1, upper, a, r2 * upper)
    return np.clip(num / box_mass2_array(r1, r2, a, upper), 0.0, 1.0)


def lag_survival(rates: Sequence, alpha, k: int, t, upper):
    """Marginal survival of lag ``k`` (0-based) of a one- or two-lag law."""
    if len(rates) == 1:
        return first_lag_survival(rates[0], t, upper)
    if len(rates) != 2:
        raise NotImplementedError("survival curves are provided for at most two lags")
    r1, r2 = rates
    if k == 0:
        return pair_survival(r1, r2, alpha, t, 0.0, upper)
    return pair_survival(r1, r2, alpha, 0.0, t, upper)


def median_lag_draws(rates: Sequence, alpha, k: int, upper: float, iterations: int = 80) -> np.ndarray:
    """Median of lag ``k`` for each posterior draw by vectorised bisection."""
    rates = [np.atleast_1d(np.asarray(r, dtype=float)) for r in rates]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), rates[0].shape)
    if len(rates) == 1 and math.isinf(upper):
        return math.log(2.0) / rates[0]
    if math.isinf(upper):
        return math.log(2.0) ** (1.0 / np.clip(alpha, 1e-6, 1.0)) / rates[k]
    lo = np.zeros(rates[0].shape)
    hi = np.full(rates[0].shape, float(upper))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        above = lag_survival(rates, alpha, k, mid, upper) > 0.5
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# curve grids


CURVE_KINDS = ("population", "marginal", "conditional", "bivariate-contour", "posterior-density")


@dataclass
class CurveGrid:
    """One curve or surface; ``values`` has shape ``(len(time1),)`` or ``(len(time1), len(time2))``.

    ``posterior-density`` grids hold a density over survival probability
    (``time1``) at each time in ``time2`` and are exempt from the survival
    invariants.
    """

    kind: str
    label: str
    time1: np.ndarray
    values: np.ndarray
    time2: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")

    def check(self, tol: float = 1e-12) -> None:
        """Assert the survival invariants (values in [0, 1], non-increasing in time)."""
        if self.kind == "posterior-density":
            return
        v = np.asarray(self.values)
        if np.any(v < -tol) or np.any(v > 1 + tol):
            raise AssertionError(f"{self.kind}/{self.label}: values outside [0, 1]")
        if np.any(np.diff(v, axis=0) > tol) or (v.ndim == 2 and np.any(np.diff(v, axis=1) > tol)):
            raise AssertionError(f"{self.kind}/{self.label}: curve increases with time")


@dataclass(frozen=True)
class GridSpec:
    times: tuple = tuple(np.round(np.linspace(0.0, 10.0, 101), 10))
    contour_max: float = 5.0
    contour_points: int = 51
    density_times: tuple = (1.0, 2.0, 5.0)
    density_bins: int = 50
    theta_rows: tuple = ()
    lag_row: tuple = ()
    max_draws: int = 2000

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        for key in ("times", "density_times", "lag_row"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        if "theta_rows" in d:
            d["theta_rows"] = tuple(tuple(float(v) for v in row) for row in d["theta_rows"])
        return cls(**d)


class _Draws:
    """Parameter arrays per draw reconstructed from chain columns."""

    def __init__(self, names, draws, ell, theta_rows, lag_row):
        col = {n: draws[:, i] for i, n in enumerate(names)}
        self.n = draws.shape[0]
        self.ell = ell
        self.alpha = col.get("alpha", np.ones(self.n))
        self.rates = {}
        for j in range(1, ell + 1):
            rs = []
            for k in range(1, j + 1):
                if f"lambda_{j}_{k}" in col:
                    rs.append(col[f"lambda_{j}_{k}"])
                else:
                    coefs = sorted((n for n in col if n.startswith(f"omega_{j}_{k}_")),
                                   key=lambda s: int(s.rsplit("_", 1)[1]))
                    z = np.concatenate([[1.0], lag_row]) if lag_row else np.eye(1, len(coefs))[0]
                    if len(z) != len(coefs):
                        raise ValueError("lag_row width does not match the lag-link coefficients")
                    rs.append(np.exp(np.stack([col[c] for c in coefs], axis=1) @ z))
            self.rates[j] = rs
        self.theta_sets = {}
        if "theta_0" in col:
            self.theta_sets["all"] = np.stack([col[f"theta_{j}"] for j in range(ell + 1)], axis=1)
        else:
            width = sum(1 for n in col if n.startswith("beta_1_"))
            rows = theta_rows or (tuple([0.0] * (width - 1)),)
            for row in rows:
                x = np.concatenate([[1.0], row])
                if len(x) != width:
                    raise ValueError("theta_rows width does not match the count-link coefficients")
                lin = [np.zeros(self.n)]
                for j in range(1, ell + 1):
                    lin.append(np.stack([col[f"beta_{j}_{c}"] for c in range(width)], axis=1) @ x)
                lin = np.stack(lin, axis=1)
                lin -= lin.max(axis=1, keepdims=True)
                th = np.exp(lin)
                self.theta_sets["x=" + ";".join(f"{v:g}" for v in row)] = th / th.sum(axis=1, keepdims=True)


def survival_grids(chains, ell: int, timeline: EligibilityTimeline,
                   spec: GridSpec | None = None) -> list[CurveGrid]:
    """Pointwise posterior-median survival curves and surfaces.

    * ``population``: probability of no first screening by lag ``t``,
      ``theta_0 + sum_j theta_j S_j1(t)`` (one curve per covariate row when
      the count probabilities are linked to covariates).
    * ``marginal``: ``1 - theta_j F_jk(t)`` for each lag ``k`` of law ``j``.
    * ``conditional``: ``S_jk(t)`` given ``M = j`` (no count weighting).
    * ``bivariate-contour``: joint survival of the two lags given ``M = 2``.
    * ``posterior-density``: histogram density of ``S_jk(t)`` across draws.
    """
    spec = spec or GridSpec()
    upper = timeline.lag_upper
    times = np.asarray(spec.times, dtype=float)
    if times.size == 0 or np.any(times < 0) or np.any(times > upper):
        raise ValueError(f"curve times must lie in [0, {upper}]")
    if ell >= 2 and spec.contour_max > upper:
        raise ValueError(f"contour grid must lie within [0, {upper}]")
    names, draws = _draws_of(chains)
    if draws.shape[0] > spec.max_draws:
        idx = np.linspace(0, draws.shape[0] - 1, spec.max_draws).round().astype(int)
        draws = draws[idx]
    d = _Draws(names, draws, ell, spec.theta_rows, spec.lag_row)
    t = times[None, :]
    cond = {}
    for j in range(1, ell + 1):
        rates = [r[:, None] for r in d.rates[j]]
        for k in range(j):
            cond[(j, k)] = lag_survival(rates, d.alpha[:, None], k, t, upper)

    def med(a, axis=0):
        return np.median(a, axis=axis)

    out = []
    for label, th in d.theta_sets.items():
        pop = th[:, [0]] + sum(th[:, [j]] * cond[(j, 0)] for j in range(1, ell + 1))
        out.append(CurveGrid("population", label, times, med(pop)))
        for (j, k), s in cond.items():
            out.append(CurveGrid("marginal", f"{label}|{j}_{k + 1}", times, med(1.0 - th[:, [j]] * (1.0 - s))))
    for (j, k), s in cond.items():
        out.append(CurveGrid("conditional", f"{j}_{k + 1}", times, med(s)))
    if ell >= 2:
        g = np.linspace(0.0, spec.contour_max, spec.contour_points)
        r1, r2 = (r[:, None, None] for r in d.rates[2])
        surf = pair_survival(r1, r2, d.alpha[:, None, None], g[None, :, None], g[None, None, :], upper)
        out.append(CurveGrid("bivariate-contour", "2", g, med(surf), g))
    dt = np.asarray(spec.density_times, dtype=float)
    if dt.size:
        if np.any(dt < 0) or np.any(dt > upper):
            raise ValueError(f"density times must lie in [0, {upper}]")
        edges = np.linspace(0.0, 1.0, spec.density_bins + 1)
        centers = 0.5 * (edges[1:] + edges[:-1])
        for j in range(1, ell + 1):
            rates = [r[:, None] for r in d.rates[j]]
            for k in range(j):
                s = lag_survival(rates, d.alpha[:, None], k, dt[None, :], upper)
                dens = np.stack([np.histogram(s[:, i], bins=edges, density=True)[0] for i in range(dt.size)],
                                axis=1)
                out.append(CurveGrid("posterior-density", f"{j}_{k + 1}", centers, dens, dt))
    return out


def write_curves(grids: Sequence[CurveGrid], path) -> None:
    """Long-format CSV: kind, label, time1, time2 (blank for curves), value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "label", "time1", "time2", "value"])
        for g in grids:
            v = np.asarray(g.values)
            if g.time2 is None:
                for t, val in zip(g.time1, v):
                    w.writerow([g.kind, g.label, repr(float(t)), "", repr(float(val))])
            else:
                for a, t1 in enumerate(g.time1):
                    for b, t2 in enumerate(g.time2):
                        w.writerow([g.kind, g.label, repr(float(t1)), repr(float(t2)), repr(float(v[a, b]))])


# ---------------------------------------------------------------------------
# empirical hazard


@dataclass
class HazardTable:
    edges: np.ndarray
    events: np.ndarray
    exposure: np.ndarray
    hazard: np.ndarray = field(init=False)

    def __post_init__(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            self.hazard = np.where(self.exposure > 0, self.events / self.exposure, np.nan)


def empirical_hazard(entry, exit, event, edges) -> HazardTable:
    """Unsmoothed occurrence/exposure hazard on ``edges`` with delayed entry.

    ``event`` holds the event time or NaN when censored at ``exit``.
    """
    entry = np.asarray(entry, dtype=float)
    exit = np.asarray(exit, dtype=float)
    event = np.asarray(event, dtype=float)
    edges = np.asarray(edges, dtype=float)
    stop = np.where(np.isnan(event), exit, event)
    lo, hi = edges[:-1], edges[1:]
    exposure = np.clip(np.minimum(stop[:, None], hi) - np.maximum(entry[:, None], lo), 0.0, None).sum(axis=0)
    hit = event[~np.isnan(event)]
    events = np.histogram(hit, bins=edges)[0].astype(float)
    return HazardTable(edges, events, exposure)


def first_screening_hazard(records: Sequence[SubjectRecord], edges) -> HazardTable:
    """Hazard of the first screening on the eligibility clock, for subjects observed from eligibility start."""
    recs = [r for r in records if r.entry_time == 0]
    event = [r.observed_screenings[0] if r.k else np.nan for r in recs]
    return empirical_hazard([0.0] * len(recs), [r.exit_time for r in recs], event, edges)
