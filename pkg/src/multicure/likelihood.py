"""Observation records, latent trajectory cases and the complete-data likelihood.

A subject is watched on the eligibility clock (years since first becoming
due) from ``entry_time`` to ``exit_time``.  For a hypothesised lifetime count
``m`` each latent screening is either before entry, observed, or after exit.
Screenings are ordered, so a case is fully described by how many screenings
fall before entry (``b``) and after exit (``a``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .frailty import (
    FrailtySurvival,
    QuadratureSpec,
    box_mass2_array,
    clip_alpha,
    density2_array,
    expo_mass,
    gauss_legendre_rows,
    integrate_1d,
    neg_partial2_array,
    survival2_array,
    survival_drop,
)

DATASET_HEADER = ["id", "entry_time", "exit_time", "screenings", "covariates_theta", "covariates_lag"]

BEFORE, OBSERVED, AFTER = "before", "observed", "after"


class DatasetError(ValueError):
    """A record or dataset file failed validation."""


class LikelihoodError(ArithmeticError):
    """The likelihood is not finite; ``subject`` names the offending record."""

    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


@dataclass(frozen=True)
class EligibilityTimeline:
    refractory_years: float = 10.0
    max_lag_years: float | None = 10.0
    eligibility_length: float = 40.0
    study_length: float = 25.0

    def __post_init__(self):
        for name in ("refractory_years", "eligibility_length", "study_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_lag_years is not None and not self.max_lag_years > 0:
            raise ValueError("max_lag_years must be positive or None")

    @property
    def lag_upper(self) -> float:
        return math.inf if self.max_lag_years is None else float(self.max_lag_years)


@dataclass(frozen=True)
class ModelConfig:
    """Structural constants of a fit."""

    ell: int = 2
    timeline: EligibilityTimeline = field(default_factory=EligibilityTimeline)
    theta_covariates: bool = False
    lag_covariates: bool = False
    quadrature: QuadratureSpec = field(
        default_factory=lambda: QuadratureSpec(method="fixed-gauss-legendre", node_count=32))

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be at least 1")


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    entry_time: float
    exit_time: float
    observed_screenings: tuple[float, ...] = ()
    covariates_theta: tuple[float, ...] = ()
    covariates_lag: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("observed_screenings", "covariates_theta", "covariates_lag"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def k(self) -> int:
        return len(self.observed_screenings)

    def validate(self, timeline: EligibilityTimeline) -> None:
        if not (0.0 <= self.entry_time < self.exit_time):
            raise DatasetError(f"subject {self.id}: need 0 <= entry_time < exit_time")
        obs = self.observed_screenings
        if any(t < self.entry_time or t > self.exit_time for t in obs):
            raise DatasetError(f"subject {self.id}: screenings outside the observation window")
        for s, t in zip(obs, obs[1:]):
            if not t - s > timeline.refractory_years:
                raise DatasetError(
                    f"subject {self.id}: screenings {s} and {t} closer than the refractory period")


@dataclass(frozen=True)
class TrajectoryCase:
    """One latent placement of ``m`` lifetime screenings."""

    m: int
    latent_pattern: tuple[tuple[str, float | None], ...]
    feasible: bool = True

    @property
    def n_before(self) -> int:
        return sum(1 for kind, _ in self.latent_pattern if kind == BEFORE)

    @property
    def n_after(self) -> int:
        return sum(1 for kind, _ in self.latent_pattern if kind == AFTER)

    @property
    def code(self) -> str:
        return "".join(kind[0] for kind, _ in self.latent_pattern)


def _is_feasible(m, b, a, record, timeline) -> bool:
    """Positive-probability check from due-time arithmetic.

    Without observations the n-th screening falls in
    ``[(n-1) R, (n-1) R + n L]`` for refractory ``R`` and maximum lag ``L``.
    """
    R, L = timeline.refractory_years, timeline.lag_upper
    obs = record.observed_screenings
    k = len(obs)
    tL, tR = record.entry_time, record.exit_time
    if m == 0:
        return k == 0
    # latest time the b-th (pre-entry) screening can take
    last_before = None
    if b > 0:
        lo_b = (b - 1) * R
        hi_b = min(tL, (b - 1) * R + b * L)
        if k > 0:
            lo_b = max(lo_b, obs[0] - R - L)
            hi_b = min(hi_b, obs[0] - R)
        if not lo_b < hi_b:
            return False
        last_before = hi_b
    if k > 0:
        if b == 0 and obs[0] > L:
            return False
        for s, t in zip(obs, obs[1:]):
            if not 0.0 < t - s - R <= L:
                return False
    if a > 0:
        if k > 0:
            latest_next = obs[-1] + R + L
        elif b > 0:
            latest_next = last_before + R + L
        else:
            latest_next = L
        if not latest_next > tR:
            return False
    return True


def enumerate_cases(record: SubjectRecord, timeline: EligibilityTimeline, ell: int) -> list[TrajectoryCase]:
    """All feasible latent cases compatible with ``record`` for ``M <= ell``."""
    record.validate(timeline)
    k = record.k
    if ell < k:
        raise DatasetError(f"subject {record.id}: {k} observed screenings exceed ell={ell}")
    observed = tuple((OBSERVED, t) for t in record.observed_screenings)
    cases = []
    if k == 0:
        cases.append(TrajectoryCase(0, ()))
    for m in range(max(k, 1), ell + 1):
        for b in range(m - k + 1):
            a = m - k - b
            if not _is_feasible(m, b, a, record, timeline):
                continue
            pattern = ((BEFORE, None),) * b + observed + ((AFTER, None),) * a
            cases.append(TrajectoryCase(m, pattern))
    return cases


# ---------------------------------------------------------------------------
# case probabilities for m <= 2


def _g_at(c_of_y):
    """``-dS/dy1`` at ``(y, c(y))`` as an integrand."""
    def f(y, o1, tL, tR, r1, r2, alpha):
        return neg_partial2_array(r1, r1 * y + r2 * c_of_y(y, o1, tL, tR), alpha)
    return f


def _pieces(code, o1, tL, tR, L, R):
    """Closed-form part and smooth quadrature pieces of a latent pre-entry case.

    Each piece is ``(sign, lo, hi, f)`` with ``f(y, o1, tL, tR, r1, r2, alpha)``
    free of singularities and kinks on ``[lo, hi]``.  The term ``-dS/dy1`` at
    ``y2 = 0`` carries the ``y**(alpha - 1)`` singularity; it integrates exactly,
    so it is returned as the pair ``(a, b)`` standing for ``S(a, 0) - S(b, 0)``.
    """
    if code == "bo":
        def dens(y, o1, tL, tR, r1, r2, alpha):
            return density2_array(r1, r2, r1 * y + r2 * (o1 - R - y), alpha)
        lo = np.maximum(o1 - R - L, 0.0)
        hi = np.maximum(np.minimum(np.minimum(tL, o1 - R), L), lo)
        return None, [(1.0, lo, hi, dens)]
    if code == "ba":
        # Y1 <= min(tL, L), Y1 + R + Y2 > tR, Y2 <= L
        hi = np.minimum(tL, L)
        lo = np.clip(tR - R - L, 0.0, hi)
        mid = np.clip(tR - R, lo, hi)
        pieces = [(1.0, lo, mid, _g_at(lambda y, o1, tL, tR: tR - R - y))]
        if not math.isinf(L):
            pieces.append((-1.0, lo, hi, _g_at(lambda y, o1, tL, tR: L)))
        return (mid, hi), pieces
    if code == "bb":
        # Y1 + R + Y2 < tL inside the box
        hi = np.clip(np.minimum(tL - R, L), 0.0, None)
        kink = np.clip(tL - R - L, 0.0, hi)
        pieces = [(-1.0, kink, hi, _g_at(lambda y, o1, tL, tR: tL - R - y))]
        if not math.isinf(L):
            pieces.append((-1.0, np.zeros_like(hi), kink, _g_at(lambda y, o1, tL, tR: L)))
        return (np.zeros_like(hi), hi), pieces
    raise KeyError(code)


def _col(v):
    v = np.asarray(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def case_values(code: str, o1, o2, tL, tR, rates, alpha: float,
                timeline: EligibilityTimeline, quad: QuadratureSpec) -> np.ndarray:
    """Vectorised ``p`` for one case code over aligned parameter arrays.

    ``rates`` holds one entry per lag (scalar or array aligned with ``o1``).
    One-screening cases use the plain exponential law; two-screening cases use
    the frailty law with ``alpha``.  Truncated laws are renormalised on their
    support.
    """
    L, R = timeline.lag_upper, timeline.refractory_years
    o1, o2, tL, tR = (np.asarray(v, dtype=float) for v in (o1, o2, tL, tR))
    if len(code) == 1:
        (r,) = rates
        norm = expo_mass(r, L)
        if code == "o":
            val = np.where(o1 <= L, r * np.exp(-r * o1), 0.0)
        elif code == "b":
            val = -np.expm1(-r * np.minimum(tL, L))
        elif code == "a":
            tail = 0.0 if math.isinf(L) else np.exp(-r * L)
            val = np.where(tR < L, np.exp(-r * tR) - tail, 0.0)
        else:
            raise KeyError(code)
        return val / norm
    if len(code) != 2:
        raise NotImplementedError("case probabilities are provided for at most two screenings")
    alpha = clip_alpha(alpha)
    r1, r2 = rates
    norm = box_mass2_array(r1, r2, alpha, L)
    if code == "oo":
        y1, y2 = o1, o2 - o1 - R
        ok = (y1 <= L) & (y2 > 0) & (y2 <= L)
        val = np.where(ok, density2_array(r1, r2, r1 * y1 + r2 * np.where(ok, y2, 1.0), alpha), 0.0)
    elif code == "oa":
        c = np.maximum(tR - o1 - R, 0.0)
        inner = neg_partial2_array(r1, r1 * o1 + r2 * c, alpha)
        outer = neg_partial2_array(r1, r1 * o1 + r2 * L, alpha)
        val = np.where((o1 <= L) & (c < L), inner - outer, 0.0)
    elif code == "aa":
        t = np.minimum(tR, L)
        val = (survival2_array(r1, t, r2, 0.0, alpha) - survival2_array(r1, L, r2, 0.0, alpha)
               - survival2_array(r1, t, r2, L, alpha) + survival2_array(r1, L, r2, L, alpha))
        val = np.where(tR < L, val, 0.0)
    else:
        val = _integrate_case(code, o1, tL, tR, r1, r2, alpha, timeline, quad)
    return np.maximum(val, 0.0) / norm


def _integrate_case(code, o1, tL, tR, r1, r2, alpha, timeline, quad):
    L, R = timeline.lag_upper, timeline.refractory_years
    shape = np.broadcast(o1, tL, tR, r1, r2).shape

    def flat(v):
        return np.broadcast_to(np.asarray(v, dtype=float), shape).reshape(-1)

    o1f, tLf, tRf, r1f, r2f = (flat(v) for v in (o1, tL, tR, r1, r2))
    closed, pieces = _pieces(code, o1f, tLf, tRf, L, R)
    total = np.zeros(o1f.shape)
    if closed is not None:
        a, b = closed
        total += survival_drop(r1f, a, b, alpha)
    cols = tuple(_col(v) for v in (o1f, tLf, tRf, r1f, r2f))
    for sign, lo, hi, f in pieces:
        lo = np.broadcast_to(lo, total.shape)
        hi = np.broadcast_to(hi, total.shape)
        if quad.method == "fixed-gauss-legendre":
            total += sign * gauss_legendre_rows(lambda y: f(y, *cols, alpha), lo, hi, quad.node_count)
        else:
            for i in range(total.size):
                if hi[i] > lo[i]:
                    args = (o1f[i], tLf[i], tRf[i], r1f[i], r2f[i], alpha)
                    total[i] += sign * integrate_1d(lambda y: float(f(y, *args)), lo[i], hi[i], quad)
    return total.reshape(shape)


def case_probability(case: TrajectoryCase, record: SubjectRecord, timeline: EligibilityTimeline,
                     fs: FrailtySurvival | None, quad: QuadratureSpec | None = None,
                     log: bool = False) -> float:
    """``p_ij`` of a single case; the ``m = 0`` case contributes 1 (theta_0 alone).

    ``fs`` supplies the lag rates (and ``alpha`` for two screenings); its
    truncation is ignored in favour of ``timeline.max_lag_years``.
    """
    quad = quad or QuadratureSpec()
    if case.m == 0:
        p = 1.0
    else:
        if fs is None or fs.dim != case.m:
            raise ValueError(f"case with m={case.m} needs a {case.m}-lag survival law")
        obs = record.observed_screenings
        o1 = obs[0] if obs else 0.0
        o2 = obs[1] if len(obs) > 1 else 0.0
        rates = tuple(d.rate for d in fs.rates)
        p = float(case_values(case.code, o1, o2, record.entry_time, record.exit_time,
                              rates, fs.alpha, timeline, quad))
    if log:
        return math.log(p) if p > 0 else -math.inf
    return p


# ---------------------------------------------------------------------------
# vectorised case table


def design_matrix(records: Sequence[SubjectRecord], attr: str) -> np.ndarray:
    """Intercept column followed by the records' covariates ``attr``."""
    widths = {len(getattr(r, attr)) for r in records}
    if len(widths) > 1:
        raise DatasetError(f"inconsistent {attr} widths: {sorted(widths)}")
    width = widths.pop() if widths else 0
    out = np.ones((len(records), width + 1))
    for i, r in enumerate(records):
        out[i, 1:] = getattr(r, attr)
    return out


class CaseTable:
    """Feasible cases of a dataset grouped by (m, case code) for vectorised evaluation."""

    def __init__(self, records: Sequence[SubjectRecord], model: ModelConfig):
        self.records = list(records)
        self.model = model
        self.timeline = model.timeline
        self.ell = model.ell
        self.n = len(self.records)
        self.k = np.array([r.k for r in self.records], dtype=int)
        self.X = design_matrix(self.records, "covariates_theta")
        self.Z = design_matrix(self.records, "covariates_lag")
        groups: dict[int, dict[str, list[int]]] = {m: {} for m in range(self.ell + 1)}
        bad = []
        for i, rec in enumerate(self.records):
            try:
                cases = enumerate_cases(rec, self.timeline, self.ell)
            except DatasetError as exc:
                bad.append(str(exc))
                continue
            if not cases:
                bad.append(f"subject {rec.id}: no latent trajectory is compatible with the record")
            for case in cases:
                groups[case.m].setdefault(case.code, []).append(i)
        if bad:
            raise DatasetError("; ".join(bad[:10]) + (f" (+{len(bad) - 10} more)" if len(bad) > 10 else ""))
        if self.ell > 2 and any(groups[m] for m in range(3, self.ell + 1)):
            raise NotImplementedError("case probabilities are provided for at most two screenings")
        entry = np.array([r.entry_time for r in self.records])
        exit_ = np.array([r.exit_time for r in self.records])
        o1 = np.array([r.observed_screenings[0] if r.k else 0.0 for r in self.records])
        o2 = np.array([r.observed_screenings[1] if r.k > 1 else 0.0 for r in self.records])
        self.groups = {}
        for m, by_code in groups.items():
            self.groups[m] = {}
            for code, idx in sorted(by_code.items()):
                idx = np.array(idx, dtype=int)
                self.groups[m][code] = dict(sub=idx, o1=o1[idx], o2=o2[idx], tL=entry[idx], tR=exit_[idx])
        self.members = {
            m: np.unique(np.concatenate([g["sub"] for g in self.groups[m].values()])) if self.groups[m]
            else np.zeros(0, dtype=int)
            for m in range(self.ell + 1)
        }

    def probabilities(self, m: int, rates, alpha: float, quad: QuadratureSpec | None = None) -> np.ndarray:
        """``p_im`` for every subject (zero where no case with ``m`` is feasible).

        ``rates[k]`` is a scalar or a length-``n`` array of per-subject rates.
        """
        quad = quad or self.model.quadrature
        p = np.zeros(self.n)
        if m == 0:
            p[self.k == 0] = 1.0
            return p
        for code, g in self.groups[m].items():
            sub = g["sub"]
            r = tuple(v[sub] if np.ndim(v) else v for v in rates)
            vals = case_values(code, g["o1"], g["o2"], g["tL"], g["tR"], r, alpha, self.timeline, quad)
            np.add.at(p, sub, vals)
        return p


# ---------------------------------------------------------------------------
# links, likelihood and expected indicators


def log_theta_matrix(state, X: np.ndarray) -> np.ndarray:
    """``log theta_ij`` per subject; multinomial logit with category 0 as reference if linked."""
    beta = getattr(state, "beta", None)
    if beta is None:
        theta = np.asarray(state.theta, dtype=float)
        with np.errstate(divide="ignore"):
            return np.broadcast_to(np.log(theta), (X.shape[0], theta.size)).copy()
    lin = np.concatenate([np.zeros((X.shape[0], 1)), X @ np.asarray(beta).T], axis=1)
    top = lin.max(axis=1, keepdims=True)
    return lin - (top + np.log(np.exp(lin - top).sum(axis=1, keepdims=True)))


def lag_rates(state, Z: np.ndarray, m: int):
    """Rates of the ``m`` lags of the ``M = m`` law: scalars, or per-subject arrays if linked."""
    omega = getattr(state, "omega", None)
    if omega is None:
        return tuple(float(v) for v in state.lam[m - 1])
    return tuple(np.exp(Z @ np.asarray(omega[m - 1][k])) for k in range(m))


def probability_matrix(table: CaseTable, state, quad: QuadratureSpec | None = None) -> np.ndarray:
    """``p_ij`` for all subjects and ``j = 0..ell``."""
    cols = [table.probabilities(0, (), 1.0)]
    for m in range(1, table.ell + 1):
        cols.append(table.probabilities(m, lag_rates(state, table.Z, m), state.alpha, quad))
    return np.stack(cols, axis=1)


def eta_from(log_theta: np.ndarray, p: np.ndarray, ids=None) -> np.ndarray:
    """Normalised ``theta_ij p_ij`` per row; exact 0/1 entries where the case is determined."""
    with np.errstate(divide="ignore"):
        lw = log_theta + np.log(p)
    top = lw.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if np.any(dead):
        i = int(np.flatnonzero(dead)[0])
        who = ids[i] if ids is not None else i
        raise LikelihoodError(f"subject {who}: every latent case has zero probability", who)
    w = np.exp(lw - top)
    return w / w.sum(axis=1, keepdims=True)


def expected_eta(record: SubjectRecord, timeline: EligibilityTimeline, state,
                 quad: QuadratureSpec | None = None) -> np.ndarray:
    """Expected membership weights ``(eta_0, ..., eta_ell)`` of one record."""
    ell = len(state.theta) - 1 if getattr(state, "beta", None) is None else np.asarray(state.beta).shape[0]
    table = CaseTable([record], ModelConfig(ell=ell, timeline=timeline,
                                            quadrature=quad or QuadratureSpec()))
    p = probability_matrix(table, state, quad or QuadratureSpec())
    return eta_from(log_theta_matrix(state, table.X), p, [record.id])[0]


def subject_log_likelihood(log_theta: np.ndarray, p: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Per-subject ``sum_j eta_ij (log theta_ij + log p_ij)`` with ``0 log 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = eta * (log_theta + np.log(p))
    return np.where(eta > 0, terms, 0.0).sum(axis=1)


def log_likelihood(dataset: Sequence[SubjectRecord], state, timeline: EligibilityTimeline,
                   quad: QuadratureSpec | None = None) -> float:
    """Complete-data log-likelihood with the state's eta weights (expected ones if absent)."""
    quad = quad or QuadratureSpec()
    ell = len(state.theta) - 1 if getattr(state, "beta", None) is None else np.asarray(state.beta).shape[0]
    model = ModelConfig(ell=ell, timeline=timeline, quadrature=quad)
    table = CaseTable(dataset, model)
    log_theta = log_theta_matrix(state, table.X)
    p = probability_matrix(table, state, quad)
    ids = [r.id for r in dataset]
    eta = getattr(state, "eta", None)
    eta = eta_from(log_theta, p, ids) if eta is None else np.asarray(eta, dtype=float)
    per_subject = subject_log_likelihood(log_theta, p, eta)
    bad = np.flatnonzero(~np.isfinite(per_subject))
    if bad.size:
        raise LikelihoodError(f"non-finite likelihood for subject {ids[bad[0]]}", ids[bad[0]])
    # exactly rounded sum: independent of evaluation order
    return math.fsum(per_subject.tolist())


# ---------------------------------------------------------------------------
# CSV ingestion


def _fmt_list(values: Iterable[float]) -> str:
    return ";".join(f"{v:.6f}" for v in values)


def _parse_list(text: str, row: int, column: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(";"))
    except ValueError:
        raise DatasetError(f"row {row}: column {column!r} is not a ';'-separated list of numbers") from None


def write_dataset(path, records: Sequence[SubjectRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for r in records:
            writer.writerow([r.id, f"{r.entry_time:.6f}", f"{r.exit_time:.6f}",
                             _fmt_list(r.observed_screenings), _fmt_list(r.covariates_theta),
                             _fmt_list(r.covariates_lag)])


def read_dataset(path, timeline: EligibilityTimeline | None = None) -> list[SubjectRecord]:
    """Parse a dataset CSV; malformed rows raise :class:`DatasetError` with their row number."""
    records = []
    errors = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise DatasetError(f"row 1: expected header {','.join(DATASET_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(DATASET_HEADER):
                    raise DatasetError(f"row {row_no}: expected {len(DATASET_HEADER)} fields, got {len(row)}")
                try:
                    entry, exit_ = float(row[1]), float(row[2])
                except ValueError:
                    raise DatasetError(f"row {row_no}: entry_time/exit_time must be numbers") from None
                rec = SubjectRecord(row[0], entry, exit_,
                                    _parse_list(row[3], row_no, "screenings"),
                                    _parse_list(row[4], row_no, "covariates_theta"),
                                    _parse_list(row[5], row_no, "covariates_lag"))
                if timeline is not None:
                    try:
                        rec.validate(timeline)
                    except DatasetError as exc:
                        raise DatasetError(f"row {row_no}: {exc}") from None
                records.append(rec)
            except DatasetError as exc:
                errors.append(str(exc))
    if errors:
        raise DatasetError("; ".join(errors[:20]))
    return records
