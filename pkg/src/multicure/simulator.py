"""Synthetic lifetime screening data.

Each subject draws a lifetime count ``M`` from ``theta``, a positive stable
frailty ``Z`` and conditionally exponential lags with hazard ``Z * rate``.
Screenings follow the due-time rule (first due at 0, next due ``refractory``
years after a screening); screenings past the end of eligibility are dropped.
An observation window then censors the trajectory.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .likelihood import EligibilityTimeline, SubjectRecord, write_dataset

WINDOW_KINDS = ("none", "uniform", "mixture")


@dataclass(frozen=True)
class WindowDistribution:
    """Entry or exit time law.

    ``none``: no censoring on that side.  ``uniform``: ``U(lo, hi)``.
    ``mixture``: uncensored with probability ``point_mass``, else ``U(lo, hi)``.
    Exit draws are clipped to the end of eligibility.
    """

    kind: str = "none"
    lo: float = 0.0
    hi: float = 0.0
    point_mass: float = 0.0

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.hi < self.lo or self.lo < 0:
            raise ValueError("window bounds need 0 <= lo <= hi")
        if not 0.0 <= self.point_mass <= 1.0:
            raise ValueError("point_mass must be a probability")


@dataclass(frozen=True)
class CensoringModel:
    entry: WindowDistribution = field(default_factory=WindowDistribution)
    exit: WindowDistribution = field(default_factory=WindowDistribution)
    targets: tuple[float, float] | None = None

    def __post_init__(self):
        if self.entry.kind != "none" and self.exit.kind != "none" and self.exit.lo < self.entry.hi:
            # keeps entry < exit almost surely
            raise ValueError("exit window must start after the entry window ends")

    @classmethod
    def default(cls) -> "CensoringModel":
        """Calibrated so LT1 x NLS1 has about 50% left- and 40% right-censored subjects."""
        return cls(WindowDistribution("mixture", 0.0, 30.0, 0.5),
                   WindowDistribution("mixture", 30.0, 40.0, 0.6),
                   targets=(0.5, 0.4))

    def draw(self, rng: np.random.Generator, eligibility_length: float) -> tuple[float, float]:
        entry = _draw_side(self.entry, rng, 0.0)
        exit_ = min(_draw_side(self.exit, rng, eligibility_length), eligibility_length)
        return entry, exit_


def _draw_side(dist: WindowDistribution, rng, uncensored: float) -> float:
    if dist.kind == "none":
        return uncensored
    if dist.kind == "mixture" and rng.random() < dist.point_mass:
        return uncensored
    return float(rng.uniform(dist.lo, dist.hi))


@dataclass(frozen=True)
class CovariateDesign:
    """Bernoulli covariates feeding the theta link (``beta``) and/or the lag link (``omega``)."""

    theta_probs: tuple[float, ...] = ()
    beta: tuple[tuple[float, ...], ...] | None = None
    lag_probs: tuple[float, ...] = ()
    omega: tuple[tuple[tuple[float, ...], ...], ...] | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    lambda_single: float
    lambda_pair: tuple[float, ...]
    theta: tuple[float, ...]
    alpha: float = 0.9
    timeline: EligibilityTimeline = field(default_factory=EligibilityTimeline)
    n_subjects: int = 1000
    censoring: CensoringModel = field(default_factory=CensoringModel.default)
    covariates: CovariateDesign | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambda_pair", tuple(float(v) for v in self.lambda_pair))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if abs(sum(self.theta) - 1.0) > 1e-9 or min(self.theta) < 0:
            raise ValueError(f"theta must be a probability vector, got {self.theta}")
        if not (self.lambda_single > 0 and all(r > 0 for r in self.lambda_pair)):
            raise ValueError("lag rates must be positive")
        if len(self.theta) not in (2, 3) or (len(self.theta) == 3 and len(self.lambda_pair) != 2):
            raise ValueError("theta needs 2 entries (one lag) or 3 entries with a pair of rates")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.n_subjects < 0:
            raise ValueError("n_subjects must be non-negative")

    @property
    def ell(self) -> int:
        return len(self.theta) - 1

    @property
    def rates(self) -> list[tuple[float, ...]]:
        return [(self.lambda_single,), self.lambda_pair][: self.ell]


@dataclass(frozen=True)
class TrueTrajectory:
    m_drawn: int
    m_realized: int
    lag_times: tuple[float, ...]
    screening_times: tuple[float, ...]


# Table values: rates per year for the single lag and the two lags of a pair.
LAG_SCENARIOS = {
    "LT1": (0.02, (0.70, 0.70)),
    "LT2": (0.09, (0.50, 1.05)),
    "LT3": (0.35, (0.50, 1.05)),
}
NLS_SCENARIOS = {
    "NLS1": (1 / 3, 1 / 3, 1 / 3),
    "NLS2": (0.5, 0.25, 0.25),
}


def paper_scenario(lag: str, nls: str, n_subjects: int = 1000, **overrides) -> Scenario:
    """One cell of the LT x NLS simulation grid (alpha 0.9, ages 50-90, 10-year max lag)."""
    if lag not in LAG_SCENARIOS:
        raise KeyError(f"unknown lag scenario {lag!r}")
    if nls not in NLS_SCENARIOS:
        raise KeyError(f"unknown screening-count scenario {nls!r}")
    single, pair = LAG_SCENARIOS[lag]
    sc = Scenario(f"{lag}x{nls}", single, pair, NLS_SCENARIOS[nls], 0.9, n_subjects=n_subjects)
    return replace(sc, **overrides) if overrides else sc


def scenario_grid(n_subjects: int = 1000) -> list[Scenario]:
    return [paper_scenario(lag, nls, n_subjects) for nls in NLS_SCENARIOS for lag in LAG_SCENARIOS]


# ---------------------------------------------------------------------------
# draws


def draw_frailty_stable(alpha: float, rng: np.random.Generator, size=None):
    """Positive stable variate with Laplace transform ``exp(-s**alpha)``.

    Chambers-Mallows-Stuck (Kanter) construction from ``U ~ U(0, pi)`` and
    ``W ~ Exp(1)``; ``alpha = 1`` is the point mass at 1.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return 1.0 if size is None else np.ones(size)
    u = rng.uniform(0.0, math.pi, size)
    w = rng.exponential(1.0, size)
    z = (np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
         * (np.sin((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha))
    return float(z) if size is None else z


def draw_lags(rates: Sequence[float], alpha: float, upper: float, rng: np.random.Generator) -> np.ndarray:
    """Lags of one subject with joint survival ``exp(-(sum r_j y_j)**alpha)`` on ``[0, upper]^m``.

    A single lag is plain exponential.  Truncation rejects the whole vector
    (frailty included), which renormalises the joint law on the box.
    """
    rates = np.asarray(rates, dtype=float)
    a = alpha if rates.size > 1 else 1.0
    while True:
        z = draw_frailty_stable(a, rng)
        lags = rng.exponential(1.0, rates.size) / (z * rates)
        if np.all(lags <= upper):
            return lags


def _theta_for(scenario: Scenario, x: np.ndarray | None) -> np.ndarray:
    cov = scenario.covariates
    if cov is None or cov.beta is None:
        return np.asarray(scenario.theta)
    lin = np.concatenate([[0.0], np.asarray(cov.beta) @ np.concatenate([[1.0], x])])
    w = np.exp(lin - lin.max())
    return w / w.sum()


def _rates_for(scenario: Scenario, m: int, z: np.ndarray | None):
    cov = scenario.covariates
    if cov is None or cov.omega is None:
        return scenario.rates[m - 1]
    design = np.concatenate([[1.0], z])
    return tuple(float(np.exp(np.dot(coef, design))) for coef in cov.omega[m - 1])


def _r6(v: float) -> float:
    return round(float(v), 6)


def generate_subject(scenario: Scenario, rng: np.random.Generator,
                     subject_id: str = "0") -> tuple[TrueTrajectory, SubjectRecord]:
    """Draw one true trajectory, then censor it.

    Trajectory draws come first from ``rng`` so the truth does not depend on
    the censoring model.
    """
    tl = scenario.timeline
    cov = scenario.covariates
    x = rng.binomial(1, cov.theta_probs).astype(float) if cov and cov.theta_probs else np.zeros(0)
    zc = rng.binomial(1, cov.lag_probs).astype(float) if cov and cov.lag_probs else np.zeros(0)
    theta = _theta_for(scenario, x)
    m = min(int(np.searchsorted(np.cumsum(theta), rng.random(), side="right")), theta.size - 1)
    lags: tuple[float, ...] = ()
    times: list[float] = []
    if m > 0:
        lags = tuple(draw_lags(_rates_for(scenario, m, zc), scenario.alpha, tl.lag_upper, rng))
        due = 0.0
        for y in lags:
            t = due + y
            if t > tl.eligibility_length:
                break
            times.append(t)
            due = t + tl.refractory_years
    entry, exit_ = scenario.censoring.draw(rng, tl.eligibility_length)
    entry, exit_ = _r6(entry), _r6(exit_)
    observed = tuple(_r6(t) for t in times if entry <= _r6(t) <= exit_)
    truth = TrueTrajectory(m, len(times), tuple(lags), tuple(times))
    record = SubjectRecord(subject_id, entry, exit_, observed,
                           tuple(x.tolist()), tuple(zc.tolist()))
    return truth, record


def subject_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for subject ``index`` of the dataset seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_dataset(scenario: Scenario, seed: int,
                     n_subjects: int | None = None) -> tuple[list[SubjectRecord], list[TrueTrajectory]]:
    """``n_subjects`` independent subjects, each from its own ``(seed, index)`` stream."""
    n = scenario.n_subjects if n_subjects is None else n_subjects
    records, truths = [], []
    for i in range(n):
        truth, rec = generate_subject(scenario, subject_rng(seed, i), str(i + 1))
        records.append(rec)
        truths.append(truth)
    return records, truths


def pattern_summary(records: Sequence[SubjectRecord], timeline: EligibilityTimeline) -> dict:
    """Censoring and observed-count percentages of a dataset."""
    n = max(len(records), 1)
    k = np.array([r.k for r in records])
    return {
        "left_censored": sum(r.entry_time > 0 for r in records) / n,
        "right_censored": sum(r.exit_time < timeline.eligibility_length for r in records) / n,
        "at_least_one_observed": float(np.sum(k >= 1)) / n,
        "two_observed": float(np.sum(k >= 2)) / n,
    }


# ---------------------------------------------------------------------------
# files


def write_truth(path, records: Sequence[SubjectRecord], truths: Sequence[TrueTrajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "m_drawn", "m_realized", "lag_times", "screening_times"])
        for rec, tr in zip(records, truths):
            w.writerow([rec.id, tr.m_drawn, tr.m_realized,
                        ";".join(f"{v:.6f}" for v in tr.lag_times),
                        ";".join(f"{v:.6f}" for v in tr.screening_times)])


def scenario_to_dict(scenario: Scenario) -> dict:
    d = asdict(scenario)
    d["lambda_pair"] = list(scenario.lambda_pair)
    d["theta"] = list(scenario.theta)
    return d


def scenario_from_dict(d: dict) -> Scenario:
    """Build a scenario from a JSON mapping.

    ``lag_scenario``/``nls_scenario`` select a grid cell; explicit fields
    override it.
    """
    d = dict(d)
    base = None
    if "lag_scenario" in d or "nls_scenario" in d:
        base = paper_scenario(d.pop("lag_scenario", "LT1"), d.pop("nls_scenario", "NLS1"))
    fields = {}
    if "timeline" in d:
        fields["timeline"] = EligibilityTimeline(**d.pop("timeline"))
    if "censoring" in d:
        c = d.pop("censoring")
        fields["censoring"] = CensoringModel(
            WindowDistribution(**c.get("entry", {})), WindowDistribution(**c.get("exit", {})),
            tuple(c["targets"]) if c.get("targets") else None)
    if d.get("covariates"):
        c = d.pop("covariates")
        fields["covariates"] = CovariateDesign(
            tuple(c.get("theta_probs", ())),
            tuple(tuple(row) for row in c["beta"]) if c.get("beta") is not None else None,
            tuple(c.get("lag_probs", ())),
            tuple(tuple(tuple(r) for r in blk) for blk in c["omega"]) if c.get("omega") is not None else None)
    else:
        d.pop("covariates", None)
    for key in ("lambda_pair", "theta"):
        if key in d:
            d[key] = tuple(d[key])
    fields.update(d)
    if base is not None:
        return replace(base, **fields)
    if "name" not in fields:
        fields["name"] = "custom"
    return Scenario(**fields)


def write_manifest(path, scenario: Scenario, seed: int) -> None:
    with open(path, "w") as fh:
        json.dump({"scenario": scenario_to_dict(scenario), "seed": seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_simulation(out_dir, scenario: Scenario, seed: int) -> tuple[list[SubjectRecord], list[TrueTrajectory]]:
    """Write ``<name>.csv``, ``<name>.truth.csv`` and ``<name>.scenario.json`` into ``out_dir``."""
    import os

    records, truths = generate_dataset(scenario, seed)
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, scenario.name)
    write_dataset(base + ".csv", records)
    write_truth(base + ".truth.csv", records, truths)
    write_manifest(base + ".scenario.json", scenario, seed)
    return records, truths


# ---------------------------------------------------------------------------
# replication study

STUDY_PARAMETERS = ("theta_0", "theta_1", "theta_2", "median_1_1", "median_2_1", "median_2_2", "alpha")


def true_values(scenario: Scenario) -> dict:
    """Count probabilities, median lags and ``alpha`` implied by a scenario."""
    from .diagnostics import median_lag_draws

    upper = scenario.timeline.lag_upper
    out = {f"theta_{j}": scenario.theta[j] for j in range(3)}
    out["median_1_1"] = float(median_lag_draws([scenario.lambda_single], 1.0, 0, upper)[0])
    for k in range(2):
        out[f"median_2_{k + 1}"] = float(median_lag_draws(list(scenario.lambda_pair), scenario.alpha, k, upper)[0])
    out["alpha"] = scenario.alpha
    return out


def chain_estimates(chains, timeline: EligibilityTimeline) -> dict:
    """Posterior medians of the study parameters, pooled over chains."""
    from .diagnostics import median_lag_draws

    names = chains[0].parameter_names
    draws = np.vstack([c.draws for c in chains])
    col = {n: draws[:, i] for i, n in enumerate(names)}
    upper = timeline.lag_upper
    est = {f"theta_{j}": float(np.median(col[f"theta_{j}"])) for j in range(3)}
    est["median_1_1"] = float(np.median(median_lag_draws([col["lambda_1_1"]], 1.0, 0, upper)))
    pair = [col["lambda_2_1"], col["lambda_2_2"]]
    for k in range(2):
        est[f"median_2_{k + 1}"] = float(np.median(median_lag_draws(pair, col["alpha"], k, upper)))
    est["alpha"] = float(np.median(col["alpha"]))
    return est


@dataclass
class ReplicateResult:
    scenario: str
    replicate: int
    estimates: dict | None
    error: str | None = None


def replicate_seed(seed: int, scenario_index: int, replicate: int) -> int:
    words = np.random.SeedSequence([seed, scenario_index, replicate]).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


def iter_study(grid: Sequence[Scenario], replicates: int, chain_config, seed: int = 0,
               priors=None, estimator=None, threads: int = 1):
    """Yield one :class:`ReplicateResult` per scenario and replicate as soon as it is fitted.

    ``estimator(records, scenario, seed)`` returns a mapping of study
    parameters; by default a chain is fitted and summarised by posterior
    medians.  Failures are reported in the result, never raised.
    """
    from .likelihood import ModelConfig
    from .sampler import PriorConfig, run_chains

    priors = priors or PriorConfig()
    for s, scenario in enumerate(grid):
        for r in range(replicates):
            rseed = replicate_seed(seed, s, r)
            try:
                records, _ = generate_dataset(scenario, rseed)
                if estimator is not None:
                    est = dict(estimator(records, scenario, rseed))
                else:
                    model = ModelConfig(ell=2, timeline=scenario.timeline)
                    cfg = replace(chain_config, seed=rseed)
                    est = chain_estimates(run_chains(records, model, priors, cfg, threads), scenario.timeline)
                yield ReplicateResult(scenario.name, r, est)
            except (ArithmeticError, RuntimeError, ValueError) as exc:
                yield ReplicateResult(scenario.name, r, None, f"{type(exc).__name__}: {exc}")


@dataclass
class StudyReport:
    scenarios: list
    truth: dict
    bias: dict
    rmse: dict
    n_ok: dict
    n_failed: dict
    failures: list

    def rows(self) -> list[list]:
        """Parameters as rows; a bias and an RMSE column per scenario."""
        header = ["parameter"] + [f"{s}_{stat}" for s in self.scenarios for stat in ("bias", "rmse")]
        out = [header]
        for p in STUDY_PARAMETERS:
            row = [p]
            for s in self.scenarios:
                row += [_fmt(self.bias[s].get(p)), _fmt(self.rmse[s].get(p))]
            out.append(row)
        out.append(["replicates_ok"] + [v for s in self.scenarios for v in (self.n_ok[s], "")])
        out.append(["replicates_failed"] + [v for s in self.scenarios for v in (self.n_failed[s], "")])
        return out


def _fmt(v):
    return "" if v is None or not np.isfinite(v) else f"{v:.6f}"


def study_report(grid: Sequence[Scenario], results) -> StudyReport:
    names = [s.name for s in grid]
    truth = {s.name: true_values(s) for s in grid}
    per: dict = {n: [] for n in names}
    failures = []
    for res in results:
        if res.estimates is None:
            failures.append((res.scenario, res.replicate, res.error))
        else:
            per[res.scenario].append(res.estimates)
    bias, rmse = {}, {}
    for n in names:
        bias[n], rmse[n] = {}, {}
        for p in STUDY_PARAMETERS:
            vals = np.array([e[p] for e in per[n] if p in e], dtype=float)
            if vals.size == 0:
                continue
            diff = vals - truth[n][p]
            bias[n][p] = float(diff.mean())
            rmse[n][p] = float(math.sqrt(np.mean(diff ** 2)))
    n_ok = {n: len(per[n]) for n in names}
    n_failed = {n: sum(1 for f in failures if f[0] == n) for n in names}
    return StudyReport(names, truth, bias, rmse, n_ok, n_failed, failures)


def replicate_study(grid: Sequence[Scenario], replicates: int, chain_config, seed: int = 0,
                    priors=None, estimator=None, on_result=None) -> StudyReport:
    """Bias and RMSE of posterior-median estimates over simulated replicates.

    ``on_result`` is called with each :class:`ReplicateResult` as it arrives
    so long studies can stream partial output.
    """
    results = []
    for res in iter_study(grid, replicates, chain_config, seed, priors, estimator):
        results.append(res)
        if on_result is not None:
            on_result(res)
    return study_report(grid, results)


def write_study(report: StudyReport, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report.rows())
