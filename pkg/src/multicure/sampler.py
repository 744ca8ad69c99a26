"""Metropolis-within-Gibbs posterior sampler.

One sweep updates, in order: the count probabilities (or their logit
coefficients), the Dirichlet parameters, the lag rates (or their log-link
coefficients), the Gamma hyperparameters of each rate, the dependence
parameter, its Beta hyperparameters and finally the expected membership
weights.  Non-conjugate blocks use Gaussian random walks on log or logit
scales with Robbins-Monro scale adaptation during burn-in.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .likelihood import (
    CaseTable,
    LikelihoodError,
    ModelConfig,
    SubjectRecord,
    eta_from,
    lag_rates,
    log_theta_matrix,
)

TARGET_ACCEPTANCE = 0.35
THETA_FLOOR = 1e-300
BLOCKS = ("theta", "gamma", "lambda", "kappa", "alpha", "tau", "eta")


class SamplerError(RuntimeError):
    def __init__(self, message, sweep=None, block=None):
        super().__init__(message)
        self.sweep = sweep
        self.block = block


@dataclass
class ParameterState:
    """One full draw.  ``lam[j-1]`` and ``kappa[j-1]`` hold the ``j`` lags of the ``M = j`` law."""

    theta: np.ndarray
    gamma: np.ndarray
    lam: list
    kappa: list
    alpha: float = 1.0
    tau: np.ndarray = field(default_factory=lambda: np.ones(2))
    beta: np.ndarray | None = None
    omega: list | None = None
    eta: np.ndarray | None = None
    alpha_logit: float | None = None

    def __post_init__(self):
        if self.alpha_logit is None:
            self.alpha_logit = _logit(self.alpha)

    @property
    def ell(self) -> int:
        return len(self.lam)

    def copy(self) -> "ParameterState":
        return ParameterState(
            np.array(self.theta, dtype=float), np.array(self.gamma, dtype=float),
            [np.array(v, dtype=float) for v in self.lam],
            [np.array(v, dtype=float) for v in self.kappa],
            float(self.alpha), np.array(self.tau, dtype=float),
            None if self.beta is None else np.array(self.beta, dtype=float),
            None if self.omega is None else [np.array(w, dtype=float) for w in self.omega],
            None if self.eta is None else np.array(self.eta, dtype=float),
            float(self.alpha_logit))


@dataclass(frozen=True)
class PriorConfig:
    s: float = 1.0
    b: float = 1.0
    c: float = 2.0
    d: float = 1.0
    tau_rate: float = 1.0
    beta_prior: tuple[float, float] = (0.0, 10.0)
    omega_prior: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        if min(self.s, self.b, self.c, self.d, self.tau_rate) <= 0:
            raise ValueError("prior hyperparameters must be positive")
        if self.beta_prior[1] <= 0 or self.omega_prior[1] <= 0:
            raise ValueError("prior variances must be positive")


DEFAULT_SCALES = {"gamma": 1.0, "lambda": 0.2, "kappa": 1.0, "alpha": 0.5, "tau": 1.0,
                  "beta": 0.2, "omega": 0.1}


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 1
    n_chains: int = 5
    seed: int = 0
    proposal_scales: dict = field(default_factory=lambda: dict(DEFAULT_SCALES))
    adapt_during_burnin: bool = True
    blocks: tuple[str, ...] = BLOCKS

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.n_chains < 1:
            raise ValueError("thin and n_chains must be at least 1")
        unknown = set(self.blocks) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")
        scales = dict(DEFAULT_SCALES)
        scales.update(self.proposal_scales)
        if any(v < 0 for v in scales.values()):
            raise ValueError("proposal scales must be non-negative")
        object.__setattr__(self, "proposal_scales", scales)

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    draws: np.ndarray
    parameter_names: list
    acceptance_rates: dict
    config: dict
    chain_index: int = 0
    final_state: ParameterState | None = None

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.parameter_names.index(name)]


# ---------------------------------------------------------------------------
# scalar log densities


def _log_gamma_pdf(x, shape, scale):
    return (shape - 1.0) * math.log(x) - x / scale - math.lgamma(shape) - shape * math.log(scale)


def _log_dirichlet(theta, gamma):
    return (math.lgamma(float(np.sum(gamma))) - sum(math.lgamma(g) for g in gamma)
            + float(np.dot(gamma - 1.0, np.log(theta))))


def _logit(a: float) -> float:
    # alpha = 1 maps to the smallest logit whose expit rounds to 1
    if a >= 1.0:
        return 37.0
    if a <= 0.0:
        return -746.0
    return math.log(a) - math.log1p(-a)


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _alpha_logs(x: float) -> tuple[float, float]:
    """``(log alpha, log(1 - alpha))`` from the logit, exact even where alpha rounds to 0 or 1."""
    return -float(np.logaddexp(0.0, -x)), -float(np.logaddexp(0.0, x))


def _positive(v: float) -> bool:
    return v > 0.0 and math.isfinite(v)


def _accept(rng, log_ratio) -> bool:
    return bool(np.isfinite(log_ratio)) and (log_ratio >= 0 or math.log(rng.random()) < log_ratio)


# ---------------------------------------------------------------------------
# pure conditional updates


def sample_theta(eta_sums, gamma, rng: np.random.Generator) -> np.ndarray:
    """Conjugate Dirichlet draw; components are floored away from zero."""
    theta = rng.dirichlet(np.asarray(eta_sums, dtype=float) + np.asarray(gamma, dtype=float))
    theta = np.maximum(theta, THETA_FLOOR)
    return theta / theta.sum()


def sample_gamma(theta, gamma, s, rng: np.random.Generator, scale: float = 1.0):
    """One log-scale random-walk update per Dirichlet parameter (exponential prior with rate ``s``).

    Returns the new vector and a boolean acceptance mask.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.array(gamma, dtype=float)
    s = np.broadcast_to(np.asarray(s, dtype=float), g.shape)
    scales = np.broadcast_to(np.asarray(scale, dtype=float), g.shape)
    accepted = np.zeros(g.size, dtype=bool)
    for j in range(g.size):
        if scales[j] == 0:
            continue
        prop = g.copy()
        prop[j] = g[j] * math.exp(scales[j] * rng.standard_normal())
        if not _positive(prop[j]):
            continue
        lr = (_log_dirichlet(theta, prop) - s[j] * prop[j]) - (_log_dirichlet(theta, g) - s[j] * g[j])
        lr += math.log(prop[j] / g[j])
        if _accept(rng, lr):
            g, accepted[j] = prop, True
    return g, accepted


def sample_kappa(lam: float, kappa, b: float, c: float, d: float, rng: np.random.Generator,
                 scale: float = 1.0):
    """Shape by log random walk (exponential prior, rate ``b``); scale from its Inverse-Gamma conditional.

    The rate ``lam`` has a Gamma(shape, scale) prior and the scale an
    Inverse-Gamma(c, d) prior.
    """
    k1, k2 = float(kappa[0]), float(kappa[1])
    accepted = False
    if scale > 0:
        prop = k1 * math.exp(scale * rng.standard_normal())

        def target(a):
            return -a * math.log(k2) - math.lgamma(a) + (a - 1.0) * math.log(lam) - b * a

        if _positive(prop) and _accept(rng, target(prop) - target(k1) + math.log(prop / k1)):
            k1, accepted = prop, True
    k2 = (lam + d) / rng.gamma(k1 + c)
    return np.array([k1, k2]), accepted


def sample_tau(alpha: float, tau, rng: np.random.Generator, scale: float = 1.0, rate: float = 1.0,
               alpha_logit: float | None = None):
    """Log random-walk updates of the Beta prior parameters of ``alpha`` (exponential priors).

    Pass ``alpha_logit`` when ``alpha`` is too close to 0 or 1 to carry ``log(1 - alpha)``.
    """
    t = np.array(tau, dtype=float)
    logs = _alpha_logs(alpha_logit if alpha_logit is not None else _logit(alpha))
    accepted = np.zeros(2, dtype=bool)
    if scale == 0:
        return t, accepted

    def target(v):
        return _log_beta_pdf_logs(logs, v[0], v[1]) - rate * (v[0] + v[1])

    for j in range(2):
        prop = t.copy()
        prop[j] = t[j] * math.exp(scale * rng.standard_normal())
        if not _positive(prop[j]):
            continue
        lr = target(prop) - target(t) + math.log(prop[j] / t[j])
        if _accept(rng, lr):
            t, accepted[j] = prop, True
    return t, accepted


def _log_beta_pdf_logs(logs, a, b):
    return ((a - 1.0) * logs[0] + (b - 1.0) * logs[1]
            + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b))


# ---------------------------------------------------------------------------
# initial values


def initial_state(table: CaseTable, priors: PriorConfig, model: ModelConfig) -> ParameterState:
    """Face-value pattern frequencies, moment-matched rates, ``alpha = 0.95``, hyperparameters at prior means."""
    ell = model.ell
    R = model.timeline.refractory_years
    counts = np.bincount(np.minimum(table.k, ell), minlength=ell + 1).astype(float) + 1.0
    theta = counts / counts.sum()
    recs = table.records

    def rate_from(lags, fallback=0.5):
        lags = [y for y in lags if y > 0]
        return 1.0 / np.mean(lags) if lags else fallback

    lam = []
    for j in range(1, ell + 1):
        if j == 1:
            rates = [rate_from([r.observed_screenings[0] for r in recs if r.k == 1 and r.entry_time == 0])]
        else:
            first = rate_from([r.observed_screenings[0] for r in recs if r.k >= 2 and r.entry_time == 0])
            rest = [rate_from([r.observed_screenings[1] - r.observed_screenings[0] - R
                               for r in recs if r.k >= 2])]
            rates = [first] + rest * (j - 1)
        lam.append(np.array(rates, dtype=float))
    kappa = [np.tile([1.0 / priors.b, priors.d / (priors.c - 1.0) if priors.c > 1 else 1.0], (j, 1))
             for j in range(1, ell + 1)]
    gamma = np.full(ell + 1, 1.0 / priors.s)
    beta = omega = None
    if model.theta_covariates:
        beta = np.zeros((ell, table.X.shape[1]))
        beta[:, 0] = np.log(theta[1:] / theta[0])
    if model.lag_covariates:
        omega = []
        for j in range(1, ell + 1):
            w = np.zeros((j, table.Z.shape[1]))
            w[:, 0] = np.log(lam[j - 1])
            omega.append(w)
    alpha = 0.95 if ell > 1 else 1.0
    return ParameterState(theta, gamma, lam, kappa, alpha, np.ones(2), beta, omega)


# ---------------------------------------------------------------------------
# the sampler


class GibbsSampler:
    """Stateful sweep engine bound to one dataset.

    The per-column probabilities ``p_ij`` are cached and refreshed whenever
    a block changes the law of that column.
    """

    def __init__(self, records: Sequence[SubjectRecord], model: ModelConfig, priors: PriorConfig,
                 config: ChainConfig, rng: np.random.Generator, state: ParameterState | None = None):
        self.model = model
        self.priors = priors
        self.config = config
        self.rng = rng
        self.table = CaseTable(records, model)
        self.ids = [r.id for r in self.table.records]
        self.ell = model.ell
        self.quad = model.quadrature
        self.state = state.copy() if state is not None else initial_state(self.table, priors, model)
        if self.ell == 1:
            self.state.alpha, self.state.alpha_logit = 1.0, _logit(1.0)
        self.blocks = [b for b in BLOCKS if b in config.blocks]
        if self.ell == 1:
            # a single lag carries no dependence
            self.blocks = [b for b in self.blocks if b not in ("alpha", "tau")]
        if model.lag_covariates:
            self.blocks = [b for b in self.blocks if b != "kappa"]
        self.log_theta = log_theta_matrix(self.state, self.table.X)
        self.p = np.stack([self._column(j, self._rates(j), self.state.alpha) for j in range(self.ell + 1)], axis=1)
        if self.state.eta is None:
            self.state.eta = eta_from(self.log_theta, self.p, self.ids)
        self.scales = self._initial_scales(config.proposal_scales)
        self.tries: dict[str, int] = {}
        self.hits: dict[str, int] = {}

    # -- helpers

    def _initial_scales(self, base):
        st = self.state
        sc = {"gamma": np.full(self.ell + 1, base["gamma"]),
              "lambda": [np.full(j, base["lambda"]) for j in range(1, self.ell + 1)],
              "kappa": [np.full(j, base["kappa"]) for j in range(1, self.ell + 1)],
              "alpha": np.array([base["alpha"]]), "tau": np.array([base["tau"]])}
        if st.beta is not None:
            sc["beta"] = np.full(st.beta.shape, base["beta"])
        if st.omega is not None:
            sc["omega"] = [np.full(w.shape, base["omega"]) for w in st.omega]
        return sc

    def _rates(self, j):
        return lag_rates(self.state, self.table.Z, j) if j > 0 else ()

    def _column(self, j, rates, alpha):
        return self.table.probabilities(j, rates, alpha, self.quad)

    def _loglik_col(self, j, p):
        w = self.state.eta[:, j]
        use = w > 0
        if not np.any(use):
            return 0.0
        with np.errstate(divide="ignore"):
            return float(np.dot(w[use], np.log(p[use])))

    def _record(self, block, accepted):
        acc = np.atleast_1d(accepted)
        self.tries[block] = self.tries.get(block, 0) + acc.size
        self.hits[block] = self.hits.get(block, 0) + int(acc.sum())

    def _adapt(self, scale_arr, idx, accepted, sweep):
        if not (self.config.adapt_during_burnin and sweep < self.config.burn_in):
            return
        gain = (sweep + 1.0) ** -0.6
        scale_arr[idx] *= math.exp(gain * (float(accepted) - TARGET_ACCEPTANCE))

    # -- blocks

    def update_theta(self, sweep):
        st = self.state
        if st.beta is not None:
            return self.update_beta(sweep)
        st.theta = sample_theta(st.eta.sum(axis=0), st.gamma, self.rng)
        self.log_theta = log_theta_matrix(st, self.table.X)

    def update_gamma(self, sweep):
        st = self.state
        if st.beta is not None:
            return
        sc = self.scales["gamma"]
        for j in range(self.ell + 1):
            per = np.zeros(self.ell + 1)
            per[j] = sc[j]
            st.gamma, acc = sample_gamma(st.theta, st.gamma, self.priors.s, self.rng, per)
            self._record("gamma", acc[j])
            self._adapt(sc, j, acc[j], sweep)

    def update_beta(self, sweep):
        st = self.state
        mu, var = self.priors.beta_prior
        sc = self.scales["beta"]
        eta = st.eta
        current = float(np.sum(np.where(eta > 0, eta * self.log_theta, 0.0)))
        for idx in np.ndindex(st.beta.shape):
            old = st.beta[idx]
            new = old + sc[idx] * self.rng.standard_normal()
            st.beta[idx] = new
            lt = log_theta_matrix(st, self.table.X)
            with np.errstate(invalid="ignore"):
                cand = float(np.sum(np.where(eta > 0, eta * lt, 0.0)))
            lr = cand - current - ((new - mu) ** 2 - (old - mu) ** 2) / (2.0 * var)
            ok = _accept(self.rng, lr)
            if ok:
                current, self.log_theta = cand, lt
            else:
                st.beta[idx] = old
            self._record("beta", ok)
            self._adapt(sc, idx, ok, sweep)
        st.theta = np.exp(self.log_theta).mean(axis=0) if self.table.n else st.theta

    def update_lambda(self, sweep):
        st = self.state
        if st.omega is not None:
            return self.update_omega(sweep)
        for j in range(1, self.ell + 1):
            current = self._loglik_col(j, self.p[:, j])
            for k in range(j):
                sc = self.scales["lambda"][j - 1]
                old = st.lam[j - 1][k]
                new = old * math.exp(sc[k] * self.rng.standard_normal())
                if not _positive(new):
                    self._record("lambda", False)
                    self._adapt(sc, k, False, sweep)
                    continue
                k1, k2 = st.kappa[j - 1][k]
                rates = list(self._rates(j))
                rates[k] = new
                p_new = self._column(j, tuple(rates), st.alpha)
                cand = self._loglik_col(j, p_new)
                lr = (cand - current + _log_gamma_pdf(new, k1, k2) - _log_gamma_pdf(old, k1, k2)
                      + math.log(new / old))
                ok = _accept(self.rng, lr)
                if ok:
                    st.lam[j - 1][k] = new
                    self.p[:, j] = p_new
                    current = cand
                self._record("lambda", ok)
                self._adapt(sc, k, ok, sweep)

    def update_omega(self, sweep):
        st = self.state
        mu, var = self.priors.omega_prior
        for j in range(1, self.ell + 1):
            current = self._loglik_col(j, self.p[:, j])
            w = st.omega[j - 1]
            sc = self.scales["omega"][j - 1]
            for idx in np.ndindex(w.shape):
                old = w[idx]
                new = old + sc[idx] * self.rng.standard_normal()
                w[idx] = new
                p_new = self._column(j, self._rates(j), st.alpha)
                cand = self._loglik_col(j, p_new)
                lr = cand - current - ((new - mu) ** 2 - (old - mu) ** 2) / (2.0 * var)
                ok = _accept(self.rng, lr)
                if ok:
                    self.p[:, j] = p_new
                    current = cand
                else:
                    w[idx] = old
                self._record("omega", ok)
                self._adapt(sc, idx, ok, sweep)
        st.lam = [np.exp(np.mean(self.table.Z, axis=0) @ w.T) if self.table.n else np.exp(w[:, 0])
                  for w in st.omega]

    def update_kappa(self, sweep):
        st = self.state
        pr = self.priors
        for j in range(1, self.ell + 1):
            sc = self.scales["kappa"][j - 1]
            for k in range(j):
                st.kappa[j - 1][k], ok = sample_kappa(st.lam[j - 1][k], st.kappa[j - 1][k],
                                                      pr.b, pr.c, pr.d, self.rng, sc[k])
                self._record("kappa", ok)
                self._adapt(sc, k, ok, sweep)

    def update_alpha(self, sweep):
        # random walk on logit(alpha); the logit is the state so the chain can
        # reach values where alpha itself rounds to 0 or 1
        st = self.state
        j = self.ell
        sc = self.scales["alpha"]
        x_old = st.alpha_logit
        x_new = x_old + sc[0] * self.rng.standard_normal()
        new = _expit(x_new)
        current = sum(self._loglik_col(m, self.p[:, m]) for m in range(2, j + 1))
        cols = {m: self._column(m, self._rates(m), new) for m in range(2, j + 1)}
        cand = sum(self._loglik_col(m, cols[m]) for m in cols)
        t1, t2 = st.tau
        # Beta(t1, t2) on alpha times the Jacobian alpha (1 - alpha)
        la_new, lb_new = _alpha_logs(x_new)
        la_old, lb_old = _alpha_logs(x_old)
        lr = cand - current + t1 * (la_new - la_old) + t2 * (lb_new - lb_old)
        ok = _accept(self.rng, lr)
        if ok:
            st.alpha, st.alpha_logit = new, x_new
            for m, col in cols.items():
                self.p[:, m] = col
        self._record("alpha", ok)
        self._adapt(sc, 0, ok, sweep)

    def update_tau(self, sweep):
        st = self.state
        sc = self.scales["tau"]
        st.tau, acc = sample_tau(st.alpha, st.tau, self.rng, sc[0], self.priors.tau_rate, st.alpha_logit)
        for a in acc:
            self._record("tau", a)
            self._adapt(sc, 0, a, sweep)

    def update_eta(self, sweep):
        self.state.eta = eta_from(self.log_theta, self.p, self.ids)

    # -- driver

    def sweep(self, t: int) -> None:
        for block in self.blocks:
            getattr(self, f"update_{block}")(t)
            if block in ("lambda", "alpha", "theta"):
                ll = sum(self._loglik_col(j, self.p[:, j]) for j in range(1, self.ell + 1))
                if not np.isfinite(ll):
                    raise SamplerError(f"non-finite likelihood after block {block!r} in sweep {t}",
                                       sweep=t, block=block)

    def parameter_names(self) -> list:
        st = self.state
        names = []
        if st.beta is None:
            names += [f"theta_{j}" for j in range(self.ell + 1)]
            names += [f"gamma_{j}" for j in range(self.ell + 1)]
        else:
            names += [f"beta_{j}_{c}" for j in range(1, self.ell + 1) for c in range(st.beta.shape[1])]
        if st.omega is None:
            names += [f"lambda_{j}_{k}" for j in range(1, self.ell + 1) for k in range(1, j + 1)]
            names += [f"kappa{a}_{j}_{k}" for j in range(1, self.ell + 1) for k in range(1, j + 1) for a in (1, 2)]
        else:
            names += [f"omega_{j}_{k}_{c}" for j in range(1, self.ell + 1) for k in range(1, j + 1)
                      for c in range(st.omega[j - 1].shape[1])]
        if self.ell > 1:
            names += ["alpha", "tau_1", "tau_2"]
        return names

    def flat(self) -> list:
        st = self.state
        row = []
        if st.beta is None:
            row += list(st.theta) + list(st.gamma)
        else:
            row += list(st.beta.ravel())
        if st.omega is None:
            row += [v for lam in st.lam for v in lam]
            row += [v for kap in st.kappa for v in np.asarray(kap).ravel()]
        else:
            row += [v for w in st.omega for v in w.ravel()]
        if self.ell > 1:
            row += [st.alpha, st.tau[0], st.tau[1]]
        return [float(v) for v in row]

    def run(self, chain_index: int = 0) -> ChainOutput:
        cfg = self.config
        rows = []
        for t in range(cfg.iterations):
            self.sweep(t)
            if t == cfg.burn_in - 1:
                self.tries, self.hits = {}, {}
            if t >= cfg.burn_in and (t - cfg.burn_in + 1) % cfg.thin == 0:
                rows.append(self.flat())
        names = self.parameter_names()
        draws = np.array(rows, dtype=float).reshape(len(rows), len(names))
        rates = {b: self.hits[b] / self.tries[b] for b in sorted(self.tries) if self.tries[b]}
        return ChainOutput(draws, names, rates, chain_config_dict(cfg), chain_index, self.state.copy())


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_index,)))


def chain_config_dict(cfg: ChainConfig) -> dict:
    d = asdict(cfg)
    d["blocks"] = list(cfg.blocks)
    return d


def run_chain(records: Sequence[SubjectRecord], model: ModelConfig, priors: PriorConfig,
              config: ChainConfig, chain_index: int = 0, state: ParameterState | None = None) -> ChainOutput:
    """One chain from the ``(seed, chain_index)`` stream."""
    try:
        sampler = GibbsSampler(records, model, priors, config, chain_rng(config.seed, chain_index), state)
        return sampler.run(chain_index)
    except LikelihoodError as exc:
        raise SamplerError(f"chain {chain_index}: {exc}") from exc


def _run_one(args):
    return run_chain(*args)


def run_chains(records: Sequence[SubjectRecord], model: ModelConfig, priors: PriorConfig,
               config: ChainConfig, threads: int = 1) -> list[ChainOutput]:
    """``config.n_chains`` independent chains, in chain order, optionally in worker processes."""
    jobs = [(list(records), model, priors, config, c) for c in range(config.n_chains)]
    if threads <= 1 or config.n_chains == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, config.n_chains)) as pool:
        return list(pool.map(_run_one, jobs))


# ---------------------------------------------------------------------------
# persistence


def write_chain(out: ChainOutput, csv_path, json_path=None, extra: dict | None = None) -> None:
    """Draws as CSV (shortest round-trip floats) plus a JSON sidecar."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(out.parameter_names)
        for row in out.draws:
            w.writerow([repr(float(v)) for v in row])
    if json_path is None:
        json_path = os.path.splitext(csv_path)[0] + ".json"
    meta = {"chain_index": out.chain_index, "config": out.config,
            "acceptance_rates": out.acceptance_rates, "n_draws": int(out.draws.shape[0])}
    if extra:
        meta.update(extra)
    with open(json_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_chain(csv_path, json_path=None) -> ChainOutput:
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    if json_path is None:
        json_path = os.path.splitext(csv_path)[0] + ".json"
    meta = {}
    if os.path.exists(json_path):
        with open(json_path) as fh:
            meta = json.load(fh)
    draws = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return ChainOutput(draws, names, meta.get("acceptance_rates", {}), meta.get("config", {}),
                       meta.get("chain_index", 0))
