"""Metropolis-within-Gibbs sampler for the hm, rhm and nhm models.

The per-parameter update functions below operate on a :class:`ChainState`
and are what the oracle tests exercise; :func:`run_chain` drives the same
compiled kernels through whole sweeps.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import NumericalError, ValidationError
from .model import (
    ChainState,
    Dataset,
    Hyperparameters,
    allowed_pairs,
    check_model,
    default_mask,
    group_of,
    n_groups,
)

log = logging.getLogger(__name__)

MODEL_CODES = {"hm": K.HM, "rhm": K.RHM, "nhm": K.NHM}


@dataclass
class SamplerConfig:
    iterations: int = 10_000
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    n_chains: int = 1
    fix_sigma_m: float | None = None
    standardize: bool = False
    varying_intrinsic_variance: bool = False
    mh_steps: int = 3
    mh_step_size: float = 1.0
    keep_draws: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1 or self.thin > self.iterations - self.burn_in:
            raise ValidationError("thin must lie in [1, iterations - burn_in]")
        if self.n_chains < 1:
            raise ValidationError("n_chains must be positive")
        if self.fix_sigma_m is not None and not self.fix_sigma_m > 0:
            raise ValidationError("fix_sigma_m must be positive")
        if self.mh_steps < 1 or not self.mh_step_size > 0:
            raise ValidationError("mh_steps and mh_step_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


class _Workspace:
    """Flattened arrays the compiled kernels consume."""

    def __init__(self, data: Dataset, hp: Hyperparameters, model: str):
        P, Kc = data.n_proteins, data.n_conditions
        self.model = model
        self.code = MODEL_CODES[model]
        self.x = data.stacked()
        self.cond_start = data.offsets
        self.cond_of_cell = np.repeat(np.arange(Kc, dtype=np.int64), data.sizes)
        if model == "nhm":
            self.group_start = np.array([0, self.x.shape[1]], dtype=np.int64)
            self.group_of_cond = np.zeros(Kc, dtype=np.int64)
        else:
            self.group_start = self.cond_start.copy()
            self.group_of_cond = np.arange(Kc, dtype=np.int64)
        self.hpv = np.array([hp.beta1, hp.beta2, hp.gamma1, hp.gamma2, hp.gamma3, hp.gamma4,
                             hp.gamma5, hp.gamma6, hp.v, hp.intercept_prior_sd ** 2])
        self.a = hp.a_vector(P)
        self.V = hp.slab_mean_variance(P)
        self.res = np.empty_like(self.x)

    def residuals(self, s: ChainState) -> np.ndarray:
        K.compute_residuals(s.xt, s.intercept, s.coef, self.group_start, self.res)
        return self.res

    def global_cell(self, n: int, k: int) -> int:
        lo, hi = self.cond_start[k], self.cond_start[k + 1]
        if not 0 <= n < hi - lo:
            raise ValidationError(f"cell {n} out of range for condition {k}")
        return int(lo + n)


def _prepare(state: ChainState, data: Dataset, hp: Hyperparameters) -> _Workspace:
    state.validate(data)
    ws = _Workspace(data, hp, state.model)
    ws.residuals(state)
    return ws


def _psi_arr(state):
    return np.array([state.psi], dtype=float)


def initial_state(data: Dataset, hp: Hyperparameters, model: str, mask=None,
                  varying_variance=False, fix_sigma_m=None) -> ChainState:
    """Starting point: latent truth at the data, every indicator off.

    ``w`` starts at the prior mean, precisions at 1 and intercepts at the
    per-block (pooled for nhm) response means.
    """
    check_model(model)
    P, Kc = data.n_proteins, data.n_conditions
    G = n_groups(model, Kc)
    mask = default_mask(P) if mask is None else np.asarray(mask, dtype=bool).copy()
    if mask.shape != (P, P) or np.any(np.diag(mask)):
        raise ValidationError("mask must be (P, P) with a False diagonal")
    if model == "nhm":
        intercept = np.concatenate(data.blocks).mean(axis=0)[None, :].copy()
    else:
        intercept = np.stack([b.mean(axis=0) for b in data.blocks])
    w = np.full((P, P), hp.beta1 / (hp.beta1 + hp.beta2))
    np.fill_diagonal(w, np.nan)
    if model == "rhm":
        w[np.tril_indices(P, -1)] = np.nan
    psi = 1.0 if fix_sigma_m is None else fix_sigma_m ** -2
    return ChainState(
        model=model,
        intercept=intercept,
        coef=np.zeros((G, P, P)),
        z=np.zeros((G, P, P), dtype=np.int8),
        w=w,
        slab_mean=np.tile(hp.a_vector(P)[:, None], (1, P)),
        slab_prec=np.ones((P, P)),
        phi=np.ones((P, Kc)),
        psi=psi,
        xt=data.stacked().copy(),
        mask=mask,
        varying_variance=bool(varying_variance),
    )


# ---------------------------------------------------------------- conditionals

@dataclass
class CoefficientConditional:
    p_include: float
    log_odds: float
    mean: float
    var: float


def coefficient_conditional(state, data, hp, i, j, k) -> CoefficientConditional:
    """Full conditional of ``(z_ij^(k), alpha_ij^(k))`` (``k`` ignored for nhm)."""
    if i == j:
        raise ValidationError("coefficient pair needs i != j")
    if not state.mask[i, j]:
        raise ValidationError(f"pair ({i}, {j}) is masked")
    ws = _prepare(state, data, hp)
    g = group_of(state.model, k)
    lo, mu, Q = K.coef_conditional(i, j, g, ws.code, ws.group_start, state.xt, ws.res, state.coef,
                                   state.z, state.w, state.slab_mean, state.slab_prec, state.phi,
                                   ws.cond_of_cell, state.mask, ws.a, ws.V, hp.v)
    if not (Q > 0 and np.isfinite(Q)):
        raise NumericalError("non-finite coefficient conditional variance")
    return CoefficientConditional(float(K._sigmoid(lo)), float(lo), float(mu), float(1.0 / Q))


def latent_conditional(state, data, hp, j, n, k):
    """Mean and variance of ``xt_jnk``; ``n`` indexes cells within block ``k``."""
    ws = _prepare(state, data, hp)
    cell = ws.global_cell(n, k)
    mean, prec = K.latent_moments(j, cell, k, group_of(state.model, k), ws.x, state.xt, ws.res,
                                  state.coef, state.phi, _psi_arr(state))
    if not prec > 0:
        raise NumericalError("non-positive latent precision")
    return float(mean), float(1.0 / prec)


def intercept_conditional(state, data, hp, i, k):
    ws = _prepare(state, data, hp)
    mean, prec = K.intercept_moments(i, group_of(state.model, k), ws.group_start, ws.res,
                                     state.intercept, state.phi, ws.cond_of_cell, ws.hpv[9])
    return float(mean), float(1.0 / prec)


def slab_mean_conditional(state, hp, i, j):
    _require_hier(state)
    P = state.n_proteins
    mean, prec = K.slab_mean_moments(i, j, state.coef, state.z, state.slab_prec,
                                     hp.a_vector(P), hp.slab_mean_variance(P))
    return float(mean), float(1.0 / prec)


def slab_precision_conditional(state, hp, i, j):
    """Gamma (shape, rate) of the slab precision given the current slab mean."""
    _require_hier(state)
    shape, rate = K.slab_prec_params(i, j, state.coef, state.z, state.slab_mean, hp.gamma3, hp.gamma4)
    return float(shape), float(rate)


def intrinsic_precision_conditional(state, data, hp, i, k=0):
    ws = _prepare(state, data, hp)
    shape, rate = K.intrinsic_params(i, k, state.varying_variance, ws.res, ws.cond_start,
                                     hp.gamma1, hp.gamma2)
    return float(shape), float(rate)


def measurement_precision_conditional(state, data, hp):
    ws = _prepare(state, data, hp)
    shape, rate = K.measurement_params(ws.x, state.xt, hp.gamma5, hp.gamma6)
    return float(shape), float(rate)


def w_overall_conditional(state, hp, i, j):
    """Beta parameters of ``w_ij`` given the indicators (hm and nhm only)."""
    if state.model == "rhm":
        raise ValidationError("rhm has no conjugate w update; use rhm_w_log_density")
    return tuple(float(p) for p in K.w_beta_params(i, j, state.z, hp.beta1, hp.beta2))


def rhm_w_log_density(state, hp, i, j, w):
    """Unnormalised log conditional density of the shared rhm ``w_(i,j)``."""
    if state.model != "rhm":
        raise ValidationError("rhm_w_log_density applies to rhm states only")
    i, j = min(i, j), max(i, j)
    w = np.asarray(w, dtype=float)
    y = np.log(w) - np.log1p(-w)
    logit_dens = np.array([K.rhm_w_logit_logdens(t, i, j, state.z, state.mask,
                                                 hp.beta1, hp.beta2, hp.v) for t in y.ravel()])
    # back to the w scale: divide out the Jacobian w (1 - w)
    return (logit_dens - np.log(w.ravel()) - np.log1p(-w.ravel())).reshape(w.shape)


def _require_hier(state):
    if state.model == "nhm":
        raise ValidationError("the pooled model has no slab hierarchy")


# --------------------------------------------------------------------- updates

def update_coefficient_pair(state, data, hp, i, j, k, rng):
    """Jointly redraw ``(z_ij^(k), alpha_ij^(k))`` in place."""
    if i == j or not state.mask[i, j]:
        raise ValidationError(f"pair ({i}, {j}) cannot carry a coefficient")
    ws = _prepare(state, data, hp)
    try:
        K.update_coef(i, j, group_of(state.model, k), ws.code, ws.group_start, state.xt, ws.res,
                      state.coef, state.z, state.w, state.slab_mean, state.slab_prec, state.phi,
                      ws.cond_of_cell, state.mask, ws.a, ws.V, hp.v, rng)
    except ArithmeticError as exc:
        raise NumericalError(str(exc)) from None
    return state


def update_w_overall(state, hp, i, j, rng, mh_steps=3, mh_step_size=1.0):
    """Redraw ``w_ij``: conjugate Beta for hm/nhm, logit random-walk MH for rhm."""
    if state.model == "rhm":
        i, j = min(i, j), max(i, j)
        K.update_w_rhm(i, j, state.w, state.z, state.mask, hp.beta1, hp.beta2, hp.v,
                       mh_steps, mh_step_size, rng)
    else:
        p, q = K.w_beta_params(i, j, state.z, hp.beta1, hp.beta2)
        state.w[i, j] = K._clip_w(rng.beta(p, q))
    return state


def sample_w_condition(state, hp, i, j, k, rng) -> float:
    """One draw of the condition-level probability ``w_ij^(k)``.

    Under hm this is a derived quantity; it is never fed back into the chain.
    """
    if state.model == "nhm":
        raise ValidationError("the pooled model has no condition-level probabilities")
    w = state.w_of(i, j)
    if state.model == "rhm":
        dirs = [(r, c) for r, c in ((i, j), (j, i)) if state.mask[r, c]]
        s = sum(int(state.z[k, r, c]) for r, c in dirs)
        a, b = _wcond_params(w, hp.v, s, len(dirs))
    else:
        a, b = _wcond_params(w, hp.v, int(state.z[k, i, j]), 1)
    return float(rng.beta(a, b))


def _wcond_params(w, v, s, t):
    return w * v + s, (1.0 - w) * v + (t - s)


def update_slab_params(state, hp, i, j, rng):
    _require_hier(state)
    P = state.n_proteins
    K.update_slab(i, j, state.coef, state.z, state.slab_mean, state.slab_prec,
                  hp.a_vector(P), hp.slab_mean_variance(P), hp.gamma3, hp.gamma4, rng)
    return state


def update_variances(state, data, hp, rng, fix_sigma_m=None):
    ws = _prepare(state, data, hp)
    psi = _psi_arr(state)
    if fix_sigma_m is not None:
        psi[0] = fix_sigma_m ** -2
    try:
        K.update_variances(ws.x, state.xt, ws.res, state.phi, psi, state.varying_variance,
                           fix_sigma_m is not None, ws.cond_start, hp.gamma1, hp.gamma2,
                           hp.gamma5, hp.gamma6, rng)
    except ArithmeticError as exc:
        raise NumericalError(str(exc)) from None
    state.psi = float(psi[0])
    return state


def update_latent_truth(state, data, hp, j, n, k, rng):
    ws = _prepare(state, data, hp)
    cell = ws.global_cell(n, k)
    try:
        K.update_latent_range(j, cell, cell + 1, k, group_of(state.model, k), ws.x, state.xt, ws.res,
                              state.coef, state.phi, _psi_arr(state), rng)
    except ArithmeticError as exc:
        raise NumericalError(str(exc)) from None
    return state


def update_intercept(state, data, hp, i, k, rng):
    ws = _prepare(state, data, hp)
    K.update_intercept(i, group_of(state.model, k), ws.group_start, ws.res, state.intercept,
                       state.phi, ws.cond_of_cell, ws.hpv[9], rng)
    return state


# ---------------------------------------------------------------------- chains

@dataclass
class ChainTrace:
    """Retained draws and running sums of one chain.

    ``draws`` holds ``w`` (ordered view, ``(D, P, P)``), ``phi`` and ``psi``
    (precisions) and, when ``keep_draws`` is set, ``z`` and ``coef``
    (``(D, G, P, P)``). ``w_sum`` and ``wcond_sum`` accumulate over the
    retained draws only.
    """

    model: str
    names: list
    labels: list
    seed: int
    config: SamplerConfig
    n_draws: int
    draws: dict
    w_sum: np.ndarray
    wcond_sum: np.ndarray | None
    mask: np.ndarray
    final_state: ChainState | None = None
    elapsed: float = 0.0


def chain_seeds(master_seed: int, n_chains: int) -> list:
    """Distinct, reproducible 64-bit seeds for each chain."""
    children = np.random.SeedSequence(master_seed).spawn(n_chains)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def run_chain(data: Dataset, hp: Hyperparameters, config: SamplerConfig, model: str,
              seed=None, mask=None, init: ChainState | None = None, rng=None,
              progress_every: int = 0) -> ChainTrace:
    """Run one chain and return its trace.

    ``seed`` defaults to ``config.seed``; passing ``rng`` (with ``init``)
    resumes from a checkpoint instead.
    """
    check_model(model)
    if config.standardize:
        data = data.standardized()
    seed = config.seed if seed is None else int(seed)
    if rng is None:
        rng = np.random.default_rng(seed)
    if init is None:
        state = initial_state(data, hp, model, mask, config.varying_intrinsic_variance, config.fix_sigma_m)
    else:
        state = init.copy()
        if state.model != model:
            raise ValidationError(f"initial state is for model {state.model}, not {model}")
    sweeper = GibbsSweeper(state, data, hp, config.fix_sigma_m, config.mh_steps, config.mh_step_size)
    ws = sweeper.ws
    P, G, Kc = data.n_proteins, state.n_groups, data.n_conditions
    D = config.n_retained

    draws = {"w": np.empty((D, P, P)), "phi": np.empty((D, P, Kc)), "psi": np.empty(D)}
    if config.keep_draws:
        draws["z"] = np.empty((D, G, P, P), dtype=np.int8)
        draws["coef"] = np.empty((D, G, P, P))
    w_sum = np.zeros((P, P))
    wcond_sum = None if model == "nhm" else np.zeros((Kc, P, P))
    wcond = np.empty((Kc, P, P))
    allowed = _w_defined(state)

    t0 = time.perf_counter()
    d = 0
    for it in range(config.iterations):
        sweeper.sweep(rng, iteration=it)
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
            w_now = _ordered_w(state.w, model, allowed)
            draws["w"][d] = w_now
            draws["phi"][d] = state.phi
            draws["psi"][d] = state.psi
            if config.keep_draws:
                draws["z"][d] = state.z
                draws["coef"][d] = state.coef
            w_sum += w_now
            if wcond_sum is not None:
                K.draw_wcond(ws.code, state.w, state.z, state.mask, hp.v, wcond, rng)
                wcond_sum += wcond
            d += 1
        if progress_every and (it + 1) % progress_every == 0:
            log.info("chain seed=%d model=%s iteration %d/%d (%.1fs)", seed, model, it + 1,
                     config.iterations, time.perf_counter() - t0)
    _warn_collapse(ws.x, draws["phi"][:d], seed)
    return ChainTrace(model=model, names=list(data.panel.names), labels=data.design.labels,
                      seed=seed, config=config, n_draws=d, draws=draws, w_sum=w_sum,
                      wcond_sum=wcond_sum, mask=state.mask.copy(), final_state=state,
                      elapsed=time.perf_counter() - t0)


class GibbsSweeper:
    """Full systematic-scan sweeps of one state in place, without bookkeeping.

    :func:`run_chain` is built on this; joint-distribution tests use it
    directly and swap the observations between sweeps.
    """

    def __init__(self, state: ChainState, data: Dataset, hp: Hyperparameters, fix_sigma_m=None,
                 mh_steps=3, mh_step_size=1.0):
        self.state = state
        self.hp = hp
        self.ws = _prepare(state, data, hp)
        self.fix_sigma_m = fix_sigma_m
        self.mh_steps = int(mh_steps)
        self.mh_step_size = float(mh_step_size)
        self._psi = _psi_arr(state)
        if fix_sigma_m is not None:
            state.psi = float(fix_sigma_m) ** -2

    def set_observations(self, x):
        """Replace the measured values, given as a stacked ``(P, N)`` array."""
        x = np.asarray(x, dtype=float)
        if x.shape != self.ws.x.shape:
            raise ValidationError(f"observations have shape {x.shape}, expected {self.ws.x.shape}")
        self.ws.x[...] = x

    def sweep(self, rng, n=1, iteration=None):
        s, ws = self.state, self.ws
        self._psi[0] = s.psi
        for t in range(n):
            try:
                K.sweep(ws.code, ws.x, s.xt, ws.res, s.intercept, s.coef, s.z, s.w,
                        s.slab_mean, s.slab_prec, s.phi, self._psi, s.mask, ws.cond_start,
                        ws.group_start, ws.group_of_cond, ws.cond_of_cell, ws.hpv, ws.a, ws.V,
                        s.varying_variance, self.fix_sigma_m is not None, self.mh_steps,
                        self.mh_step_size, rng)
            except (ArithmeticError, ValueError) as exc:
                raise NumericalError(str(exc), iteration=t if iteration is None else iteration) from None
        s.psi = float(self._psi[0])
        return s


COLLAPSE_RATIO = 1e4


def _warn_collapse(x, phi_draws, seed):
    """Flag intrinsic precisions far beyond what the data scale supports.

    With cyclic coefficient sets and a free measurement variance the
    unnormalised target rewards near-singular ``I - A``: intrinsic variances
    shrink towards zero and the measurement variance absorbs the data. Pinning
    ``fix_sigma_m`` removes that mode.
    """
    if phi_draws.shape[0] == 0:
        return
    # robust scale, so heavy-tailed data with a few huge values do not trip it
    mad = np.median(np.abs(x - np.median(x, axis=1, keepdims=True)), axis=1)
    ratio = np.median(phi_draws, axis=0).max(axis=1) * (1.4826 * mad) ** 2
    bad = np.flatnonzero(ratio > COLLAPSE_RATIO)
    if bad.size:
        log.warning("chain seed=%d: intrinsic variance collapsed for proteins %s "
                    "(precision x robust data variance up to %.3g); consider fix_sigma_m",
                    seed, bad.tolist(), float(ratio.max()))


def _w_defined(state):
    P = state.n_proteins
    out = np.zeros((P, P), dtype=bool)
    for i, j in allowed_pairs(state.mask, state.model):
        out[i, j] = True
        if state.model == "rhm":
            out[j, i] = True
    return out


def _ordered_w(w, model, allowed):
    if model == "rhm":
        up = np.triu(np.nan_to_num(w), 1)
        w = up + up.T
    return np.where(allowed, w, np.nan)


def _run_one(args):
    data, hp, config, model, seed, mask = args
    return run_chain(data, hp, config, model, seed=seed, mask=mask)


def run_chains(data, hp, config, model, mask=None, workers=1) -> list:
    """``config.n_chains`` independent chains with seeds derived from ``config.seed``.

    With ``workers > 1`` chains run in separate processes; results do not
    depend on the worker count.
    """
    seeds = chain_seeds(config.seed, config.n_chains)
    jobs = [(data, hp, config, model, s, mask) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


# ------------------------------------------------------------------- summaries

@dataclass
class RunSummary:
    """Posterior means from one chain (or pooled over chains).

    ``w_pair[i, j]`` is the association score of the unordered pair: the mean
    of ``(w_ij + w_ji) / 2`` (hm, nhm) or of the shared ``w`` (rhm).
    ``w_condition[k, i, j]`` is the mean of ``w_ij^(k)``.
    """

    w_overall: np.ndarray
    w_pair: np.ndarray
    w_condition: np.ndarray | None
    n_draws: int
    seed: int | None = None


@dataclass
class PosteriorSummary:
    names: list
    labels: list
    model: str
    runs: list
    pooled: RunSummary
    meta: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def pair_scores(self, run: int | None = None) -> list:
        """``(i, j, w_hat)`` for every unordered pair ``i < j`` with a score."""
        s = self.pooled if run is None else self.runs[run]
        P = len(self.names)
        return [(i, j, float(s.w_pair[i, j])) for i in range(P) for j in range(i + 1, P)
                if np.isfinite(s.w_pair[i, j])]


def _pair_matrix(w_overall):
    with np.errstate(invalid="ignore"):
        both = np.stack([w_overall, w_overall.T])
        out = np.nanmean(np.where(np.isfinite(both), both, np.nan), axis=0) if np.any(np.isfinite(both)) else both[0]
    np.fill_diagonal(out, np.nan)
    return out


def _run_summary(w_sum, wcond_sum, n, seed=None):
    if n < 1:
        raise ValidationError("a trace with no retained draws cannot be summarised")
    w_overall = w_sum / n
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        w_pair = _pair_matrix(w_overall)
    w_cond = None if wcond_sum is None else wcond_sum / n
    return RunSummary(w_overall=w_overall, w_pair=w_pair, w_condition=w_cond, n_draws=n, seed=seed)


def summarize(traces) -> PosteriorSummary:
    """Per-chain and pooled posterior means of ``w`` and ``w^(k)``."""
    traces = list(traces)
    if not traces:
        raise ValidationError("no traces to summarise")
    first = traces[0]
    for t in traces[1:]:
        if t.model != first.model or t.names != first.names or t.labels != first.labels:
            raise ValidationError("traces come from different models or datasets")
    runs = [_run_summary(t.w_sum, t.wcond_sum, t.n_draws, t.seed) for t in traces]
    n = sum(t.n_draws for t in traces)
    w_sum = sum(t.w_sum for t in traces)
    wc = None if first.wcond_sum is None else sum(t.wcond_sum for t in traces)
    pooled = _run_summary(w_sum, wc, n)
    return PosteriorSummary(names=list(first.names), labels=list(first.labels), model=first.model,
                            runs=runs, pooled=pooled)


# ------------------------------------------------------------ prior simulation

def draw_from_prior(hp: Hyperparameters, model: str, mask, sizes, rng, fix_sigma_m=None,
                    varying_variance=False):
    """Draw ``(state, blocks)`` from the joint prior predictive.

    The product of per-protein regressions is a normalised density only when
    the allowed predictors form a DAG, so ``mask`` must be acyclic. Used for
    joint-distribution (Geweke) testing.
    """
    check_model(model)
    mask = np.asarray(mask, dtype=bool)
    P = mask.shape[0]
    order = _topological(mask)
    Kc = len(sizes)
    G = n_groups(model, Kc)
    a, V = hp.a_vector(P), hp.slab_mean_variance(P)
    w = np.full((P, P), np.nan)
    coef = np.zeros((G, P, P))
    z = np.zeros((G, P, P), dtype=np.int8)
    slab_mean = np.tile(a[:, None], (1, P))
    slab_prec = np.ones((P, P))
    for i, j in allowed_pairs(mask, model):
        wij = K._clip_w(rng.beta(hp.beta1, hp.beta2))
        w[i, j] = wij
        dirs = [(i, j), (j, i)] if model == "rhm" else [(i, j)]
        dirs = [(r, c) for r, c in dirs if mask[r, c]]
        for r, c in dirs:
            if model != "nhm":
                slab_mean[r, c] = rng.normal(a[r], math.sqrt(V[r]))
                slab_prec[r, c] = rng.gamma(hp.gamma3, 1.0 / hp.gamma4)
        for g in range(G):
            if model == "rhm":
                u = rng.beta(wij * hp.v, (1 - wij) * hp.v)
                probs = [u] * len(dirs)
            else:
                probs = [wij]
            for (r, c), p in zip(dirs, probs):
                if rng.random() < p:
                    z[g, r, c] = 1
                    if model == "nhm":
                        coef[g, r, c] = rng.normal(a[r], math.sqrt(V[r]))
                    else:
                        coef[g, r, c] = rng.normal(slab_mean[r, c], 1.0 / math.sqrt(slab_prec[r, c]))
    intercept = rng.normal(0.0, hp.intercept_prior_sd, size=(G, P))
    if varying_variance:
        phi = rng.gamma(hp.gamma1, 1.0 / hp.gamma2, size=(P, Kc))
    else:
        phi = np.repeat(rng.gamma(hp.gamma1, 1.0 / hp.gamma2, size=(P, 1)), Kc, axis=1)
    psi = fix_sigma_m ** -2 if fix_sigma_m is not None else rng.gamma(hp.gamma5, 1.0 / hp.gamma6)
    blocks_t, blocks = [], []
    for k, nk in enumerate(sizes):
        g = group_of(model, k)
        xt = np.zeros((nk, P))
        for i in order:
            xt[:, i] = (intercept[g, i] + xt @ coef[g, i]
                        + rng.normal(0.0, 1.0 / math.sqrt(phi[i, k]), size=nk))
        blocks_t.append(xt)
        blocks.append(xt + rng.normal(0.0, 1.0 / math.sqrt(psi), size=(nk, P)))
    state = ChainState(model=model, intercept=intercept, coef=coef, z=z, w=w, slab_mean=slab_mean,
                       slab_prec=slab_prec, phi=phi, psi=float(psi),
                       xt=np.ascontiguousarray(np.concatenate(blocks_t).T), mask=mask.copy(),
                       varying_variance=varying_variance)
    return state, blocks


def _topological(mask):
    from graphlib import CycleError as _GCycle, TopologicalSorter

    P = mask.shape[0]
    ts = TopologicalSorter({i: set(np.flatnonzero(mask[i]).tolist()) for i in range(P)})
    try:
        return list(ts.static_order())
    except _GCycle as exc:
        raise ValidationError(f"mask is not acyclic: {exc.args[1]}") from None


def with_config(config: SamplerConfig, **changes) -> SamplerConfig:
    return replace(config, **changes)
