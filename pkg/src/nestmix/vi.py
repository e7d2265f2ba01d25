"""Mean-field coordinate-ascent variational inference for the nested mixtures.

The variational family is fully factorised::

    q = prod_j q(S_j) prod_ij q(M_ij) q(dist. weights) prod_k q(omega_k)
        prod_l q(mu_l, sigma2_l) q(alpha) q(beta)

with categorical ``q(S_j) = R[j]`` and ``q(M_ij) = X[i]``, Beta sticks or a
Dirichlet for the weight blocks, NIG atoms and Gamma concentrations.  One
sweep applies the closed-form updates in the order X, R, omega, pi, atoms,
concentrations; each is an exact coordinate maximiser so the ELBO never
decreases.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .kmeans import kmeans
from .model import LOG_2PI, GroupedData, ModelConfig, NigParams, nig_update
from .rng import RngStream


class ViFailure(RuntimeError):
    """Every optimisation run failed numerically."""


@dataclass
class ViParams:
    maxK: int | None = None
    maxL: int | None = None
    epsilon: float = 0.01
    maxSIM: int = 5000
    seed: int = 0
    n_runs: int = 1
    warmstart: bool = True
    nclus_start: int | None = None
    verbose: bool = False
    threads: int = 1

    def validate(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.maxSIM < 1:
            raise ValueError("maxSIM must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ViState:
    R: np.ndarray                 # J x K
    X: np.ndarray                 # N x L
    obs_params: np.ndarray        # K x L Dirichlet, or K x (L-1) x 2 Beta sticks (CAM)
    dist_params: np.ndarray       # K Dirichlet (FSAN), or (K-1) x 2 Beta sticks
    m: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    gam: np.ndarray
    alpha_gamma: tuple | None = None   # (shape, rate) of q(alpha)
    beta_gamma: tuple | None = None    # (shape, rate) of q(beta), CAM only
    elbo_trace: list = field(default_factory=list)
    converged: bool = False

    def nig(self, l: int) -> NigParams:
        return NigParams(float(self.m[l]), float(self.tau[l]), float(self.lam[l]), float(self.gam[l]))

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1] if self.elbo_trace else float("nan")

    def copy(self) -> "ViState":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        kw["elbo_trace"] = list(self.elbo_trace)
        return ViState(**kw)


@dataclass
class ViFit:
    best: ViState
    all_elbo_traces: list
    best_run_index: int
    best_seed: int
    elapsed: float
    converged: list
    failed_runs: list = field(default_factory=list)
    best_nclus_start: int | None = None

    @property
    def n_runs(self) -> int:
        return len(self.all_elbo_traces)


# -- expectations -------------------------------------------------------------

def _elog_sticks(params):
    """E[log w] for truncated sticks with Beta params ``(..., n-1, 2)``.

    Returns ``(E log w (..., n), E log v, E log(1 - v))``.
    """
    g1, g2 = params[..., 0], params[..., 1]
    dsum = digamma(g1 + g2)
    elv = digamma(g1) - dsum
    el1mv = digamma(g2) - dsum
    n = params.shape[-2] + 1
    out = np.zeros(params.shape[:-2] + (n,))
    out[..., :-1] = elv
    out[..., 1:] += np.cumsum(el1mv, axis=-1)
    return out, elv, el1mv


def _elog_dirichlet(d):
    return digamma(d) - digamma(d.sum(axis=-1, keepdims=True))


def elog_omega(state: ViState, cfg: ModelConfig) -> np.ndarray:
    if cfg.obs_gem:
        return _elog_sticks(state.obs_params)[0]
    return _elog_dirichlet(state.obs_params)


def elog_pi(state: ViState, cfg: ModelConfig) -> np.ndarray:
    if cfg.dist_gem:
        return _elog_sticks(state.dist_params)[0]
    return _elog_dirichlet(state.dist_params)


def _conc_moments(gamma_params, prior):
    """``(E[c], E[log c])`` for a concentration that is fixed or Gamma-distributed."""
    if gamma_params is None:
        return prior.fixed, math.log(prior.fixed)
    s, r = gamma_params
    return s / r, digamma(s) - math.log(r)


def _elogphi_parts(state: ViState):
    """Per-atom constant and precision factor of E[log N(y; mu, sigma2)]."""
    elogtau = digamma(state.lam) - np.log(state.gam)
    const = -0.5 * LOG_2PI + 0.5 * elogtau - 0.5 / state.tau
    prec = state.lam / state.gam
    return const, prec, elogtau


def expected_loglik(state: ViState, y) -> np.ndarray:
    """``E_q[log N(y_i; mu_l, sigma2_l)]`` as an N x L matrix."""
    const, prec, _ = _elogphi_parts(state)
    return const[None, :] - 0.5 * prec[None, :] * (np.asarray(y)[:, None] - state.m[None, :]) ** 2


# -- sufficient statistics of the local factors ---------------------------------

@dataclass
class _LocalStats:
    W: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    nbar: np.ndarray   # J x L soft counts
    H_X: float         # entropy of q(M)


def _stats_from_X(X, data: GroupedData, H_X=None) -> _LocalStats:
    y = data.values
    W = X.sum(axis=0)
    S1 = y @ X
    S2 = (y * y) @ X
    nbar = np.add.reduceat(X, data.offsets[:-1], axis=0)
    if H_X is None:
        H_X = float(-xlogy(X, X).sum())
    return _LocalStats(W, S1, S2, nbar, H_X)


def _data_term(state: ViState, st: _LocalStats):
    const, prec, _ = _elogphi_parts(state)
    sq = st.S2 - 2.0 * state.m * st.S1 + state.m ** 2 * st.W
    return const * st.W - 0.5 * prec * sq


# -- coordinate updates ---------------------------------------------------------

def _update_X(state, data, cfg):
    """(D1) returns the new X-dependent statistics."""
    RE = state.R @ elog_omega(state, cfg)            # J x L
    const, prec, _ = _elogphi_parts(state)
    a = np.subtract.outer(data.values, state.m)
    a *= a
    a *= -0.5 * prec
    a += const
    off = data.offsets
    for j in range(data.J):
        a[off[j]:off[j + 1]] += RE[j]
    mx = a.max(axis=1)
    a -= mx[:, None]
    np.exp(a, out=a)
    s = a.sum(axis=1)
    a /= s[:, None]
    lse = mx + np.log(s)
    state.X = a
    st = _stats_from_X(a, data, H_X=0.0)
    # sum_il X log X = sum_il X a - sum_i lse; the X.a part via the statistics
    xa = float((st.nbar * RE).sum() + _data_term(state, st).sum())
    st.H_X = float(lse.sum()) - xa
    return st


def _update_R(state, cfg, st):
    """(D2)"""
    logR = elog_pi(state, cfg)[None, :] + st.nbar @ elog_omega(state, cfg).T
    state.R = np.exp(logR - logsumexp(logR, axis=1, keepdims=True))


def _update_obs_weights(state, cfg, st):
    """(D3)"""
    soft = state.R.T @ st.nbar                        # K x L
    if cfg.obs_gem:
        e_beta, _ = _conc_moments(state.beta_gamma, cfg.obs_weights)
        tail = np.cumsum(soft[:, ::-1], axis=1)[:, ::-1]
        p = np.empty(soft.shape[:1] + (soft.shape[1] - 1, 2))
        p[..., 0] = 1.0 + soft[:, :-1]
        p[..., 1] = e_beta + tail[:, 1:]
        state.obs_params = p
    else:
        state.obs_params = cfg.obs_weights.conc + soft


def _update_dist_weights(state, cfg):
    """(D4)"""
    occ = state.R.sum(axis=0)
    if cfg.dist_gem:
        e_alpha, _ = _conc_moments(state.alpha_gamma, cfg.dist_weights)
        tail = np.cumsum(occ[::-1])[::-1]
        p = np.empty((occ.shape[0] - 1, 2))
        p[:, 0] = 1.0 + occ[:-1]
        p[:, 1] = e_alpha + tail[1:]
        state.dist_params = p
    else:
        state.dist_params = cfg.dist_weights.conc + occ


def _update_atoms(state, cfg, st):
    """(D5) weighted conjugate update."""
    state.m, state.tau, state.lam, state.gam = nig_update(cfg.nig, st.W, st.S1, st.S2)


def _update_concentrations(state, cfg):
    """(D6)"""
    dw, ow = cfg.dist_weights, cfg.obs_weights
    if cfg.dist_gem and dw.is_random:
        _, _, el1mv = _elog_sticks(state.dist_params)
        state.alpha_gamma = (dw.shape + (cfg.maxK - 1), dw.rate - float(el1mv.sum()))
    if cfg.obs_gem and ow.is_random:
        _, _, el1mv = _elog_sticks(state.obs_params)
        state.beta_gamma = (ow.shape + cfg.maxK * (cfg.maxL - 1), ow.rate - float(el1mv.sum()))


def _update_globals(state, cfg, st):
    _update_obs_weights(state, cfg, st)
    _update_dist_weights(state, cfg)
    _update_atoms(state, cfg, st)
    _update_concentrations(state, cfg)


def cavi_sweep(state: ViState, data: GroupedData, cfg: ModelConfig) -> ViState:
    """One CAVI pass; appends the post-sweep ELBO to ``state.elbo_trace``."""
    st = _update_X(state, data, cfg)
    _update_R(state, cfg, st)
    _update_globals(state, cfg, st)
    state.elbo_trace.append(_elbo_from_stats(state, cfg, st))
    return state


# -- ELBO -----------------------------------------------------------------------

def _beta_kl_terms(params, e_c, elog_c):
    """sum over sticks of E[log Beta(v; 1, c)] - E[log q(v)]."""
    _, elv, el1mv = _elog_sticks(params)
    g1, g2 = params[..., 0], params[..., 1]
    prior = elog_c + (e_c - 1.0) * el1mv
    logB = gammaln(g1) + gammaln(g2) - gammaln(g1 + g2)
    q = -logB + (g1 - 1.0) * elv + (g2 - 1.0) * el1mv
    return float((prior - q).sum())


def _dirichlet_kl_terms(d, conc):
    el = _elog_dirichlet(d)
    n = d.shape[-1]
    prior = gammaln(n * conc) - n * gammaln(conc) + (conc - 1.0) * el.sum(axis=-1)
    q = gammaln(d.sum(axis=-1)) - gammaln(d).sum(axis=-1) + ((d - 1.0) * el).sum(axis=-1)
    return float((prior - q).sum())


def _gamma_kl_term(gp, prior):
    s, r = gp
    elog = digamma(s) - math.log(r)
    e = s / r
    p = prior.shape * math.log(prior.rate) - gammaln(prior.shape) + (prior.shape - 1.0) * elog - prior.rate * e
    q = s * math.log(r) - gammaln(s) + (s - 1.0) * elog - s
    return float(p - q)


def atom_terms(state: ViState, cfg: ModelConfig) -> np.ndarray:
    """Per-atom E[log p(mu, tau)] - E[log q(mu, tau)] (tau = 1 / sigma2)."""
    m0, tau0, lam0, gam0 = cfg.nig.as_tuple()
    _, prec, elogtau = _elogphi_parts(state)
    logp = (0.5 * math.log(tau0) + 0.5 * elogtau
            - 0.5 * tau0 * (prec * (state.m - m0) ** 2 + 1.0 / state.tau)
            + lam0 * math.log(gam0) - gammaln(lam0) + (lam0 - 1.0) * elogtau - gam0 * prec)
    logq = (0.5 * np.log(state.tau) + 0.5 * elogtau - 0.5
            + state.lam * np.log(state.gam) - gammaln(state.lam) + (state.lam - 1.0) * elogtau - state.lam)
    return logp - logq


def elbo_terms(state: ViState, data: GroupedData, cfg: ModelConfig, _stats: _LocalStats | None = None) -> dict:
    """The ELBO split into named blocks (their sum is the ELBO)."""
    st = _stats if _stats is not None else _stats_from_X(state.X, data)
    Elw = elog_omega(state, cfg)
    terms = {
        "data": float(_data_term(state, st).sum()),
        "obs_alloc": float((st.nbar * (state.R @ Elw)).sum()),
        "dist_alloc": float((state.R * elog_pi(state, cfg)[None, :]).sum()),
        "entropy_X": st.H_X,
        "entropy_R": float(-xlogy(state.R, state.R).sum()),
        "atoms": float(atom_terms(state, cfg).sum()),
    }
    if cfg.dist_gem:
        e_a, el_a = _conc_moments(state.alpha_gamma, cfg.dist_weights)
        terms["dist_weights"] = _beta_kl_terms(state.dist_params, e_a, el_a) if cfg.maxK > 1 else 0.0
        terms["alpha"] = _gamma_kl_term(state.alpha_gamma, cfg.dist_weights) if state.alpha_gamma else 0.0
    else:
        terms["dist_weights"] = _dirichlet_kl_terms(state.dist_params, cfg.dist_weights.conc)
    if cfg.obs_gem:
        e_b, el_b = _conc_moments(state.beta_gamma, cfg.obs_weights)
        terms["obs_weights"] = _beta_kl_terms(state.obs_params, e_b, el_b) if cfg.maxL > 1 else 0.0
        terms["beta"] = _gamma_kl_term(state.beta_gamma, cfg.obs_weights) if state.beta_gamma else 0.0
    else:
        terms["obs_weights"] = _dirichlet_kl_terms(state.obs_params, cfg.obs_weights.conc)
    return terms


def _elbo_from_stats(state, cfg, st):
    return float(sum(elbo_terms(state, None, cfg, st).values()))


def compute_elbo(state: ViState, data: GroupedData, cfg: ModelConfig) -> float:
    """E_q[log p(y, latents)] - E_q[log q], all normalising constants included."""
    val = float(sum(elbo_terms(state, data, cfg).values()))
    if not np.isfinite(val):
        raise FloatingPointError("ELBO is not finite")
    return val


# -- initialisation and driver ------------------------------------------------------

def _resolve_bounds(cfg: ModelConfig, params: ViParams) -> ModelConfig:
    if params.maxK is not None or params.maxL is not None:
        cfg = cfg.with_bounds(params.maxK or cfg.maxK, params.maxL or cfg.maxL)
    return cfg


def run_nclus_start(cfg: ModelConfig, params: ViParams, run_index: int) -> int:
    """Number of k-means centres used by run ``run_index``.

    An explicit ``nclus_start`` applies to every run.  Otherwise run 0 uses
    ``min(maxL, 10)`` centres and later runs cycle downwards through
    ``min(maxL, 10) - 1, ..., 1`` so that best-ELBO selection compares
    warm starts of different resolution.
    """
    if params.nclus_start is not None:
        return int(params.nclus_start)
    top = min(cfg.maxL, 10)
    return top - (run_index % top)


def vi_initialize(data: GroupedData, cfg: ModelConfig, params: ViParams, rng: RngStream,
                  nclus_start: int | None = None) -> ViState:
    """Jittered responsibilities (k-means soft assignments for X under warm start),
    followed by one pass of the global updates so the first sweep starts from
    parameters consistent with them."""
    K, L = cfg.maxK, cfg.maxL
    J, N = data.J, data.N
    R = rng.dirichlet(np.full((J, K), 10.0)) if K > 1 else np.ones((J, 1))
    centers = None
    if params.warmstart:
        k = nclus_start if nclus_start is not None else run_nclus_start(cfg, params, 0)
        k = max(1, min(k, L, N))
        centers, _, _ = kmeans(data.values, k, rng, n_init=10, max_iter=50)
        logx = -0.5 * (data.values[:, None] - centers[None, :]) ** 2
        X = np.zeros((N, L))
        X[:, :k] = np.exp(logx - logsumexp(logx, axis=1, keepdims=True))
    else:
        X = rng.dirichlet(np.full((N, L), 10.0)) if L > 1 else np.ones((N, 1))

    prior = cfg.nig
    state = ViState(
        R=R, X=X,
        obs_params=np.empty(0), dist_params=np.empty(0),
        m=np.full(L, prior.m0), tau=np.full(L, prior.tau0),
        lam=np.full(L, prior.lambda0), gam=np.full(L, prior.gamma0),
    )
    dw, ow = cfg.dist_weights, cfg.obs_weights
    if cfg.dist_gem and dw.is_random:
        state.alpha_gamma = (dw.shape, dw.rate)
    if cfg.obs_gem and ow.is_random:
        state.beta_gamma = (ow.shape, ow.rate)
    st = _stats_from_X(X, data)
    _update_globals(state, cfg, st)
    if centers is not None:
        used = st.W[: centers.shape[0]] > 0
        state.m[: centers.shape[0]][used] = centers[used]
    return state


def _single_run(data, cfg, params, run_index):
    seed = params.seed + run_index
    rng = RngStream(seed)
    state = vi_initialize(data, cfg, params, rng, run_nclus_start(cfg, params, run_index))
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore", under="ignore"):
            for h in range(params.maxSIM):
                cavi_sweep(state, data, cfg)
                cur = state.elbo_trace[-1]
                if not np.isfinite(cur):
                    raise FloatingPointError(f"non-finite ELBO at iteration {h + 1}")
                if h > 0 and cur - state.elbo_trace[-2] < params.epsilon:
                    state.converged = True
                    break
    except FloatingPointError as exc:
        return run_index, seed, None, list(state.elbo_trace), str(exc)
    if params.verbose:
        status = "converged" if state.converged else "hit maxSIM"
        print(f"run {run_index + 1}/{params.n_runs}: ELBO {state.elbo:.3f} after "
              f"{len(state.elbo_trace)} iterations ({status})", flush=True)
    return run_index, seed, state, list(state.elbo_trace), None


def _worker(args):
    return _single_run(*args)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("NESTMIX_THREADS", "1")))
    except ValueError:
        return 1


def run_cavi(data: GroupedData, cfg: ModelConfig, params: ViParams) -> ViFit:
    """Run ``n_runs`` independent CAVI optimisations and keep the best final ELBO.

    Run ``r`` uses the stream seeded with ``seed + r``, so refitting with
    ``seed=fit.best_seed, n_runs=1`` reproduces the winning run.
    """
    params.validate()
    cfg = _resolve_bounds(cfg, params)
    t0 = time.perf_counter()
    jobs = [(data, cfg, params, r) for r in range(params.n_runs)]
    if params.threads > 1 and params.n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(params.threads, params.n_runs)) as ex:
            results = list(ex.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]

    traces, converged, failed = [], [], []
    best = None
    for run_index, seed, state, trace, err in results:
        traces.append(np.asarray(trace, dtype=float))
        converged.append(bool(state is not None and state.converged))
        if state is None:
            failed.append((run_index, err))
            continue
        # strict comparison: ties keep the lowest run index
        if best is None or state.elbo > best[2].elbo:
            best = (run_index, seed, state)
    if best is None:
        raise ViFailure("all variational runs failed: " + "; ".join(f"run {i}: {e}" for i, e in failed))
    return ViFit(
        best=best[2], all_elbo_traces=traces, best_run_index=best[0], best_seed=best[1],
        elapsed=time.perf_counter() - t0, converged=converged, failed_runs=failed,
        best_nclus_start=run_nclus_start(cfg, params, best[0]) if params.warmstart else None,
    )
