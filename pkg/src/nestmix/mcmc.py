"""Conditional Gibbs / slice sampler for the CAM, FISAN and FSAN nested mixtures.

Stick-breaking (GEM) weight blocks are handled with the independent
slice-efficient scheme with deterministic levels ``xi_l = kappa (1 - kappa)^(l-1)``:
a unit with allocation ``c`` carries ``u ~ U(0, xi_c)`` and is re-allocated over
``{l : xi_l > u}`` with probabilities proportional to ``w_l / xi_l * lik_l``.
Dirichlet weight blocks are allocated over all components.  Arrays are
truncated at ``maxK`` / ``maxL``; reaching a bound is reported, never grown.

Internally all allocations are 0-based.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kmeans import kmeans
from .model import LOG_2PI, GroupedData, ModelConfig, AtomSet, nig_update
from .rng import RngStream

KAPPA = 0.5


class SaturationWarning(RuntimeWarning):
    """An iteration occupied every available component at some level."""


def log_slice_levels(n: int) -> np.ndarray:
    return math.log(KAPPA) + np.arange(n) * math.log(1.0 - KAPPA)


def slice_levels(n: int) -> np.ndarray:
    return np.exp(log_slice_levels(n))


def _smallest_uint(n: int):
    for dt in (np.uint8, np.uint16, np.uint32):
        if n <= np.iinfo(dt).max:
            return dt
    return np.int64


@dataclass
class McmcParams:
    nrep: int = 1000
    burn: int = 500
    maxK: int | None = None
    maxL: int | None = None
    seed: int = 0
    warmstart: bool = True
    nclus_start: int | None = None
    verbose: bool = False
    store_omega: bool = True
    dist_update: str = "marginal"
    atom_swaps: bool = True

    def validate(self, cfg: ModelConfig):
        if self.nrep < 1 or not (0 <= self.burn < self.nrep):
            raise ValueError("need 0 <= burn < nrep")
        L = self.maxL if self.maxL is not None else cfg.maxL
        if self.nclus_start is not None and not (1 <= self.nclus_start <= L):
            raise ValueError("nclus_start must lie in 1..maxL")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class McmcState:
    S: np.ndarray
    M: np.ndarray
    log_pi: np.ndarray
    log_omega: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    alpha: float = float("nan")
    beta: float = float("nan")
    u_dist: np.ndarray | None = None
    u_obs: np.ndarray | None = None
    # log(1 - v) of the current sticks, kept for the concentration updates
    log1m_v_dist: np.ndarray | None = None
    log1m_v_obs: np.ndarray | None = None
    slice_cap_hits: int = 0

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.log_omega)

    @property
    def atoms(self) -> AtomSet:
        return AtomSet(self.mu, self.sigma2)


@dataclass
class McmcChains:
    """Post burn-in draws.  Allocation labels are stored 1-based."""

    S: np.ndarray
    M: np.ndarray
    pi: np.ndarray
    omega: np.ndarray | None
    mu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    oc_count: np.ndarray
    dc_count: np.ndarray
    elapsed: float = 0.0
    nrep: int = 0
    burn: int = 0
    saturated_iters: int = 0
    slice_cap_hits: int = 0
    warnings: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return int(self.S.shape[0])


# -- weight helpers ---------------------------------------------------------

def _compose_sticks(log_v, log1m_v):
    """Stick-breaking log-weights from sticks of the first n-1 breaks (last stick = 1)."""
    lead = log_v.shape[:-1]
    n = log_v.shape[-1] + 1
    out = np.zeros(lead + (n,))
    prefix = np.cumsum(log1m_v, axis=-1)
    out[..., 0:n - 1] = log_v
    out[..., 1:n - 1] += prefix[..., :-1]
    out[..., n - 1] = prefix[..., -1] if n > 1 else 0.0
    return out


def _draw_sticks(rng: RngStream, counts, conc):
    """Posterior sticks for truncated GEM(conc) given counts along the last axis.

    Returns ``(log_weights, log(1 - v))`` where ``v`` excludes the final stick.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.shape[-1]
    if n == 1:
        return np.zeros(counts.shape), np.zeros(counts.shape[:-1] + (0,))
    tail = np.cumsum(counts[..., ::-1], axis=-1)[..., ::-1]
    a = 1.0 + counts[..., :-1]
    b = conc + tail[..., 1:]
    log_v, log1m_v = rng.log_beta(a, b)
    return _compose_sticks(log_v, log1m_v), log1m_v


def _sticks_from_weights(w):
    w = np.asarray(w, dtype=float)
    remaining = 1.0 - np.concatenate([np.zeros(w.shape[:-1] + (1,)), np.cumsum(w, axis=-1)[..., :-1]], axis=-1)
    v = np.clip(w[..., :-1] / np.maximum(remaining[..., :-1], 1e-300), 0.0, 1.0 - 1e-16)
    return np.log1p(-v)


def draw_nig(rng: RngStream, m, tau, lam, gam):
    prec = rng.gamma(lam, gam)
    sigma2 = 1.0 / prec
    mu = rng.normal(m, np.sqrt(sigma2 / tau))
    return np.atleast_1d(mu), np.atleast_1d(sigma2)


# -- the seven update steps ---------------------------------------------------

def _slice_logweights(logw, u, n):
    lxi = log_slice_levels(n)
    active = lxi[None, :] > np.log(u)[:, None]
    return np.where(active, logw - lxi[None, :], -np.inf), active


def obs_loglik(state: McmcState, data: GroupedData) -> np.ndarray:
    """``log N(y_i; mu_l, sigma2_l)`` as an N x L matrix."""
    y = data.values
    return (-0.5 * (LOG_2PI + np.log(state.sigma2))[None, :]
            - (y[:, None] - state.mu[None, :]) ** 2 / (2.0 * state.sigma2[None, :]))


def update_obs_alloc(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream,
                     loglik: np.ndarray | None = None) -> McmcState:
    L = cfg.maxL
    g = data.group_index
    if loglik is None:
        loglik = obs_loglik(state, data)
    logw = state.log_omega[state.S[g]] + loglik
    if cfg.obs_gem:
        logw, active = _slice_logweights(logw, state.u_obs, L)
        state.slice_cap_hits += int(active[:, -1].sum())
        empty = ~active.any(axis=1)
        if np.any(empty):
            logw[empty] = state.log_omega[state.S[g[empty]]] + loglik[empty]
    state.M = rng.categorical_log(logw)
    return state


def group_counts(data: GroupedData, M, L) -> np.ndarray:
    """``n[j, l] = #{i in group j : M_i = l}``."""
    J = data.J
    return np.bincount(data.group_index * L + M, minlength=J * L).reshape(J, L)


def update_dist_alloc(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream) -> McmcState:
    """Draw ``S_j`` given the current observational allocations of group j."""
    K, L = cfg.maxK, cfg.maxL
    if K == 1:
        state.S = np.zeros(data.J, dtype=np.int64)
        return state
    n = group_counts(data, state.M, L).astype(float)
    logw = n @ state.log_omega.T + state.log_pi[None, :]
    return _draw_dist(state, cfg, rng, logw)


def update_dist_alloc_marginal(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream,
                               loglik: np.ndarray | None = None) -> McmcState:
    """Draw ``S_j`` with the group's observational allocations summed out.

    ``P(S_j = k) ~ pi_k prod_i sum_l omega_{l,k} N(y_ij; theta_l)`` (slice-restricted
    where the weights are stick-breaking).  Must be followed by
    :func:`update_obs_alloc` so that ``(S, M)`` is drawn as a block.
    """
    K, L = cfg.maxK, cfg.maxL
    if K == 1:
        state.S = np.zeros(data.J, dtype=np.int64)
        return state
    if loglik is None:
        loglik = obs_loglik(state, data)
    a = loglik
    if cfg.obs_gem:
        lxi = log_slice_levels(L)
        a = np.where(lxi[None, :] > np.log(state.u_obs)[:, None], loglik - lxi[None, :], -np.inf)
    rowmax = a.max(axis=1)
    lik = np.exp(a - rowmax[:, None])
    with np.errstate(divide="ignore"):
        logp = np.log(lik @ np.exp(state.log_omega).T) + rowmax[:, None]
    logw = np.add.reduceat(logp, data.offsets[:-1], axis=0) + state.log_pi[None, :]
    if cfg.dist_gem:
        lxi_k = log_slice_levels(K)
        act = lxi_k[None, :] > np.log(state.u_dist)[:, None]
        dead = ~np.isfinite(np.where(act, logw, -np.inf)).any(axis=1)
    else:
        dead = ~np.isfinite(logw).any(axis=1)
    if np.any(dead):
        # every candidate underflowed: fall back to the allocation-conditional weights
        n = group_counts(data, state.M, L).astype(float)
        logw[dead] = n[dead] @ state.log_omega.T + state.log_pi[None, :]
    return _draw_dist(state, cfg, rng, logw)


def _draw_dist(state, cfg, rng, logw):
    if cfg.dist_gem:
        logw, active = _slice_logweights(logw, state.u_dist, cfg.maxK)
        state.slice_cap_hits += int(active[:, -1].sum())
    state.S = rng.categorical_log(logw)
    return state


def swap_atoms_within_dc(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream,
                         loglik: np.ndarray | None = None) -> McmcState:
    """Metropolis moves exchanging two atom labels inside one distributional cluster.

    With symmetric Dirichlet weights integrated out, the allocation prior of a
    DC only depends on its label counts up to permutation, so a swap is
    accepted with the plain likelihood ratio.  This lets a DC hand a whole
    duplicate cluster over to an equivalent shared atom in one step.  The
    weights are stale afterwards, so :func:`update_obs_weights` must follow.
    No-op for stick-breaking observational weights.
    """
    L = cfg.maxL
    if cfg.obs_gem or L == 1:
        return state
    if loglik is None:
        loglik = obs_loglik(state, data)
    dc = state.S[data.group_index]
    ar = np.arange(L)
    for k in np.unique(state.S):
        idx = np.flatnonzero(dc == k)
        Mk = state.M[idx]
        order = np.argsort(Mk, kind="stable")
        n = np.bincount(Mk, minlength=L)
        occ = np.flatnonzero(n)
        # A[r, l]: log-likelihood under atom l of the DC-k items currently labelled r
        A = np.zeros((L, L))
        A[occ] = np.add.reduceat(loglik[idx[order]], np.concatenate([[0], np.cumsum(n[occ])[:-1]]), axis=0)
        logu = np.log(rng.uniform(size=(occ.size, L)))
        perm = ar.copy()
        # systematic scan over (b, a) pairs; deltas are recomputed only after an acceptance
        for r, b in enumerate(occ):
            start = 0
            while True:
                delta = A[:, b] + A[b, :] - np.diagonal(A) - A[b, b]
                ok = (ar >= start) & (ar != b) & ((n > 0) | (n[b] > 0)) & (logu[r] < delta)
                hits = np.flatnonzero(ok)
                if hits.size == 0:
                    break
                a = int(hits[0])
                A[[a, b]] = A[[b, a]]
                n[[a, b]] = n[[b, a]]
                perm[[a, b]] = perm[[b, a]]
                start = a + 1
        if np.any(perm != ar):
            relabel = np.empty(L, dtype=np.int64)
            relabel[perm] = ar
            state.M[idx] = relabel[Mk]
    return state


def update_obs_weights(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream) -> McmcState:
    K, L = cfg.maxK, cfg.maxL
    c = np.bincount(state.S[data.group_index] * L + state.M, minlength=K * L).reshape(K, L)
    if cfg.obs_gem:
        state.log_omega, state.log1m_v_obs = _draw_sticks(rng, c, state.beta)
    elif L == 1:
        state.log_omega = np.zeros((K, 1))
    else:
        state.log_omega = rng.log_dirichlet(cfg.obs_weights.conc + c)
    return state


def update_dist_weights(state: McmcState, cfg: ModelConfig, rng: RngStream) -> McmcState:
    K = cfg.maxK
    m = np.bincount(state.S, minlength=K)
    if cfg.dist_gem:
        state.log_pi, state.log1m_v_dist = _draw_sticks(rng, m, state.alpha)
    elif K == 1:
        state.log_pi = np.zeros(1)
    else:
        state.log_pi = rng.log_dirichlet(cfg.dist_weights.conc + m)
    return state


def update_atoms(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream) -> McmcState:
    """Conjugate NIG draw per component; empty components are drawn from the prior."""
    L = cfg.maxL
    y = data.values
    W = np.bincount(state.M, minlength=L).astype(float)
    S1 = np.bincount(state.M, weights=y, minlength=L)
    S2 = np.bincount(state.M, weights=y * y, minlength=L)
    m, tau, lam, gam = nig_update(cfg.nig, W, S1, S2)
    state.mu, state.sigma2 = draw_nig(rng, m, tau, lam, gam)
    return state


def update_concentrations(state: McmcState, cfg: ModelConfig, rng: RngStream) -> McmcState:
    dw, ow = cfg.dist_weights, cfg.obs_weights
    if cfg.dist_gem and dw.is_random:
        n_sticks = cfg.maxK - 1
        rate = dw.rate - float(np.sum(state.log1m_v_dist)) if n_sticks else dw.rate
        state.alpha = rng.gamma(dw.shape + n_sticks, rate)
    if cfg.obs_gem and ow.is_random:
        n_sticks = cfg.maxK * (cfg.maxL - 1)
        rate = ow.rate - float(np.sum(state.log1m_v_obs)) if n_sticks else ow.rate
        state.beta = rng.gamma(ow.shape + n_sticks, rate)
    return state


def update_slice_variables(state: McmcState, cfg: ModelConfig, rng: RngStream) -> McmcState:
    if cfg.dist_gem:
        state.u_dist = rng.uniform(size=state.S.shape[0]) * slice_levels(cfg.maxK)[state.S]
    if cfg.obs_gem:
        state.u_obs = rng.uniform(size=state.M.shape[0]) * slice_levels(cfg.maxL)[state.M]
    return state


def gibbs_sweep(state: McmcState, data: GroupedData, cfg: ModelConfig, rng: RngStream,
                dist_update: str = "marginal", atom_swaps: bool = True) -> McmcState:
    """One full scan.

    ``dist_update="marginal"`` draws the distributional allocations with the
    observational ones summed out, then the observational allocations given
    them (a blocked draw of ``(S, M)``).  ``"conditional"`` uses the plain
    order: observational allocations, then distributional given them.
    ``atom_swaps`` adds :func:`swap_atoms_within_dc` before the weight update.
    """
    loglik = obs_loglik(state, data)
    if dist_update == "marginal":
        update_dist_alloc_marginal(state, data, cfg, rng, loglik)
        update_obs_alloc(state, data, cfg, rng, loglik)
    elif dist_update == "conditional":
        update_obs_alloc(state, data, cfg, rng, loglik)
        update_dist_alloc(state, data, cfg, rng)
    else:
        raise ValueError(f"unknown dist_update {dist_update!r}")
    if atom_swaps:
        swap_atoms_within_dc(state, data, cfg, rng, loglik)
    update_obs_weights(state, data, cfg, rng)
    update_dist_weights(state, cfg, rng)
    update_atoms(state, data, cfg, rng)
    update_concentrations(state, cfg, rng)
    update_slice_variables(state, cfg, rng)
    return state


def sample_prior_state(cfg: ModelConfig, group_sizes, rng: RngStream) -> McmcState:
    """Forward draw of every latent quantity from the (truncated) prior."""
    K, L = cfg.maxK, cfg.maxL
    sizes = np.asarray(group_sizes, dtype=np.int64)
    J = sizes.size
    dw, ow = cfg.dist_weights, cfg.obs_weights
    state = McmcState(S=np.zeros(J, np.int64), M=np.zeros(int(sizes.sum()), np.int64),
                      log_pi=np.zeros(K), log_omega=np.zeros((K, L)),
                      mu=np.zeros(L), sigma2=np.ones(L))
    if cfg.dist_gem:
        state.alpha = rng.gamma(dw.shape, dw.rate) if dw.is_random else dw.fixed
        state.log_pi, state.log1m_v_dist = _draw_sticks(rng, np.zeros(K), state.alpha)
    elif K > 1:
        state.log_pi = rng.log_dirichlet(np.full(K, dw.conc))
    if cfg.obs_gem:
        state.beta = rng.gamma(ow.shape, ow.rate) if ow.is_random else ow.fixed
        state.log_omega, state.log1m_v_obs = _draw_sticks(rng, np.zeros((K, L)), state.beta)
    elif L > 1:
        state.log_omega = rng.log_dirichlet(np.full((K, L), ow.conc))
    state.mu, state.sigma2 = draw_nig(rng, *(np.full(L, v) for v in cfg.nig.as_tuple()))
    state.S = rng.categorical_log(np.broadcast_to(state.log_pi, (J, K)))
    g = np.repeat(np.arange(J), sizes)
    state.M = rng.categorical_log(state.log_omega[state.S[g]])
    update_slice_variables(state, cfg, rng)
    return state


def simulate_data(state: McmcState, group_sizes, rng: RngStream) -> GroupedData:
    """Draw observations given allocations and atoms."""
    sizes = np.asarray(group_sizes, dtype=np.int64)
    y = rng.normal(state.mu[state.M], np.sqrt(state.sigma2[state.M]))
    y = np.atleast_1d(y)
    return GroupedData(y, np.repeat(np.arange(1, sizes.size + 1), sizes), sizes, tuple(range(1, sizes.size + 1)))


# -- initialisation and driver -------------------------------------------------

def initialize_state(data: GroupedData, cfg: ModelConfig, params: McmcParams, rng: RngStream) -> McmcState:
    K, L = cfg.maxK, cfg.maxL
    y = data.values
    nig = cfg.nig
    mu, sigma2 = draw_nig(rng, *(np.full(L, v) for v in nig.as_tuple()))
    if params.warmstart:
        k = params.nclus_start if params.nclus_start is not None else min(10, L)
        k = min(k, data.N)
        centers, M, _ = kmeans(y, k, rng, n_init=10, max_iter=50)
        for c in range(k):
            members = M == c
            if members.any():
                mu[c] = centers[c]
                sigma2[c] = max(float(np.var(y[members])), 1e-4)
        kd = min(data.J, K)
        n = group_counts(data, M, L).astype(float)
        freq = n / n.sum(axis=1, keepdims=True)
        _, S, _ = kmeans(freq, kd, rng, n_init=10, max_iter=50)
    else:
        M = rng.integers(0, L, size=data.N)
        S = rng.integers(0, K, size=data.J)
    state = McmcState(
        S=np.asarray(S, dtype=np.int64),
        M=np.asarray(M, dtype=np.int64),
        log_pi=np.full(K, -math.log(K)),
        log_omega=np.full((K, L), -math.log(L)),
        mu=mu,
        sigma2=sigma2,
    )
    if cfg.dist_gem:
        state.alpha = cfg.dist_weights.initial_value
        state.log1m_v_dist = _sticks_from_weights(state.pi)
    if cfg.obs_gem:
        state.beta = cfg.obs_weights.initial_value
        state.log1m_v_obs = _sticks_from_weights(state.omega)
    # uniform weights would hand every prior-drawn empty atom mass 1/maxL on the
    # first scan; start from the weight conditionals given the initial allocations
    update_obs_weights(state, data, cfg, rng)
    update_dist_weights(state, cfg, rng)
    update_slice_variables(state, cfg, rng)
    return state


def run_mcmc(data: GroupedData, cfg: ModelConfig, params: McmcParams, init_state: McmcState | None = None) -> McmcChains:
    """Run ``params.nrep`` sweeps of :func:`gibbs_sweep` and keep the draws after ``params.burn``."""
    params.validate(cfg)
    if params.maxK is not None or params.maxL is not None:
        cfg = cfg.with_bounds(params.maxK or cfg.maxK, params.maxL or cfg.maxL)
    K, L = cfg.maxK, cfg.maxL
    rng = RngStream(params.seed)
    t0 = time.perf_counter()
    state = init_state if init_state is not None else initialize_state(data, cfg, params, rng)

    T = params.nrep - params.burn
    S_ch = np.empty((T, data.J), dtype=_smallest_uint(K))
    M_ch = np.empty((T, data.N), dtype=_smallest_uint(L))
    pi_ch = np.empty((T, K))
    om_ch = np.empty((T, K, L)) if params.store_omega else None
    mu_ch = np.empty((T, L))
    s2_ch = np.empty((T, L))
    a_ch = np.full(T, np.nan)
    b_ch = np.full(T, np.nan)
    oc = np.empty(T, dtype=np.int64)
    dc = np.empty(T, dtype=np.int64)
    saturated = 0
    report_every = max(1, params.nrep // 10)

    for it in range(params.nrep):
        gibbs_sweep(state, data, cfg, rng, params.dist_update, params.atom_swaps)
        n_oc = int(np.unique(state.M).size)
        n_dc = int(np.unique(state.S).size)
        if (L > 1 and n_oc >= L) or (K > 1 and n_dc >= K):
            saturated += 1
        if params.verbose and (it + 1) % report_every == 0:
            print(f"iteration {it + 1}/{params.nrep}: OC={n_oc} DC={n_dc}", flush=True)
        t = it - params.burn
        if t >= 0:
            S_ch[t] = state.S + 1
            M_ch[t] = state.M + 1
            pi_ch[t] = state.pi
            if om_ch is not None:
                om_ch[t] = state.omega
            mu_ch[t] = state.mu
            s2_ch[t] = state.sigma2
            a_ch[t] = state.alpha
            b_ch[t] = state.beta
            oc[t] = n_oc
            dc[t] = n_dc

    msgs = []
    if saturated:
        msgs.append(f"{saturated} iteration(s) occupied all maxK={K} or maxL={L} components; consider larger bounds")
        warnings.warn(msgs[-1], SaturationWarning, stacklevel=2)
    return McmcChains(
        S=S_ch, M=M_ch, pi=pi_ch, omega=om_ch, mu=mu_ch, sigma2=s2_ch,
        alpha=a_ch, beta=b_ch, oc_count=oc, dc_count=dc,
        elapsed=time.perf_counter() - t0, nrep=params.nrep, burn=params.burn,
        saturated_iters=saturated, slice_cap_hits=state.slice_cap_hits, warnings=msgs,
    )
