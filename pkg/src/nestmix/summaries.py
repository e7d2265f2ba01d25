"""Point estimates and summaries from MCMC chains and variational fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import GroupedData
from .rng import RngStream

N_RESTARTS = 16
PARTITION_SEED = 0
_MAX_SWEEPS = 100


# -- similarity matrix ------------------------------------------------------------

def compute_psm(label_draws) -> np.ndarray:
    """Posterior similarity matrix of a ``T x n`` array of label draws."""
    z = np.asarray(label_draws)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ValueError("label draws must be a non-empty T x n array")
    T, n = z.shape
    psm = np.zeros((n, n))
    for row in z:
        _, inv = np.unique(row, return_inverse=True)
        onehot = np.zeros((n, inv.max() + 1))
        onehot[np.arange(n), inv] = 1.0
        psm += onehot @ onehot.T
    psm /= T
    np.fill_diagonal(psm, 1.0)
    return psm


def binder_loss(labels, psm) -> float:
    """Expected Binder loss ``sum_{i<j} |1{c_i = c_j} - p_ij|`` under a PSM."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(labels.size, k=1)
    return float(np.abs(same[iu] - np.asarray(psm)[iu]).sum())


def binder_loss_draws(labels, label_draws) -> float:
    """Binder loss computed from draws through pair counts (no n x n matrix)."""
    z = _compact_draws(np.asarray(label_draws))
    labels = compact_labels(labels) - 1
    T = z.shape[0]
    nl = z.max() + 1
    pairs_all = 0.0
    pairs_within = 0.0
    for row in z:
        c = np.bincount(row, minlength=nl).astype(float)
        pairs_all += (c * (c - 1) / 2).sum()
        joint = np.bincount(labels * nl + row).astype(float)
        pairs_within += (joint * (joint - 1) / 2).sum()
    sizes = np.bincount(labels).astype(float)
    return float(pairs_all / T + (sizes * (sizes - 1) / 2).sum() - 2.0 * pairs_within / T)


def compact_labels(labels) -> np.ndarray:
    """Relabel to 1..k in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inv.ravel()] + 1


def _compact_draws(z):
    out = np.empty(z.shape, dtype=np.int32)
    for t, row in enumerate(z):
        out[t] = np.unique(row, return_inverse=True)[1].ravel()
    return out


# -- greedy Binder search -----------------------------------------------------------
#
# Placing item i (multiplicity w_i) in cluster C costs w_i * (|C| - 2 A(i, C)),
# where |C| counts items with multiplicity and A(i, C) = sum_{j in C} w_j p_ij.
# Opening a new cluster costs 0.

class _PsmAffinity:
    def __init__(self, psm, weights):
        self.psm = np.asarray(psm, dtype=float)
        self.w = weights
        self.reset()

    def reset(self):
        self.n_clusters = 0
        self.members: list = []

    def affinity(self, i):
        return np.array([(self.psm[i, m] * self.w[m]).sum() for m in self.members]) if self.members else np.zeros(0)

    def add(self, i, c):
        if c == self.n_clusters:
            self.members.append([])
            self.n_clusters += 1
        self.members[c].append(i)

    def remove(self, i, c):
        self.members[c].remove(i)


class _DrawsAffinity:
    """Affinities from label draws, through per-cluster label counts ``cnt[C, t, l]``."""

    def __init__(self, z, weights):
        self.T, self.n = z.shape
        self.nl = int(z.max()) + 1
        self.idx = (np.arange(self.T)[None, :] * self.nl + z.T).astype(np.int64)  # n x T
        self.w = weights
        self.reset()

    def reset(self):
        self.n_clusters = 0
        self.cnt = np.zeros((4, self.T * self.nl))

    def affinity(self, i):
        if self.n_clusters == 0:
            return np.zeros(0)
        return np.take(self.cnt[: self.n_clusters], self.idx[i], axis=1).sum(axis=1) / self.T

    def add_cluster(self):
        if self.n_clusters == self.cnt.shape[0]:
            self.cnt = np.concatenate([self.cnt, np.zeros_like(self.cnt)])
        self.n_clusters += 1

    def add(self, i, c):
        if c == self.n_clusters:
            self.add_cluster()
        self.cnt[c, self.idx[i]] += self.w[i]

    def remove(self, i, c):
        self.cnt[c, self.idx[i]] -= self.w[i]


def _choose(aff, i, wi, sizes, current=-1):
    """Cheapest cluster for item i; empty slots and a fresh cluster cost 0."""
    a = aff.affinity(i)
    sz = sizes[: a.size]
    cost = np.append(np.where(sz > 0, wi * (sz - 2.0 * a), 0.0), 0.0)
    best = int(np.argmin(cost))
    if current >= 0 and cost[current] <= cost[best] + 1e-10:
        return current
    return best


def _greedy_once(aff, w, order):
    n = w.size
    labels = np.full(n, -1)
    sizes = np.zeros(n + 1)
    for i in order:
        c = _choose(aff, i, w[i], sizes)
        aff.add(i, c)
        sizes[c] += w[i]
        labels[i] = c
    for _ in range(_MAX_SWEEPS):
        moved = False
        for i in order:
            old = labels[i]
            aff.remove(i, old)
            sizes[old] -= w[i]
            c = _choose(aff, i, w[i], sizes, old)
            aff.add(i, c)
            sizes[c] += w[i]
            labels[i] = c
            moved = moved or c != old
        if not moved:
            break
    return labels


def _dedupe(z):
    """Collapse items whose whole label history is identical.

    Identical items have similarity 1 and are always co-clustered by a Binder
    optimum, so they can be moved as one weighted item.
    """
    zc = np.ascontiguousarray(z.T)
    view = zc.view(np.dtype((np.void, zc.dtype.itemsize * zc.shape[1]))).ravel()
    _, first, inv, counts = np.unique(view, return_index=True, return_inverse=True, return_counts=True)
    return z[:, first], inv.ravel(), counts.astype(float)


def minimize_binder(label_draws=None, psm=None, n_restarts: int = N_RESTARTS, seed: int = PARTITION_SEED):
    """Greedy expected-Binder-loss minimisation.

    Pass either ``label_draws`` (T x n, memory linear in n) or a ``psm``
    (n x n).  Each restart allocates items sequentially in a random order to
    the cheapest existing or new cluster, then sweeps until no single move
    lowers the loss.  Returns ``(labels, loss)`` with labels compacted to
    1..k by first appearance.
    """
    if (label_draws is None) == (psm is None):
        raise ValueError("give exactly one of label_draws or psm")
    rng = RngStream(seed)
    if psm is not None:
        psm = np.asarray(psm, dtype=float)
        n = psm.shape[0]
        w = np.ones(n)
        aff = _PsmAffinity(psm, w)
        inv = np.arange(n)
        loss_fn = lambda lab: binder_loss(lab, psm)  # noqa: E731
    else:
        z = np.asarray(label_draws)
        if z.ndim != 2 or z.shape[0] < 1:
            raise ValueError("label draws must be a non-empty T x n array")
        z = _compact_draws(z)
        zu, inv, w = _dedupe(z)
        n = w.size
        aff = _DrawsAffinity(zu, w)
        loss_fn = lambda lab: binder_loss_draws(lab[inv], z)  # noqa: E731

    best = None
    for _ in range(n_restarts):
        aff.reset()
        lab = _greedy_once(aff, w, rng.permutation(n))
        loss = loss_fn(lab)
        if best is None or loss < best[1] - 1e-9:
            best = (lab, loss)
    return compact_labels(best[0][inv]), best[1]


# -- partition estimates ---------------------------------------------------------------

@dataclass
class PartitionEstimate:
    dis_level: np.ndarray      # DC label per group, 1-based
    obs_labels: np.ndarray     # OC label per observation, 1-based
    group_of: np.ndarray       # group per observation, 1-based
    values: np.ndarray
    method: str
    loss_value: dict = field(default_factory=dict)

    @property
    def n_oc(self) -> int:
        return int(np.unique(self.obs_labels).size)

    @property
    def n_dc(self) -> int:
        return int(np.unique(self.dis_level).size)

    @property
    def obs_level(self) -> dict:
        """Per-observation table with columns value, group, DC, OC."""
        return {
            "value": self.values,
            "group": self.group_of,
            "DC": self.dis_level[self.group_of - 1],
            "OC": self.obs_labels,
        }


def _retained(chains, add_burnin):
    add_burnin = int(add_burnin)
    if add_burnin < 0 or add_burnin >= chains.n_iter:
        raise ValueError(f"add_burnin must be in [0, {chains.n_iter - 1}]")
    return slice(add_burnin, None)


def _extend_partition(z, sub_idx, sub_labels):
    """Greedily place the items outside ``sub_idx`` given the subset's clusters."""
    n = z.shape[1]
    aff = _DrawsAffinity(z, np.ones(n))
    labels = np.full(n, -1)
    sizes = np.zeros(n + 1)
    for i, c in zip(sub_idx, sub_labels - 1):
        while aff.n_clusters <= c:
            aff.add_cluster()
        aff.add(i, c)
        sizes[c] += 1
        labels[i] = c
    for i in np.setdiff1d(np.arange(n), sub_idx):
        c = _choose(aff, i, 1.0, sizes)
        aff.add(i, c)
        sizes[c] += 1
        labels[i] = c
    return compact_labels(labels)


def estimate_partition_mcmc(chains, level: str = "obs", add_burnin: int = 0, subsample: int | None = None):
    """Binder point estimate of the observational (pooled) or distributional partition.

    With ``subsample`` set and more items than that, the search runs on a fixed
    random subset and the other items are then placed one at a time in their
    cheapest cluster.
    """
    sl = _retained(chains, add_burnin)
    if level in ("obs", "observational"):
        draws = chains.M[sl]
    elif level in ("dist", "distributional"):
        draws = chains.S[sl]
    else:
        raise ValueError("level must be 'obs' or 'dist'")
    n = draws.shape[1]
    if subsample is None or n <= subsample:
        return minimize_binder(label_draws=draws)
    sub = np.sort(RngStream(PARTITION_SEED, (1,)).permutation(n)[:subsample])
    sub_labels, _ = minimize_binder(label_draws=draws[:, sub])
    z = _compact_draws(draws)
    labels = _extend_partition(z, sub, sub_labels)
    return labels, binder_loss_draws(labels, z)


def estimate_partition_vi(fit) -> tuple:
    """Modal assignments from the best run, labels compacted by first appearance.

    ``argmax`` returns the first maximiser, so ties go to the lowest index.
    """
    state = fit.best if hasattr(fit, "best") else fit
    return compact_labels(np.argmax(state.R, axis=1)), compact_labels(np.argmax(state.X, axis=1))


def estimate_partition(fit, data: GroupedData, add_burnin: int = 0,
                       subsample: int | None = None) -> PartitionEstimate:
    """Point partition from either McmcChains or a ViFit."""
    if hasattr(fit, "S") and hasattr(fit, "M"):
        S, s_loss = estimate_partition_mcmc(fit, "dist", add_burnin)
        M, m_loss = estimate_partition_mcmc(fit, "obs", add_burnin, subsample)
        return PartitionEstimate(S, M, data.group_of, data.values, "MCMC", {"dist": s_loss, "obs": m_loss})
    S, M = estimate_partition_vi(fit)
    return PartitionEstimate(S, M, data.group_of, data.values, "VI")


# -- random measures -------------------------------------------------------------------

@dataclass
class RandomMeasureEstimate:
    dc: np.ndarray          # 1-based DC label (compacted, as in the VI partition)
    component: np.ndarray   # 1-based index of the DC's variational component
    oc: np.ndarray          # 1-based atom index
    post_mean: np.ndarray
    post_var: np.ndarray    # nan when lambda <= 1
    post_weight: np.ndarray
    thr: float

    def shown(self) -> np.ndarray:
        return self.post_weight > self.thr

    def rows(self, all_rows: bool = False) -> list:
        keep = np.ones(self.dc.size, bool) if all_rows else self.shown()
        return [
            (int(self.dc[i]), int(self.oc[i]), float(self.post_mean[i]), float(self.post_var[i]), float(self.post_weight[i]))
            for i in np.flatnonzero(keep)
        ]

    def format(self) -> str:
        lines = []
        for d in np.unique(self.dc):
            lines.append(f"DC {d}:")
            lines.append(f"{'':>4}{'post_mean':>12}{'post_var':>12}{'post_weight':>13}")
            for i in np.flatnonzero((self.dc == d) & self.shown()):
                var = "NA" if np.isnan(self.post_var[i]) else f"{self.post_var[i]:.3f}"
                lines.append(f"{self.oc[i]:>4}{self.post_mean[i]:>12.3f}{var:>12}{self.post_weight[i]:>13.3f}")
        return "\n".join(lines)


def estimate_G(fit, thr: float = 0.01) -> RandomMeasureEstimate:
    """Posterior summary of each occupied DC's discrete measure.

    Weights are the normalised variational Dirichlet parameters (or the stick
    means for GEM observational weights); all maxL rows are kept and ``thr``
    only controls display.
    """
    if not 0.0 <= thr < 1.0:
        raise ValueError("thr must lie in [0, 1)")
    state = fit.best if hasattr(fit, "best") else fit
    raw = np.argmax(state.R, axis=1)
    occupied = [int(k) for k in dict.fromkeys(raw.tolist())]   # first-appearance order
    op = state.obs_params
    if op.ndim == 3:
        ev = op[..., 0] / op.sum(axis=-1)
        W = np.ones((op.shape[0], op.shape[1] + 1))
        W[:, :-1] = ev
        W[:, 1:] *= np.cumprod(1.0 - ev, axis=1)
    else:
        W = op / op.sum(axis=1, keepdims=True)
    L = state.m.size
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(state.lam > 1.0, state.gam / (state.lam - 1.0), np.nan)
    dc, comp, oc, mean, pv, pw = [], [], [], [], [], []
    for d, k in enumerate(occupied, start=1):
        dc += [d] * L
        comp += [k + 1] * L
        oc += list(range(1, L + 1))
        mean.append(state.m)
        pv.append(var)
        pw.append(W[k])
    return RandomMeasureEstimate(
        np.asarray(dc), np.asarray(comp), np.asarray(oc),
        np.concatenate(mean), np.concatenate(pv), np.concatenate(pw), float(thr),
    )


# -- cluster counts and allocation tables -------------------------------------------

@dataclass
class ClusterCounts:
    oc: np.ndarray
    dc: np.ndarray

    def stats(self) -> dict:
        def s(x):
            x = np.asarray(x, dtype=float)
            var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
            return {"mean": float(x.mean()), "median": float(np.median(x)), "var": var}
        return {"oc": s(self.oc), "dc": s(self.dc)}


def _count_distinct(z):
    z = np.sort(np.asarray(z), axis=1)
    return 1 + (np.diff(z, axis=1) != 0).sum(axis=1)


def number_clusters(chains) -> ClusterCounts:
    """Per-iteration number of occupied observational and distributional clusters."""
    return ClusterCounts(_count_distinct(chains.M), _count_distinct(chains.S))


def allocation_probabilities(fit, data: GroupedData) -> dict:
    """Variational allocation probabilities keyed by group and observation."""
    state = fit.best if hasattr(fit, "best") else fit
    return {
        "dist": {"group": np.arange(1, data.J + 1), "prob": state.R},
        "obs": {"group": data.group_of, "obs": np.arange(1, data.N + 1), "prob": state.X},
    }


# -- printed summaries -----------------------------------------------------------------

def _header(method, cfg, data):
    nig = cfg.nig
    lines = [
        f"{method} - {cfg.family.value} model",
        f"Model estimated on {data.N} total observations and {data.J} groups",
        f"Size of the largest group: {int(np.max(data.group_sizes))}",
        "",
        f"Threshold on the number of observational clusters: {cfg.maxL}",
        f"Threshold on the number of distributional clusters: {cfg.maxK}",
        "",
        "Hyperparameters:",
        f"m0 = {nig.m0:g}, tau0 = {nig.tau0:g}, lambda0 = {nig.lambda0:g}, gamma0 = {nig.gamma0:g}",
    ]
    return lines


def summarize_mcmc(chains, cfg, data: GroupedData) -> str:
    cc = number_clusters(chains).stats()
    lines = _header("MCMC", cfg, data)
    lines += [
        "",
        f"Number of iterations: {chains.nrep}  (retained {chains.n_iter} after burn-in {chains.burn})",
        f"Elapsed time: {chains.elapsed:.3f} secs",
        "",
        "Number of observational and distributional clusters:",
        f"{'':>8}{'OC':>12}{'DC':>12}",
    ]
    for key, name in (("mean", "Mean"), ("median", "Median"), ("var", "Variance")):
        lines.append(f"{name:>8}{cc['oc'][key]:>12.6f}{cc['dc'][key]:>12.6f}")
    if chains.saturated_iters:
        lines.append(f"Warning: occupied clusters reached a truncation bound in {chains.saturated_iters} iterations")
    return "\n".join(lines)


def summarize_vi(fit, cfg, data: GroupedData) -> str:
    S, M = estimate_partition_vi(fit)
    b = fit.best
    lines = _header("Variational inference", cfg, data)
    status = "Convergence reached" if b.converged else "Iteration cap reached"
    lines += [
        "",
        f"{status} in {len(b.elbo_trace)} iterations",
        f"Elapsed time: {fit.elapsed:.3f} secs",
        f"ELBO value: {b.elbo:.3f}",
        f"Best run: {fit.best_run_index + 1} of {fit.n_runs} (seed {fit.best_seed}"
        + (f", {fit.best_nclus_start} k-means centres)" if fit.best_nclus_start else ")"),
        "",
        "Number of clusters:",
        f"{'':>9}{'OC':>4}{'DC':>4}",
        f"{'Estimate':>9}{np.unique(M).size:>4}{np.unique(S).size:>4}",
    ]
    if fit.failed_runs:
        lines.append(f"Failed runs: {len(fit.failed_runs)}")
    return "\n".join(lines)


def summarize_fit(fit, cfg, data: GroupedData) -> str:
    if hasattr(fit, "S") and hasattr(fit, "M"):
        return summarize_mcmc(fit, cfg, data)
    return summarize_vi(fit, cfg, data)


def adjusted_rand(a, b) -> float:
    """Adjusted Rand index between two labelings."""
    a = np.unique(np.asarray(a), return_inverse=True)[1].ravel()
    b = np.unique(np.asarray(b), return_inverse=True)[1].ravel()
    n = a.size
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    comb = lambda x: (x * (x - 1) / 2).sum()  # noqa: E731
    s_ij = comb(table)
    s_a = comb(table.sum(axis=1))
    s_b = comb(table.sum(axis=0))
    expected = s_a * s_b / (n * (n - 1) / 2) if n > 1 else 0.0
    max_idx = 0.5 * (s_a + s_b)
    if math.isclose(max_idx, expected):
        return 1.0
    return float((s_ij - expected) / (max_idx - expected))
