"""Data containers, model families and the Gaussian / normal-inverse-gamma algebra
shared by the samplers and the variational optimizer.

Model (truncated at ``maxK`` distributional and ``maxL`` observational components)::

    S_j            ~ Cat(pi)                      j = 1..J
    M_ij | S_j     ~ Cat(omega[S_j])              i = 1..N_j
    y_ij | M_ij    ~ N(mu[M_ij], sigma2[M_ij])
    (mu_l, sigma2_l) ~ NIG(m0, tau0, lambda0, gamma0)

with ``pi`` and each row of ``omega`` given either a truncated stick-breaking
(GEM) prior or a symmetric Dirichlet prior, depending on the family.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
GAMMA_FLOOR = 1e-12


class DataValidationError(ValueError):
    """Raised when an input dataset cannot be turned into grouped data."""


class LengthMismatchError(DataValidationError):
    pass


class NonFiniteValueError(DataValidationError):
    pass


class EmptyDataError(DataValidationError):
    pass


class ConfigError(ValueError):
    """Invalid model configuration (bad hyperparameter or family/prior mismatch)."""


class Family(str, enum.Enum):
    CAM = "CAM"
    FISAN = "FISAN"
    FSAN = "FSAN"

    @classmethod
    def parse(cls, value: Union[str, "Family"]) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().upper()
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown model family {value!r}; expected cam, fisan or fsan") from None


@dataclass(frozen=True)
class GroupedData:
    """Observations sorted by group.

    ``group_of`` holds 1-based group indices; ``labels[j - 1]`` is the raw label
    of group ``j`` as it appeared in the input.
    """

    values: np.ndarray
    group_of: np.ndarray
    group_sizes: np.ndarray
    labels: tuple = ()

    @property
    def J(self) -> int:
        return int(self.group_sizes.shape[0])

    @property
    def N(self) -> int:
        return int(self.values.shape[0])

    @property
    def group_index(self) -> np.ndarray:
        """0-based group index per observation."""
        return self.group_of - 1

    @property
    def offsets(self) -> np.ndarray:
        """Start index of each group in ``values`` (length J + 1)."""
        return np.concatenate([[0], np.cumsum(self.group_sizes)])

    def group_values(self, j: int) -> np.ndarray:
        off = self.offsets
        return self.values[off[j - 1]:off[j]]


@dataclass(frozen=True)
class NigParams:
    """Normal-inverse-gamma: mu | s2 ~ N(m0, s2 / tau0), 1 / s2 ~ Gamma(lambda0, rate=gamma0)."""

    m0: float = 0.0
    tau0: float = 0.01
    lambda0: float = 3.0
    gamma0: float = 2.0

    def __post_init__(self):
        for name in ("tau0", "lambda0", "gamma0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {v}")
        if not np.isfinite(self.m0):
            raise ConfigError("m0 must be finite")

    def as_tuple(self) -> tuple:
        return (self.m0, self.tau0, self.lambda0, self.gamma0)

    @property
    def mean_sigma2(self) -> float:
        """E[sigma2]; NaN when lambda0 <= 1."""
        if self.lambda0 <= 1:
            return float("nan")
        return self.gamma0 / (self.lambda0 - 1.0)


@dataclass(frozen=True)
class GemPrior:
    """Stick-breaking weights with concentration either fixed or Gamma(shape, rate)."""

    fixed: float | None = None
    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.fixed is not None and not (self.fixed > 0 and np.isfinite(self.fixed)):
            raise ConfigError(f"fixed concentration must be positive, got {self.fixed}")
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigError("concentration hyperprior shape and rate must be positive")

    @property
    def is_random(self) -> bool:
        return self.fixed is None

    @property
    def initial_value(self) -> float:
        return self.fixed if self.fixed is not None else self.shape / self.rate


@dataclass(frozen=True)
class DirichletSym:
    conc: float

    def __post_init__(self):
        if not (self.conc > 0 and np.isfinite(self.conc)):
            raise ConfigError(f"Dirichlet concentration must be positive, got {self.conc}")


WeightPrior = Union[GemPrior, DirichletSym]

_FAMILY_PRIORS = {
    Family.CAM: (GemPrior, GemPrior),
    Family.FISAN: (GemPrior, DirichletSym),
    Family.FSAN: (DirichletSym, DirichletSym),
}


@dataclass(frozen=True)
class ModelConfig:
    family: Family
    maxK: int
    maxL: int
    nig: NigParams = field(default_factory=NigParams)
    dist_weights: WeightPrior = field(default_factory=GemPrior)
    obs_weights: WeightPrior = field(default_factory=GemPrior)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.maxK) < 1 or int(self.maxL) < 1:
            raise ConfigError("maxK and maxL must be >= 1")
        dist_t, obs_t = _FAMILY_PRIORS[self.family]
        if not isinstance(self.dist_weights, dist_t) or not isinstance(self.obs_weights, obs_t):
            raise ConfigError(
                f"{self.family.value} requires ({dist_t.__name__}, {obs_t.__name__}) weight priors, "
                f"got ({type(self.dist_weights).__name__}, {type(self.obs_weights).__name__})"
            )

    @property
    def dist_gem(self) -> bool:
        return isinstance(self.dist_weights, GemPrior)

    @property
    def obs_gem(self) -> bool:
        return isinstance(self.obs_weights, GemPrior)

    def with_bounds(self, maxK: int, maxL: int) -> "ModelConfig":
        return replace(self, maxK=int(maxK), maxL=int(maxL))

    def to_dict(self) -> dict:
        def prior(p):
            if isinstance(p, GemPrior):
                return {"type": "gem", "fixed": p.fixed, "shape": p.shape, "rate": p.rate}
            return {"type": "dirichlet", "conc": p.conc}

        return {
            "family": self.family.value,
            "maxK": int(self.maxK),
            "maxL": int(self.maxL),
            "nig": dict(zip(("m0", "tau0", "lambda0", "gamma0"), self.nig.as_tuple())),
            "dist_weights": prior(self.dist_weights),
            "obs_weights": prior(self.obs_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        def prior(p):
            if p["type"] == "gem":
                return GemPrior(fixed=p["fixed"], shape=p["shape"], rate=p["rate"])
            return DirichletSym(p["conc"])

        return cls(
            family=Family.parse(d["family"]),
            maxK=d["maxK"],
            maxL=d["maxL"],
            nig=NigParams(**d["nig"]),
            dist_weights=prior(d["dist_weights"]),
            obs_weights=prior(d["obs_weights"]),
        )


@dataclass
class AtomSet:
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if self.mu.shape != self.sigma2.shape:
            raise ValueError("mu and sigma2 must have the same shape")
        if np.any(self.sigma2 <= 0):
            raise ValueError("sigma2 must be positive")


def validate_dataset(values: Sequence[float], raw_groups: Sequence) -> GroupedData:
    """Build :class:`GroupedData` from a value vector and arbitrary group labels.

    Labels are mapped to ``1..J`` by order of first appearance and the
    observations are stably sorted by the new group index.
    """
    raw_groups = list(raw_groups)
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0 and len(raw_groups) == 0:
        raise EmptyDataError("no observations supplied")
    if vals.size != len(raw_groups):
        raise LengthMismatchError(f"values has {vals.size} entries but groups has {len(raw_groups)}")
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NonFiniteValueError(f"non-finite value at position {bad}")

    mapping: dict = {}
    codes = np.empty(vals.size, dtype=np.int64)
    for i, g in enumerate(raw_groups):
        codes[i] = mapping.setdefault(g, len(mapping) + 1)
    order = np.argsort(codes, kind="stable")
    group_of = codes[order]
    sizes = np.bincount(group_of, minlength=len(mapping) + 1)[1:]
    return GroupedData(
        values=vals[order],
        group_of=group_of,
        group_sizes=sizes.astype(np.int64),
        labels=tuple(mapping.keys()),
    )


def default_config(family: Union[str, Family], maxK: int, maxL: int) -> ModelConfig:
    """Default priors: NIG(0, 0.01, 3, 2); Gamma(1, 1) concentrations;
    Dirichlet parameters 1/maxK and 1/maxL."""
    family = Family.parse(family)
    if int(maxK) < 1 or int(maxL) < 1:
        raise ConfigError("maxK and maxL must be >= 1")
    nig = NigParams(0.0, 0.01, 3.0, 2.0)
    if family is Family.CAM:
        dist, obs = GemPrior(shape=1.0, rate=1.0), GemPrior(shape=1.0, rate=1.0)
    elif family is Family.FISAN:
        dist, obs = GemPrior(shape=1.0, rate=1.0), DirichletSym(1.0 / maxL)
    else:
        dist, obs = DirichletSym(1.0 / maxK), DirichletSym(1.0 / maxL)
    return ModelConfig(family, int(maxK), int(maxL), nig, dist, obs)


def log_gauss(y, mu, sigma2):
    """Log density of N(mu, sigma2) at y (broadcasts)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    out = -0.5 * (LOG_2PI + np.log(sigma2)) - (np.asarray(y, dtype=float) - mu) ** 2 / (2.0 * sigma2)
    return float(out) if np.ndim(out) == 0 else out


def nig_update(prior: NigParams, W, S1, S2):
    """Vectorised NIG update from weighted sufficient statistics.

    ``W = sum w``, ``S1 = sum w*y``, ``S2 = sum w*y^2`` (arrays over components).
    Returns ``(m_n, tau_n, lambda_n, gamma_n)`` arrays.
    """
    m0, tau0, lam0, gam0 = prior.as_tuple()
    W = np.asarray(W, dtype=float)
    tau_n = tau0 + W
    m_n = (tau0 * m0 + S1) / tau_n
    lam_n = lam0 + 0.5 * W
    # S2 + tau0 m0^2 - tau_n m_n^2 rewritten as a sum of non-negative parts
    # (within-data scatter plus shrinkage term) to avoid cancellation.
    with np.errstate(invalid="ignore", divide="ignore"):
        ybar = np.where(W > 0, S1 / np.where(W > 0, W, 1.0), 0.0)
    scatter = np.maximum(S2 - W * ybar ** 2, 0.0)
    shrink = tau0 * W / tau_n * (ybar - m0) ** 2
    gam_n = np.maximum(gam0 + 0.5 * (scatter + shrink), GAMMA_FLOOR)
    return m_n, tau_n, lam_n, gam_n


def nig_posterior(prior: NigParams, w, y) -> NigParams:
    """Weighted conjugate update of a NIG prior.

    ``w`` may be 0/1 indicators (Gibbs) or fractional responsibilities (CAVI).
    """
    w = np.asarray(w, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if w.shape != y.shape:
        raise LengthMismatchError("w and y must have equal length")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    W = w.sum()
    if W == 0:
        return prior
    S1 = np.dot(w, y)
    S2 = np.dot(w, y * y)
    m, t, lam, gam = nig_update(prior, W, S1, S2)
    return NigParams(float(m), float(t), float(lam), float(gam))
