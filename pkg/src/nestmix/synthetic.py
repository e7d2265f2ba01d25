"""Nested Gaussian-mixture data with known distributional and observational labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GroupedData, validate_dataset
from .rng import RngStream


@dataclass(frozen=True)
class Archetype:
    means: tuple
    variances: tuple
    weights: tuple

    def __post_init__(self):
        if not (len(self.means) == len(self.variances) == len(self.weights) >= 1):
            raise ValueError("archetype means, variances and weights must have equal non-zero length")
        if any(v <= 0 for v in self.variances):
            raise ValueError("archetype variances must be positive")
        _check_simplex(self.weights, "archetype weights")


@dataclass(frozen=True)
class ScenarioSpec:
    J: int
    n_per_group: tuple
    dc_probs: tuple
    archetypes: tuple
    seed: int = 0

    def __post_init__(self):
        n = self.n_per_group
        if np.ndim(n) == 0:
            n = (int(n),) * self.J
        object.__setattr__(self, "n_per_group", tuple(int(v) for v in n))
        if self.J < 1 or len(self.n_per_group) != self.J or min(self.n_per_group) < 1:
            raise ValueError("need J >= 1 groups, each with at least one observation")
        if len(self.dc_probs) != len(self.archetypes):
            raise ValueError("dc_probs must have one entry per archetype")
        _check_simplex(self.dc_probs, "dc_probs")

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ScenarioSpec":
        arch = tuple(
            Archetype(tuple(a["means"]), tuple(a["variances"]), tuple(a["weights"])) for a in d["archetypes"]
        )
        return cls(
            J=int(d["J"]),
            n_per_group=d["n_per_group"],
            dc_probs=tuple(d["dc_probs"]),
            archetypes=arch,
            seed=int(d.get("seed", 0) if seed is None else seed),
        )


@dataclass
class Truth:
    dis_level: np.ndarray  # 1-based archetype per group
    obs_level: np.ndarray  # 1-based shared-atom label per observation
    atoms: list = field(default_factory=list)  # (mean, variance) per atom label


def _check_simplex(w, what):
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{what} must be non-negative and sum to 1")


def benchmark_scenario(seed: int = 0) -> ScenarioSpec:
    """Fifteen groups of 1000 draws from three bimodal mixtures sharing the
    atoms N(-5, 1), N(0, 1) and N(5, 1)."""
    half = (0.5, 0.5)
    return ScenarioSpec(
        J=15,
        n_per_group=1000,
        dc_probs=(1 / 3, 1 / 3, 1 / 3),
        archetypes=(
            Archetype((-5.0, 0.0), (1.0, 1.0), half),
            Archetype((-5.0, 5.0), (1.0, 1.0), half),
            Archetype((0.0, 5.0), (1.0, 1.0), half),
        ),
        seed=seed,
    )


def generate(spec: ScenarioSpec) -> tuple[GroupedData, Truth]:
    rng = RngStream(spec.seed)
    atom_ids: dict = {}
    arch_atoms = []
    for a in spec.archetypes:
        ids = [atom_ids.setdefault((float(m), float(v)), len(atom_ids) + 1) for m, v in zip(a.means, a.variances)]
        arch_atoms.append(np.asarray(ids))

    dc_logp = np.log(np.asarray(spec.dc_probs, dtype=float))
    dcs = np.array([rng.categorical_log(dc_logp) for _ in range(spec.J)])
    values, groups, atoms = [], [], []
    for j, (k, n) in enumerate(zip(dcs, spec.n_per_group)):
        arch = spec.archetypes[k]
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(arch.weights, dtype=float))
        comp = rng.categorical_log(np.broadcast_to(lw, (n, lw.size)))
        mean = np.asarray(arch.means)[comp]
        sd = np.sqrt(np.asarray(arch.variances)[comp])
        values.append(rng.normal(mean, sd))
        groups.append(np.full(n, j + 1))
        atoms.append(arch_atoms[k][comp])
    data = validate_dataset(np.concatenate(values), np.concatenate(groups))
    truth = Truth(
        dis_level=dcs + 1,
        obs_level=np.concatenate(atoms),
        atoms=sorted(atom_ids, key=atom_ids.get),
    )
    return data, truth
