import numpy as np
import pytest

from nestmix.synthetic import Archetype, ScenarioSpec, benchmark_scenario, generate


def test_benchmark_scenario_shape():
    spec = benchmark_scenario(0)
    assert spec.J == 15 and len(spec.archetypes) == 3
    assert all(a.weights == (0.5, 0.5) for a in spec.archetypes)
    data, truth = generate(spec)
    assert data.N == 15000 and data.J == 15
    assert set(np.unique(truth.obs_level)) == {1, 2, 3}
    assert truth.atoms == [(-5.0, 1.0), (0.0, 1.0), (5.0, 1.0)]
    assert truth.dis_level.shape == (15,)


def test_generate_is_deterministic():
    a, ta = generate(benchmark_scenario(4))
    b, tb = generate(benchmark_scenario(4))
    assert np.array_equal(a.values, b.values) and np.array_equal(ta.obs_level, tb.obs_level)
    c, _ = generate(benchmark_scenario(5))
    assert not np.array_equal(a.values, c.values)


def test_single_atom_scenario():
    spec = ScenarioSpec(J=2, n_per_group=(30, 40), dc_probs=(1.0,), archetypes=(Archetype((2.0,), (0.25,), (1.0,)),))
    data, truth = generate(spec)
    assert data.N == 70
    assert set(truth.obs_level) == {1} and set(truth.dis_level) == {1}


def test_group_means_near_archetype_means():
    data, truth = generate(benchmark_scenario(1))
    arch_mean = {1: -2.5, 2: 0.0, 3: 2.5}
    arch_var = {1: 7.25, 2: 26.0, 3: 7.25}   # 1 + squared half-distance between the atoms
    for j in range(1, data.J + 1):
        v = data.group_values(j)
        k = truth.dis_level[j - 1]
        assert abs(v.mean() - arch_mean[k]) < 4 * np.sqrt(arch_var[k] / v.size)


def test_truth_agrees_with_nearest_atom():
    data, truth = generate(benchmark_scenario(2))
    atoms = np.array([-5.0, 0.0, 5.0])
    nearest = np.abs(data.values[:, None] - atoms[None, :]).argmin(1) + 1
    assert np.mean(nearest == truth.obs_level) >= 0.95


@pytest.mark.parametrize("kwargs", [
    dict(dc_probs=(0.5, 0.6)),
    dict(dc_probs=(1.0,)),
])
def test_invalid_spec(kwargs):
    arch = (Archetype((0.0,), (1.0,), (1.0,)), Archetype((1.0,), (1.0,), (1.0,)))
    with pytest.raises(ValueError):
        ScenarioSpec(J=2, n_per_group=5, archetypes=arch, **kwargs)
    with pytest.raises(ValueError):
        Archetype((0.0,), (-1.0,), (1.0,))
