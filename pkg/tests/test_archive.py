import numpy as np
import pytest

from nestmix import archive as A
from nestmix import vi
from nestmix.mcmc import McmcParams, run_mcmc
from nestmix.model import default_config


@pytest.fixture
def mcmc_arc(tiny_data):
    cfg = default_config("CAM", 3, 4)
    p = McmcParams(nrep=20, burn=10, seed=1)
    ch = run_mcmc(tiny_data, cfg, p)
    return A.mcmc_to_archive(ch, cfg, p, tiny_data), ch


def test_mcmc_roundtrip(tmp_path, mcmc_arc, tiny_data):
    arc, ch = mcmc_arc
    path = tmp_path / "f.nmf"
    digest = A.write_archive(path, arc)
    back = A.read_archive(path)
    assert back.payload_digest() == digest
    ch2 = A.archive_to_mcmc(back)
    for name in ("S", "M", "pi", "omega", "mu", "sigma2", "alpha", "beta"):
        assert np.array_equal(getattr(ch, name), getattr(ch2, name), equal_nan=True)
        assert getattr(ch, name).dtype == getattr(ch2, name).dtype
    d = A.archive_data(back)
    assert np.array_equal(d.values, tiny_data.values) and d.labels == tiny_data.labels
    assert A.archive_config(back) == default_config("CAM", 3, 4)


def test_vi_roundtrip(tmp_path, tiny_data):
    cfg = default_config("FISAN", 2, 3)
    p = vi.ViParams(n_runs=2)
    fit = vi.run_cavi(tiny_data, cfg, p)
    path = tmp_path / "v.nmf"
    A.write_archive(path, A.vi_to_archive(fit, cfg, p, tiny_data))
    fit2 = A.archive_to_vi(A.read_archive(path))
    assert fit2.best.elbo_trace == fit.best.elbo_trace
    assert np.array_equal(fit2.best.R, fit.best.R)
    assert fit2.best.alpha_gamma == pytest.approx(fit.best.alpha_gamma)
    assert fit2.best_seed == fit.best_seed and fit2.n_runs == 2


def test_digest_ignores_provenance(mcmc_arc):
    arc, _ = mcmc_arc
    d = arc.payload_digest()
    arc.provenance["created"] = "another day"
    assert arc.payload_digest() == d
    arc.arrays["mu"] = arc.arrays["mu"] + 1.0
    assert arc.payload_digest() != d


def test_corruption_and_version_rejected(tmp_path, mcmc_arc):
    arc, _ = mcmc_arc
    path = tmp_path / "f.nmf"
    A.write_archive(path, arc)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.nmf"
    flipped = bytearray(raw)
    flipped[-3] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(A.ArchiveError, match="digest"):
        A.read_archive(bad)
    v2 = raw.replace(b"NESTMIX-FIT\n1\n", b"NESTMIX-FIT\n2\n", 1)
    bad.write_bytes(bytes(v2))
    with pytest.raises(A.ArchiveError, match="version 2"):
        A.read_archive(bad)
    bad.write_bytes(b"hello")
    with pytest.raises(A.ArchiveError, match="magic"):
        A.read_archive(bad)
    bad.write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises(A.ArchiveError):
        A.read_archive(bad)
