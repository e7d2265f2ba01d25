"""Self-describing fit archives.

Layout::

    NESTMIX-FIT\\n
    <format version>\\n
    <header byte length>\\n
    <JSON header>
    <array section: raw little-endian buffers, offsets given in the header>

The header records model configuration, inference parameters, data digest,
provenance and the array directory.  ``payload_digest`` hashes everything
except the provenance block (timestamps, elapsed times), so re-running the
same command yields the same digest and the same result files.
"""
from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NESTMIX-FIT\n"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    """Unreadable, corrupt or incompatible archive."""


@dataclass
class FitArchive:
    kind: str                      # "mcmc" or "vi"
    config: dict
    params: dict
    data_digest: str
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)         # deterministic result metadata
    provenance: dict = field(default_factory=dict)   # excluded from the digest

    def payload_digest(self) -> str:
        h = hashlib.sha256()
        h.update(_canonical({"kind": self.kind, "config": self.config, "params": self.params,
                             "data_digest": self.data_digest, "meta": self.meta}))
        for name in sorted(self.arrays):
            a = _le(self.arrays[name])
            h.update(name.encode() + str(a.dtype.str).encode() + str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def data_digest(values, group_of) -> str:
    h = hashlib.sha256()
    h.update(_le(np.asarray(values, dtype=np.float64)).tobytes())
    h.update(_le(np.asarray(group_of, dtype=np.int64)).tobytes())
    return h.hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and np.little_endian is False):
        a = a.astype(a.dtype.newbyteorder("<"))
    return a


def default_provenance(elapsed: float | None = None) -> dict:
    prov = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "numpy": np.__version__,
        "python": platform.python_version(),
    }
    if elapsed is not None:
        prov["elapsed"] = float(elapsed)
    return prov


def write_archive(path, arc: FitArchive) -> str:
    """Write ``arc`` to ``path``; returns the payload digest."""
    directory = {}
    blobs = []
    offset = 0
    for name in sorted(arc.arrays):
        a = _le(np.asarray(arc.arrays[name]))
        if a.dtype.kind not in "biuf":
            raise ArchiveError(f"array {name!r} has unsupported dtype {a.dtype}")
        b = a.tobytes()
        directory[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(b)}
        blobs.append(b)
        offset += len(b)
    digest = arc.payload_digest()
    header = {
        "kind": arc.kind, "config": arc.config, "params": arc.params,
        "data_digest": arc.data_digest, "meta": arc.meta, "provenance": arc.provenance,
        "arrays": directory, "payload_digest": digest,
    }
    hbytes = _canonical(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{FORMAT_VERSION}\n".encode())
        fh.write(f"{len(hbytes)}\n".encode())
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    return digest


def read_archive(path) -> FitArchive:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise ArchiveError("not a fit archive (bad magic)")
    pos = len(MAGIC)
    try:
        nl = raw.index(b"\n", pos)
        version = int(raw[pos:nl])
        pos = nl + 1
        nl = raw.index(b"\n", pos)
        hlen = int(raw[pos:nl])
        pos = nl + 1
    except ValueError as exc:
        raise ArchiveError("truncated or malformed archive preamble") from exc
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(raw[pos:pos + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArchiveError("corrupt archive header") from exc
    body = memoryview(raw)[pos + hlen:]
    arrays = {}
    for name, d in header["arrays"].items():
        end = d["offset"] + d["nbytes"]
        if end > len(body):
            raise ArchiveError(f"array {name!r} is truncated")
        a = np.frombuffer(body[d["offset"]:end], dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
        arrays[name] = a
    arc = FitArchive(header["kind"], header["config"], header["params"], header["data_digest"],
                     arrays, header.get("meta", {}), header.get("provenance", {}))
    if arc.payload_digest() != header.get("payload_digest"):
        raise ArchiveError("payload digest mismatch: archive is corrupt")
    return arc


# -- fit <-> archive ---------------------------------------------------------------

def _data_arrays(data) -> dict:
    return {"data_values": np.asarray(data.values, dtype=np.float64),
            "data_group": np.asarray(data.group_of, dtype=np.int64)}


def archive_data(arc: FitArchive):
    """The dataset a fit was computed on."""
    from .model import GroupedData
    g = arc.arrays["data_group"]
    labels = tuple(arc.meta.get("group_labels") or range(1, int(g.max()) + 1))
    return GroupedData(arc.arrays["data_values"], g, np.bincount(g)[1:], labels)


def mcmc_to_archive(chains, cfg, params, data) -> FitArchive:
    arrays = {
        **_data_arrays(data),
        "S": chains.S, "M": chains.M, "pi": chains.pi, "mu": chains.mu, "sigma2": chains.sigma2,
        "alpha": chains.alpha, "beta": chains.beta, "oc_count": chains.oc_count, "dc_count": chains.dc_count,
    }
    if chains.omega is not None:
        arrays["omega"] = chains.omega
    meta = {"nrep": chains.nrep, "burn": chains.burn, "saturated_iters": chains.saturated_iters,
            "slice_cap_hits": chains.slice_cap_hits, "warnings": list(chains.warnings),
            "group_labels": [str(x) for x in data.labels]}
    return FitArchive("mcmc", cfg.to_dict(), params.to_dict(), data_digest(data.values, data.group_of),
                      arrays, meta, default_provenance(chains.elapsed))


def archive_to_mcmc(arc: FitArchive):
    from .mcmc import McmcChains
    a = arc.arrays
    return McmcChains(
        S=a["S"], M=a["M"], pi=a["pi"], omega=a.get("omega"), mu=a["mu"], sigma2=a["sigma2"],
        alpha=a["alpha"], beta=a["beta"], oc_count=a["oc_count"], dc_count=a["dc_count"],
        elapsed=float(arc.provenance.get("elapsed", 0.0)), nrep=int(arc.meta["nrep"]), burn=int(arc.meta["burn"]),
        saturated_iters=int(arc.meta.get("saturated_iters", 0)), slice_cap_hits=int(arc.meta.get("slice_cap_hits", 0)),
        warnings=list(arc.meta.get("warnings", [])),
    )


def vi_to_archive(fit, cfg, params, data) -> FitArchive:
    b = fit.best
    arrays = {
        **_data_arrays(data),
        "R": b.R, "X": b.X, "obs_params": b.obs_params, "dist_params": b.dist_params,
        "m": b.m, "tau": b.tau, "lam": b.lam, "gam": b.gam,
        "elbo_trace": np.asarray(b.elbo_trace, dtype=float),
    }
    for r, tr in enumerate(fit.all_elbo_traces):
        arrays[f"trace_{r:05d}"] = np.asarray(tr, dtype=float)
    meta = {
        "alpha_gamma": list(b.alpha_gamma) if b.alpha_gamma else None,
        "beta_gamma": list(b.beta_gamma) if b.beta_gamma else None,
        "converged": bool(b.converged), "best_run_index": fit.best_run_index, "best_seed": fit.best_seed,
        "best_nclus_start": fit.best_nclus_start,
        "run_converged": [bool(c) for c in fit.converged],
        "failed_runs": [[int(i), str(e)] for i, e in fit.failed_runs],
        "group_labels": [str(x) for x in data.labels],
    }
    return FitArchive("vi", cfg.to_dict(), params.to_dict(), data_digest(data.values, data.group_of),
                      arrays, meta, default_provenance(fit.elapsed))


def archive_to_vi(arc: FitArchive):
    from .vi import ViFit, ViState
    a, m = arc.arrays, arc.meta
    state = ViState(
        R=a["R"], X=a["X"], obs_params=a["obs_params"], dist_params=a["dist_params"],
        m=a["m"], tau=a["tau"], lam=a["lam"], gam=a["gam"],
        alpha_gamma=tuple(m["alpha_gamma"]) if m.get("alpha_gamma") else None,
        beta_gamma=tuple(m["beta_gamma"]) if m.get("beta_gamma") else None,
        elbo_trace=list(a["elbo_trace"]), converged=bool(m["converged"]),
    )
    traces = [a[k] for k in sorted(k for k in a if k.startswith("trace_"))]
    return ViFit(best=state, all_elbo_traces=traces, best_run_index=int(m["best_run_index"]),
                 best_seed=int(m["best_seed"]), elapsed=float(arc.provenance.get("elapsed", 0.0)),
                 converged=list(m["run_converged"]), failed_runs=[tuple(x) for x in m["failed_runs"]],
                 best_nclus_start=m.get("best_nclus_start"))


def archive_config(arc: FitArchive):
    from .model import ModelConfig
    return ModelConfig.from_dict(arc.config)
