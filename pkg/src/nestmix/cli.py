"""Command-line front end.

Exit codes: 0 success, 1 data or numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import archive as arc_mod
from . import summaries as sm
from .mcmc import McmcParams, run_mcmc
from .model import (
    ConfigError, DataValidationError, DirichletSym, Family, GemPrior, ModelConfig, NigParams,
    default_config, validate_dataset,
)
from .synthetic import ScenarioSpec, benchmark_scenario, generate
from .vi import ViFailure, ViParams, default_threads, run_cavi


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# flags allowed per model family and per engine
_PRIOR_FLAGS = {
    Family.CAM: {"hyp_alpha1", "hyp_alpha2", "hyp_beta1", "hyp_beta2", "alpha", "beta"},
    Family.FISAN: {"hyp_alpha1", "hyp_alpha2", "alpha", "b_dirichlet"},
    Family.FSAN: {"a_dirichlet", "b_dirichlet"},
}
_ALL_PRIOR_FLAGS = set().union(*_PRIOR_FLAGS.values())
_MCMC_FLAGS = {"nrep", "burn", "dist_update", "no_store_omega", "no_atom_swaps"}
_VI_FLAGS = {"epsilon", "maxSIM", "n_runs", "threads"}

DEFAULT_MAXL = 50
DEFAULT_MAXK = 20


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "NA"
    return repr(x)


def _write_csv(path, header, rows):
    """UTF-8, LF line endings, shortest round-trip float formatting."""
    fh = sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])
    finally:
        if fh is not sys.stdout:
            fh.close()


def read_dataset(path, y_col: str = "y", group_col: str = "group"):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"data file not found: {path}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("data file is empty or has no header row")
        for col in (y_col, group_col):
            if col not in reader.fieldnames:
                raise DataError(f"column {col!r} not found; header has {reader.fieldnames}")
        ys, gs = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                ys.append(float(row[y_col]))
            except (TypeError, ValueError):
                raise DataError(f"line {lineno}: cannot parse {row[y_col]!r} as a number") from None
            gs.append(row[group_col])
    try:
        return validate_dataset(ys, gs)
    except DataValidationError as exc:
        raise DataError(str(exc)) from exc


# -- simulate ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario in ("benchmark", "paper"):
        spec = benchmark_scenario(args.seed)
    else:
        p = Path(args.scenario)
        if not p.is_file():
            raise DataError(f"scenario file not found: {p}")
        try:
            spec = ScenarioSpec.from_dict(json.loads(p.read_text()), seed=args.seed)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid scenario file: {exc}") from exc
    data, truth = generate(spec)
    out = Path(args.out)
    _write_csv(out, ["y", "group"], zip(data.values, data.group_of))
    stem = out.with_suffix("")
    _write_csv(f"{stem}_truth_dist.csv", ["group", "DC"], zip(range(1, data.J + 1), truth.dis_level))
    _write_csv(f"{stem}_truth_obs.csv", ["obs", "group", "OC"],
               zip(range(1, data.N + 1), data.group_of, truth.obs_level))
    print(f"wrote {data.N} observations in {data.J} groups to {out}")
    return 0


# -- fit --------------------------------------------------------------------------------

def _given(args, names):
    return {n for n in names if getattr(args, n, None) not in (None, False)}


def build_config(args) -> ModelConfig:
    family = Family.parse(args.model)
    bad = _given(args, _ALL_PRIOR_FLAGS - _PRIOR_FLAGS[family])
    if bad:
        flags = ", ".join("--" + b.replace("_", "-") for b in sorted(bad))
        raise UsageError(f"{flags} not applicable to the {family.value} model")
    maxK = args.maxK if args.maxK is not None else DEFAULT_MAXK
    maxL = args.maxL if args.maxL is not None else DEFAULT_MAXL
    base = default_config(family, maxK, maxL)
    d = NigParams()
    nig = NigParams(
        d.m0 if args.m0 is None else args.m0,
        d.tau0 if args.tau0 is None else args.tau0,
        d.lambda0 if args.lambda0 is None else args.lambda0,
        d.gamma0 if args.gamma0 is None else args.gamma0,
    )

    def gem(fixed, h1, h2):
        return GemPrior(fixed=fixed, shape=1.0 if h1 is None else h1, rate=1.0 if h2 is None else h2)

    dist, obs = base.dist_weights, base.obs_weights
    if family is Family.CAM:
        dist = gem(args.alpha, args.hyp_alpha1, args.hyp_alpha2)
        obs = gem(args.beta, args.hyp_beta1, args.hyp_beta2)
    elif family is Family.FISAN:
        dist = gem(args.alpha, args.hyp_alpha1, args.hyp_alpha2)
        if args.b_dirichlet is not None:
            obs = DirichletSym(args.b_dirichlet)
    else:
        if args.a_dirichlet is not None:
            dist = DirichletSym(args.a_dirichlet)
        if args.b_dirichlet is not None:
            obs = DirichletSym(args.b_dirichlet)
    return ModelConfig(family, maxK, maxL, nig, dist, obs)


def cmd_fit(args) -> int:
    method = args.method.lower()
    wrong = _given(args, _VI_FLAGS if method == "mcmc" else _MCMC_FLAGS)
    if wrong:
        flags = ", ".join("--" + b.replace("_", "-") for b in sorted(wrong))
        raise UsageError(f"{flags} not applicable to method {method}")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    data = read_dataset(args.data, args.y_col, args.group_col)
    if args.nclus_start is not None and not 1 <= args.nclus_start <= cfg.maxL:
        raise UsageError("--nclus-start must lie in [1, maxL]")
    seed = 0 if args.seed is None else args.seed

    if method == "mcmc":
        params = McmcParams(
            nrep=1000 if args.nrep is None else args.nrep,
            burn=500 if args.burn is None else args.burn,
            maxK=cfg.maxK, maxL=cfg.maxL, seed=seed, warmstart=args.warmstart,
            nclus_start=args.nclus_start, verbose=args.verbose, store_omega=not args.no_store_omega,
            dist_update=args.dist_update or "marginal", atom_swaps=not args.no_atom_swaps,
        )
        try:
            params.validate(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            chains = run_mcmc(data, cfg, params)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        arc = arc_mod.mcmc_to_archive(chains, cfg, params, data)
        summary = sm.summarize_mcmc(chains, cfg, data)
    else:
        threads = args.threads if args.threads is not None else default_threads()
        params = ViParams(
            maxK=cfg.maxK, maxL=cfg.maxL,
            epsilon=0.01 if args.epsilon is None else args.epsilon,
            maxSIM=5000 if args.maxSIM is None else args.maxSIM,
            seed=seed, n_runs=1 if args.n_runs is None else args.n_runs,
            warmstart=args.warmstart, nclus_start=args.nclus_start, verbose=args.verbose, threads=threads,
        )
        try:
            params.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        fit = run_cavi(data, cfg, params)
        arc = arc_mod.vi_to_archive(fit, cfg, params, data)
        # worker count does not affect results
        arc.params.pop("threads", None)
        summary = sm.summarize_vi(fit, cfg, data)
    digest = arc_mod.write_archive(args.out, arc)
    print(summary)
    print(f"\narchive: {args.out} (payload sha256 {digest[:16]})")
    return 0


# -- post-processing commands -----------------------------------------------------------

def _load(path, kind=None):
    try:
        arc = arc_mod.read_archive(path)
    except FileNotFoundError:
        raise DataError(f"archive not found: {path}") from None
    if kind is not None and arc.kind != kind:
        raise UsageError(f"this command needs a {kind.upper()} archive, got {arc.kind.upper()}")
    return arc


def _fit_from(arc):
    return arc_mod.archive_to_mcmc(arc) if arc.kind == "mcmc" else arc_mod.archive_to_vi(arc)


def cmd_partition(args) -> int:
    arc = _load(args.fit)
    data = arc_mod.archive_data(arc)
    if arc.kind == "vi" and args.add_burnin:
        raise UsageError("--add-burnin applies only to MCMC archives")
    fit = _fit_from(arc)
    try:
        est = sm.estimate_partition(fit, data, args.add_burnin or 0, args.subsample)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = data.labels
    _write_csv(out / "dis_level.csv", ["group", "DC"],
               ((str(labels[j]), est.dis_level[j]) for j in range(data.J)))
    t = est.obs_level
    _write_csv(out / "obs_level.csv", ["value", "group", "DC", "OC"],
               ((v, str(labels[g - 1]), d, o) for v, g, d, o in zip(t["value"], t["group"], t["DC"], t["OC"])))
    print(f"Number of estimated OCs: {est.n_oc}")
    print(f"Number of estimated DCs: {est.n_dc}")
    return 0


def cmd_measures(args) -> int:
    arc = _load(args.fit, "vi")
    G = sm.estimate_G(arc_mod.archive_to_vi(arc), thr=args.thr)
    keep = G.shown()
    if args.dc:
        try:
            wanted = {int(x) for x in args.dc.split(",") if x.strip()}
        except ValueError:
            raise UsageError("--dc expects a comma-separated list of integers") from None
        keep &= np.isin(G.dc, list(wanted))
    idx = np.flatnonzero(keep)
    _write_csv(args.out, ["dc", "oc", "post_mean", "post_var", "post_weight"],
               ((G.dc[i], G.oc[i], G.post_mean[i], G.post_var[i], G.post_weight[i]) for i in idx))
    return 0


def cmd_psm(args) -> int:
    arc = _load(args.fit, "mcmc")
    chains = arc_mod.archive_to_mcmc(arc)
    draws = chains.M if args.level == "obs" else chains.S
    if args.add_burnin:
        if args.add_burnin >= draws.shape[0]:
            raise UsageError("--add-burnin must be smaller than the chain length")
        draws = draws[args.add_burnin:]
    n = draws.shape[1]
    if n > args.max_n:
        raise DataError(f"PSM would be {n} x {n}; raise --max-n to allow it")
    psm = sm.compute_psm(draws)
    _write_csv(args.out, [f"v{i + 1}" for i in range(n)], psm.tolist())
    return 0


def cmd_plotdata(args) -> int:
    arc = _load(args.fit)
    what = args.what
    if what == "elbo":
        if arc.kind != "vi":
            raise UsageError("elbo data needs a VI archive")
        fit = arc_mod.archive_to_vi(arc)
        rows = ((r + 1, h + 1, v) for r, tr in enumerate(fit.all_elbo_traces) for h, v in enumerate(tr))
        _write_csv(args.out, ["run", "iteration", "elbo"], rows)
    elif what.startswith("trace:"):
        if arc.kind != "mcmc":
            raise UsageError("trace data needs an MCMC archive")
        ch = arc_mod.archive_to_mcmc(arc)
        par = what.split(":", 1)[1]
        if par not in ("mu", "sigma2", "alpha", "beta"):
            raise UsageError(f"unknown trace parameter {par!r}")
        x = np.asarray(getattr(ch, par))
        if x.ndim == 1:
            _write_csv(args.out, ["iteration", "value"], ((t + 1, v) for t, v in enumerate(x)))
        else:
            _write_csv(args.out, ["iteration", "component", "value"],
                       ((t + 1, l + 1, x[t, l]) for t in range(x.shape[0]) for l in range(x.shape[1])))
    elif what == "ecdf":
        data = arc_mod.archive_data(arc)
        est = sm.estimate_partition(_fit_from(arc), data)
        rows = []
        for j in range(1, data.J + 1):
            v = np.sort(data.group_values(j))
            F = np.arange(1, v.size + 1) / v.size
            rows += [(str(data.labels[j - 1]), a, b, est.dis_level[j - 1]) for a, b in zip(v, F)]
        _write_csv(args.out, ["group", "value", "ecdf", "dc_label"], rows)
    elif what == "numclust":
        if arc.kind != "mcmc":
            raise UsageError("numclust data needs an MCMC archive")
        cc = sm.number_clusters(arc_mod.archive_to_mcmc(arc))
        _write_csv(args.out, ["iteration", "oc", "dc"], ((t + 1, a, b) for t, (a, b) in enumerate(zip(cc.oc, cc.dc))))
    else:
        raise UsageError(f"unknown --what {what!r}")
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestmix", description="Nested shared-atom mixtures for grouped data.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic nested-mixture dataset")
    s.add_argument("--scenario", default="benchmark",
                   help="'benchmark' (alias 'paper') or a JSON scenario file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output CSV (truth labels go to side files)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model by MCMC or variational inference")
    f.add_argument("--data", required=True)
    f.add_argument("--y-col", default="y")
    f.add_argument("--group-col", default="group")
    f.add_argument("--model", required=True, type=str.lower, choices=["cam", "fisan", "fsan"])
    f.add_argument("--method", required=True, type=str.lower, choices=["mcmc", "vi"])
    f.add_argument("--out", required=True, help="archive path")
    pr = f.add_argument_group("prior")
    for name in ("m0", "tau0", "lambda0", "gamma0", "hyp_alpha1", "hyp_alpha2", "hyp_beta1", "hyp_beta2",
                 "alpha", "beta", "a_dirichlet", "b_dirichlet"):
        pr.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    en = f.add_argument_group("engine")
    en.add_argument("--maxL", "--maxl", dest="maxL", type=int)
    en.add_argument("--maxK", "--maxk", dest="maxK", type=int)
    en.add_argument("--seed", type=int)
    en.add_argument("--warmstart", dest="warmstart", action="store_true", default=True)
    en.add_argument("--no-warmstart", dest="warmstart", action="store_false")
    en.add_argument("--nclus-start", type=int)
    en.add_argument("--verbose", action="store_true")
    en.add_argument("--nrep", type=int)
    en.add_argument("--burn", type=int)
    en.add_argument("--dist-update", choices=["marginal", "conditional"])
    en.add_argument("--no-store-omega", action="store_true")
    en.add_argument("--no-atom-swaps", action="store_true",
                    help="disable the within-DC atom-label swap move (Dirichlet observational weights)")
    en.add_argument("--epsilon", type=float)
    en.add_argument("--maxSIM", "--maxsim", dest="maxSIM", type=int)
    en.add_argument("--n-runs", type=int)
    en.add_argument("--threads", type=int, help="worker processes for VI runs (default $NESTMIX_THREADS or 1)")
    f.set_defaults(func=cmd_fit)

    pa = sub.add_parser("partition", help="point estimate of the two-level partition")
    pa.add_argument("--fit", required=True)
    pa.add_argument("--add-burnin", type=int, default=0)
    pa.add_argument("--out", required=True, help="output directory")
    pa.add_argument("--subsample", type=int, default=None,
                    help="search the MCMC observational partition on this many observations (e.g. 20000), "
                         "then place the rest; default off")
    pa.set_defaults(func=cmd_partition)

    me = sub.add_parser("measures", help="estimated random measures of a VI fit")
    me.add_argument("--fit", required=True)
    me.add_argument("--thr", type=float, default=0.01)
    me.add_argument("--dc", help="comma-separated DC indices")
    me.add_argument("--out", default="-")
    me.set_defaults(func=cmd_measures)

    ps = sub.add_parser("psm", help="posterior similarity matrix of an MCMC fit")
    ps.add_argument("--fit", required=True)
    ps.add_argument("--level", choices=["obs", "dist"], default="dist")
    ps.add_argument("--add-burnin", type=int, default=0)
    ps.add_argument("--max-n", type=int, default=5000)
    ps.add_argument("--out", default="-")
    ps.set_defaults(func=cmd_psm)

    pl = sub.add_parser("plotdata", help="tidy CSVs for external plotting")
    pl.add_argument("--fit", required=True)
    pl.add_argument("--what", required=True,
                    help="elbo | trace:mu | trace:sigma2 | trace:alpha | trace:beta | ecdf | numclust")
    pl.add_argument("--out", default="-")
    pl.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nestmix: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DataValidationError, arc_mod.ArchiveError, ViFailure, FloatingPointError) as exc:
        print(f"nestmix: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
