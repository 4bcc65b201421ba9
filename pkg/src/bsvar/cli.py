"""Batch command-line interface.

``bsvar estimate`` runs the sampler and stores a posterior directory; the
other subcommands read it and write binary draw arrays, CSV summaries and
plot-ready CSV series. Exit codes: 0 success, 1 usage or input error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, gibbs, harness, io, verification
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    load_restrictions,
    parse_hypothesis,
    parse_prior_setting,
)
from .model import Family, SpecificationError, specify
from .volatility import RegimeError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _progress_printer(total: int, label: str, quiet: bool, offset: int = 0, state=None):
    """Callback printing one line each time another tenth of ``total`` sweeps is done."""
    state = state if state is not None else {"tenth": 0}

    def report(done, _phase_total):
        if quiet:
            return
        tenth = (10 * (offset + done)) // total
        if tenth > state["tenth"]:
            state["tenth"] = tenth
            print(f"{label}: {10 * tenth}% ({offset + done}/{total} sweeps)", file=sys.stderr, flush=True)

    return report


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    prior = dict(parse_prior_setting(s) for s in (args.prior or []))
    cfg = cfg.merged(
        data=args.data,
        lags=args.lags,
        family=args.family,
        M=args.M,
        burn=args.burn,
        draws=args.draws,
        thin=args.thin,
        seed=args.seed,
        restrictions=args.restrictions,
        prior=prior or None,
        output=args.output,
        chains=args.chains,
    )
    return cfg.validate()


def _run_chain(spec, burn, draws, thin, seed_seq, label, quiet):
    rng = np.random.default_rng(seed_seq)
    total = burn + draws * thin
    shared = {"tenth": 0}
    state = None
    if burn > 0:
        burned = gibbs.estimate(
            spec, burn, rng=rng, normalise=False, progress=_progress_printer(total, label, quiet, 0, shared)
        )
        state = burned.last_state
    out = gibbs.estimate(
        spec,
        draws,
        rng=rng,
        thin=thin,
        normalise=False,
        initial=state,
        progress=_progress_printer(total, label, quiet, burn, shared),
    )
    out.meta["burn"] = burn
    return out, rng.bit_generator.state


def _merge_chains(results):
    draws = [r[0] for r in results]
    first = draws[0]
    merged = {k: np.concatenate([d.draws[k] for d in draws], axis=0) for k in first.draws}
    meta = dict(first.meta, chains=len(draws))
    return harness.PosteriorDraws(first.spec, merged, first.last_state, meta)


def _write_parameter_summary(draws, path):
    rows = []
    spec = draws.spec
    names = spec.data.names
    A = draws.get("A")
    B0 = draws.get("B0")
    K = spec.K
    labels_x = [f"{names[j]}_lag{l + 1}" for l in range(spec.data.p) for j in range(spec.N)]
    labels_x += ["const"] + [f"det{d}" for d in range(1, spec.data.D)]

    def add(name, values):
        s = analysis.summarise(values[None])
        rows.append([name, s.mean[0], float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
                     s.median[0], s.lower[0], s.upper[0]])

    mask_A, mask_B = spec.restrictions.mask_A, spec.restrictions.mask_B
    for n in range(spec.N):
        for k in range(K):
            if mask_A[n, k]:
                add(f"A[{names[n]},{labels_x[k]}]", A[:, n, k])
    for n in range(spec.N):
        for j in range(spec.N):
            if mask_B[n, j]:
                add(f"B0[{n + 1},{names[j]}]", B0[:, n, j])
    fam = spec.family
    for n in range(spec.N):
        if fam is Family.SV_NONCENTRED:
            add(f"omega[{n + 1}]", draws.get("omega")[:, n])
        if fam.is_sv:
            add(f"rho[{n + 1}]", draws.get("rho")[:, n])
        if fam is Family.SV_CENTRED:
            add(f"sigma_v2[{n + 1}]", draws.get("sigma_v2")[:, n])
        if fam is Family.T:
            add(f"nu[{n + 1}]", draws.get("nu")[:, n])
        if fam.is_regime:
            for m in range(spec.M):
                add(f"sigma2_regime[{n + 1},{m + 1}]", draws.get("sigma2_regime")[:, n, m])
    if fam.is_sparse:
        add("e", draws.get("e"))
    io.write_csv(path, ["parameter", "mean", "sd", "median", "lower", "upper"], rows)


def cmd_estimate(args) -> int:
    quiet = args.quiet
    if args.continue_dir:
        posterior = io.load_posterior(args.continue_dir)
        manifest = io.load_manifest(args.continue_dir)
        if manifest.get("rng_state") is None:
            raise ConfigError("the posterior directory carries no sampler random state to continue from")
        rng = np.random.default_rng()
        rng.bit_generator.state = manifest["rng_state"]
        draws = args.draws if args.draws is not None else posterior.meta["runs"][0].get("draws", len(posterior))
        thin = args.thin or 1
        ref = manifest.get("normalisation_reference")
        out = gibbs.estimate(
            posterior,
            draws,
            rng=rng,
            thin=thin,
            reference=None if ref is None else np.asarray(ref),
            progress=_progress_printer(draws * thin, "estimate", quiet),
        )
        io.save_posterior(out, args.continue_dir, rng.bit_generator.state, append=True,
                          run_info={"draws": draws, "continued": True})
        _write_parameter_summary(io.load_posterior(args.continue_dir), Path(args.continue_dir) / "summary.csv")
        print(f"appended {draws} draws to {args.continue_dir}")
        return EXIT_OK

    cfg = _config_from_args(args)
    if cfg.data is None:
        raise ConfigError("estimate needs --data (or data = ... in the config file)")
    raw, names = io.read_data_csv(cfg.data)
    out_dir = Path(cfg.output)
    if (out_dir / io.MANIFEST).exists() and not args.force:
        raise ConfigError(f"{out_dir} already holds a posterior; use --continue to extend it or --force to replace it")
    N = raw.shape[1]
    K = N * cfg.lags + 1
    restrictions = load_restrictions(cfg.restrictions, N, K) if cfg.restrictions else None
    spec = specify(raw, p=cfg.lags, family=cfg.family, M=cfg.M, restrictions=restrictions, names=names,
                   prior_overrides=cfg.prior or None)
    io.writable_directory(out_dir)

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains) if cfg.chains > 1 else [np.random.SeedSequence(cfg.seed)]
    if cfg.chains == 1:
        results = [_run_chain(spec, cfg.burn, cfg.draws, cfg.thin, seeds[0], "estimate", quiet)]
    else:
        with ProcessPoolExecutor(max_workers=cfg.chains) as pool:
            futures = [
                pool.submit(_run_chain, spec, cfg.burn, cfg.draws, cfg.thin, s, f"chain {i + 1}", quiet)
                for i, s in enumerate(seeds)
            ]
            results = [f.result() for f in futures]
    draws = gibbs.normalise_draws(_merge_chains(results))
    run_info = {"draws": cfg.draws, "burn": cfg.burn, "seed": cfg.seed, "chains": cfg.chains}
    io.save_posterior(draws, out_dir, results[0][1], run_info=run_info)
    _write_parameter_summary(draws, out_dir / "summary.csv")
    print(f"stored {len(draws)} draws in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compute / forecast
# ---------------------------------------------------------------------------


def _output_dir(args, default_name):
    base = Path(args.output) if args.output else Path(args.posterior) / default_name
    return io.writable_directory(base)


def _time_index(spec):
    return list(range(spec.data.p + 1, spec.data.p + spec.T + 1))


def _write_series(out, stem, arr, first_labels, first_name, x, x_name, level):
    """Summaries of ``arr`` shaped (L, X, S): one summary CSV and one plot file per label."""
    s = analysis.summarise(arr, level)
    labels = [(lab, xv) for lab in first_labels for xv in x]
    io.write_summary_csv(out / f"{stem}_summary.csv", labels, [first_name, x_name], s)
    for i, lab in enumerate(first_labels):
        io.write_plot_data(out / f"{stem}_{lab}.csv", x, analysis.Summary(
            s.median[i], s.lower[i], s.upper[i], s.mean[i], level))


def cmd_compute(args) -> int:
    posterior = io.load_posterior(args.posterior)
    spec = posterior.spec
    names = list(spec.data.names)
    shocks = [f"shock{j + 1}" for j in range(spec.N)]
    what = args.quantity
    out = _output_dir(args, what)
    level = args.level
    if what in ("irf", "fevd"):
        H = args.horizon
        arr = (analysis.compute_impulse_responses(posterior, H) if what == "irf"
               else analysis.compute_variance_decompositions(posterior, H))
        io.write_array(out / f"{what}.bsve", arr)
        pairs = [f"{v}_{s}" for v in names for s in shocks]
        flat = arr.reshape(spec.N * spec.N, H + 1, -1)
        _write_series(out, what, flat, pairs, "variable_shock", list(range(H + 1)), "horizon", level)
        if what == "fevd":
            mean = arr.mean(axis=-1)
            for i, v in enumerate(names):
                io.write_csv(out / f"fevd_{v}_shares.csv", ["x"] + shocks,
                             [[h] + list(mean[i, :, h]) for h in range(H + 1)])
    elif what == "hd":
        hd = analysis.compute_historical_decompositions(posterior)
        io.write_array(out / "hd.bsve", hd.contributions)
        io.write_array(out / "hd_remainder.bsve", hd.remainder)
        comps = np.concatenate([hd.contributions, hd.remainder[:, None]], axis=1)
        labels = [f"{v}_{c}" for v in names for c in shocks + ["remainder"]]
        flat = comps.reshape(spec.N * (spec.N + 1), spec.T, -1)
        _write_series(out, "hd", flat, labels, "variable_component", _time_index(spec), "t", level)
    elif what in ("shocks", "fitted", "sd"):
        fn = {
            "shocks": analysis.compute_structural_shocks,
            "fitted": analysis.compute_fitted_values,
            "sd": lambda d: analysis.compute_conditional_sd(d),
        }[what]
        arr = fn(posterior)
        io.write_array(out / f"{what}.bsve", arr)
        labels = shocks if what != "fitted" else names
        _write_series(out, what, arr, labels, "series", _time_index(spec), "t", level)
    elif what == "regimes":
        arr = analysis.compute_regime_probabilities(posterior, kind=args.kind)
        io.write_array(out / f"regimes_{args.kind}.bsve", arr)
        labels = [f"regime{m + 1}" for m in range(spec.M)]
        _write_series(out, f"regimes_{args.kind}", arr, labels, "regime", _time_index(spec), "t", level)
    print(f"wrote {what} to {out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    posterior = io.load_posterior(args.posterior)
    spec = posterior.spec
    H = args.horizon
    cond = None
    if args.conditional:
        header, values = io.read_csv_matrix(args.conditional)
        if values.shape != (H, spec.N):
            raise ConfigError(f"conditional file must have {H} rows and {spec.N} columns")
        cond = values.T
    out = _output_dir(args, "forecast")
    fc = analysis.forecast(posterior, H, conditional=cond, rng=np.random.default_rng(args.seed))
    io.write_array(out / "forecast.bsve", fc.draws)
    _write_series(out, "forecast", fc.draws, list(spec.data.names), "variable", list(range(1, H + 1)),
                  "horizon", args.level)
    print(f"wrote forecast to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _sddr_rows(results, verdict=""):
    return [
        [r.hypothesis, r.log_sddr, r.nse, r.log_posterior, r.log_prior, verification.interpret(r), verdict]
        for r in results
    ]


_SDDR_HEADER = ["hypothesis", "log_sddr", "nse", "log_posterior_ordinate", "log_prior_ordinate",
                "interpretation", "verdict"]


def cmd_verify(args) -> int:
    posterior = io.load_posterior(args.posterior)
    out = _output_dir(args, "verify")
    if args.test == "autoregression":
        if not args.restrict:
            raise ConfigError("verify autoregression needs at least one --restrict row,column[=value]")
        hyps = [parse_hypothesis(h) for h in args.restrict]
        res = verification.sddr_autoregression(
            posterior, [(r, c) for r, c, _ in hyps], [v for _, _, v in hyps], max_draws=args.max_draws
        )
        rows = _sddr_rows([res])
        path = io.write_csv(out / "sddr_autoregression.csv", _SDDR_HEADER, rows)
    else:
        kwargs = {"max_draws": args.max_draws}
        if posterior.spec.family is Family.T:
            kwargs["method"] = args.method
        results = verification.sddr_identification(posterior, **kwargs)
        verdict = verification.identification_verdict(results)
        rows = _sddr_rows(results, verdict)
        path = io.write_csv(out / "sddr_identification.csv", _SDDR_HEADER, rows)
        print(verdict)
    for row in rows:
        print(f"{row[0]}: log SDDR {row[1]:.4f} (NSE {row[2]:.4f}) {row[5]}")
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / geweke
# ---------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def cmd_simulate(args) -> int:
    params = {}
    if args.params:
        try:
            params = {k: np.asarray(v, dtype=float) for k, v in json.loads(Path(args.params).read_text()).items()}
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot read parameter file {args.params}: {err}") from None
    raw, truth = harness.simulate_data(
        args.family, T=args.T, N=args.N, p=args.lags, true_params=params, seed=args.seed, M=args.M or 2,
        allow_explosive=args.allow_explosive,
    )
    names = [f"y{i + 1}" for i in range(args.N)]
    io.write_csv(args.output, names, raw.tolist())
    truth_path = Path(args.truth) if args.truth else Path(args.output).with_suffix(".truth.json")
    try:
        truth_path.write_text(json.dumps({k: _jsonable(v) for k, v in truth.items()}, sort_keys=True) + "\n")
    except OSError as err:
        raise io.OutputError(f"cannot write {truth_path}: {err.strerror or err}") from err
    print(f"wrote {args.output} and {truth_path}")
    return EXIT_OK


def cmd_geweke(args) -> int:
    spec = harness.geweke_spec(args.family, N=args.N, T=args.T, M=args.M, seed=args.seed)
    report = harness.geweke_joint_test(spec, args.sweeps, rng=args.seed)
    rows = [[r["moment"], r["z"], r["marginal_conditional"], r["successive_conditional"]] for r in report.table()]
    if args.output:
        io.write_csv(args.output, ["moment", "z", "marginal_conditional", "successive_conditional"], rows)
    for name, z, *_ in rows:
        flag = "  *" if abs(z) > report.bound else ""
        print(f"{name:28s} z = {z:+.3f}{flag}")
    status = "PASSED" if report.passed else "FAILED"
    print(f"{status}: {report.exceedances} of {len(rows)} moments beyond {report.bound}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bsvar", description="Bayesian structural VAR estimation and analysis.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("estimate", help="run the Gibbs sampler and store posterior draws")
    e.add_argument("--config", help="key = value settings file; flags override it")
    e.add_argument("--data", help="CSV with a header row and one column per variable")
    e.add_argument("--lags", type=int)
    e.add_argument("--family", help="homo, sv, sv-centred, msh, msh-sparse, mix, mix-sparse or t")
    e.add_argument("--M", type=int, help="number of regimes or mixture components")
    e.add_argument("--burn", type=int)
    e.add_argument("--draws", type=int)
    e.add_argument("--thin", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--restrictions", help="zero-pattern file with B0 and A sections")
    e.add_argument("--prior", action="append", metavar="NAME=VALUE", help="prior constant override")
    e.add_argument("--output", help="posterior directory (default: posterior)")
    e.add_argument("--chains", type=int)
    e.add_argument("--continue", dest="continue_dir", metavar="DIR", help="append draws to an existing posterior")
    e.add_argument("--force", action="store_true", help="replace an existing posterior directory")
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=cmd_estimate)

    def posterior_args(q):
        q.add_argument("--posterior", default="posterior", help="posterior directory")
        q.add_argument("--output", help="output directory")
        q.add_argument("--level", type=float, default=0.9, help="equal-tail interval level")

    f = sub.add_parser("forecast", help="predictive density, optionally conditional on projections")
    posterior_args(f)
    f.add_argument("--horizon", type=int, default=8)
    f.add_argument("--conditional", help="CSV of projections, H rows, NA for free entries")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_forecast)

    c = sub.add_parser("compute", help="structural analysis from posterior draws")
    c.add_argument("quantity", choices=["irf", "fevd", "hd", "shocks", "fitted", "sd", "regimes"])
    posterior_args(c)
    c.add_argument("--horizon", type=int, default=8)
    c.add_argument("--kind", choices=analysis.REGIME_KINDS, default="smoothed")
    c.set_defaults(func=cmd_compute)

    v = sub.add_parser("verify", help="Savage-Dickey density ratios")
    v.add_argument("test", choices=["autoregression", "identification"])
    posterior_args(v)
    v.add_argument("--restrict", action="append", metavar="ROW,COL[=VALUE]",
                   help="zero-based element of A restricted (to 0 by default)")
    v.add_argument("--max-draws", type=int, help="evenly spaced subset of draws for the ordinates")
    v.add_argument("--method", choices=["kde", "conditional"], default="kde", help="Student-t ordinate")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="simulate data from a structural VAR")
    s.add_argument("--family", default="homo")
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--N", type=int, default=2)
    s.add_argument("--lags", type=int, default=1)
    s.add_argument("--M", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--params", help="JSON file with true parameters")
    s.add_argument("--allow-explosive", action="store_true")
    s.add_argument("--output", default="data.csv")
    s.add_argument("--truth", help="truth JSON (default: next to the data file)")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("geweke", help="joint-distribution test of the sampler")
    g.add_argument("--family", default="homo")
    g.add_argument("--sweeps", type=int, default=30000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--N", type=int, default=2)
    g.add_argument("--T", type=int, default=30)
    g.add_argument("--M", type=int)
    g.add_argument("--output", help="CSV of z-scores")
    g.set_defaults(func=cmd_geweke)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (gibbs.EstimationError, RegimeError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, SpecificationError, io.OutputError, UsageError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
