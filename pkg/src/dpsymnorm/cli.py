"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 infeasible parameters,
4 norm not calibrated for the release.
"""
from __future__ import annotations

import argparse
import secrets
import sys
from pathlib import Path

import numpy as np

from .norms import CalibrationError, NormSpec, query
from .oracle import FrequencyVector, oracle_norm
from .params import InfeasibleParams, PublicParams, desk_constants, load_config, parse_config_text
from .pipeline import Pipeline, ReleaseSet
from .privacy import scalar_release_audit
from .sketch import CountSketch
from .streams import StreamReader, parse_dist, read_stream, write_stream

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_CALIBRATION = 4


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(63)
    print(f"seed={seed}", file=sys.stderr)
    return seed


def _constants(text: str | None) -> dict[str, float]:
    if not text:
        return {}
    _, consts = parse_config_text("\n".join(text.split(",")))
    return consts


def build_public(args, n=None, m=None) -> tuple[PublicParams, int | None]:
    """PublicParams from --config, stream header and command-line overrides."""
    public, consts = load_config(args.config) if getattr(args, "config", None) else ({}, {})
    consts.update(_constants(getattr(args, "constants", None)))
    seed = public.pop("seed", None)
    public.setdefault("n", n)
    public.setdefault("m", m)
    if public["n"] is None or public["m"] is None:
        raise UsageError("n and m must come from the config or the stream header")
    for key, default in (("alpha", 0.3), ("epsilon", 1.0), ("delta", 1e-6)):
        public.setdefault(key, default)
    # default calibration covers every L_p with p <= 2
    public.setdefault("M", max(float(np.log2(public["n"])), 1.0))
    if getattr(args, "instances", None):
        public["instances"] = args.instances
    if getattr(args, "preset", None) == "desk":
        preset = desk_constants(PublicParams(**public))
        preset.update(consts)
        consts = preset
    return PublicParams(constants=consts, **public), seed


def _norms(specs) -> list[NormSpec]:
    try:
        return [NormSpec.parse(s) for s in specs]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_gen(args) -> int:
    try:
        gen = parse_dist(args.dist)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = _seed(args)
    items = gen(args.n, args.m, np.random.default_rng(seed))
    write_stream(args.out, args.n, args.m, items)
    return 0


def _sketch(args, reader, seed=None) -> ReleaseSet:
    pub, cfg_seed = build_public(args, reader.n, reader.m)
    if args.seed is None and cfg_seed is not None:
        args.seed = cfg_seed
    seed = _seed(args) if seed is None else seed
    pipe = Pipeline(pub, seed, pin_noise=args.pin_noise)
    pipe.ingest_stream(reader)
    return pipe.release()


def cmd_sketch(args) -> int:
    C = _sketch(args, StreamReader(args.stream))
    C.save(args.out)
    ledger = C.ledger
    eps, delta = ledger.totals()
    print(f"instances={len(C.instances)} updates={C.updates} counters={C.derived['memory_counters']} "
          f"epsilon={float(eps) * C.public['epsilon']:g} delta={float(delta) * C.public['delta']:g}")
    return 0


def cmd_query(args) -> int:
    C = ReleaseSet.load(args.release)
    for norm in _norms(args.norm):
        print(f"norm={norm.label} estimate={query(C, norm):.10g} instances={len(C.instances)}")
    return 0


def cmd_exact(args) -> int:
    n, _, items = read_stream(args.stream)
    v = FrequencyVector.from_items(n, items)
    for norm in _norms(args.norm):
        print(f"norm={norm.label} exact={oracle_norm(v, norm):.10g}")
    return 0


def cmd_eval(args) -> int:
    n, m, items = read_stream(args.stream)
    norms = _norms(args.norm)
    pub, cfg_seed = build_public(args, n, m)
    base = args.seed if args.seed is not None else cfg_seed
    if base is None:
        base = _seed(args)
    v = FrequencyVector.from_items(n, items)
    exact = [oracle_norm(v, N) for N in norms]
    ests = [[] for _ in norms]
    for trial in range(args.trials):
        pipe = Pipeline(pub, base + trial, pin_noise=args.pin_noise)
        pipe.ingest_many(items)
        C = pipe.release()
        for k, N in enumerate(norms):
            ests[k].append(query(C, N))
    errors = [np.abs(np.asarray(e) / x - 1) if x else np.abs(np.asarray(e)) for e, x in zip(ests, exact)]
    if args.trials == 1:
        lines = ["norm\texact\testimate\trel_err"]
        lines += [f"{N.label}\t{x:.10g}\t{e[0]:.10g}\t{err[0]:.6g}"
                  for N, x, e, err in zip(norms, exact, ests, errors)]
    else:
        lines = ["norm\texact\testimate_mean\trel_err_mean\trel_err_p90"]
        lines += [f"{N.label}\t{x:.10g}\t{np.mean(e):.10g}\t{np.mean(err):.6g}\t{np.percentile(err, 90):.6g}"
                  for N, x, e, err in zip(norms, exact, ests, errors)]
    _emit("\n".join(lines), args.out)
    if args.fig_dir:
        from .report import plot_errors
        plot_errors([N.label for N in norms], errors, Path(args.fig_dir) / "eval_errors.png", alpha=pub.alpha)
    return 0


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def sensitivity_pairs(n: int, m: int, rows: int, width: int, pairs: int, seed: int) -> np.ndarray:
    """Largest per-coordinate estimate change over neighbouring Zipf streams that
    differ by replacing one update."""
    rng = np.random.default_rng(seed)
    out = np.empty(pairs)
    for t in range(pairs):
        items = parse_dist("zipf:1.1")(n, m, rng)
        other = items.copy()
        pos = rng.integers(m)
        other[pos] = (other[pos] + rng.integers(1, n)) % n
        cs = CountSketch(n, rows, width, np.random.default_rng([seed, t]))
        cs2 = cs.copy()
        cs2.table[:] = 0
        cs.update_many(items)
        cs2.update_many(other)
        out[t] = np.max(np.abs(cs.estimate_all() - cs2.estimate_all()))
    return out


def cmd_audit(args) -> int:
    if args.stream:
        reader = StreamReader(args.stream)
        pub, cfg_seed = build_public(args, reader.n, reader.m)
    else:
        reader = None
        pub, cfg_seed = build_public(args)
    if args.seed is None:
        args.seed = cfg_seed
    seed = _seed(args)
    pipe = Pipeline(pub, seed, pin_noise=args.pin_noise)
    d = pipe.derived
    m_pairs = min(pub.m, 10_000)
    deltas = sensitivity_pairs(pub.n, m_pairs, d.rows, d.full_width, args.pairs, seed)
    print("# sensitivity")
    print("pairs\tmax_delta\tbound\tpass")
    print(f"{args.pairs}\t{deltas.max():g}\t2\t{deltas.max() <= 2}")
    if reader is not None:
        pipe.ingest_stream(reader)
    C = pipe.release()
    print("# budget")
    print(C.ledger.to_tsv())
    eps = args.dp_epsilon
    audit = scalar_release_audit(eps, 2.0, 8.0 / eps, args.runs, seed)
    print("# empirical dp")
    print("epsilon\truns\tbins_checked\tworst_ratio_over_bound\tpass")
    print(f"{eps:g}\t{args.runs}\t{int(audit.checked.sum())}\t{audit.worst:.4f}\t{audit.passed}")
    if args.fig_dir:
        from .report import plot_histograms, plot_sensitivity
        plot_sensitivity(deltas, Path(args.fig_dir) / "audit_sensitivity.png")
        plot_histograms(audit, Path(args.fig_dir) / "audit_dp_histogram.png")
    ok = deltas.max() <= 2 and audit.passed
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpsymnorm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stream=True, config=True):
        if stream:
            p.add_argument("--stream", required=True, help="stream file")
        if config:
            p.add_argument("--config", help="key=value parameter file")
            p.add_argument("--constants", help="comma separated knob overrides, e.g. c_div=0.5,c_K=2")
            p.add_argument("--instances", type=int, help="number of repetition instances")
            p.add_argument("--preset", choices=["none", "desk"], default="none",
                           help="knob preset applied before --config/--constants knobs")
            p.add_argument("--pin-noise", action="store_true", help="replace every noise draw by 0 (test mode)")
        p.add_argument("--seed", type=int, help="seed; drawn from the OS and printed when omitted")

    p = sub.add_parser("gen", help="generate a synthetic stream")
    p.add_argument("--dist", default="zipf:1.1", help="zipf:<s> | uniform | planted:<frac>[,<count>,<freq>]")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", required=True)
    common(p, stream=False, config=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sketch", help="ingest a stream and write a release set")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("query", help="answer norm queries from a release set")
    p.add_argument("--release", required=True)
    p.add_argument("--norm", action="append", required=True, help="lp:<p> or topk:<k>; repeatable")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("exact", help="exact norms of a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--norm", action="append", required=True)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("eval", help="compare private estimates with exact norms (TSV)")
    common(p)
    p.add_argument("--norm", action="append", required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", help="TSV output path (default stdout)")
    p.add_argument("--fig-dir", help="directory for figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="sensitivity, budget and empirical privacy checks")
    common(p, stream=False)
    p.add_argument("--stream", help="optional stream to release for the budget table")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--dp-epsilon", type=float, default=1.0)
    p.add_argument("--fig-dir", help="directory for figures")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleParams as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
