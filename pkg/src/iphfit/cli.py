"""Command-line interface: ``iphfit <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 engine precondition failure,
3 numerical non-convergence. Timing fields are left out of output files
unless ``--timing`` is given, so identical inputs and seeds give
byte-identical files.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .approx import EventPlan, approximate_model, constant_event_rewrite
from .dist import Density, empirical_from_samples
from .iph import (EXPONENTIAL_MODE, IphError, SWEEP_COLUMNS, plain_fit, run_method, shift_law_experiment,
                  sweep_error_vs_phases)
from .model import Gsmp, ModelError, classify, validate
from .models import (COLLISION_DEFAULTS, ack_density, alternating_bit, collision_gsmp, collision_probability,
                     collision_race_dctmc)
from .phfit import FitError, get_fitter
from .quad import QuadratureError
from .sim import RunConfig, ScriptedDraws, simulate, trace
from .transient import ConvergenceError, PreconditionError, analyze, ctmc_reach

log = logging.getLogger("iphfit")

OK, VALIDATION, PRECONDITION, NONCONVERGENCE = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=VALIDATION):
        super().__init__(message)
        self.code = code


# -- references -----------------------------------------------------------------

BUILTIN_MODELS = ("alternating-bit", "collision", "collision-race")


def builtin_model(name: str, params: dict | None = None, seed: int = 0) -> Gsmp:
    params = dict(params or {})
    if name == "alternating-bit":
        ack = params.pop("ack", None)
        ack_seed = params.pop("ack_seed", seed)
        dens = ack_density(ack_seed) if ack is None else load_density(ack)
        return alternating_bit(dens, **params)
    if name == "collision":
        return collision_gsmp(**params)
    if name == "collision-race":
        return collision_race_dctmc(**params)
    raise CliError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")


def load_model(ref, base: Path | None = None, seed: int = 0) -> Gsmp:
    if isinstance(ref, dict):
        return builtin_model(ref["builtin"], ref.get("params"), seed)
    if ref.startswith("builtin:"):
        return builtin_model(ref[len("builtin:"):], None, seed)
    return io.model_from_doc(io.load(_path(ref, base)))


def load_density(ref, base: Path | None = None, seed: int = 0) -> Density:
    """A density from a file path, an inline JSON object or ``builtin:ack``."""
    if isinstance(ref, dict):
        return io.density_from_doc(ref)
    ref = str(ref)
    if ref == "builtin:ack":
        return ack_density(seed)
    if ref.lstrip().startswith("{"):
        import json

        return io.density_from_doc(json.loads(ref))
    return io.density_from_doc(io.load(_path(ref, base)))


def _path(ref, base):
    p = Path(ref)
    if not p.is_absolute() and base is not None and not p.exists():
        p = base / p
    if not p.exists():
        raise CliError(f"file not found: {ref}")
    return p


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _strip_timing(doc, keep: bool):
    if keep:
        return doc
    if isinstance(doc, dict):
        return {k: _strip_timing(v, keep) for k, v in doc.items() if k not in ("seconds", "time")}
    if isinstance(doc, list):
        return [_strip_timing(v, keep) for v in doc]
    return doc


def _fitter(args, name=None, options=None):
    opts = dict(options or {})
    name = name or args.fitter
    if name == "hyper-erlang":
        opts.setdefault("seed", args.seed)
        if getattr(args, "branches", None):
            opts.setdefault("branches", args.branches)
    return get_fitter(name, **opts)


# -- commands -------------------------------------------------------------------


def cmd_ingest(args) -> int:
    text = Path(args.input).read_text() if args.input != "-" else sys.stdin.read()
    values, problems = io.parse_samples(text)
    for p in problems:
        print(p, file=sys.stderr)
    if not values:
        raise CliError(f"{args.input}: no parseable samples")
    x = np.asarray(values)
    bins = args.bins if args.bins else "auto"
    dens = empirical_from_samples(x, bins)
    summary = {"count": int(x.size), "mean": float(x.mean()), "std": float(x.std(ddof=1)) if x.size > 1 else 0.0,
               "min": float(x.min()), "max": float(x.max()), "bins": len(dens.masses)}
    _emit(io.dumps(io.density_doc(dens, summary)), args.out)
    line = (f"{summary['count']} samples: mean {summary['mean']:.4g}, std {summary['std']:.4g}, "
            f"min {summary['min']:.4g}, max {summary['max']:.4g}")
    if dens.is_degenerate:
        line += "; all samples equal, consider a deterministic event"
    print(line, file=sys.stdout if args.out else sys.stderr)
    return OK


def _write_chain(res, args, extra=None):
    rep = res.report() | (extra or {})
    doc = io.chain_doc(res.chain, _strip_timing(rep, args.timing))
    _emit(io.dumps(doc), args.out)
    msg = f"{rep['method']}: {rep['phases']} phases, Err {rep['err']:.6g}"
    if "plain_err" in rep:
        msg += f" (plain {rep['plain_err']:.6g}, factor {rep['factor']:.3g})"
    print(msg, file=sys.stdout if args.out else sys.stderr)


def cmd_fit(args) -> int:
    f = load_density(args.density, seed=args.seed)
    res = plain_fit(_fitter(args), args.n, f)
    _write_chain(res, args)
    return OK


def cmd_iph(args) -> int:
    f = load_density(args.density, seed=args.seed)
    fit = _fitter(args)
    kind = args.method
    if kind in ("slice", "shift+slice") and args.p is None:
        raise CliError(f"--method {kind} needs -p")
    res = run_method(fit, kind, args.n, args.p, f, args.mode)
    extra = {}
    if args.compare_plain:
        ref = plain_fit(fit, args.n, f)
        extra = {"plain_err": ref.err, "factor": ref.err / res.err if res.err > 0 else math.inf}
    _write_chain(res, args, extra)
    return OK


def cmd_approximate(args) -> int:
    job = io.load(args.job)
    io.validate_document(job, "approximate")
    base = Path(args.job).parent
    m = load_model(job["model"], base, args.seed)
    if job.get("rewrite_constant", True):
        m = constant_event_rewrite(m)
    plan = {}
    for name, ep in job["plan"].items():
        opts = dict(ep.get("options", {}))
        if ep.get("fitter", "hyper-erlang") == "hyper-erlang":
            opts.setdefault("seed", args.seed)
        plan[name] = EventPlan(ep["method"], ep.get("fitter", "hyper-erlang"), ep.get("n", 2),
                               ep.get("mode", EXPONENTIAL_MODE), opts)
    out = approximate_model(m, plan, cap=job.get("cap", 1_000_000), prune=job.get("prune", True))
    doc = io.model_doc(out)
    doc["annotations"] = _strip_timing(doc["annotations"], args.timing)
    _emit(io.dumps(doc), args.out)
    comps = out.annotations.get("_meta", {}).get("components", {})
    errs = ", ".join(f"{k} Err {v['err']:.4g}" for k, v in comps.items())
    print(f"{len(out.states)} states, {classify(out)}; {errs}", file=sys.stdout if args.out else sys.stderr)
    return OK


SUGGESTION = re.compile(r"(?:use|give) (delta|subordinated|uniformization)")


def suggest_engine(message: str, query: dict) -> str:
    """Fallback engine for a query whose engine refused it."""
    s = SUGGESTION.search(message)
    if s:
        return s.group(1)
    if query.get("kind") == "reach" and query.get("t") is None:
        return "subordinated"
    return "delta"


def expand_states(m: Gsmp, names) -> list:
    """State names of ``m``; names of base states expand to their product states."""
    own = set(m.states)
    out = []
    for nm in names:
        if nm in own:
            out.append(nm)
            continue
        hits = [s for s in m.states if isinstance(m.annotations.get(s), dict) and m.annotations[s].get("base") == nm]
        if not hits:
            raise CliError(f"unknown state {nm!r}")
        out += hits
    return out


def cmd_analyze(args) -> int:
    job = io.load(args.job)
    io.validate_document(job, "analyze")
    m = load_model(job["model"], Path(args.job).parent, args.seed)
    results, code = [], OK
    for i, q in enumerate(job["queries"]):
        label = q.get("label", f"q{i}")
        query = {k: v for k, v in q.items() if k in ("kind", "t", "states", "goal")}
        for key in ("states", "goal"):
            if key in query:
                query[key] = expand_states(m, query[key])
        try:
            res = analyze(m, query, q.get("engine", "auto"), q.get("delta"), args.tolerance, args.tolerance)
            d = res.to_dict()
            if isinstance(d["value"], list):
                d["value"] = dict(zip(m.states, d["value"]))
            results.append({"label": label} | d)
            print(f"{label}: {_value_line(d['value'])} [{res.engine}]", file=sys.stderr)
        except PreconditionError as exc:
            results.append({"label": label, "error": str(exc), "suggested_engine": suggest_engine(str(exc), q)})
            print(f"{label}: precondition failed: {exc}", file=sys.stderr)
            code = max(code, PRECONDITION)
    _emit(io.dumps(_strip_timing({"results": results}, args.timing)), args.out)
    return code


def _value_line(v):
    return f"{v:.10g}" if isinstance(v, float) else "distribution"


def cmd_simulate(args) -> int:
    job = io.load(args.job)
    io.validate_document(job, "simulate")
    m = load_model(job["model"], Path(args.job).parent, args.seed)
    q = job["query"]
    if q["kind"] == "transient" and not q.get("states"):
        raise CliError("simulated transient queries need a state set")
    cfg = RunConfig(job["runs"], q["kind"], q.get("t"), tuple(expand_states(m, q.get("states", ()))),
                    tuple(expand_states(m, q.get("goal", ()))),
                    tuple(q.get("bins", ())), args.seed, job.get("max_steps", 100_000))
    start = time.perf_counter()
    est = simulate(m, cfg, jobs=args.jobs)
    doc = {"value": est.value, "se": est.se, "runs": est.runs, "hits": est.hits, "truncated": est.truncated,
           "info": est.info, "seconds": time.perf_counter() - start}
    if job.get("trace"):
        rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
        doc["traces"] = [[s.line() for s in trace(m, ScriptedDraws(rng=rng), horizon=q.get("t"))]
                         for _ in range(job["trace"])]
    _emit(io.dumps(_strip_timing(doc, args.timing)), args.out)
    if est.histogram is not None and args.table:
        Path(args.table).write_text(io.csv_text(["lo", "hi", "count", "density"], est.histogram_rows()))
    print(f"estimate {est.value:.6g} +- {est.se:.3g} ({est.runs} runs)", file=sys.stderr)
    return OK


def cmd_sweep(args) -> int:
    job = io.load(args.job)
    io.validate_document(job, "sweep")
    base = Path(args.job).parent
    kind = job["kind"]
    if kind == "error-vs-phases":
        for key in ("density", "ns", "methods"):
            if key not in job:
                raise CliError(f"error-vs-phases sweeps need {key!r}")
        f = load_density(job["density"], base, args.seed)
        fit = _fitter(args, job.get("fitter", "hyper-erlang"), job.get("fitter_options"))
        rows = sweep_error_vs_phases(fit, f, job["ns"], job["methods"], jobs=args.jobs)
        header = SWEEP_COLUMNS if args.timing else [c for c in SWEEP_COLUMNS if c != "seconds"]
        body = [r.as_csv() if args.timing else [v for c, v in zip(SWEEP_COLUMNS, r.as_csv()) if c != "seconds"]
                for r in rows]
        text = io.csv_text(header, body)
    elif kind == "shift-law":
        if "shifts" not in job or "target_variance" not in job:
            raise CliError("shift-law sweeps need 'shifts' and 'target_variance'")
        dens = load_density(job["density"], base, args.seed) if "density" in job else None
        if dens is not None and "err_threshold" not in job:
            raise CliError("a measured shift-law column needs 'err_threshold'")
        rows = shift_law_experiment(job["shifts"], job["target_variance"], dens, job.get("err_threshold"),
                                    job.get("cap", 4096))
        text = io.csv_text(["shift", "closed_form_k", "closed_form_phases", "measured_phases", "measured_err", "flag"],
                           [[r.shift, r.closed_form_k, r.closed_form_phases,
                             "" if r.measured_phases is None else r.measured_phases,
                             "" if r.measured_err is None else r.measured_err, r.flag] for r in rows])
    else:
        rows = collision_table(job, args)
        cols = ["engine", "phases", "result", "time"] if args.timing else ["engine", "phases", "result"]
        text = io.csv_text(cols, [[r[c] for c in cols] for r in rows])
    _emit(text, args.out)
    return OK


def collision_table(job: dict, args) -> list[dict]:
    """Reachability of ``collision`` by several engines (one row each)."""
    params = COLLISION_DEFAULTS | job.get("params", {})
    gsmp = collision_gsmp(**params)
    rows = []

    def row(engine, phases, fn):
        start = time.perf_counter()
        try:
            val = fn()
        except PreconditionError as exc:
            val = f"precondition: {exc}"
        rows.append({"engine": engine, "phases": phases, "result": val, "time": round(time.perf_counter() - start, 4)})

    fitter = job.get("fitter", "erlang")
    opts = job.get("fitter_options", {})
    tx_n = job.get("tx_phases", 10)

    def goal_of(p):
        return [s for s in p.states if p.annotations[s]["base"] == "collision"]

    def ctmc(n):
        plan = {e: EventPlan("plain", fitter, n, options=opts) for e in ("start_a", "start_b")}
        plan["tx"] = EventPlan("plain", "erlang", tx_n)
        p = approximate_model(gsmp, plan)
        return ctmc_reach(p, goal_of(p), tol=args.tolerance)

    def delta(n):
        plan = {e: EventPlan("shift", fitter, n, options=opts) for e in ("start_a", "start_b")}
        p = approximate_model(gsmp, plan)
        return analyze(p, {"kind": "reach", "goal": goal_of(p), "t": job.get("horizon", 30.0)}, "delta",
                       job.get("delta"), args.tolerance).value

    for n in job.get("ph_phases", [2, 5, 10]):
        row("ctmc-linear-system", n, lambda: ctmc(n))
    for n in job.get("iph_phases", [2]):
        row("delta-iph-product", n, lambda: delta(n))
    race = collision_race_dctmc(**params)
    row("subordinated-race", 0, lambda: analyze(race, {"kind": "reach", "goal": ["collision"]}, "subordinated",
                                                 tol=args.tolerance).value)
    runs = job.get("runs", 100_000)
    row("simulation", 0, lambda: simulate(gsmp, RunConfig(runs, "reach", goal=("collision",), seed=args.seed),
                                          jobs=args.jobs).value)
    row("exact", 0, lambda: collision_probability(**params))
    return rows


def cmd_validate(args) -> int:
    doc = io.load(args.file)
    kind = io.validate_document(doc)
    if kind == "model":
        m = io.model_from_doc(doc)
        problems = validate(m)
        if problems:
            raise CliError("; ".join(problems))
        print(f"ok: model, {classify(m)}, {len(m.states)} states, {len(m.events)} events")
    elif kind == "chain":
        ch = io.chain_from_doc(doc)
        problems = ch.problems()
        if problems:
            raise CliError("; ".join(problems))
        print(f"ok: chain, {ch.n} phases, {len(ch.det_events)} deterministic events")
    elif kind == "density":
        d = io.density_from_doc(doc)
        print(f"ok: density {type(d).__name__}, mean {d.mean:.6g}")
    else:
        if "model" in doc:
            load_model(doc["model"], Path(args.file).parent, args.seed)
        print(f"ok: {kind} job")
    return OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="single source of randomness")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--tolerance", type=float, default=1e-10, help="numerical tolerance of analyses")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--timing", action="store_true", help="include wall-clock fields in outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="iphfit", description="Interval phase-type fitting and GSMP analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="samples or ping log -> empirical density")
    s.add_argument("input")
    s.add_argument("--bins", type=int)
    s.set_defaults(func=cmd_ingest)

    for name, func, helptext in (("fit", cmd_fit, "plain phase-type fit"),
                                 ("iph", cmd_iph, "interval phase-type construction")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("density", help="density file, inline JSON or builtin:ack")
        s.add_argument("--fitter", choices=["erlang", "hyper-erlang"], default="hyper-erlang")
        s.add_argument("-n", type=int, required=True, help="total phase budget")
        s.add_argument("--branches", type=int)
        if name == "iph":
            s.add_argument("--method", choices=["plain", "shift", "slice", "shift+slice"], required=True)
            s.add_argument("-p", type=int, help="number of slices")
            s.add_argument("--mode", choices=["exponential", "equidistant"], default=EXPONENTIAL_MODE)
            s.add_argument("--compare-plain", action="store_true", help="also report the plain fit's Err")
        s.set_defaults(func=func)

    for name, func in (("approximate", cmd_approximate), ("analyze", cmd_analyze),
                       ("simulate", cmd_simulate), ("sweep", cmd_sweep)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("job", help="job file")
        if name == "simulate":
            s.add_argument("--table", help="histogram CSV for absorption queries")
        s.set_defaults(func=func)

    s = sub.add_parser("validate", parents=[common], help="check a model, chain, density or job file")
    s.add_argument("file")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return PRECONDITION
    except (ConvergenceError, QuadratureError) as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return NONCONVERGENCE
    except (io.FormatError, IphError, FitError, ModelError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION
    except ArithmeticError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
