"""Command line entry point: ``countability simulate | fit | whatif | rerun``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 infeasible
harvest strategy.  ``COUNTABILITY_OUTPUT_DIR`` supplies ``--out`` and
``COUNTABILITY_THREADS`` the default ``--jobs`` when not given.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .diagnostics import summarize
from .io import (
    InputError,
    fmt,
    read_config,
    read_dataset_csv,
    read_draws_csv,
    read_json,
    read_simulation_spec,
    sha256,
    write_dataset_csv,
    write_draws_csv,
    write_json,
    write_rows_csv,
    write_text,
    write_states_csv,
)
from .likelihood import NonFiniteLogPosterior
from .management import (
    HarvestPredictor,
    InfeasibleStrategy,
    PosteriorSample,
    StrategySpec,
    solve_harvest_with,
)
from .model import DatasetError, PriorConfig
from .sampler import InitializationError, SamplerConfig, run_chains
from .simulator import InfeasibleHarvest, simulate_dataset

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4
ENV_OUT = "COUNTABILITY_OUTPUT_DIR"
ENV_THREADS = "COUNTABILITY_THREADS"
MANIFEST = "manifest.json"
KIND_ALIASES = {"stable": "stable", "hunter": "hunter_biased", "hunter_biased": "hunter_biased",
                "forestry": "forestry_biased", "forestry_biased": "forestry_biased"}

log = logging.getLogger("countability")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUT)
    if not out:
        raise CliError(f"no output directory: pass --out or set {ENV_OUT}", EXIT_INPUT)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"{ENV_THREADS} must be an integer, got {env!r}", EXIT_INPUT) from None
    return 1


def _abs(p: str | None) -> str | None:
    return None if p is None else str(Path(p).resolve())


def _write_manifest(out: Path, command: str, argv: list[str], configs: dict, data: list[str],
                    seed: int | None, artifacts: list[str], started: str) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "config_paths": configs,
        "data_paths": data,
        "seed": seed,
        "output_dir": str(out.resolve()),
        "artifacts": {name: sha256(out / name) for name in sorted(artifacts)},
        "started": started,
        "finished": _now(),
        "version": __version__,
    }
    write_json(manifest, out / MANIFEST)


# -- simulate --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = _now()
    spec = read_simulation_spec(args.spec)
    out = _out_dir(args)
    try:
        result = simulate_dataset(spec)
    except InfeasibleHarvest as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_NUMERIC) from None
    write_dataset_csv(result.dataset, out / "data.csv")
    truth = spec.true_params.replace(a_t=result.a_t).to_dict()
    truth.update({
        "sigma_F": spec.true_params.sigma_f,
        "sigma_M": spec.true_params.sigma_m,
        "sigma_a": spec.true_params.sigma_a,
        "years": [int(y) for y in spec.years],
        "NF": result.trajectory.pre_f.tolist(),
        "NM": result.trajectory.pre_m.tolist(),
        "NF_post": result.trajectory.post_f.tolist(),
        "NM_post": result.trajectory.post_m.tolist(),
    })
    write_json(truth, out / "truth.json")
    argv = ["simulate", _abs(args.spec)]
    _write_manifest(out, "simulate", argv, {"spec": _abs(args.spec)}, [], spec.seed,
                    ["data.csv", "truth.json"], started)
    print(f"wrote {out / 'data.csv'}")
    return EXIT_OK


# -- fit ---------------------------------------------------------------------------------

def _trace_rows(chains) -> list[list[float]]:
    rows = []
    for c, ch in enumerate(chains):
        n_burn = ch.n_burnin
        thin = max(1, (ch.log_posterior_trace.size - n_burn) // max(1, ch.draws.shape[0]))
        for it in range(thin - 1, ch.log_posterior_trace.size, thin):
            rows.append([c, it + 1, int(it >= n_burn), ch.log_posterior_trace[it], ch.step_size_trace[it]])
    return rows


def cmd_fit(args) -> int:
    started = _now()
    data = read_dataset_csv(args.data, survey_se=args.survey_se)
    priors = read_config(args.priors, PriorConfig)
    sampler = read_config(args.sampler, SamplerConfig)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.chains is not None:
        overrides["n_chains"] = args.chains
    if overrides:
        sampler = SamplerConfig.from_dict({**sampler.to_dict(), **overrides})
    out = _out_dir(args)
    try:
        chains = run_chains(data, priors, sampler, args.variant, use_k=args.use_k, n_jobs=_jobs(args))
    except InitializationError as exc:
        write_json(exc.dump or {}, out / "init_failure.json")
        raise CliError(f"initialization failed: {exc} (dump in {out / 'init_failure.json'})",
                       EXIT_NUMERIC) from None
    except (NonFiniteLogPosterior, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERIC) from None
    decoded = [ch.decoded() for ch in chains]
    write_draws_csv(decoded, out / "draws.csv")
    write_states_csv(data.years, {k: np.concatenate([d[k] for d in decoded]) for k in decoded[0]},
                     out / "states.csv")
    write_rows_csv(["chain", "iteration", "sampling", "log_posterior", "step_size"],
                   _trace_rows(chains), out / "trace.csv")
    summary = {
        "variant": args.variant,
        "use_k": args.use_k,
        "n_chains": len(chains),
        "seeds": [int(ch.seed) for ch in chains],
        "acceptance_rate": [ch.acceptance_rate for ch in chains],
        "burnin_acceptance_rate": [ch.burnin_acceptance_rate for ch in chains],
        "final_step_size": [float(ch.step_size_trace[-1]) for ch in chains],
        "priors": priors.to_dict(),
        "sampler": sampler.to_dict(),
        "parameters": summarize(decoded),
    }
    write_json(summary, out / "summary.json")
    argv = ["fit", _abs(args.data), "--variant", args.variant, "--sampler-json",
            json.dumps(sampler.to_dict(), sort_keys=True), "--priors-json",
            json.dumps(priors.to_dict(), sort_keys=True)]
    if args.use_k:
        argv.append("--use-k")
    if args.survey_se:
        argv.append("--survey-se")
    _write_manifest(out, "fit", argv, {"priors": None if args.priors_json else _abs(args.priors),
                     "sampler": None if args.sampler_json else _abs(args.sampler)},
                    [_abs(args.data)], sampler.seed,
                    ["draws.csv", "states.csv", "trace.csv", "summary.json"], started)
    for ch in chains:
        log.info("chain seed %d: acceptance %.3f", ch.seed, ch.acceptance_rate)
    print(f"wrote {out / 'draws.csv'}")
    return EXIT_OK


# -- whatif ------------------------------------------------------------------------------

def cmd_whatif(args) -> int:
    started = _now()
    kind = KIND_ALIASES[args.kind]
    try:
        strategy = StrategySpec(kind, args.target, args.prob, args.pop)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    if args.h_step <= 0:
        raise CliError("--h-step must be positive", EXIT_INPUT)
    labels = args.labels or [Path(p).parent.name or Path(p).stem for p in args.draws]
    if len(labels) != len(args.draws):
        raise CliError("--labels needs one label per draws file", EXIT_INPUT)
    out = _out_dir(args)
    grid = np.arange(0.0, args.pop, args.h_step)
    sweep, answers, infeasible = [], [], []
    for path, label in zip(args.draws, labels):
        try:
            posterior = PosteriorSample.from_mapping(read_draws_csv(path))
        except (KeyError, ValueError) as exc:
            raise CliError(f"{path}: {exc}", EXIT_INPUT) from None
        pred = HarvestPredictor(posterior, args.pop, args.n_rep, np.random.default_rng(args.seed),
                                plug_in=args.plug_in)
        for h in grid:
            q = pred.quantiles(float(h))
            sweep.append([label, h, q[0.1], q[0.5], q[0.9]])
        try:
            h = solve_harvest_with(pred, strategy)
        except InfeasibleStrategy as exc:
            infeasible.append(f"{label}: infeasible strategy: {exc}")
            continue
        answers.append((label, h))
    header = "variant,H,q10,q50,q90\n"
    write_text(out / "sweep.csv", header + "".join(
        ",".join([row[0]] + [fmt(v) for v in row[1:]]) + "\n" for row in sweep))
    result = {
        "strategy": {"kind": kind, "target": args.target, "prob": args.prob, "pop": args.pop},
        "n_rep": args.n_rep, "seed": args.seed, "plug_in": args.plug_in,
        "harvest": {label: h for label, h in answers},
        "infeasible": infeasible,
    }
    write_json(result, out / "whatif.json")
    argv = ["whatif"] + [_abs(p) for p in args.draws] + [
        "--labels", *labels, "--target", repr(args.target), "--prob", repr(args.prob),
        "--kind", kind, "--pop", repr(args.pop), "--n-rep", str(args.n_rep),
        "--seed", str(args.seed), "--h-step", repr(args.h_step)]
    if args.plug_in:
        argv.append("--plug-in")
    _write_manifest(out, "whatif", argv, {}, [_abs(p) for p in args.draws], args.seed,
                    ["sweep.csv", "whatif.json"], started)
    for label, h in answers:
        prefix = f"{label} " if len(args.draws) > 1 else ""
        print(f"{prefix}H={round(h)}")
    if infeasible:
        raise CliError("; ".join(infeasible), EXIT_INFEASIBLE)
    return EXIT_OK


# -- rerun -------------------------------------------------------------------------------

def cmd_rerun(args) -> int:
    manifest = read_json(args.manifest)
    try:
        argv = list(manifest["argv"])
    except (KeyError, TypeError):
        raise CliError(f"{args.manifest}: not a run manifest", EXIT_INPUT) from None
    out = args.out or os.environ.get(ENV_OUT) or manifest.get("output_dir")
    return main(argv + ["--out", str(out)])


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="countability", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT})")

    s = sub.add_parser("simulate", help="generate a synthetic dataset from a JSON spec")
    s.add_argument("spec")
    common(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="sample the posterior for a dataset CSV")
    f.add_argument("data")
    f.add_argument("--priors", help="prior config JSON")
    f.add_argument("--sampler", help="sampler config JSON")
    f.add_argument("--priors-json", help=argparse.SUPPRESS)
    f.add_argument("--sampler-json", help=argparse.SUPPRESS)
    f.add_argument("--variant", choices=("variable", "fixed"), default="variable")
    f.add_argument("--use-k", action="store_true", help="include density dependence K")
    f.add_argument("--chains", type=int, help="number of chains (overrides the sampler config)")
    f.add_argument("--seed", type=int, help="master seed (overrides the sampler config)")
    f.add_argument("--jobs", type=int, help=f"worker processes (default ${ENV_THREADS} or 1)")
    f.add_argument("--survey-se", action="store_true",
                   help="survey_sd_log column holds natural-scale SE of the total estimate")
    common(f)
    f.set_defaults(func=cmd_fit)

    w = sub.add_parser("whatif", help="harvest decision analysis from posterior draws")
    w.add_argument("draws", nargs="+", help="draws CSV file(s), one per model variant")
    w.add_argument("--labels", nargs="+", help="variant label per draws file")
    w.add_argument("--target", type=float, required=True)
    w.add_argument("--prob", type=float, default=0.9)
    w.add_argument("--kind", choices=sorted(KIND_ALIASES), default="stable")
    w.add_argument("--pop", type=float, required=True, help="current female population")
    w.add_argument("--n-rep", type=int, default=100, help="replicates per posterior draw")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--h-step", type=float, default=10.0, help="harvest grid spacing of the sweep")
    w.add_argument("--plug-in", action="store_true", help="use posterior medians instead of all draws")
    common(w)
    w.set_defaults(func=cmd_whatif)

    r = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (default: the recorded one)")
    r.set_defaults(func=cmd_rerun)
    return p


def _inline_configs(args) -> None:
    # manifest reruns carry configs inline; write them to the parsed namespace
    import tempfile

    for name in ("priors", "sampler"):
        inline = getattr(args, f"{name}_json", None)
        if inline is None:
            continue
        if getattr(args, name):
            raise CliError(f"give --{name} or --{name}-json, not both", EXIT_INPUT)
        fh = tempfile.NamedTemporaryFile("w", suffix=".json", delete=False, encoding="utf-8")
        with fh:
            fh.write(inline)
        setattr(args, name, fh.name)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    tmp = []
    try:
        if args.command == "fit":
            _inline_configs(args)
            tmp = [getattr(args, n) for n in ("priors", "sampler")
                   if getattr(args, f"{n}_json", None) is not None]
            if args.jobs is not None and args.jobs < 1:
                raise CliError("--jobs must be at least 1", EXIT_INPUT)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DatasetError as exc:
        print(f"error: invalid dataset:\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for path in tmp:
            try:
                os.unlink(path)
            except OSError:
                pass


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
