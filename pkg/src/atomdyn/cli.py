"""Command line entry point: ``atomdyn run | benchmark | example``.

Exit codes: 0 success, 2 unreadable or malformed input, 3 invalid scenario
or model, 4 failure during the simulation.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .compiler import compile, shot_rng
from .model import ModelError
from .params import UnknownParameterError
from .scenario import ScenarioParseError, ScenarioValidationError, build_scenario, load_scenario
from .sequence import SequenceError
from .solvers import SimulationError, run_shots
from .units import UnitError, parse_quantity

log = logging.getLogger("atomdyn")

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# run


def _overrides(pairs, spec) -> dict:
    declared = {p.name: p for p in spec.parameters}
    out = {}
    for item in pairs or ():
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or not name:
            raise CliError(f"--param expects NAME=VALUE, got {item!r}", EXIT_PARSE)
        if name not in declared:
            known = ", ".join(sorted(declared)) or "none"
            raise CliError(f"--param {name}: not a scenario parameter (declared: {known})", EXIT_INVALID)
        value = value.strip()
        try:
            out[name] = float(value)
        except ValueError:
            try:
                out[name] = parse_quantity(value, declared[name].dimension)
            except UnitError as exc:
                raise CliError(f"--param {name}: {exc}", EXIT_INVALID) from None
    return out


def _columns(values: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Flatten (time, [component,] shot) traces into named CSV columns."""
    n_t, shots = values.shape[0], values.shape[-1]
    inner = values.shape[1:-1]
    flat = values.reshape(n_t, -1, shots)
    names, cols = [], []
    for s in range(shots):
        for c in range(flat.shape[1]):
            base = f"shot{s}" if not inner else f"shot{s}[{c}]"
            col = flat[:, c, s]
            if np.iscomplexobj(col):
                names += [base + ".re", base + ".im"]
                cols += [col.real, col.imag]
            else:
                names.append(base)
                cols.append(col)
    return names, np.column_stack(cols) if cols else np.empty((n_t, 0))


def write_csv(path: Path, times: np.ndarray, values: np.ndarray):
    names, table = _columns(np.asarray(values))
    with path.open("w", newline="") as fh:
        fh.write(",".join(["time"] + names) + "\n")
        for t, row in zip(times, table):
            fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


def _versions() -> dict:
    import numba
    import scipy
    return {"atomdyn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _json_value(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def cmd_run(args) -> int:
    try:
        loaded = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        raise CliError(f"{args.scenario}: {exc}", EXIT_PARSE) from None
    except ScenarioValidationError as exc:
        raise CliError(f"{args.scenario}: {exc}", EXIT_INVALID) from None
    spec = loaded.spec
    run = spec.run
    shots = args.shots if args.shots is not None else run.shots
    seed = args.seed if args.seed is not None else run.seed
    density = args.density_matrix or run.density_matrix
    final = args.final_state or run.final_state
    threads = args.threads if args.threads is not None else run.threads
    solver = None if run.solver == "auto" else run.solver
    if shots < 1:
        raise CliError("--shots must be >= 1", EXIT_PARSE)
    try:
        dt = parse_quantity(args.dt, "time") if args.dt is not None else None
    except UnitError as exc:
        raise CliError(f"--dt: {exc}", EXIT_PARSE) from None
    overrides = _overrides(args.param, spec)

    try:
        built = build_scenario(spec, dt_override=dt)
        job = compile(built.system, built.sequence, built.initial_state, density, run.order, overrides,
                      shot_rng(seed, 0), solver)
    except ScenarioValidationError as exc:
        raise CliError(f"{args.scenario}: {exc}", EXIT_INVALID) from None
    except (ModelError, SequenceError, UnknownParameterError, UnitError) as exc:
        raise CliError(f"{args.scenario}: {exc}", EXIT_INVALID) from None

    log.info("running %s: %d shot(s), solver %s, dimension %d, %d steps", spec.name, shots, job.solver, job.dim,
             len(job.timeline.dts))
    try:
        res = run_shots(built.system, built.sequence, shots=shots, seed=seed, overrides=overrides, threads=threads,
                        keep_final=final, job=job)
    except (SimulationError, FloatingPointError, MemoryError) as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_RUNTIME) from None

    out = Path(args.output if args.output is not None else spec.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if "csv" in spec.outputs.formats:
        for name, values in res.values.items():
            p = out / f"{name}.csv"
            write_csv(p, res.times, values)
            files.append(p.name)
    if "json" in spec.outputs.formats:
        summary = {"scenario": spec.name, "solver": res.solver, "shots": shots, "times": res.times.tolist(),
                   "mean": {}}
        for name, values in res.values.items():
            m = np.asarray(values).mean(axis=-1)
            summary["mean"][name] = ({"re": m.real.tolist(), "im": m.imag.tolist()} if np.iscomplexobj(m)
                                     else m.tolist())
        (out / "results.json").write_text(json.dumps(summary, indent=1) + "\n")
        files.append("results.json")
    if final:
        labels = job.basis.labels()
        states = []
        for st in res.final_states:
            flat = np.asarray(st).ravel()
            states.append(np.column_stack([flat.real, flat.imag]).ravel().tolist())
        payload = {"basis": labels, "density_matrix": bool(density), "layout": "interleaved re, im",
                   "states": states}
        (out / "final_states.json").write_text(json.dumps(payload) + "\n")
        files.append("final_states.json")
    manifest = {
        "scenario": str(args.scenario), "scenario_hash": loaded.hash, "seed": seed, "shots": shots,
        "solver": res.solver, "dt": float(job.timeline.dts[0]) if len(job.timeline.dts) else None,
        "density_matrix": bool(density), "overrides": overrides,
        "parameters": [{k: _json_value(v) for k, v in p.items()} for p in res.parameters],
        "versions": _versions(), "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(files) + 1} file(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args) -> int:
    from .benchmarks import benchmark_blockade, benchmark_rabi

    if args.which == "rabi":
        methods = tuple(args.method) if args.method else ("se", "me", "mcwf")
        rows = benchmark_rabi(methods=methods, trajectories=args.trajectories, seed=args.seed)
        print(f"{'method':<8}{'max error':>12}{'time [s]':>10}")
        for r in rows:
            print(f"{r.method:<8}{r.max_error:>12.2e}{r.wall_time:>10.2f}")
        data = [r.__dict__ for r in rows]
    else:
        sizes = args.n_atoms or [2, 3, 4, 5, 6]
        if min(sizes) < 1:
            raise CliError("--n-atoms values must be >= 1", EXIT_PARSE)
        rows = benchmark_blockade(sizes, subspace=args.subspace, compare=not args.no_compare)
        print(f"{'N':>3}{'dim':>7}{'ratio':>9}{'deviation':>12}{'time [s]':>10}")
        for r in rows:
            dev = f"{r['deviation']:.2e}" if "deviation" in r else "-"
            print(f"{r['n_atoms']:>3}{r['dimension']:>7}{r['ratio']:>9.4f}{dev:>12}{r['wall_time']:>10.2f}")
        data = rows
    if args.output:
        Path(args.output).write_text(json.dumps(data, indent=1) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# example


def cmd_example(args) -> int:
    from .bell422 import Bell422Config, EnvelopeError, run_bell422

    cfg = Bell422Config(shots=args.shots, seed=args.seed, threads=args.threads, envelope=args.envelope)
    if args.ideal:
        cfg = cfg.ideal()
    if args.error_rate is not None:
        if not 0.0 <= args.error_rate <= 1.0:
            raise CliError("--error-rate must lie in [0, 1]", EXIT_PARSE)
        cfg.pauli_error_rate = args.error_rate
    gate = args.gate or ("envelope" if args.envelope else "reference")
    try:
        report = run_bell422(cfg, reference_cz=gate == "reference")
    except EnvelopeError as exc:
        raise CliError(str(exc), EXIT_PARSE) from None
    except (KeyError, ValueError) as exc:
        raise CliError(f"gate envelope: {exc}", EXIT_INVALID) from None
    print(report.table())
    if report.gate_info:
        gi = report.gate_info
        print(f"gate: conditional phase {gi['conditional_phase']:.4f} rad, leakage {gi['leakage']:.2e}")
    if args.output:
        m = report.metrics
        Path(args.output).write_text(json.dumps({
            "F_raw": m.F_raw, "P_even": m.P_even, "F_post": m.F_post, "F_syndrome": m.F_syndrome,
            "populations": report.populations, "shots": report.shots, "errors": report.errors}, indent=1) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atomdyn", description="Neutral-atom device simulator.")
    p.add_argument("--version", action="version", version=f"atomdyn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a YAML or JSON scenario")
    r.add_argument("scenario")
    r.add_argument("--shots", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--dt", help="override the default step, e.g. '5 ns'")
    r.add_argument("--density-matrix", action="store_true")
    r.add_argument("--final-state", action="store_true", help="also write the final states")
    r.add_argument("--output", "-o", help="output directory (default from the scenario)")
    r.add_argument("--threads", type=int)
    r.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="override a parameter's default (bare numbers are SI)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmark", help="accuracy benchmarks against closed forms")
    b.add_argument("which", choices=["rabi", "blockade"])
    b.add_argument("--method", action="append", choices=["se", "me", "mcwf"], help="rabi: methods to run")
    b.add_argument("--trajectories", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n-atoms", type=int, nargs="+", help="blockade: atom numbers")
    b.add_argument("--subspace", action="store_true", help="blockade: single-excitation subspace")
    b.add_argument("--no-compare", action="store_true", help="blockade: skip the other-basis comparison")
    b.add_argument("--output", "-o", help="write the rows as JSON")
    b.set_defaults(func=cmd_benchmark)

    e = sub.add_parser("example", help="built-in device examples")
    e.add_argument("name", choices=["bell422"])
    e.add_argument("--shots", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--ideal", action="store_true", help="turn every noise source off")
    e.add_argument("--gate", choices=["reference", "envelope"],
                   help="exact CZ channel or the simulated pulse envelope")
    e.add_argument("--envelope", metavar="PATH", help="gate envelope JSON (implies --gate envelope)")
    e.add_argument("--error-rate", type=float, help="probability of one injected X or Z error per shot")
    e.add_argument("--threads", type=int)
    e.add_argument("--output", "-o", help="write the metrics as JSON")
    e.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SimulationError, FloatingPointError) as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
