"""Command-line front end: ``bpsim <subcommand> [flags]``.

Structured results go to stdout (or ``--out``) as JSON, tables as CSV, and
progress to stderr.  Exit codes: 0 success, 1 verification failure, 2 input
error, 3 capacity error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from . import __version__, rng
from .congest import DEFAULT_TIME_BITS, dobrushin_infinity_norm, run_congest, run_congest_chunked
from .coupling import adversarial_family, jaccard_similarity, sample_streams
from .engine import EngineConfig, run_replicas, simulate_chunked, simulate_fixpoint, simulate_sequential
from .errors import BPSimError, CapacityError, InputError
from .schedule import depth_tail_bound, generate_schedule, update_depths
from .spin_model import (
    Graph,
    ModelSpec,
    build_graph,
    build_rule,
    config_indices,
    exact_gibbs_distribution,
    index_config,
    influence_matrix,
    load_model_spec,
    operator_norm,
    read_edge_list,
    tv_distance,
)

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_CAPACITY = 0, 1, 2, 3
VERIFY_MAX_N = 200
TV_MAX_STATES = 4096
DEPTH_LEVELS = (10, 20, 40)


@dataclass
class RunManifest:
    subcommand: str
    graph: str | None = None
    model: dict | None = None
    T: float = 0.0
    master_seed: int = 0
    backend: str = "engine"
    out: str | None = None
    repetitions: int | None = None
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Loading


def random_regular(n: int, degree: int, seed: int) -> Graph:
    if degree == 0:
        return build_graph(n, [])
    if degree >= n or (n * degree) % 2:
        raise InputError(f"no {degree}-regular graph on {n} vertices")
    g = nx.random_regular_graph(degree, n, seed=seed % (2**32))
    return build_graph(n, g.edges())


def load_graph(args) -> tuple[Graph, str]:
    if args.graph:
        return read_edge_list(args.graph), str(args.graph)
    if args.n is not None:
        deg = args.degree or 0
        return random_regular(args.n, deg, args.seed), f"random-regular:n={args.n},degree={deg},seed={args.seed}"
    raise InputError("a graph is required: pass --graph PATH or --n N [--degree D]")


def load_model(arg: str | None) -> ModelSpec:
    if arg is None:
        raise InputError("a model is required: pass --model PATH or inline JSON")
    if arg.lstrip().startswith("{"):
        try:
            return ModelSpec.from_dict(json.loads(arg))
        except json.JSONDecodeError as exc:
            raise InputError(f"inline model: invalid JSON ({exc.msg})") from None
    return load_model_spec(arg)


def _initial(args, graph: Graph, q: int) -> np.ndarray:
    if not getattr(args, "x0", None):
        return np.zeros(graph.n, dtype=np.int64)
    try:
        x0 = np.array([int(s) for s in args.x0.split(",")], dtype=np.int64)
    except ValueError:
        raise InputError("--x0 must be comma-separated integers") from None
    if x0.size != graph.n or x0.min() < 0 or x0.max() >= q:
        raise InputError(f"--x0 must list {graph.n} spins in 0..{q - 1}")
    return x0


def _setup(args):
    graph, gdesc = load_graph(args)
    spec = load_model(args.model)
    spec.lambdas(graph.n)  # rejects a lambda list of the wrong length
    rule = build_rule(spec, graph)
    return graph, gdesc, spec, rule


def _manifest(args, gdesc=None, spec=None, repetitions=None, **options) -> RunManifest:
    return RunManifest(
        subcommand=args.command,
        graph=gdesc,
        model=spec.to_dict() if spec is not None else None,
        T=float(getattr(args, "T", 0.0) or 0.0),
        master_seed=args.seed,
        backend=getattr(args, "backend", "engine"),
        out=args.out,
        repetitions=repetitions,
        options=options,
    )


def _emit_json(args, manifest: RunManifest, payload: dict) -> None:
    doc = {"version": __version__, "manifest": manifest.to_dict(), **payload}
    _write(args, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _emit_csv(args, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _write(args, buf.getvalue())


def _write(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _engine_config(args) -> EngineConfig:
    return EngineConfig(master_seed=args.seed, chunk_length=args.chunk_len, worker_count=args.workers)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_sample(args) -> int:
    graph, gdesc, spec, rule = _setup(args)
    x0 = _initial(args, graph, spec.q)
    if args.backend == "congest":
        final, trace = run_congest_chunked(
            x0, args.T, graph, rule, args.seed, args.chunk_len, args.congest_L, args.time_bits,
            worker_count=args.workers,
        )
        telemetry = trace.to_dict()
    else:
        res = simulate_chunked(x0, args.T, graph, rule, _engine_config(args))
        final = res.final
        telemetry = res.telemetry_dict(include_wall=False)
    m = _manifest(args, gdesc, spec, chunk_len=args.chunk_len, congest_L=args.congest_L, time_bits=args.time_bits,
                  workers=args.workers, x0=x0.tolist())
    _emit_json(args, m, {"final": final.tolist(), "telemetry": telemetry})
    return EXIT_OK


def cmd_verify(args) -> int:
    graph, gdesc, spec, rule = _setup(args)
    if graph.n > VERIFY_MAX_N:
        raise InputError(f"verify replays every update sequentially; n={graph.n} exceeds {VERIFY_MAX_N}")
    x0 = _initial(args, graph, spec.q)
    C = dobrushin_infinity_norm(rule, graph) if args.backend == "congest" and args.congest_L is None else None
    mismatches = 0
    first = None
    for c in range(args.cases):
        seed = rng.derive_seed(args.seed, rng.DOMAIN_CASE, c)
        sched = generate_schedule(graph.n, args.T, seed)
        ref = simulate_sequential(x0, sched, graph, rule, seed)
        if args.backend == "congest":
            out, trace = run_congest(x0, args.T, graph, rule, seed, args.congest_L, args.time_bits, C=C,
                                     worker_count=args.workers, schedule=sched)
            bad = not np.array_equal(out, ref.final)
            where = {"case": c, "seed": seed, "final": out.tolist(), "expected": ref.final.tolist(),
                     "trace_success": trace.success}
        else:
            _, tel = simulate_fixpoint(x0, sched, graph, rule, seed, worker_count=args.workers, track_depth=False)
            upd = ref.first_mismatch(tel.trajectory)
            bad = upd is not None
            where = {"case": c, "seed": seed, "update": list(upd) if upd else None}
        if bad:
            mismatches += 1
            if first is None:
                first = where
                _progress(f"mismatch in case {c}: {where}")
    m = _manifest(args, gdesc, spec, repetitions=args.cases, congest_L=args.congest_L, time_bits=args.time_bits)
    _emit_json(args, m, {"cases": args.cases, "mismatches": mismatches, "first_divergence": first})
    return EXIT_OK if mismatches == 0 else EXIT_VERIFY


def cmd_tv(args) -> int:
    graph, gdesc, spec, rule = _setup(args)
    states = spec.q**graph.n
    if states > TV_MAX_STATES:
        raise CapacityError(f"exact enumeration needs q^n = {states} states, above the budget {TV_MAX_STATES}")
    x0 = _initial(args, graph, spec.q)
    exact = exact_gibbs_distribution(spec, graph)
    if args.backend == "congest":
        C = dobrushin_infinity_norm(rule, graph) if args.congest_L is None else None
        finals = np.empty((args.runs, graph.n), dtype=np.int64)
        for r in range(args.runs):
            finals[r], _ = run_congest_chunked(x0, args.T, graph, rule, rng.derive_seed(args.seed, r),
                                               args.chunk_len, args.congest_L, args.time_bits, C=C)
    else:
        finals = run_replicas(spec, graph, x0, args.T, args.runs, _engine_config(args))
    hist = np.bincount(config_indices(finals, spec.q), minlength=states).astype(np.float64)
    emp = hist / hist.sum()
    table = [
        {"config": list(index_config(i, graph.n, spec.q)), "empirical": float(emp[i]), "exact": float(exact[i])}
        for i in range(states)
    ]
    m = _manifest(args, gdesc, spec, repetitions=args.runs, chunk_len=args.chunk_len, x0=x0.tolist())
    _emit_json(args, m, {"runs": args.runs, "tv": tv_distance(emp, exact), "table": table})
    return EXIT_OK


def coupling_rows(q: int, pairs: int, draws: int, seed: int) -> list[list]:
    """Benchmark rows for random pairs and the adversarial families ``k = 1, 2, 3``."""
    gen = np.random.default_rng(seed)
    rows = []
    sites = np.arange(draws)

    def agreement_row(kind, label, p, p2, xs, ys):
        d = tv_distance(p, p2)
        jac = jaccard_similarity(p, p2)
        agree = float(np.mean(xs == ys))
        sigma = math.sqrt(max(jac * (1 - jac), 1e-12) / draws)
        sig_d = math.sqrt(max(min(2 * d, 1.0) * (1 - min(2 * d, 1.0)), 1e-12) / draws)
        ok_j = agree >= jac - 3 * sigma
        ok_2 = (1 - agree) <= 2 * d + 3 * sig_d
        return [kind, label, q if kind == "random" else len(p), f"{d:.6f}", f"{jac:.6f}", f"{agree:.6f}",
                f"{sigma:.6f}", int(ok_j), int(ok_2)]

    for k in range(pairs):
        p = gen.dirichlet(np.ones(q))
        p2 = p if k == 0 else gen.dirichlet(np.ones(q))
        s = rng.derive_seed(seed, k)
        xs = sample_streams(np.broadcast_to(p, (draws, q)), s, sites, 1)
        ys = sample_streams(np.broadcast_to(p2, (draws, q)), s, sites, 1)
        rows.append(agreement_row("random", f"pair{k}", p, p2, xs, ys))
    for k in (1, 2, 3):
        omega = max(q, k + 1)
        fam = adversarial_family(k, omega)
        s = rng.derive_seed(seed, 1_000_000 + k)
        outs = [sample_streams(np.broadcast_to(p, (draws, omega)), s, sites, 1) for p in fam]
        for i in range(len(fam)):
            for j in range(i + 1, len(fam)):
                rows.append(agreement_row(f"adversarial-k{k}", f"{i}-{j}", fam[i], fam[j], outs[i], outs[j]))
    return rows


COUPLING_HEADER = ["kind", "label", "omega", "d_tv", "jaccard", "agreement", "sigma", "jaccard_ok", "two_competitive_ok"]


def cmd_coupling_bench(args) -> int:
    if args.q < 2:
        raise InputError("q must be at least 2")
    rows = coupling_rows(args.q, args.pairs, args.draws, args.seed)
    _emit_csv(args, COUPLING_HEADER, rows)
    ok = all(r[-1] and r[-2] for r in rows)
    return EXIT_OK if ok else EXIT_VERIFY


def depth_rows(graph: Graph, T: float, seeds: int, seed: int, levels=DEPTH_LEVELS) -> tuple[np.ndarray, list[list]]:
    """Max depth per schedule and the tail table against the analytic bound."""
    maxd = np.zeros(seeds, dtype=np.int64)
    for s in range(seeds):
        sched = generate_schedule(graph.n, T, rng.derive_seed(seed, s))
        d = update_depths(sched, graph)
        maxd[s] = int(d.max()) if d.size else 0
    top = int(maxd.max()) if seeds else 0
    ells = sorted(set(range(1, top + 2)) | set(levels))
    rows = []
    for ell in ells:
        p = float(np.mean(maxd >= ell))
        sigma = math.sqrt(p * (1 - p) / seeds)
        bound = depth_tail_bound(graph.n, graph.max_degree, T, ell)
        rows.append([ell, int((maxd >= ell).sum()), f"{p:.6f}", f"{sigma:.6f}", f"{bound:.6g}", int(p <= bound + 3 * sigma)])
    return maxd, rows


DEPTH_HEADER = ["ell", "count_ge", "p_empirical", "sigma", "bound", "within_bound"]


def cmd_depth_stats(args) -> int:
    graph, _ = load_graph(args)
    _, rows = depth_rows(graph, args.T, args.seeds, args.seed)
    _emit_csv(args, DEPTH_HEADER, rows)
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_VERIFY


def norm_report(spec: ModelSpec, graph: Graph, C: float) -> dict:
    rho = influence_matrix(build_rule(spec, graph), graph)
    norms = {"norm_1": operator_norm(rho, 1), "norm_2": operator_norm(rho, 2), "norm_inf": operator_norm(rho, np.inf)}
    return {
        **norms,
        "dobrushin": norms["norm_1"] < 1,
        "hayes_l2": norms["norm_2"] < 1,
        "dobrushin_shlosman": norms["norm_inf"] < 1,
        "C": C,
        "within_C": {k: v <= C for k, v in norms.items()},
    }


def cmd_norm(args) -> int:
    graph, gdesc, spec, _ = _setup(args)
    _emit_json(args, _manifest(args, gdesc, spec, C=args.C), norm_report(spec, graph, args.C))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser, model: bool = True) -> None:
    p.add_argument("--graph", help="edge-list file: header 'n m', then one 'u v' line per edge")
    p.add_argument("--n", type=int, help="generate a random regular graph with N sites instead of --graph")
    p.add_argument("--degree", type=int, default=None, help="degree of the generated graph (default 0)")
    if model:
        p.add_argument("--model", help="model JSON file or inline JSON object")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", help="write output here instead of stdout")


def _sim(p: argparse.ArgumentParser, T: float = 1.0) -> None:
    p.add_argument("--T", type=float, default=T, help="time horizon")
    p.add_argument("--backend", choices=("engine", "congest"), default="engine")
    p.add_argument("--workers", type=int, default=1, help="resolution workers (0 = all cores)")
    p.add_argument("--chunk-len", dest="chunk_len", type=float, default=None, help="chunk length (default ln n)")
    p.add_argument("--congest-L", dest="congest_L", type=int, default=None, help="Phase II rounds")
    p.add_argument("--time-bits", dest="time_bits", type=int, default=DEFAULT_TIME_BITS)
    p.add_argument("--x0", help="initial configuration as comma-separated spins (default all 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bpsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bpsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="simulate to time T and print the final configuration")
    _common(p)
    _sim(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="compare parallel and sequential trajectories on random seeds")
    _common(p)
    _sim(p)
    p.add_argument("--cases", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tv", help="total variation distance of the sampler to the exact Gibbs law")
    _common(p)
    _sim(p)
    p.add_argument("--runs", type=int, default=10_000)
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("coupling-bench", help="agreement of coupled samples on random and adversarial pairs")
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_coupling_bench)

    p = sub.add_parser("depth-stats", help="tail of the maximum update depth against the analytic bound")
    _common(p, model=False)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=1000)
    p.set_defaults(func=cmd_depth_stats)

    p = sub.add_parser("norm", help="operator norms of the influence matrix and condition verdicts")
    _common(p)
    p.add_argument("--C", type=float, default=1.0, help="threshold for the bounded-norm verdicts")
    p.set_defaults(func=cmd_norm)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("runs", "cases", "seeds", "draws", "pairs"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            parser.error(f"--{name} must be positive")
    if getattr(args, "T", 0) is not None and getattr(args, "T", 0) < 0:
        parser.error("--T must be non-negative")
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BPSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
