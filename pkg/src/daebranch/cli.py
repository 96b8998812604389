"""daebranch command line.

Exit codes: 0 success, 1 usage or config error, 2 mathematical precondition
failure (degree undefined, index assumption violated, no convergence...).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import dumps, fmt, load_config, problem_from_config
from .continuation import ContinuationConfig, continue_branch, scan_trivial_origins
from .degree import Box, degree_on_manifold, degree_sign_sum, winding_number_2d
from .errors import ConfigError, DaeBranchError, DegreeError
from .model import HistorySegment, ImplicitRFDAE
from .reduction import field, head_history, project_to_manifold, tangency_residual, _solve_d2g
from .solver import SolverConfig, integrate
from .transform import alignment_for, block_decompose, build_JE, semi_explicit_from_implicit


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(payload: dict, as_json: bool, lines: list[str]):
    if as_json:
        print(json.dumps(payload, indent=2, default=_jsonable))
    else:
        print("\n".join(lines))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load(args):
    cfg = load_config(args.config)
    return cfg, problem_from_config(cfg)


def _box(args, cfg, n) -> Box:
    if args.box:
        vals = args.box
        if len(vals) != 2 * n:
            raise ConfigError(f"--box needs {2 * n} numbers (lower upper per coordinate), got {len(vals)}")
        return Box(vals[0::2], vals[1::2])
    if "box" in cfg:
        b = cfg["box"]
        return Box(b["lower"], b["upper"])
    raise ConfigError("no box given: use --box or a 'box' entry in the config")


def _semi(problem):
    return semi_explicit_from_implicit(problem) if isinstance(problem, ImplicitRFDAE) else problem


def _vec(v):
    return [fmt(x) for x in np.asarray(v, dtype=float).reshape(-1)]


# --------------------------------------------------------------------------
def cmd_degree(args) -> int:
    cfg, problem = _load(args)
    if isinstance(problem, ImplicitRFDAE):
        F, dF, n = problem.F, problem.jacobian, problem.n
    else:
        F, dF, n = problem.F, problem.dF, problem.n
    box = _box(args, cfg, n)
    res = degree_sign_sum(F, dF, box, args.grid)
    payload = {"problem": problem.name, "box": {"lower": box.lower, "upper": box.upper},
               "degree": res.to_dict()}
    lines = [f"problem {problem.name}: deg(F, box) = {res.value} ({len(res.zeros)} zeros)"]
    for p, s, d in res.zeros:
        lines.append(f"  zero {' '.join(_vec(p))}  sign {s:+d}  det {fmt(d)}")
    if n == 2:
        w = winding_number_2d(F, box)
        payload["winding_number"] = w
        lines.append(f"winding number on the boundary: {w}")
        if w != res.value:
            raise DegreeError(f"sign sum {res.value} and winding number {w} disagree")
    if not isinstance(problem, ImplicitRFDAE):
        m = degree_on_manifold(problem, box, args.grid)
        payload["manifold_degree"] = m.to_dict()
        lines.append(f"degree of the tangent field on M: {m.value}")
    for wmsg in res.warnings:
        lines.append(f"warning: {wmsg}")
    _emit(payload, args.json, lines)
    return 0


def cmd_transform(args) -> int:
    cfg, problem = _load(args)
    if not isinstance(problem, ImplicitRFDAE):
        raise ConfigError("transform needs an implicit problem (kind 'implicit')")
    dec = block_decompose(problem.E)
    je = build_JE(dec)
    times = cfg.get("sample_times")
    align = alignment_for(problem, times)
    semi = semi_explicit_from_implicit(problem, dec)
    out = Path(args.out) if args.out else Path(f"{semi.name}.json")
    out.write_text(dumps(semi.source) + "\n", encoding="utf-8")
    report = {
        "problem": problem.name,
        "rank": dec.r,
        "decomposition": dec.method,
        "E11": dec.E11, "E12": dec.E12,
        "JE": je.JE,
        "alignment": align.to_dict(),
        "c11_nonsingular": bool(align.condition_b_holds and align.min_sigma_c11 > 1e-10),
        "transformed": semi.source,
        "written_to": str(out),
    }
    lines = [
        f"problem {problem.name}: rank E = {dec.r} ({dec.method} bases)",
        f"J_E = {np.array2string(je.JE, precision=17)}",
        f"alignment ({align.source} P, Q): condition_a={align.condition_a_holds} "
        f"condition_b={align.condition_b_holds}",
        f"  lower block norm {fmt(align.lower_block_norm)}  C12 norm {fmt(align.c12_norm)}  "
        f"min sigma(C11) {fmt(align.min_sigma_c11)}",
        f"  P^T C(t0) Q = {np.array2string(align.blocks[0], precision=17)}",
        "transformed problem:",
        *(f"  x{i + 1}' = {e}" for i, e in enumerate(semi.source["f"])),
        *(f"  0 = {e}" for e in semi.source["g"]),
        *(f"  h{i + 1} = {e}" for i, e in enumerate(semi.source["h"])),
        f"written to {out}",
    ]
    _emit(report, args.json, lines)
    return 0


def _initial_history(problem, head, tau_nodes=33) -> HistorySegment:
    head = np.asarray(head if head else np.zeros(problem.k), dtype=float)
    if head.size == problem.k:
        x, yg = head, np.zeros(problem.s)
    elif head.size == problem.n:
        x, yg = problem.split(head)
    else:
        raise ConfigError(f"--head needs {problem.k} or {problem.n} numbers")
    y = project_to_manifold(problem, x, yg)
    z = np.concatenate([x, y])
    return HistorySegment.constant(z, problem.tau_max, tau_nodes if problem.tau_max > 0 else 1)


def cmd_simulate(args) -> int:
    cfg, problem = _load(args)
    problem = _semi(problem)
    scfg = SolverConfig.from_dict(cfg.get("solver"))
    if args.step:
        scfg = SolverConfig(**{**scfg.to_dict(), "step": args.step})
    t0 = args.t0
    t1 = args.t1 if args.t1 is not None else t0 + problem.period
    hist = _initial_history(problem, args.head)
    traj = integrate(problem, args.lam, hist, (t0, t1), scfg)
    text = traj.to_csv(args.out)
    if args.out is None and not args.json:
        sys.stdout.write(text)
    payload = {"problem": problem.name, "lambda": args.lam, "t_span": [t0, t1], "steps": traj.ts.size - 1,
               "final_state": traj.head, "max_drift": traj.max_drift, "csv": args.out}
    if args.json:
        _emit(payload, True, [])
    elif args.out:
        print(f"{traj.ts.size - 1} steps, final state {' '.join(_vec(traj.head))}, "
              f"max drift {fmt(traj.max_drift)}; wrote {args.out}")
    return 0


def _suffixed(path: str, i: int, many: bool) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}_o{i}{p.suffix}") if many else p


def cmd_branch(args) -> int:
    cfg, problem = _load(args)
    problem = _semi(problem)
    scfg = SolverConfig.from_dict(cfg.get("solver"))
    ccfg_d = dict(cfg.get("continuation", {}))
    cc = ContinuationConfig.from_dict(ccfg_d)
    lam_max = args.lam if args.lam is not None else float(ccfg_d.get("lambda_max", 0.5))
    amp_max = args.amplitude_max if args.amplitude_max is not None else float(ccfg_d.get("amplitude_max", 10.0))
    ds = args.ds if args.ds is not None else cc.ds
    if args.origin:
        origins = [(np.asarray(args.origin, dtype=float), None)]
        if origins[0][0].size != problem.n:
            raise ConfigError(f"--origin needs {problem.n} numbers")
    else:
        origins = scan_trivial_origins(problem, _box(args, cfg, problem.n), args.grid)
        if not origins:
            raise DegreeError("no zeros of F in the box: nothing to continue from")
    many = len(origins) > 1
    summaries, lines = [], []
    total = sum(s for _, s in origins if s is not None)
    if not args.origin:
        lines.append(f"{len(origins)} trivial origins, total index {total}")
    for i, (o, _) in enumerate(origins):
        br = continue_branch(problem, o, lam_max, amp_max, ds, scfg, cc)
        summ = br.summary()
        if args.out:
            target = _suffixed(args.out, i, many)
            br.to_csv(target)
            summ["csv"] = str(target)
        elif not args.json:
            sys.stdout.write(br.to_csv())
        if args.profiles:
            d = Path(args.profiles)
            d.mkdir(parents=True, exist_ok=True)
            for j, pt in enumerate(br.points):
                prof = d / f"origin{i}_point{j}.csv"
                rows = ["t," + ",".join([f"x{c + 1}" for c in range(problem.k)] +
                                        [f"y{c + 1}" for c in range(problem.s)])]
                rows += [",".join([fmt(t)] + _vec(z)) for t, z in zip(pt.pair.times, pt.pair.states)]
                prof.write_text("\n".join(rows) + "\n", encoding="utf-8")
        summaries.append(summ)
        lines.append(f"origin {' '.join(_vec(o))} (index {br.local_index:+d}): {len(br.points)} points, "
                     f"last lambda {fmt(br.points[-1].lam)}, termination {br.termination}")
        lines.extend(f"  warning: {w}" for w in br.warnings)
    if args.json or args.out:
        _emit({"problem": problem.name, "total_index": total if not args.origin else None,
               "branches": summaries}, args.json, lines)
    else:
        sys.stderr.write("\n".join(lines) + "\n")
    return 0


def cmd_check(args) -> int:
    cfg, problem = _load(args)
    problem = _semi(problem)
    box = _box(args, cfg, problem.n)
    xbox, ybox = box.split(problem.k)
    rng = np.random.default_rng(args.seed)
    results = []

    # tangency of psi + lam upsilon at random points of M
    worst, sampled = 0.0, 0
    tangency_ok = True
    note = ""
    try:
        for _ in range(args.samples):
            p = rng.uniform(xbox.lower, xbox.upper)
            q = project_to_manifold(problem, p, rng.uniform(ybox.lower, ybox.upper))
            z = np.concatenate([p, q])
            hist = head_history(z, problem.tau_max)
            for lam in (0.0, 1.0, 10.0):
                v = field(problem, lam, float(rng.uniform(0, problem.period)), z, hist)
                worst = max(worst, tangency_residual(problem, p, q, v))
            sampled += 1
    except DaeBranchError as err:
        tangency_ok, note = False, str(err)
    tangency_ok = tangency_ok and worst <= 1e-8
    results.append(("tangency", tangency_ok, f"max residual {fmt(worst)} over {sampled} points {note}".strip()))

    # invertibility of d2g on a grid that contains the box center
    m = args.grid if args.grid % 2 == 1 else args.grid + 1
    bad = None
    for z in box.grid(m):
        p, q = problem.split(z)
        _, d2g = problem.constraint_jacobians(p, q)
        try:
            _solve_d2g(d2g, np.zeros(problem.s), z)
        except DaeBranchError:
            bad = z
            break
    results.append(("d2g_invertible", bad is None,
                    "ok on the sample grid" if bad is None else f"d2g singular at {' '.join(_vec(bad))}"))

    # |deg(psi, M)| == |deg(F)|
    try:
        dF = degree_sign_sum(problem.F, problem.dF, box, args.grid)
        dM = degree_on_manifold(problem, box, args.grid)
        ok = abs(dF.value) == abs(dM.value)
        results.append(("degree_reduction", ok, f"deg(F) = {dF.value}, deg(psi on M) = {dM.value}"))
    except DaeBranchError as err:
        results.append(("degree_reduction", False, str(err)))

    passed = all(ok for _, ok, _ in results)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {msg}" for name, ok, msg in results]
    lines.append(f"{'PASS' if passed else 'FAIL'} {problem.name}")
    _emit({"problem": problem.name, "passed": passed,
           "checks": [{"name": n, "passed": ok, "detail": msg} for n, ok, msg in results]}, args.json, lines)
    return 0 if passed else 2


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="daebranch", description="Degree, reduction and periodic branches for delay DAEs.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, box=True):
        p.add_argument("--config", required=True, help="JSON config file or built-in problem name")
        p.add_argument("--json", action="store_true", help="structured output")
        p.add_argument("--out", help="output file")
        if box:
            p.add_argument("--box", type=float, nargs="+", metavar="X",
                           help="lower upper pairs, one per coordinate: --box -3 3 -3 3")
            p.add_argument("--grid", type=int, default=15, help="multistart points per axis")

    p = sub.add_parser("degree", help="Brouwer degree of F on a box")
    common(p)
    p.set_defaults(fn=cmd_degree)

    p = sub.add_parser("transform", help="reduce an implicit problem to semi-explicit form")
    common(p, box=False)
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("simulate", help="integrate and write a trajectory CSV")
    common(p, box=False)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--head", type=float, nargs="+", help="initial x (or x and a guess for y)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("branch", help="continue periodic pairs from the trivial ones")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="lambda_max")
    p.add_argument("--amplitude-max", type=float)
    p.add_argument("--ds", type=float)
    p.add_argument("--origin", type=float, nargs="+", help="start from this zero of F only")
    p.add_argument("--profiles", help="directory for per-point solution CSVs")
    p.set_defaults(fn=cmd_branch)

    p = sub.add_parser("check", help="tangency, index-1 and degree reduction checks")
    common(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_check, grid=11)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except DaeBranchError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
