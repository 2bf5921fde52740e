"""Command-line entry point: ``python -m magschrod <subcommand> --manifest FILE``.

Exit status: 0 when every experiment passes (degenerate pairs count as
passing), 1 when a declared tolerance fails, 2 for manifest or validation
errors.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .carleman import CARLEMAN_COLUMNS, bandlimited_field, verify_carleman, verify_initial_bound
from .grid import SpaceTimeGrid, l2_norm_spacetime
from .manifest import Manifest, ManifestError, load_manifest, write_csv, write_summary
from .solver import ElectromagneticPotential, solve_forward
from .stability import (
    STABILITY_COLUMNS,
    AdmissibilityError,
    DegeneratePairError,
    case2_base,
    make_case1_pair,
    make_case2_pair,
    make_case3_pair,
    make_divfree_pair,
    make_initial_states,
    run_stability,
)

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _sine_mode(grid: SpaceTimeGrid, mode: int) -> np.ndarray:
    u = np.ones(grid.shape)
    for axis, ((a, b), x) in enumerate(zip(grid.extents, grid.axes)):
        shape = [1] * grid.dim
        shape[axis] = x.size
        u = u * np.sin(mode * np.pi * (x - a) / (b - a)).reshape(shape)
    u[grid.boundary_mask] = 0
    return u


def eigenmode_error(grid: SpaceTimeGrid, mode: int = 1) -> float:
    """L2(Q) error of the solver on the free Dirichlet eigenmode."""
    u0 = _sine_mode(grid, mode)
    lam = sum((mode * np.pi / (b - a)) ** 2 for a, b in grid.extents)
    sol = solve_forward(ElectromagneticPotential.zero(grid), u0)
    exact = np.exp(-1j * lam * grid.t).reshape((-1,) + (1,) * grid.dim) * u0
    return l2_norm_spacetime(grid, sol.u - exact)


# -- subcommands ---------------------------------------------------------------


def cmd_solve(m: Manifest, threads: int) -> dict:
    grid = m.grid
    rho_field, A_profiles = case2_base(grid, rho_amp=m.rho, A_amp=m.A_amp)
    A = np.stack([p.value for p in A_profiles], axis=-1)
    div_A = sum(p.grad[..., j] for j, p in enumerate(A_profiles))
    pot = ElectromagneticPotential(grid, rho_field, A, div_A)
    sol = solve_forward(pot, _sine_mode(grid, m.mode))
    nodes = np.arange(int(np.prod(grid.shape)))

    def rows():
        flat = sol.u.reshape(grid.nt, -1)
        for k in range(grid.nt):
            for n in nodes:
                yield (int(n), k, flat[k, n].real, flat[k, n].imag)

    write_csv(m.out_dir / "solution.csv", ("node", "t_index", "re_u", "im_u"), rows())
    norms = sol.norms()
    growth = float(np.max(norms) / norms[0]) if norms[0] > 0 else 0.0
    bound = float(np.exp(np.max(np.abs(pot.rho.imag)) * grid.T)) * (1 + grid.tau**2)
    return {"solve": {"pass": bool(growth <= bound), "norm_growth": growth, "bound": bound}}


def cmd_convergence(m: Manifest, threads: int) -> dict:
    g0 = m.grid
    grids = [g0, g0.refined(), g0.refined().refined()]
    errors = [eigenmode_error(g, m.mode) for g in grids]
    orders = [float("nan")] + [float(np.log2(e0 / e1)) for e0, e1 in zip(errors, errors[1:])]
    write_csv(
        m.out_dir / "convergence.csv",
        ("nx", "nt", "h", "tau", "error", "order"),
        [(g.nx[0], g.nt, max(g.h), g.tau, e, o) for g, e, o in zip(grids, errors, orders)],
    )
    lo, hi = m.tolerances["order_min"], m.tolerances["order_max"]
    ok = all(lo <= o <= hi for o in orders[1:])
    return {"convergence": {"pass": ok, "orders": orders[1:], "errors": errors}}


def cmd_carleman(m: Manifest, threads: int) -> dict:
    rng = np.random.default_rng(m.seed)
    fields = [bandlimited_field(m.grid, rng) for _ in range(m.ensemble)]
    summary = {}
    for lam in m.lambdas:
        weight = m.weight(lam)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            reports = list(pool.map(lambda u: verify_carleman(u, weight, m.s_grid), fields))
        tag = f"lambda={lam:g}"
        for k, rep in enumerate(reports):
            name = f"carleman_lambda{lam:g}_field{k:03d}.csv"
            write_csv(m.out_dir / name, CARLEMAN_COLUMNS, rep.rows())
        c_max = np.max([r.C_hat for r in reports], axis=0)
        top = c_max[len(c_max) // 2:]
        violations = int(sum(r.violations.sum() for r in reports))
        spread = float(top.max() / top.min()) if top.min() > 0 else float("inf")
        summary[f"carleman[{tag}]"] = {
            "pass": violations == 0 and spread < m.tolerances["carleman_factor"],
            "violations": violations,
            "C_hat_max": c_max.tolist(),
            "top_half_spread": spread,
        }
    return summary


def _make_pair(m: Manifest, delta: float):
    g = m.grid
    if m.case == "case1":
        return make_case1_pair(g, delta, m.delta2, a=m.a, power=m.power, M=m.M)
    if m.case == "case2":
        return make_case2_pair(g, delta, power=m.power, M=m.M)
    if m.case == "case3":
        return make_case3_pair(g, delta, power=m.power)
    return make_divfree_pair(g, delta, power=m.power)


def cmd_stability(m: Manifest, threads: int) -> dict:
    pairs = {}
    for delta in m.deltas:
        try:
            pairs[delta] = _make_pair(m, delta)
        except DegeneratePairError:
            pairs[delta] = None
    states = make_initial_states(m.case, m.grid, m.r0)
    rows, summary = [], {}
    for lam in m.lambdas:
        weight = m.weight(lam, s=float(m.s_grid[-1]))
        ratios, all_ok, bound_ok = [], True, True
        for delta, pair in pairs.items():
            key = f"stability[{m.case},lambda={lam:g},delta={delta:g}]"
            if pair is None:
                summary[key] = {"pass": True, "degenerate": True}
                continue
            rep = run_stability(pair, states, weight, threads=threads, keep_fields=True)
            rows.append(rep.row())
            checks = [
                verify_initial_bound(v, weight, s, m.tolerances["initial_bound_slack"])
                for v in rep.v_fields
                for s in m.s_grid[len(m.s_grid) // 2:]
            ]
            eq_lem = all(c.ok for c in checks)
            bound_ok &= eq_lem
            passed = not rep.violation and eq_lem
            all_ok &= passed
            if np.isfinite(rep.ratio):
                ratios.append(rep.ratio)
            summary[key] = {
                "pass": passed,
                "degenerate": rep.degenerate,
                "ratio": rep.ratio,
                "obs_norm": rep.obs_norm,
                "effective_M": rep.effective_M,
                "initial_bound_ok": eq_lem,
                "v0_residual": rep.v0_residual,
                "linearized_residual": rep.linearized_residual,
            }
        if len(ratios) > 1:
            spread = max(ratios) / min(ratios)
            summary[f"stability[{m.case},lambda={lam:g}] ratio spread"] = {
                "pass": spread < m.tolerances["ratio_factor"],
                "spread": spread,
            }
    write_csv(m.out_dir / "stability.csv", STABILITY_COLUMNS, rows)
    return summary


COMMANDS = {
    "solve": cmd_solve,
    "carleman-verify": cmd_carleman,
    "stability": cmd_stability,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magschrod",
        description="Magnetic Schrodinger solver, Carleman-estimate checks and stability experiments.",
    )
    sub = parser.add_subparsers(dest="command", metavar="{solve,carleman-verify,stability,convergence}")
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "stability":
            p.add_argument("case", nargs="?", choices=("case1", "case2", "case3", "case3-divfree"))
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="overrides [experiment] seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_INVALID
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    try:
        m = load_manifest(args.manifest, seed=args.seed, out_dir=args.out)
        if getattr(args, "case", None):
            m.case = args.case
        summary = COMMANDS[args.command](m, max(1, args.threads))
    except (ManifestError, AdmissibilityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    write_summary(m.out_dir / f"summary_{args.command}.json", {"command": args.command, "seed": m.seed, "experiments": summary})
    for key, res in sorted(summary.items()):
        status = "DEGENERATE" if res.get("degenerate") else ("PASS" if res["pass"] else "FAIL")
        print(f"{status:10s} {key}")
    return EXIT_OK if all(r["pass"] for r in summary.values()) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
