"""Command-line front end: ``solve``, ``converge`` and ``compare-timing``.

Every run writes its outputs as CSV files into ``--out`` together with a
``manifest.txt`` echoing the resolved configuration.  Exit codes: 0 ok,
1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .hybrid import (relative_difference, solve_conforming, timing_report, write_solution_csv,
                     write_timing_csv)
from .material import MaterialField, load_material_csv
from .mesh import FAMILIES, Mesh, generate_family, load_mesh, save_mesh
from .postprocess import write_ustar_csv
from .verification import (ERROR_NAMES, ConvergenceTable, ManufacturedSolution, patch_test_case,
                           solve_and_measure, testcase_2d)

log = logging.getLogger("hybridvem")

CASE_DEFAULTS = {"tc2d": (1e5, 0.5), "patch": (1.0, 1.0)}
DEFAULT_SIGMA0 = (1.0, -0.5, 0.25)
EQUIVALENCE_TOL = 1e-8


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    family: str | None
    mesh: str | None
    n: int
    levels: int
    case: str
    lam: float
    mu: float
    material: str | None
    sigma0: tuple[float, float, float]
    solver: str
    seed: int
    jitter: float
    tol: float
    out: str

    @property
    def sizes(self) -> list[int]:
        return [self.n * 2 ** i for i in range(self.levels + 1)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--family", choices=FAMILIES, help="generated mesh family (default square)")
    src.add_argument("--mesh", help="polygonal mesh file")
    common.add_argument("--n", type=int, default=None,
                        help="cells per side of the (coarsest) generated mesh")
    common.add_argument("--levels", type=int, default=None,
                        help="number of refinements k; meshes n, 2n, ..., 2^k n")
    common.add_argument("--case", choices=sorted(CASE_DEFAULTS), default="tc2d")
    common.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="first Lame parameter (case default if omitted)")
    common.add_argument("--mu", type=float, default=None, help="shear modulus")
    common.add_argument("--material", help="per-cell CSV cell_id,lambda,mu (solve only)")
    common.add_argument("--sigma0", type=float, nargs=3, metavar=("S11", "S22", "S12"),
                        default=DEFAULT_SIGMA0, help="constant stress of the patch case")
    common.add_argument("--solver", choices=("hybrid", "conforming", "both"), default="hybrid")
    common.add_argument("--seed", type=int, default=0, help="seed of the rand family")
    common.add_argument("--jitter", type=float, default=0.3, help="vertex jitter of the rand family")
    common.add_argument("--tol", type=float, default=1e-10, help="relative residual tolerance")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hybridvem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve on one mesh")
    sub.add_parser("converge", parents=[common], help="convergence study on a mesh family")
    sub.add_parser("compare-timing", parents=[common], help="time hybrid and conforming solvers")
    return p


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    lam0, mu0 = CASE_DEFAULTS[ns.case]
    defaults_n = {"solve": 8, "converge": 4, "compare-timing": 16}
    defaults_levels = {"solve": 0, "converge": 4, "compare-timing": 2}
    cfg = RunConfig(
        command=ns.command,
        family=None if ns.mesh else (ns.family or "square"),
        mesh=ns.mesh,
        n=ns.n if ns.n is not None else defaults_n[ns.command],
        levels=ns.levels if ns.levels is not None else defaults_levels[ns.command],
        case=ns.case,
        lam=lam0 if ns.lam is None else ns.lam,
        mu=mu0 if ns.mu is None else ns.mu,
        material=ns.material,
        sigma0=tuple(ns.sigma0),
        solver=ns.solver,
        seed=ns.seed,
        jitter=ns.jitter,
        tol=ns.tol,
        out=ns.out,
    )
    if cfg.n < 1 or cfg.levels < 0:
        raise UsageError("--n must be positive and --levels nonnegative")
    if cfg.command == "converge" and cfg.mesh:
        raise UsageError("converge needs a generated family, not --mesh")
    if cfg.command == "converge" and cfg.levels < 1:
        raise UsageError("converge needs --levels >= 1")
    if cfg.material and cfg.command != "solve":
        raise UsageError("--material is only supported by solve")
    if not 0.0 <= cfg.jitter < 0.5:
        raise UsageError("--jitter must lie in [0, 0.5)")
    if cfg.tol <= 0:
        raise UsageError("--tol must be positive")
    return cfg


def write_manifest(cfg: RunConfig, outdir: Path) -> None:
    with (outdir / "manifest.txt").open("w", encoding="utf-8") as fh:
        fh.write(f"hybridvem {__version__}\n")
        for k, v in asdict(cfg).items():
            fh.write(f"{k} = {v}\n")


def make_case(cfg: RunConfig) -> ManufacturedSolution:
    if cfg.case == "patch":
        return patch_test_case(cfg.sigma0, cfg.lam, cfg.mu)
    return testcase_2d(cfg.lam, cfg.mu)


def _meshes(cfg: RunConfig):
    if cfg.mesh:
        yield 0, load_mesh(cfg.mesh)
        return
    for n in cfg.sizes:
        yield n, generate_family(cfg.family, n, jitter=cfg.jitter, seed=cfg.seed)


def _write_errors(path: Path, errors: dict[str, float]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["error", "value"])
        for k in ERROR_NAMES:
            w.writerow([k, f"{errors[k]:.17g}"])


def cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    exact = make_case(cfg)
    mesh: Mesh
    if cfg.mesh:
        mesh = load_mesh(cfg.mesh)
    else:
        mesh = generate_family(cfg.family, cfg.n, jitter=cfg.jitter, seed=cfg.seed)
        save_mesh(mesh, outdir / "mesh.poly")
    material = (load_material_csv(cfg.material, mesh.n_cells) if cfg.material
                else MaterialField.uniform(exact.params, mesh.n_cells))
    if cfg.solver in ("hybrid", "both"):
        res, sol, pstar = solve_and_measure(mesh, exact, material, tol=cfg.tol)
        hdir = outdir / "hybrid" if cfg.solver == "both" else outdir
        write_solution_csv(sol, hdir)
        write_ustar_csv(pstar, hdir / "ustar_p1.csv")
        _write_errors(hdir / "errors.csv", res.errors.as_dict())
        print(" ".join(f"{k}={v:.3e}" for k, v in res.errors.as_dict().items()))
    if cfg.solver in ("conforming", "both"):
        conf = solve_conforming(mesh, material, exact.f, exact.g, cfg.tol)
        write_solution_csv(conf, outdir / "conforming" if cfg.solver == "both" else outdir)
    if cfg.solver == "both":
        diff = relative_difference(sol, conf)
        print(f"hybrid vs conforming: sigma {diff['sigma']:.3e}, u {diff['u']:.3e}")
        if max(diff.values()) > EQUIVALENCE_TOL:
            log.error("solver paths disagree: %s", diff)
            return 1
    return 0


def cmd_converge(cfg: RunConfig, outdir: Path) -> int:
    exact = make_case(cfg)
    table = ConvergenceTable(cfg.family)
    compare = cfg.solver == "both"
    for n, mesh in _meshes(cfg):
        res, _, _ = solve_and_measure(mesh, exact, tol=cfg.tol, compare=compare, n=n)
        table.rows.append(res)
        line = f"n={n:4d} h={res.h:.4e} " + " ".join(
            f"{k}={v:.3e}" for k, v in res.errors.as_dict().items())
        if res.equivalence is not None:
            line += f" equiv={max(res.equivalence.values()):.1e}"
        print(line)
        if compare and max(res.equivalence.values()) > EQUIVALENCE_TOL:
            log.error("solver paths disagree at n=%d: %s", n, res.equivalence)
            return 1
    table.write_csv(outdir)
    print("rates (last pair): " + " ".join(f"{k}={table.last_rate(k):.2f}" for k in ERROR_NAMES))
    return 0


def cmd_compare_timing(cfg: RunConfig, outdir: Path) -> int:
    exact = make_case(cfg)
    path = outdir / "timing.csv"
    path.unlink(missing_ok=True)
    for n, mesh in _meshes(cfg):
        material = MaterialField.uniform(exact.params, mesh.n_cells)
        rows, _, _, diff = timing_report(mesh, material, exact.f, exact.g, tol=cfg.tol,
                                         equivalence_tol=EQUIVALENCE_TOL)
        write_timing_csv(rows, path, level=n)
        dims = {r.solver: r.dimension for r in rows}
        print(f"n={n}: hybrid dim {dims['hybrid']}, saddle dim {dims['conforming']}, "
              f"agreement {max(diff.values()):.1e}")
        for r in rows:
            print(f"  {r.solver:10s} {r.phase:16s} {r.seconds:.4f}s")
    return 0


COMMANDS = {"solve": cmd_solve, "converge": cmd_converge, "compare-timing": cmd_compare_timing}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(ns)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hybridvem: error: {exc}", file=sys.stderr)
        return 2
    outdir = Path(cfg.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        write_manifest(cfg, outdir)
        return COMMANDS[cfg.command](cfg, outdir)
    except (ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"hybridvem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
