"""Command line: ``msle <kind> [--config FILE] [key=value ...]``.

Exit codes: 0 all claims pass, 1 a claim is violated, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import KINDS, ExperimentConfig, parse_config
from .errors import MSLEError
from .io import series_csv, write_csv, write_json, write_json_atomic
from .loewner import (
    DrivingForces,
    backward_evolve,
    default_swallow_tol,
    forward_flow,
    trace_extract,
)
from .paths import TimeGrid, sample_noise_batch, simulate_dyson
from .perturbation import (
    HausdorffConfig,
    InitPerturbConfig,
    KappaPerturbConfig,
    run_hausdorff_perturbation,
    run_init_perturbation,
    run_kappa_perturbation,
)


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float = 0.0
    claims: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.claims.values())


def _grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid.from_dt(cfg.T, cfg.dt)


def _dyson(cfg: ExperimentConfig, n: int):
    grid = _grid(cfg)
    noise = sample_noise_batch(grid, cfg.seed, 0, n, cfg.N)
    return simulate_dyson(grid, cfg.seed, cfg.N, cfg.kappa, cfg.a, noise=noise)


def _run_simulate_dyson(cfg, out: Path, man: RunManifest):
    D = _dyson(cfg, cfg.n_paths)
    names = ["value"] + [f"value{j}" for j in range(2, cfg.N + 1)]
    for p in range(cfg.n_paths):
        f = series_csv(out / f"dyson_{p:04d}.csv", D.grid.times,
                       dict(zip(names, D.positions[p])))
        man.artifacts.append(f.name)
    seeds = {"seed_base": cfg.seed, "path_seeds": [cfg.seed + p for p in range(cfg.n_paths)]}
    params = {k: v for k, v in cfg.echo().items() if k not in ("out", "workers")}
    write_json(out / "dyson.json", {"params": params, "seeds": seeds})
    man.artifacts.append("dyson.json")
    man.claims["ordering"] = D.is_ordered()


def _run_forward(cfg, out: Path, man: RunManifest):
    grid = _grid(cfg)
    if cfg.forces == "zero":
        F = DrivingForces.constant(grid, np.zeros(cfg.N))
    else:
        D = _dyson(cfg, 1)
        F = DrivingForces(grid, D.positions[0])
    z = np.array(cfg.z, dtype=complex)
    fl = forward_flow(z, F, record=True)
    summary = []
    for k, zk in enumerate(z):
        s = fl.samples[k]
        sw = np.isnan(s)
        f = series_csv(out / f"trajectory_{k:03d}.csv", grid.times,
                       {"re": np.nan_to_num(s.real), "im": np.nan_to_num(s.imag), "swallowed": sw})
        man.artifacts.append(f.name)
        rec = {"z": zk, "swallowed_at": fl.swallowed_at[k]}
        if cfg.forces == "zero" and not sw.any():
            exact = np.sqrt(zk**2 + 4.0 * grid.times)
            exact = np.where(exact.imag < 0, -exact, exact)
            rec["max_error_vs_closed_form"] = float(np.max(np.abs(s - exact)))
        summary.append(rec)
    alive = ~np.isfinite(fl.swallowed_at)
    if alive.any():
        back = backward_evolve(fl.values[alive], F)
        res = float(np.max(np.abs(back - z[alive])))
        man.claims["roundtrip"] = res < 1e-4
    else:
        res = None
    errs = [r["max_error_vs_closed_form"] for r in summary if "max_error_vs_closed_form" in r]
    if errs:
        man.claims["closed_form"] = max(errs) < 1e-6
    write_json(out / "forward.json", {"points": summary, "roundtrip_max_residual": res,
                                      "swallow_tol": default_swallow_tol(grid)})
    man.artifacts.append("forward.json")


def _run_trace(cfg, out: Path, man: RunManifest):
    D = _dyson(cfg, cfg.n_paths)
    F = DrivingForces.from_dyson(D)
    tr = trace_extract(F, delta_trace=cfg.delta_trace)
    for p in range(cfg.n_paths):
        rows = [
            (j, t, tr.points[p, j, k].real, tr.points[p, j, k].imag)
            for j in range(cfg.N)
            for k, t in enumerate(tr.times)
        ]
        f = write_csv(out / f"trace_{p:04d}.csv", ["curve_id", "t", "re", "im"], rows)
        man.artifacts.append(f.name)
    write_json(out / "trace.json", {"delta_trace": tr.delta_trace, "warnings": list(tr.warnings)})
    man.artifacts.append("trace.json")
    man.claims["non_intersecting"] = not tr.warnings


def _per_path_csv(out, name, rec: dict, man):
    keys = sorted(k for k, v in rec.items() if np.ndim(v) == 1)
    n = len(rec[keys[0]]) if keys else 0
    rows = ([p] + [rec[k][p] for k in keys] for p in range(n))
    f = write_csv(out / name, ["path"] + keys, rows)
    man.artifacts.append(f.name)


def _run_perturb_init(cfg, out: Path, man: RunManifest):
    icfg = InitPerturbConfig(tuple(cfg.a), tuple(cfg.b), cfg.eps, cfg.kappa, cfg.T, cfg.dt,
                             cfg.seed, cfg.n_paths, cfg.grid)
    res = run_init_perturbation(icfg, cfg.workers)
    write_json(out / "perturb_init.json", res.to_dict())
    man.artifacts.append("perturb_init.json")
    _per_path_csv(out, "perturb_init_paths.csv", res.records, man)
    man.claims["init_separation"] = res.separation.passed
    man.claims["init_identity"] = res.identity.passed
    man.claims["init_caratheodory"] = res.caratheodory.passed


def _run_perturb_kappa(cfg, out: Path, man: RunManifest):
    a1, a2 = cfg.a
    kcfg = KappaPerturbConfig(cfg.kappa, cfg.kappa_star, a1 - a2, (a1 + a2) / 2.0, cfg.T, cfg.dt,
                              cfg.seed, cfg.n_paths, cfg.grid, cfg.t_long)
    rep, rec = run_kappa_perturbation(kcfg, cfg.workers, with_records=True)
    write_json(out / "perturb_kappa.json", rep.to_dict())
    man.artifacts.append("perturb_kappa.json")
    _per_path_csv(out, "perturb_kappa_paths.csv", rec, man)
    man.claims["diffusivity_gap"] = rep.lemma.passed
    man.claims["force_gap_bound"] = rep.force_bound.passed
    man.claims["tail_bound"] = rep.passed


def _run_hausdorff(cfg, out: Path, man: RunManifest):
    hcfg = HausdorffConfig(tuple(cfg.a), cfg.eps, cfg.kappa, cfg.T, cfg.dt, cfg.seed,
                           cfg.n_paths, cfg.delta_trace)
    rep, rec = run_hausdorff_perturbation(hcfg, cfg.workers)
    write_json(out / "hausdorff.json", rep.to_dict())
    man.artifacts.append("hausdorff.json")
    _per_path_csv(out, "hausdorff_paths.csv", rec, man)
    man.claims["hausdorff_estimate"] = rep.passed


def _run_verify(cfg, out: Path, man: RunManifest):
    from .acceptance import run_all

    results = run_all(cfg.scale, cfg.seed, cfg.workers, echo=print)
    write_json(out / "verify.json", [
        {"criterion": c.number, "title": c.title, "pass": c.passed, "detail": c.detail,
         "seconds": c.seconds} for c in results
    ])
    man.artifacts.append("verify.json")
    for c in results:
        man.claims[f"criterion_{c.number:02d}"] = c.passed


DISPATCH = {
    "simulate-dyson": _run_simulate_dyson,
    "forward": _run_forward,
    "trace": _run_trace,
    "perturb-init": _run_perturb_init,
    "perturb-kappa": _run_perturb_kappa,
    "hausdorff": _run_hausdorff,
    "verify": _run_verify,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Run one experiment, write its artifacts and ``manifest.json``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config=cfg.echo(), version=__version__)
    t = time.perf_counter()
    DISPATCH[cfg.kind](cfg, out, man)
    man.wall_time = time.perf_counter() - t
    write_json_atomic(out / "manifest.json", {
        "config": man.config, "version": man.version, "wall_time": man.wall_time,
        "claims": man.claims, "pass": man.passed, "artifacts": sorted(man.artifacts),
    })
    return man


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msle", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    p.add_argument("--version", action="version", version=__version__)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        cfg = parse_config(args.config, [f"kind={args.kind}"] + list(args.overrides))
    except MSLEError as e:
        print(f"msle: error: {e}", file=sys.stderr)
        return 2
    try:
        man = run(cfg)
    except MSLEError as e:
        print(f"msle: error in {cfg.kind}: {e}", file=sys.stderr)
        return 1
    for k, v in man.claims.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    print(f"manifest: {Path(cfg.out) / 'manifest.json'}")
    return 0 if man.passed else 1


if __name__ == "__main__":
    sys.exit(main())
