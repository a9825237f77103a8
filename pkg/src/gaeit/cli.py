"""
Command-line front end.

Subcommands: ``mesh``, ``phantom``, ``simulate``, ``reconstruct``,
``render`` and ``compare``.  Relative output paths are resolved against
``$GAEIT_OUTPUT`` (default: the working directory).  Exit codes: 0 success,
2 usage/configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baseline import Disturbance, NRConfig, best_homogeneous, run_hybrid, run_nr
from .errors import ConfigurationError, DomainError, GeometryError, NumericalError
from .experiment import (
    NoiseSpec,
    add_noise,
    image_metrics,
    make_phantom,
    read_field,
    read_phantom_spec,
    write_field,
    write_phantom_spec,
    REFERENCE_ANOMALIES,
    TWO_ANOMALIES,
)
from .forward import adjacent_protocol, forward_solve, read_measurements, write_measurements
from .ga import GAConfig, run_ga
from .mesh import build_disk_mesh, read_mesh, validate, write_mesh
from .objective import ObjectiveSpec
from .plotting import plot_burden, plot_trace, render_field
from .results import read_trace, write_trace

OUTPUT_ENV = "GAEIT_OUTPUT"

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

RECON_DEFAULTS = {
    "solver": "ga",
    "alpha": 1e-3,
    "regularizer": "tikhonov-smoothness",
    "nr_alpha": 1e-5,
    "nr_iterations": 30,
    "one_step": False,
    "generations": 300,
    "population": 200,
    "crossover_fraction": 0.8,
    "mutation_sigma": 0.05,
    "mutation_rate": None,
    "elite": 2,
    "bounds": [0.2, 5.0],
    "init": "uniform",
    "disturb": None,
    "seed": 0,
    "workers": 1,
    "timing": True,
}


PATH_KEYS = ("mesh", "data", "phantom", "outdir")


def derive_seed(seed: int, component: str) -> int:
    """Per-component seed: first 8 bytes of sha256("<seed>:<component>")."""
    digest = hashlib.sha256(f"{int(seed)}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


def _out(path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = output_root() / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _existing(path) -> Path:
    """Input path, looked up as given and then under the output root."""
    p = Path(path)
    if p.exists():
        return p
    alt = output_root() / p
    if not p.is_absolute() and alt.exists():
        return alt
    raise FileNotFoundError(f"no such file: {p}")


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class RunConfig:
    """Resolved settings of a ``reconstruct`` run (defaults <- config file <- flags)."""

    mesh: str
    data: str
    outdir: str
    phantom: Optional[str] = None
    values: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, args) -> "RunConfig":
        merged = dict(RECON_DEFAULTS)
        paths = dict.fromkeys(PATH_KEYS)
        if args.config:
            loaded = json.loads(_existing(args.config).read_text())
            unknown = set(loaded) - set(RECON_DEFAULTS) - set(PATH_KEYS)
            if unknown:
                raise ConfigurationError(f"{args.config}: unknown keys {sorted(unknown)}")
            paths.update({k: v for k, v in loaded.items() if k in PATH_KEYS})
            merged.update({k: v for k, v in loaded.items() if k in RECON_DEFAULTS})
        for key in list(RECON_DEFAULTS) + list(PATH_KEYS):
            val = getattr(args, key, None)
            if val is not None:
                (paths if key in PATH_KEYS else merged)[key] = val
        if not paths["mesh"] or not paths["data"]:
            raise ConfigurationError("reconstruct needs --mesh and --noise-file (or config keys mesh/data)")
        for k in ("mesh", "data", "phantom"):
            if paths[k]:
                _existing(paths[k])
        if merged["solver"] not in ("ga", "nr", "hybrid"):
            raise ConfigurationError(f"unknown solver {merged['solver']!r}")
        return cls(paths["mesh"], paths["data"], paths["outdir"] or "recon", paths["phantom"], merged)

    def objective(self) -> ObjectiveSpec:
        return ObjectiveSpec(alpha=float(self.values["alpha"]), regularizer=self.values["regularizer"])

    def ga(self) -> GAConfig:
        v = self.values
        return GAConfig(
            population_size=int(v["population"]),
            max_generations=int(v["generations"]),
            crossover_fraction=float(v["crossover_fraction"]),
            mutation_sigma=float(v["mutation_sigma"]),
            mutation_rate=None if v["mutation_rate"] is None else float(v["mutation_rate"]),
            elite_count=int(v["elite"]),
            bounds=(float(v["bounds"][0]), float(v["bounds"][1])),
            init=v["init"],
            rng_seed=derive_seed(v["seed"], "ga"),
            workers=int(v["workers"]),
        )

    def nr(self) -> NRConfig:
        v = self.values
        return NRConfig(
            max_iterations=int(v["nr_iterations"]),
            alpha=None if v["nr_alpha"] is None else float(v["nr_alpha"]),
            one_step=bool(v["one_step"]),
        )

    def disturbance(self) -> Optional[Disturbance]:
        s = self.values["disturb"]
        if s is None:
            return None
        return Disturbance(scale=float(s), seed=derive_seed(self.values["seed"], "disturb"))


# --------------------------------------------------------------------------- commands


def cmd_mesh(args) -> int:
    mesh = build_disk_mesh(args.rings, args.electrodes)
    problems = validate(mesh)
    if problems:
        raise GeometryError("generated mesh failed validation: " + "; ".join(problems[:5]))
    path = _out(args.out)
    write_mesh(mesh, path)
    print(f"nodes {mesh.n_nodes} elements {mesh.n_elements} electrodes {mesh.n_electrodes} -> {path}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    mesh = read_mesh(_existing(args.mesh))
    if args.anomaly:
        anomalies = [tuple(a) for a in args.anomaly]
    elif args.empty:
        anomalies = []
    else:
        anomalies = list(TWO_ANOMALIES if args.two_anomalies else REFERENCE_ANOMALIES)
    ph = make_phantom(mesh, args.background, anomalies)
    spec_path = _out(args.out)
    write_phantom_spec(spec_path, ph.background, ph.anomalies)
    msg = f"phantom: background {ph.background:g}, {len(ph.anomalies)} anomalies -> {spec_path}"
    if args.field:
        write_field(_out(args.field), ph.rho_true)
    if args.image:
        render_field(mesh, ph.rho_true, _out(args.image), title="phantom")
    print(msg)
    return EXIT_OK


def _load_phantom(mesh, path):
    background, anomalies = read_phantom_spec(_existing(path))
    return make_phantom(mesh, background, anomalies)


def cmd_simulate(args) -> int:
    mesh = read_mesh(_existing(args.mesh))
    ph = _load_phantom(mesh, args.phantom)
    protocol = adjacent_protocol(mesh.n_electrodes, args.current)
    clean = forward_solve(mesh, ph.rho_true, protocol)
    out = _out(args.out)
    write_measurements(clean, out)
    msg = f"{len(clean)} measurements ({protocol.name}) -> {out}"
    if args.noise is not None:
        noisy_path = _out(args.noisy_out) if args.noisy_out else out.with_name(out.stem + "_noisy" + out.suffix)
        noisy = add_noise(clean, NoiseSpec(args.noise, derive_seed(args.seed, "noise"), args.per_channel))
        write_measurements(noisy, noisy_path)
        msg += f"; noisy copy (level {args.noise:g}) -> {noisy_path}"
    print(msg)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = RunConfig.resolve(args)
    mesh = read_mesh(_existing(cfg.mesh))
    y = read_measurements(_existing(cfg.data))
    protocol = adjacent_protocol(mesh.n_electrodes)
    if y.protocol_id != protocol.name or len(y) != protocol.n_measurements:
        raise ConfigurationError(
            f"{cfg.data}: measurements are for {y.protocol_id} (n={len(y)}), "
            f"mesh implies {protocol.name} (n={protocol.n_measurements})"
        )
    spec = cfg.objective()
    clock = time.perf_counter if cfg.values["timing"] else (lambda: 0.0)
    solver = cfg.values["solver"]
    if solver == "ga":
        result = run_ga(mesh, protocol, y, spec, cfg.ga(), clock=clock)
    elif solver == "nr":
        result = run_nr(mesh, protocol, y, spec, cfg.nr(), best_homogeneous(mesh, protocol, y), clock=clock)
        result.forward_solve_count += 1
        result.trace[0].forward_solves += 1
    else:
        result = run_hybrid(mesh, protocol, y, spec, cfg.nr(), cfg.ga(), cfg.disturbance(), clock=clock)

    outdir = _out(Path(cfg.outdir) / "result.json").parent
    write_field(outdir / "estimate.txt", result.rho_est)
    write_trace(result.trace, outdir / "trace.csv", with_stage=solver == "hybrid")
    summary = result.summary()
    misfit = float(np.linalg.norm(y.values - forward_solve(mesh, result.rho_est, protocol).values))
    summary["data_misfit"] = misfit
    summary["data_norm"] = float(np.linalg.norm(y.values))
    metrics = None
    if cfg.phantom:
        ph = _load_phantom(mesh, cfg.phantom)
        center = ph.anomalies[0][:2] if len(ph.anomalies) == 1 else None
        metrics = image_metrics(result.rho_est, ph.rho_true, mesh, center).as_dict()
    summary["metrics"] = metrics
    summary["config"] = {"mesh": cfg.mesh, "data": cfg.data, "phantom": cfg.phantom, **cfg.values}
    _dump_json(summary, outdir / "result.json")
    render_field(mesh, result.rho_est, outdir / "estimate.svg", title=f"{solver} estimate")
    plot_trace(result.trace, outdir / "trace.svg", title=f"{solver} objective")
    print(
        f"{solver}: {result.termination_reason} after {result.generations} "
        f"{'iterations' if solver == 'nr' else 'generations'}, objective {result.objective.total:.6g}, "
        f"forward solves {result.forward_solve_count}, jacobians {result.jacobian_count} -> {outdir}"
    )
    return EXIT_OK


def cmd_render(args) -> int:
    mesh = read_mesh(_existing(args.mesh))
    values = read_field(_existing(args.field))
    if len(values) != mesh.n_elements:
        raise ConfigurationError(f"field has {len(values)} values, mesh has {mesh.n_elements} elements")
    vrange = None
    if args.vmin is not None or args.vmax is not None:
        vrange = (
            args.vmin if args.vmin is not None else float(values.min()),
            args.vmax if args.vmax is not None else float(values.max()),
        )
    path = render_field(mesh, values, _out(args.out), vrange=vrange, title=args.title)
    print(f"rendered {mesh.n_elements} elements -> {path}")
    return EXIT_OK


IMAGE_KEYS = {"relative_l2_error", "pearson_correlation", "anomaly_localization_error"}
COMPARE_FIELDS = (
    "run", "solver", "termination_reason", "objective_total", "data_term", "reg_term",
    "data_misfit", "relative_l2_error", "pearson_correlation", "anomaly_localization_error",
    "forward_solve_count", "jacobian_count", "wall_time", "generations",
)


def _compare_row(run_dir: Path) -> dict:
    result_path = _existing(run_dir / "result.json")
    trace = read_trace(_existing(run_dir / "trace.csv"))
    try:
        res = json.loads(result_path.read_text())
        metrics = res.get("metrics") or {}
        row = {"run": run_dir.name}
        for key in COMPARE_FIELDS[1:]:
            row[key] = metrics.get(key) if key in IMAGE_KEYS else res[key]
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{result_path}: not a reconstruct result ({exc})") from None
    solves = sum(r.forward_solves for r in trace)
    if solves != row["forward_solve_count"]:
        raise ConfigurationError(
            f"{run_dir}: trace forward_solves sum to {solves}, result.json says {row['forward_solve_count']}"
        )
    row["trace_rows"] = len(trace)
    row["trace_elapsed_ms"] = sum(r.elapsed_ms for r in trace)
    return row


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def cmd_compare(args) -> int:
    dirs = [Path(d) for d in args.runs]
    rows = [_compare_row(d) for d in dirs]
    names = [r["run"] for r in rows]
    if len(set(names)) != len(names):
        for r, d in zip(rows, dirs):
            r["run"] = str(d)
    fields = list(COMPARE_FIELDS) + ["trace_rows", "trace_elapsed_ms"]
    outdir = _out(Path(args.outdir) / "report.json").parent
    _dump_json({"runs": rows}, outdir / "report.json")
    lines = [",".join(fields)]
    lines += [",".join("" if r[f] is None else repr(r[f]) if isinstance(r[f], float) else str(r[f])
                       for f in fields) for r in rows]
    (outdir / "report.csv").write_text("\n".join(lines) + "\n")
    plot_burden([r["run"] for r in rows], [r["forward_solve_count"] for r in rows],
                [r["jacobian_count"] for r in rows], outdir / "burden.svg")

    shown = ["run", "solver", "objective_total", "data_misfit", "pearson_correlation",
             "forward_solve_count", "jacobian_count", "wall_time"]
    table = [shown] + [[_cell(r[f]) for f in shown] for r in rows]
    widths = [max(len(t[i]) for t in table) for i in range(len(shown))]
    for k, t in enumerate(table):
        print("  ".join(c.rjust(w) for c, w in zip(t, widths)))
        if k == 0:
            print("  ".join("-" * w for w in widths))
    print(f"report -> {outdir / 'report.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaeit",
        description="2D EIT forward modelling and GA / Gauss-Newton reconstruction.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build the concentric-ring disk mesh")
    p.add_argument("--rings", type=int, default=12)
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--out", default="mesh.txt")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("phantom", help="write a phantom spec (reference scene by default)")
    p.add_argument("--mesh", required=True)
    p.add_argument("--background", type=float, default=1.0)
    p.add_argument("--anomaly", nargs=4, type=float, action="append", metavar=("CX", "CY", "R", "RHO"))
    p.add_argument("--two-anomalies", action="store_true", help="use the two-anomaly reference scene")
    p.add_argument("--empty", action="store_true", help="no anomalies")
    p.add_argument("--out", default="phantom.txt")
    p.add_argument("--field", help="also write the per-element field")
    p.add_argument("--image", help="also render the phantom to SVG")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="compute h(rho_true), optionally with noise")
    p.add_argument("--mesh", required=True)
    p.add_argument("--phantom", required=True)
    p.add_argument("--out", default="y_clean.dat")
    p.add_argument("--noise", type=float, help="relative noise level, e.g. 0.01")
    p.add_argument("--noisy-out")
    p.add_argument("--per-channel", action="store_true", help="noise relative to each reading")
    p.add_argument("--current", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct with ga, nr or hybrid")
    p.add_argument("--config", help="JSON file with reconstruct settings; flags override it")
    p.add_argument("--mesh")
    p.add_argument("--noise-file", "--data", dest="data", help="measurement file to invert")
    p.add_argument("--phantom", help="phantom spec, for image metrics")
    p.add_argument("--outdir")
    p.add_argument("--solver", choices=("ga", "nr", "hybrid"))
    p.add_argument("--alpha", type=float, help="regularization weight of the objective (default 1e-3)")
    p.add_argument("--regularizer", choices=("tikhonov-smoothness", "tikhonov-identity"))
    p.add_argument("--nr-alpha", type=float, help="Gauss-Newton regularization weight (default 1e-5)")
    p.add_argument("--nr-iterations", type=int)
    p.add_argument("--one-step", action="store_const", const=True)
    p.add_argument("--generations", type=int, help="GA generations (default 300)")
    p.add_argument("--population", type=int, help="GA population (default 200)")
    p.add_argument("--crossover-fraction", type=float)
    p.add_argument("--mutation-sigma", type=float)
    p.add_argument("--mutation-rate", type=float)
    p.add_argument("--elite", type=int)
    p.add_argument("--bounds", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--init", choices=("uniform", "around-warm-start"))
    p.add_argument("--disturb", type=float, help="log-normal disturbance scale for hybrid runs")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="threads for GA fitness evaluation")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="record zero timings so outputs are byte-reproducible")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="render a per-element field to SVG")
    p.add_argument("--mesh", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", default="field.svg")
    p.add_argument("--vmin", type=float)
    p.add_argument("--vmax", type=float)
    p.add_argument("--title")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("compare", help="tabulate reconstruct runs (cost and quality)")
    p.add_argument("runs", nargs="+", help="reconstruct output directories")
    p.add_argument("--outdir", default="compare")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, GeometryError) as exc:
        print(f"gaeit {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"gaeit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"gaeit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"gaeit {args.command}: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
