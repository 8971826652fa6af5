"""Command-line front end.

    stochwave <subcommand> [--config PATH | --preset NAME] [--seed N] [--out DIR]
                           [--format csv|json] [--threads N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.  Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import validation
from .config import ConfigError, defaults, load_config, load_preset, preset_names, validate_config
from .density import integrate_density, pure_state_density, schrodinger_propagate
from .errors import NumericalInstabilityError
from .functionals import BilinearFunctional
from .grid import (coherent_state, eigenstates, gaussian_state, hamiltonian_build,
                   harmonic_potential, make_grid, momentum_operator, position_operator)
from .stochastic import (dephasing_noise, lowering_operator, make_noise_model, run_ensemble,
                         run_trajectory)

SUBCOMMANDS = ("trajectory", "ensemble", "liouville", "lindblad", "schrodinger", "validate",
               "converge")
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3, 4


@dataclass
class ResultRecord:
    run_id: str
    subcommand: str
    config: dict
    columns: dict                    # name -> sequence, "time" (or "tau") first
    covariance: dict | None = None   # {"times": array, "entries": (S, n, n) array}
    extra: dict = field(default_factory=dict)
    passed: bool = True


# -- building the physics from a config ----------------------------------------------

class Setup:
    def __init__(self, cfg):
        ph = cfg.physics
        self.cfg = cfg
        self.mu = ph["mu"]
        self.grid = make_grid(cfg.grid["n_points"], cfg.grid["length"])
        if ph["potential"] == "harmonic":
            v = harmonic_potential(self.grid, ph["mass"], ph["omega"])
        elif ph["potential"] == "table":
            v = np.array(ph["potential_table"], dtype=float)
        else:
            v = None
        self.h = hamiltonian_build(self.grid, self.mu, ph["mass"], v, ph["momentum_scheme"])
        self.observables = [
            BilinearFunctional(position_operator(self.grid), "x"),
            BilinearFunctional(momentum_operator(self.grid, self.mu, ph["momentum_scheme"]), "p"),
            BilinearFunctional(self.h, "H"),
        ]
        self.initial = self._initial()
        self.noise = self._noise()

    def _initial(self):
        ini, ph = self.cfg.initial, self.cfg.physics
        if ini["kind"] == "ground" or ini["kind"] == "eigenstate":
            level = 0 if ini["kind"] == "ground" else ini["level"]
            if level >= self.grid.n_points:
                raise ConfigError("initial.level exceeds the number of grid points",
                                  field="initial.level")
            _, states = eigenstates(self.h, self.grid, level + 1)
            return states[level]
        if ini["kind"] == "coherent":
            return coherent_state(self.grid, ini["displacement"], ph["mass"], ph["omega"], self.mu)
        return gaussian_state(self.grid, ini["displacement"], ini["width"], ini["momentum"], self.mu)

    def _noise(self):
        nz, ph = self.cfg.noise, self.cfg.physics
        n, dist = self.grid.n_points, nz["xi_distribution"]
        if nz["kind"] == "none":
            return dephasing_noise(n, 0.0, dist)
        if nz["kind"] == "dephasing":
            return dephasing_noise(n, nz["gamma"], dist)
        if nz["kind"] == "lowering":
            a = lowering_operator(self.grid, ph["mass"], ph["omega"], self.mu)
            return make_noise_model(nz["gamma"] * a.entries, dist)
        return validation.random_smooth_noise(self.h, self.grid, nz["gamma"],
                                              min(nz["n_modes"], n), nz["seed"], dist)


def _state_expectations(amplitudes, grid, kernel):
    return grid.spacing * np.sum(amplitudes.conj() * (amplitudes @ kernel.T), axis=1).real


def _density_expectations(entries, grid, kernel):
    return grid.spacing * np.einsum("ij,sji->s", kernel, entries).real


def _density_columns(series, setup):
    grid = setup.grid
    r = series.entries
    cols = {"time": series.times,
            "trace": grid.spacing * np.trace(r, axis1=1, axis2=2).real}
    for f, name in zip(setup.observables, ("x_mean", "p_mean", "energy")):
        cols[name] = _density_expectations(r, grid, f.kernel.entries)
    cols["purity"] = np.array([series[i].purity() for i in range(len(series))])
    cols["min_eigenvalue"] = np.array([series[i].min_eigenvalue() for i in range(len(series))])
    return cols


def _method(cfg, allowed, default, name):
    method = cfg.integration["method"] or default
    if method not in allowed:
        raise ConfigError(f"{name} supports integration.method in {allowed}, got {method!r}",
                          field="integration.method")
    return method


def run_subcommand(name: str, cfg, threads: int = 1) -> ResultRecord:
    """Execute one pipeline and collect its output columns."""
    if name not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}")
    echo = cfg.echo()
    run_id = hashlib.sha256((name + "\n" + cfg.to_ini()).encode()).hexdigest()[:16]
    if name == "validate":
        checks = validation.default_suite(cfg.ensemble["trajectories"], cfg.ensemble["base_seed"],
                                          threads=threads)
        cols = {"check": [c.name for c in checks], "passed": [int(c.passed) for c in checks],
                "value": [c.value for c in checks], "limit": [c.limit for c in checks]}
        return ResultRecord(run_id, name, echo, cols, passed=all(c.passed for c in checks))

    setup = Setup(cfg)
    it, out = cfg.integration, cfg.output
    tau, n_steps, stride, mu = it["tau"], it["n_steps"], out["stride"], setup.mu
    covariance = None

    if name == "trajectory":
        rec = run_trajectory(setup.initial, setup.h, setup.noise, tau, n_steps, it["scheme"],
                             cfg.ensemble["base_seed"], stride, mu)
        a = rec.amplitudes
        cols = {"time": rec.times, "norm": rec.norms()}
        for f, col in zip(setup.observables, ("x_mean", "p_mean", "energy")):
            cols[col] = _state_expectations(a, setup.grid, f.kernel.entries)
    elif name == "ensemble":
        acc = run_ensemble(setup.initial, setup.h, setup.noise, tau, n_steps,
                           cfg.ensemble["trajectories"], it["scheme"], cfg.ensemble["base_seed"],
                           stride, mu, setup.observables, cfg.ensemble["chunk_size"], threads)
        sigma_ref = validation.mean_field_flow(setup.initial, setup.h, setup.noise, acc.times, mu)
        cols = {"time": acc.times, "norm": acc.mean_norm(), "norm_se": acc.norm_stderr()}
        for label, col in (("H", "energy"), ("x", "x_mean"), ("p", "p_mean")):
            cols[col] = acc.observable_mean(label)
            cols[col.split("_")[0] + "_se"] = acc.observable_stderr(label)
        cols["trace"] = np.array([acc.covariance(i).trace().real for i in range(len(acc.times))])
        cols["purity"] = acc.purity()
        cols["sigma_norm"] = acc.sigma_norm()
        cols["sigma_norm_se"] = acc.sigma_norm_stderr()
        cols["sigma_reference"] = np.sqrt(setup.grid.spacing * np.sum(np.abs(sigma_ref) ** 2, axis=1))
        if out["covariance_snapshots"]:
            covariance = {"times": acc.times,
                          "entries": np.array([acc.covariance(i).entries for i in range(len(acc.times))])}
    elif name in ("liouville", "lindblad"):
        if name == "liouville":
            method = _method(cfg, ("exact_unitary_conjugation", "rk4"),
                             "exact_unitary_conjugation", name)
        else:
            method = _method(cfg, ("rk4",), "rk4", name)
        series = integrate_density(pure_state_density(setup.initial), setup.h, tau, n_steps,
                                   name, method, setup.noise, mu, stride)
        cols = _density_columns(series, setup)
        if out["covariance_snapshots"]:
            covariance = {"times": series.times, "entries": series.entries}
    elif name == "schrodinger":
        method = _method(cfg, ("eigendecomposition", "crank_nicolson"), "eigendecomposition", name)
        series = schrodinger_propagate(setup.initial, setup.h, tau, n_steps, mu, method, stride)
        a = series.amplitudes
        x = setup.grid.positions
        cols = {"time": series.times,
                "norm": setup.grid.spacing * np.sum(np.abs(a) ** 2, axis=1)}
        for f, col in zip(setup.observables, ("x_mean", "p_mean", "energy")):
            cols[col] = _state_expectations(a, setup.grid, f.kernel.entries)
        second = setup.grid.spacing * np.sum(np.abs(a) ** 2 * x**2, axis=1)
        cols["x_variance"] = second - cols["x_mean"] ** 2
    else:  # converge
        obs_name = cfg.converge["observable"]
        observable = None if obs_name == "norm" else next(
            f for f in setup.observables if f.label == obs_name)
        report = validation.weak_convergence_study(
            setup.initial, setup.h, setup.noise, cfg.converge["taus"],
            cfg.ensemble["trajectories"], cfg.converge["horizon"], observable, it["scheme"],
            cfg.ensemble["base_seed"], mu, threads=threads)
        cols = {"tau": report.values, "bias": report.errors, "stderr": report.stderr}
        extra = {"slope": report.slope, "expected_slope": report.expected_slope,
                 "slope_tolerance": report.slope_tolerance, "status": report.status}
        return ResultRecord(run_id, name, echo, cols, extra=extra, passed=report.status != "fail")
    return ResultRecord(run_id, name, echo, cols, covariance)


# -- serialization ------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _json_value(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return None if math.isnan(v) else v


def serialize_results(record: ResultRecord, out_dir, fmt: str = "csv", stem: str | None = None):
    """Write ``record`` under ``out_dir``; returns the written paths.

    csv: ``<stem>.csv`` (header row, one row per time stamp, 17 significant
    digits), ``<stem>.config.ini`` (config echo) and, with covariance
    snapshots, ``<stem>.covariance.csv`` whose columns after ``time`` are
    ``re_i_j, im_i_j`` in row-major order.  json: a single ``<stem>.json``
    document holding everything, NaN written as null.
    """
    out = Path(out_dir)
    stem = stem or record.subcommand
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            return _write_csv(record, out, stem)
        if fmt == "json":
            return _write_json(record, out, stem)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc.strerror or exc}") from exc
    raise ValueError(f"unknown format {fmt!r}")


def _write_csv(record, out, stem):
    from .config import SimulationConfig

    paths = []
    names = list(record.columns)
    rows = zip(*(record.columns[k] for k in names))
    p = out / f"{stem}.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    paths.append(p)
    p = out / f"{stem}.config.ini"
    p.write_text(f"# run_id = {record.run_id}\n# subcommand = {record.subcommand}\n"
                 + SimulationConfig(record.config).to_ini())
    paths.append(p)
    if record.covariance is not None:
        ent = record.covariance["entries"]
        n = ent.shape[1]
        header = ["time"] + [f"{part}_{i}_{j}" for i in range(n) for j in range(n)
                             for part in ("re", "im")]
        p = out / f"{stem}.covariance.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, m in zip(record.covariance["times"], ent):
                flat = np.column_stack([m.real.ravel(), m.imag.ravel()]).ravel()
                w.writerow([_cell(t)] + [_cell(v) for v in flat])
        paths.append(p)
    return paths


def _write_json(record, out, stem):
    doc = {"run_id": record.run_id, "subcommand": record.subcommand, "config": record.config,
           "columns": {k: [_json_value(v) for v in col] for k, col in record.columns.items()},
           "extra": record.extra, "passed": record.passed}
    if record.covariance is not None:
        ent = record.covariance["entries"]
        doc["covariance"] = {
            "layout": "row-major; entry (s, i, j) stored as the pair (real, imag)",
            "shape": list(ent.shape),
            "times": [float(t) for t in record.covariance["times"]],
            "data": np.column_stack([ent.real.ravel(), ent.imag.ravel()]).ravel().tolist(),
        }
    p = out / f"{stem}.json"
    p.write_text(json.dumps(doc, indent=1))
    return [p]


def load_json_record(path) -> ResultRecord:
    doc = json.loads(Path(path).read_text())
    cols = {k: [float("nan") if v is None else v for v in col] for k, col in doc["columns"].items()}
    cov = None
    if "covariance" in doc:
        c = doc["covariance"]
        flat = np.array(c["data"]).reshape(-1, 2)
        cov = {"times": np.array(c["times"]),
               "entries": (flat[:, 0] + 1j * flat[:, 1]).reshape(c["shape"])}
    return ResultRecord(doc["run_id"], doc["subcommand"], doc["config"], cols, cov,
                        doc.get("extra", {}), doc.get("passed", True))


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochwave",
        description="Stochastic-field simulations and covariance-flow checks.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--config", help="path to an INI configuration file")
    src.add_argument("--preset", help="name of a bundled configuration preset")
    parser.add_argument("--seed", type=int, help="override ensemble.base_seed")
    parser.add_argument("--out", default=".", help="output directory (default: .)")
    parser.add_argument("--format", choices=("csv", "json"), help="override output.format")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    return parser


def _error(payload: dict, code: int) -> int:
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.preset:
            cfg = load_preset(args.preset)
        else:
            cfg = defaults()
        if args.seed is not None:
            cfg.ensemble["base_seed"] = args.seed
        if args.format:
            cfg.output["format"] = args.format
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1", field="--threads")
        validate_config(cfg)
        record = run_subcommand(args.subcommand, cfg, args.threads)
        stem = (cfg.output["prefix"] + "_" if cfg.output["prefix"] else "") + args.subcommand
        paths = serialize_results(record, args.out, cfg.output["format"], stem)
    except ConfigError as exc:
        return _error(exc.as_dict(), EXIT_CONFIG)
    except NumericalInstabilityError as exc:
        return _error(exc.as_dict(), EXIT_NUMERICAL)
    except OSError as exc:
        return _error({"error": "io", "message": str(exc)}, EXIT_ERROR)

    for p in paths:
        print(p)
    if args.subcommand == "validate":
        for name, ok, value, limit in zip(*(record.columns[k] for k in ("check", "passed", "value", "limit"))):
            print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3g} (limit {limit:.3g})")
    if args.subcommand == "converge":
        e = record.extra
        print(f"{e['status'].upper()}: slope {e['slope']:.3f} "
              f"(expected {e['expected_slope']:g} +- {e['slope_tolerance']:g})")
    return EXIT_OK if record.passed else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
