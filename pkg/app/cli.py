"""
Command-line interface
Subcommands solve, force, energy, minimize, verify and sweep over a TOML run file
"""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

import pandas as pd

from app.analytics import catalogue
from app.analytics.energy_force import EnergyCalculator
from app.analytics.geometry import DeflectionProfile
from app.analytics.minimizer import EnergyMinimizer
from app.analytics.transmission import (
    TraceData,
    TransmissionSolver,
    electrostatic_energy,
    flat_transmission_profile,
    physical_energy,
)
from app.analytics.verification import run_probe_suite
from app.config import RunConfig, load_config
from app.errors import ConfigError, InadmissibleDeflectionError, MemsModelError, ParameterError
from app.reporting.writers import ReportGenerator, read_deflection

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_solver(config: RunConfig) -> TransmissionSolver:
    params = config.physical
    boundary = flat_transmission_profile(params).as_boundary() if config.boundary.mode == "oneD" else None
    return TransmissionSolver.for_params(params, config.mesh.nx, config.mesh.nz1, config.mesh.nz2,
                                         boundary=boundary, tol=config.solver.tol, method=config.solver.method,
                                         trace_method=config.solver.trace_method)


def build_deflection(config: RunConfig) -> DeflectionProfile:
    dcfg = config.deflection
    eps_gap = dcfg.eps_gap or None
    if dcfg.source == "file":
        return read_deflection(dcfg.path, config.physical, dcfg.bc_mode, eps_gap)
    if dcfg.source == "catalogue":
        return catalogue.build_deflection(config.physical, dcfg.shape, dcfg.amplitude, config.hermite_nx,
                                          dcfg.bc_mode, eps_gap)
    return DeflectionProfile.flat(config.physical, config.hermite_nx, dcfg.bc_mode, eps_gap)


def _require_model_boundary(config: RunConfig, command: str):
    if config.boundary.mode != "model":
        raise ConfigError(f"'{command}' needs boundary.mode = \"model\"", key="boundary.mode")


def _trace_table(traces: TraceData) -> pd.DataFrame:
    return pd.DataFrame({
        "x": traces.x, "u": traces.u, "du": traces.du,
        "upper_dx": traces.interface_upper[:, 0], "upper_dz": traces.interface_upper[:, 1],
        "lower_dx": traces.interface_lower[:, 0], "lower_dz": traces.interface_lower[:, 1],
        "top_dx": traces.top[:, 0], "top_dz": traces.top[:, 1],
    })


def cmd_solve(config: RunConfig, writer: ReportGenerator) -> int:
    """Potential grid, interface/top traces and electrostatic energy of one deflection"""
    solver = build_solver(config)
    phi = solver.solve(build_deflection(config))
    energy = electrostatic_energy(phi)

    writer.write_potential_grid("potential.grid", phi)
    writer.write_csv("traces.csv", _trace_table(solver.traces(phi)))
    writer.write_json("energy.json", {
        "E_e": energy,
        "E_e_physical": physical_energy(phi),
        "residual": phi.residual,
        "iterations": phi.iterations,
        "solver": phi.info.method,
        "boundary": config.boundary.mode,
        "mesh": {"nx": phi.mesh.nx, "nz1": phi.mesh.nz1, "nz2": phi.mesh.nz2,
                 "L": phi.mesh.L, "H": phi.mesh.H, "d": phi.mesh.d},
        "physical": config.physical.to_dict(),
    })
    logger.info("E_e = %.12g (residual %.3e)", energy, phi.residual)
    return EXIT_OK


def cmd_force(config: RunConfig, writer: ReportGenerator) -> int:
    """Force density g(u) with its three summands"""
    calculator = EnergyCalculator(config.physical, build_solver(config))
    force = calculator.calculate_force(build_deflection(config))
    writer.write_csv("force.csv", pd.DataFrame(force.to_rows()))
    logger.info("g in [%.6g, %.6g]", force.g.min(), force.g.max())
    return EXIT_OK


def cmd_energy(config: RunConfig, writer: ReportGenerator) -> int:
    """Mechanical, electrostatic and total energy with interface diagnostics"""
    calculator = EnergyCalculator(config.physical, build_solver(config))
    analysis = calculator.get_comprehensive_analysis(build_deflection(config))
    writer.write_json("energy.json", analysis)
    logger.info("E_total = %.12g", analysis["energy"]["E_total"])
    return EXIT_OK


def cmd_minimize(config: RunConfig, writer: ReportGenerator) -> int:
    """Projected descent from the configured deflection; exit 1 without convergence"""
    _require_model_boundary(config, "minimize")
    minimizer = EnergyMinimizer(config.physical, build_solver(config), config.minimize)
    state = minimizer.run(build_deflection(config))

    writer.write_csv("iterations.csv", minimizer.history_rows())
    writer.write_deflection("deflection.txt", state.deflection, config.physical)
    writer.write_json("summary.json", state.summary())
    if not state.converged:
        logger.warning("Minimization did not converge: %s", state.message)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(config: RunConfig, writer: ReportGenerator) -> int:
    """Selected verification probes; exit 0 iff all pass"""
    _require_model_boundary(config, "verify")
    results = run_probe_suite(config.physical, config.verify, serial=config.run.serial)
    for name, result in results.items():
        if result.rows:
            writer.write_csv(f"{name}.csv", result.rows)
        writer.write_json(f"{name}.json", {"probe": name, "passed": result.passed, "summary": result.summary})
    failed = sorted(name for name, result in results.items() if not result.passed)
    writer.write_json("verify.json", {"probes": list(results), "failed": failed, "passed": not failed})
    if failed:
        logger.warning("Failed probes: %s", ", ".join(failed))
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(config: RunConfig, writer: ReportGenerator) -> int:
    """Voltage continuation with warm starts"""
    _require_model_boundary(config, "sweep")
    minimizer = EnergyMinimizer(config.physical, build_solver(config), config.minimize)
    rows = minimizer.voltage_sweep(config.sweep.voltages, build_deflection(config))
    writer.write_csv("sweep.csv", rows)
    writer.write_json("sweep.json", {"voltages": list(config.sweep.voltages),
                                     "all_converged": all(row["converged"] for row in rows)})
    return EXIT_OK if all(row["converged"] for row in rows) else EXIT_FAILURE


COMMANDS: Dict[str, Callable[[RunConfig, ReportGenerator], int]] = {
    "solve": cmd_solve,
    "force": cmd_force,
    "energy": cmd_energy,
    "minimize": cmd_minimize,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run file")
    common.add_argument("--out", help="output directory (overrides [output] dir and MEMS_OUTPUT_DIR)")
    common.add_argument("--serial", action="store_true", default=None, help="force single-threaded execution")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--log-level", help="logging level (default INFO)")

    parser = argparse.ArgumentParser(prog="mems-transmission",
                                     description="Electrostatic MEMS plate: transmission solves, forces and energy minimization")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=handler.__doc__)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config).with_overrides(out_dir=args.out, seed=args.seed,
                                                         serial=args.serial, log_level=args.log_level)
    except ConfigError as exc:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, force=True)
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG

    logging.basicConfig(level=getattr(logging, config.run.log_level.upper(), logging.INFO),
                        format=LOG_FORMAT, force=True)
    logger.info("Running %s (config hash %s)", args.command, config.config_hash[:12])
    try:
        writer = ReportGenerator(config.output.dir, config.config_hash)
        return COMMANDS[args.command](config, writer)
    except (ConfigError, ParameterError, InadmissibleDeflectionError) as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_CONFIG
    except MemsModelError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
