"""
Result writers
CSV tables, JSON summaries, potential grids and deflection files, all written atomically with config provenance
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from app.analytics.geometry import DeflectionProfile, PhysicalParams
from app.analytics.transmission import PotentialField
from app.errors import InadmissibleDeflectionError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12e"
DEFLECTION_FLOAT_FORMAT = "%.17e"


def _to_builtin(value: Any) -> Any:
    """JSON fallback for numpy scalars and arrays"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class ReportGenerator:
    """
    Production-grade writer for run artifacts
    Every file carries the config hash and appears atomically in the output directory
    """

    def __init__(self, out_dir: Union[str, Path], config_hash: str):
        self.out_dir = Path(out_dir)
        self.config_hash = config_hash
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def _atomic_write(self, name: str, text: str) -> Path:
        target = self.out_dir / name
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.debug("Wrote %s", target)
        return target

    def write_csv(self, name: str, rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]]) -> Path:
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        body = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return self._atomic_write(name, f"# config_hash: {self.config_hash}\n{body}")

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        payload = {**data, "config_hash": self.config_hash}
        text = json.dumps(payload, sort_keys=True, indent=2, default=_to_builtin, allow_nan=True)
        return self._atomic_write(name, text + "\n")

    def write_potential_grid(self, name: str, phi: PotentialField) -> Path:
        """Structured grid: header with counts, extents and hash, then row-major nodal values from z = -H up"""
        mesh = phi.mesh
        lines = [
            f"# config_hash: {self.config_hash}",
            f"nx {mesh.nx + 1} nz {mesh.nz + 1}",
            f"x {-mesh.L!r} {mesh.L!r} z {-mesh.H!r} {mesh.d!r} interface_row {mesh.nz1}",
        ]
        lines += [" ".join(CSV_FLOAT_FORMAT % v for v in row) for row in phi.grid()]
        return self._atomic_write(name, "\n".join(lines) + "\n")

    def write_deflection(self, name: str, u: DeflectionProfile, params: PhysicalParams) -> Path:
        header = (f"# L={params.L!r} H={params.H!r} bc_mode={u.bc_mode} "
                  f"config_hash={self.config_hash}\n")
        frame = pd.DataFrame({"x": u.x_nodes, "u": u.u_values, "du": u.du_values})
        body = frame.to_csv(index=False, header=False, sep=" ",
                            float_format=DEFLECTION_FLOAT_FORMAT, lineterminator="\n")
        return self._atomic_write(name, header + body)


def _parse_header(line: str) -> Dict[str, str]:
    fields = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    return fields


def read_deflection(path: Union[str, Path], params: PhysicalParams, bc_mode: Optional[str] = None,
                    eps_gap: Optional[float] = None) -> DeflectionProfile:
    """
    Read a deflection file with columns x u [u']

    Without the slope column, slopes come from a cubic spline through (x, u), clamped in
    clamped mode and natural in pinned mode.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        header = _parse_header(handle.readline())
    if "L" in header and not np.isclose(float(header["L"]), params.L, rtol=1e-12, atol=0.0):
        raise InadmissibleDeflectionError(f"{path}: file was written for L={header['L']}, expected {params.L}")
    bc_mode = bc_mode or header.get("bc_mode", "clamped")

    frame = pd.read_csv(path, comment="#", sep=r"\s+", header=None, float_precision="round_trip")
    if frame.shape[1] not in (2, 3):
        raise InadmissibleDeflectionError(f"{path}: expected 2 or 3 columns, found {frame.shape[1]}")
    x = frame.iloc[:, 0].to_numpy(dtype=float)
    u = frame.iloc[:, 1].to_numpy(dtype=float)
    if frame.shape[1] == 3:
        du = frame.iloc[:, 2].to_numpy(dtype=float)
    else:
        spline = CubicSpline(x, u, bc_type="clamped" if bc_mode == "clamped" else "natural")
        du = spline(x, 1)
        if bc_mode == "clamped":
            du[[0, -1]] = 0.0
    if not np.isclose(x[0], -params.L) or not np.isclose(x[-1], params.L):
        raise InadmissibleDeflectionError(f"{path}: grid does not span [-L, L]")
    x[[0, -1]] = -params.L, params.L
    return DeflectionProfile(x, u, du, bc_mode, params.default_gap_floor(eps_gap))
