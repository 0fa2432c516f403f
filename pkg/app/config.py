"""
Run configuration
TOML run files with per-section defaults, environment overrides and a provenance hash
"""

import hashlib
import json
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from dotenv import load_dotenv

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback
    import tomli as tomllib

from app.analytics.geometry import PhysicalParams
from app.analytics.minimizer import MinimizeConfig
from app.analytics.verification import VerifyConfig
from app.errors import ConfigError, MemsModelError

load_dotenv()

SECTIONS = ("physical", "mesh", "solver", "deflection", "boundary", "minimize", "verify", "sweep", "output", "run")
DEFLECTION_SOURCES = ("flat", "file", "catalogue")
BOUNDARY_MODES = ("model", "oneD")


@dataclass(frozen=True)
class MeshConfig:
    nx: int = 64
    nz1: int = 32
    nz2: int = 32


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    method: str = "cg"
    trace_method: str = "extrapolated"


@dataclass(frozen=True)
class DeflectionConfig:
    """
    Initial or evaluated deflection

    nx = 0 means one Hermite element per mesh column; eps_gap = 0 means the default 1e-3 H.
    """

    source: str = "flat"
    shape: str = "quartic"
    amplitude: float = 0.0
    path: str = ""
    nx: int = 0
    bc_mode: str = "clamped"
    eps_gap: float = 0.0

    def __post_init__(self):
        if self.source not in DEFLECTION_SOURCES:
            raise ConfigError(f"deflection.source must be one of {DEFLECTION_SOURCES}, got {self.source!r}",
                              key="deflection.source")
        if self.source == "file" and not self.path:
            raise ConfigError("deflection.path is required when source = \"file\"", key="deflection.path")


@dataclass(frozen=True)
class BoundaryConfig:
    mode: str = "model"

    def __post_init__(self):
        if self.mode not in BOUNDARY_MODES:
            raise ConfigError(f"boundary.mode must be one of {BOUNDARY_MODES}, got {self.mode!r}",
                              key="boundary.mode")


@dataclass(frozen=True)
class SweepConfig:
    voltages: Tuple[float, ...] = (0.2, 0.5, 1.0)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    serial: bool = False
    log_level: str = "INFO"


@dataclass(frozen=True)
class RunConfig:
    """Fully validated configuration of one command"""

    physical: PhysicalParams = field(default_factory=PhysicalParams)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    deflection: DeflectionConfig = field(default_factory=DeflectionConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    minimize: MinimizeConfig = field(default_factory=MinimizeConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    run: RunSettings = field(default_factory=RunSettings)
    source: Optional[str] = None

    @property
    def hermite_nx(self) -> int:
        return self.deflection.nx or self.mesh.nx

    def semantic_dict(self) -> Dict[str, Any]:
        """Everything that influences results; output location and logging are excluded"""
        data = {name: asdict(getattr(self, name)) for name in SECTIONS if name not in ("output", "run")}
        data["seed"] = self.run.seed
        return data

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.semantic_dict(), sort_keys=True, default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, out_dir: Optional[str] = None, seed: Optional[int] = None,
                       serial: Optional[bool] = None, log_level: Optional[str] = None) -> "RunConfig":
        run = RunSettings(
            seed=self.run.seed if seed is None else int(seed),
            serial=self.run.serial if serial is None else bool(serial),
            log_level=self.run.log_level if log_level is None else log_level,
        )
        output = OutputConfig(dir=self.output.dir if out_dir is None else str(out_dir))
        return RunConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, "run": run, "output": output})


SECTION_TYPES = {
    "physical": PhysicalParams,
    "mesh": MeshConfig,
    "solver": SolverConfig,
    "deflection": DeflectionConfig,
    "boundary": BoundaryConfig,
    "minimize": MinimizeConfig,
    "verify": VerifyConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
    "run": RunSettings,
}


def _locate(lines, section: str, key: Optional[str] = None) -> Optional[int]:
    """1-based line of a section header, or of a key inside that section"""
    header = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]")
    any_header = re.compile(r"^\s*\[")
    key_pattern = re.compile(r"^\s*\"?" + re.escape(key) + r"\"?\s*=") if key else None
    inside = False
    for number, line in enumerate(lines, start=1):
        if header.match(line):
            if key_pattern is None:
                return number
            inside = True
            continue
        if inside and any_header.match(line):
            inside = False
        if inside and key_pattern.match(line):
            return number
    return None


def _coerce(cls, values: Dict[str, Any]):
    """Cast TOML values to the field types of the target dataclass"""
    types = {f.name: f.type for f in fields(cls)}
    coerced = {}
    for key, value in values.items():
        annotation = str(types[key])
        if isinstance(value, list):
            value = tuple(value)
        elif "float" in annotation and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        coerced[key] = value
    return coerced


def _build_section(name: str, values: Dict[str, Any], lines) -> Any:
    cls = SECTION_TYPES[name]
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'", key=f"{name}.{key}", line=_locate(lines, name, key))
    try:
        if name == "physical":
            return PhysicalParams.from_dict(values)
        if name in ("minimize", "verify"):
            return cls.from_dict(_coerce(cls, values))
        return cls(**_coerce(cls, values))
    except ConfigError as exc:
        key = (exc.key or "").split(".")[-1] or None
        raise ConfigError(str(exc), key=exc.key, line=_locate(lines, name, key) or _locate(lines, name)) from exc
    except (MemsModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}", key=name, line=_locate(lines, name)) from exc


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    """
    Parse and validate a TOML run file

    Raises:
        ConfigError: syntax errors, unknown sections or keys, invalid values
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", line=int(match.group(1)) if match else None) from exc

    lines = text.splitlines()
    sections = {}
    for name, values in data.items():
        if name not in SECTION_TYPES:
            raise ConfigError(f"unknown section '[{name}]'", key=name, line=_locate(lines, name))
        if not isinstance(values, dict):
            raise ConfigError(f"'{name}' must be a [section]", key=name, line=_locate(lines, name, name))
        sections[name] = _build_section(name, values, lines)
    return RunConfig(**sections, source=source)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Load a run file (or defaults when path is None) and apply environment overrides

    MEMS_OUTPUT_DIR, MEMS_LOG_LEVEL and MEMS_SERIAL override the file; command-line flags
    are applied afterwards by the caller via RunConfig.with_overrides.
    """
    if path is None:
        config = RunConfig()
    else:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
        config = parse_config(text, source=str(path))

    serial_env = os.getenv("MEMS_SERIAL")
    return config.with_overrides(
        out_dir=os.getenv("MEMS_OUTPUT_DIR"),
        log_level=os.getenv("MEMS_LOG_LEVEL"),
        serial=None if serial_env is None else serial_env.strip() == "1",
    )
