"""Pipeline configuration: line-oriented key=value files with sections.

Format::

    # comment
    [section]
    key = value

Unknown sections or keys are rejected, as are values outside their
documented ranges; see README.md for the full key table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .flatten import FlattenOptions
from .optimize import SolverOptions
from .plate import PlateParams

# (type, default, min, max); None bounds mean unbounded.
SCHEMA = {
    "input": {
        "path": (str, "", None, None),
    },
    "output": {
        "dir": (str, "out", None, None),
    },
    "remesh": {
        "target_edge_len": (float, 0.0, 0.0, None),  # 0 disables remeshing
        "iters": (int, 10, 1, 1000),
    },
    "flatten": {
        "shrink_rate": (float, 0.14, 0.0, 0.999),
        "kappa": (float, 1.2, 1.0, 10.0),
        "cut_rate": (float, 0.1, 0.0, 1.0),
        "eps_tor": (float, 0.1, 0.0, 10.0),
        "weld_tol_factor": (float, 1e-4, 0.0, 1.0),
        "align_max_rounds": (int, 0, 0, 100000),
        "outer_max_iters": (int, 50, 1, 100000),
        "arap_max_iters": (int, 100, 1, 100000),
        "arap_tol": (float, 1e-7, 0.0, 1.0),
    },
    "solver": {
        "memory": (int, 10, 0, 1000),
        "grad_tol": (float, 0.0, 0.0, None),  # 0 means the dimension default
        "max_iters": (int, 500, 1, 1000000),
    },
    "refine": {
        "learn_factor": (float, 40.0, 0.0, None),
        "loss_factor": (float, 1e-3, 0.0, 1.0),
        "max_steps": (int, 2000, 1, 1000000),
    },
    "plate": {
        "tile_thickness": (float, 2.4, 0.0, None),
        "connector_thickness": (float, 0.8, 0.0, None),
        "connector_width": (float, 0.0, 0.0, None),  # 0 means auto
        "clearance": (float, 0.36, 0.0, None),
        "shrink_rate_limit": (float, 0.14, 0.0, 0.999),
        "tile_layer_h": (float, 0.3, 0.0, None),
        "tile_speed": (float, 100.0, 0.0, None),
    },
    "verify": {
        "scan_points": (int, 0, 0, 10000000),
        "scan_sigma": (float, 0.0, 0.0, None),
        "scan_path": (str, "", None, None),
    },
    "run": {
        "seed": (int, 0, 0, 2**31 - 1),
    },
}


@dataclass
class PipelineConfig:
    """Typed view of a parsed configuration file."""

    values: dict = field(default_factory=dict)
    input_path: str = ""
    output_dir: str = "out"

    def get(self, section: str, key: str):
        return self.values[section][key]

    def flatten_options(self) -> FlattenOptions:
        f = self.values["flatten"]
        s = self.values["solver"]
        r = self.values["refine"]
        solver = SolverOptions(
            memory=s["memory"],
            grad_tol=s["grad_tol"] or None,
            max_iters=s["max_iters"])
        return FlattenOptions(
            shrink_rate=f["shrink_rate"], kappa=f["kappa"],
            cut_rate=f["cut_rate"], tolerance=f["eps_tor"],
            weld_tol_factor=f["weld_tol_factor"],
            align_max_rounds=f["align_max_rounds"],
            outer_max_iters=f["outer_max_iters"],
            arap_max_iters=f["arap_max_iters"], arap_tol=f["arap_tol"],
            refine_learn_factor=r["learn_factor"],
            refine_loss_factor=r["loss_factor"],
            refine_max_steps=r["max_steps"],
            solver=solver)

    def plate_params(self) -> PlateParams:
        p = self.values["plate"]
        return PlateParams(
            tile_thickness=p["tile_thickness"],
            connector_thickness=p["connector_thickness"],
            connector_width=p["connector_width"] or None,
            clearance=p["clearance"],
            shrink_rate_limit=p["shrink_rate_limit"])


def default_config() -> PipelineConfig:
    values = {sec: {k: spec[1] for k, spec in keys.items()}
              for sec, keys in SCHEMA.items()}
    return PipelineConfig(values=values,
                          input_path=values["input"]["path"],
                          output_dir=values["output"]["dir"])


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section '{section}'")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key '{key}' outside any section")
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{section}.{key}'")
        typ, _, lo, hi = SCHEMA[section][key]
        if typ is str:
            parsed = value
        else:
            try:
                parsed = typ(value) if typ is not int else int(value, 0)
            except ValueError as exc:
                raise ConfigError(
                    f"{source}:{lineno}: bad value for '{section}.{key}': "
                    f"{value!r}") from exc
            if lo is not None and parsed < lo:
                raise ConfigError(
                    f"{source}:{lineno}: '{section}.{key}' must be >= {lo}")
            if hi is not None and parsed > hi:
                raise ConfigError(
                    f"{source}:{lineno}: '{section}.{key}' must be <= {hi}")
        cfg.values[section][key] = parsed
    cfg.input_path = cfg.values["input"]["path"]
    cfg.output_dir = cfg.values["output"]["dir"]
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(path.read_text(), source=str(path))
