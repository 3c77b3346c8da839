"""
Flat ``key = value`` configuration files.

One schema covers every pipeline stage. Each key has a type, a unit, a range
check and a default (keys without a default are required by the pipeline).
Interface units are the internal ones (um, N, s) except ``inlet_flow_Q0``
(ml/min) and ``inlet_pressure_p0`` (mmHg).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .domain import CortexParams, PhantomShape
from .gco import GcoConfig
from .sampling import SamplingConfig
from .tree import ML_PER_MIN, MMHG, HemoConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


_REQUIRED = object()


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, bool, str, ints, floats, path
    default: Any
    unit: str
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    help: str = ""

    @property
    def required(self) -> bool:
        return self.default is _REQUIRED


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_interval(v):
    return 0 <= v <= 1


def _triple_pos(v):
    return len(v) == 3 and all(x > 0 for x in v)


_gco = GcoConfig()
_smp = SamplingConfig()
_shape = PhantomShape()

SCHEMA: list[Key] = [
    # pipeline
    Key("seed", "int", _REQUIRED, "-", _nonneg, ">= 0", "top-level seed; stages draw from SeedSequence([seed, stage])"),
    Key("out_dir", "path", _REQUIRED, "-", None, "", "directory receiving every artifact"),
    Key("rasterize", "bool", False, "-", None, "", "also rasterize and synthesize a noisy image"),
    # domain
    Key("whole_mask", "path", "", "-", None, "", "ingest this mask instead of generating a phantom"),
    Key("root_position", "floats", (), "um", lambda v: len(v) in (0, 3), "empty or 3 values",
        "inlet position; required with whole_mask"),
    Key("dims", "ints", (96, 96, 96), "voxels", lambda v: len(v) == 3 and min(v) >= 32, "3 values >= 32",
        "phantom grid size"),
    Key("spacing", "float", 100.0, "um", _pos, "> 0", "isotropic voxel edge"),
    Key("phantom_semi_axes", "floats", _shape.semi_axes, "fraction of half-extent", _triple_pos, "3 values > 0",
        "organ ellipsoid"),
    Key("carve_semi_axes", "floats", _shape.carve_semi_axes, "fraction of half-extent", _triple_pos,
        "3 values > 0", "hilum carve ellipsoid"),
    Key("carve_depth", "float", _shape.carve_depth, "fraction of first semi-axis", lambda v: 0 <= v < 1, "in [0, 1)",
        "0 gives a plain ellipsoid"),
    Key("wobble", "float", _shape.wobble, "-", lambda v: 0 <= v < 0.5, "in [0, 0.5)", "surface perturbation"),
    Key("erosion_radius_R1", "float", 2000.0, "um", _pos, "> 0", "cortex shell thickness"),
    Key("exclusion_radius_R2", "float", 5650.0, "um", _nonneg, ">= 0", "hilum exclusion ball radius"),
    # sampling
    Key("n_terminals", "int", _REQUIRED, "-", _pos, ">= 1", "requested afferent arteriole count"),
    Key("r_min", "float", 0.0, "um", _nonneg, ">= 0", "Poisson disk distance; 0 derives it from cortex volume"),
    Key("r_min_scale", "float", _smp.r_min_scale, "-", _pos, "> 0", "factor k in k (V/n)^(1/3)"),
    Key("r0_mean", "float", _smp.r0_mean, "um", _pos, "> 0", "terminal radius mean"),
    Key("r0_std", "float", _smp.r0_std, "um", _nonneg, ">= 0", "terminal radius std"),
    Key("candidates_per_point", "int", _smp.candidates_per_point, "-", _pos, ">= 1", "Bridson k"),
    # centerline
    Key("centerline_nodes", "path", "", "-", None, "", "ingested centerline nodes.csv (synthetic if empty)"),
    Key("centerline_edges", "path", "", "-", None, "", "ingested centerline edges.csv"),
    Key("artery_mask", "path", "", "-", None, "", "mask whose distance transform gives edge radii"),
    Key("centerline_root_id", "int", 0, "-", _nonneg, ">= 0", "root node id of the ingested centerline"),
    Key("centerline_generations", "int", 3, "-", _nonneg, ">= 0", "synthetic centerline branching depth"),
    Key("centerline_root_radius", "float", 300.0, "um", _pos, "> 0", "synthetic centerline inlet radius"),
    Key("max_children", "int", 4, "-", _pos, ">= 1", "degree pruning cap"),
    Key("max_depth", "float", _REQUIRED, "um", _pos, "> 0", "depth pruning path length from the root"),
    # optimisation
    Key("w_c", "float", _gco.w_c, "N/(um^2 s)", _nonneg, ">= 0", "volume (metabolic) weight"),
    Key("w_p", "float", _gco.w_p, "-", _nonneg, ">= 0", "power weight"),
    Key("viscosity_mu", "float", _gco.viscosity_mu, "N s/um^2", _pos, "> 0", "blood viscosity"),
    Key("merge_ratio_threshold", "float", _gco.merge_ratio_threshold, "-", _pos, "> 0", "merge if l_min / l_max below"),
    Key("merge_abs_epsilon", "float", _gco.merge_abs_epsilon, "um", _pos, "> 0", "merge edges shorter than this"),
    Key("prune_order_schedule", "ints", _gco.prune_order_schedule, "Strahler order",
        lambda v: len(v) >= 1 and min(v) >= 0, ">= 1 values >= 0", "prune threshold per iteration"),
    Key("max_iterations", "int", _gco.max_iterations, "-", _nonneg, ">= 0", "outer GCO iterations"),
    Key("relax_tolerance", "float", _gco.relax_tolerance, "-", _pos, "> 0", "gradient cutoff relative to sum of k"),
    Key("relax_max_steps", "int", _gco.relax_max_steps, "-", _pos, ">= 1", "BFGS step cap per node"),
    Key("min_edge_epsilon", "float", _gco.min_edge_epsilon, "um", _pos, "> 0", "closest approach to a neighbour"),
    Key("inner_max_steps", "int", _gco.inner_max_steps, "-", _pos, ">= 1", "relax/merge/split rounds per iteration"),
    Key("convergence_tol", "float", _gco.convergence_tol, "-", _pos, "> 0", "relative cost change to stop"),
    Key("split_weiszfeld_steps", "int", _gco.split_weiszfeld_steps, "-", _pos, ">= 1", "split candidate iterations"),
    Key("attach_to_all_nodes", "bool", False, "-", None, "", "initial attachment to any prebuilt node"),
    Key("workers", "int", 1, "-", _pos, ">= 1", "threads for subtree-parallel relaxation"),
    # hemodynamics
    Key("inlet_flow_Q0", "float", 7.0, "ml/min", _pos, "> 0", "total inflow at the root"),
    Key("inlet_pressure_p0", "float", 100.0, "mmHg", _pos, "> 0", "root pressure"),
    Key("pressure_bin_mmhg", "float", 1.0, "mmHg", _pos, "> 0", "AA pressure histogram bin width"),
    # image synthesis
    Key("noise_sigma", "float", 0.0, "-", _nonneg, ">= 0", "Gaussian noise std"),
    Key("noise_saltpepper", "float", 0.0, "-", _unit_interval, "in [0, 1]", "salt and pepper fraction"),
]

KEYS = {k.name: k for k in SCHEMA}
GCO_KEYS = {f.name for f in fields(GcoConfig)} - {"seed"}
HEMO_KEYS = {"viscosity_mu", "inlet_flow_Q0", "inlet_pressure_p0"}


def _parse_value(key: Key, raw: str):
    raw = raw.strip()
    if key.kind == "int":
        return int(raw)
    if key.kind == "float":
        v = float(raw)
        if math.isnan(v):
            raise ValueError("nan")
        return v
    if key.kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if key.kind in ("ints", "floats"):
        parts = [p for p in raw.replace(",", " ").split() if p]
        conv = int if key.kind == "ints" else float
        return tuple(conv(p) for p in parts)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> tuple[dict, list[str]]:
    """Return ``(values, problems)``; problems cover syntax, unknown keys, types and ranges."""
    values: dict[str, Any] = {}
    problems: list[str] = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{n}: expected 'key = value'")
            continue
        name, raw = (s.strip() for s in line.split("=", 1))
        key = KEYS.get(name)
        if key is None:
            problems.append(f"{source}:{n}: unknown key '{name}'")
            continue
        if name in values:
            problems.append(f"{source}:{n}: duplicate key '{name}'")
            continue
        try:
            v = _parse_value(key, raw)
        except ValueError:
            problems.append(f"{source}:{n}: {name}: cannot parse {raw!r} as {key.kind}")
            continue
        if key.check is not None and not key.check(v):
            problems.append(f"{source}:{n}: {name} = {raw} out of range ({key.rule}, unit {key.unit})")
            continue
        values[name] = v
    return values, problems


def read_config(path, allowed: set[str] | None = None) -> tuple[dict, list[str]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    values, problems = parse_config_text(text, str(path))
    if allowed is not None:
        for name in sorted(set(values) - allowed):
            problems.append(f"{path}: key '{name}' is not accepted here")
            del values[name]
    return values, problems


def _cross_checks(values: dict) -> list[str]:
    out = []
    w_c, w_p = values.get("w_c", _gco.w_c), values.get("w_p", _gco.w_p)
    if w_c == 0 and w_p == 0:
        out.append("w_c and w_p cannot both be zero")
    if values.get("whole_mask") and len(values.get("root_position", ())) != 3:
        out.append("root_position (3 values, um) is required with whole_mask")
    if bool(values.get("centerline_nodes")) != bool(values.get("centerline_edges")):
        out.append("centerline_nodes and centerline_edges must be given together")
    return out


def validate_config(path) -> list[str]:
    """Every problem in a pipeline config file, including missing required keys."""
    values, problems = read_config(path)
    for k in SCHEMA:
        if k.required and k.name not in values:
            problems.append(f"missing required key '{k.name}' ({k.unit})")
    return problems + _cross_checks(values)


def with_defaults(values: dict) -> dict:
    out = {k.name: k.default for k in SCHEMA if not k.required}
    out.update(values)
    return out


# -- conversion to library configs -------------------------------------------------

def gco_config(values: dict, seed: int = 0) -> GcoConfig:
    v = with_defaults(values)
    kw = {name: v[name] for name in GCO_KEYS}
    return GcoConfig(seed=seed, **kw)


def hemo_config(values: dict) -> HemoConfig:
    v = with_defaults(values)
    return HemoConfig(v["viscosity_mu"], v["inlet_flow_Q0"] * ML_PER_MIN, v["inlet_pressure_p0"] * MMHG)


def sampling_config(values: dict, seed: int = 0) -> SamplingConfig:
    v = with_defaults(values)
    return SamplingConfig(n_terminals=v["n_terminals"], r_min=v["r_min"] or None, r_min_scale=v["r_min_scale"],
                          r0_mean=v["r0_mean"], r0_std=v["r0_std"],
                          candidates_per_point=v["candidates_per_point"], seed=seed)


def cortex_params(values: dict, root) -> CortexParams:
    v = with_defaults(values)
    return CortexParams(v["erosion_radius_R1"], v["exclusion_radius_R2"], np.asarray(root, dtype=float))


def phantom_shape(values: dict) -> PhantomShape:
    v = with_defaults(values)
    return PhantomShape(tuple(v["phantom_semi_axes"]), tuple(v["carve_semi_axes"]), v["carve_depth"], v["wobble"])


def format_config(values: dict) -> str:
    """Serialise values in schema order (round-trips through :func:`parse_config_text`)."""
    lines = []
    for k in SCHEMA:
        if k.name not in values:
            continue
        v = values[k.name]
        if k.kind in ("ints", "floats"):
            s = " ".join(repr(x) for x in v)
        elif k.kind == "bool":
            s = "true" if v else "false"
        else:
            s = repr(v) if k.kind == "float" else str(v)
        lines.append(f"{k.name} = {s}")
    return "\n".join(lines) + "\n"


def schema_help() -> str:
    width = max(len(k.name) for k in SCHEMA)
    rows = []
    for k in SCHEMA:
        d = "required" if k.required else f"default {k.default!r}"
        rows.append(f"  {k.name:<{width}}  [{k.unit}] {k.help} ({d})")
    return "\n".join(rows)
