"""
Staged pipeline: phantom (or mask ingestion), cortex, sample, preprocess,
build, analyze and optionally rasterize plus synthesize.

Each stage is a small function over file paths so the CLI subcommands and the
end-to-end driver share exactly the same code. Every stage appends one line to
``manifest.tsv``: stage, input hashes, output hashes and wall time.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, centerline, config as cfg, domain, gco, raster, sampling, tree as tr

log = logging.getLogger(__name__)

STAGES = ("phantom", "cortex", "sample", "preprocess", "build", "analyze", "rasterize", "synthesize")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage seed: first word of ``SeedSequence([seed, index of stage])``."""
    return int(np.random.SeedSequence([int(seed), STAGES.index(stage)]).generate_state(1)[0])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(stage, *paths):
    for p in paths:
        if not Path(p).exists():
            raise StageError(stage, f"missing input {p}")


# -- stage bodies ------------------------------------------------------------------

def write_root(root, path):
    Path(path).write_text(" ".join(repr(float(v)) for v in root) + "\n")


def read_root(path) -> np.ndarray:
    vals = [float(v) for v in Path(path).read_text().split()]
    if len(vals) != 3:
        raise domain.DomainError(f"{path}: expected three coordinates")
    return np.array(vals)


def stage_phantom(dims, spacing, seed, out, shape=None, root_out=None):
    ph = domain.generate_phantom(dims, spacing, shape, seed)
    domain.save_mask(ph.mask, out)
    root_out = root_out or str(out) + ".root"
    write_root(ph.root_position, root_out)
    return ph


def stage_cortex(whole_path, root, R1, R2, out):
    whole = domain.load_mask(whole_path)
    cortex = domain.extract_cortex(whole, domain.CortexParams(R1, R2, np.asarray(root, dtype=float)))
    domain.save_mask(cortex, out)
    return cortex


def stage_sample(cortex_path, smp: sampling.SamplingConfig, out):
    cortex = domain.load_mask(cortex_path)
    terms, res = sampling.sample_terminals(cortex, smp)
    if not res.ok:
        log.warning("only %d of %d terminals placed", len(terms), smp.n_terminals)
    sampling.save_terminals(terms, out)
    return terms


def stage_preprocess(nodes, edges, root_id, max_depth, out_prefix, max_children=4, artery_mask=None):
    graph = centerline.load_centerline(nodes, edges)
    field = domain.distance_transform(domain.load_mask(artery_mask)) if artery_mask else None
    t = centerline.preprocess(graph, root_id, max_depth, max_children, field)
    tr.save_tree(t, out_prefix)
    return t


def stage_build(prebuilt_prefix, terminals_path, gconf: gco.GcoConfig, hemo: tr.HemoConfig,
                out_prefix, trace_path, vtk_path=None):
    pre = tr.load_tree(prebuilt_prefix, prebuilt=True)
    terms = sampling.load_terminals(terminals_path)
    t, trace = gco.run(pre, terms, gconf, hemo)
    trace.save(trace_path)
    tr.save_tree(t, out_prefix)
    if vtk_path:
        tr.write_vtk(t, vtk_path, tr.compute_pressures(t, hemo))
    return t, trace


def stage_analyze(tree_prefix, hemo: tr.HemoConfig, out_dir, bin_width=1.0):
    t = tr.load_tree(tree_prefix)
    orders = tr.strahler_orders(t)
    morph = analysis.morphometry(t, orders)
    hrep = analysis.hemodynamics(t, hemo, bin_width, orders)
    analysis.export_report(morph, out_dir, hrep)
    return morph, hrep


def stage_rasterize(tree_prefix, dims, spacing, origin, out):
    t = tr.load_tree(tree_prefix)
    label = raster.rasterize(t, dims, spacing, origin)
    domain.save_mask(label, out)
    return label


def stage_synthesize(label_path, sigma, sp, seed, out, mip=None, mip_axis=2):
    label = domain.load_mask(label_path)
    vol = raster.add_noise(label, sigma, sp, seed)
    domain.save_volume(vol, label.spacing, label.origin, out)
    if mip:
        raster.write_pgm(raster.max_intensity_projection(vol, mip_axis), mip)
    return vol


# -- driver ------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    values: dict

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        problems = cfg.validate_config(path)
        if problems:
            raise cfg.ConfigError(problems)
        values, _ = cfg.read_config(path)
        return cls(cfg.with_defaults(values))

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def paths(self) -> dict[str, Path]:
        o = self.out_dir
        return {
            "whole": o / "whole.mask", "root": o / "root.txt", "cortex": o / "cortex.mask",
            "terminals": o / "terminals.csv", "cl_nodes": o / "centerline_nodes.csv",
            "cl_edges": o / "centerline_edges.csv", "prebuilt": o / "prebuilt_",
            "tree": o / "tree_", "trace": o / "trace.csv", "vtk": o / "tree.vtk",
            "report": o / "report", "label": o / "label.mask", "image": o / "image.vol",
            "mip": o / "mip.pgm", "manifest": o / "manifest.tsv",
        }


def _expand(paths):
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.is_file()))
        elif p.name.endswith("_") and not p.exists():
            out.extend([Path(str(p) + "nodes.csv"), Path(str(p) + "edges.csv")])
        else:
            out.append(p)
    return out


class Manifest:
    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("stage\tinputs\toutputs\twall_s\n")

    def record(self, stage, inputs, outputs, wall):
        def fmt(ps):
            return ",".join(f"{p.name}:{file_hash(p)[:16]}" for p in _expand(ps)) or "-"
        with open(self.path, "a") as fh:
            fh.write(f"{stage}\t{fmt(inputs)}\t{fmt(outputs)}\t{wall:.3f}\n")


def run_pipeline(pc: PipelineConfig) -> dict[str, Path]:
    """Run every stage in order. Raises ``StageError`` naming the failing stage."""
    v = pc.values
    P = pc.paths()
    pc.out_dir.mkdir(parents=True, exist_ok=True)
    man = Manifest(P["manifest"])
    hemo = cfg.hemo_config(v)

    def step(stage, fn, inputs, outputs):
        _require(stage, *[p for p in inputs if not str(p).endswith("_")])
        t0 = time.perf_counter()
        try:
            fn()
        except StageError:
            raise
        except Exception as exc:  # any stage error halts with the stage named
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        man.record(stage, inputs, outputs, time.perf_counter() - t0)
        log.info("stage %s done in %.2fs", stage, time.perf_counter() - t0)

    if v["whole_mask"]:
        def ingest():
            domain.save_mask(domain.load_mask(v["whole_mask"]), P["whole"])
            write_root(v["root_position"], P["root"])
        step("phantom", ingest, [v["whole_mask"]], [P["whole"], P["root"]])
    else:
        step("phantom", lambda: stage_phantom(v["dims"], v["spacing"], stage_seed(pc.seed, "phantom"),
                                              P["whole"], cfg.phantom_shape(v), P["root"]),
             [], [P["whole"], P["root"]])

    step("cortex", lambda: stage_cortex(P["whole"], read_root(P["root"]), v["erosion_radius_R1"],
                                        v["exclusion_radius_R2"], P["cortex"]),
         [P["whole"], P["root"]], [P["cortex"]])

    step("sample", lambda: stage_sample(P["cortex"], cfg.sampling_config(v, stage_seed(pc.seed, "sample")),
                                        P["terminals"]),
         [P["cortex"]], [P["terminals"]])

    art = v["artery_mask"] or None
    if v["centerline_nodes"]:
        nodes, edges = Path(v["centerline_nodes"]), Path(v["centerline_edges"])
        step("preprocess", lambda: stage_preprocess(nodes, edges, v["centerline_root_id"], v["max_depth"],
                                                    P["prebuilt"], v["max_children"], art),
             [nodes, edges] + ([art] if art else []), [P["prebuilt"]])
    else:
        def synth_and_preprocess():
            whole = domain.load_mask(P["whole"])
            g, root_id = centerline.synthetic_centerline(
                whole, read_root(P["root"]), v["centerline_generations"], v["centerline_root_radius"],
                seed=stage_seed(pc.seed, "preprocess"))
            centerline.save_centerline(g, P["cl_nodes"], P["cl_edges"])
            stage_preprocess(P["cl_nodes"], P["cl_edges"], root_id, v["max_depth"], P["prebuilt"],
                             v["max_children"], art)
        step("preprocess", synth_and_preprocess, [P["whole"], P["root"]] + ([art] if art else []),
             [P["cl_nodes"], P["cl_edges"], P["prebuilt"]])

    step("build", lambda: stage_build(P["prebuilt"], P["terminals"], cfg.gco_config(v, stage_seed(pc.seed, "build")),
                                      hemo, P["tree"], P["trace"], P["vtk"]),
         [P["prebuilt"], P["terminals"]], [P["tree"], P["trace"], P["vtk"]])

    step("analyze", lambda: stage_analyze(P["tree"], hemo, P["report"], v["pressure_bin_mmhg"]),
         [P["tree"]], [P["report"]])

    if v["rasterize"]:
        whole_hdr = domain.load_mask(P["whole"])
        step("rasterize", lambda: stage_rasterize(P["tree"], whole_hdr.dims, whole_hdr.spacing,
                                                  whole_hdr.origin, P["label"]),
             [P["tree"]], [P["label"]])
        step("synthesize", lambda: stage_synthesize(P["label"], v["noise_sigma"], v["noise_saltpepper"],
                                                    stage_seed(pc.seed, "synthesize"), P["image"], P["mip"]),
             [P["label"]], [P["image"], P["mip"]])
    return P


def artifact_hashes(out_dir) -> dict[str, str]:
    """Hash of every artifact under ``out_dir`` except the manifest (which holds wall times)."""
    root = Path(out_dir)
    return {str(p.relative_to(root)): file_hash(p) for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.tsv"}
