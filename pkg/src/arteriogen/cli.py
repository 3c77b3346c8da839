"""
Command line entry point. Each subcommand wraps one pipeline stage.

Exit status: 0 on success, 1 for usage or configuration errors, 2 for
runtime or domain errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfg, pipeline as pl, sampling

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("arteriogen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _triple(kind):
    def parse(s):
        parts = s.replace(",", " ").split()
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("expected three values")
        return tuple(kind(p) for p in parts)
    return parse


def _load_keys(path, allowed):
    values, problems = cfg.read_config(path, allowed)
    if problems:
        raise cfg.ConfigError(problems)
    return values


def cmd_phantom(a):
    pl.stage_phantom(a.dims, a.spacing, a.seed, a.out, root_out=a.root_out)


def cmd_cortex(a):
    root = pl.read_root(a.root) if a.root else pl.read_root(a.whole + ".root")
    pl.stage_cortex(a.whole, root, a.r1, a.r2, a.out)


def cmd_sample(a):
    smp = sampling.SamplingConfig(n_terminals=a.n, r_min=a.rmin, r_min_scale=a.rmin_scale,
                                  r0_mean=a.r0_mean, r0_std=a.r0_std, seed=a.seed)
    pl.stage_sample(a.cortex, smp, a.out)


def cmd_preprocess(a):
    pl.stage_preprocess(a.nodes, a.edges, a.root_id, a.max_depth, a.out_prefix, a.max_children,
                        a.artery_mask)


def cmd_build(a):
    values = _load_keys(a.config, cfg.GCO_KEYS | cfg.HEMO_KEYS | {"seed"}) if a.config else {}
    pl.stage_build(a.prebuilt_prefix, a.terminals, cfg.gco_config(values, values.get("seed", 0)),
                   cfg.hemo_config(values), a.out_prefix, a.trace, a.vtk)


def cmd_analyze(a):
    values = _load_keys(a.config, cfg.HEMO_KEYS | {"pressure_bin_mmhg"}) if a.config else {}
    pl.stage_analyze(a.tree_prefix, cfg.hemo_config(values), a.out_dir,
                     cfg.with_defaults(values)["pressure_bin_mmhg"])


def cmd_rasterize(a):
    pl.stage_rasterize(a.tree_prefix, a.dims, a.spacing, a.origin, a.out)


def cmd_synthesize(a):
    pl.stage_synthesize(a.label, a.sigma, a.sp, a.seed, a.out, a.mip, a.mip_axis)


def cmd_pipeline(a):
    pc = pl.PipelineConfig.from_file(a.config)
    if a.out_dir:
        pc.values["out_dir"] = a.out_dir
    paths = pl.run_pipeline(pc)
    print(paths["manifest"])


def cmd_validate_config(a):
    problems = cfg.validate_config(a.config)
    for p in problems:
        print(p)
    if problems:
        raise cfg.ConfigError(problems)
    print("ok")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arteriogen", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="generate a synthetic organ mask")
    s.add_argument("--dims", type=_triple(int), default=(96, 96, 96), help="grid size in voxels, e.g. 96,96,96")
    s.add_argument("--spacing", type=float, default=100.0, help="voxel edge in um")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="mask file")
    s.add_argument("--root-out", help="root position file (default: <out>.root)")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("cortex", help="extract the cortex shell from a whole-organ mask")
    s.add_argument("--whole", required=True, help="whole-organ mask file")
    s.add_argument("--root", help="root position file, three coordinates in um (default: <whole>.root)")
    s.add_argument("--r1", type=float, default=2000.0, help="erosion radius in um")
    s.add_argument("--r2", type=float, default=5650.0, help="root exclusion radius in um")
    s.add_argument("--out", required=True, help="cortex mask file")
    s.set_defaults(func=cmd_cortex)

    s = sub.add_parser("sample", help="Poisson disk terminals inside the cortex")
    s.add_argument("--cortex", required=True, help="cortex mask file")
    s.add_argument("--n", type=int, required=True, help="number of terminals")
    s.add_argument("--rmin", type=float, help="minimum distance in um (default: derived from volume)")
    s.add_argument("--rmin-scale", type=float, default=1.0, help="k in k (V/n)^(1/3) when --rmin is absent")
    s.add_argument("--r0-mean", type=float, default=10.08, help="terminal radius mean in um")
    s.add_argument("--r0-std", type=float, default=0.14, help="terminal radius std in um")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="terminal CSV (x,y,z,radius in um)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("preprocess", help="turn a raw centerline graph into a prebuilt tree")
    s.add_argument("--nodes", required=True, help="centerline nodes CSV (id,x,y,z[,radius], um)")
    s.add_argument("--edges", required=True, help="centerline edges CSV (id_a,id_b[,radius], um)")
    s.add_argument("--root-id", type=int, required=True, help="node id of the inlet")
    s.add_argument("--max-depth", type=float, required=True, help="path length cut-off from the root in um")
    s.add_argument("--max-children", type=int, default=4, help="children kept per node")
    s.add_argument("--artery-mask", help="mask used to assign radii by distance transform")
    s.add_argument("--out-prefix", required=True, help="tree file prefix (writes <prefix>nodes.csv, edges.csv)")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("build", help="run the optimizer from a prebuilt tree and terminals",
                       epilog="config keys:\n" + cfg.schema_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--prebuilt-prefix", required=True, help="prebuilt tree file prefix")
    s.add_argument("--terminals", required=True, help="terminal CSV")
    s.add_argument("--config", help="key = value file with optimizer and hemodynamic keys")
    s.add_argument("--out-prefix", required=True, help="output tree file prefix")
    s.add_argument("--trace", required=True, help="convergence trace CSV")
    s.add_argument("--vtk", help="optional legacy VTK polydata export")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("analyze", help="morphometry and hemodynamics tables")
    s.add_argument("--tree-prefix", required=True, help="tree file prefix")
    s.add_argument("--config", help="key = value file (inlet_flow_Q0 ml/min, inlet_pressure_p0 mmHg, ...)")
    s.add_argument("--out-dir", required=True, help="directory for the CSV tables")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("rasterize", help="voxelize a tree with the tube function")
    s.add_argument("--tree-prefix", required=True, help="tree file prefix")
    s.add_argument("--dims", type=_triple(int), required=True, help="grid size in voxels")
    s.add_argument("--spacing", type=float, required=True, help="voxel edge in um")
    s.add_argument("--origin", type=_triple(float), default=(0.0, 0.0, 0.0), help="grid origin in um")
    s.add_argument("--out", required=True, help="label mask file")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("synthesize", help="noisy float image from a label mask")
    s.add_argument("--label", required=True, help="label mask file")
    s.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise std (intensity units)")
    s.add_argument("--sp", type=float, default=0.0, help="salt and pepper fraction in [0, 1]")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="float32 volume file")
    s.add_argument("--mip", help="optional maximum intensity projection (ASCII PGM)")
    s.add_argument("--mip-axis", type=int, choices=(0, 1, 2), default=2, help="projection axis")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("pipeline", help="run every stage from one config file",
                       epilog="config keys:\n" + cfg.schema_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--config", required=True, help="key = value pipeline config")
    s.add_argument("--out-dir", help="override out_dir from the config")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("validate-config", help="list every problem in a pipeline config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_validate_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except cfg.ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_USAGE
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
