import subprocess
import sys

import pytest

from arteriogen import cli, config as cfg, pipeline as pl
from arteriogen.centerline import save_centerline, synthetic_centerline
from arteriogen.domain import load_mask
from arteriogen.sampling import SamplingConfig
from arteriogen.tree import ML_PER_MIN, MMHG

SMALL = """\
seed = 7
n_terminals = 200
dims = 64 64 64
spacing = 100
erosion_radius_R1 = 1200
exclusion_radius_R2 = 1500
r_min_scale = 0.8
max_depth = 1e9
max_iterations = 3
inlet_flow_Q0 = 0.0466
rasterize = true
noise_sigma = 0.1
noise_saltpepper = 0.01
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config parsing ------------------------------------------------------------------

def test_empty_config_lists_every_required_key(tmp_path):
    problems = cfg.validate_config(write_cfg(tmp_path, ""))
    required = sorted(k.name for k in cfg.SCHEMA if k.required)
    assert len(problems) == len(required)
    for name in required:
        assert any(f"'{name}'" in p for p in problems)


def test_range_unknown_duplicate_and_syntax(tmp_path):
    text = "w_p = -1\nbogus = 3\nseed = 1\nseed = 2\nno equals sign\nn_terminals = many\n"
    problems = cfg.validate_config(write_cfg(tmp_path, text))
    joined = "\n".join(problems)
    assert "w_p = -1 out of range" in joined
    assert "unknown key 'bogus'" in joined
    assert "duplicate key 'seed'" in joined
    assert ":5: expected 'key = value'" in joined
    assert "cannot parse 'many'" in joined


def test_cross_checks(tmp_path):
    base = f"out_dir = {tmp_path}\n" + SMALL
    assert cfg.validate_config(write_cfg(tmp_path, base + "w_c = 0\nw_p = 0\n"))[-1] == \
        "w_c and w_p cannot both be zero"
    problems = cfg.validate_config(write_cfg(tmp_path, base + "centerline_nodes = a.csv\n"))
    assert any("together" in p for p in problems)
    problems = cfg.validate_config(write_cfg(tmp_path, base + "whole_mask = w.mask\n"))
    assert any("root_position" in p for p in problems)


def test_reference_config_is_valid_and_converts(tmp_path):
    p = write_cfg(tmp_path, f"out_dir = {tmp_path / 'o'}\n" + SMALL)
    assert cfg.validate_config(p) == []
    pc = pl.PipelineConfig.from_file(p)
    assert pc.seed == 7 and pc.values["dims"] == (64, 64, 64)
    h = cfg.hemo_config(pc.values)
    assert h.inlet_flow_Q0 == pytest.approx(0.0466 * ML_PER_MIN)
    assert h.inlet_pressure_p0 == pytest.approx(100 * MMHG)
    g = cfg.gco_config(pc.values, 3)
    assert g.max_iterations == 3 and g.seed == 3


def test_format_config_roundtrip():
    values = {"seed": 4, "out_dir": "x", "n_terminals": 10, "max_depth": 5.0, "dims": (32, 40, 48),
              "rasterize": True}
    back, problems = cfg.parse_config_text(cfg.format_config(values))
    assert problems == []
    assert {k: back[k] for k in values} == values


def test_stage_seeds_distinct_and_stable():
    seeds = [pl.stage_seed(7, s) for s in pl.STAGES]
    assert len(set(seeds)) == len(seeds)
    assert seeds == [pl.stage_seed(7, s) for s in pl.STAGES]
    assert pl.stage_seed(8, "sample") != pl.stage_seed(7, "sample")


# -- exit codes --------------------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    assert cli.main(["nonsense"]) == 1
    assert cli.main(["phantom"]) == 1  # --out missing
    assert cli.main(["validate-config", "--config", str(write_cfg(tmp_path, ""))]) == 1
    assert cli.main(["validate-config", "--config", str(tmp_path / "absent.cfg")]) == 1
    good = write_cfg(tmp_path, f"out_dir = {tmp_path}\n" + SMALL, "good.cfg")
    assert cli.main(["validate-config", "--config", str(good)]) == 0
    missing = tmp_path / "nowhere.mask"
    assert cli.main(["cortex", "--whole", str(missing), "--root", str(missing), "--out",
                     str(tmp_path / "c.mask")]) == 2
    err = capsys.readouterr().err
    assert "cortex" in err and "nowhere.mask" in err


def test_pipeline_missing_input_names_stage(tmp_path, capsys):
    text = f"out_dir = {tmp_path / 'o'}\n" + SMALL + \
        f"centerline_nodes = {tmp_path / 'n.csv'}\ncenterline_edges = {tmp_path / 'e.csv'}\n"
    assert cli.main(["pipeline", "--config", str(write_cfg(tmp_path, text))]) == 2
    err = capsys.readouterr().err
    assert "stage 'preprocess'" in err and "n.csv" in err


def test_console_script_module_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "arteriogen.cli", "validate-config", "--config",
                          str(write_cfg(tmp_path, ""))], capture_output=True, text=True)
    assert out.returncode == 1 and "missing required key" in out.stdout


# -- CLI vs library -----------------------------------------------------------------------

def test_cli_stages_match_library(tmp_path):
    a, b = tmp_path / "cli", tmp_path / "lib"
    a.mkdir()
    b.mkdir()
    run = lambda *args: cli.main([str(x) for x in args])  # noqa: E731
    assert run("phantom", "--dims", "40,40,40", "--spacing", 100, "--seed", 3, "--out", a / "w.mask") == 0
    assert run("cortex", "--whole", a / "w.mask", "--r1", 600, "--r2", 800, "--out", a / "c.mask") == 0
    assert run("sample", "--cortex", a / "c.mask", "--n", 60, "--rmin-scale", 0.8, "--seed", 5,
               "--out", a / "t.csv") == 0

    ph = pl.stage_phantom((40, 40, 40), 100.0, 3, b / "w.mask")
    pl.stage_cortex(b / "w.mask", ph.root_position, 600.0, 800.0, b / "c.mask")
    pl.stage_sample(b / "c.mask", SamplingConfig(n_terminals=60, r_min_scale=0.8, seed=5), b / "t.csv")

    g, root_id = synthetic_centerline(load_mask(b / "w.mask"), ph.root_position, seed=1)
    for d in (a, b):
        save_centerline(g, d / "n.csv", d / "e.csv")
    assert run("preprocess", "--nodes", a / "n.csv", "--edges", a / "e.csv", "--root-id", root_id,
               "--max-depth", 1e9, "--out-prefix", a / "pre_") == 0
    pl.stage_preprocess(b / "n.csv", b / "e.csv", root_id, 1e9, b / "pre_")

    (tmp_path / "build.cfg").write_text("max_iterations = 1\ninlet_flow_Q0 = 0.014\nseed = 2\n")
    assert run("build", "--prebuilt-prefix", a / "pre_", "--terminals", a / "t.csv", "--config",
               tmp_path / "build.cfg", "--out-prefix", a / "tree_", "--trace", a / "trace.csv") == 0
    values = {"max_iterations": 1, "inlet_flow_Q0": 0.014}
    pl.stage_build(b / "pre_", b / "t.csv", cfg.gco_config(values, 2), cfg.hemo_config(values),
                   b / "tree_", b / "trace.csv")

    (tmp_path / "an.cfg").write_text("inlet_flow_Q0 = 0.014\n")
    assert run("analyze", "--tree-prefix", a / "tree_", "--config", tmp_path / "an.cfg",
               "--out-dir", a / "report") == 0
    pl.stage_analyze(b / "tree_", cfg.hemo_config(values), b / "report")

    assert run("rasterize", "--tree-prefix", a / "tree_", "--dims", "40,40,40", "--spacing", 100,
               "--out", a / "l.mask") == 0
    pl.stage_rasterize(b / "tree_", (40, 40, 40), 100.0, (0, 0, 0), b / "l.mask")
    assert run("synthesize", "--label", a / "l.mask", "--sigma", 0.1, "--sp", 0.01, "--seed", 9,
               "--out", a / "i.vol", "--mip", a / "m.pgm") == 0
    pl.stage_synthesize(b / "l.mask", 0.1, 0.01, 9, b / "i.vol", b / "m.pgm")

    ha = pl.artifact_hashes(a)
    assert ha == pl.artifact_hashes(b)
    assert {"w.mask", "c.mask", "t.csv", "tree_nodes.csv", "trace.csv", "report/per_order.csv",
            "l.mask", "i.vol", "m.pgm"} <= set(ha)


def test_build_rejects_foreign_keys(tmp_path, capsys):
    (tmp_path / "b.cfg").write_text("n_terminals = 5\n")
    code = cli.main(["build", "--prebuilt-prefix", str(tmp_path / "p_"), "--terminals", "x",
                     "--config", str(tmp_path / "b.cfg"), "--out-prefix", "o_", "--trace", "t"])
    assert code == 1 and "not accepted" in capsys.readouterr().err


# -- end to end -------------------------------------------------------------------------------

@pytest.mark.slow
def test_small_pipeline_produces_every_artifact(tmp_path):
    out = tmp_path / "run"
    p = write_cfg(tmp_path, f"out_dir = {out}\n" + SMALL)
    assert cli.main(["pipeline", "--config", str(p)]) == 0
    P = pl.PipelineConfig.from_file(p).paths()
    for key in ("whole", "root", "cortex", "terminals", "cl_nodes", "cl_edges", "trace", "vtk",
                "label", "image", "mip", "manifest"):
        assert P[key].is_file(), key
    for pre in ("prebuilt_", "tree_"):
        assert (out / f"{pre}nodes.csv").is_file() and (out / f"{pre}edges.csv").is_file()
    rows = [ln.split("\t") for ln in P["manifest"].read_text().splitlines()]
    assert rows[0] == ["stage", "inputs", "outputs", "wall_s"]
    assert [r[0] for r in rows[1:]] == list(pl.STAGES)
    assert all(len(r) == 4 and float(r[3]) >= 0 for r in rows[1:])
    # every recorded output hash matches the file on disk
    for r in rows[1:]:
        for item in r[2].split(","):
            name, h = item.split(":")
            match = [q for q in out.rglob(name)]
            assert match and pl.file_hash(match[0])[:16] == h
    n_terms = len((out / "terminals.csv").read_text().splitlines()) - 1
    assert n_terms == 200
