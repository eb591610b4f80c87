import subprocess
import sys

import pytest

from conftest import TINY_SCENE
from splatfuse.cli import main

TINY_CONFIG = """\
grid_dims = 16 16 4
voxel_size = 0.5
channels = 6
phase1_iters = 4
phase2_iters = 4
densify_every = 2
lr = 0.01
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scene.txt").write_text(TINY_SCENE)
    (d / "run.txt").write_text(TINY_CONFIG)
    assert main(["generate", "--scene", str(d / "scene.txt"), "--seed", "3", "--out", str(d / "scene")]) == 0
    assert main(["train", "--config", str(d / "run.txt"), "--scene", str(d / "scene"), "--out", str(d / "run")]) == 0
    return d


def test_generate_outputs(workdir):
    names = {p.name for p in (workdir / "scene").iterdir()}
    assert {"scene.txt", "pointcloud.txt", "gt_grid.txt", "cameras.txt", "view_0.ppm", "depth_1.txt"} <= names


def test_train_outputs(workdir, capsys):
    names = {p.name for p in (workdir / "run").iterdir()}
    assert {"losses.csv", "field.txt", "k_decisions.csv", "metrics.txt", "render_0.ppm", "pred_grid.txt"} <= names
    assert (workdir / "run" / "losses.csv").read_text().startswith("step,phase,l_rgb")


def test_render_matches_training_render(workdir):
    out = workdir / "again.ppm"
    assert main(["render", "--field", str(workdir / "run" / "field.txt"), "--camera", "1", "--out", str(out)]) == 0
    assert out.read_bytes() == (workdir / "run" / "render_1.ppm").read_bytes()
    assert main(["render", "--field", str(workdir / "run" / "field.txt"), "--camera", "9", "--out", str(out)]) == 2


def test_k_stats(workdir, capsys):
    assert main(["k-stats", "--in", str(workdir / "run" / "k_decisions.csv")]) == 0
    text = capsys.readouterr().out
    assert text.startswith("k ") and "Prob." in text and "non-zero queries" in text


def test_ablate(workdir, capsys):
    assert main(["ablate", "--config", str(workdir / "run.txt"), "--scene", str(workdir / "scene"),
                 "--variants", "fixed_k=1,dynamic_k", "--seeds", "0,1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[1].split()[0] == "fixed_k=1" and lines[2].split()[-1] == "2"


def test_gradcheck(capsys):
    assert main(["gradcheck", "--module", "softmax", "--seeds", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3 and out[-1] == "all checks passed"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "splatfuse.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert all(c in res.stdout for c in ("generate", "train", "ablate", "render", "gradcheck", "k-stats"))
