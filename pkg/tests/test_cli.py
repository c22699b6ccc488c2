import csv
import io
import os

import pytest

from libRDGSPy.cli import main
from libRDGSPy.gaussians import load_ply
from libRDGSPy.image import read_png

TINY_CONFIG = """\
views = 4
width = 16
height = 16
initial_gaussians = 20
pretrain_iters = 2
rd_iters = 2
codebook_size_geometry = 8
codebook_size_sh = 8
threads = 1
log_every = 1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("rdgs")
    config = root / "config.txt"
    config.write_text(TINY_CONFIG)
    common = ["--config", str(config)]
    assert main(["gen-scene", *common, "--clusters", "2", "--per-cluster", "4", "--out", str(root / "scene")]) == 0
    dataset = str(root / "scene" / "dataset")
    assert main(["fit", *common, "-q", "--dataset", dataset, "--out", str(root / "fit")]) == 0
    grdo = str(root / "out" / "model.grdo")
    assert main(["compress", *common, "--input", str(root / "fit" / "model.ply"), "--dataset", dataset,
                 "--out", grdo, "--checkpoint"]) == 0
    return {"root": root, "common": common, "dataset": dataset, "grdo": grdo}


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_gen_scene_layout(workspace):
    scene = workspace["root"] / "scene"
    assert load_ply(str(scene / "scene.ply")).count == 8
    assert (scene / "dataset" / "cameras.json").exists()
    assert read_png(str(scene / "dataset" / "view_000.png")).shape == (16, 16, 3)


def test_fit_outputs(workspace):
    fit = workspace["root"] / "fit"
    assert load_ply(str(fit / "model.ply")).count == 20
    assert "pretrain_iters = 2" in (fit / "config.txt").read_text()
    with open(fit / "train_log.csv", newline="") as log_file:
        rows = list(csv.DictReader(log_file))
    assert [row["iteration"] for row in rows] == ["1", "2"]


def test_compress_outputs(workspace):
    grdo = workspace["grdo"]
    with open(grdo, "rb") as grdo_file:
        assert grdo_file.read(4) == b"GRDO"
    with open(os.path.splitext(grdo)[0] + ".csv", newline="") as csv_file:
        row = next(csv.DictReader(csv_file))
    assert int(row["size_bytes"]) == os.path.getsize(grdo)
    assert int(row["gaussians_in"]) == 20
    assert len(row["digest"]) == 64
    assert os.path.exists(os.path.splitext(grdo)[0] + "_rd.npz")


def test_report_ties_out(workspace, capsys):
    assert main(["report", "--input", workspace["grdo"], "--savings", "--original-count", "20"]) == 0
    rows = _csv(capsys.readouterr().out)
    totals = {row["section"]: int(row["bytes"]) for row in rows if row["category"] == "Total"}
    assert totals["composition"] == os.path.getsize(workspace["grdo"])
    ladder = [row for row in rows if row["section"] == "savings"]
    assert ladder[0]["category"] == "3DGS"
    assert int(ladder[0]["bytes"]) == 20 * 59 * 4
    assert int(ladder[-1]["bytes"]) == os.path.getsize(workspace["grdo"])


def test_report_savings_needs_original(workspace):
    assert main(["report", "--input", workspace["grdo"], "--savings"]) == 2


def test_decompress_and_eval(workspace, capsys):
    ply = str(workspace["root"] / "decoded.ply")
    assert main(["decompress", "--input", workspace["grdo"], "--out", ply]) == 0
    capsys.readouterr()
    assert main(["eval", *workspace["common"], "--model", workspace["grdo"], "--dataset", workspace["dataset"],
                 "--split", "all"]) == 0
    from_grdo = _csv(capsys.readouterr().out)[0]
    assert main(["eval", *workspace["common"], "--model", ply, "--dataset", workspace["dataset"],
                 "--split", "all"]) == 0
    from_ply = _csv(capsys.readouterr().out)[0]
    assert from_grdo["views"] == "4"
    # The PLY written by decompress holds exactly the decoded model.
    assert from_grdo["psnr"] == from_ply["psnr"]


def test_render(workspace):
    image = str(workspace["root"] / "render.png")
    cameras = os.path.join(workspace["dataset"], "cameras.json")
    assert main(["render", *workspace["common"], "--model", workspace["grdo"], "--camera", cameras, "--view", "1",
                 "--out", image]) == 0
    assert read_png(image).shape == (16, 16, 3)
    assert main(["render", "--model", workspace["grdo"], "--camera", cameras, "--view", "9", "--out", image]) == 2


def test_sweep(workspace):
    out = str(workspace["root"] / "sweep.csv")
    svg = str(workspace["root"] / "sweep.svg")
    assert main(["sweep", *workspace["common"], "--input", str(workspace["root"] / "fit" / "model.ply"),
                 "--dataset", workspace["dataset"], "--grid", "0.05:0.5,0.0005:0.005", "--out", out,
                 "--svg", svg]) == 0
    with open(out, newline="") as csv_file:
        rows = list(csv.DictReader(csv_file))
    assert [row["lambda_gs_prune"] for row in rows] == ["0.05", "0.0005"]
    assert os.path.exists(svg)


def test_sweep_needs_two_points(tmp_path):
    assert main(["sweep", "--grid", "0.1:0.1", "--input", "model.ply", "--dataset", "dataset",
                 "--out", str(tmp_path / "sweep.csv")]) == 2
    assert main(["sweep", "--grid", "0.1-0.1,0.2:0.2", "--input", "model.ply", "--dataset", "dataset",
                 "--out", str(tmp_path / "sweep.csv")]) == 2


def test_missing_files(tmp_path):
    missing = str(tmp_path / "missing.grdo")
    assert main(["decompress", "--input", missing, "--out", str(tmp_path / "out.ply")]) == 2
    assert main(["eval", "--model", missing, "--dataset", str(tmp_path)]) == 2


def test_bad_bitstream(tmp_path):
    path = tmp_path / "bad.grdo"
    path.write_bytes(b"NOPE" + bytes(100))
    assert main(["report", "--input", str(path)]) == 1


def test_bad_arguments():
    assert main(["no-such-command"]) == 2
    assert main(["decompress"]) == 2
