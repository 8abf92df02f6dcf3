"""Synthetic scene generator and the command-line pipeline."""

import pytest

from scenecodec.cli import main
from scenecodec.geometry import load_cloud, save_lpc
from scenecodec.graph import build_scene_graph
from scenecodec.synth import generate_scene

TINY_CFG = """
model.d_f=32
model.d_p=16
model.d_s=8
model.d_fc=16
model.heads=2
model.blocks=2
model.dropout=0.0
layer1.n_points=64
layer2.n_points=64
layer3.n_points=64
layer4.n_points=64
layer1.d_z=8
layer2.d_z=8
layer3.d_z=8
layer4.d_z=8
train.epochs=1
train.batch_size=4
graph.terrain_cell=16.0
"""


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.lpc", tmp_path / "b.lpc"
        save_lpc(generate_scene(7, 3000), a)
        save_lpc(generate_scene(7, 3000), b)
        assert a.read_bytes() == b.read_bytes()

    def test_exact_point_count(self):
        for n in (1000, 50_000):
            assert len(generate_scene(1, n)) == n
            assert abs(len(generate_scene(1, n)) - n) <= 0.01 * n

    def test_all_layers_present(self, class_table):
        cloud = generate_scene(seed=2, n_points=4000)
        graph = build_scene_graph(cloud, class_table)
        layers = {n.layer for n in graph.nodes}
        assert layers == {1, 2, 3, 4}

    def test_rejects_tiny_budget(self):
        with pytest.raises(ValueError):
            generate_scene(0, 100)


class TestCliPipeline:
    def test_full_pipeline(self, tmp_path, cfg_path, capsys):
        scene = tmp_path / "s.lpc"
        assert main(["synth", "--out", str(scene), "--points", "2500", "--seed", "7"]) == 0

        graph_txt = tmp_path / "g.txt"
        args = ["--config", str(cfg_path), "--seed", "7"]
        assert main(["graph", "--cloud", str(scene), "--out", str(graph_txt)] + args) == 0
        lines = graph_txt.read_text().splitlines()
        assert any(l.startswith("NODE ") for l in lines)
        assert any(l.startswith("EDGE ") for l in lines)

        run_dir = tmp_path / "run"
        assert main(["train", "--scenes", str(scene), "--out-dir", str(run_dir)] + args) == 0
        ckpt = run_dir / "checkpoint.sgwt"
        assert ckpt.exists() and (run_dir / "train_log.csv").exists()
        log = (run_dir / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,step,fine_cd,coarse_cd,density,mask_fine,mask_coarse,total"
        assert len(log) > 1

        stream = tmp_path / "s.sgpc"
        assert main(
            ["encode", "--checkpoint", str(ckpt), "--cloud", str(scene), "--out", str(stream)]
            + args
        ) == 0
        recon = tmp_path / "r.lpc"
        assert main(
            ["decode", "--checkpoint", str(ckpt), "--stream", str(stream), "--out", str(recon)]
            + args
        ) == 0
        assert len(load_cloud(recon)) > 0

        assert main(
            [
                "eval",
                "--original",
                str(scene),
                "--reconstructed",
                str(recon),
                "--stream",
                str(stream),
                "--json",
            ]
        ) == 0
        out = capsys.readouterr().out
        assert '"bpp"' in out.splitlines()[-1]

    def test_eval_text_includes_csv_row(self, tmp_path, capsys):
        scene = tmp_path / "s.lpc"
        save_lpc(generate_scene(3, 1500), scene)
        assert main(
            [
                "eval",
                "--original",
                str(scene),
                "--reconstructed",
                str(scene),
                "--stream",
                str(scene),
            ]
        ) == 0
        out = capsys.readouterr().out
        assert "chamfer distance" in out
        assert "d_cd,d_perp,iou,bpp,compression_rate" in out

    def test_exit_code_bad_input(self, tmp_path, capsys):
        missing = tmp_path / "missing.lpc"
        assert main(["graph", "--cloud", str(missing)]) == 2

    def test_exit_code_format_error(self, tmp_path, cfg_path, capsys):
        scene = tmp_path / "s.lpc"
        save_lpc(generate_scene(5, 1200), scene)
        run_dir = tmp_path / "run"
        args = ["--config", str(cfg_path), "--seed", "5"]
        assert main(["train", "--scenes", str(scene), "--out-dir", str(run_dir)] + args) == 0
        bad_stream = tmp_path / "bad.sgpc"
        bad_stream.write_bytes(b"SGPC" + b"\x00" * 40)
        out = tmp_path / "out.lpc"
        code = main(
            [
                "decode",
                "--checkpoint",
                str(run_dir / "checkpoint.sgwt"),
                "--stream",
                str(bad_stream),
                "--out",
                str(out),
            ]
            + args
        )
        assert code == 3

    def test_exit_code_config_mismatch(self, tmp_path, cfg_path, capsys):
        scene = tmp_path / "s.lpc"
        save_lpc(generate_scene(6, 1200), scene)
        run_dir = tmp_path / "run"
        args = ["--config", str(cfg_path), "--seed", "6"]
        assert main(["train", "--scenes", str(scene), "--out-dir", str(run_dir)] + args) == 0
        stream = tmp_path / "s.sgpc"
        assert main(
            [
                "encode",
                "--checkpoint",
                str(run_dir / "checkpoint.sgwt"),
                "--cloud",
                str(scene),
                "--out",
                str(stream),
            ]
            + args
        ) == 0
        # decode with default (mismatched) model dims
        code = main(
            [
                "decode",
                "--checkpoint",
                str(run_dir / "checkpoint.sgwt"),
                "--stream",
                str(stream),
                "--out",
                str(tmp_path / "o.lpc"),
            ]
        )
        assert code == 4

    def test_bench_rows_and_monotonicity(self, tmp_path, cfg_path, capsys):
        scene = tmp_path / "s.lpc"
        save_lpc(generate_scene(8, 2000), scene)
        out_csv = tmp_path / "bench.csv"
        code = main(
            [
                "bench",
                "--scenes",
                str(scene),
                "--out",
                str(out_csv),
                "--depths",
                "4",
                "5",
                "6",
                "--config",
                str(cfg_path),
                "--seed",
                "8",
            ]
        )
        assert code == 0
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "codec,setting,bpp,d_cd,d_perp,iou"
        learned = [r for r in rows[1:] if r.startswith("learned,")]
        octree = [r for r in rows[1:] if r.startswith("octree,")]
        assert len(learned) == 5 and len(octree) == 3
        learned_bpp = [float(r.split(",")[2]) for r in learned]
        octree_bpp = [float(r.split(",")[2]) for r in octree]
        assert all(b > a for a, b in zip(learned_bpp, learned_bpp[1:]))
        assert all(b > a for a, b in zip(octree_bpp, octree_bpp[1:]))


class TestConfigFile:
    def test_parse_and_apply(self, tmp_path):
        from scenecodec.config import load_config

        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment\nseed=9\ntrain.lr=1e-3\nlayer3.d_z=64\ngraph.cell2=2.5\nloss.lambda2=4.0\n"
        )
        cfg = load_config(path)
        assert cfg.seed == 9
        assert cfg.lr == pytest.approx(1e-3)
        assert cfg.latent_dims[3] == 64
        assert cfg.graph.cell_by_layer[2] == 2.5
        assert cfg.lambdas[1] == 4.0

    def test_unknown_key_rejected(self, tmp_path):
        from scenecodec.config import load_config

        path = tmp_path / "run.cfg"
        path.write_text("nonsense.key=1\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_config(path)

    def test_validate_release_set(self):
        from scenecodec.config import RunConfig

        cfg = RunConfig(latent_dims={1: 7, 2: 8, 3: 8, 4: 8})
        with pytest.raises(ValueError, match="release"):
            cfg.validate(release=True)
        cfg.validate(release=False)

    def test_n_points_multiple_of_four(self):
        from scenecodec.config import RunConfig

        cfg = RunConfig(n_points={1: 30, 2: 64, 3: 64, 4: 64})
        with pytest.raises(ValueError, match="multiple"):
            cfg.validate(release=False)
