import json
import math
import os

import numpy as np
import pytest

from gradedsim import (
    GeoCriterion,
    RetrievalIndex,
    TrainConfig,
    embed_matrix,
    fov3d_matrix,
    geo_positives,
    initialize_model,
    pairwise_similarity_matrix,
    recall_at_k,
    train,
)
from gradedsim.cli import main
from gradedsim.formats import (
    load_checkpoint,
    load_descriptor_store,
    read_pair_csv,
    read_pose2d_csv,
    read_pose6_csv,
    read_results_csv,
    write_pose2d_csv,
)
from gradedsim.fov2d import STREET_FOV_PARAMS, CameraPose2D


def run_cli(*args):
    return main([str(a) for a in args])


def file_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture()
def city(tmp_path):
    out = tmp_path / "city"
    assert run_cli("synth", "--scenario", "city2d", "--n", 60, "--queries", 12,
                   "--seed", 3, "--out-dir", out) == 0
    return out


@pytest.fixture()
def cloud(tmp_path):
    out = tmp_path / "cloud"
    assert run_cli("synth", "--scenario", "cloud3d", "--n", 300, "--poses", 8,
                   "--seed", 3, "--out-dir", out) == 0
    return out


class TestSynthCommand:
    def test_city_outputs_exist(self, city):
        for name in ("map_poses.csv", "query_poses.csv", "features.gdsc",
                     "features.gdsc.ids", "map_features.gdsc", "query_features.gdsc"):
            assert (city / name).exists()
        assert len(read_pose2d_csv(str(city / "map_poses.csv"))) == 60

    def test_cloud_outputs_exist(self, cloud):
        for name in ("poses6.csv", "cloud.xyz", "intrinsics.txt", "features.gdsc"):
            assert (cloud / name).exists()
        assert len(read_pose6_csv(str(cloud / "poses6.csv"))) == 8

    def test_seeded_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("synth", "--scenario", "city2d", "--n", 30, "--queries", 6,
                           "--seed", 9, "--out-dir", out) == 0
        for name in os.listdir(a):
            assert file_bytes(a / name) == file_bytes(b / name), name


class TestAnnotate2d:
    def test_three_pose_toy_diagonal(self, tmp_path):
        poses = [CameraPose2D(f"p{i}", 3.0 * i, 0.0, 10.0 * i) for i in range(3)]
        path = tmp_path / "poses.csv"
        write_pose2d_csv(str(path), poses)
        out = tmp_path / "pairs.csv"
        assert run_cli("annotate-2d", path, "--out", out) == 0
        pairs = read_pair_csv(str(out))
        assert pairs.logical_pair_count == 9
        for p in poses:
            assert pairs.psi(p.id, p.id) == 1.0

    def test_matches_module_matrix(self, city, tmp_path):
        out = tmp_path / "pairs.csv"
        assert run_cli("annotate-2d", "--queries", city / "query_poses.csv",
                       "--maps", city / "map_poses.csv", "--out", out) == 0
        got = read_pair_csv(str(out))
        queries = read_pose2d_csv(str(city / "query_poses.csv"))
        maps = read_pose2d_csv(str(city / "map_poses.csv"))
        want = pairwise_similarity_matrix(queries, maps, STREET_FOV_PARAMS)
        assert got.explicit_pair_count == want.explicit_pair_count
        for pair in want.pairs:
            assert got.psi(pair.query_id, pair.map_id) == pytest.approx(pair.psi, abs=5e-7)

    def test_rerun_byte_identical(self, city, tmp_path):
        out1, out2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
        for out in (out1, out2):
            assert run_cli("annotate-2d", city / "map_poses.csv", "--out", out) == 0
        assert file_bytes(out1) == file_bytes(out2)

    def test_both_pose_sources_rejected(self, city, tmp_path):
        code = run_cli("annotate-2d", city / "map_poses.csv", "--queries",
                       city / "query_poses.csv", "--maps", city / "map_poses.csv",
                       "--out", tmp_path / "x.csv")
        assert code == 1

    def test_parse_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,t0,t1,heading_deg\nx,oops,0,0\n")
        assert run_cli("annotate-2d", bad, "--out", tmp_path / "out.csv") == 1

    def test_invalid_params_exit_code(self, city, tmp_path):
        assert run_cli("annotate-2d", city / "map_poses.csv", "--theta", 0,
                       "--out", tmp_path / "x.csv") == 1


class TestAnnotate3d:
    def test_single_pose_self_similarity(self, cloud, tmp_path):
        out = tmp_path / "pairs3d.csv"
        assert run_cli("annotate-3d", cloud / "cloud.xyz", cloud / "intrinsics.txt",
                       "--poses", cloud / "poses6.csv", "--out", out) == 0
        pairs = read_pair_csv(str(out))
        poses = read_pose6_csv(str(cloud / "poses6.csv"))
        for p in poses:
            assert pairs.psi(p.id, p.id) == 1.0

    def test_matches_module_matrix(self, cloud, tmp_path):
        out = tmp_path / "pairs3d.csv"
        assert run_cli("annotate-3d", cloud / "cloud.xyz", cloud / "intrinsics.txt",
                       "--poses", cloud / "poses6.csv", "--out", out) == 0
        got = read_pair_csv(str(out))
        from gradedsim.formats import load_point_cloud, read_intrinsics

        poses = read_pose6_csv(str(cloud / "poses6.csv"))
        want = fov3d_matrix(load_point_cloud(str(cloud / "cloud.xyz")), poses, poses,
                            read_intrinsics(str(cloud / "intrinsics.txt")))
        for pair in want.pairs:
            assert got.psi(pair.query_id, pair.map_id) == pytest.approx(pair.psi, abs=5e-7)

    def test_rerun_byte_identical(self, cloud, tmp_path):
        outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for out in outs:
            assert run_cli("annotate-3d", cloud / "cloud.xyz", cloud / "intrinsics.txt",
                           "--poses", cloud / "poses6.csv", "--out", out) == 0
        assert file_bytes(outs[0]) == file_bytes(outs[1])


@pytest.fixture()
def trained(city, tmp_path):
    pairs = tmp_path / "pairs.csv"
    assert run_cli("annotate-2d", "--queries", city / "query_poses.csv",
                   "--maps", city / "map_poses.csv", "--out", pairs) == 0
    model = tmp_path / "model.gsim"
    assert run_cli("train", pairs, city / "features.gdsc", "--epochs", 1,
                   "--seed", 5, "--out", model) == 0
    return {"pairs": pairs, "model": model, "city": city}


class TestTrainCommand:
    def test_outputs_exist(self, trained):
        assert os.path.exists(trained["model"])
        assert os.path.exists(str(trained["model"]) + ".json")
        assert os.path.exists(str(trained["model"]) + ".trace.csv")

    def test_zero_epochs_equals_initialization(self, trained, tmp_path):
        out = tmp_path / "m0.gsim"
        assert run_cli("train", trained["pairs"], trained["city"] / "features.gdsc",
                       "--epochs", 0, "--seed", 5, "--out", out) == 0
        model, meta = load_checkpoint(str(out))
        reference = initialize_model(meta["dims"], seed=5)
        for w0, w1 in zip(model.weights, reference.weights):
            assert np.allclose(w0, w1, atol=1e-7)  # f32 storage
        trace = open(str(out) + ".trace.csv").read().splitlines()
        assert trace == ["batch,pairs_seen,lr,loss"]

    def test_defaults_echo_published_schedule(self, trained):
        meta = json.load(open(str(trained["model"]) + ".json"))
        cfg = meta["config"]
        assert cfg["margin_tau"] == 0.5
        assert cfg["batch_size"] == 64
        assert cfg["initial_lr"] == 0.1
        assert cfg["decay_every_pairs"] == 250000

    def test_cl_default_lr(self, trained, tmp_path):
        out = tmp_path / "mcl.gsim"
        assert run_cli("train", trained["pairs"], trained["city"] / "features.gdsc",
                       "--loss", "cl", "--epochs", 0, "--seed", 5, "--out", out) == 0
        meta = json.load(open(str(out) + ".json"))
        assert meta["config"]["initial_lr"] == 0.01

    def test_seeded_rerun_byte_identical(self, trained, tmp_path):
        outs = [tmp_path / "r1.gsim", tmp_path / "r2.gsim"]
        for out in outs:
            assert run_cli("train", trained["pairs"], trained["city"] / "features.gdsc",
                           "--epochs", 1, "--seed", 5, "--out", out) == 0
        assert file_bytes(outs[0]) == file_bytes(outs[1])
        assert file_bytes(str(outs[0]) + ".json") == file_bytes(str(outs[1]) + ".json")
        assert file_bytes(str(outs[0]) + ".trace.csv") == file_bytes(str(outs[1]) + ".trace.csv")

    def test_matches_in_process_training(self, trained):
        got, meta = load_checkpoint(str(trained["model"]))
        pairs = read_pair_csv(str(trained["pairs"]))
        store = load_descriptor_store(str(trained["city"] / "features.gdsc"))
        model = initialize_model(meta["dims"], seed=5)
        train(model, pairs, store, TrainConfig(epochs=1, seed=5))
        for w0, w1 in zip(model.weights, got.weights):
            assert np.allclose(w0, w1, atol=1e-6)

    def test_checkpoint_every(self, trained, tmp_path):
        out = tmp_path / "ck.gsim"
        assert run_cli("train", trained["pairs"], trained["city"] / "features.gdsc",
                       "--epochs", 1, "--seed", 5, "--checkpoint-every", 2,
                       "--out", out) == 0
        assert os.path.exists(str(out) + ".batch2")


class TestRetrieveCommand:
    def test_self_retrieval_zero_distance(self, trained, tmp_path):
        out = tmp_path / "self.csv"
        assert run_cli("retrieve", trained["model"], trained["city"] / "map_features.gdsc",
                       trained["city"] / "map_features.gdsc", "--k", 1, "--out", out) == 0
        results = read_results_csv(str(out))
        for qid, matches in results.items():
            assert matches[0][0] == qid
            assert matches[0][1] == 0.0

    def test_matches_in_process_composition(self, trained, tmp_path):
        out = tmp_path / "r.csv"
        assert run_cli("retrieve", trained["model"], trained["city"] / "map_features.gdsc",
                       trained["city"] / "query_features.gdsc", "--k", 5, "--out", out) == 0
        got = read_results_csv(str(out))
        model, _ = load_checkpoint(str(trained["model"]))
        map_store = load_descriptor_store(str(trained["city"] / "map_features.gdsc"))
        query_store = load_descriptor_store(str(trained["city"] / "query_features.gdsc"))
        index = RetrievalIndex(map_store.ids, embed_matrix(model, map_store.matrix))
        want = index.search_many(query_store.ids, embed_matrix(model, query_store.matrix), 5)
        assert {q: [m for m, _ in v] for q, v in got.items()} == {
            q: [m for m, _ in v] for q, v in want.items()
        }

    def test_whitening_keeps_cardinality(self, trained, tmp_path):
        out = tmp_path / "rw.csv"
        code = run_cli("retrieve", trained["model"], trained["city"] / "map_features.gdsc",
                       trained["city"] / "query_features.gdsc", "--k", 60,
                       "--whiten", 16, "--out", out,
                       "--save-whitening", tmp_path / "w.gpca")
        assert code == 0
        results = read_results_csv(str(out))
        for matches in results.values():
            assert len(matches) == 60
        assert (tmp_path / "w.gpca").exists()

    def test_rerun_byte_identical(self, trained, tmp_path):
        outs = [tmp_path / "r1.csv", tmp_path / "r2.csv"]
        for out in outs:
            assert run_cli("retrieve", trained["model"], trained["city"] / "map_features.gdsc",
                           trained["city"] / "query_features.gdsc", "--k", 5,
                           "--whiten", 8, "--out", out) == 0
        assert file_bytes(outs[0]) == file_bytes(outs[1])


@pytest.fixture()
def retrieved(trained, tmp_path):
    out = tmp_path / "results.csv"
    assert run_cli("retrieve", trained["model"], trained["city"] / "map_features.gdsc",
                   trained["city"] / "query_features.gdsc", "--k", 60, "--out", out) == 0
    poses_all = tmp_path / "poses_all.csv"
    maps = read_pose2d_csv(str(trained["city"] / "map_poses.csv"))
    queries = read_pose2d_csv(str(trained["city"] / "query_poses.csv"))
    write_pose2d_csv(str(poses_all), maps + queries)
    return {"results": out, "poses": poses_all, **trained}


class TestEvalCommand:
    def test_geo_defaults(self, retrieved, tmp_path):
        out = tmp_path / "metrics.json"
        assert run_cli("eval", retrieved["results"], "--criterion", "geo",
                       "--poses", retrieved["poses"], "--ks", "1,5",
                       "--out", out) == 0
        report = json.load(open(out))
        assert set(report) >= {"recall@1", "recall@5"}
        assert 0.0 <= report["recall@1"] <= report["recall@5"] <= 1.0
        assert "localized@0.25m/2deg" in report

    def test_matches_module_metrics(self, retrieved, tmp_path):
        out = tmp_path / "metrics.json"
        assert run_cli("eval", retrieved["results"], "--criterion", "geo",
                       "--poses", retrieved["poses"], "--ks", "1,5", "--out", out) == 0
        report = json.load(open(out))
        results = read_results_csv(str(retrieved["results"]))
        poses = {p.id: p for p in read_pose2d_csv(str(retrieved["poses"]))}
        map_ids = sorted({m for v in results.values() for m, _ in v})
        positives = geo_positives(list(results), map_ids, poses, GeoCriterion(25, 40))
        want = recall_at_k(results, positives, [1, 5])
        assert report["recall@1"] == want[1]
        assert report["recall@5"] == want[5]

    def test_psi_criterion_and_ap(self, retrieved, tmp_path):
        out = tmp_path / "metrics.json"
        assert run_cli("eval", retrieved["results"], "--criterion", "psi",
                       "--pairs", retrieved["pairs"], "--ks", "1,5", "--ap",
                       "--out", out) == 0
        report = json.load(open(out))
        assert 0.0 <= report["ap"] <= 1.0

    def test_sweep_outputs(self, retrieved, tmp_path):
        out = tmp_path / "metrics.json"
        curve = tmp_path / "curve.csv"
        assert run_cli("eval", retrieved["results"], "--criterion", "psi",
                       "--pairs", retrieved["pairs"], "--ks", "5",
                       "--sweep-axis", "psi", "--sweep-grid", "0,0.3,0.6,0.9",
                       "--sweep-out", curve, "--out", out) == 0
        lines = open(curve).read().splitlines()
        assert lines[0] == "threshold,recall"
        assert len(lines) == 5
        values = [float(l.split(",")[1]) for l in lines[1:]]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_missing_ground_truth_exit_code(self, retrieved, tmp_path):
        assert run_cli("eval", retrieved["results"], "--criterion", "geo",
                       "--out", tmp_path / "m.json") == 1

    def test_rerun_byte_identical(self, retrieved, tmp_path):
        outs = [tmp_path / "m1.json", tmp_path / "m2.json"]
        for out in outs:
            assert run_cli("eval", retrieved["results"], "--criterion", "geo",
                           "--poses", retrieved["poses"], "--ks", "1,5", "--out", out) == 0
        assert file_bytes(outs[0]) == file_bytes(outs[1])


class TestGradcheckCommand:
    def test_default_passes(self, tmp_path, capsys):
        assert run_cli("gradcheck", "--trials", 40, "--seed", 0) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_zero_trials_warns_and_passes(self, capsys):
        assert run_cli("gradcheck", "--trials", 0) == 0
        captured = capsys.readouterr()
        assert "vacuous" in captured.err or "vacuous" in captured.out

    def test_report_deterministic(self, tmp_path):
        outs = [tmp_path / "g1.json", tmp_path / "g2.json"]
        for out in outs:
            assert run_cli("gradcheck", "--trials", 10, "--seed", 4, "--out", out) == 0
        assert file_bytes(outs[0]) == file_bytes(outs[1])


class TestExitCodes:
    def test_missing_file_is_validation_error(self, tmp_path):
        assert run_cli("annotate-2d", tmp_path / "nope.csv", "--out", tmp_path / "o.csv") == 1

    def test_unknown_command_is_validation_error(self):
        assert run_cli("frobnicate") == 1

    def test_help_exits_zero(self):
        assert run_cli("--help") == 0
