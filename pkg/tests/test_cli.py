import json
import os

import numpy as np
import pytest

from kgecache.analysis import grad_norm_ccdf
from kgecache.cli import run
from kgecache.data import generate_synthetic, write_dataset
from kgecache.scoring import LossSpec
from kgecache.variance import VarianceTracker

from conftest import make_store


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("kgdata")
    kg = generate_synthetic(40, 4, 400, seed=9)
    path = str(root / "synth")
    write_dataset(kg, path)
    return path


@pytest.fixture(scope="module")
def trained_run(data_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    code = run(["train", "--data", data_dir, "--model", "transe",
                "--sampler", "nscaching", "--dim", "8", "--epochs", "6",
                "--batch-size", "64", "--lr", "0.01", "--seed", "1",
                "--out", out, "--eval-every", "3",
                "--save-epochs", "0,5", "--snapshot-epochs", "5"])
    assert code == 0
    return out


class TestTrainCommand:
    def test_outputs_present(self, trained_run):
        for name in ("checkpoint.bin", "best_checkpoint.bin", "train_log.jsonl",
                     "resolved.cfg", "entity2id.txt", "relation2id.txt",
                     "checkpoint_epoch0.bin", "checkpoint_epoch5.bin",
                     "cache_epoch5.tsv"):
            assert os.path.exists(os.path.join(trained_run, name)), name

    def test_log_is_json_lines(self, trained_run):
        with open(os.path.join(trained_run, "train_log.jsonl")) as fh:
            records = [json.loads(line) for line in fh]
        assert len(records) == 6
        assert all("loss" in r and "seconds" in r for r in records)

    def test_cache_snapshot_format(self, trained_run):
        with open(os.path.join(trained_run, "cache_epoch5.tsv")) as fh:
            line = fh.readline().rstrip("\n")
        key, entity, score = line.split("\t")
        assert key.split("|")[0] in ("head", "tail")
        float(score)

    def test_replay_is_bitwise_identical(self, trained_run, tmp_path):
        out2 = str(tmp_path / "replay")
        code = run(["train", "--config", os.path.join(trained_run, "resolved.cfg"),
                    "--out", out2])
        assert code == 0
        a = open(os.path.join(trained_run, "checkpoint.bin"), "rb").read()
        b = open(os.path.join(out2, "checkpoint.bin"), "rb").read()
        assert a == b

    def test_flags_override_config_file(self, trained_run, data_dir, tmp_path):
        out2 = str(tmp_path / "override")
        code = run(["train", "--config", os.path.join(trained_run, "resolved.cfg"),
                    "--epochs", "2", "--out", out2])
        assert code == 0
        with open(os.path.join(out2, "train_log.jsonl")) as fh:
            assert len(fh.readlines()) == 2


class TestEvalCommand:
    def test_metrics_json(self, trained_run, data_dir, tmp_path):
        out = str(tmp_path / "eval")
        code = run(["eval", "--checkpoint", os.path.join(trained_run, "checkpoint.bin"),
                    "--data", data_dir, "--split", "test", "--out", out,
                    "--ranks-tsv"])
        assert code == 0
        metrics = json.load(open(os.path.join(out, "metrics.json")))
        for key in ("mrr", "hit1", "hit3", "hit10", "n_test", "head_mrr", "tail_mrr"):
            assert key in metrics
        assert os.path.exists(os.path.join(out, "ranks.tsv"))

    def test_reevaluation_is_idempotent(self, trained_run, data_dir, tmp_path):
        args = ["eval", "--checkpoint", os.path.join(trained_run, "checkpoint.bin"),
                "--data", data_dir, "--split", "valid"]
        o1, o2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert run(args + ["--out", o1]) == 0
        assert run(args + ["--out", o2]) == 0
        m1 = json.load(open(os.path.join(o1, "metrics.json")))
        m2 = json.load(open(os.path.join(o2, "metrics.json")))
        assert m1 == m2


class TestOtherCommands:
    def test_classify_command(self, trained_run, data_dir, tmp_path):
        out = str(tmp_path / "cls")
        code = run(["classify", "--checkpoint",
                    os.path.join(trained_run, "checkpoint.bin"),
                    "--data", data_dir, "--out", out])
        assert code == 0
        payload = json.load(open(os.path.join(out, "classification.json")))
        assert 0.0 <= payload["test_accuracy"] <= 1.0

    def test_search_command_budget_accounting(self, data_dir, tmp_path):
        out = str(tmp_path / "search")
        code = run(["search", "--data", data_dir, "--budget", "4",
                    "--algo", "smbo", "--init-design", "3",
                    "--fidelity-epochs", "2", "--dim", "4", "--epochs", "2",
                    "--batch-size", "64", "--out", out])
        assert code == 0
        lines = open(os.path.join(out, "history.jsonl")).read().strip().split("\n")
        assert len(lines) == 4
        best = json.load(open(os.path.join(out, "best.json")))
        assert best["trials"] == 4

    def test_walk_and_embed_graph(self, tmp_path):
        edges = tmp_path / "edges.txt"
        edges.write_text("".join(f"n{i}\tn{(i + 1) % 12}\n" for i in range(12)))
        labels = tmp_path / "labels.txt"
        labels.write_text("".join(f"n{i}\t{'a' if i < 6 else 'b'}\n"
                                  for i in range(12)))
        wout = str(tmp_path / "walks")
        assert run(["walk", "--edges", str(edges), "--out", wout,
                    "--walks-per-node", "3", "--walk-length", "6"]) == 0
        walk_lines = open(os.path.join(wout, "walks.txt")).read().strip().split("\n")
        assert len(walk_lines) == 36

        eout = str(tmp_path / "embed")
        assert run(["embed-graph", "--edges", str(edges), "--labels", str(labels),
                    "--out", eout, "--walks-per-node", "3", "--walk-length", "6",
                    "--window", "2", "--dim", "8", "--epochs", "2",
                    "--negatives", "2", "--n1", "4", "--n2", "4",
                    "--classify-fractions", "0.5"]) == 0
        emb_lines = open(os.path.join(eout, "embeddings.txt")).read().strip().split("\n")
        assert len(emb_lines) == 12
        assert len(emb_lines[0].split()) == 9
        report = json.load(open(os.path.join(eout, "embed_report.json")))
        assert "0.5" in report["classification"]

    def test_analyze_command(self, trained_run, data_dir, tmp_path):
        out = str(tmp_path / "ccdf")
        code = run(["analyze", "--run-dir", trained_run, "--data", data_dir,
                    "--epochs", "0,5", "--triplet-ids", "0", "--out", out])
        assert code == 0
        rows = open(os.path.join(out, "ccdf_epoch0_triplet0.tsv")).read().strip().split("\n")
        header, first = rows[0], rows[1]
        assert header == "grad_norm\tccdf"
        x0, c0 = first.split("\t")
        assert float(x0) == 0.0 and float(c0) == 1.0


class TestExitCodes:
    def test_usage_error_is_one(self, data_dir):
        assert run(["train", "--data", data_dir, "--loss", "logistic",
                    "--margin", "2"]) == 1

    def test_unknown_flag_is_one(self):
        assert run(["train", "--bogus"]) == 1

    def test_runtime_failure_is_two(self, tmp_path):
        assert run(["eval", "--checkpoint", str(tmp_path / "missing.bin"),
                    "--data", str(tmp_path)]) == 2

    def test_missing_dataset_is_usage_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("KGECACHE_DATA", raising=False)
        assert run(["train", "--epochs", "1"]) == 1


class TestVarianceTracking:
    def test_constant_stream_zero_variance(self):
        t = VarianceTracker(3)
        for _ in range(5):
            t.update(np.array([2.0, 2.0, 2.0]))
        np.testing.assert_allclose(t.variance(), 0.0)

    def test_welford_matches_two_pass(self):
        stream = np.array([[1.0], [2.0], [3.0], [4.0]])
        t = VarianceTracker(1)
        for row in stream:
            t.update(row)
        assert t.mean[0] == pytest.approx(2.5, abs=1e-12)
        two_pass = np.var(stream[:, 0], ddof=1)
        assert t.variance()[0] == pytest.approx(two_pass, abs=1e-9)
        assert t.variance()[0] == pytest.approx(5 / 3, abs=1e-9)

    def test_undefined_below_two_observations(self):
        t = VarianceTracker(2)
        t.update(np.array([1.0, 2.0]))
        assert np.isnan(t.variance()).all()

    def test_random_stream_matches_two_pass(self):
        rng = np.random.default_rng(8)
        stream = rng.normal(size=(50, 4))
        t = VarianceTracker(4)
        for row in stream:
            t.update(row)
        np.testing.assert_allclose(t.variance(), np.var(stream, axis=0, ddof=1),
                                   atol=1e-9)

    def test_nu_zero_training_is_bitwise_identical_to_untracked(self, small_kg):
        from kgecache.trainer import TrainConfig, train
        from kgecache.sampler import EEHyperParams

        base = dict(model="transe", dim=4, epochs=4, batch_size=64, lr=0.01,
                    seed=3, sampler="nscaching", eval_every=0)
        a = train(small_kg, TrainConfig(**base))
        b = train(small_kg, TrainConfig(**base),
                  track_triplets=small_kg.valid[:3])
        for k in a.store.matrices:
            assert np.array_equal(a.store.matrices[k], b.store.matrices[k])
        assert b.tracker is not None and b.tracker.count == 4

    def test_nu_positive_changes_cache_quality_only(self, small_kg):
        from kgecache.trainer import TrainConfig, train
        from kgecache.sampler import EEHyperParams

        cfg = TrainConfig(model="transe", dim=4, epochs=4, batch_size=64,
                          lr=0.01, seed=3, sampler="nscaching", eval_every=0,
                          ee=EEHyperParams(alpha2=1.0, alpha3=1.0, n1=8, n2=8,
                                           variance_nu=0.5))
        result = train(small_kg, cfg)
        assert np.isfinite(result.log[-1]["loss"])

    def test_cli_variance_output(self, data_dir, tmp_path):
        out = str(tmp_path / "tracked")
        code = run(["train", "--data", data_dir, "--model", "transe",
                    "--sampler", "nscaching", "--dim", "4", "--epochs", "4",
                    "--batch-size", "64", "--out", out,
                    "--track-split", "valid", "--track-ids", "0,1,2"])
        assert code == 0
        rows = open(os.path.join(out, "variance.tsv")).read().strip().split("\n")
        assert rows[0] == "id\tmean\tvariance"
        assert len(rows) == 4


class TestCCDF:
    def test_ccdf_starts_at_one(self, six_entity_kg):
        store = make_store("transe", six_entity_kg, dim=3, seed=1)
        x, ccdf = grad_norm_ccdf(store, LossSpec("margin"), six_entity_kg,
                                 six_entity_kg.train[0])
        assert x[0] == 0.0 and ccdf[0] == 1.0
        assert np.all(np.diff(ccdf) <= 0)

    def test_constant_scorer_is_a_step_function(self, six_entity_kg):
        store = make_store("distmult", six_entity_kg, dim=3, seed=1)
        for m in store.matrices.values():
            m[:] = 0.0
        l2 = 0.01
        x, ccdf = grad_norm_ccdf(store, LossSpec("margin", l2=l2), six_entity_kg,
                                 six_entity_kg.train[0])
        # all-zero embeddings: every pair's gradient is the l2 term only,
        # which is zero here, so the whole mass sits at norm 0
        assert len(x) == 1 and ccdf[0] == 1.0
