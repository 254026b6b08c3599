import numpy as np
import pytest

from kgecache.data import (KnowledgeGraph, KnowledgeGraphError, generate_synthetic,
                           load_dataset, relation_stats, write_dataset)

from conftest import requires_wn18rr, dataset_dir


def _write_triples(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in rows:
            fh.write(f"{h}\t{r}\t{t}\n")


def _mini_files(tmp_path, train, valid=None, test=None):
    paths = []
    for name, rows in (("train", train), ("valid", valid or []), ("test", test or [])):
        p = tmp_path / f"{name}.txt"
        _write_triples(p, rows)
        paths.append(str(p))
    return paths


class TestLoadDataset:
    def test_duplicate_lines_kept_in_split_but_unique_in_filter(self, tmp_path):
        train = [("a", "r", "b"), ("a", "r", "b"), ("c", "r", "d")]
        kg = load_dataset(*_mini_files(tmp_path, train))
        assert len(kg.train) == 3
        assert kg.true_count == 2

    def test_empty_train_is_an_error(self, tmp_path):
        with pytest.raises(KnowledgeGraphError, match="no training triplets"):
            load_dataset(*_mini_files(tmp_path, []))

    def test_malformed_line_reports_location(self, tmp_path):
        files = _mini_files(tmp_path, [("a", "r", "b")])
        (tmp_path / "train.txt").write_text("a\tr\tb\nbroken line\n")
        with pytest.raises(KnowledgeGraphError, match="train.txt:2"):
            load_dataset(*files)

    def test_first_appearance_indexing(self, tmp_path):
        train = [("x", "r1", "y"), ("y", "r2", "z")]
        kg = load_dataset(*_mini_files(tmp_path, train))
        assert kg.entity_names == ["x", "y", "z"]
        assert kg.relation_names == ["r1", "r2"]
        assert kg.train.tolist() == [[0, 0, 1], [1, 1, 2]]

    def test_column_order_flag(self, tmp_path):
        files = _mini_files(tmp_path, [("a", "b", "r")])
        kg = load_dataset(*files, column_order="htr")
        # declared as head, tail, relation
        assert kg.entity_names == ["a", "b"]
        assert kg.relation_names == ["r"]

    def test_valid_only_entities_are_indexed_and_counted(self, tmp_path):
        files = _mini_files(tmp_path, [("a", "r", "b")], valid=[("a", "r", "ghost")])
        kg = load_dataset(*files)
        assert "ghost" in kg.entity_names
        assert kg.entities_not_in_train().tolist() == [kg.entity_names.index("ghost")]

    def test_round_trip_preserves_index_assignment(self, tmp_path):
        # a graph whose ids came from first-appearance loading round-trips
        # without any dictionary
        train = [("n3", "ra", "n1"), ("n1", "rb", "n2"), ("n2", "ra", "n3")]
        kg = load_dataset(*_mini_files(tmp_path, train, valid=[("n3", "rb", "n2")]))
        out = tmp_path / "rt"
        write_dataset(kg, str(out))
        kg2 = load_dataset(str(out / "train.txt"), str(out / "valid.txt"),
                           str(out / "test.txt"))
        assert kg.entity_names == kg2.entity_names
        for split in ("train", "valid", "test"):
            assert np.array_equal(kg.split(split), kg2.split(split))

    def test_round_trip_with_dictionaries(self, tmp_path, small_kg):
        # arbitrary id assignments round-trip via the emitted id maps
        out = tmp_path / "rt2"
        write_dataset(small_kg, str(out))
        kg2 = load_dataset(str(out / "train.txt"), str(out / "valid.txt"),
                           str(out / "test.txt"),
                           entity2id=str(out / "entity2id.txt"),
                           relation2id=str(out / "relation2id.txt"))
        for split in ("train", "valid", "test"):
            assert np.array_equal(small_kg.split(split), kg2.split(split))

    @requires_wn18rr
    def test_wn18rr_counts(self):
        d = dataset_dir("WN18RR")
        kg = load_dataset(f"{d}/train.txt", f"{d}/valid.txt", f"{d}/test.txt")
        assert kg.entity_count == 40943
        assert kg.relation_count == 11
        assert len(kg.train) == 86835
        assert len(kg.valid) == 3034
        assert len(kg.test) == 3134


class TestMembership:
    def test_true_set_matches_linear_scan(self, small_kg):
        rng = np.random.default_rng(0)
        all_rows = {tuple(row) for row in
                    np.concatenate([small_kg.train, small_kg.valid, small_kg.test]).tolist()}
        h = rng.integers(0, small_kg.entity_count, size=500)
        r = rng.integers(0, small_kg.relation_count, size=500)
        t = rng.integers(0, small_kg.entity_count, size=500)
        fast = small_kg.contains(h, r, t)
        slow = np.array([(int(a), int(b), int(c)) in all_rows for a, b, c in zip(h, r, t)])
        assert np.array_equal(fast, slow)

    def test_train_only_membership_excludes_valid_test(self, six_entity_kg):
        v = six_entity_kg.valid[0]
        assert six_entity_kg.contains([v[0]], [v[1]], [v[2]])[0]
        assert not six_entity_kg.contains_train([v[0]], [v[1]], [v[2]])[0]


class TestRelationStats:
    def test_tph3_hpt1(self):
        # one head with three tails: tph=3, hpt=1
        kg = KnowledgeGraph(entity_count=4, relation_count=1,
                            train=np.array([[0, 0, 1], [0, 0, 2], [0, 0, 3]]),
                            valid=np.empty((0, 3)), test=np.empty((0, 3)))
        stats = relation_stats(kg)
        assert stats.tph[0] == 3.0
        assert stats.hpt[0] == 1.0
        assert stats.head_replace_prob[0] == pytest.approx(0.75)

    def test_one_to_one(self):
        kg = KnowledgeGraph(entity_count=4, relation_count=1,
                            train=np.array([[0, 0, 1], [2, 0, 3]]),
                            valid=np.empty((0, 3)), test=np.empty((0, 3)))
        stats = relation_stats(kg)
        assert stats.head_replace_prob[0] == pytest.approx(0.5)

    def test_hand_enumerated_fixture(self):
        # {(a,r,b),(a,r,c),(d,r,b)}: tph = 3/2, hpt = 3/2
        kg = KnowledgeGraph(entity_count=4, relation_count=1,
                            train=np.array([[0, 0, 1], [0, 0, 2], [3, 0, 1]]),
                            valid=np.empty((0, 3)), test=np.empty((0, 3)))
        stats = relation_stats(kg)
        assert stats.tph[0] == pytest.approx(1.5)
        assert stats.hpt[0] == pytest.approx(1.5)
        assert stats.head_replace_prob[0] == pytest.approx(0.5)

    def test_relation_missing_from_train_flagged(self):
        kg = KnowledgeGraph(entity_count=4, relation_count=2,
                            train=np.array([[0, 0, 1]]),
                            valid=np.array([[0, 1, 2]]), test=np.empty((0, 3)))
        stats = relation_stats(kg)
        assert stats.missing_from_train[1]
        assert stats.head_replace_prob[1] == 0.5

    def test_probabilities_sum_to_one_exactly(self, small_kg):
        stats = relation_stats(small_kg)
        assert np.all(stats.head_replace_prob + stats.tail_replace_prob == 1.0)

    def test_tph_identity(self, small_kg):
        # tph * distinct heads == triplet count, exactly by construction
        stats = relation_stats(small_kg)
        for r in range(small_kg.relation_count):
            mask = small_kg.train[:, 1] == r
            heads = len(np.unique(small_kg.train[mask, 0]))
            assert stats.tph[r] * heads == pytest.approx(mask.sum())


class TestGenerateSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(4, 1, 8, seed=1)
        b = generate_synthetic(4, 1, 8, seed=1)
        for split in ("train", "valid", "test"):
            assert np.array_equal(a.split(split), b.split(split))

    def test_pigeonhole(self):
        with pytest.raises(KnowledgeGraphError):
            generate_synthetic(2, 1, 5, seed=0)

    def test_split_sizes(self):
        kg = generate_synthetic(20, 3, 100, seed=7)
        assert len(kg.train) == 80
        assert len(kg.valid) == 10
        assert len(kg.test) == 10

    def test_no_duplicates(self):
        kg = generate_synthetic(10, 2, 150, seed=3)
        assert kg.true_count == 150
