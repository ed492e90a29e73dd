import numpy as np
import pytest

from modelsteal.data import (
    LabeledSet,
    ProxyPool,
    SplitSpec,
    build_labeled_set,
    load_split_manifest,
    save_split_manifest,
    split_train_val,
    unlabeled_remainder,
)
from modelsteal.errors import (
    BudgetExhausted,
    ConfigError,
    ConsistencyError,
    DataError,
    SelectionError,
)
from modelsteal.models import build_model
from modelsteal.oracle import LogicalClock, QueryBudget, VictimOracle


def make_pool(n, seed=0, size=8):
    images = np.random.default_rng(seed).normal(size=(n, 1, size, size)).astype(np.float32)
    return ProxyPool(tuple(f"p{i:04d}" for i in range(n)), images, provenance="test-pool")


def make_oracle(limit=5000):
    victim = build_model("tinymlp", 3, 1, 8, seed=0)
    return VictimOracle(victim, QueryBudget(limit), clock=LogicalClock())


def make_labeled(pool, indices, labels=None):
    labels = labels if labels is not None else np.zeros(len(indices), dtype=np.int64)
    return LabeledSet(tuple(pool.ids[i] for i in indices), pool.images[list(indices)], labels)


class TestProxyPool:
    def test_duplicate_ids_rejected(self):
        images = np.zeros((2, 1, 4, 4), dtype=np.float32)
        with pytest.raises(DataError):
            ProxyPool(("a", "a"), images)


class TestBuildLabeledSet:
    def test_basic_counts(self):
        pool, oracle = make_pool(100), make_oracle()
        labeled = build_labeled_set(pool, list(range(10)), oracle)
        assert len(labeled) == 10
        assert oracle.budget.used == 10

    def test_duplicate_indices(self):
        pool, oracle = make_pool(10), make_oracle()
        with pytest.raises(SelectionError):
            build_labeled_set(pool, [3, 3], oracle)

    def test_budget_shortfall_leaves_state_unchanged(self):
        pool, oracle = make_pool(30), make_oracle(limit=20)
        with pytest.raises(BudgetExhausted):
            build_labeled_set(pool, list(range(21)), oracle)
        assert oracle.budget.used == 0
        assert len(oracle.log) == 0

    def test_label_provenance_in_log(self):
        pool, oracle = make_pool(20), make_oracle()
        labeled = build_labeled_set(pool, [4, 7, 11], oracle)
        logged = {r.sample_id: r.hard_label for r in oracle.log}
        for sid, label in zip(labeled.ids, labeled.labels):
            assert logged[sid] == label


class TestSplit:
    def test_ten_percent(self):
        pool = make_pool(60)
        labeled = make_labeled(pool, range(50))
        train, val = split_train_val(labeled, SplitSpec(0.1, seed=3))
        assert len(val) == 5 and len(train) == 45
        assert set(train.ids) | set(val.ids) == set(labeled.ids)
        assert set(train.ids) & set(val.ids) == set()

    def test_deterministic(self):
        pool = make_pool(40)
        labeled = make_labeled(pool, range(30))
        a = split_train_val(labeled, SplitSpec(0.2, seed=7))
        b = split_train_val(labeled, SplitSpec(0.2, seed=7))
        assert a[0].ids == b[0].ids and a[1].ids == b[1].ids

    def test_min_val_one(self):
        pool = make_pool(10)
        labeled = make_labeled(pool, range(10))
        train, val = split_train_val(labeled, SplitSpec(0.1, seed=0))
        assert len(val) == 1 and len(train) == 9

    def test_too_small(self):
        pool = make_pool(5)
        labeled = make_labeled(pool, [0])
        with pytest.raises(DataError):
            split_train_val(labeled, SplitSpec(0.1, seed=0))

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.0, seed=0)
        with pytest.raises(ConfigError):
            SplitSpec(1.0, seed=0)


class TestRemainder:
    def test_complement(self):
        pool = make_pool(40)
        labeled = make_labeled(pool, range(15))
        rest = unlabeled_remainder(pool, labeled)
        assert len(rest) == 25
        assert set(rest.ids) | set(labeled.ids) == set(pool.ids)

    def test_full_and_empty(self):
        pool = make_pool(8)
        everything = make_labeled(pool, range(8))
        assert len(unlabeled_remainder(pool, everything)) == 0
        nothing = LabeledSet((), pool.images[:0], np.zeros(0, dtype=np.int64))
        assert len(unlabeled_remainder(pool, nothing)) == 8

    def test_foreign_id(self):
        pool = make_pool(5)
        foreign = LabeledSet(("zzz",), pool.images[:1], np.zeros(1, dtype=np.int64))
        with pytest.raises(ConsistencyError):
            unlabeled_remainder(pool, foreign)

    def test_partition_property(self):
        pool, oracle = make_pool(50), make_oracle()
        labeled = build_labeled_set(pool, list(range(0, 50, 3)), oracle)
        train, val = split_train_val(labeled, SplitSpec(0.25, seed=1))
        rest = unlabeled_remainder(pool, labeled)
        assert len(train) + len(val) + len(rest) == len(pool)


class TestManifest:
    def test_round_trip(self, tmp_path):
        pool = make_pool(30)
        labeled = make_labeled(pool, range(20))
        spec = SplitSpec(0.1, seed=9)
        train, val = split_train_val(labeled, spec)
        path = tmp_path / "split.json"
        save_split_manifest(path, pool, spec, train, val)
        doc = load_split_manifest(path)
        assert doc["train_ids"] == list(train.ids)
        assert doc["val_ids"] == list(val.ids)
        assert doc["seed"] == 9 and doc["val_fraction"] == 0.1
        assert doc["provenance"] == "test-pool"
