import numpy as np
import pytest

from drgcf.data import (
    DataFormatError,
    Interaction,
    apply_min_count,
    load_exposure_pair,
    read_interactions_tsv,
    shift_kl,
    split_popularity,
    split_temporal,
    write_split,
)


def _pairs(rows):
    return {(r.user, r.item) for r in rows}


def _item_counts(rows):
    counts = {}
    for r in rows:
        counts[r.item] = counts.get(r.item, 0) + 1
    return counts


class TestPopularitySplit:
    def test_every_item_donates_exactly_quota(self):
        # dense interactions: every item donates exactly quota rows, so the
        # test item histogram comes out exactly uniform
        rows = [Interaction(f"u{u}", f"i{i}") for u in range(12) for i in range(8)]
        bundle = split_popularity(rows, test_quota_per_item=2, seed=0)
        counts = _item_counts(bundle.test)
        assert set(counts.values()) == {2}
        assert len(counts) == 8

    def test_exact_quota_for_popular_item(self):
        # "hot" has 40 interactions; mid items anchor every user in train
        rows = [Interaction(f"u{k}", "hot") for k in range(40)]
        rows += [
            Interaction(f"u{k}", f"m{(k + d) % 10}") for k in range(40) for d in range(3)
        ]
        bundle = split_popularity(rows, test_quota_per_item=2, seed=1)
        assert _item_counts(bundle.test).get("hot", 0) == 2
        assert _item_counts(bundle.train).get("hot", 0) == 38

    def test_zipf_train_remains_long_tailed(self):
        rng = np.random.default_rng(0)
        items = (rng.zipf(1.7, size=4000) % 50).astype(str)
        rows = [Interaction(f"u{k % 400}", f"i{it}") for k, it in enumerate(items)]
        bundle = split_popularity(rows, test_quota_per_item=3, seed=2)

        def kl_to_uniform(part):
            counts = np.array(list(_item_counts(part).values()), dtype=float)
            p = counts / counts.sum()
            return float(np.sum(p * np.log(p * len(p))))

        assert kl_to_uniform(bundle.train) > 4 * kl_to_uniform(bundle.test)

    def test_partitions_disjoint_and_users_covered(self):
        rng = np.random.default_rng(3)
        rows = [
            Interaction(f"u{int(rng.integers(0, 30))}", f"i{int(rng.integers(0, 40))}")
            for _ in range(400)
        ]
        bundle = split_popularity(rows, test_quota_per_item=2, seed=4)
        assert not (_pairs(bundle.train) & _pairs(bundle.test))
        train_users = {r.user for r in bundle.train}
        assert all(r.user in train_users for r in bundle.test)

    def test_deterministic_under_seed(self):
        rows = [Interaction(f"u{k % 10}", f"i{k % 7}") for k in range(60)]
        b1 = split_popularity(rows, 2, seed=9)
        b2 = split_popularity(rows, 2, seed=9)
        assert [(r.user, r.item) for r in b1.test] == [(r.user, r.item) for r in b2.test]

    def test_quota_validation(self):
        with pytest.raises(ValueError):
            split_popularity([Interaction("u", "i")], 0, seed=0)

    def test_empty_input_rejected(self):
        with pytest.raises(DataFormatError):
            split_popularity([], 1, seed=0)


class TestTemporalSplit:
    def test_ten_interactions_six_two_two(self):
        rows = [Interaction("u", f"i{k}", timestamp=k) for k in range(10)]
        bundle = split_temporal(rows)
        assert [r.item for r in bundle.train] == [f"i{k}" for k in range(6)]
        assert [r.item for r in bundle.validation] == ["i6", "i7"]
        assert [r.item for r in bundle.test] == ["i8", "i9"]

    def test_single_interaction_goes_to_train(self):
        bundle = split_temporal([Interaction("u", "i", timestamp=5)])
        assert len(bundle.train) == 1
        assert len(bundle.validation) == 0 and len(bundle.test) == 0

    def test_timestamp_ties_keep_input_order(self):
        rows = [
            Interaction("u", "a", 1),
            Interaction("u", "b", 1),
            Interaction("u", "c", 1),
            Interaction("u", "d", 1),
            Interaction("u", "e", 1),
        ]
        bundle = split_temporal(rows)
        assert [r.item for r in bundle.train] == ["a", "b", "c"]
        assert [r.item for r in bundle.test] == ["e"]

    def test_missing_timestamp_rejected(self):
        with pytest.raises(DataFormatError, match="timestamp"):
            split_temporal([Interaction("u", "i")])

    def test_test_never_earlier_than_train(self):
        rng = np.random.default_rng(5)
        rows = [
            Interaction(f"u{int(rng.integers(0, 12))}", f"i{int(rng.integers(0, 40))}",
                        timestamp=int(rng.integers(0, 1000)))
            for _ in range(300)
        ]
        bundle = split_temporal(rows)
        latest_train = {}
        for r in bundle.train:
            latest_train[r.user] = max(latest_train.get(r.user, -1), r.timestamp)
        for r in bundle.test:
            assert r.timestamp >= latest_train[r.user]


class TestExposurePair:
    def _write(self, path, rows):
        path.write_text("".join(f"{u}\t{i}\t{r}\n" for u, i, r in rows))

    def test_rating_threshold_strict(self, tmp_path):
        train = tmp_path / "tr.tsv"
        test = tmp_path / "te.tsv"
        self._write(train, [("u1", "a", 4), ("u1", "b", 3), ("u2", "c", 5)])
        self._write(test, [("u1", "d", 3.5), ("u2", "e", 3.0)])
        bundle = load_exposure_pair(train, test)
        assert _pairs(bundle.train) == {("u1", "a"), ("u2", "c")}
        assert _pairs(bundle.test) == {("u1", "d")}  # rating 3 dropped, u2 row gone

    def test_all_low_ratings_error(self, tmp_path):
        train = tmp_path / "tr.tsv"
        test = tmp_path / "te.tsv"
        self._write(train, [("u1", "a", 2), ("u1", "b", 3)])
        self._write(test, [("u1", "c", 5)])
        with pytest.raises(DataFormatError, match="rating > 3"):
            load_exposure_pair(train, test)

    def test_malformed_row_reports_line(self, tmp_path):
        train = tmp_path / "tr.tsv"
        test = tmp_path / "te.tsv"
        train.write_text("u1\ta\t5\nu2\tb\n")
        self._write(test, [("u1", "c", 4)])
        with pytest.raises(DataFormatError, match=":2"):
            load_exposure_pair(train, test)

    def test_bad_rating_value(self, tmp_path):
        train = tmp_path / "tr.tsv"
        test = tmp_path / "te.tsv"
        train.write_text("u1\ta\thigh\n")
        self._write(test, [("u1", "c", 4)])
        with pytest.raises(DataFormatError, match="bad rating"):
            load_exposure_pair(train, test)


class TestShiftKl:
    def test_identical_multisets_zero(self):
        rows = [Interaction("u", f"i{k % 5}") for k in range(50)]
        assert shift_kl(rows, list(rows)) == pytest.approx(0.0, abs=1e-9)

    def test_disjoint_supports_large_finite(self):
        a = [Interaction("u", "x")] * 10
        b = [Interaction("u", "y")] * 10
        v = shift_kl(a, b)
        assert np.isfinite(v) and v > 10

    def test_two_item_hand_value(self):
        train = [Interaction("u", "a")] * 3 + [Interaction("u", "b")]
        test = [Interaction("u", "a"), Interaction("u", "b")]
        # KL((.5,.5) || (.75,.25)) = 0.5 ln(2/3) + 0.5 ln 2
        assert shift_kl(train, test) == pytest.approx(0.143841, abs=1e-5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            shift_kl([], [Interaction("u", "i")])


class TestIngestion:
    def test_read_two_and_three_column(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("u1\ti1\nu2\ti2\t123\n")
        rows = read_interactions_tsv(p)
        assert rows[0] == Interaction("u1", "i1", None)
        assert rows[1] == Interaction("u2", "i2", 123)

    def test_bad_column_count(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("u1\ti1\t5\textra\n")
        with pytest.raises(DataFormatError, match=":1"):
            read_interactions_tsv(p)

    def test_bad_timestamp(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("u1\ti1\tlater\n")
        with pytest.raises(DataFormatError, match="timestamp"):
            read_interactions_tsv(p)

    def test_write_split_files(self, tmp_path):
        rows = [Interaction("u", f"i{k}", timestamp=k) for k in range(10)]
        bundle = split_temporal(rows)
        paths = write_split(bundle, tmp_path, "demo")
        for part in ("train", "valid", "test"):
            assert (tmp_path / f"demo.{part}.tsv").exists()
        meta = (tmp_path / "demo.split.json").read_text()
        assert '"type": "temporal"' in meta
        back = read_interactions_tsv(paths["train"])
        assert [r.item for r in back] == [r.item for r in bundle.train]

    def test_min_count_filter(self):
        core = [
            Interaction("u1", "a"),
            Interaction("u1", "b"),
            Interaction("u2", "a"),
            Interaction("u2", "b"),
        ]
        rows = core + [Interaction("u3", "c"), Interaction("u3", "a")]
        kept = apply_min_count(rows, 2)
        # u3 loses "c" (item count 1), drops below 2, and cascades away.
        assert _pairs(kept) == _pairs(core)
        assert apply_min_count(rows, 0) == rows
