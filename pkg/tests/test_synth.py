import pytest

from tkgdistill.datasets import parse_dataset
from tkgdistill.synth import generate_synthetic_dataset


class TestSynthData:
    def test_counts_and_vocab(self, tmp_path):
        counts = generate_synthetic_dataset(tmp_path, n_entities=50, n_relations=3,
                                            n_time_bins=10, facts_per_slot=5, seed=7)
        assert counts["entities"] == 50
        assert counts["train"] + counts["valid"] + counts["test"] == 3 * 10 * 5
        vocab, store = parse_dataset(tmp_path)
        assert vocab.n_entities == 50
        assert vocab.n_relations == 3
        assert vocab.n_time_bins == 10
        assert len(store.train) == counts["train"]

    def test_deterministic_files(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_synthetic_dataset(a, n_entities=30, n_relations=2, n_time_bins=6,
                                   facts_per_slot=4, seed=7)
        generate_synthetic_dataset(b, n_entities=30, n_relations=2, n_time_bins=6,
                                   facts_per_slot=4, seed=7)
        for name in ("train.txt", "valid.txt", "test.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_data(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_synthetic_dataset(a, n_entities=30, n_relations=2, n_time_bins=6,
                                   facts_per_slot=4, seed=7)
        generate_synthetic_dataset(b, n_entities=30, n_relations=2, n_time_bins=6,
                                   facts_per_slot=4, seed=8)
        assert (a / "train.txt").read_bytes() != (b / "train.txt").read_bytes()

    def test_planted_periodicity(self, tmp_path):
        period = 4
        generate_synthetic_dataset(tmp_path, n_entities=40, n_relations=2, n_time_bins=12,
                                   period=period, facts_per_slot=10, seed=7)
        by_phase = {}
        for name in ("train.txt", "valid.txt", "test.txt"):
            for line in (tmp_path / name).read_text().splitlines():
                s, r, o, t = line.split("\t")
                key = (s, r, int(t) % period)
                by_phase.setdefault(key, set()).add(o)
        # the generating pattern repeats with the period: same (s, r, phase) -> same object
        assert all(len(objs) == 1 for objs in by_phase.values())

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic_dataset(tmp_path, n_entities=1)
        with pytest.raises(ValueError):
            generate_synthetic_dataset(tmp_path, n_entities=5, facts_per_slot=9)
