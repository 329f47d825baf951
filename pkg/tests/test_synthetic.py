"""Synthetic dataset generator: label validity, coverage, determinism."""

import numpy as np
import pytest

from linattn.errors import ConfigurationError
from linattn.synthetic import generate_synthetic_dataset


class TestSyntheticDataset:
    def test_labels_in_range(self):
        for image, labels in generate_synthetic_dataset(10, 32, 4, seed=0):
            assert labels.min() >= 0 and labels.max() < 4
            assert image.shape == (3, 32, 32)
            assert image.data.min() >= 0.0 and image.data.max() <= 1.0

    @pytest.mark.parametrize("k", [2, 3, 5, 8])
    def test_no_empty_class_over_100_samples(self, k):
        hist = np.zeros(k, dtype=np.int64)
        for _, labels in generate_synthetic_dataset(100, 32, k, seed=1):
            hist += np.bincount(labels.reshape(-1), minlength=k)
        assert np.all(hist > 0)

    def test_same_seed_identical_bytes(self):
        a = generate_synthetic_dataset(5, 32, 3, seed=7)
        b = generate_synthetic_dataset(5, 32, 3, seed=7)
        for (ia, la), (ib, lb) in zip(a, b):
            assert ia.data.tobytes() == ib.data.tobytes()
            assert la.tobytes() == lb.tobytes()

    def test_different_seeds_differ(self):
        a = generate_synthetic_dataset(1, 32, 3, seed=1)[0][0]
        b = generate_synthetic_dataset(1, 32, 3, seed=2)[0][0]
        assert a.data.tobytes() != b.data.tobytes()

    def test_bad_class_count_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(1, 32, 1, seed=0)
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(1, 32, 9, seed=0)

    def test_bad_size_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(1, 30, 3, seed=0)
