from __future__ import annotations

import numpy as np
import pytest

from gpcitr import container, rng
from gpcitr.errors import DomainError


class TestDerive:
    def test_deterministic(self):
        a = rng.derive(7, "forest.tree", 3).random(5)
        b = rng.derive(7, "forest.tree", 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        base = rng.derive(7, "forest.tree", 3).random(3)
        for other in (rng.derive(8, "forest.tree", 3), rng.derive(7, "forest.tree", 4),
                      rng.derive(7, "bagging.bag", 3)):
            assert not np.array_equal(base, other.random(3))

    def test_derive_int_range(self):
        v = rng.derive_int(1, "x", 2)
        assert 0 <= v < 2**63
        assert v == rng.derive_int(1, "x", 2)

    def test_thread_override(self, monkeypatch):
        monkeypatch.setenv(rng.THREADS_ENV, "3")
        assert rng.thread_count() == 3
        monkeypatch.setenv(rng.THREADS_ENV, "junk")
        assert rng.thread_count(2) == 2


class TestContainer:
    def test_round_trip(self):
        arrays = {"a": np.arange(6, dtype=np.int32).reshape(2, 3), "b": np.linspace(0, 1, 4)}
        blob = container.dumps({"kind": "test", "n": 1}, arrays)
        assert blob[:4] == b"PITR"
        header, out = container.loads(blob)
        assert header["kind"] == "test"
        assert header["format_version"] == container.VERSION
        for k in arrays:
            np.testing.assert_array_equal(out[k], arrays[k])
            assert out[k].dtype == arrays[k].dtype

    def test_deterministic_bytes(self):
        arrays = {"z": np.ones(3), "a": np.zeros(2)}
        assert container.dumps({"k": 1}, arrays) == container.dumps({"k": 1}, dict(reversed(arrays.items())))

    def test_bad_magic(self):
        with pytest.raises(DomainError, match="magic"):
            container.loads(b"NOPE" + bytes(10))

    def test_newer_version_rejected(self):
        blob = bytearray(container.dumps({}, {}))
        blob[4] = 99
        with pytest.raises(DomainError, match="newer"):
            container.loads(bytes(blob))
