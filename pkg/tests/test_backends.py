"""Kernel backend selection and the identical-results contract."""

import numpy as np
import pytest

from descalign import backend


class TestSelection:
    def test_available(self):
        assert "numpy" in backend.available_backends()

    def test_use_override(self):
        with backend.use("numpy"):
            assert backend.active_backend() == "numpy"
            assert backend.kernels().NAME == "numpy"

    def test_env_var(self, monkeypatch):
        monkeypatch.setenv("DA_BACKEND", "numpy")
        assert backend.active_backend() == "numpy"
        monkeypatch.setenv("DA_BACKEND", "bogus")
        with pytest.raises(ValueError):
            backend.active_backend()

    def test_override_beats_env(self, monkeypatch):
        monkeypatch.setenv("DA_BACKEND", "numpy")
        if not backend.HAS_NUMBA:
            pytest.skip("numba unavailable")
        with backend.use("numba"):
            assert backend.active_backend() == "numba"

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            backend.kernels("cuda")


@pytest.mark.skipif(not backend.HAS_NUMBA, reason="numba unavailable")
class TestBackendEquivalence:
    def test_nn_best_identical(self):
        np_k = backend.kernels("numpy")
        nb_k = backend.kernels("numba")
        for seed in range(100):
            g = np.random.default_rng(seed)
            q = g.standard_normal((int(g.integers(1, 17)), int(g.integers(1, 9))))
            p = g.standard_normal((int(g.integers(1, 65)), q.shape[1]))
            s1, i1 = np_k.nn_best(q, p)
            s2, i2 = nb_k.nn_best(q, p)
            assert np.array_equal(s1, s2)
            assert np.array_equal(i1, i2)

    def test_conv2d_identical(self):
        np_k = backend.kernels("numpy")
        nb_k = backend.kernels("numba")
        for seed in range(30):
            g = np.random.default_rng(seed)
            cin = int(g.integers(1, 5))
            cout = int(g.integers(1, 5))
            k = int(g.choice([1, 3]))
            pad = 1 if k == 3 else 0
            x = g.standard_normal((cin, int(g.integers(k, 7)), int(g.integers(k, 7))))
            w = g.standard_normal((cout, cin, k, k))
            b = g.standard_normal(cout)
            y1 = np_k.conv2d(x, w, b, pad)
            y2 = nb_k.conv2d(x, w, b, pad)
            assert np.array_equal(y1, y2)

    def test_readonly_inputs_accepted(self):
        g = np.random.default_rng(0)
        q = g.standard_normal((4, 3))
        p = g.standard_normal((6, 3))
        q.setflags(write=False)
        p.setflags(write=False)
        for name in backend.available_backends():
            sims, idx = backend.kernels(name).nn_best(q, p)
            assert sims.shape == (4,)
            assert idx.shape == (4,)
