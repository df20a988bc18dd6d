"""Backend parity: the compiled kernels must match the pure-Python ones."""

import numpy as np
import pytest

from flowmoe import kernels

BACKENDS = kernels.available_backends()


def random_edges(rng, n=20_000, hosts=400):
    pool = [f"10.{i // 256}.{i % 256}.1" for i in range(hosts)]
    src = [pool[i] for i in rng.integers(0, hosts, size=n)]
    dst = [pool[i] for i in rng.integers(0, hosts, size=n)]
    return src, dst


def test_both_backends_present():
    assert set(BACKENDS) == {"python", "compiled"}


def test_active_backend_is_valid():
    assert kernels.backend_name() in BACKENDS


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
class TestParity:
    def test_intern_pairs_identical(self, rng):
        src, dst = random_edges(rng)
        results = {
            name: mod.intern_pairs(src, dst) for name, mod in BACKENDS.items()
        }
        u_py, v_py, ips_py = results["python"]
        u_c, v_c, ips_c = results["compiled"]
        assert ips_py == ips_c
        assert np.array_equal(u_py, u_c)
        assert np.array_equal(v_py, v_c)
        assert u_py.dtype == u_c.dtype

    def test_accumulate_identical_bits(self, rng):
        src, dst = random_edges(rng)
        u, v, ips = BACKENDS["python"].intern_pairs(src, dst)
        features = rng.normal(size=(len(src), 4))
        sums_py, deg_py = BACKENDS["python"].accumulate_node_features(
            u, v, features, len(ips)
        )
        sums_c, deg_c = BACKENDS["compiled"].accumulate_node_features(
            u, v, features, len(ips)
        )
        # bit-for-bit, not just close: accumulation order is part of the contract
        assert np.array_equal(sums_py, sums_c)
        assert np.array_equal(deg_py, deg_c)

    def test_self_loops_and_parallel_edges(self):
        src = ["a", "a", "b", "a"]
        dst = ["a", "b", "a", "b"]
        features = np.arange(8.0).reshape(4, 2)
        for mod in BACKENDS.values():
            u, v, ips = mod.intern_pairs(src, dst)
            assert ips == ["a", "b"]
            sums, deg = mod.accumulate_node_features(u, v, features, 2)
            # node a: self-loop twice + two a->b + one b->a
            assert deg[0] == 5.0
            assert deg[1] == 3.0
            assert deg.sum() == 2 * len(src)


def test_env_override_selects_backend(tmp_path):
    import subprocess
    import sys

    code = "import flowmoe.kernels as k; print(k.backend_name())"
    for want in BACKENDS:
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "FLOWMOE_KERNELS": want},
            capture_output=True,
            text=True,
        )
        assert out.stdout.strip() == want, out.stderr


def test_unknown_override_fails_fast():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import flowmoe.kernels"],
        env={"PATH": "/usr/bin:/bin", "FLOWMOE_KERNELS": "fortran"},
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
