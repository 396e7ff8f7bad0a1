import numpy as np
from hypothesis import given, settings, strategies as st

from rwre import rng

u64 = st.integers(min_value=0, max_value=2**64 - 1)


@given(u64, st.lists(st.integers(min_value=0, max_value=2**40), max_size=4))
@settings(max_examples=200, deadline=None)
def test_python_and_jitted_combine_agree(seed, parts):
    key = rng.derive_key(seed, *parts)
    jit = np.uint64(rng.mix64(np.uint64(seed)))
    for p in parts:
        jit = np.uint64(rng.combine(jit, np.int64(p)))
    assert int(jit) == key


def test_derive_keys_matches_scalar_derivation():
    keys = rng.derive_keys(17, 2, 5, count=10)
    assert [int(k) for k in keys] == [rng.derive_key(17, 2, 5, i) for i in range(10)]


def test_uniform_range_and_moments():
    u = rng.uniforms(np.uint64(123), 0, 200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1 / 12) < 0.002


def test_site_keys_differ_by_site_and_environment():
    pts = np.array([[0, 0], [0, 1], [1, 0], [-1, 0]], dtype=np.int64)
    keys = {int(rng.site_key(np.uint64(5), p)) for p in pts}
    keys |= {int(rng.site_key(np.uint64(6), p)) for p in pts}
    assert len(keys) == 8


def test_gamma_variate_mean():
    key = np.uint64(rng.derive_key(3, rng.STREAM_AUX))
    counter, vals = 0, []
    for _ in range(20_000):
        v, counter = rng.gamma_variate(key, counter, 2.5)
        vals.append(v)
    assert abs(np.mean(vals) - 2.5) < 0.06
