import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from rad.seeding import Stream, mix_key, uniforms

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def fmix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def reference_key(seed, step, index, draw):
    h = fmix((seed + GAMMA) & MASK)
    for v in (step, index, draw):
        h = fmix(((h ^ v) + GAMMA) & MASK)
    return h


u64 = st.integers(0, MASK)


@given(u64, u64, u64, st.integers(0, 3))
def test_mix_matches_pure_python(seed, step, index, draw):
    assert int(mix_key(seed, step, np.uint64(index), draw)) == reference_key(seed, step, index, draw)
    u = uniforms(seed, step, np.array([index], dtype=np.uint64), draw)[0]
    assert u == (reference_key(seed, step, index, draw) >> 11) * 2.0**-53
    assert 0.0 <= u < 1.0


def test_known_values():
    got = uniforms(0, 0, np.arange(5, dtype=np.uint64), 0)
    assert np.allclose(got, [0.12964562, 0.85130262, 0.89059661, 0.2109532, 0.5878645], atol=5e-9)


def test_order_independence():
    s = Stream(42, 7)
    idx = np.arange(100, dtype=np.uint64)
    whole = s.uniforms(idx, 1)
    perm = np.random.default_rng(0).permutation(100)
    assert np.array_equal(s.uniforms(idx[perm], 1), whole[perm])
    assert np.array_equal(np.concatenate([s.uniforms(idx[:37], 1), s.uniforms(idx[37:], 1)]), whole)


def test_streams_differ():
    idx = np.arange(50, dtype=np.uint64)
    a = Stream(1, 0).uniforms(idx, 0)
    assert not np.array_equal(a, Stream(2, 0).uniforms(idx, 0))
    assert not np.array_equal(a, Stream(1, 1).uniforms(idx, 0))
    assert not np.array_equal(a, Stream(1, 0).uniforms(idx, 1))
    assert Stream(1, 0).at(5) == Stream(1, 5)


def test_roughly_uniform():
    u = uniforms(9, 3, np.arange(200_000, dtype=np.uint64), 1)
    counts = np.histogram(u, bins=20, range=(0, 1))[0]
    expected = 10_000
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 60  # 19 dof; p < 1e-5 beyond this
