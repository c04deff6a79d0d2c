import itertools

import numpy as np
import pytest
import torch

from promptsid.noise import NoiseSpec, apply_noise
from promptsid.sampling import SamplePattern, apply_pattern, draw_pattern, gather_subimages, srd_sample
from promptsid.tensor_io import Rng


def block_coord(k):
    return divmod(k, 2)


def valid_triples():
    """Enumerate (p1, p2, p3) with p2, p3 distinct 4-neighbours of p1."""
    out = []
    for p1, p2, p3 in itertools.permutations(range(4), 3):
        d = [abs(block_coord(p1)[0] - block_coord(q)[0]) + abs(block_coord(p1)[1] - block_coord(q)[1])
             for q in (p2, p3)]
        if d == [1, 1]:
            out.append((p1, p2, p3))
    return out


def test_enumeration_has_eight_triples():
    triples = valid_triples()
    assert len(triples) == 8
    assert {(p2, p3) for p1, p2, p3 in triples if p1 == 0} == {(1, 2), (2, 1)}


def test_triple_frequencies_uniform():
    n = 80_000
    pat = draw_pattern(2, 2 * n, Rng(0))  # n independent blocks in one row
    pos = pat.positions().reshape(3, -1).T
    counts = {t: 0 for t in valid_triples()}
    for row in map(tuple, pos):
        counts[row] += 1  # KeyError here would be an invalid triple
    se = np.sqrt(n * (1 / 8) * (7 / 8))
    for c in counts.values():
        assert abs(c - n / 8) < 3 * se


def test_never_diagonal():
    pos = draw_pattern(64, 64, Rng(1)).positions().reshape(3, -1)
    diag = {(0, 3), (3, 0), (1, 2), (2, 1)}
    for p1, p2, p3 in pos.T:
        assert (p1, p2) not in diag and (p1, p3) not in diag


def test_index_trace_example():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
    pat = SamplePattern(np.array([[0]]), np.array([[False]]))
    m1, m2, m3 = apply_pattern(img, pat)
    assert (m1.item(), m2.item(), m3.item()) == (1.0, 2.0, 3.0)


def test_constant_image():
    img = np.full((8, 6, 3), 0.3)
    for m in srd_sample(img, Rng(2))[:3]:
        assert m.shape == (4, 3, 3)
        assert np.all(m == 0.3)


def test_provenance_adjacency_coverage():
    rng = Rng(3)
    for _ in range(50):
        h, w = 2 * int(rng.integers(1, 8)), 2 * int(rng.integers(1, 8))
        img = rng.uniform(size=(h, w, 2))  # distinct values with probability 1
        m1, m2, m3, pat = srd_sample(img, rng)
        for i, j in itertools.product(range(h // 2), range(w // 2)):
            block = {tuple(img[2 * i + a, 2 * j + b]): (a, b) for a in range(2) for b in range(2)}
            coords = [block[tuple(m[i, j])] for m in (m1, m2, m3)]
            assert len(set(coords)) == 3
            for q in coords[1:]:
                assert abs(q[0] - coords[0][0]) + abs(q[1] - coords[0][1]) == 1


def test_unused_position_frequency():
    n = 40_000
    pos = draw_pattern(2, 2 * n, Rng(4)).positions().reshape(3, -1)
    unused = 6 - pos.sum(0)
    se = np.sqrt(n * 0.25 * 0.75)
    for k in range(4):
        assert abs((unused == k).sum() - n / 4) < 3 * se


def test_replay_and_seed_determinism():
    img = np.random.default_rng(0).random((10, 12, 3))
    a = srd_sample(img, Rng(11))
    b = srd_sample(img, Rng(11))
    for x, y in zip(a[:3], b[:3]):
        np.testing.assert_array_equal(x, y)
    for x, y in zip(apply_pattern(img, a[3]), a[:3]):
        np.testing.assert_array_equal(x, y)


def test_odd_and_mismatched_dims():
    with pytest.raises(ValueError):
        draw_pattern(5, 4, Rng(0))
    pat = draw_pattern(4, 4, Rng(0))
    with pytest.raises(ValueError):
        apply_pattern(np.zeros((6, 4, 1)), pat)


def test_gather_matches_numpy():
    rng = Rng(5)
    imgs = [rng.uniform(size=(8, 6, 3)) for _ in range(3)]
    pats = [draw_pattern(8, 6, rng) for _ in range(3)]
    x = torch.from_numpy(np.stack([im.transpose(2, 0, 1) for im in imgs]))
    out = gather_subimages(x, pats)
    for b, (im, pat) in enumerate(zip(imgs, pats)):
        for n, m in enumerate(apply_pattern(im, pat)):
            np.testing.assert_array_equal(out[n, b].numpy().transpose(1, 2, 0), m)


def test_subimage_mean_is_unbiased():
    clean = np.random.default_rng(1).random((8, 8, 1))
    pat = draw_pattern(8, 8, Rng(6))
    target = apply_pattern(clean, pat)
    spec = NoiseSpec.gaussian(25)
    rng = Rng(7)
    devs = {}
    acc = [np.zeros_like(t) for t in target]
    for k in range(1, 10_001):
        for a, m in zip(acc, apply_pattern(apply_noise(clean, spec, rng), pat)):
            a += m
        if k in (100, 10_000):
            devs[k] = max(np.abs(a / k - t).max() for a, t in zip(acc, target))
    sigma = 25 / 255
    # expected max |mean error| over 48 gaussians ~ 2.5 sigma/sqrt(k)
    assert devs[10_000] < 4 * sigma / 100
    assert devs[10_000] < devs[100] / 3
