import dataclasses
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solentrunc import whitney as W


def _ball(n, r, c=(0.5, 0.5, 0.5)):
    x = (np.arange(n) + 0.5) / n
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    return (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 < r * r


def _brute_distance(cover, i):
    """Distance from cube i to the complement by direct enumeration of cells."""
    O = cover.open_set
    comp = np.argwhere(~np.pad(O, 1, constant_values=False))  # padded ring = outside the box
    lo = cover.origins[i] + 1
    hi = lo + cover.sides[i]
    gap = np.maximum(0, np.maximum(lo - (comp + 1), comp - hi))
    return np.sqrt(np.min(np.sum(gap**2, axis=1))) * cover.h


def test_ball_cover_passes_all_checks():
    cover = W.decompose(_ball(64, 0.3))
    rep = W.validate(cover)
    assert rep["all_pass"], rep
    # brute-force distance checks on a sample of non-clamped cubes
    rng = np.random.default_rng(0)
    free = np.nonzero(~cover.clamped)[0]
    for i in rng.choice(free, 40, replace=False):
        d = _brute_distance(cover, i)
        assert cover.radii[i] < d <= 4 * cover.radii[i]


def test_dyadic_cube_is_covered_by_smaller_cubes():
    O = np.zeros((64, 64, 64), bool)
    O[16:32, 16:32, 16:32] = True  # side 2^-2
    cover = W.decompose(O)
    assert cover.sides.max() * cover.h <= 2.0**-4
    assert W.validate(cover)["whitney_distance"]


def test_tiling_is_exact_in_cell_counts():
    O = W.random_open_set(32, np.random.default_rng(5))
    cover = W.decompose(O)
    assert int(np.sum(cover.sides**3)) == int(O.sum())
    assert np.array_equal(cover.labels >= 0, O)


def test_cubes_sorted_and_levels_consistent():
    cover = W.decompose(_ball(32, 0.4))
    keys = [(m, *ix) for m, ix in zip(cover.levels, cover.indices.tolist())]
    assert keys == sorted(keys)
    assert np.allclose(cover.sides * cover.h, 2.0 ** -cover.levels.astype(float))


def test_decompose_errors():
    with pytest.raises(ValueError, match="empty"):
        W.decompose(np.zeros((8, 8, 8), bool))
    with pytest.raises(ValueError, match="whole box"):
        W.decompose(np.ones((8, 8, 8), bool))


def test_isolated_synthetic_cube_has_only_itself():
    O = np.zeros((16, 16, 16), bool)
    O[0:4, 0:4, 0:4] = True
    O[12:16, 12:16, 12:16] = True
    cover = W.cover_from_cubes(O, [[0, 0, 0], [12, 12, 12]], [4, 4])
    assert W.neighbors(cover, 0).tolist() == [0]
    with pytest.raises(IndexError):
        W.neighbors(cover, 2)


def test_uniform_tiling_interior_cube_has_26_neighbours():
    n, s = 16, 2
    O = np.ones((n, n, n), bool)
    origins = np.array(list(itertools.product(range(0, n, s), repeat=3)))
    cover = W.cover_from_cubes(O, origins, np.full(len(origins), s))
    counts = np.array([len(W.neighbors(cover, i)) - 1 for i in range(len(cover))])
    interior = np.all((origins > 0) & (origins < n - s), axis=1)
    assert np.all(counts[interior] == 26)
    assert counts.min() == 7  # corner cube


def test_neighbour_ratio_on_all_touching_pairs():
    cover = W.decompose(W.random_open_set(48, np.random.default_rng(11)))
    for i in range(len(cover)):
        r = cover.sides[W.neighbors(cover, i)] / cover.sides[i]
        assert r.min() >= 0.5 and r.max() <= 2.0


def test_inflated_cube_breaks_distance_property():
    cover = W.decompose(_ball(64, 0.35))
    i = int(np.argmax(cover.sides))
    sides = cover.sides.copy()
    sides[i] *= 2
    rep = W.validate(dataclasses.replace(cover, sides=sides))
    assert not rep["whitney_distance"]
    assert not rep["all_pass"]


def test_bump_profile_shape():
    t = np.linspace(-1, 1, 2001)
    f = W.bump_profile(t)
    assert np.all(f[np.abs(t) <= 0.5] == 1.0)
    assert np.all(f[np.abs(t) >= 9 / 16] == 0.0)
    assert np.all((f >= 0) & (f <= 1))
    # derivative matches a finite difference of the profile
    df = W.bump_profile(t, derivative=True)
    fd = np.gradient(f, t)
    assert np.abs(df - fd)[5:-5].max() < 0.05


def test_partition_of_unity_sums_to_one_and_is_supported_in_dilation():
    O = _ball(64, 0.45)
    cover = W.decompose(O)
    pou = W.partition_of_unity(cover)
    tot = pou.total()
    assert np.abs(tot[O] - 1).max() <= 1e-12
    assert np.all(tot[~O] == 0)
    # every bump vanishes outside its 9/8 dilation, sampled exhaustively
    X = np.indices(O.shape)
    for i in np.nonzero(cover.sides >= 8)[0]:
        sl, psi = pou.psi(int(i))
        t = np.stack([(X[k][sl] + 0.5 - cover.origins[i, k]) / cover.sides[i] - 0.5 for k in range(3)])
        outside = np.max(np.abs(t), axis=0) >= 9 / 16
        assert np.all(psi[outside] == 0)
        half = np.max(np.abs(t), axis=0) <= 0.25
        assert np.allclose(psi[half], 1.0)


def test_weighted_sum_reproduces_constants():
    O = _ball(32, 0.4)
    pou = W.partition_of_unity(W.decompose(O))
    out = pou.weighted_sum(np.full((len(pou.cover), 2), 3.0))
    assert np.allclose(out[:, O], 3.0, atol=1e-12)
    assert np.all(out[:, ~O] == 0)


def test_gradient_constant_stable_across_random_sets():
    rng = np.random.default_rng(7)
    vals = []
    for _ in range(20):
        O = W.random_open_set(32, rng)
        vals.append(W.gradient_constant(W.partition_of_unity(W.decompose(O))))
    vals = np.array(vals)
    assert np.all(np.isfinite(vals))
    assert vals.max() <= 64.0


def test_multiplicity_of_dilated_cubes_synthetic():
    # four 1-cell cubes meeting at an edge: 3/2 dilations all share the edge
    O = np.zeros((4, 4, 4), bool)
    O[1:3, 1:3, 1] = True
    origins = [[1, 1, 1], [1, 2, 1], [2, 1, 1], [2, 2, 1]]
    cover = W.cover_from_cubes(O, origins, [1, 1, 1, 1])
    assert W.dilation_multiplicity(cover) == 4


def test_jsonl_round_trip_fields():
    cover = W.decompose(_ball(16, 0.4))
    lines = W.cover_to_jsonl(cover).splitlines()
    assert len(lines) == len(cover)
    first = json.loads(lines[0])
    assert set(first) == {"m", "index", "r", "A", "clamped"}
    assert first["r"] == pytest.approx(cover.radii[0])


def test_decomposition_is_deterministic():
    O = W.random_open_set(32, np.random.default_rng(3))
    a, b = W.decompose(O), W.decompose(O.copy())
    assert W.cover_to_jsonl(a) == W.cover_to_jsonl(b)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.sampled_from([8, 12, 16, 24]))
def test_random_covers_satisfy_whitney_properties(seed, n):
    O = W.random_open_set(n, np.random.default_rng(seed))
    rep = W.validate(W.decompose(O))
    assert rep["all_pass"], rep
    assert rep["whitney_distance_exact"]
