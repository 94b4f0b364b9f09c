import numpy as np
import pytest

from manigraph.graphs import FeatureChannel, FeatureGraph, permute_graph
from manigraph.layers import (
    DiffusionLayerParams,
    HeadParams,
    InvariantLayerParams,
    TMLPLayerParams,
    activate,
    cross_entropy,
    diffusion_layer,
    head,
    invariant_layer,
    l_step_map,
    log_softmax,
    pool,
    step_map,
    tmlp,
    tmlp_layer,
)
from manigraph.manifolds import Euclidean, Lorentz, SPD, Sphere

MANIFOLDS = [Euclidean(3), Sphere(2), Lorentz(2), SPD(2)]
IDS = ["euclidean3", "sphere2", "lorentz2", "spd2"]


def clustered_values(manifold, n, rng, spread=0.3, center=None):
    if center is None:
        center = manifold.random_point(rng)
    return np.stack([manifold.exp(center, manifold.random_tangent(rng, center, spread)) for _ in range(n)])


def channel_stack(manifold, channels, n, rng, spread=0.3):
    """Channels share one cluster center, like copies of a graph that have
    drifted apart through a few layers."""
    center = manifold.random_point(rng)
    return np.stack([clustered_values(manifold, n, rng, spread, center) for _ in range(channels)])


def random_feature_graph(manifold, n, rng, channels=1, p_edge=0.5, spread=0.3):
    chans = tuple(FeatureChannel(manifold, clustered_values(manifold, n, rng, spread)) for _ in range(channels))
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p_edge]
    if not edges:
        edges = [(0, 1), (1, 0)]
    weights = rng.uniform(0.1, 0.9, len(edges))
    g = FeatureGraph(n, np.array(edges), weights, chans)
    return g


# ---------------------------------------------------------------------------
# activation


def test_activate_zero_threshold_passes_everything():
    e = Euclidean(2)
    base = np.zeros((4, 2))
    vecs = np.random.default_rng(0).normal(size=(4, 2))
    assert np.array_equal(activate(e, base, vecs, 0.0), vecs)


def test_activate_below_threshold_zeroes():
    e = Euclidean(2)
    v = np.array([[0.3, 0.4]])  # norm 0.5
    assert np.array_equal(activate(e, np.zeros((1, 2)), v, 1.0), np.zeros((1, 2)))


def test_activate_boundary_passes():
    e = Euclidean(2)
    v = np.array([[0.6, 0.8]])  # norm exactly 1.0
    assert np.array_equal(activate(e, np.zeros((1, 2)), v, 1.0), v)


# ---------------------------------------------------------------------------
# step maps


def two_node_line():
    return FeatureGraph(
        2,
        np.array([[0, 1]]),
        np.array([1.0]),
        (FeatureChannel(Euclidean(1), np.array([[0.0], [2.0]])),),
    )


def test_step_map_euclidean_example():
    out = step_map(two_node_line(), 0, t=0.25, alpha=0.0)
    assert np.allclose(out, [[0.5], [2.0]], atol=1e-15)


def test_step_map_zero_time_identity():
    rng = np.random.default_rng(1)
    for manifold in MANIFOLDS:
        g = random_feature_graph(manifold, 5, rng)
        out = step_map(g, 0, t=0.0, alpha=0.0)
        assert np.abs(out - g.channel_values(0)).max() < 1e-12


def test_step_map_constant_features_fixed():
    for manifold in MANIFOLDS:
        p = manifold.random_point(np.random.default_rng(2))
        g = FeatureGraph(
            3,
            np.array([[0, 1], [1, 2], [2, 0]]),
            np.full(3, 0.5),
            (FeatureChannel(manifold, np.stack([p] * 3)),),
        )
        out = step_map(g, 0, t=0.7, alpha=0.0)
        assert np.abs(out - p).max() < 1e-12


def path_graph(values):
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    n = values.shape[0]
    edges = []
    for i in range(n - 1):
        edges += [(i, i + 1), (i + 1, i)]
    return FeatureGraph(
        n, np.array(edges), np.full(len(edges), 0.5), (FeatureChannel(Euclidean(1), values),)
    )


def test_l_step_locality_is_bitwise():
    base = path_graph([0.0, 1.0, 2.0, 3.0])
    bumped = path_graph([0.0, 1.0, 2.0, 9.0])
    for steps, same in [(1, True), (2, True), (3, False)]:
        a = l_step_map(base, 0, 0.3, 0.0, steps)
        b = l_step_map(bumped, 0, 0.3, 0.0, steps)
        # node 0 is three hops from the perturbed node
        assert bool(a[0, 0] == b[0, 0]) == same


def test_l_step_one_equals_step():
    rng = np.random.default_rng(3)
    g = random_feature_graph(Sphere(2), 6, rng)
    assert np.array_equal(l_step_map(g, 0, 0.2, 0.0, 1), step_map(g, 0, 0.2, 0.0))


def test_diffusion_layer_identity_and_independent_channels():
    rng = np.random.default_rng(4)
    g = random_feature_graph(Lorentz(2), 5, rng, channels=2)
    params = DiffusionLayerParams(times=[0.0, 0.4], thresholds=[0.0, 0.0], steps=1)
    out = diffusion_layer(g, params)
    # channel 0 untouched (t=0), channel 1 diffused independently
    assert np.abs(out.channel_values(0) - g.channel_values(0)).max() < 1e-12
    expected = l_step_map(g, 1, 0.4, 0.0, 1)
    assert np.array_equal(out.channel_values(1), expected)
    assert np.array_equal(out.edges, g.edges) and np.array_equal(out.weights, g.weights)


def test_diffusion_layer_rejects_channel_mismatch():
    rng = np.random.default_rng(5)
    g = random_feature_graph(Euclidean(3), 4, rng, channels=2)
    with pytest.raises(ValueError):
        diffusion_layer(g, DiffusionLayerParams([0.1], [0.0]))


@pytest.mark.parametrize("manifold", MANIFOLDS, ids=IDS)
def test_diffusion_layer_equivariance(manifold):
    rng = np.random.default_rng(6)
    for _ in range(5):
        g = random_feature_graph(manifold, 6, rng, channels=2)
        params = DiffusionLayerParams(
            times=rng.uniform(0.1, 0.6, 2), thresholds=rng.uniform(0.0, 0.2, 2), steps=2
        )
        # isometry
        iso = manifold.random_isometry(rng)
        moved = g.with_all_channels([iso.apply(c.values) for c in g.channels])
        lhs = diffusion_layer(moved, params)
        rhs = diffusion_layer(g, params)
        for c in range(2):
            assert np.abs(lhs.channel_values(c) - iso.apply(rhs.channel_values(c))).max() < 1e-9
        # node permutation, exact
        perm = rng.permutation(6)
        lhs_p = diffusion_layer(permute_graph(g, perm), params)
        for c in range(2):
            expected = np.empty_like(rhs.channel_values(c))
            expected[perm] = rhs.channel_values(c)
            assert np.array_equal(lhs_p.channel_values(c), expected)


# ---------------------------------------------------------------------------
# tangent MLP


def test_tmlp_single_channel_identity():
    rng = np.random.default_rng(7)
    for manifold in MANIFOLDS:
        vals = clustered_values(manifold, 5, rng)[None]  # one channel
        params = TMLPLayerParams(np.array([[1.0]]), np.array([[1.0]]), slope=1.0)
        out = tmlp_layer(manifold, vals, params, reference=vals[0])
        assert np.abs(out - vals).max() < 1e-12


def test_tmlp_all_equal_reference_collapses():
    rng = np.random.default_rng(8)
    manifold = Sphere(2)
    p = clustered_values(manifold, 4, rng)
    vals = np.stack([p, p, p])  # three identical channels
    params = TMLPLayerParams(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))
    out = tmlp_layer(manifold, vals, params, reference=p)
    assert np.abs(out - p).max() < 1e-12


@pytest.mark.parametrize("manifold", MANIFOLDS, ids=IDS)
@pytest.mark.parametrize("mode", ["signed", "norm"])
def test_tmlp_equivariance(manifold, mode):
    rng = np.random.default_rng(9)
    for _ in range(5):
        vals = channel_stack(manifold, 3, 5, rng)
        params = TMLPLayerParams(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), mode=mode)
        iso = manifold.random_isometry(rng)
        lhs = tmlp_layer(manifold, iso.apply(vals), params, reference=iso.apply(vals[0]))
        rhs = iso.apply(tmlp_layer(manifold, vals, params, reference=vals[0]))
        assert np.abs(lhs - rhs).max() < 1e-9


def test_tmlp_two_identity_layers():
    rng = np.random.default_rng(10)
    manifold = Lorentz(3)
    vals = channel_stack(manifold, 2, 4, rng)
    eye = np.eye(2)
    layer = TMLPLayerParams(eye, eye, slope=1.0)
    out = tmlp(manifold, vals, [layer, layer])
    assert np.abs(out - vals).max() < 1e-9


def test_tmlp_cancelled_matches_uncancelled():
    rng = np.random.default_rng(11)
    for manifold in MANIFOLDS:
        vals = channel_stack(manifold, 3, 4, rng)
        layers = [
            TMLPLayerParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 3))),
            TMLPLayerParams(rng.normal(size=(2, 3)), rng.normal(size=(2, 3))),
        ]
        fast = tmlp(manifold, vals, layers, cancel=True)
        slow = tmlp(manifold, vals, layers, cancel=False)
        assert np.abs(fast - slow).max() < 1e-12


def test_two_layer_tmlp_is_not_a_single_layer():
    # On Euclidean(1) a single tangent layer's output channel is sigma(s)*Y
    # with s and the unnormalized direction both linear along an affine probe
    # path, so it breaks at most twice (one sigma kink, one direction flip).
    # A generic two-layer tMLP shows more breaks, hence cannot be rewritten
    # as any single layer.
    e = Euclidean(1)
    ref = np.zeros((1, 1))
    rng = np.random.default_rng(0)
    layers = [
        TMLPLayerParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), slope=0.0),
        TMLPLayerParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), slope=0.0),
    ]

    ts = np.linspace(-2.0, 2.0, 4001)
    most_groups = 0
    for channel in range(3):
        outs = []
        for t in ts:
            vals = np.stack([ref, np.array([[0.8 - 1.0 * t]]), np.array([[-0.9 + 0.8 * t]])])
            outs.append(tmlp(e, vals, layers)[channel, 0, 0])
        second = np.abs(np.diff(np.asarray(outs), 2))
        kinks = np.flatnonzero(second > 1e-4)
        groups = 1 + int(np.sum(np.diff(kinks) > 5)) if kinks.size else 0
        most_groups = max(most_groups, groups)
    assert most_groups >= 3


# ---------------------------------------------------------------------------
# invariant layer, pooling, head


def test_invariant_layer_all_equal_zero():
    rng = np.random.default_rng(12)
    manifold = SPD(2)
    p = clustered_values(manifold, 3, rng)
    vals = np.stack([p, p])
    params = InvariantLayerParams(rng.normal(size=(2, 2, 2)))
    assert np.abs(invariant_layer(manifold, vals, params)).max() < 1e-9


def test_invariant_layer_euclidean_hand_example():
    e = Euclidean(1)
    vals = np.array([[[0.0]], [[4.0]]])  # two channels, one node
    params = InvariantLayerParams(np.zeros((2, 2, 2)))  # uniform weights
    out = invariant_layer(e, vals, params)
    # both means are 2.0; every output is dist - dist = 0
    assert np.abs(out).max() < 1e-12


@pytest.mark.parametrize("manifold", MANIFOLDS, ids=IDS)
def test_invariant_layer_isometry_invariance(manifold):
    rng = np.random.default_rng(13)
    vals = channel_stack(manifold, 3, 4, rng)
    params = InvariantLayerParams(rng.normal(size=(3, 2, 3)))
    iso = manifold.random_isometry(rng)
    a = invariant_layer(manifold, vals, params)
    b = invariant_layer(manifold, iso.apply(vals), params)
    assert np.abs(a - b).max() < 1e-9


def test_invariant_layer_pair_mode_shape():
    rng = np.random.default_rng(14)
    e = Euclidean(2)
    vals = rng.normal(size=(3, 5, 2))
    params = InvariantLayerParams(rng.normal(size=(3, 2, 3)), combine="pair")
    assert invariant_layer(e, vals, params).shape == (6, 5)


def test_pool_examples():
    assert np.allclose(pool(np.array([[3.0]])), [3.0, 3.0])
    assert np.allclose(pool(np.array([[2.0, 2.0, 2.0]])), [2.0, 2.0])
    assert np.allclose(pool(np.array([[1.0, 3.0]])), [3.0, 2.0])
    assert np.allclose(pool(np.array([[1.0, 3.0]]), mode="max"), [3.0])
    with pytest.raises(ValueError):
        pool(np.zeros((2, 0)))


def test_pool_permutation_invariant_bitwise():
    rng = np.random.default_rng(15)
    s = rng.normal(size=(4, 9))
    perm = rng.permutation(9)
    assert np.array_equal(pool(s), pool(s[:, perm]))


def head_params(in_width, hidden, classes, rng=None):
    if rng is None:
        return HeadParams(
            np.zeros((hidden, in_width)), np.zeros(hidden), np.zeros((classes, hidden)), np.zeros(classes)
        )
    return HeadParams(
        rng.normal(size=(hidden, in_width)),
        rng.normal(size=hidden),
        rng.normal(size=(classes, hidden)),
        rng.normal(size=classes),
    )


def test_head_zero_params_uniform():
    out = head(np.ones(4), np.zeros(0), head_params(4, 3, 5))
    assert np.allclose(out, np.log(1 / 5), atol=1e-15)


def test_head_log_softmax_normalized():
    rng = np.random.default_rng(16)
    out = head(rng.normal(size=4), rng.normal(size=2), head_params(6, 8, 3, rng))
    assert np.all(out <= 0)
    assert abs(np.exp(out).sum() - 1.0) < 1e-12


def test_log_softmax_shift_invariance():
    logits = np.array([0.3, -1.2, 2.0])
    assert np.abs(log_softmax(logits) - log_softmax(logits + 17.5)).max() < 1e-12


def test_head_two_class_hand_example():
    out = log_softmax(np.array([1.0, 0.0]))
    assert abs(out[0] + 0.31326168751822286) < 1e-12
    assert abs(out[1] + 1.3132616875182228) < 1e-12


def test_cross_entropy():
    assert cross_entropy(np.array([0.0, -np.inf]), 0) == 0.0
    assert abs(cross_entropy(np.log(np.full(3, 1 / 3)), 1) - np.log(3)) < 1e-12
    assert abs(cross_entropy(log_softmax(np.array([1.0, 0.0])), 0) - 0.31326168751822286) < 1e-12
    with pytest.raises(ValueError):
        cross_entropy(np.array([-0.1, -0.2]), 2)


def test_head_shape_mismatch():
    with pytest.raises(ValueError):
        head(np.ones(3), np.zeros(0), head_params(4, 2, 2))


# ---------------------------------------------------------------------------
# flat-space cross-check of the whole block


def flat_laplacian(values, edges, weights):
    out = np.zeros_like(values)
    for (a, b), w in zip(edges, weights):
        out[a] -= w * (values[b] - values[a])
    return out


def test_euclidean_block_matches_flat_implementation():
    rng = np.random.default_rng(17)
    d = 2
    for _ in range(10):
        g = random_feature_graph(Euclidean(d), 6, rng, channels=2, spread=1.0)
        vals = np.stack([c.values for c in g.channels])
        t, alpha = rng.uniform(0.05, 0.5), rng.uniform(0.0, 0.3)

        # diffusion step
        ours = step_map(g, 0, t, alpha)
        lap = flat_laplacian(vals[0], g.edges, g.weights)
        act = np.where(np.linalg.norm(lap, axis=-1, keepdims=True) >= alpha, lap, 0.0)
        flat = vals[0] - t * act
        assert np.abs(ours - flat).max() < 1e-12

        # tangent layer at reference channel 0
        params = TMLPLayerParams(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
        ours_t = tmlp_layer(Euclidean(d), vals, params, reference=vals[0])
        logs = vals - vals[0]
        x = np.einsum("ji,ind->jnd", params.out_weights, logs)
        ytil = np.einsum("ji,ind->jnd", params.dir_weights, logs)
        yn = np.linalg.norm(ytil, axis=-1, keepdims=True)
        flat_out = np.empty_like(x)
        for j in range(3):
            for v in range(vals.shape[1]):
                if yn[j, v, 0] <= 1e-12:
                    z = x[j, v]
                else:
                    y = ytil[j, v] / yn[j, v, 0]
                    s = float(x[j, v] @ y)
                    sig = s if s >= 0 else 0.01 * s
                    z = sig * y + (x[j, v] - s * y)
                flat_out[j, v] = vals[0, v] + z
        assert np.abs(ours_t - flat_out).max() < 1e-12
