"""Tests for the selection template and all nine methods: hand instances,
incremental-state tracking against naive recomputation, cross-implementation
equalities, and the TP/P duality."""

import math

import numpy as np
import pytest
from scipy import stats

from bmal import oracles
from bmal.kernels import (
    FeatureKernel,
    GroundSet,
    UnsupportedKernelError,
    base_nngp,
    transform_posterior,
    transform_rp,
)
from bmal.model import ModelConfig
from bmal.selection import SelectionRequest, select

EMPTY = np.empty(0, dtype=int)


def feature_request(F, method, n_batch, mode="p", n_train=0, **kw):
    k = FeatureKernel(np.asarray(F, dtype=np.float64))
    train = np.arange(n_train)
    pool = np.arange(n_train, k.n)
    return SelectionRequest(method, mode, k, train, pool, n_batch, **kw)


class TestTemplate:
    @pytest.mark.parametrize("method", ["random", "maxdiag", "maxdet", "bait-f",
                                        "bait-fb", "fw", "maxdist", "kmeanspp", "lcmd"])
    def test_full_pool_batch(self, method):
        """n_batch = n_pool returns the entire pool for every method."""
        rng = np.random.default_rng(0)
        F = rng.standard_normal((8, 3))
        res = select(feature_request(F, method, 8, sigma_sq=1e-3, rng_seed=1))
        assert sorted(res.indices.tolist()) == list(range(8))

    def test_indices_distinct_and_from_pool(self):
        rng = np.random.default_rng(1)
        F = rng.standard_normal((20, 4))
        for method in ("maxdet", "maxdist", "lcmd", "fw", "bait-f"):
            res = select(feature_request(F, method, 6, mode="tp", n_train=5, sigma_sq=1e-3))
            idx = res.indices.tolist()
            assert len(set(idx)) == 6
            assert all(5 <= i < 20 for i in idx)

    def test_random_deterministic_permutation_prefix(self):
        F = np.random.default_rng(2).standard_normal((10, 2))
        a = select(feature_request(F, "random", 4, rng_seed=7)).indices
        b = select(feature_request(F, "random", 4, rng_seed=7)).indices
        c = select(feature_request(F, "random", 6, rng_seed=7)).indices
        assert np.array_equal(a, b)
        assert np.array_equal(a, c[:4])  # prefix of the same permutation

    def test_degenerate_maxdist_random_fills(self):
        """All-equal points collapse every distance to zero; the second pick
        lands on the already-selected index and triggers the fallback."""
        res = select(feature_request(np.ones((6, 2)), "maxdist", 3, rng_seed=3))
        assert res.status == "random_filled"
        assert res.n_filled == 2
        assert len(set(res.indices.tolist())) == 3

    def test_fill_stream_independent_of_method_stream(self):
        """Random fills draw from their own stream: the first (method) pick
        is identical whether or not a fill happens later."""
        res_deg = select(feature_request(np.ones((6, 2)), "maxdist", 3, rng_seed=3))
        res_one = select(feature_request(np.ones((6, 2)), "maxdist", 1, rng_seed=3))
        assert res_deg.indices[0] == res_one.indices[0]

    def test_batch_too_large(self):
        with pytest.raises(ValueError):
            select(feature_request(np.ones((4, 2)), "random", 5))

    def test_feature_method_on_evaluator_kernel(self):
        cfg = ModelConfig(widths=(2, 4, 1), init_seed=0)
        k = base_nngp(cfg, GroundSet(np.random.default_rng(3).standard_normal((6, 2)), 0))
        req = SelectionRequest("bait-f", "p", k, EMPTY, np.arange(6), 2, sigma_sq=1e-3)
        with pytest.raises(UnsupportedKernelError):
            select(req)


class TestRandom:
    def test_single_point(self):
        res = select(feature_request(np.ones((1, 1)), "random", 1))
        assert res.indices.tolist() == [0]

    def test_uniform_frequencies(self):
        """First pick over many seeds is uniform (chi^2 at the 1% level)."""
        F = np.random.default_rng(4).standard_normal((5, 2))
        counts = np.zeros(5)
        n = 10**4
        for seed in range(10**4, 2 * 10**4):
            idx = select(feature_request(F, "random", 1, rng_seed=seed)).indices[0]
            counts[idx] += 1
        assert counts.sum() == n
        assert stats.chisquare(counts).pvalue > 0.01


class TestMaxDiag:
    def test_hand_sort(self):
        F = np.diag([math.sqrt(3), 1.0, math.sqrt(2)])
        res = select(feature_request(F, "maxdiag", 2))
        assert res.indices.tolist() == [0, 2]

    def test_all_equal_takes_lowest_indices(self):
        res = select(feature_request(np.ones((5, 1)), "maxdiag", 3))
        assert res.indices.tolist() == [0, 1, 2]

    def test_first_pick_matches_maxdet_and_maxdist(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            F = rng.standard_normal((12, 3))
            picks = {
                method: select(feature_request(F, method, 1, sigma_sq=1e-3)).indices[0]
                for method in ("maxdiag", "maxdet", "maxdist")
            }
            assert len(set(picks.values())) == 1


def _unique_gap_instance(rng, n, d, sigma_sq, n_batch, backend="kernel"):
    """Random instance whose greedy argmaxes are unique by a clear margin."""
    while True:
        F = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0, size=(n, 1))
        K = F @ F.T
        order = oracles.naive_greedy_maxdet(K, sigma_sq, n_batch)
        # verify score gaps along the naive greedy path
        ok = True
        sel = []
        for x in order:
            scores = oracles.naive_posterior_diag(K, sel, sigma_sq)
            scores[sel] = -np.inf
            top = np.sort(scores)[-2:]
            if top[1] - top[0] <= 1e-9:
                ok = False
                break
            sel.append(x)
        if ok:
            return F, order


class TestMaxDet:
    def test_hand_instance(self):
        K = np.array([[2.0, 1.9, 0.0], [1.9, 2.0, 0.0], [0.0, 0.0, 1.0]])
        F = np.linalg.cholesky(K)
        res = select(feature_request(F, "maxdet", 2, sigma_sq=0.0,
                                     maxdet_backend="kernel"))
        assert res.indices.tolist() == [0, 2]

    def test_triple_equivalence(self):
        """Kernel-space, feature-space, and the naive determinant oracle
        select identical batches on gap-checked random instances."""
        rng = np.random.default_rng(6)
        for _ in range(15):
            F, order = _unique_gap_instance(rng, 12, 4, 1e-3, 4)
            a = select(feature_request(F, "maxdet", 4, sigma_sq=1e-3,
                                       maxdet_backend="kernel")).indices.tolist()
            b = select(feature_request(F, "maxdet", 4, sigma_sq=1e-3,
                                       maxdet_backend="feature")).indices.tolist()
            assert a == b == order

    def test_residual_diagonal_tracks_naive_posterior(self):
        """c[x] for unselected x equals the naive posterior variance plus
        sigma^2 at every step (kernel backend)."""
        from bmal.selection import _KernelView, _MaxDetKernelState

        rng = np.random.default_rng(7)
        F = rng.standard_normal((10, 3))
        K = F @ F.T
        k = FeatureKernel(F)
        req = feature_request(F, "maxdet", 4, sigma_sq=1e-2)
        view = _KernelView(k, np.arange(10), 0)
        state = _MaxDetKernelState(view, req, None, 4)
        sel = []
        for step in range(4):
            naive = oracles.naive_posterior_diag(K, sel, 1e-2) + 1e-2
            unsel = [i for i in range(10) if i not in sel]
            np.testing.assert_allclose(state.c[unsel], naive[unsel], atol=1e-8)
            pos, _ = state.next(None)
            state.add(pos)
            sel.append(pos)

    def test_feature_backend_self_shrinkage(self):
        """After adding x, the feature-space residual at x shrinks to
        sigma^2 c / (c + sigma^2)."""
        from bmal.selection import _KernelView, _MaxDetFeatureState

        F = np.array([[2.0, 0.0], [0.5, 1.0], [0.0, 3.0]])
        req = feature_request(F, "maxdet", 2, sigma_sq=0.1)
        state = _MaxDetFeatureState(_KernelView(req.kernel, np.arange(3), 0), req, None)
        c_old = state.c[1]
        state.add(1)
        assert state.c[1] == pytest.approx(0.1 * c_old / (c_old + 0.1))

    def test_sigma_zero_feature_backend_rejected(self):
        F = np.random.default_rng(8).standard_normal((5, 2))
        with pytest.raises(ValueError):
            select(feature_request(F, "maxdet", 2, sigma_sq=0.0,
                                   maxdet_backend="feature"))

    def test_nonpositive_residual_raises(self):
        """A forced add of a duplicate train point with sigma^2 = 0 makes the
        residual diagonal vanish and the pivoted factorization refuses."""
        from bmal.selection import SelectionNumericalError

        F = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        with pytest.raises(SelectionNumericalError, match="sigma"):
            select(feature_request(F, "maxdet", 1, mode="tp", n_train=2,
                                   sigma_sq=0.0, maxdet_backend="kernel"))

    def test_feature_residual_tracks_naive_posterior(self):
        """Feature-backend c[x] equals the conditioned kernel diagonal at
        every step for unselected points."""
        from bmal.selection import _KernelView, _MaxDetFeatureState

        rng = np.random.default_rng(30)
        F = rng.standard_normal((9, 3))
        K = F @ F.T
        req = feature_request(F, "maxdet", 4, sigma_sq=1e-2)
        state = _MaxDetFeatureState(_KernelView(req.kernel, np.arange(9), 0), req, None)
        sel = []
        for _ in range(4):
            naive = oracles.naive_posterior_diag(K, sel, 1e-2)
            unsel = [i for i in range(9) if i not in sel]
            np.testing.assert_allclose(state.c[unsel], naive[unsel], atol=1e-8)
            pos, _ = state.next(np.zeros(9, dtype=bool))
            state.add(pos)
            sel.append(pos)

    def test_auto_backend_switch_preserves_batches(self):
        """auto picks the feature backend once n_sel > 3 d_feat; selections
        agree with the forced kernel backend either way."""
        rng = np.random.default_rng(31)
        F = rng.standard_normal((20, 2))
        res_auto = select(feature_request(F, "maxdet", 10, sigma_sq=1e-2))
        res_k = select(feature_request(F, "maxdet", 10, sigma_sq=1e-2,
                                       maxdet_backend="kernel"))
        res_f = select(feature_request(F, "maxdet", 10, sigma_sq=1e-2,
                                       maxdet_backend="feature"))
        assert res_auto.indices.tolist() == res_f.indices.tolist()
        assert res_k.indices.tolist() == res_f.indices.tolist()

    def test_evaluator_kernel_uses_kernel_backend(self):
        cfg = ModelConfig(widths=(2, 6, 1), sigma_w=1.2, init_seed=0)
        X = np.random.default_rng(9).standard_normal((8, 2))
        k = base_nngp(cfg, GroundSet(X, 0))
        req = SelectionRequest("maxdet", "p", k, EMPTY, np.arange(8), 3, sigma_sq=1e-3)
        res = select(req)
        K = k.gram(np.arange(8), np.arange(8))
        assert res.indices.tolist() == oracles.naive_greedy_maxdet(K, 1e-3, 3)


class TestDuality:
    @pytest.mark.parametrize("method", ["maxdet", "bait-f", "bait-fb"])
    def test_tp_equals_p_on_conditioned_kernel(self, method):
        """Method-TP on k selects the same batch as method-P on the kernel
        conditioned on the train set with the same sigma^2."""
        rng = np.random.default_rng(10)
        checked = 0
        while checked < 8:
            n, d, n_train = 14, 4, 4
            F = rng.standard_normal((n, d))
            k = FeatureKernel(F)
            train, pool = np.arange(n_train), np.arange(n_train, n)
            s2 = 1e-3
            res_tp = select(SelectionRequest(method, "tp", k, train, pool, 3, sigma_sq=s2))
            kp = transform_posterior(k, train, s2, path="feature")
            res_p = select(SelectionRequest(method, "p", kp, train, pool, 3, sigma_sq=s2))
            # skip near-tied instances; duality holds for unique argmaxes
            gaps = [abs(a - b) for a, b in zip(sorted(res_tp.scores), sorted(res_p.scores))]
            if any(g > 1e-9 for g in gaps):
                continue
            assert res_tp.indices.tolist() == res_p.indices.tolist()
            checked += 1


class TestBait:
    def test_pool_of_one(self):
        F = np.random.default_rng(11).standard_normal((4, 2))
        res = select(feature_request(F, "bait-f", 1, mode="tp", n_train=3, sigma_sq=1e-2))
        assert res.indices.tolist() == [3]

    def test_tie_break_lowest_index(self):
        F = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.2]])
        res = select(feature_request(F, "bait-f", 1, sigma_sq=1e-2))
        assert res.indices[0] == 0

    def test_acquisition_decrease_matches_naive(self):
        """The tracked score equals a(X) - a(X + {x}) recomputed densely."""
        rng = np.random.default_rng(12)
        F = rng.standard_normal((12, 4))
        res = select(feature_request(F, "bait-f", 5, mode="tp", n_train=3, sigma_sq=1e-2))
        tp = np.arange(12)
        sel = list(range(3))
        for idx, score in zip(res.indices, res.scores):
            before = oracles.naive_bait_objective(F, tp, sel, 1e-2)
            after = oracles.naive_bait_objective(F, tp, sel + [int(idx)], 1e-2)
            assert score == pytest.approx(before - after, rel=1e-8, abs=1e-10)
            sel.append(int(idx))

    def test_forward_backward_roundtrip_restores_state(self):
        """Add(x) followed by Remove(x) restores the posterior Gram."""
        from bmal.selection import _BaitState, _KernelView

        rng = np.random.default_rng(13)
        F = rng.standard_normal((8, 3))
        req = feature_request(F, "bait-fb", 2, sigma_sq=1e-2)
        view = _KernelView(req.kernel, np.arange(8), 0)
        state = _BaitState(view, req, None, F)
        state.add(0)
        phi_ref = state.phi.copy()
        state.add(3)
        state.remove(3)
        assert np.max(np.abs(state.phi @ state.phi.T - phi_ref @ phi_ref.T)) < 1e-8

    def test_n_extra_zero_equals_forward(self):
        rng = np.random.default_rng(14)
        F = rng.standard_normal((10, 3))
        a = select(feature_request(F, "bait-f", 4, sigma_sq=1e-2)).indices.tolist()
        b = select(feature_request(F, "bait-fb", 4, sigma_sq=1e-2, n_extra=0)).indices.tolist()
        assert a == b

    def test_backward_never_hurts_objective(self):
        """The forward-backward batch scores at least as well (on its own
        objective) as the forward-only batch of the same size."""
        rng = np.random.default_rng(15)
        for _ in range(5):
            F = rng.standard_normal((12, 3))
            tp = np.arange(12)
            fwd = select(feature_request(F, "bait-f", 4, sigma_sq=1e-2)).indices
            fb = select(feature_request(F, "bait-fb", 4, sigma_sq=1e-2)).indices
            a_fwd = oracles.naive_bait_objective(F, tp, fwd, 1e-2)
            a_fb = oracles.naive_bait_objective(F, tp, fb, 1e-2)
            assert a_fb <= a_fwd + 1e-12


class TestFrankWolfe:
    def test_pool_of_one(self):
        F = np.array([[1.0, 0.5]])
        res = select(feature_request(F, "fw", 1))
        assert res.indices.tolist() == [0]

    def test_cross_implementation(self):
        """Feature-space and kernel-space updates select identical batches."""
        rng = np.random.default_rng(16)
        for _ in range(10):
            F = rng.standard_normal((20, 5))
            a = select(feature_request(F, "fw", 6, fw_backend="feature")).indices.tolist()
            b = select(feature_request(F, "fw", 6, fw_backend="kernel")).indices.tolist()
            assert a == b

    def test_first_pick_prefers_heavier_cluster(self):
        """Two orthogonal clusters: the first pick comes from the one with
        more mass in the mean embedding."""
        F = np.vstack([np.tile([1.0, 0.0], (5, 1)), np.tile([0.0, 1.0], (2, 1))])
        res = select(feature_request(F, "fw", 1))
        assert res.indices[0] < 5

    def test_first_gamma_hand_value(self):
        """gamma for the first add is r c_x^{-1} u_x / r^2 in kernel space."""
        from bmal.selection import _FWKernelState, _KernelView

        rng = np.random.default_rng(17)
        F = rng.standard_normal((6, 3))
        req = feature_request(F, "fw", 2, fw_backend="kernel")
        view = _KernelView(req.kernel, np.arange(6), 0)
        state = _FWKernelState(view, req, None)
        K = F @ F.T
        c = np.sqrt(np.diag(K))
        r = c.sum()
        u = K.sum(axis=1)
        x = 2
        state.add(x)
        expect_v = (r / c[x] * u[x] / r**2) * r / c[x] * K[x]
        np.testing.assert_allclose(state.v, expect_v, rtol=1e-10)

    def test_zero_norm_rows_excluded(self):
        F = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        res = select(feature_request(F, "fw", 2))
        assert 0 not in res.indices.tolist()

    def test_kernel_backend_size_guard(self):
        F = np.zeros((4097, 1))
        with pytest.raises(ValueError):
            select(feature_request(F, "fw", 1, fw_backend="kernel"))

    def test_kernel_backend_pool_of_one(self):
        F = np.array([[2.0, 1.0]])
        res = select(feature_request(F, "fw", 1, fw_backend="kernel"))
        assert res.indices.tolist() == [0]

    def test_kernel_backend_works_on_evaluator_kernel(self):
        """The Gram-based update needs no feature map, so it accepts the
        infinite-width kernel."""
        cfg = ModelConfig(widths=(2, 6, 1), sigma_w=1.1, init_seed=0)
        X = np.random.default_rng(32).standard_normal((10, 2))
        k = base_nngp(cfg, GroundSet(X, 0))
        req = SelectionRequest("fw", "p", k, EMPTY, np.arange(10), 3,
                               fw_backend="kernel")
        res = select(req)
        assert len(res.indices) == 3 and res.status == "ok"


class TestMaxDist:
    def test_line_hand_instance(self):
        """Points {0, 1, 10}: seed pick is the largest diagonal (10), then 0,
        then 1."""
        F = np.array([[0.0], [1.0], [10.0]])
        res = select(feature_request(F, "maxdist", 3))
        assert res.indices.tolist() == [2, 0, 1]

    def test_self_distance_zero_after_add(self):
        from bmal.selection import _KernelView, _MaxDistState

        F = np.random.default_rng(18).standard_normal((6, 2))
        req = feature_request(F, "maxdist", 2)
        state = _MaxDistState(_KernelView(req.kernel, np.arange(6), 0), req, None)
        state.add(3)
        assert state.d[3] == 0.0

    def test_distance_vector_tracks_naive(self):
        rng = np.random.default_rng(19)
        F = rng.standard_normal((10, 3))
        D2 = oracles.kernel_distances(F @ F.T) ** 2
        res = select(feature_request(F, "maxdist", 5, mode="tp", n_train=2))
        from bmal.selection import _KernelView, _MaxDistState

        req = feature_request(F, "maxdist", 5, mode="tp", n_train=2)
        state = _MaxDistState(_KernelView(req.kernel, np.arange(10), 2), req, None)
        sel = [0, 1]
        state.add(0)
        state.add(1)
        for idx in res.indices:
            naive = D2[np.ix_(np.arange(2, 10), sel)].min(axis=1)
            np.testing.assert_allclose(state.d, naive, atol=1e-8)
            pos = int(idx)
            state.add(pos)
            sel.append(pos)

    def test_two_approximation(self):
        """Covering radius of the greedy batch is at most twice optimal."""
        rng = np.random.default_rng(20)
        for _ in range(25):
            n_pool = int(rng.integers(5, 12))
            n_batch = int(rng.integers(1, 4))
            F = rng.standard_normal((n_pool, 2))
            K = F @ F.T
            res = select(feature_request(F, "maxdist", n_batch))
            got = oracles.cover_radius(K, res.indices)
            best = oracles.brute_force_cover_radius(K, n_batch)
            assert got <= 2.0 * best + 1e-12

    def test_sketched_two_approximation(self):
        """When the sketch preserves distances within eps = 0.25, the batch
        from the sketched kernel covers within 2 (1+eps)/(1-eps) of optimal."""
        eps = 0.25
        rng = np.random.default_rng(21)
        checked = 0
        seed = 0
        while checked < 10:
            seed += 1
            F = rng.standard_normal((10, 8))
            k = FeatureKernel(F)
            ks = transform_rp(k, 64, seed=seed)
            K, Ks = F @ F.T, ks.gram(np.arange(10), np.arange(10))
            D, Ds = oracles.kernel_distances(K), oracles.kernel_distances(Ks)
            mask = ~np.eye(10, dtype=bool)
            ratio = Ds[mask] / D[mask]
            if ratio.min() < 1 - eps or ratio.max() > 1 + eps:
                continue  # distance-preservation event failed; skip instance
            res = select(SelectionRequest("maxdist", "p", ks, EMPTY, np.arange(10), 3))
            got = oracles.cover_radius(K, res.indices)
            best = oracles.brute_force_cover_radius(K, 3)
            assert got <= 2.0 * (1 + eps) / (1 - eps) * best + 1e-12
            checked += 1


class TestKMeansPP:
    def test_uniform_when_distances_equal(self):
        """Equidistant remaining points are sampled uniformly."""
        F = np.vstack([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        counts = np.zeros(5)
        for seed in range(4000):
            res = select(feature_request(F, "kmeanspp", 1, mode="tp", n_train=1,
                                         rng_seed=seed))
            counts[res.indices[0]] += 1
        assert stats.chisquare(counts[1:]).pvalue > 0.01

    def test_proportional_to_squared_distance(self):
        """Pick ratio for squared distances (1, 3) approaches 1:3."""
        F = np.array([[0.0], [1.0], [math.sqrt(3.0)]])  # d^2 to train point: 1, 3
        counts = np.zeros(3)
        n = 10**4
        for seed in range(n):
            res = select(feature_request(F, "kmeanspp", 1, mode="tp", n_train=1,
                                         rng_seed=seed))
            counts[res.indices[0]] += 1
        p1 = 1.0 / 4.0
        se = math.sqrt(n * p1 * (1 - p1))
        assert abs(counts[1] - n * p1) < 3 * se

    def test_tp_first_pick_distance_weighted(self):
        """With train points present the first pick is never the uniform
        branch: a pool duplicate of a train point is (almost) never chosen."""
        F = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 5.0]])
        hits = 0
        for seed in range(300):
            res = select(feature_request(F, "kmeanspp", 1, mode="tp", n_train=1,
                                         rng_seed=seed))
            hits += res.indices[0] == 2
        assert hits == 300

    def test_same_seed_same_sequence(self):
        F = np.random.default_rng(22).standard_normal((12, 3))
        a = select(feature_request(F, "kmeanspp", 5, rng_seed=9)).indices
        b = select(feature_request(F, "kmeanspp", 5, rng_seed=9)).indices
        assert np.array_equal(a, b)


class TestLCMD:
    def test_single_cluster_matches_maxdist(self):
        rng = np.random.default_rng(23)
        F = rng.standard_normal((10, 2))
        a = select(feature_request(F, "lcmd", 2)).indices.tolist()
        b = select(feature_request(F, "maxdist", 2)).indices.tolist()
        assert a[0] == b[0]
        # after one center both methods pick the farthest remaining point
        assert a[1] == b[1]

    def test_two_cluster_hand_instance(self):
        """Cluster sizes 5 * 0.1^2 = 0.05 vs 2 * 0.3^2 = 0.18: the sparse
        cluster wins and its farthest point is selected."""
        c1 = np.array([0.0, 0.0])
        c2 = np.array([10.0, 0.0])
        dense = [c1 + [0.1 * math.cos(t), 0.1 * math.sin(t)]
                 for t in np.linspace(0, 2, 5)]
        sparse = [c2 + [0.3, 0.0], c2 + [-0.3, 0.0]]
        F = np.vstack([c1, c2] + dense + sparse)
        res = select(feature_request(F, "lcmd", 1, mode="tp", n_train=2))
        assert res.indices[0] in (7, 8)

    def test_deterministic(self):
        F = np.random.default_rng(24).standard_normal((15, 3))
        a = select(feature_request(F, "lcmd", 6, rng_seed=1)).indices
        b = select(feature_request(F, "lcmd", 6, rng_seed=2)).indices
        assert np.array_equal(a, b)  # no randomness consumed

    def test_distance_vector_tracks_naive(self):
        rng = np.random.default_rng(25)
        F = rng.standard_normal((9, 2))
        D2 = oracles.kernel_distances(F @ F.T) ** 2
        from bmal.selection import _KernelView, _LCMDState

        req = feature_request(F, "lcmd", 4)
        state = _LCMDState(_KernelView(req.kernel, np.arange(9), 0), req, None)
        res = select(req)
        sel = []
        for idx in res.indices:
            if sel:
                naive = D2[:, sel].min(axis=1)
                np.testing.assert_allclose(state.d, naive, atol=1e-8)
                # centers point at the argmin selected point (first on ties)
                for j in range(9):
                    assert state.d[j] == pytest.approx(D2[j, state.centers[j]], abs=1e-8)
            state.add(int(idx))
            sel.append(int(idx))
