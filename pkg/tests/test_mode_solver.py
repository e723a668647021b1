import numpy as np
import pytest

from rbmtomo import (AnnealConfig, CapacityError, ConfigError, DimensionError,
                     energy,
                     Rbm, all_bitstrings, best_candidate_mode, bits_to_index,
                     exact_table, find_mode, marginal_mode, solve_anneal,
                     solve_exact, to_qubo)
from rbmtomo.samplers import rng_for_stream

from conftest import random_rbm


def naive_joint_mode(rbm):
    """Minimum-energy (v, h) by enumerating all 2^(n+m) pairs.

    The flat scan is v-major then h-minor with MSB-first indexing, so the
    first minimizer is the lexicographically smallest concatenated pair.
    """
    vs = all_bitstrings(rbm.n_visible).astype(np.float64)
    hs = all_bitstrings(rbm.n_hidden).astype(np.float64)
    V = np.repeat(vs, hs.shape[0], axis=0)
    H = np.tile(hs, (vs.shape[0], 1))
    e = energy(rbm, V, H)
    k = int(np.argmin(e))
    return V[k], H[k], float(e[k])


class TestToQubo:
    def test_objective_equals_energy(self, rng):
        rbm = random_rbm(5, 4, rng, scale=1.3)
        q = to_qubo(rbm)
        v = (rng.random((40, 5)) < 0.5).astype(np.float64)
        h = (rng.random((40, 4)) < 0.5).astype(np.float64)
        assert np.allclose(q.objective(v, h), energy(rbm, v, h), atol=1e-12)

    def test_bipartite_structure(self, rng):
        rbm = random_rbm(3, 2, rng)
        q = to_qubo(rbm)
        assert q.n_visible == 3 and q.n_hidden == 2
        assert np.allclose(q.coupling_matrix(), -rbm.W)
        assert np.allclose(q.linear, np.concatenate([-rbm.a, -rbm.b]))


class TestSolveExact:
    def test_matches_naive_enumeration(self, rng):
        for _ in range(10):
            rbm = random_rbm(4, 3, rng, scale=1.5)
            res = solve_exact(to_qubo(rbm))
            v, h, e = naive_joint_mode(rbm)
            assert res.energy == pytest.approx(e, abs=1e-12)
            assert np.array_equal(res.v_star, v)
            assert np.array_equal(res.h_star, h)
            assert res.method == "exact"

    def test_zero_model_ties_to_all_zeros(self):
        rbm = Rbm(np.zeros(4), np.zeros(3), np.zeros((4, 3)))
        res = solve_exact(to_qubo(rbm))
        assert np.all(res.v_star == 0)
        assert np.all(res.h_star == 0)
        assert res.energy == 0.0

    def test_hidden_field_tie_stays_zero(self):
        # a forces v = (1, 1); both hidden fields are then exactly zero
        rbm = Rbm(np.array([2.0, 2.0]), np.array([1.0, -1.0]),
                  np.array([[-1.0, 0.5], [0.0, 0.5]]))
        res = solve_exact(to_qubo(rbm))
        assert np.all(res.v_star == 1)
        assert np.all(res.h_star == 0)

    def test_capacity_guard(self):
        rbm = Rbm(np.zeros(25), np.zeros(2), np.zeros((25, 2)))
        with pytest.raises(CapacityError):
            solve_exact(to_qubo(rbm))


class TestSolveAnneal:
    def test_matches_exact_on_small_instances(self, rng):
        hits = 0
        for i in range(20):
            rbm = random_rbm(6, 4, rng, scale=1.0)
            q = to_qubo(rbm)
            exact = solve_exact(q)
            res = solve_anneal(q, AnnealConfig(), rng_for_stream(11, i))
            assert res.energy >= exact.energy - 1e-12
            assert res.method == "annealed"
            if abs(res.energy - exact.energy) <= 1e-9:
                hits += 1
        assert hits >= 18

    def test_candidates_bound_the_result(self, rng):
        rbm = random_rbm(8, 5, rng, scale=1.0)
        q = to_qubo(rbm)
        cand = (rng.random((5, 8)) < 0.5).astype(np.float64)
        res = solve_anneal(q, AnnealConfig(sweeps=1, restarts=1),
                           rng_for_stream(12, 0), candidates=cand)
        fields = q.linear[8:] + cand @ q.coupling_matrix()
        cand_e = (q.objective(cand, (fields < 0).astype(np.float64)))
        assert res.energy <= cand_e.min() + 1e-12

    def test_deterministic_given_rng(self, rng):
        rbm = random_rbm(6, 3, rng)
        q = to_qubo(rbm)
        r1 = solve_anneal(q, AnnealConfig(), rng_for_stream(13, 0))
        r2 = solve_anneal(q, AnnealConfig(), rng_for_stream(13, 0))
        assert r1.energy == r2.energy
        assert np.array_equal(r1.v_star, r2.v_star)


class TestMarginalMode:
    def test_matches_table_argmax(self, rng):
        for _ in range(10):
            rbm = random_rbm(5, 4, rng, scale=1.2)
            res = marginal_mode(rbm)
            table = exact_table(rbm)
            k = int(np.argmax(table.probs))
            assert int(bits_to_index(res.v_star.astype(np.uint8))) == k
            assert res.method == "marginal"

    def test_h_star_is_field_sign(self, rng):
        rbm = random_rbm(4, 6, rng)
        res = marginal_mode(rbm)
        fields = rbm.b + res.v_star @ rbm.W
        assert np.array_equal(res.h_star, (fields > 0).astype(np.float64))
        assert res.energy == pytest.approx(float(energy(rbm, res.v_star,
                                                 res.h_star)))

    def test_diverges_from_joint_on_diffuse_fields(self):
        # v=1 wins the joint ranking (energy -1 beats 0) but loses the
        # marginal one: log-ptilde(0) = 2 log 2 > 1 + 2 softplus(-3)
        rbm = Rbm(np.array([1.0]), np.zeros(2), np.array([[-3.0, -3.0]]))
        joint = solve_exact(to_qubo(rbm))
        marg = marginal_mode(rbm)
        assert joint.v_star[0] == 1.0
        assert marg.v_star[0] == 0.0

    def test_capacity_guard(self):
        rbm = Rbm(np.zeros(21), np.zeros(2), np.zeros((21, 2)))
        with pytest.raises(CapacityError):
            marginal_mode(rbm)
        assert marginal_mode(rbm, exact_cap=21).v_star.shape == (21,)


class TestBestCandidateMode:
    def test_picks_most_probable_candidate(self, rng):
        rbm = random_rbm(6, 4, rng, scale=1.1)
        cand = (rng.random((12, 6)) < 0.5).astype(np.float64)
        res = best_candidate_mode(rbm, cand)
        table = exact_table(rbm)
        idx = bits_to_index(cand.astype(np.uint8))
        best = idx[int(np.argmax(table.log_unnormalized[idx]))]
        assert int(bits_to_index(res.v_star.astype(np.uint8))) == best
        assert res.method == "candidates"

    def test_tie_breaks_lexicographically(self):
        rbm = Rbm(np.zeros(2), np.zeros(2), np.zeros((2, 2)))
        res = best_candidate_mode(rbm, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.array_equal(res.v_star, [0.0, 1.0])

    def test_single_candidate(self, rng):
        rbm = random_rbm(3, 2, rng)
        res = best_candidate_mode(rbm, np.array([1.0, 0.0, 1.0]))
        assert np.array_equal(res.v_star, [1.0, 0.0, 1.0])

    def test_shape_and_empty_errors(self, rng):
        rbm = random_rbm(3, 2, rng)
        with pytest.raises(DimensionError):
            best_candidate_mode(rbm, np.zeros((2, 5)))
        with pytest.raises(ConfigError):
            best_candidate_mode(rbm, np.zeros((0, 3)))


class TestFindMode:
    def test_routes_to_exact_below_cap(self, rng):
        rbm = random_rbm(5, 3, rng)
        res = find_mode(rbm)
        assert res.method == "exact"
        assert res.energy == pytest.approx(naive_joint_mode(rbm)[2])

    def test_routes_to_anneal_above_cap(self, rng):
        rbm = random_rbm(21, 3, rng, scale=0.2)
        res = find_mode(rbm, rng=rng_for_stream(14, 0))
        assert res.method == "annealed"
        assert res.v_star.shape == (21,)

    def test_anneal_route_requires_rng(self, rng):
        rbm = random_rbm(21, 3, rng, scale=0.2)
        with pytest.raises(ConfigError):
            find_mode(rbm)
