import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symlab.analytic import AnalyticLSB, trivial_representation
from symlab.groups import (
    CoverageError,
    GroupElement,
    LatentAction,
    PartitionError,
    RepresentationTable,
    WorldAction,
    affine_residual,
    bump_maps,
    count_permuted_worlds,
    cyclicity_residual,
    disentanglement_check,
    enumerate_permuted_worlds,
    equivariance_residual,
    equivariance_witness,
    group_elements,
    linear_collapse_probe,
    n_cycles,
    same_still_images,
    sweep_observations,
)
from symlab.world import Move, WorldSpec, grid_states, step


def loop_residual(n, perm_x, perm_y):
    """Equivariance residual of the analytic code under a permuted world, by plain loops."""
    code = lambda x, y: np.array(  # noqa: E731
        [math.cos(2 * math.pi * x / n), math.sin(2 * math.pi * x / n), math.cos(2 * math.pi * y / n), math.sin(2 * math.pi * y / n)]
    )
    inv_x = {v: k for k, v in enumerate(perm_x)}
    inv_y = {v: k for k, v in enumerate(perm_y)}
    worst = 0.0
    for x, y in itertools.product(range(n), repeat=2):
        z = complex(*code(x, y)[:2]), complex(*code(x, y)[2:])
        for a in Move:
            turn = complex(math.cos(2 * math.pi / n), a.delta * math.sin(2 * math.pi / n))
            zx, zy = (z[0] * turn, z[1]) if a.axis == 0 else (z[0], z[1] * turn)
            if a.axis == 0:
                tx, ty = (perm_x[x] if a.delta > 0 else inv_x[x]), y
            else:
                tx, ty = x, (perm_y[y] if a.delta > 0 else inv_y[y])
            target = code(tx, ty)
            err = math.dist((zx.real, zx.imag, zy.real, zy.imag), target)
            worst = max(worst, err)
    return worst


class TestGroupElement:
    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_axioms_by_enumeration(self, n):
        elems = group_elements(n)
        e = GroupElement.identity(n)
        for g in elems:
            assert g * e == g == e * g
            assert g * g.inverse() == e
        for g, h, k in itertools.product(elems[:12], repeat=3):
            assert (g * h) * k == g * (h * k)

    def test_generators(self):
        assert GroupElement.generator(10, Move.LEFT) == GroupElement(10, 9, 0)
        assert GroupElement.generator(10, Move.UP) == GroupElement(10, 0, 1)

    def test_rejects_mixed_groups(self):
        with pytest.raises(ValueError):
            GroupElement(3, 1, 0) * GroupElement(4, 1, 0)


class TestWorldAction:
    def test_canonical_matches_step(self, spec):
        world = WorldAction.canonical(spec.n)
        states = np.array(grid_states(spec.n))
        for a in Move:
            expected = np.array([step(spec, s, a) for s in grid_states(spec.n)])
            np.testing.assert_array_equal(world.move(a, states), expected)

    @pytest.mark.parametrize("n", [3, 4])
    def test_homomorphism_for_every_world(self, n):
        states = np.array(grid_states(n))
        worlds = [WorldAction.canonical(n)] + enumerate_permuted_worlds(n, 50)
        for world in worlds:
            np.testing.assert_array_equal(world.act(GroupElement.identity(n), states), states)
            for g, h in itertools.product(group_elements(n), repeat=2):
                np.testing.assert_array_equal(world.act(g * h, states), world.act(g, world.act(h, states)))

    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            WorldAction((0, 0, 1), (1, 2, 0))


class TestRepresentationTable:
    def test_missing_state(self):
        mapping = {tuple(s): [0.0] for s in grid_states(3)}
        del mapping[(2, 1)]
        with pytest.raises(CoverageError):
            RepresentationTable.from_mapping(3, mapping)

    def test_wrong_row_count(self):
        with pytest.raises(CoverageError):
            RepresentationTable(3, np.zeros((8, 2)))

    def test_non_finite(self):
        v = np.zeros((9, 2))
        v[4, 1] = np.nan
        with pytest.raises(ValueError):
            RepresentationTable(3, v)

    def test_lookup_order(self):
        table = RepresentationTable.from_mapping(4, {tuple(s): [s[0], s[1]] for s in grid_states(4)})
        np.testing.assert_array_equal(table[(3, 1)], [3, 1])


class TestEquivariance:
    @pytest.mark.parametrize("n", [2, 3, 10, 17])
    def test_analytic_is_exact(self, n):
        lsb = AnalyticLSB(n)
        assert equivariance_residual(lsb.table(), WorldAction.canonical(n), lsb.latent_action()) <= 1e-9

    def test_trivial_representation(self):
        assert equivariance_residual(trivial_representation(5, 3), WorldAction.canonical(5), LatentAction.identity()) == 0

    def test_permuted_three_cycle_breaks_analytic_code(self):
        world = WorldAction((2, 0, 1), (1, 2, 0))
        lsb = AnalyticLSB(3)
        residual = equivariance_residual(lsb.table(), world, lsb.latent_action())
        assert residual > 0.5
        assert residual == pytest.approx(loop_residual(3, (2, 0, 1), (1, 2, 0)), abs=1e-12)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_matches_loop_oracle(self, n):
        lsb = AnalyticLSB(n)
        for world in enumerate_permuted_worlds(n, 6):
            got = equivariance_residual(lsb.table(), world, lsb.latent_action())
            assert got == pytest.approx(loop_residual(n, world.perm_x, world.perm_y), abs=1e-12)

    def test_witness_attains_residual(self):
        lsb = AnalyticLSB(4)
        world = enumerate_permuted_worlds(4, 1)[0]
        residual, state, move = equivariance_witness(lsb.table(), world, lsb.latent_action())
        z = lsb.latent_action()(move, lsb.encode(state))[0]
        target = lsb.encode(tuple(world.move(move, [state])[0]))
        assert np.linalg.norm(z - target) == pytest.approx(residual)

    def test_table_world_mismatch(self):
        with pytest.raises(CoverageError):
            equivariance_residual(AnalyticLSB(4).table(), WorldAction.canonical(5), AnalyticLSB(4).latent_action())

    def test_missing_generator(self):
        lsb = AnalyticLSB(4)
        partial = LatentAction({a: f for a, f in lsb.latent_action().maps.items() if a != Move.DOWN})
        with pytest.raises(ValueError):
            equivariance_residual(lsb.table(), WorldAction.canonical(4), partial)


class TestDisentanglement:
    def test_analytic_block_split(self):
        lsb = AnalyticLSB(10)
        assert disentanglement_check(lsb.table(), lsb.latent_action(), [[0, 1], [2, 3]]) == [0.0, 0.0]

    def test_swapped_dims_violate(self):
        lsb = AnalyticLSB(10)
        perm = [2, 3, 0, 1]
        table = RepresentationTable(10, lsb.table().values[:, perm])
        base = lsb.latent_action()
        swapped = LatentAction({a: (lambda z, a=a: base(a, z[:, perm])[:, perm]) for a in Move})
        violations = disentanglement_check(table, swapped, [[0, 1], [2, 3]])
        assert min(violations) > 0.1

    def test_mixed_split_violates(self):
        lsb = AnalyticLSB(6)
        assert max(disentanglement_check(lsb.table(), lsb.latent_action(), [[0, 2], [1, 3]])) > 0.1

    @pytest.mark.parametrize("split", [[[0], [1], [2]], [[0, 1, 2]], [[2], [0, 1]], [[1, 2], [0]]])
    def test_trivial_passes_every_partition(self, split):
        assert disentanglement_check(trivial_representation(4, 3), LatentAction.identity(), split) == [0.0] * len(split)

    @pytest.mark.parametrize("split", [[[0], [1]], [[0, 1], [1, 2, 3]], [[0, 1], [2]], [[], [0, 1, 2, 3]]])
    def test_invalid_partition(self, split):
        lsb = AnalyticLSB(4)
        with pytest.raises(PartitionError):
            disentanglement_check(lsb.table(), lsb.latent_action(), split)


class TestPermutedWorlds:
    @pytest.mark.parametrize("n,factors,expected", [(3, 2, 11), (2, 1, 1), (4, 2, 47)])
    def test_count(self, n, factors, expected):
        assert count_permuted_worlds(n, factors) == expected

    def test_cycle_census(self):
        for n in range(2, 7):
            cycles = list(n_cycles(n))
            assert len(cycles) == len(set(cycles)) == math.factorial(n - 1)
            assert cycles[0] == tuple((i + 1) % n for i in range(n))

    def test_three_cycle_variant_first(self):
        first = enumerate_permuted_worlds(3, 1)[0]
        assert first.perm_x == (2, 0, 1) and first.perm_y == (1, 2, 0)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_worlds_are_distinct_cycles(self, n):
        worlds = enumerate_permuted_worlds(n, 200)
        attainable = (math.factorial(n - 1)) ** 2 - 1
        assert len(worlds) == min(200, attainable) == len(set(worlds))
        for w in worlds:
            assert not w.is_canonical() and w.is_single_cycle()
            for p in (np.array(w.perm_x), np.array(w.perm_y)):
                q = np.arange(n)
                for _ in range(n):
                    q = p[q]
                np.testing.assert_array_equal(q, np.arange(n))

    def test_same_training_images(self):
        spec = WorldSpec(3, 32, 4.0)
        canonical = WorldAction.canonical(3)
        for w in enumerate_permuted_worlds(3, 3):
            assert same_still_images(canonical, w, spec)
            assert sweep_observations(canonical, spec) != sweep_observations(w, spec) or w.perm_x == canonical.perm_x

    def test_every_permuted_world_breaks_equivariance(self):
        lsb = AnalyticLSB(4)
        for w in enumerate_permuted_worlds(4, 40):
            assert equivariance_residual(lsb.table(), w, lsb.latent_action()) > 0


class TestLinearCollapseProbe:
    def test_identity_escape(self, rng):
        f = rng.normal(size=7)
        assert cyclicity_residual(1.0, 0.0, f) == 0.0
        assert affine_residual(1.0, 0.0, np.ones(7)) == 0.0

    @given(st.floats(-0.99, 0.99))
    def test_constant_escape(self, a):
        # f = c with a*c + b = c gives a fixed point
        c = 0.7
        assert affine_residual(a, c * (1 - a), np.full(5, c)) == pytest.approx(0.0, abs=1e-12)
        assert cyclicity_residual(a, c * (1 - a), np.full(5, c)) == pytest.approx(0.0, abs=1e-9)

    def test_bump_minimum_is_one_half(self):
        # f = e_0 on Z_4: residuals |a+b|, |b|, |b|, |b-1|, minimised at b=1/2, a=-1/2
        assert affine_residual(-0.5, 0.5, bump_maps(4)[0]) == pytest.approx(0.5)
        report = linear_collapse_probe(4)
        assert report.best_nonconstant_residual == pytest.approx(0.5)
        assert report.identity_forced and not report.counterexamples

    def test_against_exhaustive_loop(self):
        grid = np.round(np.arange(-2, 2.0001, 0.05), 10)
        f = [1.0, 0.0, 0.0, 0.0]
        best = min(
            max(abs(a * f[x] + b - f[(x + 1) % 4]) for x in range(4))
            for a in grid
            for b in grid
            if not (abs(a - 1) < 1e-6 and abs(b) < 1e-6)
        )
        assert linear_collapse_probe(4).best_nonconstant_residual == pytest.approx(best, abs=1e-12)

    def test_configuration_count(self):
        report = linear_collapse_probe(4, resolution=0.05)
        assert report.configurations == 4 * (81 * 81 - 1)

    def test_random_maps_do_not_escape(self):
        report = linear_collapse_probe(5, trials=20, resolution=0.1, seed=3)
        assert report.best_nonconstant_residual > 0.1

    def test_alternating_map_is_an_exact_nonconstant_solution(self):
        # a = -1 maps an alternating (non-injective) code onto itself for even N
        f = np.array([1.0, -1.0, 1.0, -1.0])
        assert affine_residual(-1.0, 0.0, f) == 0.0
        assert cyclicity_residual(-1.0, 0.0, f) == 0.0

    def test_preconditions(self):
        with pytest.raises(ValueError):
            linear_collapse_probe(1)
        with pytest.raises(ValueError):
            linear_collapse_probe(4, trials=-1)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.lists(st.floats(-2, 2), min_size=2, max_size=9))
    def test_one_step_zero_implies_cyclic_zero(self, a, b, f):
        # exact one-step equivariance implies the composed 2N-step constraint
        f = np.array(f)
        g = np.empty_like(f)
        g[0] = f[0]
        for i in range(1, len(f)):
            g[i] = a * g[i - 1] + b
        if affine_residual(a, b, g) < 1e-12:
            assert cyclicity_residual(a, b, g) < 1e-6 * max(1.0, abs(a) ** (2 * len(g)))
