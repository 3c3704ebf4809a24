"""Domain types: multi-indices, registries, mixtures, normalization."""

import math

import numpy as np
import pytest

from mvhmm.core import (
    BaseMeasure,
    DirichletMixtureLaw,
    GammaMixtureLaw,
    MultiIndex,
    ObservationTimeline,
    TypeRegistry,
    merge_registries,
    normalize,
)
from mvhmm.errors import AllWeightsZero, DomainError


@pytest.fixture
def registry():
    return TypeRegistry(("a", "b", "c"))


class TestMultiIndex:
    def test_total_cached(self):
        m = MultiIndex((2, 0, 3))
        assert m.total == 5
        assert len(m) == 3

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            MultiIndex((1, -1))

    def test_partial_order(self):
        assert MultiIndex((1, 0)) <= MultiIndex((2, 0))
        assert not MultiIndex((1, 2)) <= MultiIndex((2, 1))

    def test_lattice_below(self):
        points = list(MultiIndex((1, 2)).lattice_below())
        assert len(points) == 6
        assert MultiIndex((0, 0)) in points and MultiIndex((1, 2)) in points

    def test_hashable_and_immutable(self):
        m = MultiIndex((1, 1))
        assert hash(m) == hash(MultiIndex((1, 1)))
        with pytest.raises(AttributeError):
            m.counts = (0, 0)


class TestRegistry:
    def test_distinct(self):
        with pytest.raises(DomainError):
            TypeRegistry(("a", "a"))

    def test_merge_basic(self):
        a = TypeRegistry(("x", "y"))
        b = TypeRegistry(("y", "z"))
        merged, map_a, map_b = merge_registries(a, b)
        assert merged.labels == ("x", "y", "z")
        assert map_a == (0, 1)
        assert map_b == (1, 2)

    def test_merge_empty_left(self):
        a = TypeRegistry(())
        b = TypeRegistry(("x",))
        merged, map_a, map_b = merge_registries(a, b)
        assert merged.labels == ("x",)
        assert map_a == () and map_b == (0,)

    def test_merge_idempotent(self):
        a = TypeRegistry(("a", "b", "c"))
        merged, map_a, map_b = merge_registries(a, a)
        assert merged.labels == a.labels
        assert map_a == map_b == (0, 1, 2)

    def test_merge_associative_up_to_order(self):
        a, b, c = (
            TypeRegistry(("p", "q")),
            TypeRegistry(("q", "r")),
            TypeRegistry(("r", "s")),
        )
        left = merge_registries(merge_registries(a, b)[0], c)[0]
        right = merge_registries(a, merge_registries(b, c)[0])[0]
        assert set(left.labels) == set(right.labels)

    def test_reindexed_counts(self):
        a = TypeRegistry(("x", "y"))
        b = TypeRegistry(("y", "z"))
        merged, _, map_b = merge_registries(a, b)
        m = MultiIndex((3, 1)).reindexed(map_b, merged.k)
        assert m == MultiIndex((0, 3, 1))


class TestBaseMeasure:
    def test_nonatomic(self):
        base = BaseMeasure(1.5)
        assert base.kind == "nonatomic"
        assert base.unseen_mass == 1.0

    def test_discrete_validation(self):
        with pytest.raises(DomainError):
            BaseMeasure(1.0, {"a": 0.7, "b": 0.5})
        with pytest.raises(DomainError):
            BaseMeasure(0.0, {"a": 1.0})

    def test_alpha_vector_missing_label(self, registry):
        base = BaseMeasure(2.0, {"a": 0.5, "b": 0.25})
        with pytest.raises(DomainError):
            base.alpha_vector(registry)

    def test_alpha_vector(self):
        base = BaseMeasure(2.0, {"a": 0.5, "b": 0.25})
        reg = TypeRegistry(("a", "b"))
        assert base.alpha_vector(reg) == (1.0, 0.5)
        assert base.unseen_mass == pytest.approx(0.25)


class TestTimeline:
    def test_strictly_increasing(self, registry):
        with pytest.raises(DomainError):
            ObservationTimeline(
                (0.0, 0.0),
                registry,
                (MultiIndex((0, 0, 0)), MultiIndex((0, 0, 0))),
            )

    def test_mode_and_totals(self, registry):
        draws = ((MultiIndex((1, 0, 0)), MultiIndex((0, 2, 0))),)
        tl = ObservationTimeline((0.0,), registry, dw_draws=draws)
        assert tl.mode == "dw"
        assert tl.cardinality_at(0) == 2
        assert tl.counts_at(0) == MultiIndex((1, 2, 0))


class TestNormalize:
    def test_single_component(self, registry):
        base = BaseMeasure(1.0)
        law = DirichletMixtureLaw(
            ((-3.2, MultiIndex((0, 0, 0))),), base, registry
        )
        out = normalize(law)
        assert out.components[0][0] == pytest.approx(0.0, abs=1e-14)

    def test_two_equal(self, registry):
        base = BaseMeasure(1.0)
        law = DirichletMixtureLaw(
            ((-5.0, MultiIndex((0, 0, 0))), (-5.0, MultiIndex((1, 0, 0)))),
            base,
            registry,
        )
        out = normalize(law)
        for lw, _ in out.components:
            assert math.exp(lw) == pytest.approx(0.5, abs=1e-14)

    def test_shifted_weights(self, registry):
        # weights (0.2, 0.3, 0.5) e^{-7}, recovered by log-sum-exp
        base = BaseMeasure(1.0)
        comps = tuple(
            (math.log(w) - 7.0, MultiIndex((j, 0, 0)))
            for j, w in enumerate((0.2, 0.3, 0.5))
        )
        out = normalize(DirichletMixtureLaw(comps, base, registry))
        weights = sorted(out.weights().values())
        assert np.allclose(weights, [0.2, 0.3, 0.5], atol=1e-14)

    def test_all_zero(self, registry):
        base = BaseMeasure(1.0)
        law = DirichletMixtureLaw(
            ((-math.inf, MultiIndex((0, 0, 0))),), base, registry
        )
        with pytest.raises(AllWeightsZero):
            normalize(law)

    def test_canonical_order_and_merge(self, registry):
        base = BaseMeasure(1.0)
        comps = [
            (math.log(0.25), MultiIndex((1, 0, 0))),
            (math.log(0.5), MultiIndex((0, 0, 0))),
            (math.log(0.25), MultiIndex((1, 0, 0))),
        ]
        law = DirichletMixtureLaw.from_components(comps, base, registry)
        assert [idx.counts for _, idx in law.components] == [
            (0, 0, 0),
            (1, 0, 0),
        ]
        assert law.weights()[MultiIndex((1, 0, 0))] == pytest.approx(0.5, abs=1e-14)
        assert law.weight_sum() == pytest.approx(1.0, abs=1e-12)


class TestGammaLaw:
    def test_shared_offset(self, registry):
        base = BaseMeasure(1.0)
        law = GammaMixtureLaw(
            ((0.0, MultiIndex((0, 0, 0))),), base, registry, beta=1.0, rate_offset=2.0
        )
        assert law.effective_cardinality == 2.0

    def test_negative_offset_rejected(self, registry):
        base = BaseMeasure(1.0)
        with pytest.raises(DomainError):
            GammaMixtureLaw(
                ((0.0, MultiIndex((0, 0, 0))),),
                base,
                registry,
                beta=1.0,
                rate_offset=-0.1,
            )

    def test_pruning(self, registry):
        base = BaseMeasure(1.0)
        comps = [
            (math.log(1 - 1e-13), MultiIndex((0, 0, 0))),
            (math.log(1e-13), MultiIndex((1, 0, 0))),
        ]
        law = GammaMixtureLaw.from_components(comps, base, registry, beta=1.0)
        pruned = law.pruned(1e-12)
        assert len(pruned) == 1
        assert pruned.weight_sum() == pytest.approx(1.0, abs=1e-14)
