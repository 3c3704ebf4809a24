"""Domain types shared by both engines.

All types are immutable value objects after construction; they can be shared
freely between threads.  Mixture weights live in log domain throughout, and
components with identical multi-indices are merged (log-sum-exp) when a
mixture is built.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import AllWeightsZero, DomainError

__all__ = [
    "MultiIndex",
    "TypeRegistry",
    "BaseMeasure",
    "ObservationTimeline",
    "DirichletMixtureLaw",
    "GammaMixtureLaw",
    "merge_registries",
    "NORMALIZATION_TOL",
]

NORMALIZATION_TOL = 1e-10


class MultiIndex:
    """Nonnegative integer counts over the K registered types.

    Ordered componentwise: ``m <= n`` iff ``m[j] <= n[j]`` for every j.
    """

    __slots__ = ("counts", "total")

    def __init__(self, counts: Iterable[int]):
        counts = tuple(int(v) for v in counts)
        for v in counts:
            if v < 0:
                raise DomainError(f"negative multiplicity {v}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", sum(counts))

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("MultiIndex is immutable")

    @staticmethod
    def zeros(k: int) -> "MultiIndex":
        return MultiIndex((0,) * k)

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, j: int) -> int:
        return self.counts[j]

    def __iter__(self) -> Iterator[int]:
        return iter(self.counts)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        if len(other) != len(self):
            raise DomainError("length mismatch in multi-index addition")
        return MultiIndex(a + b for a, b in zip(self.counts, other.counts))

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        if len(other) != len(self):
            raise DomainError("length mismatch in multi-index subtraction")
        return MultiIndex(a - b for a, b in zip(self.counts, other.counts))

    def __le__(self, other: "MultiIndex") -> bool:
        return len(self) == len(other) and all(
            a <= b for a, b in zip(self.counts, other.counts)
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndex) and self.counts == other.counts

    def __hash__(self) -> int:
        return hash(self.counts)

    def __repr__(self) -> str:
        return f"MultiIndex{self.counts}"

    def is_zero(self) -> bool:
        return self.total == 0

    def lattice_below(self) -> Iterator["MultiIndex"]:
        """All multi-indices k with 0 <= k <= self, in lexicographic order."""
        for combo in itertools.product(*(range(v + 1) for v in self.counts)):
            yield MultiIndex(combo)

    def reindexed(self, positions: Sequence[int], new_k: int) -> "MultiIndex":
        """Embed into a larger registry; ``positions[j]`` is the new slot of j."""
        out = [0] * new_k
        for j, v in enumerate(self.counts):
            out[positions[j]] = v
        return MultiIndex(out)


@dataclass(frozen=True)
class TypeRegistry:
    """Ordered collection of the distinct observation labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DomainError("registry labels must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown label {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self.labels


def merge_registries(
    a: TypeRegistry, b: TypeRegistry
) -> tuple[TypeRegistry, tuple[int, ...], tuple[int, ...]]:
    """Union of two registries with a stable order (a first, then new labels).

    Returns the merged registry and the injective position maps for a and b.
    """
    labels = list(a.labels)
    for lab in b.labels:
        if lab not in labels:
            labels.append(lab)
    merged = TypeRegistry(tuple(labels))
    map_a = tuple(range(a.k))
    map_b = tuple(labels.index(lab) for lab in b.labels)
    return merged, map_a, map_b


@dataclass(frozen=True)
class BaseMeasure:
    """Mutation offspring distribution: total mass theta plus its atoms.

    ``atom_probs`` of ``None`` declares a nonatomic distribution.  A discrete
    distribution is specified only through its mass at observed labels; any
    remaining mass (``unseen_mass``) sits on atoms that never entered the
    dataset and cancels from every weight ratio.
    """

    theta: float
    atom_probs: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.theta <= 0.0:
            raise DomainError(f"theta must be positive, got {self.theta}")
        if self.atom_probs is not None:
            total = 0.0
            for lab, p in self.atom_probs.items():
                if not 0.0 < p <= 1.0:
                    raise DomainError(f"atom probability {p} for {lab!r} not in (0,1]")
                total += p
            if total > 1.0 + 1e-12:
                raise DomainError(f"atom probabilities sum to {total} > 1")
            object.__setattr__(self, "atom_probs", dict(self.atom_probs))

    @property
    def kind(self) -> str:
        return "nonatomic" if self.atom_probs is None else "discrete"

    @property
    def is_nonatomic(self) -> bool:
        return self.atom_probs is None

    @property
    def unseen_mass(self) -> float:
        """P0 mass off the specified atoms (1 for a nonatomic measure)."""
        if self.atom_probs is None:
            return 1.0
        return max(0.0, 1.0 - sum(self.atom_probs.values()))

    def alpha_vector(self, registry: TypeRegistry) -> tuple[float, ...]:
        """Parameter mass theta*P0 at each registered label (0 if nonatomic)."""
        if self.atom_probs is None:
            return (0.0,) * registry.k
        out = []
        for lab in registry.labels:
            p = self.atom_probs.get(lab)
            if p is None:
                raise DomainError(
                    f"discrete base measure has no mass at observed label {lab!r}"
                )
            out.append(self.theta * p)
        return tuple(out)


@dataclass(frozen=True)
class ObservationTimeline:
    """Collection times plus per-time observations over one registry.

    Exactly one of ``fv_counts`` (multiplicity vector per time) and
    ``dw_draws`` (sequence of per-draw multiplicity vectors per time, whose
    length is the cardinality c_i) must be provided.
    """

    times: tuple[float, ...]
    registry: TypeRegistry
    fv_counts: tuple[MultiIndex, ...] | None = None
    dw_draws: tuple[tuple[MultiIndex, ...], ...] | None = None

    def __post_init__(self):
        if len(self.times) == 0:
            raise DomainError("at least one collection time required")
        for a, b in zip(self.times, self.times[1:]):
            if not a < b:
                raise DomainError(f"times must be strictly increasing ({a} !< {b})")
        if (self.fv_counts is None) == (self.dw_draws is None):
            raise DomainError("exactly one of fv_counts / dw_draws must be given")
        if self.fv_counts is not None:
            if len(self.fv_counts) != len(self.times):
                raise DomainError("one multiplicity vector per time required")
            for n in self.fv_counts:
                if len(n) != self.registry.k:
                    raise DomainError("multiplicity vector length != registry size")
        else:
            assert self.dw_draws is not None
            if len(self.dw_draws) != len(self.times):
                raise DomainError("one draw collection per time required")
            for draws in self.dw_draws:
                for d in draws:
                    if len(d) != self.registry.k:
                        raise DomainError("draw vector length != registry size")

    @property
    def mode(self) -> str:
        return "fv" if self.fv_counts is not None else "dw"

    @property
    def n_times(self) -> int:
        return len(self.times)

    def counts_at(self, i: int) -> MultiIndex:
        """Total multiplicities observed at time index i."""
        if self.fv_counts is not None:
            return self.fv_counts[i]
        assert self.dw_draws is not None
        total = MultiIndex.zeros(self.registry.k)
        for d in self.dw_draws[i]:
            total = total + d
        return total

    def cardinality_at(self, i: int) -> int:
        """Number of point-process draws collected at time index i (0 for fv)."""
        if self.dw_draws is None:
            return 0
        return len(self.dw_draws[i])


def _merge_components(
    components: Iterable[tuple[float, MultiIndex]],
) -> list[tuple[float, MultiIndex]]:
    by_index: dict[MultiIndex, float] = {}
    for lw, idx in components:
        if lw == -math.inf:
            continue
        prev = by_index.get(idx)
        by_index[idx] = lw if prev is None else float(np.logaddexp(prev, lw))
    out = [(lw, idx) for idx, lw in by_index.items()]
    out.sort(key=lambda pair: pair[1].counts)
    return out


def _normalize_components(
    components: Sequence[tuple[float, MultiIndex]],
) -> list[tuple[float, MultiIndex]]:
    if not components:
        raise AllWeightsZero("mixture has no component with positive weight")
    logs = np.array([lw for lw, _ in components])
    shift = float(logsumexp_1d(logs))
    return [(lw - shift, idx) for lw, idx in components]


def logsumexp_1d(logs: np.ndarray) -> float:
    m = np.max(logs)
    if m == -np.inf:
        return -math.inf
    return float(m + np.log(np.sum(np.exp(logs - m))))


class _MixtureBase:
    """Shared behaviour of the two mixture-law types."""

    components: tuple[tuple[float, MultiIndex], ...]

    def log_weights(self) -> dict[MultiIndex, float]:
        return {idx: lw for lw, idx in self.components}

    def weights(self) -> dict[MultiIndex, float]:
        return {idx: math.exp(lw) for lw, idx in self.components}

    def weight_sum(self) -> float:
        return float(sum(math.exp(lw) for lw, _ in self.components))

    def max_weight_index(self) -> MultiIndex:
        lw, idx = max(self.components, key=lambda pair: pair[0])
        return idx

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True, eq=False)
class DirichletMixtureLaw(_MixtureBase):
    """Finite mixture of Dirichlet random-measure laws.

    Component (log w, m) stands for weight w on the law whose parameter
    measure is the base measure plus the atoms recorded in m at the
    registered labels.
    """

    components: tuple[tuple[float, MultiIndex], ...]
    base: BaseMeasure
    registry: TypeRegistry

    def __post_init__(self):
        for _, idx in self.components:
            if len(idx) != self.registry.k:
                raise DomainError("component index length != registry size")

    @staticmethod
    def from_components(
        components: Iterable[tuple[float, MultiIndex]],
        base: BaseMeasure,
        registry: TypeRegistry,
        normalize: bool = True,
    ) -> "DirichletMixtureLaw":
        merged = _merge_components(components)
        if normalize:
            merged = _normalize_components(merged)
        return DirichletMixtureLaw(tuple(merged), base, registry)

    @staticmethod
    def prior(base: BaseMeasure, registry: TypeRegistry) -> "DirichletMixtureLaw":
        return DirichletMixtureLaw(
            ((0.0, MultiIndex.zeros(registry.k)),), base, registry
        )

    def normalized(self) -> "DirichletMixtureLaw":
        return DirichletMixtureLaw(
            tuple(_normalize_components(self.components)), self.base, self.registry
        )

    def pruned(self, epsilon: float) -> "DirichletMixtureLaw":
        """Drop components with normalized weight < epsilon, then renormalize."""
        if epsilon <= 0.0:
            return self
        kept = [(lw, idx) for lw, idx in self.components if math.exp(lw) >= epsilon]
        return DirichletMixtureLaw.from_components(kept, self.base, self.registry)


@dataclass(frozen=True, eq=False)
class GammaMixtureLaw(_MixtureBase):
    """Finite mixture of gamma random-measure laws with a common rate offset.

    Every component shares the rate beta + rate_offset; the offset is the
    single constant accumulated by updates (plus cardinality) and propagation
    (through the deterministic cardinality flow).
    """

    components: tuple[tuple[float, MultiIndex], ...]
    base: BaseMeasure
    registry: TypeRegistry
    beta: float
    rate_offset: float = 0.0

    def __post_init__(self):
        if self.beta <= 0.0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if self.rate_offset < 0.0:
            raise DomainError(f"rate offset must be nonnegative, got {self.rate_offset}")
        for _, idx in self.components:
            if len(idx) != self.registry.k:
                raise DomainError("component index length != registry size")

    @property
    def effective_cardinality(self) -> float:
        """Accumulated rate offset; at a smoothing query this equals the
        propagated past cardinality plus the present one plus the propagated
        future cardinality."""
        return self.rate_offset

    @staticmethod
    def from_components(
        components: Iterable[tuple[float, MultiIndex]],
        base: BaseMeasure,
        registry: TypeRegistry,
        beta: float,
        rate_offset: float = 0.0,
        normalize: bool = True,
    ) -> "GammaMixtureLaw":
        merged = _merge_components(components)
        if normalize:
            merged = _normalize_components(merged)
        return GammaMixtureLaw(tuple(merged), base, registry, beta, rate_offset)

    @staticmethod
    def prior(
        base: BaseMeasure, registry: TypeRegistry, beta: float
    ) -> "GammaMixtureLaw":
        return GammaMixtureLaw(
            ((0.0, MultiIndex.zeros(registry.k)),), base, registry, beta, 0.0
        )

    def normalized(self) -> "GammaMixtureLaw":
        return GammaMixtureLaw(
            tuple(_normalize_components(self.components)),
            self.base,
            self.registry,
            self.beta,
            self.rate_offset,
        )

    def pruned(self, epsilon: float) -> "GammaMixtureLaw":
        if epsilon <= 0.0:
            return self
        kept = [(lw, idx) for lw, idx in self.components if math.exp(lw) >= epsilon]
        return GammaMixtureLaw.from_components(
            kept, self.base, self.registry, self.beta, self.rate_offset
        )


def normalize(law):
    """Return the same mixture with weights rescaled to sum to one.

    Raises AllWeightsZero if every component has log-weight -inf.
    """
    finite = [c for c in law.components if c[0] > -math.inf]
    if not finite:
        raise AllWeightsZero("mixture has no component with positive weight")
    if isinstance(law, DirichletMixtureLaw):
        return DirichletMixtureLaw.from_components(finite, law.base, law.registry)
    if isinstance(law, GammaMixtureLaw):
        return GammaMixtureLaw.from_components(
            finite, law.base, law.registry, law.beta, law.rate_offset
        )
    raise TypeError(f"not a mixture law: {type(law)!r}")
