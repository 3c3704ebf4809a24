"""Exact filtering, smoothing and prediction for the probability-measure-valued
signal with Dirichlet-mixture conditional laws.

Conditional laws of the signal given count data are finite mixtures of
Dirichlet random-measure laws indexed by multi-indices over the observed
types.  Updates are conjugate; propagation in either time direction expands
every component over the sub-lattice below its index with typed death-chain
transition probabilities (forward and backward propagation coincide for
these laws).

Two base-measure regimes are supported.  With a discrete mutation offspring
distribution every weight is a ratio of Dirichlet-categorical marginals.
With a nonatomic one the weights are the limits of those ratios under ever
finer discretizations: components that fail to carry an atom for a type
observed at more than one collection time are suppressed by a vanishing
factor and drop out, while the surviving components pick up explicit
Pochhammer/factorial coefficients.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .core import (
    BaseMeasure,
    DirichletMixtureLaw,
    MultiIndex,
    TypeRegistry,
    ObservationTimeline,
    logsumexp_1d,
)
from .dual import DEFAULT_ODE_RTOL, FvDualSpec, fv_typed_log_prob
from .errors import DomainError
from .specfun import log_dir_cat, log_pochhammer

__all__ = [
    "NEW_LABEL",
    "SharedAtomSets",
    "FvSmoothingResult",
    "update_dirichlet",
    "propagate_forward",
    "propagate_backward",
    "filter_forward",
    "filter_backward",
    "filter_posterior",
    "one_step_smoothing_weights",
    "smooth",
    "predictive_pmf",
    "predictive_sample",
    "sharing_degree",
    "nonatomic_log_coefficient",
    "discrete_case_log",
    "observation_log_score",
]

# Reserved key for predictive mass on previously unseen types.
NEW_LABEL = "<new>"


def _require_fv(timeline: ObservationTimeline) -> None:
    if timeline.mode != "fv":
        raise DomainError("timeline does not carry per-time multiplicity data")


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------


def _carriers(law: DirichletMixtureLaw) -> tuple[bool, ...]:
    k = law.registry.k
    out = [False] * k
    for _, idx in law.components:
        for j in range(k):
            if idx[j] > 0:
                out[j] = True
    return tuple(out)


def observation_log_score(
    m: MultiIndex,
    n: MultiIndex,
    base: BaseMeasure,
    alpha_vec: tuple[float, ...],
    carriers: tuple[bool, ...],
    theta_eff: float | None = None,
) -> float:
    """Log marginal likelihood of counts ``n`` under the component at ``m``.

    ``theta_eff`` is the total parameter mass of the component before the
    observation (defaults to base.theta + |m|).  In the nonatomic regime the
    score is the discretization limit: a type re-observed while some mixture
    component carries it contributes -inf to components that do not, and
    types fresh to the whole mixture contribute a factor common to all
    components.
    """
    if theta_eff is None:
        theta_eff = base.theta + m.total
    if not base.is_nonatomic:
        shifted = [a + mj for a, mj in zip(alpha_vec, m)]
        return log_dir_cat(n.counts, shifted, total=theta_eff)
    out = 0.0
    for j, nj in enumerate(n):
        if nj == 0:
            continue
        mj = m[j]
        if mj > 0:
            out += math.lgamma(mj + nj) - math.lgamma(mj)
        elif carriers[j]:
            return -math.inf
        else:
            out += math.lgamma(nj)
    out += math.lgamma(theta_eff) - math.lgamma(theta_eff + n.total)
    return out


def update_dirichlet(law: DirichletMixtureLaw, n: MultiIndex) -> DirichletMixtureLaw:
    """Condition the mixture on counts ``n`` observed at the current time.

    Every component index shifts by n; weights are rescored by the
    component-specific marginal likelihood and renormalized.
    """
    if len(n) != law.registry.k:
        raise DomainError("observation length != registry size")
    if n.is_zero():
        return law
    alpha_vec = law.base.alpha_vector(law.registry)
    carriers = _carriers(law)
    comps = []
    for lw, m in law.components:
        score = observation_log_score(m, n, law.base, alpha_vec, carriers)
        if score == -math.inf:
            continue
        comps.append((lw + score, m + n))
    return DirichletMixtureLaw.from_components(comps, law.base, law.registry)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def propagate_forward(
    law: DirichletMixtureLaw, dt: float, rtol: float = DEFAULT_ODE_RTOL
) -> DirichletMixtureLaw:
    """Law of the signal an interval dt later, the data staying fixed.

    Each component (w, m) spreads over {k <= m} with the typed death-chain
    transition probabilities; coinciding indices merge.
    """
    if dt < 0.0:
        raise DomainError(f"negative time step {dt}")
    if dt == 0.0:
        return law
    spec = FvDualSpec(law.base.theta)
    comps = []
    for lw, m in law.components:
        if m.is_zero():
            comps.append((lw, m))
            continue
        for k in m.lattice_below():
            comps.append((lw + fv_typed_log_prob(spec, m, k, dt, rtol), k))
    return DirichletMixtureLaw.from_components(comps, law.base, law.registry)


def propagate_backward(
    law: DirichletMixtureLaw, dt: float, rtol: float = DEFAULT_ODE_RTOL
) -> DirichletMixtureLaw:
    """Law of the signal an interval dt earlier.

    By reversibility this coincides with forward propagation on these laws;
    the separate name keeps the direction of each recursion readable.
    """
    return propagate_forward(law, dt, rtol)


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def filter_forward(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    rtol: float = DEFAULT_ODE_RTOL,
) -> DirichletMixtureLaw:
    """Law of the signal at time t_i given data strictly before t_i.

    Alternates conjugate updates with forward propagation, starting from the
    stationary single-component prior; the result is supported on the
    lattice below the summed past multiplicities.
    """
    _require_fv(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    law = DirichletMixtureLaw.prior(base, timeline.registry)
    for j in range(i):
        law = update_dirichlet(law, timeline.fv_counts[j])
        law = propagate_forward(law, timeline.times[j + 1] - timeline.times[j], rtol)
    return law


def filter_backward(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    rtol: float = DEFAULT_ODE_RTOL,
) -> DirichletMixtureLaw:
    """Law of the signal at time t_i given data strictly after t_i.

    Mirror image of filter_forward, built with backward propagation from the
    prior at the final collection time.
    """
    _require_fv(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    law = DirichletMixtureLaw.prior(base, timeline.registry)
    for j in range(timeline.n_times - 1, i, -1):
        law = update_dirichlet(law, timeline.fv_counts[j])
        law = propagate_backward(law, timeline.times[j] - timeline.times[j - 1], rtol)
    return law


def filter_posterior(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    rtol: float = DEFAULT_ODE_RTOL,
) -> DirichletMixtureLaw:
    """Filtering law: signal at t_i given data up to and including t_i."""
    law = filter_forward(timeline, i, base, rtol)
    return update_dirichlet(law, timeline.fv_counts[i])


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharedAtomSets:
    """Types shared across the three blocks of a smoothing query.

    ``d_past`` holds types observed before the query time and again at or
    after it; ``d_future`` the mirror image.  A lattice pair is admissible
    when it keeps a positive count for every shared type on its side.
    """

    d_past: frozenset[int]
    d_future: frozenset[int]

    @staticmethod
    def from_counts(
        n_past: MultiIndex, n_now: MultiIndex, n_future: MultiIndex
    ) -> "SharedAtomSets":
        d_past = frozenset(
            j
            for j in range(len(n_past))
            if n_past[j] > 0 and (n_now[j] > 0 or n_future[j] > 0)
        )
        d_future = frozenset(
            j
            for j in range(len(n_future))
            if n_future[j] > 0 and (n_now[j] > 0 or n_past[j] > 0)
        )
        return SharedAtomSets(d_past, d_future)

    def contains(self, k_past: MultiIndex, k_future: MultiIndex) -> bool:
        return all(k_past[j] > 0 for j in self.d_past) and all(
            k_future[j] > 0 for j in self.d_future
        )

    @property
    def shared(self) -> frozenset[int]:
        return self.d_past | self.d_future


def sharing_degree(k: MultiIndex, n: MultiIndex, kp: MultiIndex) -> int:
    """Number of cross-block coincidences of types in (k, n, kp).

    Each type contributes (number of positive blocks - 1); components whose
    degree is below the achievable maximum carry weights of smaller order in
    the discretization limit and vanish under a nonatomic base measure.
    """
    d = 0
    for kj, nj, pj in zip(k, n, kp):
        pos = (kj > 0) + (nj > 0) + (pj > 0)
        if pos > 1:
            d += pos - 1
    return d


def nonatomic_log_coefficient(
    k: MultiIndex, n: MultiIndex, kp: MultiIndex, theta: float
) -> float:
    """Leading-order weight coefficient in the nonatomic regime.

    Pochhammer factor theta^(|k|) theta^(|kp|) / (theta+|n|)^(|k|+|kp|)
    times, for every type, (k+n+kp-1)! / ((k-1)!(n-1)!(kp-1)!) with zero
    counts contributing empty products.
    """
    out = (
        log_pochhammer(theta, k.total)
        + log_pochhammer(theta, kp.total)
        - log_pochhammer(theta + n.total, k.total + kp.total)
    )
    for kj, nj, pj in zip(k, n, kp):
        s = kj + nj + pj
        if s > 0:
            out += math.lgamma(s)
        if kj > 0:
            out -= math.lgamma(kj)
        if nj > 0:
            out -= math.lgamma(nj)
        if pj > 0:
            out -= math.lgamma(pj)
    return out


def discrete_case_log(
    k: MultiIndex,
    n: MultiIndex,
    kp: MultiIndex,
    alpha_vec: tuple[float, ...],
    theta: float,
) -> float:
    s = [a + b + c for a, b, c in zip(k, n, kp)]
    return (
        log_dir_cat(s, alpha_vec, total=theta)
        - log_dir_cat(k.counts, alpha_vec, total=theta)
        - log_dir_cat(n.counts, alpha_vec, total=theta)
        - log_dir_cat(kp.counts, alpha_vec, total=theta)
    )


def _combine_pairs(
    v1: DirichletMixtureLaw,
    v2: DirichletMixtureLaw,
    n_now: MultiIndex,
    base: BaseMeasure,
) -> dict[tuple[MultiIndex, MultiIndex], float]:
    """Pair log-weights from propagated filter weights and the case term."""
    theta = base.theta
    if base.is_nonatomic:
        entries = []
        best = -1
        for lw1, k in v1.components:
            for lw2, kp in v2.components:
                d = sharing_degree(k, n_now, kp)
                best = max(best, d)
                entries.append((d, k, kp, lw1 + lw2))
        raw = {
            (k, kp): lw + nonatomic_log_coefficient(k, n_now, kp, theta)
            for d, k, kp, lw in entries
            if d == best
        }
    else:
        alpha_vec = base.alpha_vector(v1.registry)
        raw = {}
        for lw1, k in v1.components:
            for lw2, kp in v2.components:
                raw[(k, kp)] = lw1 + lw2 + discrete_case_log(
                    k, n_now, kp, alpha_vec, theta
                )
    shift = logsumexp_1d(np.array(list(raw.values())))
    return {pair: lw - shift for pair, lw in raw.items()}


@dataclass(frozen=True, eq=False)
class FvSmoothingResult:
    """Smoothing law at one collection time, with its pair decomposition.

    ``pair_log_weights`` maps (retained-past, retained-future) multi-index
    pairs to normalized log-weights; the mixture component of a pair sits at
    index k + n_now + k'.  ``law`` merges pairs with equal component index.
    """

    n_now: MultiIndex
    pair_log_weights: dict[tuple[MultiIndex, MultiIndex], float]
    law: DirichletMixtureLaw

    @property
    def component_count(self) -> int:
        return len(self.pair_log_weights)

    def pair_weights(self) -> dict[tuple[MultiIndex, MultiIndex], float]:
        return {pair: math.exp(lw) for pair, lw in self.pair_log_weights.items()}


def _result_from_pairs(
    pairs: dict[tuple[MultiIndex, MultiIndex], float],
    n_now: MultiIndex,
    base: BaseMeasure,
    registry: TypeRegistry,
    pruning_epsilon: float,
) -> FvSmoothingResult:
    if pruning_epsilon > 0.0:
        kept = {
            pair: lw
            for pair, lw in pairs.items()
            if math.exp(lw) >= pruning_epsilon
        }
        shift = logsumexp_1d(np.array(list(kept.values())))
        pairs = {pair: lw - shift for pair, lw in kept.items()}
    comps = [(lw, k + n_now + kp) for (k, kp), lw in pairs.items()]
    law = DirichletMixtureLaw.from_components(comps, base, registry)
    return FvSmoothingResult(n_now, pairs, law)


def one_step_smoothing_weights(
    n_past: MultiIndex,
    n_now: MultiIndex,
    n_future: MultiIndex,
    d_past: float,
    d_future: float,
    base: BaseMeasure,
    registry: TypeRegistry | None = None,
    rtol: float = DEFAULT_ODE_RTOL,
) -> dict[tuple[MultiIndex, MultiIndex], float]:
    """Normalized log-weights over retained-multiplicity pairs for a query
    flanked by single observation blocks at lags d_past and d_future.

    The weight of (k, k') is the product of the two death-chain transition
    probabilities times the base-measure case term; under a nonatomic base
    measure the support is restricted to pairs keeping every shared type.
    A discrete base measure needs the registry to resolve its atom masses.
    """
    spec = FvDualSpec(base.theta)
    k_size = len(n_now)
    if len(n_past) != k_size or len(n_future) != k_size:
        raise DomainError("count vectors must share one registry")
    shared = SharedAtomSets.from_counts(n_past, n_now, n_future)
    if base.is_nonatomic:
        alpha_vec = (0.0,) * k_size
    else:
        if registry is None or registry.k != k_size:
            raise DomainError("discrete base measure requires a matching registry")
        alpha_vec = base.alpha_vector(registry)
    raw: dict[tuple[MultiIndex, MultiIndex], float] = {}
    for k in n_past.lattice_below():
        lp_past = fv_typed_log_prob(spec, n_past, k, d_past, rtol) if d_past > 0 else (
            0.0 if k == n_past else -math.inf
        )
        if lp_past == -math.inf:
            continue
        for kp in n_future.lattice_below():
            lp_fut = (
                fv_typed_log_prob(spec, n_future, kp, d_future, rtol)
                if d_future > 0
                else (0.0 if kp == n_future else -math.inf)
            )
            if lp_fut == -math.inf:
                continue
            if base.is_nonatomic:
                if not shared.contains(k, kp):
                    continue
                case = nonatomic_log_coefficient(k, n_now, kp, base.theta)
            else:
                case = discrete_case_log(k, n_now, kp, alpha_vec, base.theta)
            raw[(k, kp)] = lp_past + lp_fut + case
    shift = logsumexp_1d(np.array(list(raw.values())))
    return {pair: lw - shift for pair, lw in raw.items()}


def smooth(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    pruning_epsilon: float = 0.0,
    rtol: float = DEFAULT_ODE_RTOL,
) -> FvSmoothingResult:
    """Law of the signal at t_i given the whole dataset.

    Runs the forward and backward filters to t_i and combines their weights
    with the adjacency case term; summing the propagated filter weights
    first is algebraically identical to the double sum over pre-propagation
    components, because the case term depends only on the retained pair.
    """
    _require_fv(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    v1 = filter_forward(timeline, i, base, rtol)
    v2 = filter_backward(timeline, i, base, rtol)
    n_now = timeline.fv_counts[i]
    pairs = _combine_pairs(v1, v2, n_now, base)
    return _result_from_pairs(
        pairs, n_now, base, timeline.registry, pruning_epsilon
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predictive_pmf(
    law: DirichletMixtureLaw, history: tuple[str, ...] = ()
) -> dict[str, float]:
    """Distribution of the next sample drawn from the smoothed population.

    Mixes the urn of every component: mass at a known label is proportional
    to its parameter mass plus its count among earlier further samples; the
    NEW_LABEL entry carries the base-measure mass off the known atoms.
    """
    theta = law.base.theta
    registry = law.registry
    alpha_vec = (
        (0.0,) * registry.k
        if law.base.is_nonatomic
        else law.base.alpha_vector(registry)
    )
    hist_counts: dict[str, int] = {}
    for lab in history:
        hist_counts[lab] = hist_counts.get(lab, 0) + 1
    extra = [lab for lab in hist_counts if lab not in registry]
    out = {lab: 0.0 for lab in registry.labels}
    for lab in extra:
        out[lab] = 0.0
    out[NEW_LABEL] = 0.0
    k_hist = len(history)
    new_mass = theta * law.base.unseen_mass
    for lw, m in law.components:
        w = math.exp(lw)
        denom = theta + m.total + k_hist
        for j, lab in enumerate(registry.labels):
            out[lab] += w * (alpha_vec[j] + m[j] + hist_counts.get(lab, 0)) / denom
        for lab in extra:
            out[lab] += w * hist_counts[lab] / denom
        out[NEW_LABEL] += w * new_mass / denom
    return out


def _fresh_label(registry: TypeRegistry, used: set[str]) -> str:
    i = 1
    while True:
        lab = f"{NEW_LABEL}{i}"
        if lab not in used and lab not in registry:
            used.add(lab)
            return lab
        i += 1


_urn_table_cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


class _UrnTables:
    """Static arrays backing the predictive urn of one smoothing result."""

    __slots__ = ("pair_cum", "atom_totals", "atom_cums", "base_labels", "base_cum")

    def __init__(self, result: "FvSmoothingResult"):
        pairs = list(result.pair_log_weights.items())
        cum = np.cumsum([math.exp(lw) for _, lw in pairs])
        self.pair_cum = cum / cum[-1]
        totals = []
        cums = []
        for (k, kp), _ in pairs:
            m = k + result.n_now + kp
            totals.append(float(m.total))
            cums.append(np.cumsum(m.counts, dtype=float))
        self.atom_totals = totals
        self.atom_cums = cums
        base = result.law.base
        if base.is_nonatomic:
            self.base_labels: tuple[str, ...] = ()
            self.base_cum = np.zeros(0)
        else:
            assert base.atom_probs is not None
            self.base_labels = tuple(base.atom_probs.keys())
            self.base_cum = np.cumsum(list(base.atom_probs.values()))


def _urn_tables(result: "FvSmoothingResult") -> _UrnTables:
    tables = _urn_table_cache.get(result)
    if tables is None:
        tables = _UrnTables(result)
        _urn_table_cache[result] = tables
    return tables


def predictive_sample(
    result: FvSmoothingResult,
    count: int,
    rng: np.random.Generator,
    history: tuple[str, ...] = (),
) -> list[str]:
    """Sample further observations sequentially from the smoothed urn mixture.

    Each draw picks a retained pair by its smoothing weight, then one of
    three sources with probabilities proportional to (theta, retained atom
    count, number of earlier further samples): the base measure, the
    weighted observed atoms, or the empirical history.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    tables = _urn_tables(result)
    base = result.law.base
    registry = result.law.registry
    theta = base.theta
    hist = list(history)
    used: set[str] = set(hist)
    out: list[str] = []
    for _ in range(count):
        pi = int(np.searchsorted(tables.pair_cum, rng.random(), side="right"))
        total = tables.atom_totals[pi]
        denom = theta + total + len(hist)
        v = rng.random() * denom
        if v < theta:
            u = v / theta
            j = int(np.searchsorted(tables.base_cum, u, side="right"))
            if j < len(tables.base_labels):
                lab = tables.base_labels[j]
            else:
                lab = _fresh_label(registry, used)
        elif v < theta + total:
            j = int(np.searchsorted(tables.atom_cums[pi], v - theta, side="right"))
            lab = registry.labels[j]
        else:
            lab = hist[min(int(v - theta - total), len(hist) - 1)]
        out.append(lab)
        hist.append(lab)
    return out
