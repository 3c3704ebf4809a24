"""Exact filtering, smoothing and prediction for the finite-measure-valued
branching signal with gamma-mixture conditional laws.

Conditional laws are finite mixtures of gamma random-measure laws sharing a
single rate offset: updates add the draw cardinality to the offset and shift
indices by the observed totals; propagation thins every component's index
binomially and moves the offset along the deterministic cardinality flow.
Smoothing weights combine the thinning transition probabilities with a
total-count marginal ratio and the same per-type allocation case term as the
Dirichlet engine (shared between the two models).

Prediction is two-stage: the size of a further draw is a mixture of negative
binomials, and given the size the elements follow an urn mixture whose pair
weights are reweighted by the size likelihood and the elements drawn so far.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .core import (
    BaseMeasure,
    GammaMixtureLaw,
    MultiIndex,
    ObservationTimeline,
    TypeRegistry,
    logsumexp_1d,
)
from .dual import (
    DEFAULT_DW_RATE_CONSTANT,
    DwDualSpec,
    c_flow,
    dw_typed_log_prob,
)
from .errors import DomainError
from .fv import (
    NEW_LABEL,
    SharedAtomSets,
    discrete_case_log,
    nonatomic_log_coefficient,
    observation_log_score,
    sharing_degree,
)
from .specfun import log_gamma_marginal, log_neg_bin_pmf

__all__ = [
    "DwSmoothingResult",
    "update_gamma",
    "propagate_dw",
    "filter_forward_dw",
    "filter_backward_dw",
    "filter_posterior_dw",
    "one_step_smoothing_dw",
    "smooth_dw",
    "predict_count_pmf",
    "predict_count_mean",
    "predictive_label_pmf",
    "predict_draw",
]


def _require_dw(timeline: ObservationTimeline) -> None:
    if timeline.mode != "dw":
        raise DomainError("timeline does not carry per-time draw data")


def _carriers(law: GammaMixtureLaw) -> tuple[bool, ...]:
    k = law.registry.k
    out = [False] * k
    for _, idx in law.components:
        for j in range(k):
            if idx[j] > 0:
                out[j] = True
    return tuple(out)


# ---------------------------------------------------------------------------
# update and propagation
# ---------------------------------------------------------------------------


def update_gamma(
    law: GammaMixtureLaw, draws: Sequence[MultiIndex]
) -> GammaMixtureLaw:
    """Condition the mixture on a collection of point-process draws.

    Indices shift by the summed counts, the rate offset grows by the number
    of draws, and each weight picks up the component-specific marginal: the
    total-count gamma marginal times the type-allocation score.  Per-draw
    factorial factors are identical across components and are dropped.
    """
    draws = tuple(draws)
    c = len(draws)
    if c == 0:
        return law
    total = MultiIndex.zeros(law.registry.k)
    for d in draws:
        if len(d) != law.registry.k:
            raise DomainError("draw length != registry size")
        total = total + d
    alpha_vec = law.base.alpha_vector(law.registry)
    carriers = _carriers(law)
    theta = law.base.theta
    rate = law.beta + law.rate_offset
    comps = []
    for lw, m in law.components:
        theta_eff = theta + m.total
        score = log_gamma_marginal(total.total, float(c), theta_eff, rate)
        alloc = observation_log_score(
            m, total, law.base, alpha_vec, carriers, theta_eff
        )
        if alloc == -math.inf:
            continue
        comps.append((lw + score + alloc, m + total))
    return GammaMixtureLaw.from_components(
        comps, law.base, law.registry, law.beta, law.rate_offset + c
    )


def propagate_dw(
    law: GammaMixtureLaw,
    dt: float,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> GammaMixtureLaw:
    """Law of the signal an interval dt away (either direction).

    Components thin binomially with the per-lineage survival probability and
    the rate offset moves along the cardinality flow.  Backward and forward
    propagation coincide on these laws, so a single operation serves both
    recursions.
    """
    if dt < 0.0:
        raise DomainError(f"negative time step {dt}")
    if dt == 0.0:
        return law
    spec = DwDualSpec(law.base.theta, law.beta, law.rate_offset, kappa)
    new_offset = c_flow(law.beta, law.rate_offset, dt)
    comps = []
    for lw, m in law.components:
        if m.is_zero():
            comps.append((lw, m))
            continue
        for k in m.lattice_below():
            comps.append((lw + dw_typed_log_prob(spec, m, k, dt), k))
    return GammaMixtureLaw.from_components(
        comps, law.base, law.registry, law.beta, new_offset
    )


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def filter_forward_dw(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    beta: float,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> GammaMixtureLaw:
    """Law of the signal at t_i given draws strictly before t_i."""
    _require_dw(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    law = GammaMixtureLaw.prior(base, timeline.registry, beta)
    for j in range(i):
        law = update_gamma(law, timeline.dw_draws[j])
        law = propagate_dw(law, timeline.times[j + 1] - timeline.times[j], kappa)
    return law


def filter_backward_dw(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    beta: float,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> GammaMixtureLaw:
    """Law of the signal at t_i given draws strictly after t_i."""
    _require_dw(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    law = GammaMixtureLaw.prior(base, timeline.registry, beta)
    for j in range(timeline.n_times - 1, i, -1):
        law = update_gamma(law, timeline.dw_draws[j])
        law = propagate_dw(law, timeline.times[j] - timeline.times[j - 1], kappa)
    return law


def filter_posterior_dw(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    beta: float,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> GammaMixtureLaw:
    """Filtering law: signal at t_i given draws up to and including t_i."""
    law = filter_forward_dw(timeline, i, base, beta, kappa)
    return update_gamma(law, timeline.dw_draws[i])


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DwSmoothingResult:
    """Smoothing law at one collection time with its pair decomposition."""

    n_now: MultiIndex
    cardinality_now: int
    pair_log_weights: dict[tuple[MultiIndex, MultiIndex], float]
    law: GammaMixtureLaw

    @property
    def component_count(self) -> int:
        return len(self.pair_log_weights)

    def pair_weights(self) -> dict[tuple[MultiIndex, MultiIndex], float]:
        return {pair: math.exp(lw) for pair, lw in self.pair_log_weights.items()}


def _gamma_ratio_log(
    s_tot: int,
    k_tot: int,
    n_tot: int,
    kp_tot: int,
    a_past: float,
    c_now: float,
    a_future: float,
    theta: float,
    beta: float,
) -> float:
    return (
        log_gamma_marginal(s_tot, a_past + c_now + a_future, theta, beta)
        - log_gamma_marginal(k_tot, a_past, theta, beta)
        - log_gamma_marginal(n_tot, c_now, theta, beta)
        - log_gamma_marginal(kp_tot, a_future, theta, beta)
    )


def _combine_pairs_dw(
    v1: GammaMixtureLaw,
    v2: GammaMixtureLaw,
    n_now: MultiIndex,
    c_now: int,
    base: BaseMeasure,
    beta: float,
) -> dict[tuple[MultiIndex, MultiIndex], float]:
    theta = base.theta
    a_past = v1.rate_offset
    a_future = v2.rate_offset

    def gamma_part(k: MultiIndex, kp: MultiIndex) -> float:
        s = k.total + n_now.total + kp.total
        return _gamma_ratio_log(
            s, k.total, n_now.total, kp.total, a_past, c_now, a_future, theta, beta
        )

    if base.is_nonatomic:
        entries = []
        best = -1
        for lw1, k in v1.components:
            for lw2, kp in v2.components:
                d = sharing_degree(k, n_now, kp)
                best = max(best, d)
                entries.append((d, k, kp, lw1 + lw2))
        raw = {
            (k, kp): lw
            + gamma_part(k, kp)
            + nonatomic_log_coefficient(k, n_now, kp, theta)
            for d, k, kp, lw in entries
            if d == best
        }
    else:
        alpha_vec = base.alpha_vector(v1.registry)
        raw = {}
        for lw1, k in v1.components:
            for lw2, kp in v2.components:
                raw[(k, kp)] = (
                    lw1
                    + lw2
                    + gamma_part(k, kp)
                    + discrete_case_log(k, n_now, kp, alpha_vec, theta)
                )
    shift = logsumexp_1d(np.array(list(raw.values())))
    return {pair: lw - shift for pair, lw in raw.items()}


def _result_from_pairs_dw(
    pairs: dict[tuple[MultiIndex, MultiIndex], float],
    n_now: MultiIndex,
    c_now: int,
    base: BaseMeasure,
    registry: TypeRegistry,
    beta: float,
    rate_offset: float,
    pruning_epsilon: float,
) -> DwSmoothingResult:
    if pruning_epsilon > 0.0:
        kept = {
            pair: lw for pair, lw in pairs.items() if math.exp(lw) >= pruning_epsilon
        }
        shift = logsumexp_1d(np.array(list(kept.values())))
        pairs = {pair: lw - shift for pair, lw in kept.items()}
    comps = [(lw, k + n_now + kp) for (k, kp), lw in pairs.items()]
    law = GammaMixtureLaw.from_components(
        comps, base, registry, beta, rate_offset
    )
    return DwSmoothingResult(n_now, c_now, pairs, law)


def one_step_smoothing_dw(
    n_past: MultiIndex,
    n_now: MultiIndex,
    n_future: MultiIndex,
    d_past: float,
    d_future: float,
    cardinalities: tuple[int, int, int],
    base: BaseMeasure,
    beta: float,
    registry: TypeRegistry | None = None,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> GammaMixtureLaw:
    """Smoothing law for a query flanked by single draw blocks.

    Components sit at k + n_now + k' with the common rate offset
    C(d_past) + c_now + C(d_future); weights multiply the two thinning
    transition probabilities, the total-count marginal ratio, and the
    type-allocation case term shared with the Dirichlet engine.
    """
    c_past, c_now, c_future = cardinalities
    theta = base.theta
    a_past = c_flow(beta, float(c_past), d_past)
    a_future = c_flow(beta, float(c_future), d_future)
    spec_past = DwDualSpec(theta, beta, float(c_past), kappa)
    spec_future = DwDualSpec(theta, beta, float(c_future), kappa)
    shared = SharedAtomSets.from_counts(n_past, n_now, n_future)
    if base.is_nonatomic:
        alpha_vec = (0.0,) * len(n_now)
    else:
        if registry is None or registry.k != len(n_now):
            raise DomainError("discrete base measure requires a matching registry")
        alpha_vec = base.alpha_vector(registry)
    raw: dict[tuple[MultiIndex, MultiIndex], float] = {}
    for k in n_past.lattice_below():
        lp_past = dw_typed_log_prob(spec_past, n_past, k, d_past)
        if lp_past == -math.inf:
            continue
        for kp in n_future.lattice_below():
            lp_fut = dw_typed_log_prob(spec_future, n_future, kp, d_future)
            if lp_fut == -math.inf:
                continue
            if base.is_nonatomic:
                if not shared.contains(k, kp):
                    continue
                case = nonatomic_log_coefficient(k, n_now, kp, theta)
            else:
                case = discrete_case_log(k, n_now, kp, alpha_vec, theta)
            s = k.total + n_now.total + kp.total
            gamma_part = _gamma_ratio_log(
                s,
                k.total,
                n_now.total,
                kp.total,
                a_past,
                float(c_now),
                a_future,
                theta,
                beta,
            )
            raw[(k, kp)] = lp_past + lp_fut + gamma_part + case
    comps = [(lw, k + n_now + kp) for (k, kp), lw in raw.items()]
    reg = registry if registry is not None else TypeRegistry(
        tuple(f"y{j}" for j in range(len(n_now)))
    )
    return GammaMixtureLaw.from_components(
        comps, base, reg, beta, a_past + c_now + a_future
    )


def smooth_dw(
    timeline: ObservationTimeline,
    i: int,
    base: BaseMeasure,
    beta: float,
    pruning_epsilon: float = 0.0,
    kappa: float = DEFAULT_DW_RATE_CONSTANT,
) -> DwSmoothingResult:
    """Law of the signal at t_i given the whole dataset.

    Combines the propagated forward and backward filter weights with the
    total-count marginal ratio and the allocation case term; the mixture's
    rate offset is the propagated past cardinality plus the present one plus
    the propagated future cardinality.
    """
    _require_dw(timeline)
    if not 0 <= i < timeline.n_times:
        raise DomainError(f"time index {i} out of range")
    v1 = filter_forward_dw(timeline, i, base, beta, kappa)
    v2 = filter_backward_dw(timeline, i, base, beta, kappa)
    n_now = timeline.counts_at(i)
    c_now = timeline.cardinality_at(i)
    pairs = _combine_pairs_dw(v1, v2, n_now, c_now, base, beta)
    offset = v1.rate_offset + c_now + v2.rate_offset
    return _result_from_pairs_dw(
        pairs, n_now, c_now, base, timeline.registry, beta, offset, pruning_epsilon
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict_count_pmf(
    law: GammaMixtureLaw, tail: float = 1e-12, max_support: int = 100000
) -> dict[int, float]:
    """Distribution of the size of one further draw from the population.

    A mixture of negative binomials with per-component failure parameter
    theta + |m| and success probability 1/(1 + beta + rate offset).  The
    support is truncated once the certified geometric tail bound drops below
    ``tail``; the returned masses are not renormalized.
    """
    b_total = law.beta + law.rate_offset
    p = 1.0 / (1.0 + b_total)
    theta = law.base.theta
    comps = [(math.exp(lw), theta + m.total) for lw, m in law.components]
    r_max = max(r for _, r in comps)
    out: dict[int, float] = {}
    n = 0
    while n <= max_support:
        out[n] = sum(w * math.exp(log_neg_bin_pmf(n, r, p)) for w, r in comps)
        ratio = p * (r_max + n + 1) / (n + 2)
        if ratio < 1.0 and out[n] * ratio / (1.0 - ratio) < tail:
            break
        n += 1
    return out


def predict_count_mean(law: GammaMixtureLaw) -> float:
    """Analytic mean of the further-draw size: sum of w * (theta+|m|) / rate."""
    b_total = law.beta + law.rate_offset
    theta = law.base.theta
    return sum(
        math.exp(lw) * (theta + m.total) / b_total for lw, m in law.components
    )


def _component_log_posteriors(
    law: GammaMixtureLaw,
    m_count: int | None,
    history: Sequence[str],
) -> np.ndarray:
    """Log posterior component weights given the draw size and its elements."""
    theta = law.base.theta
    registry = law.registry
    alpha_vec = (
        (0.0,) * registry.k
        if law.base.is_nonatomic
        else law.base.alpha_vector(registry)
    )
    b_total = law.beta + law.rate_offset
    p = 1.0 / (1.0 + b_total)
    new_mass = theta * law.base.unseen_mass
    logs = []
    for lw, m in law.components:
        acc = lw
        theta_eff = theta + m.total
        if m_count is not None:
            acc += log_neg_bin_pmf(m_count, theta_eff, p)
        seen: dict[str, int] = {}
        for step, lab in enumerate(history):
            denom = theta_eff + step
            if lab in registry:
                j = registry.index_of(lab)
                num = alpha_vec[j] + m[j] + seen.get(lab, 0)
            elif lab in seen:
                num = seen[lab]
            else:
                num = new_mass
            acc += math.log(num) - math.log(denom) if num > 0 else -math.inf
            seen[lab] = seen.get(lab, 0) + 1
        logs.append(acc)
    return np.array(logs)


def predictive_label_pmf(
    law: GammaMixtureLaw,
    history: tuple[str, ...] = (),
    m_count: int | None = None,
) -> dict[str, float]:
    """Distribution of the next element of one further draw.

    Component weights are reweighted by the likelihood of the draw size (if
    given) and of the elements drawn so far; the urns then mix exactly as in
    the Dirichlet engine, with the rate parameters cancelling.
    """
    theta = law.base.theta
    registry = law.registry
    alpha_vec = (
        (0.0,) * registry.k
        if law.base.is_nonatomic
        else law.base.alpha_vector(registry)
    )
    logs = _component_log_posteriors(law, m_count, history)
    shift = logsumexp_1d(logs)
    weights = np.exp(logs - shift)
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
    for w, (lw, m) in zip(weights, law.components):
        denom = theta + m.total + k_hist
        for j, lab in enumerate(registry.labels):
            out[lab] += w * (alpha_vec[j] + m[j] + hist_counts.get(lab, 0)) / denom
        for lab in extra:
            out[lab] += w * hist_counts[lab] / denom
        out[NEW_LABEL] += w * new_mass / denom
    return out


_draw_table_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


class _DrawTables:
    """Static arrays backing the further-draw sampler of one mixture law."""

    __slots__ = (
        "log_w",
        "m_mat",
        "theta_eff",
        "alpha_vec",
        "new_mass",
        "p",
        "b_total",
        "comp_cum",
        "lgamma_theta_eff",
    )

    def __init__(self, law: GammaMixtureLaw):
        theta = law.base.theta
        self.b_total = law.beta + law.rate_offset
        self.p = 1.0 / (1.0 + self.b_total)
        self.log_w = np.array([lw for lw, _ in law.components])
        self.m_mat = np.array(
            [m.counts for _, m in law.components], dtype=float
        ).reshape(len(law.components), law.registry.k)
        self.theta_eff = theta + self.m_mat.sum(axis=1)
        self.alpha_vec = np.array(
            (0.0,) * law.registry.k
            if law.base.is_nonatomic
            else law.base.alpha_vector(law.registry)
        )
        self.new_mass = theta * law.base.unseen_mass
        probs = np.exp(self.log_w - logsumexp_1d(self.log_w))
        self.comp_cum = np.cumsum(probs)
        self.lgamma_theta_eff = gammaln(self.theta_eff)


def _draw_tables(law: GammaMixtureLaw) -> _DrawTables:
    tables = _draw_table_cache.get(law)
    if tables is None:
        tables = _DrawTables(law)
        _draw_table_cache[law] = tables
    return tables


def predict_draw(
    law: GammaMixtureLaw,
    rng: np.random.Generator,
    m_count: int | None = None,
) -> tuple[int, list[str]]:
    """Sample one further draw: its size, then its elements sequentially.

    The size comes from the negative binomial mixture (sampled exactly via
    its gamma-Poisson representation); each element is then drawn from the
    urn mixture with component weights reweighted by the size likelihood and
    the elements sampled so far.
    """
    registry = law.registry
    t = _draw_tables(law)
    theta_eff = t.theta_eff
    if m_count is None:
        pick = int(np.searchsorted(t.comp_cum, rng.random(), side="right"))
        pick = min(pick, len(t.comp_cum) - 1)
        z = rng.gamma(theta_eff[pick], 1.0 / t.b_total)
        m_count = int(rng.poisson(z))
    new_mass = t.new_mass
    # component log-posteriors given the draw size, updated per element
    lam = t.log_w + (
        gammaln(theta_eff + m_count)
        - t.lgamma_theta_eff
        - math.lgamma(m_count + 1)
        + m_count * math.log(t.p)
        + theta_eff * math.log1p(-t.p)
    )
    numer = t.alpha_vec[None, :] + t.m_mat  # per-component known-label masses
    extra_labels: list[str] = []
    extra_counts: list[int] = []
    labels: list[str] = []
    used: set[str] = set()
    for step in range(m_count):
        w = np.exp(lam - lam.max())
        w /= w.sum()
        denom = theta_eff + step
        reg_probs = (w / denom) @ numer
        new_prob = float(np.sum(w / denom)) * new_mass
        extra_probs = [
            float(np.sum(w / denom)) * cnt for cnt in extra_counts
        ]
        cum = np.cumsum(
            np.concatenate([reg_probs, np.array(extra_probs), [new_prob]])
        )
        u = rng.random() * cum[-1]
        j = int(np.searchsorted(cum, u, side="right"))
        if j < registry.k:
            lab = registry.labels[j]
            with np.errstate(divide="ignore"):
                lam = lam + np.log(numer[:, j]) - np.log(denom)
            numer[:, j] += 1.0
        elif j < registry.k + len(extra_labels):
            e = j - registry.k
            lab = extra_labels[e]
            lam = lam + math.log(extra_counts[e]) - np.log(denom)
            extra_counts[e] += 1
        else:
            i = 1
            while f"{NEW_LABEL}{i}" in used or f"{NEW_LABEL}{i}" in registry:
                i += 1
            lab = f"{NEW_LABEL}{i}"
            used.add(lab)
            lam = lam + math.log(new_mass) - np.log(denom)
            extra_labels.append(lab)
            extra_counts.append(1)
        labels.append(lab)
    return m_count, labels
