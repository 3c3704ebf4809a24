"""Shared test utilities: randomized datasets and reference recursions."""

from __future__ import annotations

import math

import numpy as np

from mvhmm.core import (
    BaseMeasure,
    DirichletMixtureLaw,
    GammaMixtureLaw,
    MultiIndex,
    ObservationTimeline,
    TypeRegistry,
)
from mvhmm.dual import (
    DEFAULT_DW_RATE_CONSTANT,
    DwDualSpec,
    FvDualSpec,
    c_flow,
    dw_typed_log_prob,
    fv_typed_log_prob,
)
from mvhmm.dw import _gamma_ratio_log, propagate_dw, update_gamma
from mvhmm.fv import (
    SharedAtomSets,
    discrete_case_log,
    nonatomic_log_coefficient,
    propagate_forward,
    update_dirichlet,
)


def random_dataset(rng: np.random.Generator, mode: str, base_kind: str):
    """K <= 3 types, N <= 4 times, total counts <= 8."""
    k = int(rng.integers(1, 4))
    n_times = int(rng.integers(1, 5))
    times = np.sort(rng.uniform(0.0, 2.0, size=n_times))
    while np.any(np.diff(times) < 1e-3):
        times = np.sort(rng.uniform(0.0, 2.0, size=n_times))
    labels = tuple(f"y{j}" for j in range(k))
    registry = TypeRegistry(labels)
    total = int(rng.integers(1, 9))
    cells = rng.multinomial(total, np.full(n_times * k, 1.0 / (n_times * k)))
    counts = cells.reshape(n_times, k)
    theta = float(rng.uniform(0.5, 3.0))
    if base_kind == "discrete":
        probs = rng.dirichlet(np.ones(k + 1))
        base = BaseMeasure(theta, {lab: float(p) for lab, p in zip(labels, probs)})
    else:
        base = BaseMeasure(theta)
    if mode == "fv":
        timeline = ObservationTimeline(
            tuple(float(t) for t in times),
            registry,
            tuple(MultiIndex(row) for row in counts),
        )
        return timeline, base, None
    beta = float(rng.uniform(0.5, 2.0))
    draws_per_time = []
    for row in counts:
        c_i = int(rng.integers(1, 3))
        splits = [np.zeros(k, dtype=int) for _ in range(c_i)]
        for j, nj in enumerate(row):
            alloc = rng.multinomial(nj, np.full(c_i, 1.0 / c_i))
            for d in range(c_i):
                splits[d][j] = alloc[d]
        draws_per_time.append(tuple(MultiIndex(s) for s in splits))
    timeline = ObservationTimeline(
        tuple(float(t) for t in times), registry, dw_draws=tuple(draws_per_time)
    )
    return timeline, base, beta


def reference_smooth_pairs_fv(timeline, i, base, rtol=1e-10):
    """Double-sum reference combination over pre-propagation filter components.

    Dispatches the nonatomic case term per (h, l) block; agrees with the
    engine on any discrete-base dataset and on three-time nonatomic ones.
    """
    theta = base.theta
    spec = FvDualSpec(theta)
    registry = timeline.registry
    k_zero = MultiIndex.zeros(registry.k)

    def filtered_upto(idx):
        law = DirichletMixtureLaw.prior(base, registry)
        for j in range(idx):
            law = update_dirichlet(law, timeline.fv_counts[j])
            law = propagate_forward(law, timeline.times[j + 1] - timeline.times[j], rtol)
        return update_dirichlet(law, timeline.fv_counts[idx])

    def filtered_downto(idx):
        law = DirichletMixtureLaw.prior(base, registry)
        for j in range(timeline.n_times - 1, idx, -1):
            law = update_dirichlet(law, timeline.fv_counts[j])
            law = propagate_forward(law, timeline.times[j] - timeline.times[j - 1], rtol)
        return update_dirichlet(law, timeline.fv_counts[idx])

    if i > 0:
        v1 = filtered_upto(i - 1).log_weights()
        d_past = timeline.times[i] - timeline.times[i - 1]
    else:
        v1 = {k_zero: 0.0}
        d_past = 0.0
    if i < timeline.n_times - 1:
        v2 = filtered_downto(i + 1).log_weights()
        d_future = timeline.times[i + 1] - timeline.times[i]
    else:
        v2 = {k_zero: 0.0}
        d_future = 0.0
    n_now = timeline.fv_counts[i]
    alpha_vec = None if base.is_nonatomic else base.alpha_vector(registry)
    raw = {}
    for h, lw1 in v1.items():
        for ell, lw2 in v2.items():
            shared = SharedAtomSets.from_counts(h, n_now, ell)
            for k in h.lattice_below():
                lp1 = (
                    fv_typed_log_prob(spec, h, k, d_past, rtol)
                    if d_past > 0
                    else (0.0 if k == h else -math.inf)
                )
                if lp1 == -math.inf:
                    continue
                for kp in ell.lattice_below():
                    lp2 = (
                        fv_typed_log_prob(spec, ell, kp, d_future, rtol)
                        if d_future > 0
                        else (0.0 if kp == ell else -math.inf)
                    )
                    if lp2 == -math.inf:
                        continue
                    if base.is_nonatomic:
                        if not shared.contains(k, kp):
                            continue
                        case = nonatomic_log_coefficient(k, n_now, kp, theta)
                    else:
                        case = discrete_case_log(k, n_now, kp, alpha_vec, theta)
                    val = lw1 + lw2 + lp1 + lp2 + case
                    key = (k, kp)
                    raw[key] = (
                        val
                        if key not in raw
                        else float(np.logaddexp(raw[key], val))
                    )
    logs = np.array(list(raw.values()))
    shift = logs.max() + math.log(np.exp(logs - logs.max()).sum())
    return {key: lw - shift for key, lw in raw.items()}


def reference_smooth_pairs_dw(
    timeline, i, base, beta, kappa=DEFAULT_DW_RATE_CONSTANT
):
    """Double-sum reference combination for the branching model (discrete)."""
    theta = base.theta
    registry = timeline.registry
    k_zero = MultiIndex.zeros(registry.k)

    def filtered_upto(idx):
        law = GammaMixtureLaw.prior(base, registry, beta)
        for j in range(idx):
            law = update_gamma(law, timeline.dw_draws[j])
            law = propagate_dw(law, timeline.times[j + 1] - timeline.times[j], kappa)
        return update_gamma(law, timeline.dw_draws[idx])

    def filtered_downto(idx):
        law = GammaMixtureLaw.prior(base, registry, beta)
        for j in range(timeline.n_times - 1, idx, -1):
            law = update_gamma(law, timeline.dw_draws[j])
            law = propagate_dw(law, timeline.times[j] - timeline.times[j - 1], kappa)
        return update_gamma(law, timeline.dw_draws[idx])

    if i > 0:
        law1 = filtered_upto(i - 1)
        v1 = law1.log_weights()
        b1 = law1.rate_offset
        d_past = timeline.times[i] - timeline.times[i - 1]
        a_past = c_flow(beta, b1, d_past)
    else:
        v1 = {k_zero: 0.0}
        b1 = 0.0
        d_past = 0.0
        a_past = 0.0
    if i < timeline.n_times - 1:
        law2 = filtered_downto(i + 1)
        v2 = law2.log_weights()
        b2 = law2.rate_offset
        d_future = timeline.times[i + 1] - timeline.times[i]
        a_future = c_flow(beta, b2, d_future)
    else:
        v2 = {k_zero: 0.0}
        b2 = 0.0
        d_future = 0.0
        a_future = 0.0
    n_now = timeline.counts_at(i)
    c_now = timeline.cardinality_at(i)
    alpha_vec = None if base.is_nonatomic else base.alpha_vector(registry)
    spec1 = DwDualSpec(theta, beta, b1, kappa)
    spec2 = DwDualSpec(theta, beta, b2, kappa)
    raw = {}
    for h, lw1 in v1.items():
        for ell, lw2 in v2.items():
            shared = SharedAtomSets.from_counts(h, n_now, ell)
            for k in h.lattice_below():
                lp1 = (
                    dw_typed_log_prob(spec1, h, k, d_past)
                    if d_past > 0
                    else (0.0 if k == h else -math.inf)
                )
                if lp1 == -math.inf:
                    continue
                for kp in ell.lattice_below():
                    lp2 = (
                        dw_typed_log_prob(spec2, ell, kp, d_future)
                        if d_future > 0
                        else (0.0 if kp == ell else -math.inf)
                    )
                    if lp2 == -math.inf:
                        continue
                    if base.is_nonatomic:
                        if not shared.contains(k, kp):
                            continue
                        case = nonatomic_log_coefficient(k, n_now, kp, theta)
                    else:
                        case = discrete_case_log(k, n_now, kp, alpha_vec, theta)
                    s = k.total + n_now.total + kp.total
                    gpart = _gamma_ratio_log(
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
                    val = lw1 + lw2 + lp1 + lp2 + gpart + case
                    key = (k, kp)
                    raw[key] = (
                        val
                        if key not in raw
                        else float(np.logaddexp(raw[key], val))
                    )
    logs = np.array(list(raw.values()))
    shift = logs.max() + math.log(np.exp(logs - logs.max()).sum())
    return {key: lw - shift for key, lw in raw.items()}
