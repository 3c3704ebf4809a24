"""Dataset ingestion, configuration and result serialization.

Data files are delimiter-separated values with a header row (comma or tab,
UTF-8 labels): ``time,label,count`` for the frequency model and
``time,draw,label,count`` for the branching model, where distinct draw ids
at one time define that time's cardinality.  Configs are flat key-value
files; environment variables prefixed ``MVHMM_`` override scalar keys.
"""

from __future__ import annotations

import csv
import io as _io
import math
import os
from dataclasses import dataclass, field

from .core import BaseMeasure, MultiIndex, ObservationTimeline, TypeRegistry
from .dual import DEFAULT_DW_RATE_CONSTANT, DEFAULT_ODE_RTOL
from .errors import OrderError, SchemaError

__all__ = [
    "RunConfig",
    "load_config",
    "parse_config_text",
    "load_timeline",
    "parse_timeline_text",
    "serialize_timeline",
    "format_float",
    "format_mixture",
]

_FV_FIELDS = ("time", "label", "count")
_DW_FIELDS = ("time", "draw", "label", "count")

_SCALAR_KEYS = {
    "model",
    "theta",
    "beta",
    "base",
    "pruning_epsilon",
    "seed",
    "ode_tolerance",
    "dw_rate_constant",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration for the command-line interface."""

    model: str
    theta: float
    base: BaseMeasure
    beta: float | None = None
    pruning_epsilon: float = 0.0
    seed: int = 0
    ode_tolerance: float = DEFAULT_ODE_RTOL
    dw_rate_constant: float = DEFAULT_DW_RATE_CONSTANT

    def __post_init__(self):
        if self.model not in ("fv", "dw"):
            raise SchemaError(f"model must be 'fv' or 'dw', got {self.model!r}")
        if (self.model == "dw") != (self.beta is not None):
            raise SchemaError("beta is required exactly when model is 'dw'")
        if not 0.0 <= self.pruning_epsilon <= 1e-3:
            raise SchemaError("pruning_epsilon must lie in [0, 1e-3]")
        if self.ode_tolerance <= 0.0:
            raise SchemaError("ode_tolerance must be positive")


def parse_config_text(text: str, env: dict[str, str] | None = None) -> RunConfig:
    """Parse a flat key-value config, applying MVHMM_ environment overrides."""
    pairs: dict[str, str] = {}
    atoms: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("atom."):
            label = key[len("atom.") :]
            if not label:
                raise SchemaError(f"line {lineno}: empty atom label")
            atoms[label] = float(value)
        elif key in _SCALAR_KEYS:
            pairs[key] = value
        else:
            raise SchemaError(f"line {lineno}: unknown key {key!r}")
    env = dict(os.environ) if env is None else env
    for key in _SCALAR_KEYS:
        override = env.get("MVHMM_" + key.upper())
        if override is not None:
            pairs[key] = override
    if "model" not in pairs:
        raise SchemaError("missing required key 'model'")
    if "theta" not in pairs:
        raise SchemaError("missing required key 'theta'")
    kind = pairs.get("base", "nonatomic").lower()
    if kind == "nonatomic":
        base = BaseMeasure(float(pairs["theta"]))
    elif kind == "discrete":
        if not atoms:
            raise SchemaError("discrete base requires atom.<label> entries")
        base = BaseMeasure(float(pairs["theta"]), atoms)
    else:
        raise SchemaError(f"base must be 'nonatomic' or 'discrete', got {kind!r}")
    beta = float(pairs["beta"]) if "beta" in pairs else None
    return RunConfig(
        model=pairs["model"].lower(),
        theta=float(pairs["theta"]),
        base=base,
        beta=beta,
        pruning_epsilon=float(pairs.get("pruning_epsilon", "0")),
        seed=int(pairs.get("seed", "0")),
        ode_tolerance=float(pairs.get("ode_tolerance", str(DEFAULT_ODE_RTOL))),
        dw_rate_constant=float(
            pairs.get("dw_rate_constant", str(DEFAULT_DW_RATE_CONSTANT))
        ),
    )


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _parse_count(value: str, lineno: int) -> int:
    try:
        count = int(value)
    except ValueError:
        raise SchemaError(f"line {lineno}: count {value!r} is not an integer") from None
    if count < 0:
        raise ValueError(f"line {lineno}: negative count {count}")
    return count


def parse_timeline_text(text: str, aggregate: bool = False) -> ObservationTimeline:
    """Parse timeline records; see load_timeline."""
    sample = text.splitlines()[0] if text.splitlines() else ""
    delim = "\t" if "\t" in sample else ","
    reader = csv.reader(_io.StringIO(text), delimiter=delim)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file: at least one time required") from None
    if set(header) == set(_FV_FIELDS):
        mode = "fv"
    elif set(header) == set(_DW_FIELDS):
        mode = "dw"
    else:
        raise SchemaError(f"unrecognized header {header!r}")
    cols = {name: header.index(name) for name in header}
    labels: list[str] = []
    records: dict[tuple, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields")
        time = float(row[cols["time"]])
        label = row[cols["label"]].strip()
        if not label:
            raise SchemaError(f"line {lineno}: empty label")
        count = _parse_count(row[cols["count"]].strip(), lineno)
        if label not in labels:
            labels.append(label)
        if mode == "fv":
            key = (time, label)
        else:
            key = (time, row[cols["draw"]].strip(), label)
        if key in records:
            if not aggregate:
                raise OrderError(f"line {lineno}: duplicate record {key!r}")
            records[key] += count
        else:
            records[key] = count
    if not records:
        raise SchemaError("at least one time required")
    registry = TypeRegistry(tuple(labels))
    times = sorted({key[0] for key in records})
    if mode == "fv":
        counts = []
        for t in times:
            vec = [0] * registry.k
            for (time, label), c in records.items():
                if time == t:
                    vec[registry.index_of(label)] = c
            counts.append(MultiIndex(vec))
        return ObservationTimeline(tuple(times), registry, tuple(counts))
    draws_per_time = []
    for t in times:
        draw_ids: list[str] = []
        for time, draw, _ in records:
            if time == t and draw not in draw_ids:
                draw_ids.append(draw)
        draws = []
        for d in draw_ids:
            vec = [0] * registry.k
            for (time, draw, label), c in records.items():
                if time == t and draw == d:
                    vec[registry.index_of(label)] = c
            draws.append(MultiIndex(vec))
        draws_per_time.append(tuple(draws))
    return ObservationTimeline(
        tuple(times), registry, dw_draws=tuple(draws_per_time)
    )


def load_timeline(path: str, aggregate: bool = False) -> ObservationTimeline:
    """Load a timeline file.

    Raises SchemaError for malformed structure, OrderError for duplicate
    records without the aggregation flag, and ValueError for negative counts.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_timeline_text(fh.read(), aggregate)


def serialize_timeline(timeline: ObservationTimeline) -> str:
    """Canonical comma-separated form: times ascending, labels in registry
    order, zero counts kept only to record otherwise-empty times or draws."""
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    registry = timeline.registry
    if timeline.mode == "fv":
        writer.writerow(_FV_FIELDS)
        for i, t in enumerate(timeline.times):
            vec = timeline.fv_counts[i]
            rows = [
                (format_float(t), lab, vec[j])
                for j, lab in enumerate(registry.labels)
                if vec[j] > 0
            ]
            if not rows:
                rows = [(format_float(t), registry.labels[0], 0)]
            writer.writerows(rows)
        return out.getvalue()
    writer.writerow(_DW_FIELDS)
    for i, t in enumerate(timeline.times):
        for d, vec in enumerate(timeline.dw_draws[i]):
            rows = [
                (format_float(t), str(d + 1), lab, vec[j])
                for j, lab in enumerate(registry.labels)
                if vec[j] > 0
            ]
            if not rows:
                rows = [(format_float(t), str(d + 1), registry.labels[0], 0)]
            writer.writerows(rows)
    return out.getvalue()


def format_float(value: float) -> str:
    """17 significant digits; round-trips every double."""
    return f"{value:.17g}"


def format_mixture(law, header: dict[str, str]) -> str:
    """Line-oriented key-value rendering with a stable field order."""
    lines = [f"{key} {value}" for key, value in header.items()]
    lines.append(f"n_components {len(law.components)}")
    if hasattr(law, "rate_offset"):
        lines.append(f"beta {format_float(law.beta)}")
        lines.append(f"rate_offset {format_float(law.rate_offset)}")
    for pos, (lw, idx) in enumerate(law.components):
        lines.append(f"component {pos}")
        lines.append("index " + ",".join(str(v) for v in idx))
        lines.append(f"log_weight {format_float(lw)}")
        lines.append(f"weight {format_float(math.exp(lw))}")
    return "\n".join(lines) + "\n"
