"""Dataset-to-context-model workflow for IoT and relational tables.

The IoT path classifies the dataset from its headers, maps columns onto the
meta-model concepts, reshapes the table (sensor splitting, canonical
renaming, synthetic column generation), looks up sensor capabilities, runs a
light statistical clean-up on a working copy, and assembles the context
graph. The relational path extracts pairwise column relationships instead
and builds a concept hierarchy graph.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .context_model import (
    ATTACHED_TO,
    Concept,
    ContextGraph,
    DEPLOYED_AT,
    MATCHES_WITH,
    MATCH_THRESHOLD,
    ObjKind,
    PART_OF,
    RELATED_TO,
    Triple,
    add_edge,
    add_entity,
    add_sensor_bounds,
    node_id,
    validate_graph,
)
from .dataset import Cell, CellKind, Dataset, cell_text
from .detection import lookup_spec
from .ensemble import EnsembleConfig, find_consensus
from .errors import GatewayError, SchemaError
from .gateway import (
    Backend,
    PromptTemplate,
    ResponseFormat,
    complete,
    render_prompt,
)
from .rules import SensorSpec

logger = logging.getLogger(__name__)


class DatasetClass(Enum):
    IOT = "IoT"
    NON_IOT = "NonIoT"


class Hierarchy(Enum):
    ATTRIBUTE_OF_A = "attribute_of_a"  # column_b is an attribute of column_a
    ATTRIBUTE_OF_B = "attribute_of_b"
    INDEPENDENT = "independent"


#: Concept roles resolved against columns, and the canonical column name each
#: one is renamed to. Measurement-level columns use the lowercase canonical
#: spellings; structural columns keep concept-style names. Rule enforcement
#: binds column names case-insensitively, so the mix is harmless.
MAPPING_ROLES: tuple[str, ...] = (
    "System", "Device", "SensingDevice", "Sensor", "Location", "Value", "Timestamp",
)
CANONICAL_NAMES: dict[str, str] = {
    "System": "System",
    "Device": "Device",
    "SensingDevice": "SensingDevice",
    "Sensor": "sensor",
    "Location": "location",
    "Value": "value",
    "Timestamp": "timestamp",
}
_ROLE_CONCEPTS: dict[str, Concept] = {
    "System": Concept.SYSTEM,
    "Device": Concept.DEVICE,
    "SensingDevice": Concept.SENSING_DEVICE,
    "Sensor": Concept.SENSOR,
    "Location": Concept.LOCATION,
}
SYNTHESIZABLE = ("System", "Device", "SensingDevice", "Sensor", "MinValue", "MaxValue")

#: Reference header list shown to the model as a known-IoT example.
IOT_REFERENCE_HEADERS = (
    "System, Device, SensingDevice, Sensor, Name, Value, Timestamp, Location"
)

CLASSIFY_TEMPLATE = PromptTemplate(
    id="classify",
    task_text=(
        "Here are column names from an IoT dataset: {iot_names}.\n"
        "Do these names {col_names} suggest an IoT dataset?"
    ),
    response_format=ResponseFormat.YES_NO,
)

MAP_COLUMN_TEMPLATE = PromptTemplate(
    id="map_column",
    task_text=(
        "A tabular dataset has these columns: {col_names}.\n"
        "Which column corresponds to the concept '{concept}'? "
        "Answer NONE if no column does."
    ),
    response_format=ResponseFormat.SINGLE_LABEL,
)

RELATED_TEMPLATE = PromptTemplate(
    id="pair_related",
    task_text=(
        "In a tabular dataset, is there a semantic relationship between the "
        "columns '{col_a}' and '{col_b}'?"
    ),
    response_format=ResponseFormat.YES_NO,
)

CONCEPT_TEMPLATE = PromptTemplate(
    id="pair_concept",
    task_text="What real-world concept does the column '{col}' represent?",
    response_format=ResponseFormat.SINGLE_LABEL,
)

HIERARCHY_TEMPLATE = PromptTemplate(
    id="pair_hierarchy",
    task_text=(
        "Columns '{col_a}' and '{col_b}' are related. If '{col_b}' is an "
        "attribute of '{col_a}', answer A. If '{col_a}' is an attribute of "
        "'{col_b}', answer B. If they are independent concepts, answer NONE."
    ),
    response_format=ResponseFormat.SINGLE_LABEL,
)

DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    t.id: t
    for t in (
        CLASSIFY_TEMPLATE,
        MAP_COLUMN_TEMPLATE,
        RELATED_TEMPLATE,
        CONCEPT_TEMPLATE,
        HIERARCHY_TEMPLATE,
    )
}


@dataclass
class ConceptMapping:
    """Concept-role assignments plus everything that failed to map."""

    assignments: dict[str, str] = field(default_factory=dict)  # role -> column
    unmapped_columns: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)  # roles with no column
    warnings: list[str] = field(default_factory=list)

    def column_for(self, role: str) -> str | None:
        return self.assignments.get(role)

    def renames(self) -> dict[str, str]:
        return {
            column: CANONICAL_NAMES[role]
            for role, column in self.assignments.items()
            if column.lower() != CANONICAL_NAMES[role].lower()
        }


@dataclass(frozen=True)
class ColumnPairRelation:
    column_a: str
    column_b: str
    related: bool
    concept_a: str = ""
    concept_b: str = ""
    hierarchy: Hierarchy = Hierarchy.INDEPENDENT
    similarity_threshold: float | None = None


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for synthetic column generation (deterministic for a seed)."""

    system_id: str = "system_1"
    device_per_location: bool = True
    default_min: float = 0.0
    default_max: float = 100.0
    generate_bounds: bool = False  # add MinValue/MaxValue columns when absent
    seed: int = 0


def classify_dataset(
    headers: Sequence[str],
    backend: Backend,
    config: EnsembleConfig,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> DatasetClass:
    """Vote the ensemble's yes/no prompts and apply the consensus threshold."""
    if not headers:
        raise ValueError("headers must be non-empty")
    templates = templates or DEFAULT_TEMPLATES
    bindings = {
        "col_names": ", ".join(headers),
        "iot_names": IOT_REFERENCE_HEADERS,
    }
    votes: list[set[str]] = []
    for prompt_id in config.prompts:
        template = templates[prompt_id]
        completion = complete(
            backend, render_prompt(template, bindings), ResponseFormat.YES_NO
        )
        votes.append({"yes"} if completion.parsed else set())
    consensus = find_consensus(votes, config.threshold)
    return DatasetClass.IOT if "yes" in consensus else DatasetClass.NON_IOT


def map_columns(
    headers: Sequence[str],
    backend: Backend,
    template: PromptTemplate | None = None,
) -> ConceptMapping:
    """One single-label query per concept role; hallucinated columns become
    warnings rather than errors."""
    template = template or MAP_COLUMN_TEMPLATE
    mapping = ConceptMapping()
    claimed: set[str] = set()
    for role in MAPPING_ROLES:
        prompt = render_prompt(
            template, {"col_names": ", ".join(headers), "concept": role}
        )
        try:
            completion = complete(backend, prompt, ResponseFormat.SINGLE_LABEL)
        except GatewayError as exc:
            mapping.warnings.append(f"{role}: {exc}")
            mapping.missing.append(role)
            continue
        label = str(completion.parsed).strip()
        if label.upper() == "NONE" or not label:
            mapping.missing.append(role)
            continue
        matches = [h for h in headers if h == label] or [
            h for h in headers if h.lower() == label.lower()
        ]
        if not matches:
            mapping.warnings.append(
                f"{role}: model answered unknown column {label!r}"
            )
            mapping.missing.append(role)
        elif matches[0] in claimed:
            mapping.warnings.append(
                f"{role}: column {matches[0]!r} already mapped to another concept"
            )
            mapping.missing.append(role)
        else:
            mapping.assignments[role] = matches[0]
            claimed.add(matches[0])
    mapping.unmapped_columns = [h for h in headers if h not in claimed]
    return mapping


def split_sensors(
    d: Dataset, value_columns: Sequence[tuple[str, str]]
) -> Dataset:
    """Disaggregate multi-reading rows into one row per sensor reading.

    Each input row becomes one output row per (value column, sensor label)
    pair, with the remaining columns replicated. The output schema is
    ``sensor``, ``value``, then the carried columns.
    """
    if not value_columns:
        raise SchemaError("no value columns given")
    indices = []
    for column, label in value_columns:
        indices.append((d.column_index(column), label))
    value_idx = {i for i, _ in indices}
    carried = [i for i in range(d.n_cols) if i not in value_idx]
    headers = ["sensor", "value"] + [d.headers[i] for i in carried]
    rows = []
    for row in d.rows:
        for i, label in indices:
            rows.append(
                tuple([Cell.text(label), row[i]] + [row[j] for j in carried])
            )
    return Dataset.from_lists(headers, rows)


def rename_columns(d: Dataset, mapping: ConceptMapping) -> Dataset:
    """Rewrite mapped headers to the canonical schema; data untouched."""
    renames = mapping.renames()
    new_headers = [renames.get(h, h) for h in d.headers]
    collisions = {h for h in new_headers if new_headers.count(h) > 1}
    if collisions:
        raise SchemaError(f"rename collision on {sorted(collisions)}")
    return Dataset(tuple(new_headers), d.rows)


def _distinct_non_missing(d: Dataset, idx: int) -> list[str]:
    return sorted({cell_text(r[idx]) for r in d.rows if not r[idx].is_missing})


def generate_columns(
    d: Dataset,
    mapping: ConceptMapping,
    cfg: SynthConfig,
    specs: Mapping[str, SensorSpec] | None = None,
) -> tuple[Dataset, list[str]]:
    """Append synthetic columns for synthesizable missing concepts.

    Device/sensing-device/sensor ids are derived one per distinct location
    when ``device_per_location`` is set (a single id otherwise); min/max
    columns come from sensor specs when known, the config defaults otherwise.
    Returns the widened dataset plus the concepts that could not be
    synthesized. Existing columns are never removed or reordered.
    """
    specs = specs or {}
    present = {h.lower() for h in d.headers}
    wanted = [c for c in ("System", "Device", "SensingDevice", "Sensor") if c in mapping.missing]
    if cfg.generate_bounds:
        wanted += ["MinValue", "MaxValue"]
    to_add = [c for c in wanted if c.lower() not in present]
    excluded = [
        role for role in mapping.missing
        if role not in SYNTHESIZABLE and CANONICAL_NAMES.get(role, role).lower() not in present
    ]
    if not to_add:
        return d, excluded

    location_idx = None
    if d.has_column("location"):
        location_idx = d.column_index("location")

    def per_location_ids(prefix: str) -> list[str]:
        if cfg.device_per_location and location_idx is not None:
            locations = _distinct_non_missing(d, location_idx)
            index = {loc: k + 1 for k, loc in enumerate(locations)}
            return [
                f"{prefix}_{index.get(cell_text(r[location_idx]), 0)}"
                if not r[location_idx].is_missing
                else f"{prefix}_0"
                for r in d.rows
            ]
        return [f"{prefix}_1"] * d.n_rows

    headers = list(d.headers)
    columns: list[list[Cell]] = [list(col) for col in zip(*d.rows)] if d.rows else [
        [] for _ in d.headers
    ]

    def append(name: str, cells: list[Cell]):
        headers.append(name)
        columns.append(cells)

    for concept in to_add:
        if concept == "System":
            append("System", [Cell.text(cfg.system_id)] * d.n_rows)
        elif concept == "Device":
            append("Device", [Cell.text(v) for v in per_location_ids("device")])
        elif concept == "SensingDevice":
            append(
                "SensingDevice", [Cell.text(v) for v in per_location_ids("sensing")]
            )
        elif concept == "Sensor":
            append("sensor", [Cell.text(v) for v in per_location_ids("sensor")])
        elif concept in ("MinValue", "MaxValue"):
            sensor_cells = None
            sensor_pos = [i for i, h in enumerate(headers) if h.lower() == "sensor"]
            if sensor_pos:
                sensor_cells = columns[sensor_pos[0]]
            cells = []
            for i in range(d.n_rows):
                spec = None
                if sensor_cells is not None and not sensor_cells[i].is_missing:
                    spec = lookup_spec(specs, cell_text(sensor_cells[i]))
                if spec is not None:
                    bound = spec.min_value if concept == "MinValue" else spec.max_value
                else:
                    bound = cfg.default_min if concept == "MinValue" else cfg.default_max
                cells.append(Cell.number(bound))
            append(concept, cells)

    rows = tuple(
        tuple(columns[c][i] for c in range(len(headers))) for i in range(d.n_rows)
    )
    return Dataset(tuple(headers), rows), excluded


class KnowledgeSource(Protocol):
    """Anything that can answer 'what is this sensor model's range?'."""

    def lookup(self, sensor_model: str) -> SensorSpec | None: ...


@dataclass
class LocalFileKnowledge:
    """Sensor specs from a JSON file: {"model": {"min":..,"max":..,"unit":..}}."""

    path: str

    def lookup(self, sensor_model: str) -> SensorSpec | None:
        try:
            table = json.loads(Path(self.path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise GatewayError(f"sensor knowledge file unreadable: {exc}") from None
        entry = table.get(sensor_model)
        if not isinstance(entry, dict):
            return None
        try:
            return SensorSpec(
                sensor_model,
                float(entry["min"]),
                float(entry["max"]),
                str(entry.get("unit", "")),
            )
        except (KeyError, TypeError, ValueError):
            return None


@dataclass
class LLMKnowledge:
    """Asks the model backend for a model's range: two comma-separated numbers."""

    backend: Backend
    template: PromptTemplate = PromptTemplate(
        id="sensor_range",
        task_text=(
            "What are the minimum and maximum values the sensor model "
            "'{model}' can measure? Answer with two numbers: min, max."
        ),
        response_format=ResponseFormat.LABEL_LIST,
    )

    def lookup(self, sensor_model: str) -> SensorSpec | None:
        prompt = render_prompt(self.template, {"model": sensor_model})
        completion = complete(self.backend, prompt, ResponseFormat.LABEL_LIST)
        labels = list(completion.parsed)
        if len(labels) < 2:
            return None
        try:
            low, high = float(labels[0]), float(labels[1])
        except ValueError:
            return None
        if low > high:
            return None
        return SensorSpec(sensor_model, low, high)


def extract_sensor_info(
    sensor_model: str,
    sources: Sequence[KnowledgeSource],
    user_overrides: Mapping[str, SensorSpec] | None = None,
) -> SensorSpec | None:
    """User override wins; otherwise the first source with a usable answer.

    Source failures are logged and skipped, never fatal.
    """
    if user_overrides and sensor_model in user_overrides:
        return user_overrides[sensor_model]
    for source in sources:
        try:
            spec = source.lookup(sensor_model)
        except GatewayError as exc:
            logger.warning("sensor source failed for %r: %s", sensor_model, exc)
            continue
        if spec is not None:
            return spec
    return None


_STRUCTURAL_COLUMNS = ("system", "device", "sensingdevice", "sensor", "location")


def sanitize_for_graph(d: Dataset) -> Dataset:
    """Statistically clean a working copy before graph construction.

    Structural categorical cells are repaired to the per-sensor modal value;
    rows whose reading falls outside 1.5x IQR for the sensor are dropped from
    the copy (the caller's dataset is never modified, so detection still sees
    the original errors).
    """
    sensor_idx = d.column_index("sensor")
    structural = [
        d.column_index(name)
        for name in _STRUCTURAL_COLUMNS
        if name != "sensor" and d.has_column(name)
    ]
    value_idx = d.column_index("value") if d.has_column("value") else None

    groups: dict[str, list[int]] = {}
    for i, row in enumerate(d.rows):
        if row[sensor_idx].is_missing:
            continue
        groups.setdefault(cell_text(row[sensor_idx]), []).append(i)

    repairs: dict[tuple[int, int], Cell] = {}
    dropped: set[int] = set()
    for sensor in sorted(groups):
        rows = groups[sensor]
        for col in structural:
            counts: dict[Cell, int] = {}
            for i in rows:
                cell = d.rows[i][col]
                if not cell.is_missing:
                    counts[cell] = counts.get(cell, 0) + 1
            if not counts:
                continue
            top = max(counts.values())
            mode = min((c for c, n in counts.items() if n == top), key=cell_text)
            for i in rows:
                if d.rows[i][col] != mode:
                    repairs[(i, col)] = mode
        if value_idx is not None:
            numbers = [
                (i, float(d.rows[i][value_idx].value))
                for i in rows
                if d.rows[i][value_idx].kind is CellKind.NUMBER
            ]
            if len(numbers) >= 4:
                values = sorted(v for _, v in numbers)
                q1, _, q3 = statistics.quantiles(values, n=4, method="inclusive")
                iqr = q3 - q1
                low, high = q1 - 1.5 * iqr, q3 + 1.5 * iqr
                for i, v in numbers:
                    if not low <= v <= high:
                        dropped.add(i)

    rows_out = []
    for i, row in enumerate(d.rows):
        if i in dropped:
            continue
        if any((i, c) in repairs for c in range(d.n_cols)):
            row = tuple(repairs.get((i, c), row[c]) for c in range(d.n_cols))
        rows_out.append(row)
    return Dataset(d.headers, tuple(rows_out))


def build_iot_graph(
    d: Dataset,
    mapping: ConceptMapping | None = None,
    specs: Mapping[str, SensorSpec] | None = None,
) -> tuple[ContextGraph, list[str]]:
    """Assemble the context graph from a transformed (canonical) IoT table.

    One entity per distinct value of each structural column; edges come from
    row co-occurrence, resolved to the modal pairing with a warning when a
    source entity co-occurs with several targets. Capability metadata is
    attached from the spec map. Returns the graph plus warnings.
    """
    del mapping  # resolution happens through canonical column names
    specs = specs or {}
    warnings: list[str] = []
    graph = ContextGraph()

    col = {
        name: (d.column_index(name) if d.has_column(name) else None)
        for name in _STRUCTURAL_COLUMNS
    }

    def entities(name: str, concept: Concept) -> list[str]:
        idx = col[name]
        if idx is None:
            return []
        values = _distinct_non_missing(d, idx)
        nonlocal graph
        for v in values:
            graph = add_entity(graph, concept, v, {"label": v})
        return values

    entities("system", Concept.SYSTEM)
    entities("device", Concept.DEVICE)
    entities("sensingdevice", Concept.SENSING_DEVICE)
    entities("sensor", Concept.SENSOR)
    entities("location", Concept.LOCATION)

    def modal_edges(src: str, dst: str, predicate: str):
        nonlocal graph
        src_idx, dst_idx = col[src], col[dst]
        if src_idx is None or dst_idx is None:
            return
        pairings: dict[str, dict[str, int]] = {}
        for row in d.rows:
            if row[src_idx].is_missing or row[dst_idx].is_missing:
                continue
            a, b = cell_text(row[src_idx]), cell_text(row[dst_idx])
            pairings.setdefault(a, {})[b] = pairings.setdefault(a, {}).get(b, 0) + 1
        for a in sorted(pairings):
            targets = pairings[a]
            top = max(targets.values())
            winner = min(t for t, n in targets.items() if n == top)
            if len(targets) > 1:
                warnings.append(
                    f"{predicate}: {a!r} co-occurs with {sorted(targets)}; "
                    f"kept modal pairing {winner!r}"
                )
            graph = add_edge(graph, predicate, a, winner)

    modal_edges("sensor", "sensingdevice", ATTACHED_TO)
    modal_edges("sensingdevice", "device", ATTACHED_TO)
    modal_edges("sensingdevice", "location", DEPLOYED_AT)
    modal_edges("sensingdevice", "device", PART_OF)
    modal_edges("device", "system", PART_OF)

    if col["sensor"] is not None:
        for sensor in _distinct_non_missing(d, col["sensor"]):
            spec = lookup_spec(specs, sensor)
            if spec is not None:
                graph = add_sensor_bounds(graph, sensor, spec)
    return graph, warnings


def pair_relationships(
    headers: Sequence[str],
    backend: Backend,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> list[ColumnPairRelation]:
    """Query all unordered column pairs for relatedness, concepts, hierarchy.

    A backend failure on one pair is logged and that pair is dropped; the
    remaining pairs' results are kept.
    """
    templates = templates or DEFAULT_TEMPLATES
    pairs = list(combinations(headers, 2))
    related_prompts = [
        render_prompt(templates["pair_related"], {"col_a": a, "col_b": b})
        for a, b in pairs
    ]

    def ask_related(prompt: str):
        try:
            return complete(backend, prompt, ResponseFormat.YES_NO)
        except GatewayError as exc:
            return exc

    if backend.max_parallel > 1 and len(related_prompts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=backend.max_parallel) as pool:
            completions = list(pool.map(ask_related, related_prompts))
    else:
        completions = [ask_related(p) for p in related_prompts]

    relations: list[ColumnPairRelation] = []
    for (a, b), completion in zip(pairs, completions):
        if isinstance(completion, GatewayError):
            logger.warning("pair (%s, %s) failed: %s", a, b, completion)
            continue
        try:
            if not completion.parsed:
                relations.append(ColumnPairRelation(a, b, related=False))
                continue
            concept_a = complete(
                backend,
                render_prompt(templates["pair_concept"], {"col": a}),
                ResponseFormat.SINGLE_LABEL,
            ).parsed
            concept_b = complete(
                backend,
                render_prompt(templates["pair_concept"], {"col": b}),
                ResponseFormat.SINGLE_LABEL,
            ).parsed
            answer = complete(
                backend,
                render_prompt(
                    templates["pair_hierarchy"], {"col_a": a, "col_b": b}
                ),
                ResponseFormat.SINGLE_LABEL,
            ).parsed
            token = str(answer).strip().upper()
            hierarchy = {
                "A": Hierarchy.ATTRIBUTE_OF_A,
                "B": Hierarchy.ATTRIBUTE_OF_B,
            }.get(token, Hierarchy.INDEPENDENT)
            relations.append(
                ColumnPairRelation(
                    a, b, related=True,
                    concept_a=str(concept_a), concept_b=str(concept_b),
                    hierarchy=hierarchy,
                )
            )
        except GatewayError as exc:
            logger.warning("pair (%s, %s) failed: %s", a, b, exc)
    return relations


def build_relational_graph(relations: Sequence[ColumnPairRelation]) -> ContextGraph:
    """Column names become attribute concept nodes; hierarchies become
    part-of edges (finer concept -> coarser concept), independent related
    pairs a generic related-to edge, and similarity-annotated pairs a
    matching relation. Cyclic hierarchies are a model error.
    """
    graph = ContextGraph()
    for rel in relations:
        for column, concept in ((rel.column_a, rel.concept_a), (rel.column_b, rel.concept_b)):
            attrs: dict[str, str | float] = {"label": column}
            if rel.related and concept:
                attrs["concept"] = concept
            graph = add_entity(graph, Concept.ATTRIBUTE, column, attrs)
        if not rel.related:
            continue
        if rel.hierarchy is Hierarchy.ATTRIBUTE_OF_A:
            graph = add_edge(graph, PART_OF, rel.column_a, rel.column_b)
        elif rel.hierarchy is Hierarchy.ATTRIBUTE_OF_B:
            graph = add_edge(graph, PART_OF, rel.column_b, rel.column_a)
        elif rel.similarity_threshold is None:
            a, b = sorted((rel.column_a, rel.column_b))
            graph = add_edge(graph, RELATED_TO, a, b)
        if rel.similarity_threshold is not None:
            graph = add_edge(graph, MATCHES_WITH, rel.column_a, rel.column_b)
            graph = graph.with_triples(
                [
                    Triple(
                        node_id(rel.column_a),
                        MATCH_THRESHOLD,
                        float(rel.similarity_threshold),
                        ObjKind.NUMBER,
                    )
                ]
            )
    validate_graph(graph)
    return graph
