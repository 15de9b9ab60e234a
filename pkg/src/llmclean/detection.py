"""Rule enforcement against datasets: cell-level error findings.

Missing-value rules scan one column; FD-style rules group rows by the
determinant column and flag every dependent cell deviating from the group's
modal value (ties broken toward the lexicographically smallest candidate, and
the mode itself is never flagged). Matching rules compare row pairs under a
normalized string-similarity metric, with prefix blocking to stay sub-
quadratic on large tables. Capability rules check sensor readings against
min/max specs; temporal rules check message ordering between linked devices.

Missing values never double-count: rows with a missing determinant are
excluded from FD grouping, and pairs touching a missing cell are skipped by
matching and temporal checks. A missing *dependent* cell does deviate from
its group's mode and is flagged.
"""

from __future__ import annotations

import json
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .dataset import Cell, CellKind, CellRef, Dataset, PlaceholderSet, cell_text
from .errors import RuleError, SchemaError
from .rules import ColumnRef, DependencyKind, Literal, OfdRule, SensorSpec

BLOCK_KEY_LEN = 4

_CORRELATION_COLUMNS = ("message", "message_id", "correlation", "correlation_id")


@dataclass(frozen=True, slots=True)
class Finding:
    cell: CellRef
    rule_id: str
    reason: str


@dataclass
class DetectionReport:
    findings: list[Finding] = field(default_factory=list)
    skipped_rules: list[tuple[str, str]] = field(default_factory=list)
    duration_ms: float = 0.0
    uncovered_sensors: int = 0

    @property
    def flagged_cells(self) -> set[tuple[int, str]]:
        return {(f.cell.row, f.cell.column) for f in self.findings}

    @property
    def per_rule_counts(self) -> dict[str, int]:
        counts: Counter[str] = Counter(f.rule_id for f in self.findings)
        return dict(sorted(counts.items()))

    def to_json(self) -> str:
        return json.dumps(
            {
                "findings": [
                    {
                        "row": f.cell.row,
                        "column": f.cell.column,
                        "rule": f.rule_id,
                        "reason": f.reason,
                    }
                    for f in self.findings
                ],
                "skipped_rules": [
                    {"rule": rule_id, "error": message}
                    for rule_id, message in self.skipped_rules
                ],
                "duration_ms": self.duration_ms,
                "flagged_cell_count": len(self.flagged_cells),
                "per_rule_counts": self.per_rule_counts,
                "uncovered_sensors": self.uncovered_sensors,
            },
            indent=2,
        )


@dataclass(frozen=True)
class SimilaritySpec:
    """Normalized string similarity: 1 - edit_distance / max_length."""

    metric: str = "levenshtein"
    threshold: float = 0.75

    def __post_init__(self):
        if self.metric != "levenshtein":
            raise ValueError(f"unknown similarity metric {self.metric!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            )
        previous = current
    return previous[-1]


def similarity(a: str, b: str) -> float:
    if a == b:
        return 1.0
    longest = max(len(a), len(b))
    return 1.0 - levenshtein(a, b) / longest


def _column_of(rule: OfdRule, operand) -> str:
    if not isinstance(operand, ColumnRef):
        raise RuleError(f"rule {rule.id!r}: expected a column reference")
    return operand.column


def fd_columns(rule: OfdRule) -> tuple[str, str]:
    """Determinant/dependent columns of an FD-shaped binary rule."""
    if len(rule.aliases) != 2 or len(rule.predicates) != 2:
        raise RuleError(f"rule {rule.id!r} is not a binary FD rule")
    eq = [p for p in rule.predicates if p.op == "EQ"]
    iq = [p for p in rule.predicates if p.op == "IQ"]
    if len(eq) != 1 or len(iq) != 1:
        raise RuleError(f"rule {rule.id!r} must pair one EQ with one IQ predicate")
    det = _column_of(rule, eq[0].left)
    if det != _column_of(rule, eq[0].right):
        raise RuleError(f"rule {rule.id!r}: EQ must compare one column across tuples")
    dep = _column_of(rule, iq[0].left)
    if dep != _column_of(rule, iq[0].right):
        raise RuleError(f"rule {rule.id!r}: IQ must compare one column across tuples")
    return det, dep


def _resolve(d: Dataset, rule: OfdRule, column: str) -> int:
    try:
        return d.column_index(column)
    except SchemaError as exc:
        raise RuleError(f"rule {rule.id!r}: {exc}") from None


def detect_missing(d: Dataset, rule: OfdRule) -> list[Finding]:
    """Enforce a unary denial rule (dataset already missing-normalized).

    A placeholder literal flags every missing cell of the column; any other
    literal flags text cells equal to it.
    """
    if len(rule.aliases) != 1 or len(rule.predicates) != 1:
        raise RuleError(f"rule {rule.id!r} is not a unary rule")
    pred = rule.predicates[0]
    if pred.op != "EQ":
        raise RuleError(f"rule {rule.id!r}: unary rules must use EQ")
    operands = (pred.left, pred.right)
    literals = [o for o in operands if isinstance(o, Literal)]
    columns = [o for o in operands if isinstance(o, ColumnRef)]
    if len(literals) != 1 or len(columns) != 1:
        raise RuleError(f"rule {rule.id!r}: unary rule needs one column and one literal")
    col_idx = _resolve(d, rule, columns[0].column)
    column_name = d.headers[col_idx]
    target_missing = PlaceholderSet.default().matches(literals[0].value)
    findings = []
    for i, row in enumerate(d.rows):
        cell = row[col_idx]
        if target_missing:
            hit = cell.is_missing
        else:
            hit = cell.kind is CellKind.TEXT and cell.value == literals[0].value
        if hit:
            findings.append(
                Finding(CellRef(i, column_name), rule.id, "missing_value")
            )
    return findings


def detect_fd_violations(d: Dataset, rule: OfdRule) -> list[Finding]:
    """Group by determinant, flag dependent cells deviating from the mode."""
    det, dep = fd_columns(rule)
    det_idx = _resolve(d, rule, det)
    dep_idx = _resolve(d, rule, dep)
    dep_name = d.headers[dep_idx]

    groups: dict[Cell, list[int]] = defaultdict(list)
    for i, row in enumerate(d.rows):
        if not row[det_idx].is_missing:
            groups[row[det_idx]].append(i)

    findings: list[Finding] = []
    for det_value in groups:
        rows = groups[det_value]
        candidates = Counter(
            d.rows[i][dep_idx] for i in rows if not d.rows[i][dep_idx].is_missing
        )
        if not candidates:
            continue
        top = max(candidates.values())
        mode = min(
            (c for c, n in candidates.items() if n == top), key=cell_text
        )
        for i in rows:
            if d.rows[i][dep_idx] != mode:
                findings.append(Finding(CellRef(i, dep_name), rule.id, "fd_violation"))
    return findings


def _sim_predicates(rule: OfdRule) -> tuple[str, float, str, float]:
    if (
        len(rule.aliases) != 2
        or len(rule.predicates) != 2
        or any(p.op != "SIM" for p in rule.predicates)
    ):
        raise RuleError(f"rule {rule.id!r} is not a binary matching rule")
    first, second = rule.predicates
    col_a = _column_of(rule, first.left)
    col_b = _column_of(rule, second.left)
    if col_a != _column_of(rule, first.right) or col_b != _column_of(rule, second.right):
        raise RuleError(f"rule {rule.id!r}: SIM must compare one column across tuples")
    return col_a, first.sim_threshold, col_b, second.sim_threshold


def detect_matching_violations(
    d: Dataset, rule: OfdRule, sim: SimilaritySpec, exact: bool = False
) -> list[Finding]:
    """Flag both dependent cells of pairs where A-similarity holds but B's fails.

    By default candidate pairs are restricted to rows sharing the first
    characters of the determinant value (cheap blocking); ``exact=True``
    enumerates all pairs.
    """
    col_a, theta_a, col_b, theta_b = _sim_predicates(rule)
    a_idx = _resolve(d, rule, col_a)
    b_idx = _resolve(d, rule, col_b)
    b_name = d.headers[b_idx]

    usable = [
        i
        for i, row in enumerate(d.rows)
        if not row[a_idx].is_missing and not row[b_idx].is_missing
    ]
    if exact:
        blocks = [usable]
    else:
        keyed: dict[str, list[int]] = defaultdict(list)
        for i in usable:
            keyed[cell_text(d.rows[i][a_idx])[:BLOCK_KEY_LEN]].append(i)
        blocks = [keyed[k] for k in sorted(keyed)]

    flagged: set[int] = set()
    for block in blocks:
        texts_a = [cell_text(d.rows[i][a_idx]) for i in block]
        texts_b = [cell_text(d.rows[i][b_idx]) for i in block]
        for x in range(len(block)):
            for y in range(x + 1, len(block)):
                ax, ay = texts_a[x], texts_a[y]
                longest = max(len(ax), len(ay))
                if longest and 1.0 - abs(len(ax) - len(ay)) / longest < theta_a:
                    continue  # length gap alone rules the pair out
                if similarity(ax, ay) < theta_a:
                    continue
                if similarity(texts_b[x], texts_b[y]) < theta_b:
                    flagged.add(block[x])
                    flagged.add(block[y])
    return [
        Finding(CellRef(i, b_name), rule.id, "matching_violation")
        for i in sorted(flagged)
    ]


def strip_instance_suffix(sensor_id: str) -> str:
    """Drop a trailing ``_<n>`` instance counter from a sensor id."""
    head, sep, tail = sensor_id.rpartition("_")
    if sep and tail.isdigit():
        return head
    return sensor_id


def lookup_spec(specs: Mapping[str, SensorSpec], sensor_id: str) -> SensorSpec | None:
    if sensor_id in specs:
        return specs[sensor_id]
    return specs.get(strip_instance_suffix(sensor_id))


def detect_capability_violations(
    d: Dataset, specs: Mapping[str, SensorSpec], rule_id: str = "capability"
) -> tuple[list[Finding], set[str]]:
    """Check sensor readings against their min/max specs (closed interval).

    Returns the findings plus the set of sensor ids present in the data but
    without any spec (reported as uncovered, never flagged).
    """
    sensor_idx = d.column_index("sensor")
    value_idx = d.column_index("value")
    value_name = d.headers[value_idx]
    findings: list[Finding] = []
    uncovered: set[str] = set()
    for i, row in enumerate(d.rows):
        sensor_cell = row[sensor_idx]
        if sensor_cell.is_missing:
            continue
        sensor_id = cell_text(sensor_cell)
        spec = lookup_spec(specs, sensor_id)
        if spec is None:
            uncovered.add(sensor_id)
            continue
        value = row[value_idx]
        if value.is_missing:
            continue
        if value.kind is not CellKind.NUMBER:
            findings.append(Finding(CellRef(i, value_name), rule_id, "type_mismatch"))
        elif not spec.min_value <= float(value.value) <= spec.max_value:
            findings.append(Finding(CellRef(i, value_name), rule_id, "capability_range"))
    return findings, uncovered


def temporal_link(rule: OfdRule) -> tuple[str, str, str]:
    """Extract (device column, from-device, to-device) out of a temporal rule."""
    if len(rule.predicates) != 2:
        raise RuleError(f"rule {rule.id!r} is not a temporal link rule")
    by_alias: dict[str, tuple[str, str]] = {}
    for pred in rule.predicates:
        if pred.op != "EQ" or not isinstance(pred.left, ColumnRef) or not isinstance(
            pred.right, Literal
        ):
            raise RuleError(f"rule {rule.id!r}: temporal rules pin each alias's device")
        by_alias[pred.left.alias] = (pred.left.column, pred.right.value)
    if set(by_alias) != set(rule.aliases):
        raise RuleError(f"rule {rule.id!r}: each alias needs a device predicate")
    column = by_alias[rule.aliases[0]][0]
    if rule.link is not None:
        return column, rule.link[0], rule.link[1]
    return column, by_alias[rule.aliases[0]][1], by_alias[rule.aliases[1]][1]


def _timestamp_value(cell: Cell) -> float | None:
    if cell.kind is CellKind.TIMESTAMP or cell.kind is CellKind.NUMBER:
        return float(cell.value)
    return None


def detect_temporal_violations(
    d: Dataset, rule: OfdRule, link: tuple[str, str] | None = None
) -> list[Finding]:
    """Flag downstream timestamp cells that do not strictly follow upstream ones.

    Rows are paired by a correlation column when one exists; otherwise the
    k-th timestamp (in ascending order) of the upstream device is compared
    with the k-th of the downstream device.
    """
    device_col, from_device, to_device = temporal_link(rule)
    if link is not None:
        from_device, to_device = link
    device_idx = _resolve(d, rule, device_col)
    try:
        ts_idx = d.column_index("timestamp")
    except SchemaError:
        raise RuleError(f"rule {rule.id!r}: dataset has no timestamp column") from None
    ts_name = d.headers[ts_idx]

    corr_idx = None
    for name in _CORRELATION_COLUMNS:
        if d.has_column(name):
            corr_idx = d.column_index(name)
            break

    def rows_for(device: str) -> list[tuple[float, int]]:
        out = []
        for i, row in enumerate(d.rows):
            if row[device_idx].is_missing or cell_text(row[device_idx]) != device:
                continue
            ts = _timestamp_value(row[ts_idx])
            if ts is not None:
                out.append((ts, i))
        return out

    findings: list[Finding] = []
    seen: set[int] = set()

    def check(t_from: float, t_to: float, downstream_row: int):
        if t_from >= t_to and downstream_row not in seen:
            seen.add(downstream_row)
            findings.append(
                Finding(CellRef(downstream_row, ts_name), rule.id, "temporal_order")
            )

    if corr_idx is not None:
        pairs: dict[str, tuple[list[tuple[float, int]], list[tuple[float, int]]]] = {}
        for i, row in enumerate(d.rows):
            if row[corr_idx].is_missing or row[device_idx].is_missing:
                continue
            ts = _timestamp_value(row[ts_idx])
            if ts is None:
                continue
            key = cell_text(row[corr_idx])
            device = cell_text(row[device_idx])
            slot = pairs.setdefault(key, ([], []))
            if device == from_device:
                slot[0].append((ts, i))
            elif device == to_device:
                slot[1].append((ts, i))
        for key in sorted(pairs):
            froms, tos = pairs[key]
            for t_from, _ in froms:
                for t_to, row_to in tos:
                    check(t_from, t_to, row_to)
    else:
        froms = sorted(rows_for(from_device))
        tos = sorted(rows_for(to_device))
        for (t_from, _), (t_to, row_to) in zip(froms, tos):
            check(t_from, t_to, row_to)

    findings.sort(key=lambda f: f.cell.row)
    return findings


def _dispatch(
    d: Dataset,
    rule: OfdRule,
    specs: Mapping[str, SensorSpec],
    sim: SimilaritySpec,
    exact_matching: bool,
) -> list[Finding]:
    kind = rule.kind
    if kind is DependencyKind.DENIAL:
        if len(rule.aliases) == 1:
            return detect_missing(d, rule)
        return detect_fd_violations(d, rule)
    if kind in (DependencyKind.DEVICE_LINK, DependencyKind.LOCALITY):
        return detect_fd_violations(d, rule)
    if kind is DependencyKind.MATCHING:
        return detect_matching_violations(d, rule, sim, exact=exact_matching)
    if kind is DependencyKind.CAPABILITY:
        sensor_id = _capability_sensor(rule)
        spec = rule.spec or lookup_spec(specs, sensor_id)
        if spec is None:
            return []
        findings, _ = detect_capability_violations(d, {sensor_id: spec}, rule.id)
        return findings
    if kind is DependencyKind.TEMPORAL:
        return detect_temporal_violations(d, rule)
    raise RuleError(f"rule {rule.id!r}: no check defined for kind {kind.value!r}")


def _capability_sensor(rule: OfdRule) -> str:
    if len(rule.predicates) != 1:
        raise RuleError(f"rule {rule.id!r} is not a capability rule")
    pred = rule.predicates[0]
    if pred.op != "EQ" or not isinstance(pred.right, Literal):
        raise RuleError(f"rule {rule.id!r}: capability rule must pin the sensor id")
    return pred.right.value


def run_all(
    d: Dataset,
    rules: Sequence[OfdRule],
    specs: Mapping[str, SensorSpec] | None = None,
    sim: SimilaritySpec | None = None,
    exact_matching: bool = False,
    parallel: int = 1,
) -> DetectionReport:
    """Enforce every rule; merge findings with (cell, rule) de-duplication.

    A rule that cannot be applied is recorded under ``skipped_rules`` and
    never aborts the remaining rules. Sensors appearing in the data with no
    spec available from any capability rule or the spec map are counted as
    uncovered.
    """
    specs = dict(specs or {})
    sim = sim or SimilaritySpec()
    merged_specs = dict(specs)
    for rule in rules:
        if rule.kind is DependencyKind.CAPABILITY and rule.spec is not None:
            try:
                merged_specs.setdefault(_capability_sensor(rule), rule.spec)
            except RuleError:
                pass

    start = time.perf_counter()
    report = DetectionReport()

    def enforce(rule: OfdRule) -> tuple[OfdRule, list[Finding] | None, str]:
        try:
            return rule, _dispatch(d, rule, merged_specs, sim, exact_matching), ""
        except RuleError as exc:
            return rule, None, str(exc)

    if parallel > 1 and len(rules) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(enforce, rules))
    else:
        outcomes = [enforce(rule) for rule in rules]

    seen: set[tuple[int, str, str]] = set()
    for rule, findings, error in outcomes:
        if findings is None:
            report.skipped_rules.append((rule.id, error))
            continue
        for f in findings:
            key = (f.cell.row, f.cell.column, f.rule_id)
            if key not in seen:
                seen.add(key)
                report.findings.append(f)

    uncovered: set[str] = set()
    if any(r.kind is DependencyKind.CAPABILITY for r in rules):
        if d.has_column("sensor"):
            sensor_idx = d.column_index("sensor")
            for row in d.rows:
                if not row[sensor_idx].is_missing:
                    sensor_id = cell_text(row[sensor_idx])
                    if lookup_spec(merged_specs, sensor_id) is None:
                        uncovered.add(sensor_id)
    report.uncovered_sensors = len(uncovered)

    report.findings.sort(key=lambda f: (f.cell.row, f.cell.column, f.rule_id))
    report.duration_ms = (time.perf_counter() - start) * 1000.0
    return report
