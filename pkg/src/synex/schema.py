"""Synoptic template schema, per-case attribute records, and the round-indexed store.

The template is the variable universe: each variable is either categorical
(closed list of standard values) or numeric (a unit, e.g. "cm"). A small set
of special values ("Not applicable", "Cannot be determined", "Not specified",
"Other") marks information absence and is permitted for every variable unless
the template restricts it.

The record store keeps one attribute vector per (case, round), with
convergence status and fill-forward semantics for cases that stopped changing.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping, Union

SPECIAL_VALUES = ("Not applicable", "Cannot be determined", "Not specified", "Other")

# Units for which negative magnitudes are rejected.
LENGTH_UNITS = frozenset({"cm", "mm", "m"})

NUMERIC_TOLERANCE = 1e-9

Value = Union[str, int, float]


class SchemaError(ValueError):
    """Malformed template, record, or store access."""


class UnknownVariable(SchemaError):
    pass


class UnknownCase(SchemaError):
    pass


class RoundMissing(SchemaError):
    """A round index was read before it was written."""


class NotConverged(SchemaError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    """One synoptic data element: a name plus its value space."""

    name: str
    kind: str  # "categorical" | "numeric"
    standard_values: tuple[str, ...] = ()
    unit: str = ""
    special_values: tuple[str, ...] = SPECIAL_VALUES

    def __post_init__(self) -> None:
        if self.kind not in ("categorical", "numeric"):
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.standard_values:
                raise SchemaError(f"variable {self.name!r}: empty value list")
            if len(set(self.standard_values)) != len(self.standard_values):
                raise SchemaError(f"variable {self.name!r}: duplicate standard values")
        elif self.standard_values:
            raise SchemaError(f"numeric variable {self.name!r} must not list standard values")
        unknown = set(self.special_values) - set(SPECIAL_VALUES)
        if unknown:
            raise SchemaError(f"variable {self.name!r}: unrecognized special values {sorted(unknown)}")
        # Specials shadowed by the standard list are treated as standard values.
        overlap = set(self.special_values) & set(self.standard_values)
        if overlap:
            object.__setattr__(
                self,
                "special_values",
                tuple(v for v in self.special_values if v not in overlap),
            )


@dataclass(frozen=True)
class TemplateSchema:
    """Ordered collection of variable specs; iteration order is declaration order."""

    variables: Mapping[str, VariableSpec]
    version: str = ""

    def __post_init__(self) -> None:
        for name, spec in self.variables.items():
            if name != spec.name:
                raise SchemaError(f"key {name!r} does not match spec name {spec.name!r}")

    def __iter__(self) -> Iterator[VariableSpec]:
        return iter(self.variables.values())

    def __len__(self) -> int:
        return len(self.variables)

    def __contains__(self, name: str) -> bool:
        return name in self.variables

    def spec(self, name: str) -> VariableSpec:
        try:
            return self.variables[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.variables.keys())


@dataclass(frozen=True)
class CaseInput:
    """One input case: an id and its free-text note (gross description)."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("case id must be non-empty")
        if not self.text:
            raise SchemaError(f"case {self.id!r}: text must be non-empty")


@dataclass(frozen=True)
class AttributeRecord:
    """A single variable assignment with its supporting evidence and belief."""

    value: Value
    evidence: tuple[str, ...] = ()
    explanation: str = ""
    belief: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.belief <= 1.0:
            raise SchemaError(f"belief {self.belief} outside [0, 1]")
        if isinstance(self.value, (int, float)) and not isinstance(self.value, bool):
            if not math.isfinite(self.value):
                raise SchemaError(f"non-finite numeric value {self.value!r}")


@dataclass(frozen=True)
class AttributeVector:
    """Per-case assignment of variables to attribute records."""

    assignments: Mapping[str, AttributeRecord]

    def __contains__(self, var: str) -> bool:
        return var in self.assignments

    def record(self, var: str) -> AttributeRecord:
        return self.assignments[var]

    def value(self, var: str) -> Value:
        return self.assignments[var].value

    def values(self) -> dict[str, Value]:
        return {var: rec.value for var, rec in self.assignments.items()}

    @classmethod
    def from_values(cls, values: Mapping[str, Value], belief: float = 1.0) -> "AttributeVector":
        return cls({var: AttributeRecord(value=v, belief=belief) for var, v in values.items()})


def canonical_value(value: Value) -> Value:
    """Trim strings and collapse numeric-looking values to floats for comparison."""
    if isinstance(value, str):
        stripped = value.strip()
        try:
            number = float(stripped)
        except ValueError:
            return stripped
        if math.isfinite(number):
            return number
        return stripped
    if isinstance(value, bool):
        return value
    return float(value)


def values_equal(a: Value, b: Value) -> bool:
    ca, cb = canonical_value(a), canonical_value(b)
    if isinstance(ca, float) and isinstance(cb, float):
        return abs(ca - cb) <= NUMERIC_TOLERANCE
    return ca == cb


def diff_vectors(a: AttributeVector, b: AttributeVector) -> set[str]:
    """Variables whose value fields differ between two vectors.

    Evidence, explanation, and belief are ignored. Numeric values are compared
    after canonical parse with tolerance; a variable present on only one side
    counts as differing.
    """
    differing: set[str] = set()
    for var in set(a.assignments) | set(b.assignments):
        if var not in a.assignments or var not in b.assignments:
            differing.add(var)
        elif not values_equal(a.value(var), b.value(var)):
            differing.add(var)
    return differing


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of checking a raw value against a variable's value space."""

    kind: str  # "standard" | "special" | "numeric" | "non_standard"
    value: Value

    @property
    def is_standard(self) -> bool:
        return self.kind == "standard"

    @property
    def is_special(self) -> bool:
        return self.kind == "special"


def validate_value(schema: TemplateSchema, var: str, raw: str) -> ValidationResult:
    """Classify a raw string for a variable.

    Matching is exact after whitespace trim and case-sensitive for standard
    values. Numeric variables parse the value as a finite number; negative
    magnitudes of length units are rejected as non-standard.
    """
    spec = schema.spec(var)
    trimmed = raw.strip() if isinstance(raw, str) else raw
    if isinstance(trimmed, str):
        if trimmed in spec.standard_values:
            return ValidationResult("standard", trimmed)
        if trimmed in spec.special_values:
            return ValidationResult("special", trimmed)
    if spec.kind == "numeric":
        try:
            number = float(trimmed)
        except (TypeError, ValueError):
            return ValidationResult("non_standard", raw)
        if not math.isfinite(number):
            return ValidationResult("non_standard", raw)
        if spec.unit in LENGTH_UNITS and number < 0:
            return ValidationResult("non_standard", raw)
        return ValidationResult("numeric", number)
    return ValidationResult("non_standard", raw)


def load_template(source: IO[bytes] | bytes | str) -> TemplateSchema:
    """Parse a template document into a schema, preserving declaration order.

    Format: a JSON object mapping variable name to either a list of standard
    values (categorical) or an object {"type": "numeric", "unit": "cm"}.
    The object form also accepts {"type": "categorical", "values": [...]} and
    an optional "special_values" list restricting the permitted specials.
    """
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = source
    if isinstance(data, bytes):
        data = data.decode("utf-8")

    def reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key, value in pairs:
            if key in out:
                raise SchemaError(f"duplicate variable {key!r}")
            out[key] = value
        return out

    try:
        doc = json.loads(data, object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed template document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("template document must be a JSON object")

    variables: dict[str, VariableSpec] = {}
    for name, entry in doc.items():
        if name == "__version__":
            continue
        if isinstance(entry, list):
            if not all(isinstance(v, str) for v in entry):
                raise SchemaError(f"variable {name!r}: standard values must be strings")
            variables[name] = VariableSpec(name=name, kind="categorical", standard_values=tuple(entry))
        elif isinstance(entry, dict):
            kind = entry.get("type")
            specials = tuple(entry.get("special_values", SPECIAL_VALUES))
            if kind == "numeric":
                variables[name] = VariableSpec(
                    name=name, kind="numeric", unit=str(entry.get("unit", "")), special_values=specials
                )
            elif kind == "categorical":
                values = entry.get("values", [])
                variables[name] = VariableSpec(
                    name=name, kind="categorical", standard_values=tuple(values), special_values=specials
                )
            else:
                raise SchemaError(f"variable {name!r}: unknown type {kind!r}")
        else:
            raise SchemaError(f"variable {name!r}: expected list or object, got {type(entry).__name__}")
    version = str(doc.get("__version__", ""))
    return TemplateSchema(variables=variables, version=version)


def load_cases(source: IO[bytes] | bytes | str) -> list[CaseInput]:
    """Read a JSON-lines cases file of {"id", "text"} objects."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = source
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    cases: list[CaseInput] = []
    seen: set[str] = set()
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"cases line {lineno}: malformed JSON: {exc}") from exc
        case = CaseInput(id=str(obj.get("id", "")), text=str(obj.get("text", "")))
        if case.id in seen:
            raise SchemaError(f"cases line {lineno}: duplicate case id {case.id!r}")
        seen.add(case.id)
        cases.append(case)
    return cases


class RecordStore:
    """Round-indexed attribute vectors per case, plus convergence status.

    Round indices are contiguous from 0; reading a missing round raises.
    Appends for distinct cases may run concurrently; same-case writes must be
    serialized by the caller (the engine runs one worker per case per round).
    """

    def __init__(self) -> None:
        self._rounds: dict[str, list[AttributeVector]] = {}
        self._converged: dict[str, int] = {}
        self._lock = threading.Lock()
        self.errors: dict[str, str] = {}

    def cases(self) -> tuple[str, ...]:
        return tuple(self._rounds.keys())

    def has_case(self, case: str) -> bool:
        return case in self._rounds

    def n_rounds(self, case: str) -> int:
        self._require_case(case)
        return len(self._rounds[case])

    def converged_at(self, case: str) -> int:
        self._require_case(case)
        return self._converged[case]

    def mark_converged(self, case: str, round: int) -> None:
        self._require_case(case)
        if round <= 0:
            raise SchemaError("convergence round must be positive")
        self._converged[case] = round

    def vector(self, case: str, round: int) -> AttributeVector:
        self._require_case(case)
        rounds = self._rounds[case]
        if not 0 <= round < len(rounds):
            raise RoundMissing(f"case {case!r} has no round {round}")
        return rounds[round]

    def set_round(self, case: str, round: int, vector: AttributeVector) -> None:
        """Write a vector at `round`; must append contiguously or overwrite."""
        with self._lock:
            rounds = self._rounds.setdefault(case, [])
            self._converged.setdefault(case, 0)
            if round == len(rounds):
                rounds.append(vector)
            elif 0 <= round < len(rounds):
                rounds[round] = vector
            else:
                raise RoundMissing(
                    f"case {case!r}: cannot write round {round} with only {len(rounds)} rounds stored"
                )

    def append_round(self, case: str, vector: AttributeVector) -> int:
        with self._lock:
            rounds = self._rounds.setdefault(case, [])
            self._converged.setdefault(case, 0)
            rounds.append(vector)
            return len(rounds) - 1

    def _require_case(self, case: str) -> None:
        if case not in self._rounds:
            raise UnknownCase(f"unknown case {case!r}")


def last_rounds(store: RecordStore, case: str, p: int) -> list[AttributeVector]:
    """Up to `p` most recent vectors for a case, oldest first."""
    if p <= 0:
        raise SchemaError("p must be positive")
    n = store.n_rounds(case)
    if n == 0:
        raise RoundMissing(f"case {case!r} has no rounds")
    start = max(0, n - p)
    return [store.vector(case, r) for r in range(start, n)]


def fill_forward(store: RecordStore, case: str, round: int) -> None:
    """Copy the converged vector's values into `round` for a converged case."""
    converged = store.converged_at(case)
    if converged <= 0:
        raise NotConverged(f"case {case!r} has not converged")
    if round <= converged:
        raise SchemaError(f"fill round {round} must follow convergence round {converged}")
    source = store.vector(case, converged)
    store.set_round(case, round, source)


def write_records(store: RecordStore, sink: IO[str] | Path | str) -> None:
    """Persist a store as JSON lines, one (case, round) object per line."""
    own = isinstance(sink, (str, Path))
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        for case in store.cases():
            converged = store.converged_at(case)
            for round in range(store.n_rounds(case)):
                vec = store.vector(case, round)
                line = {
                    "case_id": case,
                    "round": round,
                    "values": {v: r.value for v, r in vec.assignments.items()},
                    "evidence": {v: list(r.evidence) for v, r in vec.assignments.items()},
                    "explanations": {v: r.explanation for v, r in vec.assignments.items()},
                    "beliefs": {v: r.belief for v, r in vec.assignments.items()},
                    "flags": {v: list(r.flags) for v, r in vec.assignments.items() if r.flags},
                    "converged_at": converged,
                }
                fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    finally:
        if own:
            fh.close()


def read_records(source: IO[str] | Path | str) -> RecordStore:
    """Load a store from the JSON-lines format written by write_records."""
    own = isinstance(source, (str, Path))
    fh = open(source, "r", encoding="utf-8") if own else source
    store = RecordStore()
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"records line {lineno}: malformed JSON: {exc}") from exc
            case = obj["case_id"]
            round = int(obj["round"])
            values = obj.get("values", {})
            evidence = obj.get("evidence", {})
            explanations = obj.get("explanations", {})
            beliefs = obj.get("beliefs", {})
            flags = obj.get("flags", {})
            assignments = {
                var: AttributeRecord(
                    value=value,
                    evidence=tuple(evidence.get(var, ())),
                    explanation=explanations.get(var, ""),
                    belief=float(beliefs.get(var, 0.0)),
                    flags=tuple(flags.get(var, ())),
                )
                for var, value in values.items()
            }
            store.set_round(case, round, AttributeVector(assignments))
            converged = int(obj.get("converged_at", 0))
            if converged > 0:
                store.mark_converged(case, converged)
    finally:
        if own:
            fh.close()
    return store


def iter_round(store: RecordStore, round: int) -> Iterable[tuple[str, AttributeVector]]:
    """(case, vector) pairs at a round, for cases that reached it."""
    for case in store.cases():
        if store.n_rounds(case) > round:
            yield case, store.vector(case, round)
