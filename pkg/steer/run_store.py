"""Run-directory persistence

Every file is UTF-8 JSON or JSONL with a schema_version field, keys sorted
and no timestamps, so two runs with the same inputs and seed produce
byte-identical files. Readers reject unknown schema versions; input
datasets may omit the version.
"""

import json
import os
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from .core_model import Case, CaseSplit, Descriptors, OrdinalScale, Persona, PersonaOrigin
from .errors import DomainError, SchemaVersionError

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


class _Record(BaseModel):
    model_config = ConfigDict(extra='ignore')

    schema_version: int = SCHEMA_VERSION


class CaseRecord(_Record):
    id: str
    payload: str
    split: CaseSplit = CaseSplit.AMBIGUOUS
    ground_truth: Optional[int] = None


class DescriptorRecord(BaseModel):
    bias: float
    variance: float
    safety: float
    coherence: float


class PersonaRecord(_Record):
    id: str
    prompt_text: str
    origin: PersonaOrigin = PersonaOrigin.SEED
    target_bias: Optional[float] = None
    generation_born: int = 0
    descriptors: Optional[DescriptorRecord] = None


class RatingRecord(_Record):
    case_id: str
    persona_id: str
    level: int
    rationale: str = ""


def check_version(data: Mapping, source: str, required: bool = True):
    version = data.get("schema_version")
    if version is None and not required:
        return
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{source}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    os.replace(tmp, path)


def write_json(path: PathLike, data: Mapping):
    _atomic_write(Path(path), dumps({**data, "schema_version": SCHEMA_VERSION}))


def read_json(path: PathLike) -> Dict:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DomainError(f"{path}: malformed JSON: {e}")
    if not isinstance(data, dict):
        raise DomainError(f"{path}: expected a JSON object")
    check_version(data, str(path))
    return data


def write_jsonl(path: PathLike, rows: Iterable[Mapping]):
    lines = [
        json.dumps({**row, "schema_version": SCHEMA_VERSION}, sort_keys=True, ensure_ascii=False)
        for row in rows
    ]
    _atomic_write(Path(path), "".join(line + "\n" for line in lines))


def iter_jsonl(path: PathLike, required_version: bool = True) -> Iterator[Dict]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DomainError(f"{path}:{number}: malformed JSON: {e}")
            if not isinstance(row, dict):
                raise DomainError(f"{path}:{number}: expected a JSON object")
            check_version(row, f"{path}:{number}", required_version)
            yield row


def _model(cls, row: Mapping, source: str):
    try:
        return cls.model_validate(row)
    except ValidationError as e:
        raise DomainError(f"{source}: {e.errors()[0]['loc']} {e.errors()[0]['msg']}")


def case_from_dict(row: Mapping, scale: Optional[OrdinalScale] = None, source: str = "case") -> Case:
    record = _model(CaseRecord, row, source)
    case = Case(record.id, record.payload, record.split, record.ground_truth)
    return case.validate(scale) if scale else case


def case_to_dict(case: Case) -> Dict:
    row = {"id": case.id, "payload": case.payload, "split": case.split.value}
    if case.ground_truth is not None:
        row["ground_truth"] = case.ground_truth
    return row


def read_cases(path: PathLike, scale: Optional[OrdinalScale] = None) -> List[Case]:
    cases = [
        case_from_dict(row, scale, f"{path}:{i}")
        for i, row in enumerate(iter_jsonl(path, required_version=False), 1)
    ]
    ids = [c.id for c in cases]
    if len(set(ids)) != len(ids):
        raise DomainError(f"{path}: duplicate case ids")
    return cases


def write_cases(path: PathLike, cases: Sequence[Case]):
    write_jsonl(path, [case_to_dict(c) for c in cases])


def persona_from_dict(row: Mapping, source: str = "persona") -> Persona:
    record = _model(PersonaRecord, row, source)
    descriptors = None
    if record.descriptors is not None:
        d = record.descriptors
        descriptors = Descriptors(d.bias, d.variance, d.safety, d.coherence)
    return Persona(
        id=record.id,
        prompt_text=record.prompt_text,
        origin=record.origin,
        target_bias=record.target_bias,
        descriptors=descriptors,
        generation_born=record.generation_born,
    )


def persona_to_dict(persona: Persona) -> Dict:
    row = {
        "id": persona.id,
        "prompt_text": persona.prompt_text,
        "origin": persona.origin.value,
        "target_bias": persona.target_bias,
        "generation_born": persona.generation_born,
        "descriptors": None,
    }
    if persona.descriptors is not None:
        d = persona.descriptors
        row["descriptors"] = {"bias": d.bias, "variance": d.variance, "safety": d.safety, "coherence": d.coherence}
    return row


def read_personas(path: PathLike) -> List[Persona]:
    personas = [
        persona_from_dict(row, f"{path}:{i}")
        for i, row in enumerate(iter_jsonl(path, required_version=False), 1)
    ]
    ids = [p.id for p in personas]
    if len(set(ids)) != len(ids):
        raise DomainError(f"{path}: duplicate persona ids")
    return personas


def write_personas(path: PathLike, personas: Sequence[Persona]):
    write_jsonl(path, [persona_to_dict(p) for p in personas])


def write_ratings(path: PathLike, ratings: Mapping, rationales: Optional[Mapping] = None):
    """ratings maps (case_id, persona_id) to a level; rows sorted by key."""
    rationales = rationales or {}
    write_jsonl(path, [
        {"case_id": c, "persona_id": p, "level": level, "rationale": rationales.get((c, p), "")}
        for (c, p), level in sorted(ratings.items())
    ])


def read_ratings(path: PathLike) -> Dict:
    entries = {}
    for i, row in enumerate(iter_jsonl(path), 1):
        record = _model(RatingRecord, row, f"{path}:{i}")
        entries[(record.case_id, record.persona_id)] = record.level
    return entries


class RunDirectory:
    """File layout of one evolution run."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def ensure(self) -> "RunDirectory":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def frozen_delta_path(self) -> Path:
        return self.root / "frozen_delta.json"

    @property
    def targeting_path(self) -> Path:
        return self.root / "targeting.json"

    def generation_path(self, g: int) -> Path:
        return self.root / f"generation_{g}.json"

    def pool_path(self, g: int) -> Path:
        return self.root / f"pool_{g}.jsonl"

    def ratings_path(self, g: int) -> Path:
        return self.root / f"ratings_{g}.jsonl"

    def generations(self) -> List[int]:
        """Completed generations, ascending."""
        found = []
        for path in self.root.glob("generation_*.json"):
            suffix = path.stem.split("_", 1)[1]
            if suffix.isdigit():
                found.append(int(suffix))
        return sorted(found)

    def write_frozen_delta(self, delta: float, tightened: bool, generation: int):
        write_json(self.frozen_delta_path, {"delta": delta, "tightened": tightened, "generation": generation})

    def read_frozen_delta(self) -> Optional[float]:
        if not self.frozen_delta_path.exists():
            return None
        return float(read_json(self.frozen_delta_path)["delta"])
