"""Dataset ingestion: normalized JSON dialogue files in, :class:`Dialogue` lists out.

Two readers share one schema (a top-level JSON array of dialogue records):

* :func:`parse_dbdc5` for utterance-level data whose system turns carry
  ``{"B": int, "PB": int, "NB": int}`` annotator counts;
* :func:`parse_betold` for conversation-level data whose turns are
  intent/entity pairs and whose dialogues carry a 0/1 ``conversation_label``.

:func:`serialize_dialogues` writes the same schema back, so parsing its output
reproduces the input dialogues.
"""

from __future__ import annotations

import enum
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .core import (
    HALF,
    AnnotationSet,
    BinaryLabel,
    Dialogue,
    Language,
    Speaker,
    TaskTurn,
    Turn,
)
from .errors import ContractError, JSONParseError, SchemaError

_WS = re.compile(r"\s+")


class DatasetKind(str, enum.Enum):
    UTTERANCE_LEVEL = "utterance"
    CONVERSATION_LEVEL = "conversation"


class Split(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class DatasetManifest:
    dataset_kind: DatasetKind
    file_paths: tuple[Path, ...]
    language: Language
    split: Split = Split.EVAL

    def __post_init__(self) -> None:
        if not self.file_paths:
            raise ContractError("manifest lists no files")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSON manifest; relative file paths resolve against the manifest's directory."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    try:
        return DatasetManifest(
            dataset_kind=DatasetKind(data["dataset_kind"]),
            file_paths=tuple(base / p for p in data["files"]),
            language=Language(data["language"]),
            split=Split(data.get("split", "eval")),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad manifest {path}: {exc}") from exc


def clean_text(text: str) -> str:
    return _WS.sub(" ", text).strip()


def consolidate(a: AnnotationSet) -> BinaryLabel:
    """Merge PB into B and threshold the breakdown share at 1/2 (inclusive)."""
    if a.total < 1:
        raise ContractError("cannot consolidate an annotation set with total < 1")
    p = a.fraction
    return BinaryLabel(1 if p >= HALF else 0, p)


def textualize_task_turn(t: TaskTurn) -> str:
    entities = ", ".join(t.entities) if t.entities else "none"
    return f"{t.speaker.title}: Intent: {t.intent} | Entities: {entities}"


def utterance_labels(d: Dialogue) -> list[BinaryLabel]:
    """Consolidated gold labels, one per annotated system turn, in turn order."""
    return [consolidate(t.annotations) for t in d.system_turns if t.annotations is not None]


# -- parsing -----------------------------------------------------------------


def _load_records(source: bytes | str) -> list[Any]:
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise JSONParseError(exc.msg, offset) from exc
    if not isinstance(data, list):
        raise SchemaError("top level must be a JSON array of dialogue records")
    return data


def _speaker(value: Any, did: str, idx: int) -> Speaker:
    try:
        return Speaker(str(value).lower())
    except ValueError:
        raise SchemaError(f"unknown speaker tag {value!r}", dialogue_id=did, turn_index=idx) from None


def _annotations(value: Any, did: str, idx: int) -> AnnotationSet:
    if not value:
        raise SchemaError("annotation set is empty; total must be >= 1", dialogue_id=did, turn_index=idx)
    if not isinstance(value, dict):
        raise SchemaError("annotations must be an object of B/PB/NB counts",
                          dialogue_id=did, turn_index=idx)
    try:
        counts = [int(value.get(k, 0)) for k in ("B", "PB", "NB")]
    except (TypeError, ValueError):
        raise SchemaError("annotation counts must be integers", dialogue_id=did, turn_index=idx) from None
    if min(counts) < 0:
        raise SchemaError("annotation counts must be non-negative", dialogue_id=did, turn_index=idx)
    a = AnnotationSet(*counts)
    if a.total < 1:
        raise SchemaError("annotation total must be >= 1", dialogue_id=did, turn_index=idx)
    return a


def _record_id(rec: Any, position: int) -> str:
    if not isinstance(rec, dict):
        raise SchemaError(f"record {position} is not an object")
    if "id" not in rec:
        raise SchemaError(f"record {position} has no id")
    return str(rec["id"])


def _turn_list(rec: dict, did: str) -> list[dict]:
    turns = rec.get("turns")
    if not isinstance(turns, list):
        raise SchemaError("turns must be a list", dialogue_id=did)
    return turns


def _parse_dbdc5_record(rec: Any, position: int) -> Dialogue:
    did = _record_id(rec, position)
    try:
        language = Language(rec.get("language", "en"))
    except ValueError:
        raise SchemaError(f"unknown language {rec.get('language')!r}", dialogue_id=did) from None
    turns = []
    for i, raw in enumerate(_turn_list(rec, did), start=1):
        speaker = _speaker(raw.get("speaker"), did, i)
        if "text" not in raw:
            raise SchemaError("turn has no text", dialogue_id=did, turn_index=i)
        annotations = None
        if speaker is Speaker.SYSTEM:
            if "annotations" not in raw:
                raise SchemaError("system turn is missing annotations", dialogue_id=did, turn_index=i)
            annotations = _annotations(raw["annotations"], did, i)
        elif raw.get("annotations"):
            raise SchemaError("annotations on a user turn", dialogue_id=did, turn_index=i)
        turns.append(Turn(i, speaker, clean_text(str(raw["text"])), annotations))
    label = rec.get("conversation_label")
    return Dialogue(did, language, tuple(turns), None if label is None else int(label))


def _parse_betold_record(rec: Any, position: int) -> Dialogue:
    did = _record_id(rec, position)
    label = rec.get("conversation_label")
    if label is None:
        raise SchemaError("missing conversation_label", dialogue_id=did)
    if label not in (0, 1) or isinstance(label, bool):
        raise SchemaError(f"conversation_label must be 0 or 1, got {label!r}", dialogue_id=did)
    turns = []
    for i, raw in enumerate(_turn_list(rec, did), start=1):
        speaker = _speaker(raw.get("speaker"), did, i)
        intent = clean_text(str(raw.get("intent") or ""))
        if not intent:
            raise SchemaError("task turn has no intent", dialogue_id=did, turn_index=i)
        entities = tuple(clean_text(str(e)) for e in raw.get("entities") or ())
        task = TaskTurn(speaker, intent, entities)
        turns.append(Turn(i, speaker, textualize_task_turn(task), task=task))
    return Dialogue(did, Language.ABSTRACT, tuple(turns), int(label))


def parse_dbdc5(source: bytes | str) -> list[Dialogue]:
    """Parse utterance-level dialogues; every system turn must carry annotations."""
    return [_parse_dbdc5_record(r, n) for n, r in enumerate(_load_records(source))]


def parse_betold(source: bytes | str) -> list[Dialogue]:
    """Parse conversation-level intent/entity dialogues."""
    return [_parse_betold_record(r, n) for n, r in enumerate(_load_records(source))]


def parse_file(path: str | Path, kind: DatasetKind) -> list[Dialogue]:
    data = Path(path).read_bytes()
    if kind is DatasetKind.CONVERSATION_LEVEL:
        return parse_betold(data)
    return parse_dbdc5(data)


def load_dataset(manifest: DatasetManifest, workers: int = 1) -> list[Dialogue]:
    """Parse every manifest file (optionally in parallel); results keep manifest order."""
    if workers <= 1:
        parts = [parse_file(p, manifest.dataset_kind) for p in manifest.file_paths]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda p: parse_file(p, manifest.dataset_kind), manifest.file_paths))
    dialogues = [d for part in parts for d in part]
    if manifest.dataset_kind is DatasetKind.CONVERSATION_LEVEL:
        missing = [d.id for d in dialogues if d.conversation_label is None]
        if missing:
            raise SchemaError(f"conversation-level dialogues without label: {missing}")
    return dialogues


# -- serialization -----------------------------------------------------------


def dialogue_to_record(d: Dialogue) -> dict[str, Any]:
    rec: dict[str, Any] = {"id": d.id, "language": d.language.value}
    if d.conversation_label is not None:
        rec["conversation_label"] = d.conversation_label
    turns = []
    for t in d.turns:
        out: dict[str, Any] = {"speaker": t.speaker.value}
        if t.task is not None:
            out["intent"] = t.task.intent
            out["entities"] = list(t.task.entities)
        else:
            out["text"] = t.text
        if t.annotations is not None:
            a = t.annotations
            out["annotations"] = {"B": a.breakdown, "PB": a.possible_breakdown, "NB": a.non_breakdown}
        turns.append(out)
    rec["turns"] = turns
    return rec


def serialize_dialogues(dialogues: Iterable[Dialogue]) -> bytes:
    records = [dialogue_to_record(d) for d in dialogues]
    return json.dumps(records, ensure_ascii=False, indent=2).encode("utf-8")


# -- native adapters (best effort) ---------------------------------------------

# DBDC release files tag each annotator judgement O (not a breakdown),
# T (possible breakdown) or X (breakdown).
_DBDC_TAGS = {"X": "B", "T": "PB", "O": "NB"}


def dbdc_native_to_record(native: dict[str, Any], language: str = "en") -> dict[str, Any]:
    """Convert one DBDC challenge-format dialogue into a normalized record."""
    turns = []
    for t in native.get("turns", []):
        speaker = "system" if t.get("speaker") == "S" else "user"
        out: dict[str, Any] = {"speaker": speaker, "text": t.get("utterance", "")}
        anns = t.get("annotations") or []
        if speaker == "system" and anns:
            counts = {"B": 0, "PB": 0, "NB": 0}
            for a in anns:
                counts[_DBDC_TAGS[a["breakdown"]]] += 1
            out["annotations"] = counts
        turns.append(out)
    # DBDC logs open with an unannotated system greeting
    while turns and turns[0]["speaker"] == "system" and "annotations" not in turns[0]:
        turns.pop(0)
    return {"id": str(native.get("dialogue-id", "")), "language": language, "turns": turns}
