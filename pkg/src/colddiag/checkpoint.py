"""Checkpoint serialization: one canonical JSON envelope per pipeline stage.

Layout:

    {
      "meta":   {seed, dim, cdm, hidden, ..., "registry": {domain: {...}}},
      "params": {"model.<name>": nested lists, "heads.<name>": ..., "emb.<domain>.<part>": ...},
      "states": {student: {domain: {"sha": [...], "spe": [...]}}},
      "target_states": {...}          # present only after adaptation
    }

Floats are written with Python's shortest round-trip repr, so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .adapt import TargetStates
from .data import TargetSplit
from .embed import EmbeddingTable
from .errors import DataValidationError
from .models import DiagnosticModel
from .pretrain import DecoupleHeads, PretrainedBundle


def _dump(obj: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(obj, handle, ensure_ascii=False, sort_keys=True, indent=1)
        handle.write("\n")


def _bundle_payload(bundle: PretrainedBundle) -> dict:
    params: dict[str, object] = {}
    for name, arr in bundle.model.params.items():
        params[f"model.{name}"] = arr.tolist()
    for name, arr in bundle.heads.params.items():
        params[f"heads.{name}"] = arr.tolist()
    for domain, table in bundle.embeddings.items():
        params[f"emb.{domain}.students"] = table.student_vecs.tolist()
        params[f"emb.{domain}.questions"] = table.question_vecs.tolist()
        params[f"emb.{domain}.concepts"] = table.concept_vecs.tolist()
    states = {
        sid: {
            domain: {
                "sha": bundle.shared_states[sid][domain].tolist(),
                "spe": bundle.specific_states[sid][domain].tolist(),
            }
            for domain in sorted(bundle.shared_states[sid])
        }
        for sid in sorted(bundle.shared_states)
    }
    return {"meta": bundle.meta, "params": params, "states": states}


def save_bundle(bundle: PretrainedBundle, path: str | Path,
                adapted: dict | None = None) -> None:
    payload = _bundle_payload(bundle)
    if adapted is not None:
        payload["target_states"] = adapted
    _dump(payload, Path(path))


def adapted_section(states: TargetStates, split: TargetSplit,
                    reference_domains: dict[str, str]) -> dict:
    return {
        "domain": states.domain_id,
        "students": states.student_order,
        "vectors": states.vectors.tolist(),
        "refined": {sid: bool(states.refined.get(sid, False)) for sid in states.student_order},
        "early_bird_ids": sorted(split.early_bird_ids),
        "unseen_ids": sorted(split.unseen_ids),
        "reference_domains": dict(sorted(reference_domains.items())),
    }


def load_bundle(path: str | Path) -> tuple[PretrainedBundle, dict | None]:
    """Rebuild a bundle (and the adapted section, when present) from JSON."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataValidationError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid checkpoint JSON ({exc})")
    for key in ("meta", "params", "states"):
        if key not in payload:
            raise DataValidationError(f"{path}: checkpoint missing section {key!r}")
    meta = payload["meta"]
    params = payload["params"]

    model_params = {
        name.split(".", 1)[1]: np.asarray(arr, dtype=np.float64)
        for name, arr in params.items()
        if name.startswith("model.")
    }
    model = DiagnosticModel(
        kind=meta["cdm"],
        dim=int(meta["dim"]),
        n_concepts=int(meta["n_concepts"]),
        hidden=tuple(meta["hidden"]),
        params=model_params,
    )
    heads = DecoupleHeads(
        dim=int(meta["dim"]),
        params={
            name.split(".", 1)[1]: np.asarray(arr, dtype=np.float64)
            for name, arr in params.items()
            if name.startswith("heads.")
        },
    )
    embeddings: dict[str, EmbeddingTable] = {}
    for domain, entry in meta["registry"].items():
        students = entry["students"]
        questions = entry["questions"]
        concepts = entry["concepts"]
        embeddings[domain] = EmbeddingTable(
            domain_id=domain,
            dim=int(meta["dim"]),
            student_index={sid: i for i, sid in enumerate(students)},
            question_index={qid: i for i, qid in enumerate(questions)},
            concept_index={cid: i for i, cid in enumerate(concepts)},
            student_vecs=np.asarray(params[f"emb.{domain}.students"], dtype=np.float64),
            question_vecs=np.asarray(params[f"emb.{domain}.questions"], dtype=np.float64),
            concept_vecs=np.asarray(params[f"emb.{domain}.concepts"], dtype=np.float64),
            masks=np.asarray(entry["masks"], dtype=np.float64),
        )

    shared: dict[str, dict[str, np.ndarray]] = {}
    specific: dict[str, dict[str, np.ndarray]] = {}
    for sid, by_domain in payload["states"].items():
        for domain, pair in by_domain.items():
            shared.setdefault(sid, {})[domain] = np.asarray(pair["sha"], dtype=np.float64)
            specific.setdefault(sid, {})[domain] = np.asarray(pair["spe"], dtype=np.float64)

    bundle = PretrainedBundle(
        model=model,
        heads=heads,
        embeddings=embeddings,
        shared_states=shared,
        specific_states=specific,
        meta=meta,
    )
    return bundle, payload.get("target_states")


def target_states_from_section(section: dict) -> tuple[TargetStates, TargetSplit, dict[str, str]]:
    states = TargetStates(
        domain_id=section["domain"],
        student_order=list(section["students"]),
        vectors=np.asarray(section["vectors"], dtype=np.float64),
        refined={sid: bool(flag) for sid, flag in section["refined"].items()},
    )
    split = TargetSplit(
        early_bird_ids=frozenset(section["early_bird_ids"]),
        unseen_ids=frozenset(section["unseen_ids"]),
        early_bird_logs=[],
    )
    return states, split, dict(section["reference_domains"])
