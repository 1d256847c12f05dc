"""Atomic writers, checkpoints and JSON-lines dumps."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoding import SocialFabricParams
from .numcore import DataError, InvalidArgument, ParamTensor

CHECKPOINT_SCHEMA = "socialfabric.checkpoint/1"


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, doc) -> None:
    _atomic_write_text(path, json.dumps(doc, sort_keys=True, separators=(",", ":")))


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    _atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def write_text(path: str | Path, text: str) -> None:
    _atomic_write_text(path, text)


def read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None


def read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{i}: invalid JSON ({exc})") from None
    return rows


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def params_to_json(params: SocialFabricParams) -> dict:
    return {
        name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
        for name, p in params.named().items()
    }


def params_from_json(arrays: dict, variant: str, beta: float) -> SocialFabricParams:
    def tensor(name):
        if name not in arrays:
            raise DataError(f"checkpoint is missing parameter {name!r}")
        a = arrays[name]
        value = np.asarray(a["data"], dtype=np.float64)
        if value.size != int(np.prod(a["shape"])):
            raise DataError(f"parameter {name!r}: data length does not match shape {a['shape']}")
        return ParamTensor(name, value.reshape(a["shape"]))

    return SocialFabricParams(
        ln_gain=tensor("ln_gain"),
        ln_bias=tensor("ln_bias"),
        W=tensor("W"),
        b=tensor("b"),
        C=tensor("C"),
        head_W=tensor("head_W"),
        head_b=tensor("head_b"),
        variant=variant,
        lang_table=tensor("lang_table") if "lang_table" in arrays else None,
        beta=beta,
    )


def save_checkpoint(path: str | Path, params: SocialFabricParams, config: dict, meta: dict) -> None:
    write_json(
        path,
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "config": config,
            "variant": params.variant,
            "beta": params.beta,
            "params": params_to_json(params),
            "meta": meta,
        },
    )


def load_checkpoint(path: str | Path, expect: dict | None = None):
    """Returns ``(params, config, meta)``.

    ``expect`` maps dimension names (F, D, K, H) to required values.
    """
    doc = read_json(path)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise DataError(f"{path}: checkpoint schema {doc.get('schema_version')!r} != {CHECKPOINT_SCHEMA!r}")
    params = params_from_json(doc["params"], doc["variant"], float(doc["beta"]))
    for key, want in (expect or {}).items():
        got = getattr(params, key)
        if want is not None and got != want:
            raise InvalidArgument(f"{path}: checkpoint {key}={got} but configuration expects {want}")
    return params, doc["config"], doc["meta"]
