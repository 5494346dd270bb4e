"""Parameter checkpoints: an ``.npz`` array bundle next to a JSON shape manifest."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``<path>.npz`` and ``<path>.json``; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "shapes": {k: list(np.shape(v)) for k, v in sorted(arrays.items())},
        "meta": meta or {},
    }
    with open(path.with_suffix(".npz"), "wb") as fh:
        np.savez(fh, **{k: np.asarray(v) for k, v in sorted(arrays.items())})
    mpath = path.with_suffix(".json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return mpath


def manifest_diff(expected: dict[str, list[int]], found: dict[str, list[int]]) -> list[str]:
    lines = []
    for k in sorted(set(expected) | set(found)):
        if k not in found:
            lines.append(f"missing {k} {expected[k]}")
        elif k not in expected:
            lines.append(f"unexpected {k} {found[k]}")
        elif list(expected[k]) != list(found[k]):
            lines.append(f"shape {k}: expected {expected[k]}, found {found[k]}")
    return lines


def load_checkpoint(path: str | Path, expected_shapes: dict[str, list[int]] | None = None
                    ) -> tuple[dict[str, np.ndarray], dict]:
    """Load arrays and manifest; mismatches raise ``CheckpointError`` listing the differences."""
    path = Path(path)
    mpath, apath = path.with_suffix(".json"), path.with_suffix(".npz")
    if not mpath.exists() or not apath.exists():
        raise CheckpointError(f"checkpoint {path} is missing {mpath.name} or {apath.name}")
    try:
        manifest = json.loads(mpath.read_text())
        with np.load(apath) as data:
            arrays = {k: data[k] for k in data.files}
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {manifest.get('version')} != {FORMAT_VERSION}")
    stored = {k: list(v.shape) for k, v in arrays.items()}
    diff = manifest_diff(manifest["shapes"], stored)
    if diff:
        raise CheckpointError("checkpoint arrays disagree with manifest: " + "; ".join(diff))
    if expected_shapes is not None:
        diff = manifest_diff(expected_shapes, manifest["shapes"])
        if diff:
            raise CheckpointError("checkpoint does not fit model: " + "; ".join(diff))
    return arrays, manifest


def write_matrix_csv(path: str | Path, w: np.ndarray) -> None:
    """Square matrix as CSV with ``row`` column and ``j<k>`` headers."""
    w = np.asarray(w)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["row", *(f"j{k}" for k in range(w.shape[1]))])
        for i, row in enumerate(w):
            out.writerow([i, *(repr(float(x)) for x in row)])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(x) for x in r[1:]] for r in rows])
