"""Dataset manifests: the JSON Lines contract between generation and training.

One object per line. Restoration manifests pair a corrupted input with its
clean target (`{"input": ..., "target": ...}`); classification manifests pair
an input with a binary label (`{"input": ..., "label": 0 or 1}`). Paths are
stored relative to the manifest file so a dataset directory can be moved or
compared byte-for-byte across runs.
"""

import json
import os
from dataclasses import dataclass, field

from .errors import ManifestError


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    spec: object = None          # CorruptionSpec for generated restoration sets
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def is_classification(self):
        return bool(self.entries) and "label" in self.entries[0]


def _relativize(path, base_dir):
    return os.path.relpath(os.path.abspath(path), base_dir).replace(os.sep, "/")


def write_manifest(manifest, path):
    """Write JSONL with paths relative to the manifest location.

    Every referenced file must exist at write time.
    """
    base_dir = os.path.dirname(os.path.abspath(path)) or "."
    lines = []
    for entry in manifest.entries:
        if "target" in entry:
            record = {"input": entry["input"], "target": entry["target"]}
        elif "label" in entry:
            label = int(entry["label"])
            if label not in (0, 1):
                raise ManifestError(f"label must be 0 or 1, got {entry['label']}")
            record = {"input": entry["input"], "label": label}
        else:
            raise ManifestError(f"entry needs a target or a label: {entry}")
        for key in ("input", "target"):
            if key in record:
                if not os.path.exists(record[key]):
                    raise ManifestError(f"missing file referenced by manifest: {record[key]}")
                record[key] = _relativize(record[key], base_dir)
        lines.append(json.dumps(record, sort_keys=True))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path, split="train"):
    """Read JSONL, resolving stored paths against the manifest directory."""
    base_dir = os.path.dirname(os.path.abspath(path)) or "."
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad JSON") from exc
            if "input" not in record:
                raise ManifestError(f"{path}:{lineno}: missing 'input'")
            entry = {"input": os.path.normpath(os.path.join(base_dir, record["input"]))}
            if "target" in record:
                entry["target"] = os.path.normpath(os.path.join(base_dir, record["target"]))
            elif "label" in record:
                entry["label"] = int(record["label"])
            else:
                raise ManifestError(f"{path}:{lineno}: needs 'target' or 'label'")
            entries.append(entry)
    return DatasetManifest(entries=entries, split=split)
