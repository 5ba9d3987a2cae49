"""On-disk dataset layout: ``train/valid/test.jsonl`` plus ``manifest.json``."""
import json
import os
from typing import List, Tuple

from . import __version__
from .arith import detokenize, tokenize
from .tasks import DatasetSplit, SamplePair, TaskParams

SPLITS = ("train", "valid", "test")
MANIFEST = "manifest.json"


class DatasetMissing(FileNotFoundError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_pairs(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(_dumps({"src": detokenize(p.src), "tgt": detokenize(p.tgt)}) + "\n")


def read_pairs(path) -> List[SamplePair]:
    if not os.path.exists(path):
        raise DatasetMissing(f"no such pairs file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(SamplePair(tokenize(rec["src"]), tokenize(rec["tgt"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from None
    return out


def write_dataset(split: DatasetSplit, params: TaskParams, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, pairs in split.parts().items():
        write_pairs(os.path.join(out_dir, f"{name}.jsonl"), pairs)
    manifest = {
        "tool": "editloop",
        "version": __version__,
        "params": params.as_dict(),
        "sizes": {name: len(pairs) for name, pairs in split.parts().items()},
    }
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise DatasetMissing(f"{data_dir} has no {MANIFEST}; run `editloop gen` first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_dataset(data_dir) -> Tuple[DatasetSplit, TaskParams]:
    params = TaskParams(**read_manifest(data_dir)["params"])
    split = DatasetSplit(**{name: read_pairs(os.path.join(data_dir, f"{name}.jsonl")) for name in SPLITS})
    return split, params


def resolve_split(path) -> Tuple[str, str]:
    """Accept ``DIR/test``, ``DIR/test.jsonl`` or ``DIR`` (meaning test) and return (dir, split)."""
    path = os.fspath(path)
    if os.path.isdir(path) and os.path.exists(os.path.join(path, MANIFEST)):
        return path, "test"
    base = path[:-len(".jsonl")] if path.endswith(".jsonl") else path
    data_dir, name = os.path.split(base)
    if name not in SPLITS:
        raise DatasetMissing(f"cannot tell which split {path!r} refers to")
    return data_dir or ".", name
