import json
from pathlib import Path
from typing import Any, Callable, Dict, Generator, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from joblib import Parallel, delayed

from .exceptions import LogFormatError

T = TypeVar("T")
R = TypeVar("R")

PathLike = Union[str, Path]

# Named children of the master SeedSequence. Order is part of the
# reproducibility contract: never reorder, only append.
STREAM_WORLD = 0
STREAM_CLICKS = 1
STREAM_SWAP = 2
STREAM_BOOTSTRAP = 3
STREAM_SWEEP = 4
_NUM_STREAMS = 5


def iter_jsonl(path: PathLike) -> Generator[Tuple[int, Dict[str, Any]], None, None]:
    """
    Generator that yields every record of a line-delimited JSON file.

    Blank lines are skipped. Each record must be a JSON object.

    Args:
        path: File to read (UTF-8).

    Yields:
        Tuples of (1-based line number, decoded record).

    Raises:
        LogFormatError: If a line is not valid JSON or not an object.

    Example:
        for line_no, record in iter_jsonl("rankings.jsonl"):
            print(line_no, record["query"])
    """
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise LogFormatError(f"malformed line: {e.msg}", str(path), line_no) from e
            if not isinstance(record, dict):
                raise LogFormatError("malformed line: expected a JSON object", str(path), line_no)
            yield line_no, record


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    """Write records one per line with a fixed key order. Returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, separators=(", ", ": ")))
            f.write("\n")
            count += 1
    return count


def require_keys(record: Dict[str, Any], keys: Sequence[str], path: PathLike, line_no: int) -> None:
    missing = [k for k in keys if k not in record]
    if missing:
        raise LogFormatError(
            f"malformed line: missing field(s) {', '.join(missing)}", str(path), line_no
        )


def seed_stream(seed: int, stream: int) -> np.random.SeedSequence:
    """Return the child SeedSequence for one of the named STREAM_* streams."""
    return np.random.SeedSequence(seed).spawn(_NUM_STREAMS)[stream]


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(seed_stream(seed, stream))


def parallel_map(
    fn: Callable[..., R],
    items: Sequence[T],
    jobs: int = 1,
) -> List[R]:
    """Apply fn to every item, optionally across joblib workers.

    Results come back in item order regardless of the worker count.
    """
    if jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(item) for item in items)


def pairwise_reduce(parts: List[T], merge: Callable[[T, T], T]) -> Optional[T]:
    """Merge partial results as a balanced binary tree, left to right."""
    if not parts:
        return None
    while len(parts) > 1:
        merged = [merge(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]
