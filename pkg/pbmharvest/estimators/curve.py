import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..exceptions import LogFormatError
from ..utils import PathLike

CURVE_COLUMNS = ["rank", "propensity", "inverse_propensity", "present"]


@dataclass(frozen=True)
class PropensityCurve:
    """Relative examination propensities p_k / p_1 for ranks 1..M.

    Ranks without enough data are absent (``None``), never 0. Rank 1 is
    exactly 1.0 by construction.

    Example:
        >>> curve = PropensityCurve.from_raw([0.8, 0.4, None])
        >>> curve[2], curve[3]
        (0.5, None)
    """

    values: Tuple[Optional[float], ...]
    method: str = ""
    diagnostics: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.values:
            raise ValueError("a propensity curve needs at least rank 1")
        if self.values[0] != 1.0:
            raise ValueError(f"rank 1 must be exactly 1.0, got {self.values[0]!r}")
        for rank, value in enumerate(self.values, start=1):
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"propensity at rank {rank} must be positive and finite, got {value!r}")

    @classmethod
    def from_raw(
        cls,
        raw: Sequence[Optional[float]],
        method: str = "",
        diagnostics: Iterable[str] = (),
    ) -> "PropensityCurve":
        """Normalize raw (unscaled) propensities by rank 1."""
        if raw[0] is None or not raw[0] > 0:
            raise ValueError("rank 1 must be present and positive to normalize")
        p1 = float(raw[0])
        values = [1.0] + [None if v is None else float(v) / p1 for v in raw[1:]]
        return cls(tuple(values), method, tuple(diagnostics))

    @property
    def M(self) -> int:
        return len(self.values)

    def __getitem__(self, rank: int) -> Optional[float]:
        if not 1 <= rank <= self.M:
            raise IndexError(f"rank {rank} outside 1..{self.M}")
        return self.values[rank - 1]

    def present(self, rank: int) -> bool:
        return self[rank] is not None

    def absent_ranks(self) -> List[int]:
        return [rank for rank, value in enumerate(self.values, start=1) if value is None]

    def is_complete(self) -> bool:
        return not self.absent_ranks()

    def inverse(self) -> Tuple[Optional[float], ...]:
        """Inverse relative propensities p_1 / p_k (the IPS weights)."""
        return tuple(None if v is None else 1.0 / v for v in self.values)

    def as_array(self) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.values], dtype=np.float64)

    def truncated(self, M: int) -> "PropensityCurve":
        return PropensityCurve(self.values[:M], self.method, self.diagnostics)

    def to_frame(self) -> pd.DataFrame:
        inverse = self.inverse()
        return pd.DataFrame(
            {
                "rank": list(range(1, self.M + 1)),
                "propensity": list(self.values),
                "inverse_propensity": list(inverse),
                "present": ["true" if v is not None else "false" for v in self.values],
            },
            columns=CURVE_COLUMNS,
        )


def write_curve(curve: PropensityCurve, path: PathLike) -> None:
    curve.to_frame().to_csv(path, index=False, lineterminator="\n")


def read_curve(path: PathLike, method: str = "") -> PropensityCurve:
    try:
        frame = pd.read_csv(path, dtype={"present": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise LogFormatError(f"malformed curve file: {e}", str(path)) from e
    missing = [c for c in CURVE_COLUMNS if c not in frame.columns]
    if missing:
        raise LogFormatError(f"curve file lacks column(s) {', '.join(missing)}", str(path))
    if list(frame["rank"]) != list(range(1, len(frame) + 1)):
        raise LogFormatError("curve ranks must be 1..M in order", str(path))
    values = []
    for row in frame.itertuples(index=False):
        present = str(row.present).strip().lower() == "true"
        values.append(float(row.propensity) if present else None)
    try:
        return PropensityCurve(tuple(values), method=method)
    except ValueError as e:
        raise LogFormatError(f"invalid curve: {e}", str(path)) from e
