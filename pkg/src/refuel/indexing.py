"""Mapping between opaque state identifiers and dense table rows."""

from __future__ import annotations

from typing import Iterable

import numpy as np


class StateIndex:
    """Ordered set of state ids; row ``i`` of every state table is ``ids[i]``."""

    def __init__(self, ids: Iterable[int]):
        self.ids = tuple(int(s) for s in ids)
        self._rows = {s: i for i, s in enumerate(self.ids)}
        if len(self._rows) != len(self.ids):
            raise ValueError("duplicate state ids in index")
        ids_arr = np.asarray(self.ids, dtype=np.int64)
        self._order = np.argsort(ids_arr, kind="stable")
        self._sorted = ids_arr[self._order]

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateIndex) and self.ids == other.ids

    def __hash__(self) -> int:
        return hash(self.ids)

    def __contains__(self, s: object) -> bool:
        return s in self._rows

    def __repr__(self) -> str:
        return f"StateIndex(n={len(self.ids)})"

    def row(self, s: int) -> int:
        try:
            return self._rows[int(s)]
        except KeyError:
            raise KeyError(f"unknown state {s!r}") from None

    def rows(self, states: np.ndarray | Iterable[int]) -> np.ndarray:
        """Vectorized :meth:`row`; raises ``KeyError`` on any unknown id."""
        arr = np.asarray(states, dtype=np.int64)
        if arr.size == 0:
            return arr.astype(np.intp)
        pos = np.searchsorted(self._sorted, arr)
        pos = np.minimum(pos, len(self._sorted) - 1)
        bad = self._sorted[pos] != arr
        if np.any(bad):
            raise KeyError(f"unknown state {int(arr[bad].flat[0])!r}")
        return self._order[pos]
