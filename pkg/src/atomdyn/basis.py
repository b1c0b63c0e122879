"""Product basis over atoms' level lists, optionally restricted by occupation caps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .atomic import Level


@dataclass
class Basis:
    """Admissible configurations in lexicographic order of per-atom level indices.

    ``configs[i, a]`` is the level index of atom ``a`` in basis state ``i``.
    """

    level_lists: tuple[tuple[Level, ...], ...]
    configs: np.ndarray
    index: dict[tuple[int, ...], int]

    @property
    def dim(self) -> int:
        return len(self.configs)

    @property
    def n_atoms(self) -> int:
        return len(self.level_lists)

    def lookup(self, config) -> int:
        """Index of a configuration, or -1 when it is excluded."""
        return self.index.get(tuple(int(c) for c in config), -1)

    def label(self, i: int) -> str:
        return "|" + ",".join(self.level_lists[a][c].label for a, c in enumerate(self.configs[i])) + ">"

    def labels(self) -> list[str]:
        return [self.label(i) for i in range(self.dim)]

    def full_dim(self) -> int:
        return int(np.prod([len(l) for l in self.level_lists]))

    def full_indices(self) -> np.ndarray:
        """Position of every restricted state in the unrestricted product basis."""
        dims = [len(l) for l in self.level_lists]
        out = np.zeros(self.dim, dtype=np.int64)
        for a, d in enumerate(dims):
            out = out * d + self.configs[:, a]
        return out

    def restrict(self, full_state: np.ndarray) -> np.ndarray:
        """Amplitudes of a full-space vector on the restricted basis."""
        return np.asarray(full_state)[self.full_indices()]

    def embed(self, state: np.ndarray) -> np.ndarray:
        out = np.zeros(self.full_dim(), dtype=complex)
        out[self.full_indices()] = state
        return out


def build_basis(level_lists: Sequence[Sequence[Level]], maxoccupations: Sequence[tuple[Level, int]] = ()) -> Basis:
    """Enumerate product states with at most ``n`` atoms in each capped level.

    Caps match levels by value, so atoms sharing a Level object (or equal
    Levels) count towards the same cap.
    """
    lists = tuple(tuple(l) for l in level_lists)
    caps = []
    for level, n in maxoccupations:
        if n < 0:
            raise ValueError("maximum occupation must be >= 0")
        if not any(level in l for l in lists):
            raise ValueError(f"occupation cap on {level.label!r}, which no atom simulates")
        caps.append((level, int(n)))
    # per atom, per level: which caps it counts towards
    hits = [[[ci for ci, (lv, _) in enumerate(caps) if lv == level] for level in l] for l in lists]
    limits = [n for _, n in caps]
    configs: list[tuple[int, ...]] = []
    counts = [0] * len(caps)
    cur: list[int] = []

    def rec(a: int):
        if a == len(lists):
            configs.append(tuple(cur))
            return
        for li in range(len(lists[a])):
            hs = hits[a][li]
            if any(counts[c] >= limits[c] for c in hs):
                continue
            for c in hs:
                counts[c] += 1
            cur.append(li)
            rec(a + 1)
            cur.pop()
            for c in hs:
                counts[c] -= 1

    if not caps:
        grids = np.indices([len(l) for l in lists]).reshape(len(lists), -1).T
        arr = np.ascontiguousarray(grids, dtype=np.int64)
    else:
        rec(0)
        arr = np.array(configs, dtype=np.int64).reshape(len(configs), len(lists))
    index = {tuple(int(x) for x in row): i for i, row in enumerate(arr)}
    return Basis(lists, arr, index)
