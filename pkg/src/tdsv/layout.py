"""Slot layout shared by sufficient statistics and the total-variability
subspace. A slot is one Gaussian: a plain mixture component ("c3") or a
state-mixture pair ("ah/1/2" = phone/state/mixture). Super-vectors stack
the slots in key order, dim values per slot."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SlotLayout:
    keys: tuple[str, ...]
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "keys", tuple(self.keys))

    @property
    def num_slots(self) -> int:
        return len(self.keys)

    @property
    def total_dim(self) -> int:
        return self.num_slots * self.dim

    def index(self, key: str) -> int:
        return self.keys.index(key)

    @classmethod
    def for_gmm(cls, num_components: int, dim: int) -> "SlotLayout":
        return cls(keys=tuple(f"c{c}" for c in range(num_components)), dim=dim)
