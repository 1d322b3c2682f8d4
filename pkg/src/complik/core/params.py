from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PartitionedParams:
    """Full parameter vector split into an interest block and a nuisance block."""

    values: np.ndarray
    interest_idx: tuple[int, ...]
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        idx = tuple(int(i) for i in np.atleast_1d(self.interest_idx))
        object.__setattr__(self, "interest_idx", idx)
        d = values.size
        if not 1 <= len(idx) <= d:
            raise ValueError(f"need 1 <= p <= d, got p={len(idx)}, d={d}")
        if len(set(idx)) != len(idx) or any(not 0 <= i < d for i in idx):
            raise ValueError(f"interest indices {idx} must be unique and within [0, {d})")
        if self.names is not None and len(self.names) != d:
            raise ValueError("names must have one entry per parameter")

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def p(self) -> int:
        return len(self.interest_idx)

    @property
    def nuisance_idx(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.d) if i not in self.interest_idx)

    @property
    def gamma(self) -> np.ndarray:
        return self.values[list(self.interest_idx)]

    @property
    def delta(self) -> np.ndarray:
        return self.values[list(self.nuisance_idx)]

    def with_values(self, values) -> PartitionedParams:
        return PartitionedParams(values, self.interest_idx, self.names)

    def with_gamma(self, gamma) -> PartitionedParams:
        v = self.values.copy()
        v[list(self.interest_idx)] = np.asarray(gamma, dtype=float).ravel()
        return self.with_values(v)

    def as_dict(self) -> dict:
        names = self.names or tuple(f"theta{i}" for i in range(self.d))
        return {n: float(v) for n, v in zip(names, self.values)}
