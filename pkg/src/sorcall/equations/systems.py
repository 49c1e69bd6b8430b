"""Square systems of weighted estimating equations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from sorcall.errors import ConfigurationError
from sorcall.model import FloatArray


@dataclass(frozen=True)
class Block:
    """A named parameter block and its matching block of equations."""

    name: str
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Layout:
    blocks: tuple[Block, ...]

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    @property
    def labels(self) -> list[str]:
        return [f"{b.name}[{lab}]" for b in self.blocks for lab in b.labels]

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for b in self.blocks:
            out[b.name] = slice(start, start + b.size)
            start += b.size
        return out

    def split(self, params: FloatArray) -> dict[str, FloatArray]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.dim,):
            raise ConfigurationError(f"expected {self.dim} parameters, got {params.shape}")
        return {name: params[s] for name, s in self.slices().items()}

    def join(self, parts: Mapping[str, FloatArray]) -> FloatArray:
        return np.concatenate([np.atleast_1d(np.asarray(parts[b.name], float)) for b in self.blocks])

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


@dataclass(frozen=True)
class Moments:
    """Per-unit contributions on a subset of units, plus the population term.

    Units outside ``index`` contribute zero. The moment vector is
    ``sum_i w_i * contrib_i - population`` with weights summing to one.
    """

    index: np.ndarray
    contrib: FloatArray
    population: FloatArray


UnitFn = Callable[[dict[str, FloatArray]], Moments]


@dataclass(frozen=True)
class EquationSystem:
    """Exactly identified system ``g(params) = 0``.

    ``weight`` holds sampling weights normalized to sum to one. Equation block
    ``i`` is paired with parameter block ``i`` of ``full_layout``; :meth:`fix`
    relies on that pairing when it holds a block constant and drops its
    equations.
    """

    name: str
    full_layout: Layout
    unit_fn: UnitFn
    weight: FloatArray
    init_fn: Callable[[], FloatArray] | None = None
    fixed: Mapping[str, FloatArray] = field(default_factory=dict)

    @property
    def layout(self) -> Layout:
        return Layout(tuple(b for b in self.full_layout.blocks if b.name not in self.fixed))

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def n(self) -> int:
        return self.weight.shape[0]

    def _keep(self) -> np.ndarray | None:
        if not self.fixed:
            return None
        sl = self.full_layout.slices()
        return np.concatenate(
            [np.arange(sl[b.name].start, sl[b.name].stop) for b in self.layout.blocks]
        ).astype(int)

    def _evaluate(self, params: FloatArray) -> Moments:
        parts = dict(self.fixed)
        parts.update(self.layout.split(params))
        mo = self.unit_fn(parts)
        keep = self._keep()
        if keep is not None:
            mo = Moments(mo.index, mo.contrib[:, keep], mo.population[keep])
        return mo

    def __call__(self, params: FloatArray) -> FloatArray:
        mo = self._evaluate(params)
        return self.weight[mo.index] @ mo.contrib - mo.population

    def per_unit(self, params: FloatArray) -> FloatArray:
        """``(n, dim)`` per-unit estimating functions ``contrib_i - population``."""
        mo = self._evaluate(params)
        out = np.zeros((self.n, self.dim))
        out[mo.index] = mo.contrib
        return out - mo.population

    def initial(self) -> FloatArray:
        """Default starting point for the free parameters."""
        full = (
            np.zeros(self.full_layout.dim)
            if self.init_fn is None
            else np.asarray(self.init_fn(), dtype=float)
        )
        keep = self._keep()
        return full if keep is None else full[keep]

    def expand(self, params: FloatArray) -> dict[str, FloatArray]:
        """All parameter blocks, free and fixed, by name."""
        parts = dict(self.fixed)
        parts.update(self.layout.split(params))
        return {b.name: parts[b.name] for b in self.full_layout.blocks}

    def fix(self, **values: Sequence[float] | float) -> "EquationSystem":
        """Hold parameter blocks at given values and drop their equation blocks."""
        fixed = dict(self.fixed)
        for name, v in values.items():
            if name not in self.layout.names:
                raise ConfigurationError(f"no free parameter block {name!r}")
            b = self.full_layout.block(name)
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            if arr.shape == (1,) and b.size > 1:
                arr = np.full(b.size, arr[0])
            if arr.shape != (b.size,):
                raise ConfigurationError(f"{name} needs {b.size} values")
            fixed[name] = arr
        return EquationSystem(self.name, self.full_layout, self.unit_fn, self.weight,
                              self.init_fn, fixed)
