"""Named parameter registry and checkpoint I/O."""

from __future__ import annotations

import hashlib

import numpy as np

from ..container import read_arrays, write_arrays
from ..errors import ContractError
from .value import Value


class ParamStore:
    """Ordered map from dotted parameter path to a trainable ``Value``."""

    def __init__(self):
        self._params: dict[str, Value] = {}

    def add(self, name: str, data) -> Value:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        v = Value(np.array(data, dtype=np.float64), requires_grad=True, op="param")
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(v.data.size for v in self._params.values())

    def zero_grad(self):
        for v in self._params.values():
            v.grad = None

    def grad(self, name: str) -> np.ndarray:
        """Gradient of ``name``; a parameter the loss never touched reads as zeros."""
        v = self._params[name]
        return np.zeros_like(v.data) if v.grad is None else v.grad

    def has_grads(self) -> bool:
        return any(v.grad is not None for v in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in self._params.items():
            if state[k].shape != v.data.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {v.data.shape}")
            v.data = np.array(state[k], dtype=np.float64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self._params.items():
            h.update(k.encode())
            h.update(str(v.data.shape).encode())
            h.update(np.ascontiguousarray(v.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path, meta: dict | None = None):
        write_arrays(path, {k: v.data for k, v in self._params.items()}, meta)

    def load(self, path) -> dict:
        arrays, meta = read_arrays(path)
        self.load_state(arrays)
        return meta
