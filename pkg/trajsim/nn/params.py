"""Named trainable parameters, their gradients and the TSPS checkpoint format."""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from trajsim.errors import ConfigError, DataError, ShapeError
from trajsim.nn.tensor import Tensor
from trajsim.utils.output import atomic_write

MAGIC = b"TSPS"
VERSION = 1
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class ParamStore:
    """Ordered ``name -> Tensor`` map of leaf parameters plus same-shaped gradients."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: Union[np.ndarray, Sequence[float]]) -> Tensor:
        if name in self._params:
            raise ConfigError(f"Duplicate parameter name {name!r}")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def uniform(self, name: str, shape: Tuple[int, ...], fan_in: int,
                rng: np.random.Generator) -> Tensor:
        """Parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"Unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def num_values(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        self.grads = {}
        for tensor in self._params.values():
            tensor.grad = None

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Populate ``grads`` with d(loss)/d(param) for every parameter.

        Parameters the loss does not depend on get zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self.zero_grad()
        loss.backward()
        self.grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }
        return self.grads

    def frozen(self) -> "ParamStore":
        """Constant view sharing the current values; ops on it record no gradients."""
        view = ParamStore()
        for name, tensor in self._params.items():
            view._params[name] = Tensor(tensor.data)
        return view

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self._params.items())

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        """Replace values from ``state``; names and shapes must match exactly."""
        missing = [name for name in self._params if name not in state]
        extra = [name for name in state if name not in self._params]
        if missing or extra:
            raise DataError(f"Checkpoint parameters differ: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, tensor in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise DataError(f"Parameter {name!r} has shape {value.shape}, expected {tensor.shape}")
            tensor.data = value.copy()
        self.zero_grad()

    def save(self, path: Union[str, Path]) -> None:
        """Write a TSPS checkpoint: magic, version, count, then (name, rank, dims, payload) entries."""
        with atomic_write(path, binary=True) as f:
            f.write(MAGIC)
            f.write(_U32.pack(VERSION))
            f.write(_U32.pack(len(self._params)))
            for name, tensor in self._params.items():
                encoded = name.encode("utf-8")
                f.write(_U32.pack(len(encoded)))
                f.write(encoded)
                f.write(_U32.pack(tensor.ndim))
                for dim in tensor.shape:
                    f.write(_U64.pack(dim))
                f.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def read_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    """Parse a TSPS file into an ordered ``name -> array`` map."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    offset = 0

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(raw):
            raise DataError(f"{path}: truncated checkpoint at byte {offset}")
        chunk = raw[offset:offset + size]
        offset += size
        return chunk

    if take(4) != MAGIC:
        raise DataError(f"{path}: not a TSPS checkpoint")
    version = _U32.unpack(take(4))[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    count = _U32.unpack(take(4))[0]
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        name = take(_U32.unpack(take(4))[0]).decode("utf-8")
        rank = _U32.unpack(take(4))[0]
        shape = tuple(_U64.unpack(take(8))[0] for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after {count} entries")
    return state


def load_into(store: ParamStore, path: Union[str, Path]) -> ParamStore:
    store.load_state(read_checkpoint(path))
    return store


def max_abs_difference(a: ParamStore, b: ParamStore) -> Optional[float]:
    """Largest element-wise difference, or ``None`` when the stores are not comparable."""
    if list(a) != list(b):
        return None
    diffs = [float(np.max(np.abs(a[n].data - b[n].data), initial=0.0)) for n in a]
    return max(diffs, default=0.0)
