"""Named parameter registry plus a flat-file checkpoint format.

A checkpoint is a directory holding two files:

  manifest.txt   one line per parameter: ``name shape dtype offset``
                 (shape is comma-joined, offset is the byte position of the
                 parameter's data inside params.bin)
  params.bin     raw little-endian values, concatenated in manifest order

The format is deliberately dumb: diffable manifest, no pickling, and the
blob can be inspected with nothing but np.fromfile.
"""

from __future__ import annotations

import os

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor registry for trainable parameters."""

    def __init__(self, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        self._params: dict[str, Tensor] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def randn(self, name: str, shape, scale: float = 1.0) -> Tensor:
        return self.add(name, self.rng.standard_normal(shape) * scale)

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def full(self, name: str, shape, value: float) -> Tensor:
        return self.add(name, np.full(shape, float(value)))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        """Total scalar parameter count."""
        return sum(t.size for t in self._params.values())

    def astype(self, dtype) -> "ParamStore":
        """Return a copy of the store with values cast to ``dtype``."""
        out = ParamStore(dtype=dtype)
        for name, t in self._params.items():
            out.add(name, t.data)
        return out

    # -- checkpoint ---------------------------------------------------------

    def save(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)
        lines = []
        offset = 0
        with open(os.path.join(path, "params.bin"), "wb") as blob:
            for name, t in self._params.items():
                arr = np.asarray(t.data)  # tobytes() below handles C-ordering
                le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
                shape = ",".join(str(n) for n in arr.shape) if arr.ndim else "scalar"
                lines.append(f"{name} {shape} {arr.dtype.name} {offset}")
                blob.write(le.tobytes())
                offset += arr.nbytes
        with open(os.path.join(path, "manifest.txt"), "w") as mf:
            mf.write("\n".join(lines) + "\n")

    def load(self, path: str) -> None:
        """Overwrite current values in place from a checkpoint directory.

        Every manifest entry must match an existing parameter's name and
        shape; dtypes are cast to the store dtype.
        """
        manifest = os.path.join(path, "manifest.txt")
        blobfile = os.path.join(path, "params.bin")
        if not os.path.isfile(manifest) or not os.path.isfile(blobfile):
            raise FileNotFoundError(f"no checkpoint at {path}")
        with open(blobfile, "rb") as f:
            blob = f.read()
        seen = set()
        with open(manifest) as mf:
            for line in mf:
                line = line.strip()
                if not line:
                    continue
                name, shape_s, dtype_s, offset_s = line.split()
                if name not in self._params:
                    raise KeyError(f"checkpoint parameter {name!r} not in model")
                shape = () if shape_s == "scalar" else tuple(
                    int(n) for n in shape_s.split(","))
                t = self._params[name]
                if t.data.shape != shape:
                    raise ValueError(
                        f"shape mismatch for {name!r}: model {t.data.shape}, "
                        f"checkpoint {shape}")
                dt = np.dtype(dtype_s).newbyteorder("<")
                off = int(offset_s)
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(blob, dtype=dt, count=count, offset=off)
                t.data = arr.reshape(shape).astype(self.dtype)
                seen.add(name)
        missing = set(self._params) - seen
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
