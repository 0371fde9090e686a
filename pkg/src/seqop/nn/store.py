"""Named parameter tensors with Adam moments and a bit-exact on-disk form.

On disk a store is two files: ``<stem>.json`` describing every entry and
``<stem>.bin`` holding the little-endian float data back to back. Each entry
records its byte offset; when optimizer state is saved the first and second
moments follow the values of the same entry.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ParamStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=self.dtype, order="C")
        self._values[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self._values[name]

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    @property
    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def moments(self, name):
        return self._m[name], self._v[name]

    def count(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, val in self._values.items():
            out.add(name, val)
            out._m[name][...] = self._m[name]
            out._v[name][...] = self._v[name]
        out.step = self.step
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def equal(self, other: "ParamStore") -> bool:
        """Bitwise equality of names, shapes, values and optimizer state."""
        if self.names != other.names or self.dtype != other.dtype or self.step != other.step:
            return False
        for n in self.names:
            for a, b in ((self[n], other[n]), (self._m[n], other._m[n]), (self._v[n], other._v[n])):
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True

    def save(self, stem, optimizer_state: bool = True) -> None:
        stem = Path(stem)
        le = self.dtype.newbyteorder("<")
        entries, chunks, offset = [], [], 0
        for name, val in self._values.items():
            entry = {"name": name, "shape": list(val.shape), "offset": offset}
            parts = [val]
            if optimizer_state:
                parts += [self._m[name], self._v[name]]
            for p in parts:
                b = p.astype(le).tobytes()
                chunks.append(b)
                offset += len(b)
            entries.append(entry)
        manifest = {
            "format_version": FORMAT_VERSION,
            "dtype": le.str,
            "optimizer_state": optimizer_state,
            "step": self.step,
            "entries": entries,
        }
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")
        stem.with_suffix(".bin").write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, stem) -> "ParamStore":
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format {manifest.get('format_version')!r}")
        le = np.dtype(manifest["dtype"])
        blob = stem.with_suffix(".bin").read_bytes()
        store = cls(le.newbyteorder("="))
        with_opt = manifest["optimizer_state"]
        for e in manifest["entries"]:
            shape = tuple(e["shape"])
            n = int(np.prod(shape, dtype=np.int64))
            off = e["offset"]

            def take(k):
                start = off + k * n * le.itemsize
                return np.frombuffer(blob, dtype=le, count=n, offset=start).reshape(shape)

            store.add(e["name"], take(0))
            if with_opt:
                store._m[e["name"]][...] = take(1)
                store._v[e["name"]][...] = take(2)
        store.step = manifest["step"]
        return store
