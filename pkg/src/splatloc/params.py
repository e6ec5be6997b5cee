"""Learnable-weight container, Adam updates, and on-disk serialization."""

from __future__ import annotations

import json
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"SPLATLOC-PARAMS-1\n"


class OptimizerStateError(RuntimeError):
    """A weight is missing its gradient (or other optimizer-state problem)."""


class ModelParams:
    """Named map of weights plus Adam moments and step count.

    Weight names are dotted paths (e.g. ``enc3d.stage1.layer1.w0``); names
    must be unique and are kept in insertion order for deterministic
    iteration.
    """

    def __init__(self, dtype=np.float64):
        self.weights: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.dtype = np.dtype(dtype)

    def add(self, name, array):
        if name in self.weights:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True, name=name)
        self.weights[name] = t
        self.m[name] = np.zeros(t.shape, dtype=self.dtype)
        self.v[name] = np.zeros(t.shape, dtype=self.dtype)
        return t

    def __getitem__(self, name):
        return self.weights[name]

    def __contains__(self, name):
        return name in self.weights

    def names(self):
        return list(self.weights)

    def tensors(self):
        return list(self.weights.values())

    def zero_grad(self):
        for t in self.weights.values():
            t.grad = None

    def finite(self):
        return all(np.isfinite(t.data).all() for t in self.weights.values())

    # -- optimizer -----------------------------------------------------------
    def adam_step(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        for name, t in self.weights.items():
            if t.grad is None:
                raise OptimizerStateError(f"parameter {name!r} has no gradient")
        self.step += 1
        t_ = self.step
        for name, w in self.weights.items():
            g = w.grad
            self.m[name] = beta1 * self.m[name] + (1 - beta1) * g
            self.v[name] = beta2 * self.v[name] + (1 - beta2) * (g * g)
            mhat = self.m[name] / (1 - beta1**t_)
            vhat = self.v[name] / (1 - beta2**t_)
            w.data = w.data - lr * mhat / (np.sqrt(vhat) + eps)
            w.grad = None

    # -- serialization -------------------------------------------------------
    def save(self, path):
        entries = []
        offset = 0
        blobs = []
        for prefix, store in (("w", self.weights), ("m", self.m), ("v", self.v)):
            for name, val in store.items():
                arr = val.data if isinstance(val, Tensor) else val
                raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
                entries.append(
                    {
                        "name": f"{prefix}:{name}",
                        "shape": list(arr.shape),
                        "dtype": arr.dtype.str.lstrip("<>=|"),
                        "offset": offset,
                        "nbytes": len(raw),
                    }
                )
                blobs.append(raw)
                offset += len(raw)
        header = json.dumps({"step": self.step, "dtype": self.dtype.str.lstrip("<>=|"), "entries": entries}).encode()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in blobs:
                f.write(raw)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            magic = f.read(len(MAGIC))
            if magic != MAGIC:
                raise ValueError(f"{path}: not a splatloc parameter file")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode())
            payload = f.read()
        params = cls(dtype=np.dtype(header["dtype"]))
        params.step = header["step"]
        for e in header["entries"]:
            dt = np.dtype(e["dtype"]).newbyteorder("<")
            arr = np.frombuffer(payload, dtype=dt, count=int(np.prod(e["shape"])) if e["shape"] else 1, offset=e["offset"])
            arr = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]))
            prefix, name = e["name"].split(":", 1)
            if prefix == "w":
                t = Tensor(arr.copy(), requires_grad=True, name=name)
                params.weights[name] = t
            elif prefix == "m":
                params.m[name] = arr.copy()
            else:
                params.v[name] = arr.copy()
        return params


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
