"""JSON encoding of complex scalars, vectors and matrices.

Complex numbers are written as ``[re, im]`` pairs and matrices as
row-major nested lists, so a 2x2 complex matrix becomes a list of two rows
of two pairs each.
"""

import json
from pathlib import Path

import numpy as np


def complex_to_json(z):
    z = complex(z)
    return [z.real, z.imag]


def complex_from_json(pair):
    if len(pair) != 2:
        raise ValueError(f"complex value must be a [re, im] pair, got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def array_to_json(arr):
    """Encode a complex ndarray of any rank as nested ``[re, im]`` lists."""
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def array_from_json(data):
    raw = np.asarray(data, dtype=float)
    if raw.ndim == 0 or raw.shape[-1] != 2:
        raise ValueError("complex array entries must be [re, im] pairs")
    return raw[..., 0] + 1j * raw[..., 1]


def column_to_json(vec):
    return array_to_json(np.asarray(vec).reshape(-1, 1))


def column_from_json(data):
    return array_from_json(data).reshape(-1)


def dump(obj, path):
    """Write ``obj`` as indented JSON with a trailing newline."""
    text = json.dumps(obj, indent=2, sort_keys=False)
    Path(path).write_text(text + "\n")


def load(path):
    return json.loads(Path(path).read_text())
