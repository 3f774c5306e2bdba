"""Checkpoint files: a textual header, the embedded model config descriptor,
and named parameter blocks as raw little-endian arrays with shapes.

Blocks keep their native dtype (f4 in training runs, f8 in verification runs)
so a save/load cycle reproduces every parameter bit-exactly.
"""

import hashlib

import numpy as np

from .autodiff import Value
from .errors import ConfigError, DataError

MAGIC = "RAINCKPT1"

_DTYPES = {"f4": "<f4", "f8": "<f8"}


def config_hash_of(config_text):
    return hashlib.sha256(config_text.encode("ascii")).hexdigest()


def save_checkpoint(path, params, config_text, step_count):
    """params: name -> Value (or ndarray). Writes blocks sorted by name."""
    cfg_bytes = config_text.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC}\n".encode("ascii"))
        fh.write(f"config_hash={config_hash_of(config_text)}\n".encode("ascii"))
        fh.write(f"step_count={int(step_count)}\n".encode("ascii"))
        fh.write(f"n_params={len(params)}\n".encode("ascii"))
        fh.write(f"config_bytes={len(cfg_bytes)}\n".encode("ascii"))
        fh.write(b"end\n")
        fh.write(cfg_bytes)
        for name in sorted(params):
            arr = params[name].data if isinstance(params[name], Value) else np.asarray(params[name])
            if arr.dtype == np.float32:
                tag, arr = "f4", arr.astype("<f4", copy=False)
            elif arr.dtype == np.float64:
                tag, arr = "f8", arr.astype("<f8", copy=False)
            else:
                raise ConfigError(f"unsupported parameter dtype {arr.dtype} for {name!r}")
            shape = ",".join(str(d) for d in arr.shape) or "0"
            payload = np.ascontiguousarray(arr).tobytes()
            fh.write(f"param {name} {tag} {shape} {len(payload)}\n".encode("ascii"))
            fh.write(payload)


def load_checkpoint(path, expected_config_text=None):
    """Returns (arrays: name -> ndarray, config_text, step_count).

    Rejects files whose embedded config hash does not match the embedded
    config, or does not match `expected_config_text` when given.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        return _parse_checkpoint(blob, path, expected_config_text)
    except (IndexError, ValueError) as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from None


def _parse_checkpoint(blob, path, expected_config_text):
    pos = 0

    def read_line():
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise DataError(f"corrupt checkpoint {path}: truncated header")
        line = blob[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        return line

    if read_line() != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    fields = {}
    while True:
        line = read_line()
        if line == "end":
            break
        key, _, value = line.partition("=")
        if not _:
            raise DataError(f"{path}: malformed header line {line!r}")
        fields[key] = value
    n_params = int(fields["n_params"])
    cfg_len = int(fields["config_bytes"])
    step_count = int(fields["step_count"])
    if pos + cfg_len > len(blob):
        raise DataError(f"{path}: truncated config block")
    config_text = blob[pos:pos + cfg_len].decode("ascii")
    pos += cfg_len
    if config_hash_of(config_text) != fields["config_hash"]:
        raise DataError(f"{path}: embedded config does not match its hash")
    if expected_config_text is not None:
        if config_hash_of(expected_config_text) != fields["config_hash"]:
            raise ConfigError(f"{path}: checkpoint config hash {fields['config_hash'][:12]}... "
                              "does not match the requested model config")

    arrays = {}
    for _ in range(n_params):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise DataError(f"{path}: truncated parameter table")
        head = blob[pos:end].decode("ascii", errors="replace").split(" ")
        pos = end + 1
        if len(head) != 5 or head[0] != "param":
            raise DataError(f"{path}: malformed parameter line {head!r}")
        _, name, tag, shape_s, nbytes_s = head
        nbytes = int(nbytes_s)
        if tag not in _DTYPES:
            raise DataError(f"{path}: unknown dtype tag {tag!r}")
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s != "0" else ()
        if pos + nbytes > len(blob):
            raise DataError(f"{path}: truncated payload for parameter {name!r}")
        arr = np.frombuffer(blob[pos:pos + nbytes], dtype=_DTYPES[tag]).reshape(shape).copy()
        pos += nbytes
        arrays[name] = arr
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes after last parameter")
    return arrays, config_text, step_count


def params_from_arrays(arrays):
    return {name: Value(arr) for name, arr in arrays.items()}
