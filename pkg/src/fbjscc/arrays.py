"""Portable archive of named raw arrays plus a JSON manifest.

The on-disk form is a zip file holding manifest.json and one raw
little-endian binary blob per array.  Byte-exact round trips are part of
the contract: checkpoints and golden traces are compared bitwise.
"""

import json
import os
import tempfile
import zipfile

import numpy as np

from .errors import FormatError

MANIFEST_NAME = "manifest.json"


def _as_little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_array_archive(path: str, arrays: dict, manifest: dict, *,
                       format_name: str, format_version: int) -> None:
    """Atomically write arrays + manifest to `path`.

    Torch tensors are accepted and converted; every array is stored as raw
    little-endian bytes with dtype and shape recorded in the manifest.
    """
    index = {}
    blobs = {}
    for name in sorted(arrays):
        value = arrays[name]
        if hasattr(value, "detach"):  # torch tensor
            value = value.detach().cpu().numpy()
        arr = _as_little_endian(np.asarray(value))
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape)}
        blobs[name] = arr.tobytes()
    doc = {
        "format": format_name,
        "format_version": format_version,
        "manifest": manifest,
        "arrays": index,
    }
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_DEFLATED) as zf:
                zf.writestr(MANIFEST_NAME, json.dumps(doc, indent=1, sort_keys=True))
                for name in sorted(blobs):
                    zf.writestr(f"arrays/{name}.bin", blobs[name])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_array_archive(path: str, *, format_name: str, format_version: int):
    """Read back (manifest, arrays) and reject foreign or newer files."""
    if not os.path.isfile(path):
        raise FormatError(f"archive {path!r} does not exist")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            doc = json.loads(zf.read(MANIFEST_NAME))
            blobs = {
                name: zf.read(f"arrays/{name}.bin") for name in doc.get("arrays", {})
            }
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path!r} is not a valid array archive: {exc}") from exc
    if doc.get("format") != format_name:
        raise FormatError(
            f"{path!r} has format {doc.get('format')!r}, expected {format_name!r}"
        )
    if doc.get("format_version") != format_version:
        raise FormatError(
            f"{path!r} has format version {doc.get('format_version')!r}, "
            f"this build reads version {format_version}"
        )
    arrays = {}
    for name, meta in doc["arrays"].items():
        arr = np.frombuffer(blobs[name], dtype=np.dtype(meta["dtype"]))
        arrays[name] = arr.reshape(meta["shape"]).copy()
    return doc["manifest"], arrays


def read_manifest(path: str) -> dict:
    """Manifest and format header without loading array payloads."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            doc = json.loads(zf.read(MANIFEST_NAME))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path!r} is not a valid array archive: {exc}") from exc
    return doc
