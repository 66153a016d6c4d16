"""On-disk formats: binary containers, result CSVs, and JSON manifests.

Binary container layout (documented also in the README):

    bytes 0..3   magic  b"FBS1"
    bytes 4..7   header length L, little-endian uint32
    bytes 8..    UTF-8 JSON header of L bytes
    remainder    payload of little-endian float64 values

Payload orders: network parameters and controls store the matrices A_0 ..
A_{K-1} row-major in cell order, then all alpha values, then all lambda
values.  Datasets store the generator matrix row-major, then the rows of B,
Y, and X0 in sample order.

CSV files are RFC-4180 with '.' decimals, LF line endings, and %.17g float
formatting so reruns reproduce files byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .dynamics import Control, NetworkParams
from .learning import Dataset

_MAGIC = b"FBS1"


def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows):
    """Write rows (iterables of str/int/float) under the fixed CSV dialect."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Read a CSV written by write_csv; returns (header, rows of strings)."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        return header, [row for row in r]


def _atomic_write_bytes(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj):
    _atomic_write_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode("utf-8") + b"\n")


def _write_container(path, header: dict, payload: np.ndarray):
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = _MAGIC + len(hdr).to_bytes(4, "little") + hdr \
        + np.ascontiguousarray(payload, dtype="<f8").tobytes()
    _atomic_write_bytes(path, blob)


def _read_container(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a FBS1 container")
        hlen = int.from_bytes(f.read(4), "little")
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f8").astype(float)
    return header, payload


def save_params(path, p: NetworkParams):
    header = {"kind": "network_params", "T": p.T, "N": p.N, "m": p.m, "n": p.n}
    payload = np.concatenate([p.A.ravel(), p.alpha, p.lam])
    _write_container(path, header, payload)


def save_control(path, u: Control):
    header = {"kind": "control", "T": u.T, "M": u.M, "m": u.m, "n": u.n}
    payload = np.concatenate([u.A.ravel(), u.alpha, u.lam])
    _write_container(path, header, payload)


def _split_param_payload(payload, K, m, n):
    sz = K * m * n
    if payload.size != sz + 2 * K:
        raise ValueError("payload size does not match header dimensions")
    A = payload[:sz].reshape(K, m, n)
    return A, payload[sz:sz + K], payload[sz + K:]


def load_params(path) -> NetworkParams:
    header, payload = _read_container(path)
    if header.get("kind") != "network_params":
        raise ValueError(f"{path}: expected network_params, found {header.get('kind')}")
    A, alpha, lam = _split_param_payload(payload, header["N"], header["m"], header["n"])
    return NetworkParams(header["T"], A, alpha, lam)


def load_control(path) -> Control:
    header, payload = _read_container(path)
    if header.get("kind") != "control":
        raise ValueError(f"{path}: expected control, found {header.get('kind')}")
    A, alpha, lam = _split_param_payload(payload, header["M"], header["m"], header["n"])
    return Control(header["T"], A, alpha, lam)


def save_dataset(path, d: Dataset):
    meta = d.meta
    header = {"kind": "dataset", "m": d.m, "n": d.n,
              "train": d.train_count, "val": d.val_count,
              "sparsity": meta.get("sparsity"), "noise_sigma": meta.get("noise_sigma"),
              "seed": meta.get("seed")}
    A_true = np.asarray(meta.get("A_true", np.zeros((d.m, d.n))), dtype=float)
    payload = np.concatenate([A_true.ravel(), d.B.ravel(), d.Y.ravel(), d.X0.ravel()])
    _write_container(path, header, payload)


def load_dataset(path) -> Dataset:
    header, payload = _read_container(path)
    if header.get("kind") != "dataset":
        raise ValueError(f"{path}: expected dataset, found {header.get('kind')}")
    m, n = header["m"], header["n"]
    total = header["train"] + header["val"]
    sizes = [m * n, total * m, total * n, total * n]
    if payload.size != sum(sizes):
        raise ValueError("payload size does not match header dimensions")
    parts = np.split(payload, np.cumsum(sizes)[:-1])
    meta = {"A_true": parts[0].reshape(m, n), "sparsity": header.get("sparsity"),
            "noise_sigma": header.get("noise_sigma"), "seed": header.get("seed")}
    return Dataset(m=m, n=n, B=parts[1].reshape(total, m),
                   Y=parts[2].reshape(total, n), X0=parts[3].reshape(total, n),
                   train_count=header["train"], val_count=header["val"], meta=meta)
