"""Result serialization: CSV curves, JSON verdicts, plot data, and the
columnar binary ensemble format.

All floating-point CSV output is rendered with 17 significant digits so
repeated runs of the same configuration are byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .sde import Ensemble

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Verdict:
    """One pass/fail comparison: |lhs - rhs| <= tolerance."""

    name: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def make_verdict(name: str, lhs: float, rhs: float, tolerance: float) -> Verdict:
    return Verdict(name, float(lhs), float(rhs), float(tolerance),
                   bool(abs(lhs - rhs) <= tolerance))


def write_curve_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    """CSV with one row per sample, e.g. header ['t','value','se']."""
    path = Path(path)
    try:
        cols = [np.asarray(c, dtype=float) for c in columns]
        n = len(cols[0])
        lines = [",".join(header)]
        for i in range(n):
            lines.append(",".join(FLOAT_FMT % c[i] for c in cols))
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_curve_csv(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return {name: data[:, k] for k, name in enumerate(header)}


def write_matrix_csv(path, row_label: str, row_values, col_labels, matrix) -> None:
    """Matrix CSV: first column the row value (e.g. epsilon), one column per
    requested time."""
    path = Path(path)
    try:
        head = [row_label] + [FLOAT_FMT % c for c in col_labels]
        lines = [",".join(head)]
        matrix = np.asarray(matrix, dtype=float)
        for rv, row in zip(row_values, matrix):
            lines.append(",".join([FLOAT_FMT % rv] + [FLOAT_FMT % x for x in row]))
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_plot_data(path, columns: list[np.ndarray]) -> None:
    """Whitespace-separated x y [yerr] block for generic plotting tools."""
    path = Path(path)
    try:
        cols = [np.asarray(c, dtype=float) for c in columns]
        lines = [" ".join(FLOAT_FMT % c[i] for c in cols) for i in range(len(cols[0]))]
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_verdicts_json(path, verdicts, extra: dict | None = None) -> None:
    doc = {"verdicts": [v.to_dict() for v in verdicts]}
    if extra:
        doc.update(extra)
    try:
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_verdicts_json(path) -> dict:
    return json.loads(Path(path).read_text())


_MAGIC = b"LGRENS01"
_TAGLEN = 24


def ensemble_save(path, ens: Ensemble) -> None:
    """Columnar binary format: fixed header (dims, record dt, stride seed,
    epsilon, dynamics tag) followed by little-endian float64 times and
    states (path-major)."""
    path = Path(path)
    tag = ens.dynamics_tag.encode()[:_TAGLEN].ljust(_TAGLEN, b"\0")
    n_paths, n_rec, dim = ens.states.shape
    dt_rec = float(ens.times[1] - ens.times[0]) if n_rec > 1 else 0.0
    header = _MAGIC + struct.pack(
        "<qqqdqd", n_paths, n_rec, dim, dt_rec, int(ens.seed), float(ens.epsilon)
    ) + tag
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(ens.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def ensemble_load(path) -> Ensemble:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise IoFailure("not an ensemble file")
    off = len(_MAGIC)
    n_paths, n_rec, dim, _dt, seed, epsilon = struct.unpack_from("<qqqdqd", raw, off)
    off += struct.calcsize("<qqqdqd")
    tag = raw[off:off + _TAGLEN].rstrip(b"\0").decode()
    off += _TAGLEN
    times = np.frombuffer(raw, dtype="<f8", count=n_rec, offset=off).copy()
    off += 8 * n_rec
    states = np.frombuffer(raw, dtype="<f8", count=n_paths * n_rec * dim,
                           offset=off).reshape(n_paths, n_rec, dim).copy()
    return Ensemble(times, states, tag, epsilon, seed)


def ensemble_to_csv(path, ens: Ensemble) -> None:
    """Row-per-record CSV for small runs: path, t, x1, x2, ..."""
    n_paths, n_rec, dim = ens.states.shape
    header = ["path", "t"] + [f"x{k + 1}" for k in range(dim)]
    try:
        lines = [",".join(header)]
        for ip in range(n_paths):
            for ir in range(n_rec):
                row = [str(ip), FLOAT_FMT % ens.times[ir]]
                row += [FLOAT_FMT % v for v in ens.states[ip, ir]]
                lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
