"""File formats: binary draw arrays, CSV tables and posterior directories.

Binary arrays (``.bsve``) have the layout

====================  =========================================
bytes                 content
====================  =========================================
5                     magic ``BSVE1``
1                     dtype code: ``d`` float64, ``q`` int64,
                      ``b`` int8, ``?`` bool
4                     ``uint32`` number of dimensions ``k``
8 k                   ``uint64`` dimensions
rest                  payload, little-endian, column-major
====================  =========================================

A posterior directory holds ``manifest.json``, the model inputs
(``model/``), one sub-directory per chunk of retained draws and the last
sampler state (``state/``). Continuation appends a chunk and rewrites the
manifest and state only.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import (
    Family,
    ModelSpec,
    ParameterState,
    PosteriorDraws,
    PriorSpec,
    RestrictionPattern,
    build_design_matrices,
    validate_specification,
)

MAGIC = b"BSVE1"
_CODES = {"d": np.dtype("<f8"), "q": np.dtype("<i8"), "b": np.dtype("i1"), "?": np.dtype("?")}
MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class OutputError(OSError):
    """Raised when an output location cannot be written or read."""


# ---------------------------------------------------------------------------
# Binary arrays
# ---------------------------------------------------------------------------


def _normalised_dtype(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.bool_:
        return arr
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype("<f8", copy=False)
    if arr.dtype == np.int8:
        return arr
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype("<i8", copy=False)
    raise TypeError(f"unsupported array dtype {arr.dtype}")


def encode_array(arr) -> bytes:
    arr = _normalised_dtype(np.asarray(arr))
    code = next(c for c, dt in _CODES.items() if arr.dtype == dt)
    header = MAGIC + code.encode() + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.asfortranarray(arr).tobytes(order="F")


def decode_array(buf: bytes) -> np.ndarray:
    if buf[:5] != MAGIC:
        raise ValueError("not a BSVE1 array: bad magic bytes")
    code = chr(buf[5])
    if code not in _CODES:
        raise ValueError(f"unknown dtype code {code!r}")
    (ndim,) = struct.unpack_from("<I", buf, 6)
    shape = struct.unpack_from(f"<{ndim}Q", buf, 10)
    start = 10 + 8 * ndim
    dtype = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) - start != count * dtype.itemsize:
        raise ValueError("truncated or oversized BSVE1 payload")
    flat = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    return flat.reshape(shape, order="F").astype(dtype.newbyteorder("="), copy=True)


def write_array(path, arr) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_array(arr))
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from err
    return path


def read_array(path) -> np.ndarray:
    try:
        return decode_array(Path(path).read_bytes())
    except OSError as err:
        raise OutputError(f"cannot read {path}: {err.strerror or err}") from err


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    """Locale-independent text that parses back to the same float."""
    if isinstance(v, (str, bytes)):
        return v if isinstance(v, str) else v.decode()
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if np.isnan(f):
        return "NA"
    return repr(f)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format_value(v) for v in row])
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from err
    return path


def read_csv_matrix(path, missing=("", "NA", "NaN", "nan")):
    """Header and float matrix of a CSV file; missing entries become ``nan``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise OutputError(f"cannot read {path}: {err.strerror or err}") from err
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        values = np.array(
            [[np.nan if c.strip() in missing else float(c) for c in r] for r in body], dtype=float
        )
    except ValueError as err:
        raise ValueError(f"{path}: non-numeric entry ({err})") from None
    if values.size and values.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the header width")
    return header, values.reshape(len(body), len(header))


def read_data_csv(path):
    """Observations ``T0 x N`` and variable names from a CSV with a header row."""
    header, values = read_csv_matrix(path)
    if values.shape[0] == 0:
        raise ValueError(f"{path} has no observations")
    if np.isnan(values).any():
        raise ValueError(f"{path} contains missing values")
    return values, [h.strip() for h in header]


def write_summary_csv(path, labels: Sequence[Sequence], label_names: Sequence[str], summary) -> Path:
    """One row per element: labels then mean, median, lower and upper."""
    flat = [np.ravel(getattr(summary, k)) for k in ("mean", "median", "lower", "upper")]
    header = list(label_names) + ["mean", "median", "lower", "upper"]
    rows = [list(lab) + [f[i] for f in flat] for i, lab in enumerate(labels)]
    return write_csv(path, header, rows)


def write_plot_data(path, x, summary_slice) -> Path:
    """Plot-ready series with columns x, median, lower, upper."""
    rows = zip(x, summary_slice.median, summary_slice.lower, summary_slice.upper)
    return write_csv(path, ["x", "median", "lower", "upper"], rows)


# ---------------------------------------------------------------------------
# Posterior directories
# ---------------------------------------------------------------------------


def _dump_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from err


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise OutputError(f"cannot read {path}: {err.strerror or err}") from err


def _save_spec(spec: ModelSpec, root: Path) -> dict:
    model = root / "model"
    d = spec.data
    write_array(model / "raw.bsve", d.raw)
    write_array(model / "deterministic.bsve", d.deterministic)
    write_array(model / "mask_A.bsve", spec.restrictions.mask_A)
    write_array(model / "mask_B.bsve", spec.restrictions.mask_B)
    write_array(model / "m_A.bsve", spec.prior.m_A)
    write_array(model / "Omega_A.bsve", spec.prior.Omega_A)
    for n, om in enumerate(spec.prior.Omega_B):
        write_array(model / f"Omega_B_{n}.bsve", np.asarray(om))
    flags = spec.unit_root_flags
    return {
        "p": d.p,
        "names": list(d.names),
        "family": spec.family.value,
        "M": spec.M,
        "unit_root_flags": None if flags is None else [bool(f) for f in flags],
        "sample_hyper": spec.sample_hyper,
        "min_regime_occurrences": spec.min_regime_occurrences,
        "max_retries": spec.max_retries,
        "prior": {k: float(getattr(spec.prior, k)) for k in PriorSpec.SCALARS},
    }


def _load_spec(info: dict, root: Path) -> ModelSpec:
    model = root / "model"
    raw = read_array(model / "raw.bsve")
    det = read_array(model / "deterministic.bsve")
    data = build_design_matrices(raw, info["p"], det, info["names"])
    restrictions = RestrictionPattern.from_masks(read_array(model / "mask_B.bsve"), read_array(model / "mask_A.bsve"))
    Omega_B = tuple(read_array(model / f"Omega_B_{n}.bsve") for n in range(data.N))
    prior = PriorSpec(
        m_A=read_array(model / "m_A.bsve"),
        Omega_A=read_array(model / "Omega_A.bsve"),
        Omega_B=Omega_B,
        **info["prior"],
    )
    flags = info["unit_root_flags"]
    spec = ModelSpec(
        data=data,
        restrictions=restrictions,
        prior=prior,
        family=Family.parse(info["family"]),
        M=info["M"],
        unit_root_flags=None if flags is None else np.asarray(flags, dtype=bool),
        sample_hyper=info["sample_hyper"],
        min_regime_occurrences=info["min_regime_occurrences"],
        max_retries=info["max_retries"],
    )
    return validate_specification(spec)


def _save_state(state: ParameterState, root: Path) -> list:
    names = []
    for name, value in vars(state).items():
        if value is None or name == "sweep":
            continue
        write_array(root / "state" / f"{name}.bsve", np.asarray(value))
        names.append(name)
    return sorted(names)


def _load_state(names, sweep, root: Path) -> ParameterState:
    values = {n: read_array(root / "state" / f"{n}.bsve") for n in names}
    for k in ("s_A", "s_B", "s_sigma", "e"):
        if k in values:
            values[k] = float(values[k])
    return ParameterState(sweep=int(sweep), **values)


def _jsonable_meta(meta: dict) -> dict:
    # wall-clock timings are dropped so that reruns produce identical files
    keep = {}
    for k, v in meta.items():
        if k == "seconds":
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        keep[k] = v
    return keep


def save_posterior(
    draws: PosteriorDraws,
    directory,
    rng_state: Optional[dict] = None,
    append: bool = False,
    run_info: Optional[dict] = None,
) -> Path:
    """Write ``draws`` as a new chunk of the posterior directory ``directory``.

    With ``append`` the directory must already hold a posterior of the same
    model; the chunk is added and the manifest and last state replaced.
    """
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create {root}: {err.strerror or err}") from err
    manifest_path = root / MANIFEST
    if append:
        if not manifest_path.exists():
            raise OutputError(f"{root} holds no posterior to append to")
        manifest = _load_json(manifest_path)
        if manifest["model"]["family"] != draws.spec.family.value:
            raise ValueError("appended draws come from a different model family")
    else:
        manifest = {
            "format": "bsvar-posterior",
            "version": FORMAT_VERSION,
            "model": _save_spec(draws.spec, root),
            "chunks": [],
            "runs": [],
        }
    chunk = f"chunk_{len(manifest['chunks']):04d}"
    fields = {}
    for name, arr in sorted(draws.draws.items()):
        write_array(root / chunk / f"{name}.bsve", arr)
        fields[name] = list(np.shape(arr)[1:])
    manifest["chunks"].append({"name": chunk, "draws": len(draws), "fields": fields})
    manifest["state"] = {"fields": _save_state(draws.last_state, root), "sweep": int(draws.last_state.sweep)}
    manifest["rng_state"] = rng_state
    meta = _jsonable_meta(draws.meta)
    ref = meta.get("normalisation_reference")
    if ref is not None and "normalisation_reference" not in manifest:
        manifest["normalisation_reference"] = ref
    manifest["runs"].append(dict(run_info or {}, **{k: v for k, v in meta.items() if k != "normalisation_reference"}))
    _dump_json(manifest_path, manifest)
    return root


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise OutputError(f"{directory} is not a posterior directory (no {MANIFEST})")
    return _load_json(path)


def load_posterior(directory) -> PosteriorDraws:
    """Read every chunk of a posterior directory into one :class:`PosteriorDraws`."""
    root = Path(directory)
    manifest = load_manifest(root)
    spec = _load_spec(manifest["model"], root)
    parts = {}
    for chunk in manifest["chunks"]:
        for name in chunk["fields"]:
            parts.setdefault(name, []).append(read_array(root / chunk["name"] / f"{name}.bsve"))
    draws = {k: np.concatenate(v, axis=0) for k, v in parts.items()}
    state = _load_state(manifest["state"]["fields"], manifest["state"]["sweep"], root)
    meta = {"rng_state": manifest.get("rng_state"), "runs": manifest.get("runs", [])}
    if manifest.get("normalisation_reference") is not None:
        meta["normalisation_reference"] = manifest["normalisation_reference"]
    if any(run.get("prior_only") for run in manifest.get("runs", [])):
        meta["prior_only"] = True
    return PosteriorDraws(spec, draws, state, meta)


def writable_directory(directory) -> Path:
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create {root}: {err.strerror or err}") from err
    if not os.access(root, os.W_OK):
        raise OutputError(f"{root} is not writable")
    return root
