"""Reading and writing ensembles, reports and plot data."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .market import Ensemble
from .ustate import TimeGrid

ENSEMBLE_COLUMNS = ("path_id", "time", "epoch", "dim", "component", "value", "post_reset")


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if x != x:
            return None
        if x in (float("inf"), float("-inf")):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, infinities as strings)."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj))


def write_table(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    atomic_write(path, buf.getvalue())


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def ensemble_rows(ens: Ensemble, max_paths: int | None = None):
    P = ens.n_paths if max_paths is None else min(ens.n_paths, max_paths)
    times = ens.grid.times
    epochs = np.cumsum(ens.reset, axis=1)
    for p in range(P):
        for j in range(times.size):
            ep_pre = epochs[p, j - 1] if j > 0 else 1
            for i in range(ens.dims[p, j]):
                yield (p, times[j], int(ep_pre), int(ens.dims[p, j]), i, ens.prices[p, j, i], 0)
            if j > 0 and ens.reset[p, j]:
                for i in range(ens.dims_post[p, j]):
                    yield (p, times[j], int(epochs[p, j]), int(ens.dims_post[p, j]), i,
                           ens.post[p, j, i], 1)


def write_ensemble(ens: Ensemble, out_dir, max_paths: int | None = None, stem: str = "ensemble"):
    """Columnar CSV plus a JSON manifest (grid, seed, model id)."""
    out_dir = Path(out_dir)
    write_table(out_dir / f"{stem}.csv", ENSEMBLE_COLUMNS, ensemble_rows(ens, max_paths))
    manifest = {
        "grid": {"times": ens.grid.times.tolist()},
        "seed": ens.seed,
        "model_id": ens.model_id,
        "n_paths": ens.n_paths,
        "paths_written": ens.n_paths if max_paths is None else min(ens.n_paths, max_paths),
        "width": ens.width,
        "columns": list(ENSEMBLE_COLUMNS),
    }
    write_json(out_dir / f"{stem}.manifest.json", manifest)


def read_ensemble(out_dir, stem: str = "ensemble") -> Ensemble:
    """Rebuild prices, post values, dimensions and reset flags from disk.

    Asset ids are not stored in the CSV; they are filled with positions.
    """
    out_dir = Path(out_dir)
    man = json.loads((out_dir / f"{stem}.manifest.json").read_text())
    grid = TimeGrid(np.asarray(man["grid"]["times"]))
    P, W, J1 = man["paths_written"], man["width"], len(man["grid"]["times"])
    prices = np.full((P, J1, W), np.nan)
    post = np.full((P, J1, W), np.nan)
    dims = np.zeros((P, J1), np.int64)
    dims_post = np.zeros((P, J1), np.int64)
    reset = np.zeros((P, J1), bool)
    reset[:, 0] = True
    tindex = {repr(float(t)): j for j, t in enumerate(grid.times)}
    with open(out_dir / f"{stem}.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            p = int(row["path_id"])
            j = tindex[repr(float(row["time"]))]
            i = int(row["component"])
            if row["post_reset"] == "1":
                post[p, j, i] = float(row["value"])
                dims_post[p, j] = int(row["dim"])
                reset[p, j] = True
            else:
                prices[p, j, i] = float(row["value"])
                dims[p, j] = int(row["dim"])
    keep = ~reset
    keep[:, 0] = True
    post = np.where(keep[..., None], prices, post)
    dims_post = np.where(keep, dims, dims_post)
    ids = np.where(np.arange(W) < dims_post[..., None], np.arange(W), -1)
    return Ensemble(grid, prices, post, dims, dims_post, ids, reset, man["seed"], man["model_id"])
