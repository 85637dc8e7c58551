"""Dataset files: a ``manifest.json`` plus one newline-delimited JSON file per split.

Raw records are ``{"id", "label", "wkt"}``; encoded records are
``{"id", "label", "seq"}`` with ``seq`` a list of 5-wide vertex vectors.
Serialization is canonical (sorted keys, floats at 17 significant digits) so
save -> load -> save reproduces files byte for byte.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .encoding import GeometrySequence, ScaleFactor
from .geometry import GeometryError, parse_geojson, parse_wkt, to_wkt

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
SPLIT_NAMES = ("train", "val", "test")


class DataError(ValueError):
    """Unreadable, inconsistent or missing dataset files."""


def _dump(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise DataError(f"cannot serialize non-finite value {v}")
        return "%.17g" % v
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return "{" + ",".join(f"{json.dumps(str(k))}:{_dump(v)}" for k, v in items) + "}"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dump(v) for v in obj) + "]"
    raise DataError(f"cannot serialize {type(obj).__name__}")


def canonical_dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, no spaces, ``%.17g`` floats."""
    return _dump(obj)


def write_json(path, obj):
    Path(path).write_text(canonical_dumps(obj) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable file {path}: {exc}") from None


def _write_lines(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(canonical_dumps(r))
            fh.write("\n")


def _read_lines(path):
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: malformed record: {exc}") from None
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None
    return out


def _split_files(ds: Dataset):
    if ds.splits:
        return [(name, ds.splits[name]) for name in SPLIT_NAMES if name in ds.splits]
    return [("all", np.arange(len(ds)))]


def _split_counts(manifest):
    # manifests store keys sorted; read splits in train, val, test order
    counts = manifest["counts"]
    known = [n for n in SPLIT_NAMES + ("all",) if n in counts]
    return [(n, counts[n]) for n in known + sorted(set(counts) - set(known))]


def write_dataset(ds: Dataset, directory, extra: Optional[Dict] = None) -> Dict:
    """Write raw WKT records and the manifest; returns the manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, idx in _split_files(ds):
        recs = [{"id": ds.geometries[i].id, "label": int(ds.labels[i]), "wkt": to_wkt(ds.geometries[i])}
                for i in idx]
        _write_lines(d / f"{name}.jsonl", recs)
        counts[name] = len(recs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "raw",
        "class_names": list(ds.class_names),
        "counts": counts,
        "scale_factor": None,
        "max_points": None,
        "feature_layout_version": None,
        "seeds": {},
        "meta": ds.meta,
    }
    if extra:
        manifest.update(extra)
    write_json(d / MANIFEST, manifest)
    return manifest


def read_manifest(directory) -> Dict:
    d = Path(directory)
    if not (d / MANIFEST).is_file():
        raise DataError(f"missing file: {d / MANIFEST}")
    m = read_json(d / MANIFEST)
    if m.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{d / MANIFEST}: unsupported format version {m.get('format_version')!r}")
    for key in ("kind", "class_names", "counts"):
        if key not in m:
            raise DataError(f"{d / MANIFEST}: missing field {key!r}")
    sf = m.get("scale_factor")
    if sf is not None and not sf.get("s", 0) > 0:
        raise DataError(f"{d / MANIFEST}: scale factor must be positive")
    return m


def read_dataset(directory) -> Dataset:
    """Load a raw-format dataset directory; splits come from the per-split files."""
    d = Path(directory)
    m = read_manifest(d)
    if m["kind"] != "raw":
        raise DataError(f"{d}: expected a raw dataset, found {m['kind']!r}")
    geoms, labels, splits = [], [], {}
    k = len(m["class_names"])
    for name, count in _split_counts(m):
        recs = _read_lines(d / f"{name}.jsonl")
        if len(recs) != count:
            raise DataError(f"{d / (name + '.jsonl')}: manifest says {count} records, found {len(recs)}")
        start = len(geoms)
        for r in recs:
            try:
                geoms.append(parse_wkt(r["wkt"], str(r["id"])))
            except KeyError as exc:
                raise DataError(f"{d / (name + '.jsonl')}: record lacks {exc}") from None
            except GeometryError as exc:
                raise DataError(f"{d / (name + '.jsonl')}: record {r.get('id')!r}: {exc}") from None
            lab = int(r["label"])
            if not 0 <= lab < k:
                raise DataError(f"record {r['id']!r}: label {lab} outside {k} classes")
            labels.append(lab)
        if name != "all":
            splits[name] = np.arange(start, len(geoms))
    return Dataset(geoms, np.array(labels, dtype=np.int64), list(m["class_names"]), splits, dict(m.get("meta", {})))


def write_encoded(directory, parts: Dict[str, Sequence[GeometrySequence]], class_names, s: ScaleFactor,
                  max_points: int, extra: Optional[Dict] = None) -> Dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, seqs in parts.items():
        _write_lines(d / f"{name}.jsonl",
                     [{"id": q.id, "label": int(q.label), "seq": q.vectors} for q in seqs])
        counts[name] = len(seqs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "encoded",
        "class_names": list(class_names),
        "counts": counts,
        "scale_factor": {"s": s.s, "convention": s.convention},
        "max_points": max_points,
        "feature_layout_version": None,
        "seeds": {},
    }
    if extra:
        manifest.update(extra)
    write_json(d / MANIFEST, manifest)
    return manifest


def read_encoded(directory) -> Tuple[Dict[str, List[GeometrySequence]], Dict]:
    d = Path(directory)
    m = read_manifest(d)
    if m["kind"] != "encoded":
        raise DataError(f"{d}: expected an encoded dataset, found {m['kind']!r}")
    parts = {}
    for name, count in _split_counts(m):
        recs = _read_lines(d / f"{name}.jsonl")
        if len(recs) != count:
            raise DataError(f"{d / (name + '.jsonl')}: manifest says {count} records, found {len(recs)}")
        seqs = []
        for r in recs:
            v = np.array(r["seq"], dtype=np.float64).reshape(-1, 5)
            flags = v[:, 2:]
            if not np.all((flags == 0) | (flags == 1)) or not np.all(flags.sum(axis=1) == 1):
                raise DataError(f"record {r['id']!r}: vertex flags are not one-hot")
            seqs.append(GeometrySequence(v, int(r["label"]), str(r["id"])))
        parts[name] = seqs
    return parts, m


# --------------------------------------------------------------------------
# published benchmark files
# --------------------------------------------------------------------------

# Adapter point for the published files: property/column names to try, in order.
LABEL_KEYS = ("label", "class", "type", "function", "target")
GEOMETRY_KEYS = ("wkt", "geometry", "geom", "WKT")


def _load_csv(path, label_key, wkt_key):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        lk = label_key or next((k for k in LABEL_KEYS if k in cols), None)
        wk = wkt_key or next((k for k in GEOMETRY_KEYS if k in cols), None)
        if lk is None or lk not in cols:
            raise DataError(f"{path}: label column absent (looked for {label_key or LABEL_KEYS})")
        if wk is None or wk not in cols:
            raise DataError(f"{path}: geometry column absent (looked for {wkt_key or GEOMETRY_KEYS})")
        ignored = [c for c in cols if c not in (lk, wk, "id")]
        if ignored:
            log.warning("%s: ignoring columns %s", path, ignored)
        out = []
        for i, row in enumerate(reader):
            gid = row.get("id") or f"{Path(path).stem}-{i}"
            try:
                out.append((parse_wkt(row[wk], gid), row[lk]))
            except GeometryError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
        return out


def _load_geojson(path, label_key):
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    feats = doc.get("features", [])
    key = label_key
    if key is None:
        props = (feats[0].get("properties") or {}) if feats else {}
        key = next((k for k in LABEL_KEYS if k in props), "label")
    if feats:
        extra = set(feats[0].get("properties") or {}) - {key}
        if extra:
            log.warning("%s: ignoring properties %s", path, sorted(extra))
    try:
        return parse_geojson(text, key)
    except GeometryError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_benchmark(directory, label_key: Optional[str] = None, wkt_key: Optional[str] = None) -> Dataset:
    """Load a native dataset directory or a folder of CSV/GeoJSON benchmark files.

    Native directories are recognised by ``manifest.json``.  Otherwise every
    ``*.csv`` (WKT column) and ``*.geojson`` file is read and labels are
    mapped to sorted class names.  Files named after a split (``train``,
    ``val``/``validation``, ``test``) define that split.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    if (d / MANIFEST).is_file():
        return read_dataset(d)
    files = sorted(list(d.glob("*.csv")) + list(d.glob("*.geojson")))
    if not files:
        raise DataError(f"missing file: {d / MANIFEST} (and no CSV/GeoJSON benchmark files)")
    pairs, origin = [], []
    for f in files:
        try:
            got = _load_csv(f, label_key, wkt_key) if f.suffix == ".csv" else _load_geojson(f, label_key)
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"unreadable file {f}: {exc}") from None
        pairs += got
        origin += [f.stem.lower()] * len(got)
    names = sorted({str(lab) for _, lab in pairs})
    ds = Dataset.from_pairs([(g, str(lab)) for g, lab in pairs], names, meta={"source": str(d)})
    alias = {"train": "train", "val": "val", "validation": "val", "test": "test"}
    splits = {}
    for i, o in enumerate(origin):
        for key, name in alias.items():
            if key in o.split("_") or o == key:
                splits.setdefault(name, []).append(i)
                break
    if splits:
        ds.splits = {k: np.array(v) for k, v in splits.items()}
    return ds
