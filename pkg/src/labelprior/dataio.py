"""Datasets (Mulan ARFF + XML, svmlight multilabel) and the model file format.

Model files are UTF-8 JSON documents::

    {"format": "labelprior-model", "version": 1, "sha256": "<hex>",
     "payload": {"d": .., "V": .., "label_names": [..], "sign_constraint": "nonpos",
                 "W": <matrix>, "b": [..], "A": <matrix>, "meta": {..}}}

``sha256`` is the digest of the payload serialized with sorted keys and no
whitespace. A matrix is either ``{"dense": [[..], ..]}`` or, when V > 512,
``{"shape": [r, c], "rows": [..], "cols": [..], "vals": [..]}``. Floats are
written with Python's shortest round-trip repr, so loading is bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
import shlex
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from sklearn.datasets import load_svmlight_file

from .model import ModelParams, SignConstraint

FORMAT_NAME = "labelprior-model"
FORMAT_VERSION = 1
DENSE_MAX_V = 512
SPLITS = ("train", "valid", "test")
DATA_ENV = "LABELPRIOR_DATA"


class DataFormatError(ValueError):
    """Malformed dataset or model file."""


class ChecksumError(DataFormatError):
    pass


class FormatVersionError(DataFormatError):
    pass


@dataclass
class MultiLabelDataset:
    X: sp.csr_matrix                 # N x d
    Y: np.ndarray                    # N x V, int8 in {-1, +1}
    label_names: List[str]
    split: np.ndarray                # N strings from SPLITS
    feature_names: List[str] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=np.int8)
        if self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise DataFormatError(f"{self.X.shape[0]} feature rows vs labelings {self.Y.shape}")
        if not np.all(np.abs(self.Y) == 1):
            raise DataFormatError("labelings must be -1/+1")
        if len(self.label_names) != self.Y.shape[1]:
            raise DataFormatError("label_names length differs from V")
        self.split = np.asarray(self.split, dtype="<U5")
        if self.split.shape != (self.N,) or not np.isin(self.split, SPLITS).all():
            raise DataFormatError(f"split tags must be one of {SPLITS} for every instance")
        if self.X.nnz and not np.all(np.isfinite(self.X.data)):
            raise DataFormatError("non-finite feature value")

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def V(self) -> int:
        return self.Y.shape[1]

    def indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def subset(self, tag: str) -> Tuple[sp.csr_matrix, np.ndarray]:
        idx = self.indices(tag)
        return self.X[idx], self.Y[idx]

    def characteristics(self) -> Tuple[int, int, int]:
        return self.N, self.d, self.V


# -- ARFF ------------------------------------------------------------------------

_SPARSE_ROW = re.compile(r"^\{(.*)\}$")


@dataclass
class _Attribute:
    name: str
    kind: str                        # "numeric" or "nominal"
    values: Tuple[str, ...] = ()


def _split_decl(line: str) -> List[str]:
    lex = shlex.shlex(line, posix=True)
    lex.whitespace_split = True
    lex.commenters = ""
    lex.quotes = "'\""
    return list(lex)


def _parse_attribute(line: str, lineno: int) -> _Attribute:
    body = line.split(None, 1)[1] if len(line.split(None, 1)) > 1 else ""
    brace = body.find("{")
    if brace >= 0:
        name_part, nominal = body[:brace], body[brace:]
        names = _split_decl(name_part)
        if len(names) != 1 or not nominal.rstrip().endswith("}"):
            raise DataFormatError(f"line {lineno}: bad nominal attribute {line!r}")
        values = tuple(v.strip().strip("'\"") for v in nominal.strip()[1:-1].split(","))
        return _Attribute(names[0], "nominal", values)
    toks = _split_decl(body)
    if len(toks) != 2:
        raise DataFormatError(f"line {lineno}: bad attribute declaration {line!r}")
    name, kind = toks[0], toks[1].lower()
    if kind in ("numeric", "real", "integer"):
        return _Attribute(name, "numeric")
    raise DataFormatError(f"line {lineno}: unsupported attribute type {toks[1]!r}")


def _value(attr: _Attribute, tok: str, lineno: int) -> float:
    tok = tok.strip().strip("'\"")
    if tok == "?":
        raise DataFormatError(f"line {lineno}: missing value for {attr.name!r}")
    if attr.kind == "numeric":
        try:
            return float(tok)
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric value {tok!r} "
                                  f"for {attr.name!r}") from None
    if tok not in attr.values:
        raise DataFormatError(f"line {lineno}: value {tok!r} not in {attr.values} "
                              f"for {attr.name!r}")
    try:
        return float(tok)
    except ValueError:
        raise DataFormatError(f"line {lineno}: nominal attribute {attr.name!r} "
                              f"must take numeric values, got {tok!r}") from None


def read_arff(path) -> Tuple[str, List[_Attribute], sp.csr_matrix]:
    """Relation name, attributes and the full value matrix (dense or sparse rows)."""
    attrs: List[_Attribute] = []
    relation = ""
    rows, cols, vals = [], [], []
    n = 0
    in_data = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if not in_data:
                key = line.split(None, 1)[0].lower()
                if key == "@relation":
                    toks = _split_decl(line)
                    relation = toks[1] if len(toks) > 1 else ""
                elif key == "@attribute":
                    attrs.append(_parse_attribute(line, lineno))
                elif key == "@data":
                    in_data = True
                else:
                    raise DataFormatError(f"line {lineno}: unexpected header line {line!r}")
                continue
            m = _SPARSE_ROW.match(line)
            if m:
                seen = set()
                for pair in filter(None, (p.strip() for p in m.group(1).split(","))):
                    parts = pair.split(None, 1)
                    if len(parts) != 2 or not parts[0].isdigit():
                        raise DataFormatError(f"line {lineno}: bad sparse entry {pair!r}")
                    j = int(parts[0])
                    if j >= len(attrs) or j in seen:
                        raise DataFormatError(f"line {lineno}: bad attribute index {j}")
                    seen.add(j)
                    v = _value(attrs[j], parts[1], lineno)
                    if v != 0.0:
                        rows.append(n)
                        cols.append(j)
                        vals.append(v)
            else:
                toks = line.split(",")
                if len(toks) != len(attrs):
                    raise DataFormatError(f"line {lineno}: {len(toks)} values for "
                                          f"{len(attrs)} attributes")
                for j, tok in enumerate(toks):
                    v = _value(attrs[j], tok, lineno)
                    if v != 0.0:
                        rows.append(n)
                        cols.append(j)
                        vals.append(v)
            n += 1
    if not in_data:
        raise DataFormatError(f"{path}: no @data section")
    if not attrs:
        raise DataFormatError(f"{path}: no attributes")
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(attrs)), dtype=float)
    return relation, attrs, M


def read_mulan_labels(xml_path) -> List[str]:
    try:
        root = ET.parse(xml_path).getroot()
    except ET.ParseError as exc:
        raise DataFormatError(f"{xml_path}: {exc}") from exc
    names = [el.get("name") for el in root.iter() if el.tag.rsplit("}", 1)[-1] == "label"]
    if not names or any(n is None for n in names):
        raise DataFormatError(f"{xml_path}: no label names")
    return names


def load_mulan(arff_path, xml_path, split: str = "train") -> MultiLabelDataset:
    """Load one Mulan ARFF file; every instance gets the tag ``split``."""
    relation, attrs, M = read_arff(arff_path)
    label_set = read_mulan_labels(xml_path)
    index = {a.name: j for j, a in enumerate(attrs)}
    missing = [n for n in label_set if n not in index]
    if missing:
        raise DataFormatError(f"labels missing from ARFF attributes: {missing[:5]}")
    wanted = set(label_set)
    lab_cols = [j for j, a in enumerate(attrs) if a.name in wanted]   # ARFF order
    feat_cols = [j for j, a in enumerate(attrs) if a.name not in wanted]
    L = M[:, lab_cols].toarray()
    if not np.isin(L, (0.0, 1.0)).all():
        raise DataFormatError("label attributes must take values 0/1")
    Y = (2 * L - 1).astype(np.int8)
    return MultiLabelDataset(M[:, feat_cols], Y, [attrs[j].name for j in lab_cols],
                             np.full(M.shape[0], split), [attrs[j].name for j in feat_cols],
                             relation.split(":")[0].strip())


def concat(parts: Sequence[MultiLabelDataset]) -> MultiLabelDataset:
    first = parts[0]
    for p in parts[1:]:
        if p.label_names != first.label_names or p.d != first.d:
            raise DataFormatError("datasets disagree on labels or feature count")
    return MultiLabelDataset(sp.vstack([p.X for p in parts]).tocsr(),
                             np.vstack([p.Y for p in parts]), list(first.label_names),
                             np.concatenate([p.split for p in parts]),
                             list(first.feature_names), first.name)


def load_mulan_dataset(root, name: str) -> MultiLabelDataset:
    """``<name>-train.arff`` + ``<name>-test.arff`` (or ``<name>.arff``) + ``<name>.xml``."""
    root = Path(root)
    xml = root / f"{name}.xml"
    train, test, full = (root / f"{name}-train.arff", root / f"{name}-test.arff",
                         root / f"{name}.arff")
    if train.exists() and test.exists():
        return concat([load_mulan(train, xml, "train"), load_mulan(test, xml, "test")])
    if full.exists():
        return load_mulan(full, xml, "train")
    raise FileNotFoundError(f"no ARFF files for {name!r} under {root}")


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def write_mulan(ds: MultiLabelDataset, arff_path, xml_path, sparse: bool = True) -> None:
    """Write features then labels as an ARFF file plus the Mulan label list."""
    with open(arff_path, "w", encoding="utf-8") as fh:
        fh.write(f"@relation '{ds.name or 'data'}'\n\n")
        fnames = ds.feature_names or [f"f{j}" for j in range(ds.d)]
        for n in fnames:
            fh.write(f"@attribute '{n}' numeric\n")
        for n in ds.label_names:
            fh.write(f"@attribute '{n}' {{0,1}}\n")
        fh.write("\n@data\n")
        X = ds.X.tocsr()
        for i in range(ds.N):
            row = X.getrow(i)
            feats = sorted(zip(row.indices.tolist(), row.data.tolist()))
            labs = [(ds.d + v, 1.0) for v in np.flatnonzero(ds.Y[i] > 0)]
            if sparse:
                fh.write("{" + ",".join(f"{j} {_fmt(x)}" for j, x in feats + labs) + "}\n")
            else:
                dense = np.zeros(ds.d + ds.V)
                for j, x in feats + labs:
                    dense[j] = x
                fh.write(",".join(_fmt(x) for x in dense) + "\n")
    root = ET.Element("labels", xmlns="http://mulan.sourceforge.net/labels")
    for n in ds.label_names:
        ET.SubElement(root, "label", name=n)
    ET.ElementTree(root).write(xml_path, encoding="utf-8", xml_declaration=True)


# -- svmlight --------------------------------------------------------------------

def load_svmlight_multilabel(path, v: int, n_features: Optional[int] = None,
                             zero_based: bool = False,
                             label_names: Optional[List[str]] = None) -> MultiLabelDataset:
    """Lines ``l1,l2,... idx:val ...``; label ids are 0-based, feature indices
    0- or 1-based per ``zero_based``."""
    try:
        X, labels = load_svmlight_file(str(path), n_features=n_features, multilabel=True,
                                       zero_based=zero_based)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    Y = -np.ones((X.shape[0], v), dtype=np.int8)
    for i, labs in enumerate(labels):
        for lab in labs:
            if lab != int(lab) or not 0 <= lab < v:
                raise DataFormatError(f"{path}: instance {i}: label id {lab} outside [0, {v})")
            Y[i, int(lab)] = 1
    names = label_names or [str(j) for j in range(v)]
    return MultiLabelDataset(X, Y, names, np.full(X.shape[0], "train"))


# -- splits and scaling ----------------------------------------------------------

def split_validation(ds: MultiLabelDataset, fraction: float = 0.2,
                     seed: int = 0) -> MultiLabelDataset:
    """Re-tag ``round(fraction * n_train)`` uniformly chosen train instances as valid."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    pool = np.flatnonzero(ds.split != "test")
    if pool.size == 0:
        raise ValueError("dataset has no train portion")
    n_valid = int(round(fraction * pool.size))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=n_valid, replace=False)
    split = ds.split.copy()
    split[pool] = "train"
    split[chosen] = "valid"
    return replace(ds, split=split)


def maxabs_factors(X) -> np.ndarray:
    """Per-feature scale making every column's max |value| equal 1 (0 columns kept)."""
    m = np.asarray(abs(sp.csr_matrix(X)).max(axis=0).todense()).ravel()
    return np.where(m > 0, 1.0 / np.where(m > 0, m, 1.0), 1.0)


def apply_scaling(X, factors: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(sp.csr_matrix(X) @ sp.diags(factors))


# -- model file ------------------------------------------------------------------

def _matrix_out(M: np.ndarray, sparse: bool) -> dict:
    if not sparse:
        return {"dense": M.tolist()}
    r, c = np.nonzero(M)
    return {"shape": list(M.shape), "rows": r.tolist(), "cols": c.tolist(),
            "vals": M[r, c].tolist()}


def _matrix_in(obj: dict) -> np.ndarray:
    if "dense" in obj:
        return np.array(obj["dense"], dtype=float)
    M = np.zeros(tuple(obj["shape"]))
    M[obj["rows"], obj["cols"]] = obj["vals"]
    return M


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def save_model(params: ModelParams, meta: Optional[dict], path,
               label_names: Optional[List[str]] = None) -> str:
    """Write the model file; returns the checksum."""
    sparse = params.V > DENSE_MAX_V
    payload = {
        "d": params.d, "V": params.V,
        "label_names": list(label_names or [str(j) for j in range(params.V)]),
        "sign_constraint": params.sign_constraint.value,
        "W": _matrix_out(params.W, sparse), "b": params.b.tolist(),
        "A": _matrix_out(params.A, sparse), "meta": meta or {},
    }
    digest = hashlib.sha256(_canonical(payload)).hexdigest()
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "sha256": digest,
           "payload": payload}
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)
    return digest


def load_model(path) -> Tuple[ModelParams, dict]:
    """Read a model file; returns ``(params, payload)`` (payload has meta, label names)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not a model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise DataFormatError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {doc.get('version')!r}, "
                                 f"this build reads version {FORMAT_VERSION}")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or \
            hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("sha256"):
        raise ChecksumError(f"{path}: checksum mismatch")
    W, A = _matrix_in(payload["W"]), _matrix_in(payload["A"])
    params = ModelParams(W.reshape(payload["d"], payload["V"]), payload["b"], A,
                         SignConstraint(payload["sign_constraint"]))
    return params, payload


def data_root(env: Optional[Dict[str, str]] = None) -> Optional[Path]:
    value = (env if env is not None else os.environ).get(DATA_ENV)
    return Path(value) if value else None
