#!/usr/bin/env python3
"""Convert a serialized citation-benchmark distribution into the neutral JSON
graph format.

Usage: convert_dataset.py <input-dir> <dataset> <out.json> [--expect N,F,C]

Recognized layouts inside <input-dir>:
  * pickled split files  ind.<name>.{allx,ally,tx,ty,graph,test.index}
  * tab text             <name>.content + <name>.cites
  * pubmed tab text      *NODE.paper.tab + *cites.tab

Writes the JSON document, prints a report (JSON) to stdout, and exits 0.
Exit 2: unrecognized layout or bad arguments. Exit 4: counts differ from
--expect. No code is shared with any consumer; the JSON file is the contract.
"""

import hashlib
import json
import pickle
import re
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def fail(code: int, message: str) -> "NoReturn":  # noqa: F821
    print(f"error: {message}", file=sys.stderr)
    sys.exit(code)


# ------------------------------------------------------------------- layouts


def detect_layout(input_dir: Path, name: str):
    if (input_dir / f"ind.{name}.allx").is_file():
        return "planetoid"
    for base in (input_dir, input_dir / name):
        if (base / f"{name}.content").is_file() and (base / f"{name}.cites").is_file():
            return "linqs"
    if list(input_dir.glob("*NODE.paper.tab")) and list(input_dir.glob("*cites.tab")):
        return "pubmed-tab"
    return None


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        # the published files are python-2 pickles of numpy/scipy objects
        return pickle.load(fh, encoding="latin1")


def read_planetoid(input_dir: Path, name: str):
    allx = sp.csr_matrix(_load_pickle(input_dir / f"ind.{name}.allx"))
    ally = np.asarray(_load_pickle(input_dir / f"ind.{name}.ally"))
    tx = sp.csr_matrix(_load_pickle(input_dir / f"ind.{name}.tx"))
    ty = np.asarray(_load_pickle(input_dir / f"ind.{name}.ty"))
    graph = _load_pickle(input_dir / f"ind.{name}.graph")
    test_idx = np.array(
        [int(line) for line in (input_dir / f"ind.{name}.test.index").read_text().split()],
        dtype=np.int64,
    )

    # test rows live at their stated indices; index gaps are isolated nodes
    # that the distribution stores implicitly (zero features, class 0)
    lo, hi = int(test_idx.min()), int(test_idx.max())
    span = hi - lo + 1
    tx_full = sp.lil_matrix((span, allx.shape[1]))
    tx_full[test_idx - lo] = tx
    ty_full = np.zeros((span, ally.shape[1]))
    ty_full[test_idx - lo] = ty

    features = sp.vstack([allx, sp.csr_matrix(tx_full)]).toarray()
    onehot = np.vstack([ally, ty_full])
    labels = onehot.argmax(axis=1)
    n = features.shape[0]

    raw_records = 0
    pairs = set()
    for src, neighbors in graph.items():
        for dst in neighbors:
            raw_records += 1
            if src == dst or not (0 <= src < n and 0 <= dst < n):
                continue
            pairs.add((min(src, dst), max(src, dst)))
    node_names = [str(i) for i in range(n)]
    return features, labels, onehot.shape[1], sorted(pairs), node_names, raw_records


def read_linqs(input_dir: Path, name: str):
    base = input_dir if (input_dir / f"{name}.content").is_file() else input_dir / name
    records = {}
    width = None
    for line in (base / f"{name}.content").read_text().splitlines():
        tokens = line.split()
        if len(tokens) < 3:
            continue
        node_id, label = tokens[0], tokens[-1]
        values = [float(v) for v in tokens[1:-1]]
        if width is None:
            width = len(values)
        elif len(values) != width:
            fail(2, f"{name}.content: inconsistent feature width on id {node_id}")
        records[node_id] = (values, label)

    if not records:
        fail(2, f"{name}.content holds no records")
    names = sorted(records)
    index = {node_id: i for i, node_id in enumerate(names)}
    classes = sorted({label for _, label in records.values()})
    features = np.array([records[node_id][0] for node_id in names])
    labels = np.array([classes.index(records[node_id][1]) for node_id in names])

    raw_records = 0
    pairs = set()
    for line in (base / f"{name}.cites").read_text().splitlines():
        tokens = line.split()
        if len(tokens) != 2:
            continue
        raw_records += 1
        if tokens[0] not in index or tokens[1] not in index:
            continue
        i, j = index[tokens[0]], index[tokens[1]]
        if i != j:
            pairs.add((min(i, j), max(i, j)))
    return features, labels, len(classes), sorted(pairs), names, raw_records


_PAPER_REF = re.compile(r"paper:(\S+)")


def read_pubmed_tab(input_dir: Path):
    node_path = sorted(input_dir.glob("*NODE.paper.tab"))[0]
    cites_path = sorted(input_dir.glob("*cites.tab"))[0]

    vocab: list[str] = []
    rows = {}
    for line in node_path.read_text().splitlines():
        tokens = line.rstrip("\n").split("\t")
        if not tokens:
            continue
        if tokens[0].isdigit() and len(tokens) > 1 and tokens[1].startswith("label="):
            label = tokens[1].split("=", 1)[1]
            feats = {}
            for token in tokens[2:]:
                if token.startswith("summary=") or "=" not in token:
                    continue
                key, value = token.split("=", 1)
                feats[key] = float(value)
            rows[tokens[0]] = (label, feats)
        elif "numeric:" in line:
            # schema line fixes the feature order
            vocab = [part.split(":")[1] for part in tokens if part.startswith("numeric:")]

    if not rows:
        fail(2, f"{node_path.name}: no node records recognized")
    if not vocab:
        seen = set()
        for _, feats in rows.values():
            seen.update(feats)
        vocab = sorted(seen)
    col = {term: i for i, term in enumerate(vocab)}

    names = sorted(rows)
    index = {node_id: i for i, node_id in enumerate(names)}
    classes = sorted({label for label, _ in rows.values()})
    features = np.zeros((len(names), len(vocab)))
    labels = np.zeros(len(names), dtype=np.int64)
    for node_id, (label, feats) in rows.items():
        i = index[node_id]
        labels[i] = classes.index(label)
        for term, value in feats.items():
            if term in col:
                features[i, col[term]] = value

    raw_records = 0
    pairs = set()
    for line in cites_path.read_text().splitlines():
        refs = _PAPER_REF.findall(line)
        if len(refs) < 2:
            continue
        raw_records += 1
        if refs[0] not in index or refs[1] not in index:
            continue
        i, j = index[refs[0]], index[refs[1]]
        if i != j:
            pairs.add((min(i, j), max(i, j)))
    return features, labels, len(classes), sorted(pairs), names, raw_records


# -------------------------------------------------------------------- output


def write_neutral_json(out_path: Path, name, features, labels, num_classes, pairs, node_names):
    doc = {
        "name": name,
        "num_nodes": int(features.shape[0]),
        "num_features": int(features.shape[1]),
        "num_classes": int(num_classes),
        "features": [[float(v) for v in row] for row in features],
        "labels": [int(v) for v in labels],
        "edges": [[int(a), int(b)] for a, b in pairs],
        "node_names": [str(s) for s in node_names],
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def convert(input_dir: Path, name: str, out_path: Path) -> dict:
    layout = detect_layout(input_dir, name)
    if layout is None:
        fail(2, f"no recognized distribution layout for {name!r} under {input_dir}")
    if layout == "planetoid":
        parts = read_planetoid(input_dir, name)
    elif layout == "linqs":
        parts = read_linqs(input_dir, name)
    else:
        parts = read_pubmed_tab(input_dir)
    features, labels, num_classes, pairs, node_names, raw_records = parts
    write_neutral_json(out_path, name, features, labels, num_classes, pairs, node_names)
    checksum = hashlib.sha256(out_path.read_bytes()).hexdigest()
    return {
        "dataset": name,
        "layout": layout,
        "nodes": int(features.shape[0]),
        "edges": len(pairs),
        "features": int(features.shape[1]),
        "classes": int(num_classes),
        "raw_edge_records": raw_records,
        "dropped_edges": raw_records - len(pairs),
        "checksum": checksum,
        "output": str(out_path),
    }


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    expect = None
    if "--expect" in argv:
        at = argv.index("--expect")
        try:
            expect = tuple(int(v) for v in argv[at + 1].split(","))
            assert len(expect) == 3
        except (IndexError, ValueError, AssertionError):
            fail(2, "--expect needs nodes,features,classes")
        del argv[at:at + 2]
    if len(argv) != 3:
        fail(2, "usage: convert_dataset.py <input-dir> <dataset> <out.json> [--expect N,F,C]")

    input_dir, name, out_path = Path(argv[0]), argv[1], Path(argv[2])
    if not input_dir.is_dir():
        fail(2, f"input directory {input_dir} does not exist")
    report = convert(input_dir, name, out_path)
    print(json.dumps(report, sort_keys=True))
    if expect is not None:
        got = (report["nodes"], report["features"], report["classes"])
        if got != expect:
            fail(4, f"counts {got} differ from expected {expect}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
