"""Locating and loading datasets by name or path.

Named datasets resolve against a data directory (flag, or the
CONCEPTGCN_DATA_DIR environment variable, or ./data) and may be present
either as the neutral JSON document or as the tab-text content/cites pair.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError
from .graph_data import AttributedGraph, load_json_graph, parse_linqs
from .synthetic import make_synthetic_graph

__all__ = ["BENCHMARKS", "data_root", "find_dataset", "load_dataset"]

BENCHMARKS = ("cora", "citeseer", "pubmed")

ENV_DATA_DIR = "CONCEPTGCN_DATA_DIR"


def data_root(data_dir=None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    return Path(os.environ.get(ENV_DATA_DIR, "data"))


def find_dataset(name: str, data_dir=None):
    """Return ("json", path) or ("linqs", content_path, cites_path) for a
    named dataset, or None when its files are absent."""
    root = data_root(data_dir)
    json_path = root / f"{name}.json"
    if json_path.is_file():
        return ("json", json_path)
    for base in (root / name, root):
        content = base / f"{name}.content"
        cites = base / f"{name}.cites"
        if content.is_file() and cites.is_file():
            return ("linqs", content, cites)
    return None


def load_dataset(name_or_path: str, data_dir=None, synthetic_seed: int = 0) -> AttributedGraph:
    """Load a dataset by benchmark name, by path to a neutral JSON document,
    or the built-in 'synthetic' demo graph."""
    name = str(name_or_path)
    if name == "synthetic":
        return make_synthetic_graph(n=300, m=60, c=4, seed=synthetic_seed)
    if name.lower() in BENCHMARKS:
        found = find_dataset(name.lower(), data_dir)
        if found is None:
            raise ConfigError(
                f"dataset {name!r} not found under {data_root(data_dir)}; "
                f"expected {name}.json or {name}/{name}.content + {name}/{name}.cites"
            )
        if found[0] == "json":
            g = load_json_graph(found[1])
        else:
            with open(found[1], "r", encoding="utf-8") as content, \
                    open(found[2], "r", encoding="utf-8") as cites:
                g = parse_linqs(content, cites)
        g.name = name.lower()
        return g
    path = Path(name)
    if path.is_file() and path.suffix == ".json":
        return load_json_graph(path)
    raise ConfigError(f"unknown dataset {name!r}: not a benchmark name or a .json path")
