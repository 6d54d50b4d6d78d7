"""Command-line interface: train, eval, export, stats.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure.
Config precedence for train: explicit flags > --config file > per-dataset
defaults; the fully resolved config lands in the run manifest.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .concept import propagation_matrix
from .datasets import data_root, load_dataset
from .errors import ConceptGcnError, ConfigError, NumericError
from .graph_data import make_splits, normalize_adjacency, save_json_graph
from .linalg import SparseMatrixCSR
from .stage1 import Stage1Model
from .stage2 import Stage2Model, predict
from .training import (
    BaselineGcn,
    MetricsLog,
    TrainConfig,
    baseline_eval_forward,
    evaluate,
    load_params_binary,
    save_params_binary,
    stage1_eval_forward,
    stage2_eval_forward,
    train_baseline_gcn,
    train_pipeline,
)

_CONFIG_FLAGS = {
    "learning_rate": float, "epochs": int, "batch_size": int, "momentum": float,
    "gamma": float, "dropout": float, "hidden": int, "negative_slope": float,
    "weight_decay_override": float, "sigma": float, "ratio_node": float,
    "graph_size": int, "seed": int, "phase1_epochs": int, "alpha": float,
    "train_ratio": float, "val_ratio": float,
}


def _version_string() -> str:
    base = f"conceptgcn {__version__}"
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0:
            return f"{base}+{described.stdout.strip()}"
    except Exception:
        pass
    return base


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def resolve_config(dataset: str, config_path: str | None, flag_values: dict) -> TrainConfig:
    merged = dict(TrainConfig.for_dataset(dataset).to_dict()) if dataset else {}
    if not merged:
        merged = TrainConfig().to_dict()
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise ConfigError(f"config file holds unknown keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    cfg = TrainConfig(**merged)
    cfg.validate()
    return cfg


def _prepare_graph_and_split(args, cfg: TrainConfig):
    g = load_dataset(args.dataset, data_dir=args.data_dir)
    split = make_splits(g, cfg.train_ratio, cfg.val_ratio,
                        seed=args.split_seed if getattr(args, "split_seed", None) is not None
                        else cfg.seed)
    return g, split


def _final_accuracies(probs, labels, split) -> dict:
    return {
        "train_acc": evaluate(probs, labels, split.train_mask),
        "val_acc": evaluate(probs, labels, split.val_mask),
        "test_acc": evaluate(probs, labels, split.test_mask),
    }


def _pipeline_eval(g, cfg: TrainConfig, stage1: Stage1Model, stage2: Stage2Model,
                   concept_norm: SparseMatrixCSR):
    gg = g.with_row_normalized_features() if cfg.row_normalize else g
    a_hat = normalize_adjacency(gg)
    x_sparse = gg.features_csr()
    ev1 = stage1_eval_forward(stage1, gg, a_hat, x_block=x_sparse)
    blocks = [x_sparse, ev1["h_high"], ev1["P"].P]
    ev2 = stage2_eval_forward(stage2, concept_norm, blocks)
    return ev1, ev2


# ------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    flag_values = {name: getattr(args, name) for name in _CONFIG_FLAGS}
    if args.no_original_edges:
        flag_values["include_original_edges"] = False
    if args.finetune_stage1:
        flag_values["finetune_stage1"] = True
    if args.stochastic_concept_pass:
        flag_values["stochastic_concept_pass"] = True
    if args.no_row_normalize:
        flag_values["row_normalize"] = False
    dataset_key = args.dataset.lower() if args.dataset else ""
    cfg = resolve_config(dataset_key, args.config, flag_values)

    g, split = _prepare_graph_and_split(args, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "dataset": args.dataset,
        "data_dir": str(data_root(args.data_dir)),
        "model": args.model,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": _version_string(),
        "dataset_stats": vars(g.stats()),
        "created_utc": _now(),
        "outputs": {},
        "model_shapes": {},
    }

    if args.model == "baseline":
        model, log = train_baseline_gcn(cfg, g, split)
        log.to_csv(out_dir / "metrics.csv")
        manifest["outputs"]["metrics"] = "metrics.csv"
        manifest["model_shapes"]["baseline"] = save_params_binary(
            out_dir / "baseline.bin", model.params())
        manifest["outputs"]["baseline"] = "baseline.bin"
        gg = g.with_row_normalized_features() if cfg.row_normalize else g
        probs = baseline_eval_forward(model, normalize_adjacency(gg), gg.features_csr())["probs"]
        final = _final_accuracies(probs, g.labels, split)
    else:
        result = train_pipeline(cfg, g, split)
        result.metrics.to_csv(out_dir / "metrics.csv")
        manifest["outputs"]["metrics"] = "metrics.csv"
        manifest["model_shapes"]["stage1"] = save_params_binary(
            out_dir / "stage1.bin", result.stage1.params())
        manifest["model_shapes"]["stage2"] = save_params_binary(
            out_dir / "stage2.bin", result.stage2.params())
        save_json_graph(g, out_dir / "concept_graph.json", edge_weights=result.concept.W)
        manifest["outputs"].update(
            {"stage1": "stage1.bin", "stage2": "stage2.bin",
             "concept_graph": "concept_graph.json"})
        _, ev2 = _pipeline_eval(g, cfg, result.stage1, result.stage2,
                                result.concept.normalized)
        final = _final_accuracies(ev2["probs"], g.labels, split)

    manifest["final"] = final
    print(f"dataset={args.dataset} model={args.model} "
          f"train_acc={final['train_acc']:.4f} val_acc={final['val_acc']:.4f} "
          f"test_acc={final['test_acc']:.4f}")

    if args.with_baseline and args.model == "pipeline":
        bl_model, _ = train_baseline_gcn(cfg, g, split)
        gg = g.with_row_normalized_features() if cfg.row_normalize else g
        bl_probs = baseline_eval_forward(bl_model, normalize_adjacency(gg),
                                         gg.features_csr())["probs"]
        bl_final = _final_accuracies(bl_probs, g.labels, split)
        manifest["baseline_final"] = bl_final
        print(f"summary: pipeline test_acc={final['test_acc']:.4f} | "
              f"baseline test_acc={bl_final['test_acc']:.4f}")

    manifest["finished_utc"] = _now()
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return 0


def _load_run(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"run directory {run_dir} holds no manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _rebuild_models(run_dir: Path, manifest: dict, g, cfg: TrainConfig):
    shapes = manifest["model_shapes"]
    if manifest["model"] == "baseline":
        path = run_dir / manifest["outputs"]["baseline"]
        if not path.is_file():
            raise ConfigError(f"model file missing: {path}")
        params = load_params_binary(path, shapes["baseline"])
        return BaselineGcn(W0=params["W0"], W1=params["W1"]), None, None
    for key in ("stage1", "stage2"):
        if not (run_dir / manifest["outputs"][key]).is_file():
            raise ConfigError(f"model file missing: {run_dir / manifest['outputs'][key]}")
    p1 = load_params_binary(run_dir / manifest["outputs"]["stage1"], shapes["stage1"])
    p2 = load_params_binary(run_dir / manifest["outputs"]["stage2"], shapes["stage2"])
    m, c = g.num_features, g.class_count
    hidden = cfg.hidden
    rng = np.random.default_rng(0)
    template1 = Stage1Model.initialize(m, hidden, hidden, hidden, c, cfg.negative_slope, rng)
    template2 = Stage2Model.initialize(m + hidden + c, hidden, c, cfg.negative_slope, rng)
    stage1 = template1.with_params(p1)
    stage2 = template2.with_params(p2)
    concept_norm = _concept_norm_from_json(run_dir / manifest["outputs"]["concept_graph"],
                                           cfg, g)
    return None, (stage1, stage2), concept_norm


def _concept_norm_from_json(path: Path, cfg: TrainConfig, g) -> SparseMatrixCSR:
    if not path.is_file():
        raise ConfigError(f"concept graph file missing: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    n = doc["num_nodes"]
    edges = np.asarray(doc["edges"], dtype=np.int64)
    weights = np.asarray(doc.get("edge_weights", np.ones(len(edges))), dtype=np.float64)
    if len(edges):
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        vals = np.concatenate([weights, weights])
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    else:
        mat = sp.csr_matrix((n, n))
    mat.setdiag(1.0)
    w = SparseMatrixCSR.from_scipy(mat)
    gg = g.with_row_normalized_features() if cfg.row_normalize else g
    return propagation_matrix(w, cfg.concept_params(),
                              original=gg.adjacency if cfg.include_original_edges else None)


def _eval_run(args):
    run_dir = Path(args.run)
    manifest = _load_run(run_dir)
    dataset = args.dataset or manifest["dataset"]
    cfg = TrainConfig(**manifest["config"])
    g = load_dataset(dataset, data_dir=args.data_dir)
    split_seed = args.split_seed if args.split_seed is not None else cfg.seed
    split = make_splits(g, cfg.train_ratio, cfg.val_ratio, seed=split_seed)
    baseline, staged, concept_norm = _rebuild_models(run_dir, manifest, g, cfg)
    gg = g.with_row_normalized_features() if cfg.row_normalize else g
    a_hat = normalize_adjacency(gg)
    x_sparse = gg.features_csr()
    if baseline is not None:
        probs = baseline_eval_forward(baseline, a_hat, x_sparse)["probs"]
        extras = {}
    else:
        stage1, stage2 = staged
        ev1 = stage1_eval_forward(stage1, gg, a_hat, x_block=x_sparse)
        ev2 = stage2_eval_forward(stage2, concept_norm,
                                  [x_sparse, ev1["h_high"], ev1["P"].P])
        probs = ev2["probs"]
        extras = {"ev1": ev1}
    return g, split, probs, extras, manifest


def cmd_eval(args) -> int:
    g, split, probs, _, _ = _eval_run(args)
    accs = _final_accuracies(probs, g.labels, split)
    if args.json:
        print(json.dumps(accs, sort_keys=True))
    else:
        for key in ("train_acc", "val_acc", "test_acc"):
            print(f"{key}={accs[key]:.6f}")
    return 0


def _pca_2d(arr: np.ndarray) -> np.ndarray:
    centered = arr - arr.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((2 - vt.shape[0], vt.shape[1]))])
    # fix sign: largest-magnitude loading positive, for reproducible output
    for i in range(2):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def _svg_curves(log: MetricsLog) -> str:
    width, height, pad = 640, 360, 40
    epochs = [r.epoch for r in log.records]
    series = {
        "train_loss": ([r.train_loss for r in log.records], "#c0392b"),
        "val_loss": ([r.val_loss for r in log.records], "#e67e22"),
        "train_acc": ([r.train_acc for r in log.records], "#27ae60"),
        "val_acc": ([r.val_acc for r in log.records], "#2980b9"),
    }
    max_loss = max(max(series["train_loss"][0]), max(series["val_loss"][0]), 1e-9)
    x0, x1 = min(epochs), max(epochs)
    span = max(x1 - x0, 1)

    def x_at(e):
        return pad + (e - x0) / span * (width - 2 * pad)

    def y_at(v, top):
        return height - pad - (v / top) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
    ]
    for idx, (name, (values, color)) in enumerate(series.items()):
        top = max_loss if name.endswith("loss") else 1.0
        points = " ".join(
            f"{x_at(e):.2f},{y_at(v, top):.2f}" for e, v in zip(epochs, values)
        )
        parts.append(f'<polyline fill="none" stroke="{color}" points="{points}"/>')
        parts.append(
            f'<text x="{pad + 8 + idx * 110}" y="{pad - 16}" fill="{color}" '
            f'font-size="12">{name}</text>'
        )
    parts.append(f'<text x="{width//2 - 20}" y="{height - 8}" font-size="12">epoch</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_export(args) -> int:
    run_dir = Path(args.run)
    manifest = _load_run(run_dir)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.what == "curves":
        log = MetricsLog.from_csv(run_dir / manifest["outputs"]["metrics"])
        svg_path = out if out.suffix == ".svg" else out.with_suffix(".svg")
        csv_path = svg_path.with_suffix(".csv")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(_svg_curves(log))
        log.to_csv(csv_path)
        print(f"wrote {svg_path} and {csv_path}")
        return 0

    if args.what == "concept-graph":
        src = run_dir / manifest["outputs"].get("concept_graph", "concept_graph.json")
        if not src.is_file():
            raise ConfigError(f"run has no concept graph at {src}")
        out.write_text(src.read_text(encoding="utf-8"), encoding="utf-8")
        print(f"wrote {out}")
        return 0

    g, _, probs, extras, manifest = _eval_run(args)
    if args.what == "predictions":
        labels = predict(probs)
        with open(out, "w", encoding="utf-8") as fh:
            header = ",".join(["node_name", "label"] + [f"p{c}" for c in range(probs.cols)])
            fh.write(header + "\n")
            for i in range(probs.rows):
                row = ",".join(repr(float(v)) for v in probs.array[i])
                fh.write(f"{g.node_names[i]},{labels[i]},{row}\n")
        print(f"wrote {out}")
        return 0

    if args.what == "embeddings":
        if "ev1" not in extras:
            raise ConfigError("embeddings export needs a pipeline run")
        h = extras["ev1"]["h_high"].array
        pca = _pca_2d(h)
        with open(out, "w", encoding="utf-8") as fh:
            header = ",".join(["node_name", "label", "pca_x", "pca_y"]
                              + [f"e{j}" for j in range(h.shape[1])])
            fh.write(header + "\n")
            for i in range(h.shape[0]):
                vals = ",".join(repr(float(v)) for v in h[i])
                fh.write(f"{g.node_names[i]},{g.labels[i]},"
                         f"{repr(float(pca[i, 0]))},{repr(float(pca[i, 1]))},{vals}\n")
        print(f"wrote {out}")
        return 0

    raise ConfigError(f"unknown export kind {args.what!r}")


def cmd_stats(args) -> int:
    g = load_dataset(args.dataset, data_dir=args.data_dir)
    stats = g.stats()
    hist = np.bincount(g.labels, minlength=g.class_count)
    if args.json:
        print(json.dumps({**vars(stats), "class_histogram": hist.tolist()}, sort_keys=True))
    else:
        print(f"dataset={args.dataset} nodes={stats.nodes} edges={stats.edges} "
              f"features={stats.features} classes={stats.classes}")
        for cls, count in enumerate(hist):
            print(f"  class {cls}: {count}")
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptgcn")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model and write run artifacts")
    train.add_argument("--dataset", required=True,
                       help="benchmark name, 'synthetic', or path to a graph .json")
    train.add_argument("--data-dir", default=None)
    train.add_argument("--out", required=True)
    train.add_argument("--config", default=None, help="JSON file of config overrides")
    train.add_argument("--model", choices=("pipeline", "baseline"), default="pipeline")
    train.add_argument("--with-baseline", action="store_true",
                       help="also train the baseline and print both test accuracies")
    train.add_argument("--split-seed", type=int, default=None)
    train.add_argument("--no-original-edges", action="store_true")
    train.add_argument("--finetune-stage1", action="store_true")
    train.add_argument("--stochastic-concept-pass", action="store_true")
    train.add_argument("--no-row-normalize", action="store_true")
    for name, typ in _CONFIG_FLAGS.items():
        flags = [f"--{name.replace('_', '-')}"]
        if name == "learning_rate":
            flags.append("--lr")
        train.add_argument(*flags, dest=name, type=typ, default=None)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="re-evaluate a finished run")
    ev.add_argument("--run", required=True)
    ev.add_argument("--dataset", default=None)
    ev.add_argument("--data-dir", default=None)
    ev.add_argument("--split-seed", type=int, default=None)
    ev.add_argument("--json", action="store_true")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export", help="write embeddings/predictions/graph/curves")
    ex.add_argument("--run", required=True)
    ex.add_argument("--what", required=True,
                    choices=("embeddings", "predictions", "concept-graph", "curves"))
    ex.add_argument("--out", required=True)
    ex.add_argument("--dataset", default=None)
    ex.add_argument("--data-dir", default=None)
    ex.add_argument("--split-seed", type=int, default=None)
    ex.set_defaults(func=cmd_export)

    st = sub.add_parser("stats", help="dataset size and class histogram")
    st.add_argument("--dataset", required=True)
    st.add_argument("--data-dir", default=None)
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ConceptGcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
