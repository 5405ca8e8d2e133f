"""``skelgraph`` command-line driver.

Each subcommand computes everything in memory first and only then writes its
outputs, so a failed run leaves the output directory untouched. Options can
come from a JSON ``--config`` file; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import convert, features, synth
from .nn.model import ModelConfig, grad_check
from .nn.training import aggregate_volume, load_checkpoint, predict, save_checkpoint, summarize, train
from .pipelines import SkeletonConfig, grid_graph, pair_graph
from .representations import (
    FormatError,
    PointCloud,
    binarize,
    graph_to_dict,
    read_graph,
    read_mesh,
    read_point_cloud,
    read_volume,
    slice_to_patches,
    sparsity_stats,
    write_mesh,
    write_volume,
)
from .tabular import fit_forest, forest_to_dict, load_forest, predict_forest

log = logging.getLogger("skelgraph")

TASKS = {"graph-class": "graph_classification", "vertex-seg": "vertex_segmentation"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# output staging


class Outputs:
    """Files collected in memory and written together at the end."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.files: dict[str, bytes] = {}

    def text(self, name: str, content: str) -> None:
        self.files[name] = content.encode("utf-8")

    def json(self, name: str, obj) -> None:
        self.text(name, json.dumps(obj, indent=1, sort_keys=True))

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.text(name, buf.getvalue())

    def staged(self, name: str, writer) -> None:
        """Run ``writer(path)`` against a scratch file and keep its bytes."""
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / name
            writer(p)
            for f in sorted(Path(tmp).iterdir()):
                self.files[f.name] = f.read_bytes()

    def commit(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (self.out / name).write_bytes(self.files[name])


def _graph_json(g) -> str:
    return json.dumps(graph_to_dict(g))


def _inputs(paths, suffixes) -> list[Path]:
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found += [f for f in p.iterdir() if f.name.endswith(tuple(suffixes))]
        elif p.exists():
            found.append(p)
        else:
            raise CliError(f"no such input: {p}")
    if not found:
        raise CliError(f"no inputs matching {', '.join(suffixes)}")
    return sorted(found, key=lambda f: f.name)


def _stem(p: Path) -> str:
    name = p.name
    for suf in (".vol.json", ".graph.json", ".off", ".obj", ".xyz", ".txt"):
        if name.endswith(suf):
            return name[: -len(suf)]
    return p.stem


def _manifest(dirpath: Path) -> dict:
    m = dirpath / "manifest.json"
    if not m.exists():
        return {}
    return {s["name"]: s for s in json.loads(m.read_text())["samples"]}


def _load_graphs(paths) -> list[tuple[str, object]]:
    return [(_stem(p), read_graph(p)) for p in _inputs(paths, [".graph.json"])]


# ---------------------------------------------------------------------------
# commands


def cmd_generate(a) -> Outputs:
    out = Outputs(a.out)
    samples = []
    if a.kind == "grids":
        rng = np.random.default_rng(a.seed)
        for i in range(a.count):
            p = synth.draw_grid_params(rng, int(rng.integers(0, 2**20)))
            vol = synth.gen_grid_volume(p, a.depth)
            score = synth.health_score(p.jitter, p.rupture)
            name = f"grid_{i:04d}"
            out.staged(f"{name}.vol.json", lambda path, v=vol: write_volume(v, path))
            samples.append({"name": name, "label": int(score > 5), "score": score, "params": asdict(p)})
    else:
        data = synth.gen_part_dataset(a.count, a.seed, a.max_gap, a.density)
        for i, s in enumerate(data):
            name = f"pair_{i:04d}"
            out.staged(f"{name}_a.off", lambda path, m=s.mesh_a: write_mesh(m, path))
            out.staged(f"{name}_b.off", lambda path, m=s.mesh_b: write_mesh(m, path))
            out.json(f"{name}.labels.json", {"a": s.labels_a.astype(int).tolist(), "b": s.labels_b.astype(int).tolist()})
            samples.append({"name": name, "params": asdict(s.params), "eps": s.params.contact_eps(),
                            "contact_fraction": float(np.mean(np.r_[s.labels_a, s.labels_b]))})
    out.json("manifest.json", {"kind": a.kind, "seed": a.seed, "count": a.count, "samples": samples})
    return out


def cmd_convert(a) -> Outputs:
    out = Outputs(a.out)
    if a.src == "voxel":
        for p in _inputs(a.inputs, [".vol.json"]):
            grid = read_volume(p)
            g = convert.voxel_to_graph(binarize(grid, a.threshold), grid)
            out.text(f"{_stem(p)}.graph.json", _graph_json(g))
    elif a.src == "mesh" and a.pairs:
        for d in map(Path, a.inputs):
            manifest = _manifest(d)
            if not manifest:
                raise CliError(f"{d}: pair conversion needs a manifest.json from `generate parts`")
            for name in sorted(manifest):
                labels = json.loads((d / f"{name}.labels.json").read_text())
                s = synth.PartSample(read_mesh(d / f"{name}_a.off"), read_mesh(d / f"{name}_b.off"),
                                     np.array(labels["a"], bool), np.array(labels["b"], bool), None)
                g = pair_graph(s, a.proximity, a.tip_scale)
                out.text(f"{name}.graph.json", _graph_json(g))
    elif a.src == "mesh":
        for p in _inputs(a.inputs, [".off", ".obj"]):
            out.text(f"{_stem(p)}.graph.json", _graph_json(convert.mesh_to_graph(read_mesh(p))))
    else:
        for p in _inputs(a.inputs, [".xyz", ".txt"]):
            cloud: PointCloud = read_point_cloud(p)
            if a.k is not None:
                g = convert.cloud_to_graph_knn(cloud, a.k, a.metric)
            else:
                g = convert.cloud_to_graph_radius(cloud, a.radius, a.metric)
            out.text(f"{_stem(p)}.graph.json", _graph_json(g))
    return out


def _skeleton_config(a) -> SkeletonConfig:
    return SkeletonConfig(threshold=a.threshold, max_nodes=a.max_nodes, r_min=a.r_min, tau=a.tau,
                          radius_scale=a.radius_scale, theta_tol=a.theta_tol,
                          connect_components=a.connect_components)


def cmd_skeletonize(a) -> Outputs:
    out = Outputs(a.out)
    sk = _skeleton_config(a)
    for p in _inputs(a.inputs, [".vol.json"]):
        info = _manifest(p.parent).get(_stem(p), {})
        grid = read_volume(p)
        for patch in slice_to_patches(grid, a.patch_size):
            (x0, y0), z = patch.origin, patch.source_slice
            g = grid_graph(patch.grid, sk, info.get("label"))
            g = g.replace(meta=dict(g.meta, volume=_stem(p), origin=[x0, y0, z]))
            out.text(f"{_stem(p)}_z{z:03d}_x{x0:04d}_y{y0:04d}.graph.json", _graph_json(g))
    return out


def cmd_featurize(a) -> Outputs:
    out = Outputs(a.out)
    rows = []
    for name, g in _load_graphs(a.inputs):
        g = features.edge_features(features.vertex_features(g), a.theta_tol)
        out.text(f"{name}.graph.json", _graph_json(g))
        rows.append([name] + [repr(float(v)) for v in features.global_descriptor(g, a.theta_tol).as_vector()])
    out.csv("descriptors.csv", ["graph"] + features.GlobalDescriptor.columns(), rows)
    return out


def _split_labels(graphs, task):
    if task == "graph_classification" and any(g.graph_label is None for _, g in graphs):
        raise CliError("every graph needs a graph_label for graph classification")
    if task == "vertex_segmentation" and any(g.vertex_labels is None for _, g in graphs):
        raise CliError("every graph needs vertex_labels for vertex segmentation")


def _columns(task):
    if task == "vertex_segmentation":
        from .pipelines import intrinsic_columns

        return intrinsic_columns()
    return None, None


def _model_config(task: str, hidden: int) -> ModelConfig:
    from .pipelines import contact_model_config, grid_model_config

    return grid_model_config(hidden) if task == "graph_classification" else contact_model_config(hidden)


def cmd_train(a) -> Outputs:
    out = Outputs(a.out)
    task = TASKS[a.task]
    tr = _load_graphs([a.train])
    va = _load_graphs([a.val]) if a.val else []
    _split_labels(tr + va, task)
    if a.model == "forest":
        if task != "graph_classification":
            raise CliError("the forest baseline only does graph classification")
        x = np.array([features.global_descriptor(g).as_vector() for _, g in tr])
        y = np.array([g.graph_label for _, g in tr])
        forest = fit_forest(x, y, a.num_trees, a.max_depth, a.seed)
        out.json("forest.json", forest_to_dict(forest))
        return out
    s_tr, s_va, stats = features.standardize_features([g for _, g in tr], [g for _, g in va])
    mc = _model_config(task, a.hidden)
    vcols, ecols = _columns(task)
    res = train(mc, s_tr, s_va, epochs=a.epochs, seed=a.seed, lr=a.lr, vertex_columns=vcols, edge_columns=ecols)
    out.staged("checkpoint.json", lambda path: save_checkpoint(res.params, mc, stats, path))
    rows = [[0, repr(res.initial.get("train_loss", float("nan"))), repr(res.initial.get("val_loss", float("nan")))]]
    rows += [[r["epoch"], repr(r["train_loss"]), repr(r["val_loss"])] for r in res.log]
    out.csv("loss.csv", ["epoch", "train_loss", "val_loss"], rows if res.log else [])
    return out


def cmd_eval(a) -> Outputs:
    out = Outputs(a.out)
    data = _load_graphs([a.data])
    if a.model == "forest":
        forest = load_forest(a.checkpoint)
        x = np.array([features.global_descriptor(g).as_vector() for _, g in data])
        probs = [np.array([p]) for p in predict_forest(forest, x)]
        task = "graph_classification"
    else:
        params, mc, stats = load_checkpoint(a.checkpoint)
        task = mc.task
        graphs = [features.apply_feature_stats(g, stats) if stats else g for _, g in data]
        vcols, ecols = _columns(task)
        probs = predict(params, mc, graphs, vcols, ecols)
    _split_labels(data, task)
    if task == "graph_classification":
        y = np.array([g.graph_label for _, g in data])
        p = np.array([float(q[0]) for q in probs])
        report = summarize(p, y, a.threshold)
    else:
        mask = [np.array([k == "regular" for k in g.vertex_kind]) for _, g in data]
        p = np.concatenate([q[m] for q, m in zip(probs, mask)])
        y = np.concatenate([g.vertex_labels[m] for (_, g), m in zip(data, mask)])
        report = summarize(p, y, a.threshold)
    report["task"] = task
    if a.aggregate == "volume":
        if task != "graph_classification":
            raise CliError("volume aggregation applies to graph classification")
        groups: dict[str, list] = {}
        for (name, g), prob in zip(data, p):
            groups.setdefault(g.meta.get("volume", name), []).append((float(prob), g.graph_label))
        rows = []
        for vol in sorted(groups):
            mean, hat = aggregate_volume([q for q, _ in groups[vol]])
            rows.append({"volume": vol, "mean_prob": mean, "pred": hat, "label": int(groups[vol][0][1])})
        report["volumes"] = rows
        report["volume_accuracy"] = float(np.mean([r["pred"] == r["label"] for r in rows]))
    out.json("metrics.json", report)
    return out


def cmd_gradcheck(a) -> Outputs:
    worst = 0.0
    tasks = [TASKS[a.task]] if a.task else list(TASKS.values())
    for task in tasks:
        for edge_dim in (0, 3):
            mc = ModelConfig(task=task, edge_feature_dim=edge_dim, hidden_dim=a.hidden)
            err = grad_check(mc, a.seed)
            print(f"{task} edge_dim={edge_dim} max_rel_err={err:.3e}")
            worst = max(worst, err)
    print(f"max relative error {worst:.3e}")
    if worst >= 1e-4:
        raise CliError(f"gradient check failed: {worst:.3e} >= 1e-4")
    return Outputs(Path("."))


def cmd_stats(a) -> Outputs:
    report = {}
    for p in _inputs(a.inputs, [".vol.json", ".graph.json"]):
        if p.name.endswith(".vol.json"):
            grid = read_volume(p)
            report[p.name] = {"dims": list(grid.dims), **sparsity_stats(binarize(grid, a.threshold))}
        else:
            g = read_graph(p)
            report[p.name] = {"vertices": g.num_vertices, "edges": g.num_edges,
                              "components": features.num_components(g)}
    print(json.dumps(report, indent=1, sort_keys=True))
    out = Outputs(a.out) if a.out else Outputs(Path("."))
    if a.out:
        out.json("stats.json", report)
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _positive(kind):
    def parse(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
        return v

    return parse


def _nonneg(kind):
    def parse(s):
        v = kind(s)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
        return v

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    sk = argparse.ArgumentParser(add_help=False)
    sk.add_argument("--threshold", type=float, default=0.5)
    sk.add_argument("--max-nodes", type=_positive(int), default=300)
    sk.add_argument("--r-min", type=_positive(float), default=1.0)
    sk.add_argument("--tau", type=_nonneg(float), default=SkeletonConfig.tau)
    sk.add_argument("--radius-scale", type=_positive(float), default=SkeletonConfig.radius_scale)
    sk.add_argument("--theta-tol", type=_nonneg(float), default=15.0)
    sk.add_argument("--connect-components", action="store_true", help="stitch skeleton components together")

    ap = argparse.ArgumentParser(prog="skelgraph", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthetic datasets")
    p.add_argument("kind", choices=["grids", "parts"])
    p.add_argument("--count", type=_nonneg(int), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--depth", type=_positive(int), default=5, help="slices per grid volume")
    p.add_argument("--max-gap", type=_nonneg(float), default=0.1)
    p.add_argument("--density", type=_positive(int), default=4)

    p = sub.add_parser("convert", parents=[common], help="volumes, meshes or clouds to graphs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--from", dest="src", choices=["voxel", "mesh", "cloud"], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--radius", type=_positive(float), default=1.0)
    p.add_argument("--k", type=_positive(int), default=None)
    p.add_argument("--metric", choices=list(convert.METRICS), default="euclidean")
    p.add_argument("--pairs", action="store_true", help="merge generated part pairs into one graph each")
    p.add_argument("--proximity", type=_positive(float), default=0.25)
    p.add_argument("--tip-scale", type=_positive(float), default=0.1)

    p = sub.add_parser("skeletonize", parents=[common, sk], help="sphere-node skeleton graphs per patch")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--patch-size", type=_positive(int), default=256)

    p = sub.add_parser("featurize", parents=[common], help="fill features, write descriptor table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--theta-tol", type=_nonneg(float), default=15.0)

    p = sub.add_parser("train", parents=[common], help="fit a GAT or a forest")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--model", choices=["gat", "forest"], default="gat")
    p.add_argument("--task", choices=list(TASKS), default="graph-class")
    p.add_argument("--epochs", type=_nonneg(int), default=30)
    p.add_argument("--lr", type=_positive(float), default=1e-3)
    p.add_argument("--hidden", type=_positive(int), default=32)
    p.add_argument("--num-trees", type=_positive(int), default=50)
    p.add_argument("--max-depth", type=_nonneg(int), default=6)

    p = sub.add_parser("eval", parents=[common], help="metrics report for a trained model")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--model", choices=["gat", "forest"], default="gat")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--aggregate", choices=["patch", "volume"], default="patch")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the GAT gradients")
    p.add_argument("--task", choices=list(TASKS))
    p.add_argument("--hidden", type=_positive(int), default=ModelConfig.hidden_dim)

    p = sub.add_parser("stats", parents=[common], help="sparsity and graph size statistics")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            ap.error(f"cannot read config {args.config}: {exc}")
        sub = ap._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if unknown:
            ap.error(f"unknown config keys: {', '.join(unknown)}")
        # config values become defaults, so flags given on the command line win
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = ap.parse_args(argv)
    return args


COMMANDS = {
    "generate": cmd_generate,
    "convert": cmd_convert,
    "skeletonize": cmd_skeletonize,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        out = COMMANDS[args.command](args)
    except (CliError, FormatError, ValueError, OSError, KeyError) as exc:
        print(f"skelgraph {args.command}: error: {exc}", file=sys.stderr)
        return 1
    out.commit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
