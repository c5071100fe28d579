"""Command-line pipeline: gen-data, train, embed, query, map, eval, serve.

Every artifact the CLI writes (corpus layout, checkpoints, index, map,
history) is re-readable by the CLI; versioned artifacts are written through
a temp file and atomic rename so a failed run never leaves a partial file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (CorpusSpec, SplitRatios, balance_and_split, domain_tag,
                      generate_synthetic_corpus, load_corpus, read_pgm,
                      resize_area, save_corpus)
from .errors import FigsearchError, ParameterError
from .index import (EmbeddingIndex, EmbeddingRecord, embed, export_text,
                    load_index, save_index, topk)
from .metrics import EvalGroup, accuracy, confusion, format_report, marks_anova
from .network import (DualNetConfig, forward, init_params, load_checkpoint,
                      save_checkpoint)
from .projection import TsneConfig, export_map, tsne
from .service import RetrievalService, keyword_query, make_server
from .trainer import TrainConfig, freeze_lower, train_aux, train_main


@dataclass(frozen=True)
class ProjectConfig:
    """Paths and nested configs for one end-to-end project."""

    corpus_dir: str = "artifacts/corpus"
    checkpoint_aux_path: str = "artifacts/checkpoint-aux.bin"
    checkpoint_path: str = "artifacts/checkpoint.bin"
    index_path: str = "artifacts/index.bin"
    map_path: str = "artifacts/map.tsv"
    history_path: str = "artifacts/history.jsonl"
    summary_path: str = "artifacts/summary.json"
    marks_path: str = "artifacts/marks.jsonl"
    corpus: CorpusSpec = field(default_factory=lambda: CorpusSpec(seed=7))
    ratios: SplitRatios = field(default_factory=SplitRatios)
    target_per_class: int = 40
    net: DualNetConfig = field(default_factory=DualNetConfig)
    # stage learning rates are desk-scale calibrated; see README
    train_aux_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.03, seed=1))
    train_main_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.01, seed=1))
    tsne: TsneConfig = field(default_factory=lambda: TsneConfig(perplexity=20.0, seed=1))
    init_seed: int = 1
    embed_splits: tuple[str, ...] = ("train", "val", "test")
    port: int = 8765

    def validate(self) -> None:
        paths = [self.corpus_dir, self.checkpoint_aux_path, self.checkpoint_path,
                 self.index_path, self.map_path, self.history_path,
                 self.summary_path, self.marks_path]
        if len(set(paths)) != len(paths):
            raise ParameterError("artifact paths must be distinct")
        self.corpus.validate()
        self.ratios.validate()
        self.net.validate()
        self.train_aux_cfg.validate()
        self.train_main_cfg.validate()
        if self.port < 1 or self.port > 65535:
            raise ParameterError("port out of range")

    @classmethod
    def from_file(cls, path) -> "ProjectConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls()
        simple = {k: raw[k] for k in (
            "corpus_dir", "checkpoint_aux_path", "checkpoint_path", "index_path",
            "map_path", "history_path", "summary_path", "marks_path",
            "target_per_class", "init_seed", "port") if k in raw}
        cfg = replace(cfg, **simple)
        if "embed_splits" in raw:
            cfg = replace(cfg, embed_splits=tuple(raw["embed_splits"]))
        if "corpus" in raw:
            cfg = replace(cfg, corpus=CorpusSpec(**raw["corpus"]))
        if "ratios" in raw:
            cfg = replace(cfg, ratios=SplitRatios(**raw["ratios"]))
        if "net" in raw:
            cfg = replace(cfg, net=DualNetConfig.from_dict(raw["net"]))
        if "train_aux" in raw:
            cfg = replace(cfg, train_aux_cfg=TrainConfig(**raw["train_aux"]))
        if "train_main" in raw:
            cfg = replace(cfg, train_main_cfg=TrainConfig(**raw["train_main"]))
        if "tsne" in raw:
            cfg = replace(cfg, tsne=TsneConfig(**raw["tsne"]))
        cfg.validate()
        return cfg


def _load_config(args) -> ProjectConfig:
    if args.config:
        return ProjectConfig.from_file(args.config)
    cfg = ProjectConfig()
    cfg.validate()
    return cfg


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_data(cfg: ProjectConfig, args) -> int:
    corpus = generate_synthetic_corpus(cfg.corpus)
    train, val, test = balance_and_split(
        corpus, cfg.ratios, cfg.target_per_class, seed=cfg.corpus.seed)
    save_corpus(cfg.corpus_dir, {"train": train, "val": val, "test": test})
    print(f"wrote corpus to {cfg.corpus_dir}: "
          f"{len(train)}/{len(val)}/{len(test)} train/val/test")
    return 0


def cmd_train(cfg: ProjectConfig, args) -> int:
    splits = load_corpus(cfg.corpus_dir)
    train, val = splits.get("train", []), splits.get("val", [])
    params = init_params(cfg.net, seed=cfg.init_seed)
    params, hist_aux = train_aux(params, cfg.net, train, val, cfg.train_aux_cfg)
    _ensure_parent(cfg.checkpoint_aux_path)
    save_checkpoint(params, cfg.net, cfg.checkpoint_aux_path)
    params = freeze_lower(params)
    params, hist_main = train_main(params, cfg.net, train, val, cfg.train_main_cfg)
    _ensure_parent(cfg.checkpoint_path)
    save_checkpoint(params, cfg.net, cfg.checkpoint_path)
    _ensure_parent(cfg.history_path)
    Path(cfg.history_path).write_text(hist_aux.to_jsonl() + hist_main.to_jsonl(),
                                      encoding="utf-8")
    summary = {
        "aux_final_val_accuracy": hist_aux.records[-1].val_accuracy,
        "aux_best_val_accuracy": max(r.val_accuracy for r in hist_aux.records),
        "main_final_val_accuracy": hist_main.records[-1].val_accuracy,
        "main_best_val_accuracy": max(r.val_accuracy for r in hist_main.records),
        "checkpoint": cfg.checkpoint_path,
        "checkpoint_aux": cfg.checkpoint_aux_path,
    }
    _ensure_parent(cfg.summary_path)
    Path(cfg.summary_path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"aux val accuracy {summary['aux_final_val_accuracy']:.3f}, "
          f"main val accuracy {summary['main_final_val_accuracy']:.3f}")
    print(f"checkpoints: {cfg.checkpoint_aux_path}, {cfg.checkpoint_path}")
    return 0


def cmd_embed(cfg: ProjectConfig, args) -> int:
    params, net = load_checkpoint(cfg.checkpoint_path)
    splits = load_corpus(cfg.corpus_dir)
    snapshot = 1
    if Path(cfg.index_path).exists():
        snapshot = load_index(cfg.index_path).snapshot_version + 1
    records = []
    for split in cfg.embed_splits:
        for ex in splits.get(split, []):
            records.append(EmbeddingRecord(
                id=ex.id,
                vector=embed(params, net, ex.image),
                class_label=ex.class_label,
                type_label=ex.type_label,
                tags=(domain_tag(ex.class_label), split),
            ))
    index = EmbeddingIndex(records, snapshot_version=snapshot)
    _ensure_parent(cfg.index_path)
    save_index(index, cfg.index_path)
    print(f"indexed {len(index)} records (dim {index.dim}, "
          f"snapshot {index.snapshot_version}) -> {cfg.index_path}")
    if args.export_text:
        export_text(index, args.export_text)
        print(f"text export -> {args.export_text}")
    return 0


def cmd_query(cfg: ProjectConfig, args) -> int:
    if not Path(cfg.index_path).exists():
        raise ParameterError(f"index file not found: {cfg.index_path}")
    index = load_index(cfg.index_path)
    if args.id:
        rec = index.get(args.id)
        exclude = [args.id] if args.exclude_self else []
        results = topk(index, rec.vector, args.k, exclude_ids=exclude)
    elif args.file:
        params, net = load_checkpoint(cfg.checkpoint_path)
        image = read_pgm(args.file)
        h, w, _ = net.input_shape
        results = topk(index, embed(params, net, resize_area(image, h, w)), args.k)
    elif args.keyword:
        kw = keyword_query(index, args.keyword, args.k_seed, args.k)
        if kw.status == "no_seeds":
            print(f"no records tagged with {args.keyword!r}")
            return 0
        print(f"seeds: {', '.join(kw.seed_ids)}")
        results = kw.results
    else:
        raise ParameterError("query needs --id, --file, or --keyword")
    for rank, (rec_id, sim) in enumerate(results, start=1):
        rec = index.get(rec_id)
        print(f"{rank:3d}. {rec_id}  sim={sim:.6f}  class={rec.class_label} "
              f"type={rec.type_label}  tags={','.join(rec.tags)}")
    return 0


def cmd_map(cfg: ProjectConfig, args) -> int:
    index = load_index(cfg.index_path)
    vectors = np.stack([rec.vector for rec in index.records])
    map2d = tsne(vectors, cfg.tsne, ids=index.ids)
    out = args.out or cfg.map_path
    _ensure_parent(out)
    export_map(map2d, index.records, out)
    print(f"map with {len(map2d.ids)} points -> {out} "
          f"(KL {map2d.kl_initial:.4f} -> {map2d.kl_final:.4f})")
    return 0


def cmd_eval(cfg: ProjectConfig, args) -> int:
    params, net = load_checkpoint(cfg.checkpoint_path)
    splits = load_corpus(cfg.corpus_dir)
    test = splits.get("test", [])
    if not test:
        raise ParameterError("corpus has no test split")
    batch = np.stack([ex.image for ex in test])[..., None]
    _, _, aux_probs, main_probs = forward(params, net, batch)
    types = np.array([ex.type_label for ex in test])
    classes = np.array([ex.class_label for ex in test])
    aux_pred = aux_probs.argmax(axis=1)
    main_pred = main_probs.argmax(axis=1)
    groups = None
    anova = None
    if args.marks:
        raw = json.loads(Path(args.marks).read_text(encoding="utf-8"))
        groups = [EvalGroup(name=g["name"], marks=np.asarray(g["marks"], dtype=bool))
                  for g in raw["groups"]]
        if len(groups) >= 2:
            anova = marks_anova(groups)
    report = format_report(
        aux_accuracy=accuracy(aux_pred, types),
        main_accuracy=accuracy(main_pred, classes),
        aux_confusion=confusion(aux_pred, types, net.type_count),
        main_confusion=confusion(main_pred, classes, net.class_count),
        groups=groups,
        anova=anova,
    )
    print(report, end="")
    return 0


def cmd_serve(cfg: ProjectConfig, args) -> int:
    for required, label in ((cfg.index_path, "index"),
                            (cfg.checkpoint_path, "checkpoint")):
        if not Path(required).exists():
            raise ParameterError(f"{label} not found: {required}; "
                                 f"run the pipeline first")
    index = load_index(cfg.index_path)
    params, net = load_checkpoint(cfg.checkpoint_path)
    service = RetrievalService(index, params, net, cfg.corpus_dir,
                               map_path=cfg.map_path, marks_path=cfg.marks_path)
    port = args.port or cfg.port
    server = make_server(service, port)
    print(f"serving {len(index)} records on http://127.0.0.1:{port} "
          f"(snapshot {index.snapshot_version}); Ctrl-C to stop")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figsearch",
        description="figure embedding, retrieval, and mapping pipeline")
    parser.add_argument("--config", help="project config JSON", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate and write the synthetic corpus")
    sub.add_parser("train", help="two-stage training; writes checkpoints")

    p_embed = sub.add_parser("embed", help="build and save the vector index")
    p_embed.add_argument("--export-text", default=None,
                         help="also write a plain-text index export")

    p_query = sub.add_parser("query", help="rank similar figures")
    p_query.add_argument("--id", default=None, help="query by indexed id")
    p_query.add_argument("--file", default=None, help="query by PGM image file")
    p_query.add_argument("--keyword", default=None, help="keyword-seeded query")
    p_query.add_argument("-k", type=int, default=9)
    p_query.add_argument("--k-seed", type=int, default=4,
                         help="seed set size for keyword queries")
    p_query.add_argument("--exclude-self", action="store_true", default=True)
    p_query.add_argument("--include-self", dest="exclude_self",
                         action="store_false")

    p_map = sub.add_parser("map", help="project the index to 2D")
    p_map.add_argument("--out", default=None)

    p_eval = sub.add_parser("eval", help="print the metrics report")
    p_eval.add_argument("--marks", default=None,
                        help="JSON file with evaluator mark groups")

    p_serve = sub.add_parser("serve", help="start the local query service")
    p_serve.add_argument("--port", type=int, default=None)
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "embed": cmd_embed,
    "query": cmd_query,
    "map": cmd_map,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg, args)
    except FigsearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
