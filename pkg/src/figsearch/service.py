"""Local HTTP query service and keyword-seeded retrieval.

The service owns an immutable index snapshot; every response carries its
snapshot_version. Read endpoints are side-effect-free; mark submissions
append to a JSONL record behind a single writer lock.

Wire contract (JSON over HTTP, frozen for the UI):
  POST /query   {"id"|"image_pgm_b64"|"keyword": ..., "k": int,
                 "exclude_self": bool, "k_seed": int}
                -> {"snapshot_version", "status", "query_id", "results":
                    [{"id","similarity","class_label","type_label","tags",
                      "thumbnail"}]}
  GET  /map     -> {"snapshot_version", "points": [{"id","x","y",
                    "class_label","type_label","tags"}]}
  GET  /image/<id>  -> binary PGM (the stored raster, no recompression)
  GET  /stats   -> {"snapshot_version","count","dim","metric",
                    "class_histogram","type_histogram","tag_histogram"}
  POST /marks   {"groups": [{"name", "marks": [[bool,...] per evaluator]}]}
                -> {"snapshot_version", "scores": {name: S}, "anova": {...}}
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .dataset import parse_pgm, resize_area
from .errors import FigsearchError, ParameterError
from .index import EmbeddingIndex, embed, multi_query, topk
from .metrics import EvalGroup, eval_score, marks_anova
from .network import DualNetConfig, ModelParams
from .projection import load_map


def _as_int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"{name} must be an integer") from exc


@dataclass(frozen=True)
class KeywordResult:
    status: str                      # "ok" or "no_seeds"
    seed_ids: tuple[str, ...]
    results: list[tuple[str, float]]


def keyword_query(index: EmbeddingIndex, keyword: str, k_seed: int,
                  k_total: int) -> KeywordResult:
    """Seed a multi-vector query from records whose tags contain the keyword.

    Tag matching is a case-insensitive substring test; up to k_seed seeds
    are taken in ascending id order and excluded from the results. No match
    yields an empty result with status "no_seeds" rather than an error.
    """
    if k_seed < 1:
        raise ParameterError("k_seed must be >= 1")
    needle = keyword.lower()
    seeds = [rec for rec in index.records
             if any(needle in tag.lower() for tag in rec.tags)][:k_seed]
    if not seeds:
        return KeywordResult(status="no_seeds", seed_ids=(), results=[])
    seed_ids = tuple(rec.id for rec in seeds)
    results = multi_query(index, [rec.vector for rec in seeds], k_total,
                          exclude_ids=seed_ids)
    return KeywordResult(status="ok", seed_ids=seed_ids, results=results)


class RetrievalService:
    """Request-independent state: index snapshot, model, corpus rasters."""

    def __init__(self, index: EmbeddingIndex, params: ModelParams,
                 cfg: DualNetConfig, corpus_root, map_path=None,
                 marks_path=None):
        self.index = index
        self.params = params
        self.cfg = cfg
        self.corpus_root = Path(corpus_root)
        manifest_file = self.corpus_root / "manifest.json"
        if manifest_file.exists():
            manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
            self.image_paths = {k: self.corpus_root / v["path"]
                                for k, v in manifest["entries"].items()}
        else:
            self.image_paths = {}
        self.map_path = Path(map_path) if map_path else None
        self.marks_path = Path(marks_path) if marks_path else None
        self._marks_lock = threading.Lock()
        self._marks_seq = 0

    # -- queries ------------------------------------------------------------

    def _result_entry(self, rec_id: str, similarity: float) -> dict:
        rec = self.index.get(rec_id)
        return {
            "id": rec_id,
            "similarity": similarity,
            "class_label": rec.class_label,
            "type_label": rec.type_label,
            "tags": list(rec.tags),
            "thumbnail": f"/image/{rec_id}",
        }

    def query(self, payload: dict) -> dict:
        k = _as_int(payload.get("k", 9), "k")
        if k < 1:
            raise ParameterError("k must be >= 1")
        exclude_self = bool(payload.get("exclude_self", True))
        status = "ok"
        if "id" in payload:
            query_id = str(payload["id"])
            vector = self.index.get(query_id).vector
            exclude = [query_id] if exclude_self else []
            ranked = topk(self.index, vector, k, exclude_ids=exclude)
        elif "image_pgm_b64" in payload:
            vector, query_id = self._embed_upload(payload["image_pgm_b64"])
            ranked = topk(self.index, vector, k)
        elif "keyword" in payload:
            k_seed = _as_int(payload.get("k_seed", 4), "k_seed")
            kw = keyword_query(self.index, str(payload["keyword"]), k_seed, k)
            status = kw.status
            query_id = None
            ranked = kw.results
        else:
            raise ParameterError("query needs one of: id, image_pgm_b64, keyword")
        return {
            "snapshot_version": self.index.snapshot_version,
            "status": status,
            "query_id": query_id,
            "results": [self._result_entry(r, s) for r, s in ranked],
        }

    def _embed_upload(self, b64: str):
        try:
            blob = base64.b64decode(b64, validate=True)
        except Exception as exc:
            raise ParameterError(f"invalid base64 image payload: {exc}") from exc
        image = parse_pgm(blob)
        h, w, _ = self.cfg.input_shape
        image = resize_area(image, h, w)
        vector = embed(self.params, self.cfg, image)
        digest = hashlib.sha256(blob).hexdigest()[:12]
        return vector, f"upload-{digest}"

    # -- map / stats / images ------------------------------------------------

    def map_points(self) -> dict:
        if self.map_path is None or not self.map_path.exists():
            raise FileNotFoundError("no 2D map has been built")
        points = [{
            "id": e.id, "x": e.x, "y": e.y,
            "class_label": e.class_label, "type_label": e.type_label,
            "tags": list(e.tags),
        } for e in load_map(self.map_path)]
        return {"snapshot_version": self.index.snapshot_version,
                "points": points}

    def stats(self) -> dict:
        classes: dict[str, int] = {}
        types: dict[str, int] = {}
        tags: dict[str, int] = {}
        for rec in self.index.records:
            if rec.class_label is not None:
                classes[str(rec.class_label)] = classes.get(str(rec.class_label), 0) + 1
            if rec.type_label is not None:
                types[str(rec.type_label)] = types.get(str(rec.type_label), 0) + 1
            for tag in rec.tags:
                tags[tag] = tags.get(tag, 0) + 1
        return {
            "snapshot_version": self.index.snapshot_version,
            "count": len(self.index),
            "dim": self.index.dim,
            "metric": self.index.metric,
            "class_histogram": classes,
            "type_histogram": types,
            "tag_histogram": tags,
        }

    def image_bytes(self, rec_id: str) -> bytes:
        path = self.image_paths.get(rec_id)
        if path is None or not path.exists():
            raise KeyError(rec_id)
        return path.read_bytes()

    # -- marks ----------------------------------------------------------------

    def submit_marks(self, payload: dict) -> dict:
        raw_groups = payload.get("groups")
        if not isinstance(raw_groups, list) or not raw_groups:
            raise ParameterError("marks payload needs a non-empty groups list")
        groups = []
        for g in raw_groups:
            try:
                groups.append(EvalGroup(name=str(g["name"]),
                                        marks=np.asarray(g["marks"], dtype=bool)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParameterError(f"malformed marks group: {exc}") from exc
        scores = {g.name: eval_score(g) for g in groups}
        anova = marks_anova(groups) if len(groups) >= 2 else None
        if self.marks_path is not None:
            with self._marks_lock:
                self._marks_seq += 1
                line = json.dumps({
                    "seq": self._marks_seq,
                    "snapshot_version": self.index.snapshot_version,
                    "groups": [{"name": g.name, "marks": g.marks.tolist()}
                               for g in groups],
                }, sort_keys=True)
                with open(self.marks_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        out = {"snapshot_version": self.index.snapshot_version, "scores": scores}
        if anova is not None:
            out["anova"] = {
                "f_stat": anova.f_stat, "p_value": anova.p_value,
                "df_between": anova.df_between, "df_within": anova.df_within,
                "degenerate": anova.degenerate,
            }
        return out


class _Handler(BaseHTTPRequestHandler):
    service: RetrievalService  # set by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, payload: dict, status: int = 200) -> None:
        blob = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(blob)

    def _send_error_json(self, status: int, reason: str) -> None:
        self._send_json({"error": reason}, status=status)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        blob = self.rfile.read(length) if length else b"{}"
        try:
            payload = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParameterError(f"malformed JSON body: {exc}") from exc
        if not isinstance(payload, dict):
            raise ParameterError("JSON body must be an object")
        return payload

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        try:
            if self.path == "/stats":
                self._send_json(self.service.stats())
            elif self.path == "/map":
                try:
                    self._send_json(self.service.map_points())
                except FileNotFoundError as exc:
                    self._send_error_json(404, str(exc))
            elif self.path.startswith("/image/"):
                rec_id = self.path[len("/image/"):]
                try:
                    blob = self.service.image_bytes(rec_id)
                except KeyError:
                    self._send_error_json(404, f"unknown image id {rec_id!r}")
                    return
                self.send_response(200)
                self.send_header("Content-Type", "image/x-portable-graymap")
                self.send_header("Content-Length", str(len(blob)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(blob)
            else:
                self._send_error_json(404, f"unknown path {self.path!r}")
        except FigsearchError as exc:
            self._send_error_json(400, str(exc))
        except Exception as exc:  # keep the connection answered, not dropped
            self._send_error_json(500, f"internal error: {exc}")

    def do_POST(self):
        try:
            payload = self._read_body()
            if self.path == "/query":
                self._send_json(self.service.query(payload))
            elif self.path == "/marks":
                self._send_json(self.service.submit_marks(payload))
            else:
                self._send_error_json(404, f"unknown path {self.path!r}")
        except FigsearchError as exc:
            self._send_error_json(400, str(exc))
        except Exception as exc:  # keep the connection answered, not dropped
            self._send_error_json(500, f"internal error: {exc}")


def make_server(service: RetrievalService, port: int) -> ThreadingHTTPServer:
    """Bind a threading HTTP server; caller runs serve_forever/shutdown."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
