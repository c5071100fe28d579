"""Exact t-SNE projection of embedding vectors to 2D.

O(n^2) affinities and gradients, no tree approximation: the scale here is a
few thousand points and exactness keeps the gradient checkable against
finite differences. Point initialization is keyed by record id, not array
position, so permuting the input permutes the output rows and nothing else.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, NumericalError, ParameterError

_EPS = 1e-12


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iter: int = 250
    early_exaggeration: float = 12.0
    early_exaggeration_iters: int = 250
    seed: int = 0

    def validate(self, n_points: int) -> None:
        if self.perplexity < 2:
            raise ParameterError("perplexity must be >= 2")
        if self.perplexity >= n_points:
            raise ParameterError(
                f"perplexity {self.perplexity} must be < point count {n_points}")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")


@dataclass(frozen=True)
class Map2D:
    ids: tuple[str, ...]
    coords: np.ndarray  # (n, 2)
    kl_initial: float
    kl_final: float
    config: TsneConfig

    def coord_of(self, rec_id: str) -> tuple[float, float]:
        i = self.ids.index(rec_id)
        return float(self.coords[i, 0]), float(self.coords[i, 1])


# --------------------------------------------------------------------------
# affinities
# --------------------------------------------------------------------------

def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _row_entropy(d2_row: np.ndarray, beta: float, self_idx: int):
    p = np.exp(-d2_row * beta)
    p[self_idx] = 0.0
    total = p.sum()
    if total <= 0.0:
        return np.zeros_like(p), -np.inf
    p /= total
    # Shannon entropy in nats; perplexity is exp(H)
    nz = p > 0
    h = float(-(p[nz] * np.log(p[nz])).sum())
    return p, h


def _bisect_beta(d2_row: np.ndarray, self_idx: int, perplexity: float,
                 max_steps: int = 50, tol: float = 1e-4):
    """Find the Gaussian precision whose conditional perplexity hits the
    target, by doubling/halving bracketing then bisection."""
    target_h = np.log(perplexity)
    beta = 1.0
    beta_min, beta_max = -np.inf, np.inf
    p, h = _row_entropy(d2_row, beta, self_idx)
    for _ in range(max_steps):
        if abs(np.exp(h) - perplexity) <= tol:
            break
        if h > target_h:  # too flat: raise precision
            beta_min = beta
            beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
        else:
            beta_max = beta
            beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        p, h = _row_entropy(d2_row, beta, self_idx)
    return p, beta


def conditional_bandwidths(vectors, perplexity: float) -> np.ndarray:
    """Per-point Gaussian sigmas found by the bisection search."""
    x = _check_points(vectors)
    d2 = _squared_distances(x)
    betas = np.array([_bisect_beta(d2[i], i, perplexity)[1]
                      for i in range(len(x))])
    return np.sqrt(1.0 / (2.0 * betas))


def pairwise_affinities(vectors, perplexity: float) -> np.ndarray:
    """Symmetric joint probabilities with per-point bisected bandwidths.

    Entries are floored at 1e-12 off the diagonal and renormalized, so the
    matrix is a valid distribution with an exactly zero diagonal.
    """
    x = _check_points(vectors)
    n = len(x)
    if perplexity >= n:
        raise ParameterError(f"perplexity {perplexity} must be < {n} points")
    if perplexity < 2:
        raise ParameterError("perplexity must be >= 2")
    d2 = _squared_distances(x)
    cond = np.empty((n, n))
    for i in range(n):
        cond[i], _ = _bisect_beta(d2[i], i, perplexity)
    joint = (cond + cond.T) / (2.0 * n)
    off = ~np.eye(n, dtype=bool)
    joint[off] = np.maximum(joint[off], _EPS)
    joint /= joint.sum()
    return joint


def low_dim_affinities(coords: np.ndarray):
    """Student-t (1 dof) affinities Q and the unnormalized kernel W."""
    coords = np.asarray(coords, dtype=np.float64)
    w = 1.0 / (1.0 + _squared_distances(coords))
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    off = ~np.eye(len(coords), dtype=bool)
    q[off] = np.maximum(q[off], _EPS)
    q /= q.sum()
    return q, w


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def tsne_gradient(p: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Analytic gradient of KL(P || Q) with respect to the 2D coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    q, w = low_dim_affinities(coords)
    pqw = (p - q) * w
    return 4.0 * (np.diag(pqw.sum(axis=1)) @ coords - pqw @ coords)


def _check_points(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ParameterError("need at least 3 points in a 2-D array")
    if not np.all(np.isfinite(x)):
        raise ParameterError("points must be finite")
    return x


# --------------------------------------------------------------------------
# optimization
# --------------------------------------------------------------------------

def _seeded_init(ids: tuple[str, ...], seed: int) -> np.ndarray:
    """Per-id Gaussian init (std 1e-4): a point's start depends only on its
    id and the seed, never on its position in the input."""
    coords = np.empty((len(ids), 2))
    for i, rec_id in enumerate(ids):
        digest = hashlib.sha256(f"{seed}:{rec_id}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        coords[i] = rng.standard_normal(2) * 1e-4
    return coords


def tsne(vectors, cfg: TsneConfig, ids=None) -> Map2D:
    """Project vectors to 2D by gradient descent on KL(P || Q).

    Deterministic for a fixed seed. Aborts with a diagnostic if the
    optimization produces non-finite coordinates.
    """
    x = _check_points(vectors)
    n = len(x)
    cfg.validate(n)
    if ids is None:
        ids = tuple(f"{i:06d}" for i in range(n))
    else:
        ids = tuple(str(i) for i in ids)
        if len(ids) != n:
            raise ParameterError("ids and vectors disagree in length")
        if len(set(ids)) != n:
            raise ParameterError("ids must be unique")
    # canonical processing order makes output order-independent bit for bit
    order = np.argsort(np.array(ids))
    ids_sorted = tuple(ids[i] for i in order)
    x = x[order]

    p = pairwise_affinities(x, cfg.perplexity)
    coords = _seeded_init(ids_sorted, cfg.seed)
    q0, _ = low_dim_affinities(coords)
    kl_initial = kl_divergence(p, q0)

    update = np.zeros_like(coords)
    gains = np.ones_like(coords)
    for it in range(cfg.iterations):
        exaggeration = (cfg.early_exaggeration
                        if it < cfg.early_exaggeration_iters else 1.0)
        # overflow here is detected via the finite check, not warnings
        with np.errstate(over="ignore", invalid="ignore"):
            q, w = low_dim_affinities(coords)
            pqw = (exaggeration * p - q) * w
            grad = 4.0 * (np.diag(pqw.sum(axis=1)) @ coords - pqw @ coords)
            same_sign = (grad > 0) == (update > 0)
            gains[same_sign] *= 0.8
            gains[~same_sign] += 0.2
            np.maximum(gains, 0.01, out=gains)
            momentum = (cfg.momentum_start if it < cfg.momentum_switch_iter
                        else cfg.momentum_final)
            update = momentum * update - cfg.learning_rate * gains * grad
            coords = coords + update
            coords = coords - coords.mean(axis=0)
        if not np.all(np.isfinite(coords)):
            raise NumericalError(
                f"t-SNE diverged at iteration {it}: non-finite coordinates "
                f"(learning_rate={cfg.learning_rate})")

    qf, _ = low_dim_affinities(coords)
    kl_final = kl_divergence(p, qf)
    return Map2D(ids=ids_sorted, coords=coords, kl_initial=kl_initial,
                 kl_final=kl_final, config=cfg)


# --------------------------------------------------------------------------
# map file
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MapEntry:
    id: str
    x: float
    y: float
    class_label: int | None = None
    type_label: int | None = None
    tags: tuple[str, ...] = ()


_MAP_HEADER = "id\tx\ty\tclass_label\ttype_label\ttags"


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def map_entries(map2d: Map2D, records) -> list[MapEntry]:
    """Join map coordinates with record metadata; every map id must appear
    among the records."""
    by_id = {}
    for rec in records:
        by_id[rec.id] = rec
    missing = [i for i in map2d.ids if i not in by_id]
    if missing:
        raise ConsistencyError(
            f"{len(missing)} map ids missing from records, e.g. {missing[0]!r}")
    entries = []
    for i, rec_id in enumerate(map2d.ids):
        rec = by_id[rec_id]
        entries.append(MapEntry(
            id=rec_id,
            x=float(map2d.coords[i, 0]),
            y=float(map2d.coords[i, 1]),
            class_label=rec.class_label,
            type_label=rec.type_label,
            tags=tuple(rec.tags),
        ))
    entries.sort(key=lambda e: e.id)
    return entries


def write_map(entries: list[MapEntry], path) -> None:
    lines = [_MAP_HEADER]
    for e in entries:
        cls = "" if e.class_label is None else str(e.class_label)
        typ = "" if e.type_label is None else str(e.type_label)
        lines.append(f"{e.id}\t{_fmt(e.x)}\t{_fmt(e.y)}\t{cls}\t{typ}\t"
                     f"{','.join(e.tags)}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def export_map(map2d: Map2D, records, path) -> list[MapEntry]:
    """Write one delimited row per point, stably ordered by id."""
    entries = map_entries(map2d, records)
    write_map(entries, path)
    return entries


def load_map(path) -> list[MapEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAP_HEADER:
        raise FormatError("bad or missing map header")
    entries = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 6:
            raise FormatError(f"malformed map row: {ln!r}")
        rec_id, xs, ys, cls, typ, tags = parts
        entries.append(MapEntry(
            id=rec_id,
            x=float(xs),
            y=float(ys),
            class_label=None if cls == "" else int(cls),
            type_label=None if typ == "" else int(typ),
            tags=tuple(tags.split(",")) if tags else (),
        ))
    return entries
