"""Synthetic two-label figure corpus: generation, augmentation, balancing,
splitting, and page segmentation.

An image is a 2-D float array with values in [0, 1]; ink is 1 on a 0
background. Every operation is a pure function of its inputs and seed, so
reruns are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ParameterError

# Domain vocabulary used to tag records for keyword-seeded retrieval.
DOMAIN_TAGS = ("flywheel", "milling", "aircraft", "robotics")


@dataclass(frozen=True)
class LabeledExample:
    """One figure with its visual material type and domain class labels."""

    image: np.ndarray
    type_label: int
    class_label: int
    id: str


@dataclass(frozen=True)
class CorpusSpec:
    """Shape of a synthetic corpus: T type families x K classes x per_cell."""

    t_types: int = 4
    k_classes: int = 8
    per_cell: int = 10
    image_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.t_types < 2 or self.k_classes < 2:
            raise ParameterError("need at least 2 types and 2 classes")
        if self.per_cell < 1:
            raise ParameterError("per_cell must be >= 1")
        if self.image_size < 16:
            raise ParameterError("image_size must be >= 16")


@dataclass(frozen=True)
class SplitRatios:
    train: float = 6.0
    val: float = 1.0
    test: float = 1.0

    def validate(self) -> None:
        if min(self.train, self.val, self.test) <= 0:
            raise ParameterError("split weights must all be > 0")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


def check_image(image: np.ndarray) -> None:
    """Validate the image contract: 2-D, non-empty, finite, values in [0,1]."""
    if not isinstance(image, np.ndarray) or image.ndim != 2 or image.size == 0:
        raise ParameterError("image must be a non-empty 2-D array")
    if not np.all(np.isfinite(image)):
        raise ParameterError("image contains non-finite pixels")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ParameterError("pixel values must lie in [0, 1]")


def domain_tag(class_label: int) -> str:
    return DOMAIN_TAGS[class_label % len(DOMAIN_TAGS)]


# --------------------------------------------------------------------------
# rasterization helpers
# --------------------------------------------------------------------------

def _stamp_points(img: np.ndarray, rr: np.ndarray, cc: np.ndarray,
                  radius: float) -> None:
    """Ink every pixel whose center lies within radius of any sample point."""
    h, w = img.shape
    span = int(np.ceil(radius)) + 1
    base_r = np.floor(rr).astype(np.int64)
    base_c = np.floor(cc).astype(np.int64)
    for kr in range(-span, span + 1):
        for kc in range(-span, span + 1):
            pr = base_r + kr
            pc = base_c + kc
            hit = ((pr - rr) ** 2 + (pc - cc) ** 2 <= radius ** 2) \
                & (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
            img[pr[hit], pc[hit]] = 1.0


def _draw_line(img, r0, c0, r1, c1, thickness=1.0):
    n = int(np.hypot(r1 - r0, c1 - c0) * 2) + 2
    ts = np.linspace(0.0, 1.0, n)
    _stamp_points(img, r0 + ts * (r1 - r0), c0 + ts * (c1 - c0), thickness / 2)


def _draw_rect(img, top, left, bottom, right, thickness=1.0):
    _draw_line(img, top, left, top, right, thickness)
    _draw_line(img, bottom, left, bottom, right, thickness)
    _draw_line(img, top, left, bottom, left, thickness)
    _draw_line(img, top, right, bottom, right, thickness)


def _draw_circle(img, rc, cc, radius, thickness=1.0):
    n = max(int(2 * np.pi * radius * 2), 8)
    angles = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    _stamp_points(img, rc + radius * np.sin(angles), cc + radius * np.cos(angles),
                  thickness / 2)


# --------------------------------------------------------------------------
# type-family renderers; n_items carries the class signal
# --------------------------------------------------------------------------

def _span(lo, hi):
    """Collapse an inverted sampling range (tiny canvases) to its midpoint."""
    if hi >= lo:
        return lo, hi
    mid = (lo + hi) / 2.0
    return mid, mid


def _render_strokes(img, rng, n_items, thickness):
    h, w = img.shape
    m = 4
    for _ in range(n_items):
        r0, r1 = rng.uniform(m, h - m, 2)
        c0, c1 = rng.uniform(m, w - m, 2)
        _draw_line(img, r0, c0, r1, c1, thickness)


def _render_boxes(img, rng, n_items, thickness):
    h, w = img.shape
    m = 4
    centers = []
    for _ in range(n_items):
        rc = rng.uniform(*_span(m + 5, h - m - 5))
        cc = rng.uniform(*_span(m + 5, w - m - 5))
        bh = rng.uniform(4, max(5, h / 6))
        bw = rng.uniform(5, max(6, w / 5))
        _draw_rect(img, max(m, rc - bh / 2), max(m, cc - bw / 2),
                   min(h - m, rc + bh / 2), min(w - m, cc + bw / 2), thickness)
        centers.append((rc, cc))
    for (ra, ca), (rb, cb) in zip(centers, centers[1:]):
        _draw_line(img, ra, ca, rb, cb, thickness)


def _render_plot(img, rng, n_items, thickness):
    h, w = img.shape
    m = 5
    _draw_line(img, m, m, h - m, m, thickness)           # y axis
    _draw_line(img, h - m, m, h - m, w - m, thickness)   # x axis
    xs = np.linspace(m + 2, w - m - 2, 2 * n_items + 1)
    peak_lo, peak_hi = _span(m + 2, (h - 2 * m) * 0.45 + m)
    base_lo, base_hi = _span((h - 2 * m) * 0.7 + m, h - m - 2)
    ys = [h - m - 2.0]
    for i in range(1, len(xs)):
        if i % 2:  # odd vertices are peaks, even ones return near the axis
            ys.append(rng.uniform(peak_lo, peak_hi))
        else:
            ys.append(rng.uniform(base_lo, base_hi))
    for i in range(len(xs) - 1):
        _draw_line(img, ys[i], xs[i], ys[i + 1], xs[i + 1], thickness)


def _render_grid(img, rng, n_items, thickness):
    h, w = img.shape
    m = 5
    rows = 2 + n_items // 2
    cols = 2 + (n_items + 1) // 2
    jr = rng.uniform(-1.5, 1.5, rows + 1)
    jc = rng.uniform(-1.5, 1.5, cols + 1)
    for i in range(rows + 1):
        r = m + (h - 2 * m) * i / rows + jr[i]
        _draw_line(img, r, m, r, w - m, thickness)
    for j in range(cols + 1):
        c = m + (w - 2 * m) * j / cols + jc[j]
        _draw_line(img, m, c, h - m, c, thickness)


_FAMILIES = (_render_strokes, _render_boxes, _render_plot, _render_grid)


def _stamp_motif(img, rng, motif):
    """Small class glyph at a jittered top-left position."""
    h, w = img.shape
    r = rng.uniform(*_span(6, h / 4))
    c = rng.uniform(*_span(6, w / 4))
    s = 3.0
    if motif == 0:
        img[int(r - 2):int(r + 3), int(c - 2):int(c + 3)] = 1.0
    elif motif == 1:
        _draw_circle(img, r, c, s, 1.0)
    elif motif == 2:
        _draw_line(img, r - s, c, r + s, c, 1.0)
        _draw_line(img, r, c - s, r, c + s, 1.0)
    else:
        _draw_line(img, r - s, c - s, r + s, c + s, 1.0)
        _draw_line(img, r - s, c + s, r + s, c - s, 1.0)


def render_example(spec: CorpusSpec, type_label: int, class_label: int,
                   index: int) -> LabeledExample:
    """Render one figure.

    The type label picks the drawing family (strokes, connected boxes,
    axis plot, grid); the class label sets structure within the family:
    primitive count, mirror symmetry for the upper half of classes, and a
    small corner glyph.
    """
    rng = np.random.default_rng([spec.seed, 11, type_label, class_label, index])
    img = np.zeros((spec.image_size, spec.image_size), dtype=np.float64)
    family = _FAMILIES[type_label % len(_FAMILIES)]
    thickness = 1.0 + (type_label // len(_FAMILIES)) * 0.5
    n_items = 2 + class_label
    family(img, rng, n_items, thickness)
    if class_label >= spec.k_classes // 2:
        np.maximum(img, img[:, ::-1], out=img)
    _stamp_motif(img, rng, class_label % 4)
    np.clip(img, 0.0, 1.0, out=img)
    return LabeledExample(
        image=img.astype(np.float32),
        type_label=type_label,
        class_label=class_label,
        id=f"fig-t{type_label}-c{class_label}-{index:04d}",
    )


def generate_synthetic_corpus(spec: CorpusSpec) -> list[LabeledExample]:
    """Generate exactly T x K x per_cell examples, deterministic in the seed."""
    spec.validate()
    return [
        render_example(spec, t, c, i)
        for t in range(spec.t_types)
        for c in range(spec.k_classes)
        for i in range(spec.per_cell)
    ]


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

def _sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional coordinates; outside the frame reads 0."""
    h, w = img.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros_like(rows, dtype=np.float64)
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = np.where(valid, img[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)], 0.0)
        out += wgt * vals
    return out


def _rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    h, w = img.shape
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    # inverse map: rotate output coords by -theta to find source pixels
    src_r = cy + np.cos(theta) * dy + np.sin(theta) * dx
    src_c = cx - np.sin(theta) * dy + np.cos(theta) * dx
    return _sample_bilinear(img, src_r, src_c)


def _elastic(img: np.ndarray, amp: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth warp: a coarse random displacement field upsampled bilinearly."""
    h, w = img.shape
    g = 4
    field = rng.uniform(-1.0, 1.0, size=(g, g, 2))
    ys = np.linspace(0, g - 1, h)
    xs = np.linspace(0, g - 1, w)
    y0 = np.minimum(np.floor(ys).astype(int), g - 2)
    x0 = np.minimum(np.floor(xs).astype(int), g - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    f00 = field[y0][:, x0]
    f01 = field[y0][:, x0 + 1]
    f10 = field[y0 + 1][:, x0]
    f11 = field[y0 + 1][:, x0 + 1]
    disp = ((1 - fy) * (1 - fx) * f00 + (1 - fy) * fx * f01
            + fy * (1 - fx) * f10 + fy * fx * f11) * amp
    yy, xx = np.mgrid[0:h, 0:w]
    return _sample_bilinear(img, yy + disp[..., 0], xx + disp[..., 1])


def augment(example: LabeledExample, rotation_max_deg: float, deform_amp: float,
            seed) -> LabeledExample:
    """Random rotation (+ mirror) and smooth elastic deformation.

    With both parameters zero the image passes through untouched, so the
    call is an exact identity. Labels and id are always preserved.
    """
    if not 0.0 <= rotation_max_deg <= 180.0:
        raise ParameterError("rotation_max_deg must be in [0, 180]")
    if deform_amp < 0.0:
        raise ParameterError("deform_amp must be >= 0")
    check_image(example.image)
    img = example.image.astype(np.float64)
    rng = np.random.default_rng(seed)
    if rotation_max_deg > 0.0:
        img = _rotate(img, rng.uniform(-rotation_max_deg, rotation_max_deg))
        if rng.random() < 0.5:
            img = img[:, ::-1]
    if deform_amp > 0.0:
        img = _elastic(img, deform_amp, rng)
    img = np.clip(img, 0.0, 1.0)
    return replace(example, image=img.astype(np.float32))


# --------------------------------------------------------------------------
# balancing and splitting
# --------------------------------------------------------------------------

def _apportion(n: int, weights: tuple[float, ...]) -> list[int]:
    """Largest-remainder split of n items; each count within 1 of its share."""
    total = sum(weights)
    shares = [n * wgt / total for wgt in weights]
    counts = [int(np.floor(s)) for s in shares]
    remainders = [s - c for s, c in zip(shares, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


def balance_and_split(
    corpus: list[LabeledExample],
    ratios: SplitRatios,
    target_per_class: int,
    seed: int,
    rotation_max_deg: float = 15.0,
    deform_amp: float = 2.0,
) -> tuple[list[LabeledExample], list[LabeledExample], list[LabeledExample]]:
    """Top up every class stratum to target_per_class via augmentation, then
    partition each stratum by the split ratios (stratified, seeded)."""
    if not corpus:
        raise ParameterError("corpus is empty")
    ratios.validate()
    by_class: dict[int, list[LabeledExample]] = {}
    for ex in corpus:
        by_class.setdefault(ex.class_label, []).append(ex)
    biggest = max(len(v) for v in by_class.values())
    if target_per_class < biggest:
        raise ParameterError(
            f"target_per_class={target_per_class} below largest stratum {biggest}")

    train: list[LabeledExample] = []
    val: list[LabeledExample] = []
    test: list[LabeledExample] = []
    for c in sorted(by_class):
        stratum = sorted(by_class[c], key=lambda e: e.id)
        filled = list(stratum)
        j = 0
        while len(filled) < target_per_class:
            base = stratum[j % len(stratum)]
            aug = augment(base, rotation_max_deg, deform_amp,
                          seed=[seed, 17, c, j])
            filled.append(replace(aug, id=f"{base.id}-aug{j:03d}"))
            j += 1
        rng = np.random.default_rng([seed, 29, c])
        perm = rng.permutation(len(filled))
        counts = _apportion(len(filled), ratios.as_tuple())
        cut1, cut2 = counts[0], counts[0] + counts[1]
        train.extend(filled[i] for i in perm[:cut1])
        val.extend(filled[i] for i in perm[cut1:cut2])
        test.extend(filled[i] for i in perm[cut2:])
    return train, val, test


# --------------------------------------------------------------------------
# page segmentation (deterministic stand-in for a learned figure detector)
# --------------------------------------------------------------------------

def segment_page(page: np.ndarray, min_area: int, pad: int) -> list[np.ndarray]:
    """Crop one sub-image per 8-connected foreground component.

    Foreground is pixel > 0.5. Components below min_area are dropped; each
    kept bounding box is grown by pad and clamped to the page. Crops are
    ordered by bounding-box origin (top, then left). A blank page yields [].
    """
    check_image(page)
    if min_area < 1:
        raise ParameterError("min_area must be >= 1")
    if pad < 0:
        raise ParameterError("pad must be >= 0")
    mask = page > 0.5
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    areas = np.bincount(labels.ravel())
    boxes = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[lab] < min_area:
            continue
        boxes.append((sl[0].start, sl[1].start, sl[0].stop, sl[1].stop))
    boxes.sort()
    h, w = page.shape
    crops = []
    for top, left, bottom, right in boxes:
        r0 = max(0, top - pad)
        c0 = max(0, left - pad)
        r1 = min(h, bottom + pad)
        c1 = min(w, right + pad)
        crops.append(page[r0:r1, c0:c1].copy())
    return crops


# --------------------------------------------------------------------------
# raster + corpus layout I/O
# --------------------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255."""
    check_image(image)
    h, w = image.shape
    data = np.round(image * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(blob: bytes):
    i = 0
    while True:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if i < len(blob) and blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated PGM header")
        yield blob[start:i], i + 1


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def parse_pgm(blob: bytes) -> np.ndarray:
    toks = _pgm_tokens(blob)
    try:
        magic, _ = next(toks)
        if magic != b"P5":
            raise FormatError(f"not a binary PGM: magic {magic!r}")
        (w_tok, _), (h_tok, _), (max_tok, off) = next(toks), next(toks), next(toks)
        w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    except (StopIteration, ValueError) as exc:
        raise FormatError("truncated PGM header") from exc
    if maxval < 1 or maxval > 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    raw = blob[off : off + w * h]
    if len(raw) != w * h:
        raise FormatError("truncated PGM pixel data")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / maxval).astype(np.float32)


def save_corpus(root, splits: dict[str, list[LabeledExample]]) -> None:
    """Write root/<split>/<class>/<type>/<id>.pgm plus a manifest index."""
    root = Path(root)
    entries = {}
    for split, examples in splits.items():
        for ex in examples:
            rel = Path(split) / str(ex.class_label) / str(ex.type_label) / f"{ex.id}.pgm"
            dest = root / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(dest, ex.image)
            if ex.id in entries:
                raise ParameterError(f"duplicate example id {ex.id!r}")
            entries[ex.id] = {
                "split": split,
                "class_label": ex.class_label,
                "type_label": ex.type_label,
                "path": rel.as_posix(),
            }
    manifest = {"format": "figsearch-corpus", "version": 1, "entries": entries}
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_corpus(root) -> dict[str, list[LabeledExample]]:
    """Read a saved corpus back; examples per split are ordered by id."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != "figsearch-corpus":
        raise FormatError("not a figsearch corpus manifest")
    splits: dict[str, list[LabeledExample]] = {}
    for ex_id in sorted(manifest["entries"]):
        meta = manifest["entries"][ex_id]
        image = read_pgm(root / meta["path"])
        splits.setdefault(meta["split"], []).append(LabeledExample(
            image=image,
            type_label=int(meta["type_label"]),
            class_label=int(meta["class_label"]),
            id=ex_id,
        ))
    return splits


def resize_area(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-averaging resize used to normalize uploaded query images."""
    check_image(image)
    h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.astype(np.float32)
    row_edges = np.linspace(0, h, out_h + 1)
    col_edges = np.linspace(0, w, out_w + 1)
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        r0, r1 = row_edges[i], row_edges[i + 1]
        ri0, ri1 = int(np.floor(r0)), int(np.ceil(r1))
        for j in range(out_w):
            c0, c1 = col_edges[j], col_edges[j + 1]
            ci0, ci1 = int(np.floor(c0)), int(np.ceil(c1))
            patch = image[ri0:ri1, ci0:ci1].astype(np.float64)
            wy = np.minimum(np.arange(ri0, ri1) + 1, r1) - np.maximum(np.arange(ri0, ri1), r0)
            wx = np.minimum(np.arange(ci0, ci1) + 1, c1) - np.maximum(np.arange(ci0, ci1), c0)
            area = (r1 - r0) * (c1 - c0)
            out[i, j] = (patch * wy[:, None] * wx[None, :]).sum() / area
    return np.clip(out, 0.0, 1.0).astype(np.float32)
