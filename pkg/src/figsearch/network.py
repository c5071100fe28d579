"""Dual-branch convolutional network with explicit forward and backward passes.

Two parallel conv stacks (3x3 same-padding convs + ReLU, 2x2 max-pool per
block) each end in a fully connected feature layer of width D. The auxiliary
head classifies visual material type from the lower branch's features; the
main head classifies the domain class from the concatenated 2D-wide feature
vector. All math is plain numpy in the dtype of the parameters, so float64
parameters give float64 gradients for finite-difference checks.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, pack_str
from .errors import FormatError, ParameterError, StructuralError

GROUP_NAMES = ("lower", "upper", "aux_head", "main_head")

CHECKPOINT_MAGIC = b"FGCKPT1\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BranchConfig:
    """One conv stack: (out_channels, convs_per_block) per block, then an
    FC layer of width feature_dim."""

    conv_blocks: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2))
    feature_dim: int = 128

    def validate(self) -> None:
        if len(self.conv_blocks) < 1:
            raise ParameterError("need at least one conv block")
        for cout, reps in self.conv_blocks:
            if cout < 1 or reps < 1:
                raise ParameterError("block channels and conv counts must be >= 1")
        if self.feature_dim < 2:
            raise ParameterError("feature_dim must be >= 2")


@dataclass(frozen=True)
class DualNetConfig:
    input_shape: tuple[int, int, int] = (64, 64, 1)
    type_count: int = 4
    class_count: int = 8
    lower: BranchConfig = field(default_factory=BranchConfig)
    upper: BranchConfig = field(default_factory=BranchConfig)
    embed_source: str = "concat"  # or "upper_branch"
    dropout: float = 0.0

    def validate(self) -> None:
        h, w, c = self.input_shape
        if h < 1 or w < 1 or c < 1:
            raise ParameterError("input extents must be positive")
        if self.type_count < 2 or self.class_count < 2:
            raise ParameterError("need at least 2 types and 2 classes")
        self.lower.validate()
        self.upper.validate()
        if self.lower.feature_dim != self.upper.feature_dim:
            raise ParameterError("branch feature dims must match")
        if self.embed_source not in ("concat", "upper_branch"):
            raise ParameterError(f"unknown embed_source {self.embed_source!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        for branch in (self.lower, self.upper):
            hh, ww = h, w
            for _ in branch.conv_blocks:
                # max-pool requires even extents; reject rather than pad
                if hh % 2 or ww % 2:
                    raise ParameterError(
                        f"spatial extent {hh}x{ww} is odd at a pooling layer")
                hh //= 2
                ww //= 2

    @property
    def feature_dim(self) -> int:
        return self.lower.feature_dim

    @property
    def embed_dim(self) -> int:
        return 2 * self.feature_dim if self.embed_source == "concat" else self.feature_dim

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "type_count": self.type_count,
            "class_count": self.class_count,
            "lower": {"conv_blocks": [list(b) for b in self.lower.conv_blocks],
                      "feature_dim": self.lower.feature_dim},
            "upper": {"conv_blocks": [list(b) for b in self.upper.conv_blocks],
                      "feature_dim": self.upper.feature_dim},
            "embed_source": self.embed_source,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DualNetConfig":
        def branch(bd):
            return BranchConfig(
                conv_blocks=tuple(tuple(b) for b in bd["conv_blocks"]),
                feature_dim=int(bd["feature_dim"]))
        cfg = cls(
            input_shape=tuple(d["input_shape"]),
            type_count=int(d["type_count"]),
            class_count=int(d["class_count"]),
            lower=branch(d["lower"]),
            upper=branch(d["upper"]),
            embed_source=d["embed_source"],
            dropout=float(d.get("dropout", 0.0)),
        )
        cfg.validate()
        return cfg


@dataclass
class ModelParams:
    """All trainable tensors, partitioned into the four named groups."""

    groups: dict[str, dict[str, np.ndarray]]
    frozen: dict[str, bool]

    @property
    def dtype(self):
        return self.groups["aux_head"]["w"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(
            groups={g: {k: v.copy() for k, v in ps.items()}
                    for g, ps in self.groups.items()},
            frozen=dict(self.frozen),
        )


def _branch_shapes(cfg: DualNetConfig, branch: BranchConfig) -> list[tuple[str, tuple]]:
    h, w, cin = cfg.input_shape
    shapes = []
    for b, (cout, reps) in enumerate(branch.conv_blocks):
        for i in range(reps):
            shapes.append((f"conv{b}_{i}_w", (3, 3, cin, cout)))
            shapes.append((f"conv{b}_{i}_b", (cout,)))
            cin = cout
        h //= 2
        w //= 2
    flat = h * w * cin
    shapes.append(("fc_w", (flat, branch.feature_dim)))
    shapes.append(("fc_b", (branch.feature_dim,)))
    return shapes


def param_shapes(cfg: DualNetConfig) -> dict[str, list[tuple[str, tuple]]]:
    d = cfg.feature_dim
    return {
        "lower": _branch_shapes(cfg, cfg.lower),
        "upper": _branch_shapes(cfg, cfg.upper),
        "aux_head": [("w", (d, cfg.type_count)), ("b", (cfg.type_count,))],
        "main_head": [("w", (2 * d, cfg.class_count)), ("b", (cfg.class_count,))],
    }


def init_params(cfg: DualNetConfig, seed: int, dtype=np.float32) -> ModelParams:
    """He fan-in normal weights, zero biases, one seeded stream."""
    cfg.validate()
    rng = np.random.default_rng([seed, 3])
    groups: dict[str, dict[str, np.ndarray]] = {}
    for gname, shapes in param_shapes(cfg).items():
        ps = {}
        for name, shape in shapes:
            if name.endswith("_b") or name == "b":
                ps[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[:-1]))
                std = np.sqrt(2.0 / fan_in)
                ps[name] = (rng.standard_normal(shape) * std).astype(dtype)
        groups[gname] = ps
    return ModelParams(groups=groups, frozen={g: False for g in GROUP_NAMES})


def check_params(params: ModelParams, cfg: DualNetConfig) -> None:
    expected = param_shapes(cfg)
    for gname, shapes in expected.items():
        if gname not in params.groups:
            raise StructuralError(f"missing parameter group {gname!r}")
        have = params.groups[gname]
        for name, shape in shapes:
            if name not in have:
                raise StructuralError(f"missing parameter {gname}.{name}")
            if have[name].shape != shape:
                raise StructuralError(
                    f"{gname}.{name} has shape {have[name].shape}, expected {shape}")


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def _conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """3x3 same-padding stride-1 convolution, NHWC, as nine shifted GEMMs."""
    n, h, ww, _ = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, ww, cout), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy : dy + h, dx : dx + ww, :] @ w[dy, dx]
    return out


def _conv2d_backward(x, w, dout):
    n, h, ww, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    db = dout.sum(axis=(0, 1, 2))
    dflat = dout.reshape(-1, cout)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy : dy + h, dx : dx + ww, :]
            dw[dy, dx] = np.ascontiguousarray(patch).reshape(-1, cin).T @ dflat
            dxp[:, dy : dy + h, dx : dx + ww, :] += dout @ w[dy, dx].T
    return dxp[:, 1 : h + 1, 1 : ww + 1, :], dw, db


def _maxpool2(x: np.ndarray):
    n, h, w, c = x.shape
    xr = (x.reshape(n, h // 2, 2, w // 2, 2, c)
          .transpose(0, 1, 3, 5, 2, 4)
          .reshape(n, h // 2, w // 2, c, 4))
    idx = xr.argmax(axis=4)
    out = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]
    return out, idx


def _maxpool2_backward(dout: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    n, h, w, c = in_shape
    d = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=4)
    return (d.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError(f"labels out of range [0, {k})")
    out = np.zeros((labels.shape[0], k), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, truth: np.ndarray) -> float:
    """Mean negative log-probability of the true class.

    Predicted probabilities are clamped to [1e-12, 1] inside the log so a
    confidently wrong row degrades the loss instead of producing -inf.
    """
    probs = np.asarray(probs)
    truth = np.asarray(truth)
    if probs.shape != truth.shape or probs.ndim != 2:
        raise StructuralError("probs and truth must share an (N, K) shape")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise ParameterError("probability rows must sum to 1")
    ones = truth == 1.0
    if not (np.all((truth == 0.0) | ones) and np.all(ones.sum(axis=1) == 1)):
        raise ParameterError("truth rows must be one-hot")
    picked = np.clip(probs[ones], 1e-12, 1.0)
    return float(-np.log(picked).mean())


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _branch_forward(ps, branch: BranchConfig, x, keep_cache=False, drop_mask=None):
    cache = {"conv": [], "pool": []} if keep_cache else None
    for b, (_, reps) in enumerate(branch.conv_blocks):
        for i in range(reps):
            pre = _conv2d(x, ps[f"conv{b}_{i}_w"]) + ps[f"conv{b}_{i}_b"]
            mask = pre > 0
            if keep_cache:
                cache["conv"].append((x, mask))
            x = pre * mask
        pooled, idx = _maxpool2(x)
        if keep_cache:
            cache["pool"].append((x.shape, idx))
        x = pooled
    flat = x.reshape(x.shape[0], -1)
    if drop_mask is not None:
        flat = flat * drop_mask
    feat_pre = flat @ ps["fc_w"] + ps["fc_b"]
    feat = np.maximum(feat_pre, 0.0)
    if keep_cache:
        cache["flat"] = flat
        cache["feat_pre"] = feat_pre
    return feat, cache


def _branch_backward(ps, branch: BranchConfig, cache, dfeat, drop_mask=None):
    grads = {}
    dpre = dfeat * (cache["feat_pre"] > 0)
    grads["fc_w"] = cache["flat"].T @ dpre
    grads["fc_b"] = dpre.sum(axis=0)
    dflat = dpre @ ps["fc_w"].T
    if drop_mask is not None:
        dflat = dflat * drop_mask
    shape, idx = cache["pool"][-1]
    dx = _maxpool2_backward(
        dflat.reshape(shape[0], shape[1] // 2, shape[2] // 2, shape[3]), idx, shape)
    conv_i = len(cache["conv"])
    for b in range(len(branch.conv_blocks) - 1, -1, -1):
        _, reps = branch.conv_blocks[b]
        if b < len(branch.conv_blocks) - 1:
            shape, idx = cache["pool"][b]
            dx = _maxpool2_backward(dx, idx, shape)
        for i in range(reps - 1, -1, -1):
            conv_i -= 1
            x_in, mask = cache["conv"][conv_i]
            dx = dx * mask
            dx, dw, db = _conv2d_backward(x_in, ps[f"conv{b}_{i}_w"], dx)
            grads[f"conv{b}_{i}_w"] = dw
            grads[f"conv{b}_{i}_b"] = db
    return grads


def _head_forward(ps, feat):
    return softmax(feat @ ps["w"] + ps["b"])


def forward(params: ModelParams, cfg: DualNetConfig, batch: np.ndarray):
    """Inference pass.

    Returns (lower_feat[N,D], upper_feat[N,D], aux_probs[N,T], main_probs[N,K]).
    """
    cfg.validate()
    check_params(params, cfg)
    batch = _check_batch(cfg, batch, params.dtype)
    lower_feat, _ = _branch_forward(params.groups["lower"], cfg.lower, batch)
    upper_feat, _ = _branch_forward(params.groups["upper"], cfg.upper, batch)
    aux_probs = _head_forward(params.groups["aux_head"], lower_feat)
    concat = np.concatenate([lower_feat, upper_feat], axis=1)
    main_probs = _head_forward(params.groups["main_head"], concat)
    return lower_feat, upper_feat, aux_probs, main_probs


def _check_batch(cfg, batch, dtype):
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != tuple(cfg.input_shape):
        raise StructuralError(
            f"batch shape {batch.shape} does not match input {cfg.input_shape}")
    return batch.astype(dtype, copy=False)


def _make_drop_masks(cfg, n, flat_dims, rng, dtype):
    if cfg.dropout <= 0.0 or rng is None:
        return {"lower": None, "upper": None}
    keep = 1.0 - cfg.dropout
    return {
        name: (rng.random((n, flat_dims[name])) < keep).astype(dtype) / dtype(keep)
        for name in ("lower", "upper")
    }


def _flat_dims(cfg):
    return {name: dict(_branch_shapes(cfg, br))["fc_w"][0]
            for name, br in (("lower", cfg.lower), ("upper", cfg.upper))}


def loss_and_grads(params: ModelParams, cfg: DualNetConfig, batch: np.ndarray,
                   aux_truth=None, main_truth=None, task: str = "main",
                   dropout_rng=None):
    """Compute the task loss and gradients for every non-frozen group.

    Groups the loss does not reach get zero gradients; frozen groups get no
    entry at all. For the aux task the upper branch is never evaluated.
    """
    cfg.validate()
    check_params(params, cfg)
    batch = _check_batch(cfg, batch, params.dtype)
    if task not in ("aux", "main"):
        raise ParameterError(f"unknown task {task!r}")
    n = batch.shape[0]
    masks = _make_drop_masks(cfg, n, _flat_dims(cfg), dropout_rng, params.dtype.type)
    grads: dict[str, dict[str, np.ndarray]] = {}

    def zeros_like_group(gname):
        return {k: np.zeros_like(v) for k, v in params.groups[gname].items()}

    if task == "aux":
        truth = _check_truth(aux_truth, n, cfg.type_count, "aux_truth", params.dtype)
        lower_feat, cache = _branch_forward(
            params.groups["lower"], cfg.lower, batch, keep_cache=True,
            drop_mask=masks["lower"])
        probs = _head_forward(params.groups["aux_head"], lower_feat)
        loss = cross_entropy(probs, truth)
        dlogits = (probs - truth) / n
        if not params.frozen["aux_head"]:
            grads["aux_head"] = {"w": lower_feat.T @ dlogits,
                                 "b": dlogits.sum(axis=0)}
        if not params.frozen["lower"]:
            dfeat = dlogits @ params.groups["aux_head"]["w"].T
            grads["lower"] = _branch_backward(
                params.groups["lower"], cfg.lower, cache, dfeat,
                drop_mask=masks["lower"])
        for gname in ("upper", "main_head"):
            if not params.frozen[gname]:
                grads[gname] = zeros_like_group(gname)
        return loss, probs, grads

    truth = _check_truth(main_truth, n, cfg.class_count, "main_truth", params.dtype)
    need_lower = not params.frozen["lower"]
    need_upper = not params.frozen["upper"]
    lower_feat, lcache = _branch_forward(
        params.groups["lower"], cfg.lower, batch, keep_cache=need_lower,
        drop_mask=masks["lower"])
    upper_feat, ucache = _branch_forward(
        params.groups["upper"], cfg.upper, batch, keep_cache=need_upper,
        drop_mask=masks["upper"])
    concat = np.concatenate([lower_feat, upper_feat], axis=1)
    probs = _head_forward(params.groups["main_head"], concat)
    loss = cross_entropy(probs, truth)
    dlogits = (probs - truth) / n
    if not params.frozen["main_head"]:
        grads["main_head"] = {"w": concat.T @ dlogits, "b": dlogits.sum(axis=0)}
    d = cfg.feature_dim
    dconcat = dlogits @ params.groups["main_head"]["w"].T
    if need_lower:
        grads["lower"] = _branch_backward(
            params.groups["lower"], cfg.lower, lcache, dconcat[:, :d],
            drop_mask=masks["lower"])
    if need_upper:
        grads["upper"] = _branch_backward(
            params.groups["upper"], cfg.upper, ucache, dconcat[:, d:],
            drop_mask=masks["upper"])
    if not params.frozen["aux_head"]:
        grads["aux_head"] = zeros_like_group("aux_head")
    return loss, probs, grads


def _check_truth(truth, n, k, name, dtype):
    if truth is None:
        raise ParameterError(f"{name} is required for this task")
    truth = np.asarray(truth, dtype=dtype)
    if truth.shape != (n, k):
        raise StructuralError(f"{name} shape {truth.shape} != ({n}, {k})")
    return truth


def backward(params: ModelParams, cfg: DualNetConfig, batch: np.ndarray,
             aux_truth=None, main_truth=None, task: str = "main",
             dropout_rng=None) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of the task's cross-entropy loss for non-frozen groups."""
    _, _, grads = loss_and_grads(params, cfg, batch, aux_truth, main_truth,
                                 task, dropout_rng)
    return grads


def sgd_step(params: ModelParams, grads: dict, lr: float) -> ModelParams:
    """theta <- theta - lr * g for every non-frozen group present in grads.

    Frozen groups keep their exact arrays; a gradient entry for a frozen or
    unknown group, or with a mismatched shape, is a structural error.
    """
    new_groups = {}
    for gname, ps in params.groups.items():
        g = grads.get(gname)
        if g is None:
            new_groups[gname] = ps
            continue
        if params.frozen.get(gname, False):
            raise StructuralError(f"gradient supplied for frozen group {gname!r}")
        if set(g) != set(ps):
            raise StructuralError(f"gradient keys for {gname!r} do not align")
        updated = {}
        for name, value in ps.items():
            if g[name].shape != value.shape:
                raise StructuralError(
                    f"gradient shape mismatch for {gname}.{name}")
            updated[name] = value - lr * g[name].astype(value.dtype, copy=False)
        new_groups[gname] = updated
    unknown = set(grads) - set(params.groups)
    if unknown:
        raise StructuralError(f"gradients for unknown groups {sorted(unknown)}")
    return ModelParams(groups=new_groups, frozen=dict(params.frozen))


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, cfg: DualNetConfig, path) -> None:
    """Versioned binary checkpoint; parameter data is little-endian float32."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg_blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<B", len(GROUP_NAMES)))
        for gname in GROUP_NAMES:
            fh.write(pack_str(gname))
            fh.write(struct.pack("<B", 1 if params.frozen[gname] else 0))
            ps = params.groups[gname]
            fh.write(struct.pack("<I", len(ps)))
            for name in sorted(ps):
                arr = ps[name]
                fh.write(pack_str(name))
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.astype("<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, DualNetConfig]:
    rd = Reader(Path(path).read_bytes())
    if rd.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = rd.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = rd.unpack("<I")
    cfg = DualNetConfig.from_dict(json.loads(rd.take(cfg_len).decode("utf-8")))
    (n_groups,) = rd.unpack("<B")
    groups: dict[str, dict[str, np.ndarray]] = {}
    frozen: dict[str, bool] = {}
    for _ in range(n_groups):
        gname = rd.read_str()
        (fflag,) = rd.unpack("<B")
        frozen[gname] = bool(fflag)
        (n_params,) = rd.unpack("<I")
        ps = {}
        for _ in range(n_params):
            name = rd.read_str()
            (ndim,) = rd.unpack("<B")
            shape = rd.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(rd.take(4 * count), dtype="<f4")
            ps[name] = data.reshape(shape).astype(np.float32)
        groups[gname] = ps
    rd.expect_eof("checkpoint")
    params = ModelParams(groups=groups, frozen=frozen)
    check_params(params, cfg)
    return params, cfg
