"""Shared transformer trunk over 3D patches plus 13 task-specific heads.

The trunk tokenizes a volume into cubic patches, projects them, adds learned
positional embeddings, prepends a learnable summary token, and runs pre-norm
transformer blocks; each task head reads the summary token. The global score
is never predicted directly: it is composed as the exact sum of the 13 head
outputs.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

N_TASKS = 13
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple = (32, 32, 32)
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    head_hidden: int = 0
    n_tasks: int = N_TASKS

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ConfigError(f"input_dims must be three positive ints, got {self.input_dims}")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        for d in self.input_dims:
            if d % self.patch_size != 0:
                raise ConfigError(
                    f"input dims {self.input_dims} not divisible by patch size {self.patch_size}"
                )
        if self.n_heads < 1:
            raise ConfigError("n_heads must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")
        if self.head_hidden < 0:
            raise ConfigError("head_hidden must be >= 0")
        if self.n_tasks != N_TASKS:
            raise ConfigError(f"n_tasks is fixed at {N_TASKS}")

    @property
    def patch_voxels(self):
        return self.patch_size ** 3

    @property
    def n_patches(self):
        d, h, w = self.input_dims
        p = self.patch_size
        return (d // p) * (h // p) * (w // p)

    @property
    def n_tokens(self):
        # patch tokens plus the summary token
        return self.n_patches + 1

    @property
    def mlp_hidden(self):
        return self.embed_dim * self.mlp_ratio


# Small configuration for gradient checking: 3.7k parameters.
TINY_CONFIG = ModelConfig(
    input_dims=(8, 8, 8), patch_size=4, embed_dim=16, depth=1, n_heads=2, mlp_ratio=2
)


def param_layout(cfg):
    """Canonical (name, shape, init_kind) list; checkpoint blob order."""
    e = cfg.embed_dim
    entries = [
        ("patch_proj.w", (cfg.patch_voxels, e), "affine"),
        ("patch_proj.b", (e,), "zero"),
        ("cls_token", (e,), "embed"),
        ("pos_embed", (cfg.n_tokens, e), "embed"),
    ]
    for i in range(cfg.depth):
        blk = f"block{i}"
        entries += [
            (f"{blk}.ln1.g", (e,), "one"),
            (f"{blk}.ln1.b", (e,), "zero"),
            (f"{blk}.attn.wq", (e, e), "affine"),
            (f"{blk}.attn.bq", (e,), "zero"),
            (f"{blk}.attn.wk", (e, e), "affine"),
            (f"{blk}.attn.bk", (e,), "zero"),
            (f"{blk}.attn.wv", (e, e), "affine"),
            (f"{blk}.attn.bv", (e,), "zero"),
            (f"{blk}.attn.wo", (e, e), "affine"),
            (f"{blk}.attn.bo", (e,), "zero"),
            (f"{blk}.ln2.g", (e,), "one"),
            (f"{blk}.ln2.b", (e,), "zero"),
            (f"{blk}.mlp.w1", (e, cfg.mlp_hidden), "affine"),
            (f"{blk}.mlp.b1", (cfg.mlp_hidden,), "zero"),
            (f"{blk}.mlp.w2", (cfg.mlp_hidden, e), "affine"),
            (f"{blk}.mlp.b2", (e,), "zero"),
        ]
    entries += [("final_ln.g", (e,), "one"), ("final_ln.b", (e,), "zero")]
    for j in range(1, N_TASKS + 1):
        hd = f"head{j:02d}"
        if cfg.head_hidden > 0:
            entries += [
                (f"{hd}.w1", (e, cfg.head_hidden), "affine"),
                (f"{hd}.b1", (cfg.head_hidden,), "zero"),
                (f"{hd}.w2", (cfg.head_hidden, 1), "affine"),
                (f"{hd}.b2", (1,), "zero"),
            ]
        else:
            entries += [(f"{hd}.w", (e, 1), "affine"), (f"{hd}.b", (1,), "zero")]
    return entries


class ModelParams:
    """Named parameter tensors in the canonical layout order."""

    def __init__(self, cfg, tensors):
        self.cfg = cfg
        expected = param_layout(cfg)
        ordered = {}
        for name, shape, _ in expected:
            if name not in tensors:
                raise ConfigError(f"missing parameter tensor {name!r}")
            arr = np.asarray(tensors[name])
            if arr.shape != shape:
                raise ConfigError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"tensor {name!r} contains non-finite values")
            ordered[name] = arr
        if len(tensors) != len(expected):
            extra = set(tensors) - set(ordered)
            raise ConfigError(f"unexpected parameter tensors: {sorted(extra)}")
        self.tensors = ordered

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return tuple(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def n_params(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype):
        return ModelParams(self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def head_exclusive_names(self, task):
        """Names of tensors used only by head `task` (1-based)."""
        if not 1 <= task <= N_TASKS:
            raise ConfigError(f"task index {task} out of range 1..{N_TASKS}")
        prefix = f"head{task:02d}."
        return tuple(n for n in self.tensors if n.startswith(prefix))


def _trunc_normal(rng, shape, std):
    """Normal(0, std) truncated to +/-2 std, by resampling."""
    x = rng.standard_normal(shape)
    mask = np.abs(x) > 2.0
    while mask.any():
        x[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(x) > 2.0
    return (x * std).astype(np.float32)


def init_params(cfg, seed):
    """Deterministic initialization: truncated normal 1/sqrt(fan_in) affine maps,
    zero biases/offsets, unit normalization scales, sigma=0.02 embeddings."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in param_layout(cfg):
        if kind == "affine":
            tensors[name] = _trunc_normal(rng, shape, 1.0 / math.sqrt(shape[0]))
        elif kind == "embed":
            tensors[name] = _trunc_normal(rng, shape, 0.02)
        elif kind == "one":
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return ModelParams(cfg, tensors)


def patchify(voxels, patch_size):
    """Split a (d, h, w) volume into (n_patches, patch_size^3) row-major tokens."""
    v = np.asarray(voxels)
    if v.ndim != 3:
        raise ConfigError(f"expected a 3D volume, got shape {v.shape}")
    d, h, w = v.shape
    p = patch_size
    if d % p or h % p or w % p:
        raise ConfigError(f"dims {(d, h, w)} not divisible by patch size {p}")
    t = v.reshape(d // p, p, h // p, p, w // p, p)
    t = t.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(t).reshape(-1, p ** 3)


def unpatchify(tokens, dims, patch_size):
    """Inverse of patchify; bit-exact reconstruction."""
    d, h, w = dims
    p = patch_size
    t = np.asarray(tokens).reshape(d // p, h // p, w // p, p, p, p)
    t = t.transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(t).reshape(d, h, w)


def patchify_batch(volumes, patch_size):
    """(b, d, h, w) -> (b, n_patches, patch_size^3)."""
    v = np.asarray(volumes)
    b, d, h, w = v.shape
    p = patch_size
    t = v.reshape(b, d // p, p, h // p, p, w // p, p)
    t = t.transpose(0, 1, 3, 5, 2, 4, 6)
    return np.ascontiguousarray(t).reshape(b, -1, p ** 3)


def forward_graph(cfg, params, x):
    """Autodiff forward pass.

    params maps name -> Tensor; x is a (batch, n_patches, patch_voxels) Tensor.
    Returns a (batch, n_tasks) Tensor of predictions.
    """
    b = x.shape[0]
    e = cfg.embed_dim
    nh = cfg.n_heads
    hd = e // nh
    att_scale = 1.0 / math.sqrt(hd)

    h = ad.add(ad.matmul(x, params["patch_proj.w"]), params["patch_proj.b"])
    cls = ad.broadcast_to(ad.reshape(params["cls_token"], (1, 1, e)), (b, 1, e))
    h = ad.concat([cls, h], axis=1)
    h = ad.add(h, params["pos_embed"])
    t = h.shape[1]

    for i in range(cfg.depth):
        blk = f"block{i}"
        a = ad.layer_norm(h, params[f"{blk}.ln1.g"], params[f"{blk}.ln1.b"], LN_EPS)
        q = ad.add(ad.matmul(a, params[f"{blk}.attn.wq"]), params[f"{blk}.attn.bq"])
        k = ad.add(ad.matmul(a, params[f"{blk}.attn.wk"]), params[f"{blk}.attn.bk"])
        v = ad.add(ad.matmul(a, params[f"{blk}.attn.wv"]), params[f"{blk}.attn.bv"])
        q = ad.transpose(ad.reshape(q, (b, t, nh, hd)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (b, t, nh, hd)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(v, (b, t, nh, hd)), (0, 2, 1, 3))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), att_scale)
        att = ad.softmax_lastdim(scores)
        ctx = ad.matmul(att, v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, e))
        proj = ad.add(ad.matmul(ctx, params[f"{blk}.attn.wo"]), params[f"{blk}.attn.bo"])
        h = ad.add(h, proj)

        m = ad.layer_norm(h, params[f"{blk}.ln2.g"], params[f"{blk}.ln2.b"], LN_EPS)
        m = ad.add(ad.matmul(m, params[f"{blk}.mlp.w1"]), params[f"{blk}.mlp.b1"])
        m = ad.gelu(m)
        m = ad.add(ad.matmul(m, params[f"{blk}.mlp.w2"]), params[f"{blk}.mlp.b2"])
        h = ad.add(h, m)

    h = ad.layer_norm(h, params["final_ln.g"], params["final_ln.b"], LN_EPS)
    summary = h[:, 0, :]

    outs = []
    for j in range(1, N_TASKS + 1):
        head = f"head{j:02d}"
        if cfg.head_hidden > 0:
            z = ad.add(ad.matmul(summary, params[f"{head}.w1"]), params[f"{head}.b1"])
            z = ad.gelu(z)
            z = ad.add(ad.matmul(z, params[f"{head}.w2"]), params[f"{head}.b2"])
        else:
            z = ad.add(ad.matmul(summary, params[f"{head}.w"]), params[f"{head}.b"])
        outs.append(z)
    return ad.concat(outs, axis=1)


def _as_batch_array(params, volumes):
    cfg = params.cfg
    if isinstance(volumes, np.ndarray):
        batch = volumes
    else:
        batch = np.stack([np.asarray(v.voxels).reshape(v.dims) for v in volumes])
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4:
        raise ConfigError(f"expected a (batch, d, h, w) array, got shape {batch.shape}")
    if batch.shape[0] == 0:
        raise ConfigError("empty batch")
    if tuple(batch.shape[1:]) != cfg.input_dims:
        raise ConfigError(
            f"volume dims {tuple(batch.shape[1:])} do not match model input {cfg.input_dims}"
        )
    if not np.all(np.isfinite(batch)):
        raise DataError("batch contains non-finite intensities")
    return batch


def forward(params, volumes):
    """Evaluate the model; returns a (batch, 13) float array of predictions."""
    cfg = params.cfg
    batch = _as_batch_array(params, volumes)
    dtype = params.tensors["patch_proj.w"].dtype
    x = ad.Tensor(patchify_batch(batch, cfg.patch_size).astype(dtype, copy=False))
    wrapped = {name: ad.Tensor(arr) for name, arr in params.items()}
    return forward_graph(cfg, wrapped, x).data


def compose_global(prediction):
    """Global score as the exact sum of the 13 sub-score predictions."""
    vals = [float(v) for v in np.asarray(prediction).reshape(-1)]
    if len(vals) != N_TASKS:
        raise ConfigError(f"prediction must have {N_TASKS} values, got {len(vals)}")
    return math.fsum(vals)


CHECKPOINT_FORMAT = "subscore-mtl-checkpoint"


def save_checkpoint(path, params, seed):
    """Single file: one JSON manifest line, then float32 little-endian blobs."""
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "seed": int(seed),
        "config": asdict(params.cfg),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for _, tensor in params.items():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (ModelParams, seed)."""
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        manifest = json.loads(header)
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path}: bad manifest: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"checkpoint {path}: unrecognized format")
    cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in manifest["config"].items()})
    tensors = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise DataError(f"checkpoint {path}: truncated tensor data")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"checkpoint {path}: trailing bytes after tensor data")
    try:
        params = ModelParams(cfg, tensors)
    except ConfigError as exc:
        raise DataError(f"checkpoint {path}: {exc}") from exc
    return params, int(manifest["seed"])
