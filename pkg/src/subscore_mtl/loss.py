"""Weighted multi-task squared-error objective and task-weight presets.

Per task j the loss is (1/B) * sum_i w_j * (y_ij - yhat_ij)^2 and the total
objective is the plain sum of the 13 per-task terms. Weights are used
literally and never renormalized: `uniform` sums to 13 while `moderate` and
`strong` sum to 1. Emphasis rests on tasks 1, 4 and 8.

Weight derivation computes the correlation of each sub-score against the
composed global score and assigns a high weight to the top-k |r| tasks. A
constant sub-score gets r = 0 (flagged) so selection stays total; this
deliberately differs from the evaluation metric, which reports undefined
correlations as "n/a".
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

N_TASKS = 13
EMPHASIZED_TASKS = (1, 4, 8)


@dataclass(frozen=True)
class WeightConfig:
    w: tuple
    name: str = None

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        object.__setattr__(self, "w", w)
        if len(w) != N_TASKS:
            raise ConfigError(f"expected {N_TASKS} weights, got {len(w)}")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ConfigError("weights must be finite and non-negative")
        if not any(x > 0 for x in w):
            raise ConfigError("at least one weight must be positive")

    def total(self):
        return math.fsum(self.w)

    def share(self, tasks=EMPHASIZED_TASKS):
        """Fraction of total weight carried by the given 1-based tasks."""
        return math.fsum(self.w[j - 1] for j in tasks) / self.total()

    def summary(self):
        hi = {self.w[j - 1] for j in EMPHASIZED_TASKS}
        lo = {self.w[j - 1] for j in range(1, N_TASKS + 1) if j not in EMPHASIZED_TASKS}
        if len(hi) == 1 and len(lo) == 1:
            return f"Q1=Q4=Q8={hi.pop():g}, others={lo.pop():g}"
        return " ".join(f"Q{j}={x:g}" for j, x in enumerate(self.w, start=1))

    def to_json(self):
        return json.dumps({"name": self.name, "w": list(self.w)}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f bad weight config JSON: {exc}") from exc
        if not isinstance(obj, dict) or "w" not in obj:
            raise ConfigError('weight config JSON must be an object with a "w" array')
        return cls(w=tuple(obj["w"]), name=obj.get("name"))


def _preset_weights(high, low):
    return tuple(high if j in EMPHASIZED_TASKS else low for j in range(1, N_TASKS + 1))


PRESETS = {
    "uniform": WeightConfig(w=(1.0,) * N_TASKS, name="uniform"),
    "moderate": WeightConfig(w=_preset_weights(0.160, 0.052), name="moderate"),
    "strong": WeightConfig(w=_preset_weights(0.320, 0.004), name="strong"),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown weight preset {name!r}; choose from {sorted(PRESETS)}")


def resolve_weights(spec):
    """Accepts a WeightConfig, a preset name, or a weights sequence."""
    if isinstance(spec, WeightConfig):
        return spec
    if isinstance(spec, str):
        return preset(spec)
    return WeightConfig(w=tuple(spec))


def weighted_mse_task(preds_j, targets_j, w_j):
    """(1/B) * sum_i w_j * (y_ij - yhat_ij)^2 for a single task."""
    p = np.asarray(preds_j, dtype=np.float64).reshape(-1)
    t = np.asarray(targets_j, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ConfigError(f"length mismatch: {p.shape[0]} predictions vs {t.shape[0]} targets")
    if p.size == 0:
        raise ConfigError("empty batch")
    if w_j < 0:
        raise ConfigError("task weight must be non-negative")
    return float(np.mean(w_j * np.square(t - p)))


def total_loss(preds, targets, weights):
    """Sum of the 13 per-task weighted MSE terms."""
    wc = resolve_weights(weights)
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if t.ndim == 1:
        t = t[None, :]
    if p.shape != t.shape or p.shape[1] != N_TASKS:
        raise ConfigError(f"shape mismatch: preds {p.shape} vs targets {t.shape}")
    out = 0.0
    for j in range(N_TASKS):
        out += weighted_mse_task(p[:, j], t[:, j], wc.w[j])
    return out


def graph_loss(preds, targets, weights):
    """Autodiff version of total_loss for training.

    preds is a (B, 13) Tensor; targets a (B, 13) array; weights resolve to a
    WeightConfig. Exactly-zero weights contribute exactly-zero gradient, which
    keeps unweighted heads bit-frozen under Adam.
    """
    wc = resolve_weights(weights)
    dtype = preds.data.dtype
    t = ad.Tensor(np.asarray(targets, dtype=dtype))
    w = ad.Tensor(np.asarray(wc.w, dtype=dtype))
    err = ad.sub(preds, t)
    per_sample = ad.sum_(ad.mul(ad.mul(err, err), w), axis=1)
    return ad.mean_(per_sample)


def pearson(x, y):
    """Pearson r and a definedness flag; (0.0, False) when either side is constant."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ConfigError("length mismatch")
    if x.size < 2:
        raise ConfigError("need at least 2 samples for a correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        return 0.0, False
    return float(np.dot(xc, yc) / (sx * sy)), True


@dataclass(frozen=True)
class CorrelationTable:
    r: tuple
    n: int
    constant_tasks: tuple = field(default=())

    def __post_init__(self):
        if len(self.r) != N_TASKS:
            raise ConfigError(f"expected {N_TASKS} correlations")
        if any(abs(v) > 1.0 + 1e-12 for v in self.r):
            raise ConfigError("correlations must lie in [-1, 1]")
        if self.n < 2:
            raise ConfigError("correlation table needs n >= 2")


def derive_weights(scores, top_k=3, high_w=0.32, low_w=0.004):
    """Correlate each sub-score with the composed global score and emphasize
    the top_k tasks by |r|. Returns (CorrelationTable, WeightConfig)."""
    if not 1 <= top_k <= N_TASKS:
        raise ConfigError(f"top_k must be in 1..{N_TASKS}")
    if high_w < 0 or low_w < 0:
        raise ConfigError("weights must be non-negative")
    if high_w == 0 and low_w == 0:
        raise ConfigError("high and low weights cannot both be zero")
    q = _scores_matrix(scores)
    if q.shape[0] < 2:
        raise ConfigError("need at least 2 score vectors")
    global_scores = np.array([math.fsum(row) for row in q])
    if np.ptp(global_scores) == 0.0:
        raise ConfigError("global score is constant; correlations are undefined")
    rs = []
    constant = []
    for j in range(N_TASKS):
        r, defined = pearson(q[:, j], global_scores)
        rs.append(r)
        if not defined:
            constant.append(j + 1)
    table = CorrelationTable(r=tuple(rs), n=q.shape[0], constant_tasks=tuple(constant))
    # top_k by |r|; ties broken toward the lower task index
    order = sorted(range(N_TASKS), key=lambda j: (-abs(rs[j]), j))
    selected = set(order[:top_k])
    w = tuple(high_w if j in selected else low_w for j in range(N_TASKS))
    name = None
    for preset_name, pc in PRESETS.items():
        if pc.w == w:
            name = preset_name
            break
    if name is None:
        name = f"derived-top{top_k}"
    return table, WeightConfig(w=w, name=name)


def _scores_matrix(scores):
    rows = []
    for s in scores:
        q = getattr(s, "q", s)
        rows.append([float(v) for v in q])
    q = np.asarray(rows, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != N_TASKS:
        raise ConfigError(f"scores must be N x {N_TASKS}")
    return q
