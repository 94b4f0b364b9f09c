"""Network layers for graphs with manifold-valued features.

The building blocks:

* ``activate``        -- norm-threshold nonlinearity on tangent vectors,
                         keeps X when |X|_p >= alpha, else zero.
* ``step_map``        -- one explicit diffusion step
                         f(v) <- exp_{f(v)}(-t * activate(Lf(v), alpha)).
* ``l_step_map``      -- the step map composed l times (l-hop aggregation).
* ``diffusion_layer`` -- per-channel l-step maps with learnable (t_i, alpha_i).
* ``tmlp_layer``      -- linear maps of logarithms at a per-node reference
                         point with a half-space nonlinearity, mapped back
                         through exp ("vector neuron" style).
* ``invariant_layer`` -- per-node scalars from distances to two weighted
                         Fréchet means across channels; isometry invariant.
* ``pool`` / ``head`` -- graph-level pooling and the classifier MLP.

Diffusion, tMLP, and the invariant layer are equivariant (resp. invariant)
under node permutations and isometries of the feature manifold; the property
suite exercises this on random inputs for all four manifolds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .graphs import FeatureGraph, laplacian
from .manifolds import CutLocusError, Manifold, frechet_mean

__all__ = [
    "DiffusionLayerParams",
    "TMLPLayerParams",
    "InvariantLayerParams",
    "HeadParams",
    "activate",
    "step_map",
    "l_step_map",
    "diffusion_layer",
    "tmlp_layer",
    "tmlp",
    "invariant_layer",
    "pool",
    "head",
    "cross_entropy",
    "log_softmax",
    "leaky_relu",
]

DEGENERATE_DIRECTION_TOL = 1e-12


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, slope * x)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# diffusion


@dataclass(frozen=True)
class DiffusionLayerParams:
    """Per-channel diffusion time and activation threshold, plus step count."""

    times: np.ndarray
    thresholds: np.ndarray
    steps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).reshape(-1))
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=float).reshape(-1))
        if self.times.shape != self.thresholds.shape:
            raise ValueError("times and thresholds must have matching length")
        if np.any(self.times < 0) or np.any(self.thresholds < 0):
            raise ValueError("diffusion times and thresholds must be nonnegative")
        if self.steps < 1:
            raise ValueError("step count must be >= 1")

    @property
    def channels(self) -> int:
        return self.times.shape[0]


def activate(manifold: Manifold, base: np.ndarray, vectors: np.ndarray, alpha: float) -> np.ndarray:
    """Norm-threshold activation: keep the vector iff |X|_p >= alpha.

    The boundary case passes the vector through unchanged.
    """
    if alpha < 0:
        raise ValueError("threshold must be nonnegative")
    if alpha == 0.0:
        return np.asarray(vectors, dtype=float)
    keep = manifold.norm(base, vectors) >= alpha
    extra = (1,) * (np.ndim(vectors) - keep.ndim)
    return np.where(keep.reshape(keep.shape + extra), vectors, 0.0)


def step_map(g: FeatureGraph, channel: int, t: float, alpha: float) -> np.ndarray:
    """One explicit diffusion step of length t on one channel."""
    if t < 0:
        raise ValueError("diffusion time must be nonnegative")
    f = g.channel_values(channel)
    lap = laplacian(g, channel)
    step = activate(g.manifold, f, lap.vectors, alpha)
    return g.manifold.exp(f, -t * step)


def l_step_map(g: FeatureGraph, channel: int, t: float, alpha: float, steps: int) -> np.ndarray:
    """The step map composed ``steps`` times.

    A node's output depends only on nodes within graph distance ``steps``.
    CutLocusError raised by an intermediate step carries the step index.
    """
    if steps < 1:
        raise ValueError("step count must be >= 1")
    current = g
    for k in range(steps):
        try:
            values = step_map(current, channel, t, alpha)
        except CutLocusError as err:
            raise CutLocusError(
                f"diffusion step {k + 1}/{steps}: {err}", where=err.where, step=k + 1, **err.context
            ) from None
        current = current.with_channel_values(channel, values)
    return current.channel_values(channel)


def diffusion_layer(g: FeatureGraph, params: DiffusionLayerParams) -> FeatureGraph:
    """Diffuse every channel independently; graph structure is untouched."""
    if params.channels != g.channel_count:
        raise ValueError(
            f"layer has {params.channels} channels but graph has {g.channel_count}"
        )
    values = [
        l_step_map(g, i, float(params.times[i]), float(params.thresholds[i]), params.steps)
        for i in range(g.channel_count)
    ]
    return g.with_all_channels(values)


# ---------------------------------------------------------------------------
# tangent MLP


@dataclass(frozen=True)
class TMLPLayerParams:
    """Weights of one tangent layer: two (c_out, c_in) matrices.

    ``out_weights`` mixes the logarithms into the output directions,
    ``dir_weights`` into the (normalized) half-space directions.  ``slope``
    is the leaky-ReLU slope of the scalar nonlinearity; slope 1 makes it the
    identity.  ``mode`` selects how the nonlinearity enters:

    * ``"signed"`` (default): the scalar acts on the signed coefficient
      <X, Y>, giving vector-neuron half-space behavior.
    * ``"norm"``: the scalar acts on the norm of the parallel part, which is
      never negative; with (leaky) ReLU this variant degenerates to the
      identity and is kept only for comparison.
    """

    out_weights: np.ndarray
    dir_weights: np.ndarray
    slope: float = 0.01
    mode: Literal["signed", "norm"] = "signed"

    def __post_init__(self):
        ow = np.asarray(self.out_weights, dtype=float)
        dw = np.asarray(self.dir_weights, dtype=float)
        object.__setattr__(self, "out_weights", ow)
        object.__setattr__(self, "dir_weights", dw)
        if ow.ndim != 2 or ow.shape != dw.shape:
            raise ValueError("weight matrices must both be (c_out, c_in)")
        if not (np.all(np.isfinite(ow)) and np.all(np.isfinite(dw))):
            raise ValueError("weights must be finite")
        if self.mode not in ("signed", "norm"):
            raise ValueError(f"unknown tMLP mode {self.mode!r}")

    @property
    def c_in(self) -> int:
        return self.out_weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.out_weights.shape[0]


def _tmlp_core(manifold: Manifold, base: np.ndarray, logs: np.ndarray, params: TMLPLayerParams) -> np.ndarray:
    """Map stacked logarithms (c_in, n, *pt) at base (n, *pt) to Z (c_out, n, *pt)."""
    x = np.tensordot(params.out_weights, logs, axes=(1, 0))
    y_raw = np.tensordot(params.dir_weights, logs, axes=(1, 0))
    yn = manifold.norm(base, y_raw)
    ok = yn > DEGENERATE_DIRECTION_TOL
    safe = np.where(ok, yn, 1.0)
    extra = (1,) * (y_raw.ndim - yn.ndim)
    y = y_raw / safe.reshape(safe.shape + extra)
    s = manifold.inner(base, x, y)
    if params.mode == "signed":
        coef = leaky_relu(s, params.slope)
    else:
        # literal reading: sigma acts on |parallel part| = |s|
        a = np.abs(s)
        nz = a > DEGENERATE_DIRECTION_TOL
        coef = np.where(nz, leaky_relu(a, params.slope) / np.where(nz, a, 1.0), 1.0) * s
    gap = (coef - s).reshape(s.shape + extra)
    z = x + gap * y
    # degenerate direction: skip the decomposition, nonlinearity acts as identity
    return np.where(ok.reshape(ok.shape + extra), z, x)


def tmlp_layer(
    manifold: Manifold,
    values: np.ndarray,
    params: TMLPLayerParams,
    reference: np.ndarray,
) -> np.ndarray:
    """One tangent layer on stacked channel values (c_in, n, *pt)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != params.c_in:
        raise ValueError(f"expected {params.c_in} input channels, got {values.shape[0]}")
    logs = manifold.log(np.broadcast_to(reference, values.shape), values)
    z = _tmlp_core(manifold, reference, logs, params)
    return manifold.exp(np.broadcast_to(reference, z.shape), z)


def tmlp(
    manifold: Manifold,
    values: np.ndarray,
    layers: Sequence[TMLPLayerParams],
    reference_channel: int = 0,
    cancel: bool = True,
) -> np.ndarray:
    """A stack of tangent layers sharing the reference points of the input.

    With a shared reference, each layer's closing exp and the next layer's
    opening log cancel; ``cancel=True`` skips them (same result to rounding,
    which the tests pin down).
    """
    values = np.asarray(values, dtype=float)
    if not 0 <= reference_channel < values.shape[0]:
        raise ValueError("reference channel out of range")
    ref = values[reference_channel]
    if not layers:
        return values
    if cancel:
        cur = manifold.log(np.broadcast_to(ref, values.shape), values)
        for params in layers:
            cur = _tmlp_core(manifold, ref, cur, params)
        return manifold.exp(np.broadcast_to(ref, cur.shape), cur)
    cur = values
    for params in layers:
        cur = tmlp_layer(manifold, cur, params, ref)
    return cur


# ---------------------------------------------------------------------------
# invariant layer, pooling, head


@dataclass(frozen=True)
class InvariantLayerParams:
    """Unconstrained logits (c_out, 2, c_in); softmax over the last axis gives
    the two positive, sum-one weight vectors of each output channel.

    ``combine`` picks how the two distances enter the output: their
    difference (one scalar per channel) or both stacked (two per channel).
    """

    logits: np.ndarray
    combine: Literal["difference", "pair"] = "difference"

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        object.__setattr__(self, "logits", logits)
        if logits.ndim != 3 or logits.shape[1] != 2:
            raise ValueError("logits must have shape (c_out, 2, c_in)")
        if self.c_out > self.c_in:
            raise ValueError("cannot have more output channels than inputs")
        if self.combine not in ("difference", "pair"):
            raise ValueError(f"unknown combine rule {self.combine!r}")

    @property
    def c_in(self) -> int:
        return self.logits.shape[2]

    @property
    def c_out(self) -> int:
        return self.logits.shape[0]

    def weight_vectors(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def invariant_layer(
    manifold: Manifold, values: np.ndarray, params: InvariantLayerParams
) -> np.ndarray:
    """Distances from each channel feature to two weighted channel means.

    Input (c_in, n, *pt) -> output (c_out, n) scalars (difference mode), or
    (2*c_out, n) with both distances stacked.  The output only involves
    distances to Fréchet means, hence is invariant under isometries.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != params.c_in:
        raise ValueError(f"expected {params.c_in} input channels, got {values.shape[0]}")
    weights = params.weight_vectors()
    rows = []
    for j in range(params.c_out):
        mu1 = frechet_mean(manifold, values, weights[j, 0])
        mu2 = frechet_mean(manifold, values, weights[j, 1])
        d1 = manifold.dist(values[j], mu1)
        d2 = manifold.dist(values[j], mu2)
        rows.append(d1 - d2 if params.combine == "difference" else np.stack([d1, d2]))
    return np.stack(rows) if params.combine == "difference" else np.concatenate(rows, axis=0)


def pool(scalars: np.ndarray, mode: str = "max+mean") -> np.ndarray:
    """Graph-level pooling of per-node scalars (c, n).

    The mean uses exact summation so the result is independent of node order
    (bitwise), matching the permutation-invariance guarantee of the max part.
    """
    scalars = np.asarray(scalars, dtype=float)
    if scalars.ndim != 2 or scalars.shape[1] < 1:
        raise ValueError("expected (channels, nodes) with at least one node")
    parts = []
    if mode not in ("max", "mean", "max+mean"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    if "max" in mode:
        parts.append(scalars.max(axis=1))
    if "mean" in mode:
        n = scalars.shape[1]
        parts.append(np.array([math.fsum(row) / n for row in scalars]))
    return np.concatenate(parts)


@dataclass(frozen=True)
class HeadParams:
    """Two dense layers with leaky ReLU between and log-softmax output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    slope: float = 0.01

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[0] != self.b2.shape[0]:
            raise ValueError("bias lengths must match weight rows")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("hidden widths of the two layers disagree")

    @property
    def in_width(self) -> int:
        return self.w1.shape[1]

    @property
    def classes(self) -> int:
        return self.w2.shape[0]


def head(pooled: np.ndarray, covariates: np.ndarray, params: HeadParams) -> np.ndarray:
    """Class log-probabilities from the pooled vector plus graph covariates."""
    x = np.concatenate([np.asarray(pooled, dtype=float), np.asarray(covariates, dtype=float)])
    if x.shape[0] != params.in_width:
        raise ValueError(f"head expects input width {params.in_width}, got {x.shape[0]}")
    hidden = leaky_relu(params.w1 @ x + params.b1, params.slope)
    return log_softmax(params.w2 @ hidden + params.b2)


def cross_entropy(log_probs: np.ndarray, label: int) -> float:
    log_probs = np.asarray(log_probs, dtype=float)
    if not 0 <= label < log_probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {log_probs.shape[-1]} classes")
    return float(-log_probs[label])
