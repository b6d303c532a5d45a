"""Trainable critics that output log g(x, y).

Two fixed topologies, both with hand-written reverse mode:

* ``joint``: one MLP on ``concat(x, y)`` producing a scalar logit.
* ``separable``: MLPs ``g`` and ``h`` mapping x and y to ``embed_dim``
  vectors; the logit is ``<g(x), h(y)>``.

Hidden layers use ReLU, the output layer is linear. Weights are stored as
``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError, StateError
from .numerics import RngState, as_matrix

JOINT = "joint"
SEPARABLE = "separable"

CHECKPOINT_MAGIC = b"MICRITIC"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output "
                                 f"{self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def shapes(self) -> list[list[int]]:
        return [list(w.shape) for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(rng: RngState, sizes: Sequence[int]) -> MlpParams:
    """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for
    weights and biases alike.

    This is He-uniform with leaky-ReLU slope sqrt(5), the usual default for
    dense layers. Per layer the weights are drawn before the bias.
    """
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"bad layer sizes {sizes}")
    g = rng.generator
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(g.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(g.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def mlp_forward(p: MlpParams, x: np.ndarray):
    """Return ``(output, cache)``; the cache holds each layer's input."""
    inputs = []
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        h = h @ w
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h, inputs


def mlp_backward(p: MlpParams, inputs: list[np.ndarray], dout: np.ndarray,
                 input_grad: bool = False):
    """Gradients ``[dW0, db0, dW1, ...]`` and, if requested, w.r.t. the input."""
    grads: list[np.ndarray] = [None] * (2 * len(p.weights))
    delta = dout
    for i in range(len(p.weights) - 1, -1, -1):
        a = inputs[i]
        grads[2 * i] = a.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0 and not input_grad:
            return grads, None
        delta = delta @ p.weights[i].T
        if i > 0:
            # a is the ReLU output of layer i-1, so a > 0 marks the active units
            delta *= a > 0
    return grads, delta


@dataclass
class CriticModel:
    kind: str
    nets: dict[str, MlpParams]
    embed_dim: int = 32
    # bumped on every parameter update; forward caches record it
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind == JOINT:
            if set(self.nets) != {"joint"} or self.nets["joint"].out_dim != 1:
                raise ShapeError("joint critic needs one net named 'joint' with scalar output")
        elif self.kind == SEPARABLE:
            if set(self.nets) != {"g", "h"}:
                raise ShapeError("separable critic needs nets 'g' and 'h'")
            if self.nets["g"].out_dim != self.nets["h"].out_dim:
                raise ShapeError("g and h must share the embedding dimension")
            self.embed_dim = self.nets["g"].out_dim
        else:
            raise DomainError(f"unknown critic kind {self.kind!r}")

    @property
    def net_order(self) -> list[str]:
        return ["joint"] if self.kind == JOINT else ["g", "h"]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for name in self.net_order:
            out += self.nets[name].parameters()
        return out

    def step(self, grads: list[np.ndarray], state: "AdamState") -> None:
        """Apply one Adam update (descent on ``grads``) and invalidate caches."""
        adam_step(self.parameters(), grads, state)
        self.version += 1


def make_critic(rng: RngState, kind: str, d: int, hidden: Sequence[int] = (256, 256),
                embed_dim: int = 32) -> CriticModel:
    hidden = list(hidden)
    if kind == JOINT:
        return CriticModel(JOINT, {"joint": init_mlp(rng, [2 * d, *hidden, 1])})
    if kind == SEPARABLE:
        g = init_mlp(rng, [d, *hidden, embed_dim])
        h = init_mlp(rng, [d, *hidden, embed_dim])
        return CriticModel(SEPARABLE, {"g": g, "h": h}, embed_dim)
    raise DomainError(f"unknown critic kind {kind!r}")


@dataclass
class ForwardCache:
    model_id: int
    version: int
    n: int
    m: int
    x: np.ndarray
    ys: np.ndarray  # (n, m, d): positive in slot 0, then negatives
    acts: dict


def critic_logits(model: CriticModel, x, y_pos, y_neg):
    """Evaluate all positive and negative pairs.

    ``x`` and ``y_pos`` are ``(n, d)``; ``y_neg`` is ``(n, m-1, d)`` with the
    negatives for row ``i`` in ``y_neg[i]``. Returns ``(logits, cache)`` where
    ``logits`` is ``(n, m)`` with the positive pair in column 0.
    """
    x = as_matrix(x, "x")
    y_pos = as_matrix(y_pos, "y_pos")
    y_neg = np.asarray(y_neg, dtype=np.float64)
    n, d = x.shape
    if y_pos.shape != (n, d) or y_neg.ndim != 3 or y_neg.shape[0] != n or y_neg.shape[2] != d:
        raise ShapeError(f"inconsistent shapes x={x.shape}, y_pos={y_pos.shape}, "
                         f"y_neg={y_neg.shape}")
    if y_neg.shape[1] < 1:
        raise ShapeError("need at least one negative per row (m >= 2)")
    if not np.all(np.isfinite(y_neg)):
        raise DomainError("y_neg contains non-finite entries")
    m = y_neg.shape[1] + 1
    ys = np.concatenate([y_pos[:, None, :], y_neg], axis=1)

    if model.kind == JOINT:
        net = model.nets["joint"]
        if net.in_dim != 2 * d:
            raise ShapeError(f"joint critic expects inputs of width {net.in_dim // 2}, got {d}")
        pairs = np.concatenate([np.broadcast_to(x[:, None, :], (n, m, d)), ys], axis=2)
        out, inputs = mlp_forward(net, pairs.reshape(n * m, 2 * d))
        logits = out.reshape(n, m)
        acts = {"joint": inputs}
    else:
        g, h = model.nets["g"], model.nets["h"]
        if g.in_dim != d or h.in_dim != d:
            raise ShapeError(f"separable critic expects inputs of width {g.in_dim}, got {d}")
        gx, g_inputs = mlp_forward(g, x)
        hy, h_inputs = mlp_forward(h, ys.reshape(n * m, d))
        hy = hy.reshape(n, m, -1)
        logits = np.einsum("ie,ije->ij", gx, hy)
        acts = {"g": g_inputs, "h": h_inputs, "gx": gx, "hy": hy}
    cache = ForwardCache(id(model), model.version, n, m, x, ys, acts)
    return logits, cache


def critic_backward(model: CriticModel, cache: ForwardCache | None, dl_dlogits) -> list[np.ndarray]:
    """Gradient of ``sum(dl_dlogits * logits)`` w.r.t. ``model.parameters()``."""
    if cache is None:
        raise StateError("no forward cache; call critic_logits first")
    if cache.model_id != id(model) or cache.version != model.version:
        raise StateError("forward cache is stale (model changed since the forward pass)")
    dl = np.asarray(dl_dlogits, dtype=np.float64)
    n, m = cache.n, cache.m
    if dl.shape != (n, m):
        raise ShapeError(f"dl_dlogits shape {dl.shape} != logits shape {(n, m)}")
    if model.kind == JOINT:
        grads, _ = mlp_backward(model.nets["joint"], cache.acts["joint"], dl.reshape(n * m, 1))
        return grads
    gx, hy = cache.acts["gx"], cache.acts["hy"]
    d_gx = np.einsum("ij,ije->ie", dl, hy)
    d_hy = dl[:, :, None] * gx[:, None, :]
    g_grads, _ = mlp_backward(model.nets["g"], cache.acts["g"], d_gx)
    h_grads, _ = mlp_backward(model.nets["h"], cache.acts["h"], d_hy.reshape(n * m, -1))
    return g_grads + h_grads


def in_batch_negatives(y) -> np.ndarray:
    """Negatives for row i are all other rows of ``y`` in their original order."""
    y = as_matrix(y, "y")
    n = y.shape[0]
    if n < 2:
        raise ShapeError("in-batch negatives need at least two rows")
    idx = np.array([[k for k in range(n) if k != i] for i in range(n)])
    return y[idx]


def logits_to_scores(logits) -> np.ndarray:
    """Rearrange in-batch logits ``(n, n)`` into the pair grid ``S[i, k] = log g(x_i, y_k)``."""
    a = np.asarray(logits)
    n, m = a.shape
    if m != n:
        raise ShapeError("in-batch logits must be square")
    s = np.empty_like(a)
    for i in range(n):
        s[i, i] = a[i, 0]
        others = [k for k in range(n) if k != i]
        s[i, others] = a[i, 1:]
    return s


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam descent step, updating ``params`` and ``state`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    for p, g, mom in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != mom.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {mom.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, mom, vel in zip(params, grads, state.m, state.v):
        mom *= state.beta1
        mom += (1.0 - state.beta1) * g
        vel *= state.beta2
        vel += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (mom / c1) / (np.sqrt(vel / c2) + state.eps)


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"MICRITIC"
#   uint32    format version
#   uint32    header length L
#   L bytes   UTF-8 JSON header: kind, embed_dim, nets=[[name, [[in, out], ...]], ...],
#             optional adam={lr, beta1, beta2, eps, step}
#   payload   float64 LE: per net, per layer, W (in x out, row-major) then b;
#             if adam is present, all first moments then all second moments
#             in the same order.

def save_checkpoint(model: CriticModel, path, adam: AdamState | None = None) -> None:
    header = {
        "kind": model.kind,
        "embed_dim": model.embed_dim,
        "nets": [[name, model.nets[name].shapes()] for name in model.net_order],
    }
    arrays = model.parameters()
    if adam is not None and adam.m is not None:
        header["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                          "eps": adam.eps, "step": adam.step}
        arrays = arrays + adam.m + adam.v
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hdr)))
    buf.write(hdr)
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[CriticModel, AdamState | None]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise StateError(f"{path}: not a critic checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise StateError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        if pos + size > payload.size:
            raise StateError(f"{path}: truncated payload")
        a = payload[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
        return a

    nets = {}
    for name, shapes in header["nets"]:
        ws, bs = [], []
        for fan_in, fan_out in shapes:
            ws.append(take((fan_in, fan_out)))
            bs.append(take((fan_out,)))
        nets[name] = MlpParams(ws, bs)
    model = CriticModel(header["kind"], nets, header["embed_dim"])
    adam = None
    if "adam" in header:
        params = model.parameters()
        ms = [take(p.shape) for p in params]
        vs = [take(p.shape) for p in params]
        adam = AdamState(m=ms, v=vs, **header["adam"])
    if pos != payload.size:
        raise StateError(f"{path}: {payload.size - pos} trailing values")
    return model, adam
