"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Ops record a backward closure on the currently active Tape (creation order is
a topological order, so `Tape.backward` is one reversed sweep with every node
visited exactly once).  With no tape active the same ops run as plain numpy,
which is how rollouts and target-network evaluations stay cheap.

Hot-path layers (affine, GRU cell, masked log-softmax) are fused into single
tape nodes with hand-derived backward passes; the gradient-check tests hold
them to central finite differences.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointError

PARAMS_MAGIC = "edgesched-params v1"

# Log-probability assigned to masked-out actions.  exp() underflows it to
# exactly 0.0 so downstream expectations never see infeasible entries.
MASKED_LOGP = -1e30

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of one forward pass, replayed backwards for gradients."""

    def __init__(self):
        self._nodes: list = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            node()


def _record(out: Tensor, backward) -> None:
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE._nodes.append(backward)


def _accum(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add `g` into t.grad.  own=True transfers ownership of a fresh array."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _sigmoid_np(d: np.ndarray) -> np.ndarray:
    # stable for large |d| in either direction
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ----------------------------------------------------------------- primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _needs(a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)

    _record(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, _needs(a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, -out.grad, own=True)

    _record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _needs(a, b))

    def backward():
        _accum(a, out.grad * b.data, own=True)
        _accum(b, out.grad * a.data, own=True)

    _record(out, backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, a.requires_grad)

    def backward():
        _accum(a, out.grad * c, own=True)

    _record(out, backward)
    return out


def shift(a: Tensor, c) -> Tensor:
    """Add a constant scalar or array (no gradient to the constant)."""
    out = Tensor(a.data + c, a.requires_grad)

    def backward():
        _accum(a, out.grad)

    _record(out, backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, _needs(a, b))

    def backward():
        if a.requires_grad:
            _accum(a, out.grad @ b.data.T, own=True)
        if b.requires_grad:
            _accum(b, a.data.T @ out.grad, own=True)

    _record(out, backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b with w of shape (out, in) and b of shape (out,)."""
    out = Tensor(x.data @ w.data.T + b.data, _needs(x, w, b))

    def backward():
        g = out.grad
        if w.requires_grad:
            _accum(w, g.T @ x.data, own=True)
        if b.requires_grad:
            _accum(b, g.sum(axis=0), own=True)
        if x.requires_grad:
            _accum(x, g @ w.data, own=True)

    _record(out, backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(_sigmoid_np(a.data), a.requires_grad)

    def backward():
        _accum(a, out.grad * out.data * (1.0 - out.data), own=True)

    _record(out, backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), a.requires_grad)

    def backward():
        _accum(a, out.grad * (1.0 - out.data * out.data), own=True)

    _record(out, backward)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def backward():
        _accum(a, out.grad * (a.data > 0.0), own=True)

    _record(out, backward)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), a.requires_grad)

    def backward():
        _accum(a, out.grad * out.data, own=True)

    _record(out, backward)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=1), _needs(a, b))
    na = a.data.shape[1]

    def backward():
        _accum(a, out.grad[:, :na])
        _accum(b, out.grad[:, na:])

    _record(out, backward)
    return out


def narrow_rows(a: Tensor, n: int) -> Tensor:
    """First n rows; gradient zero-pads the dropped rows."""
    out = Tensor(a.data[:n], a.requires_grad)

    def backward():
        g = np.zeros_like(a.data)
        g[:n] = out.grad
        _accum(a, g, own=True)

    _record(out, backward)
    return out


def gather_cols(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = a[i, index[i]]."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, index], a.requires_grad)

    def backward():
        g = np.zeros_like(a.data)
        g[rows, index] = out.grad
        _accum(a, g, own=True)

    _record(out, backward)
    return out


def sum_rows(a: Tensor) -> Tensor:
    """Row sums of a 2-D tensor, shape (B,)."""
    out = Tensor(a.data.sum(axis=1), a.requires_grad)

    def backward():
        _accum(a, np.broadcast_to(out.grad[:, None], a.data.shape).copy(), own=True)

    _record(out, backward)
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean(), a.requires_grad)
    inv = 1.0 / a.data.size

    def backward():
        _accum(a, np.full_like(a.data, out.grad * inv), own=True)

    _record(out, backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad)

    def backward():
        _accum(a, np.full_like(a.data, out.grad), own=True)

    _record(out, backward)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, a.requires_grad)

    def backward():
        _accum(a, out.grad * 2.0 * a.data, own=True)

    _record(out, backward)
    return out


# -------------------------------------------------------------- fused layers

def gru_cell(x: Tensor, h: Tensor, w_x: Tensor, w_h: Tensor,
             w_c: Tensor, b: Tensor) -> Tensor:
    """One gated recurrent step.

        r = sigmoid(x W_xr + h W_hr + b_r)
        z = sigmoid(x W_xz + h W_hz + b_z)
        c = tanh(x W_xc + (r * h) W_cc + b_c)
        h' = (1 - z) * h + z * c

    Parameter layout: w_x (3H, in) and b (3H,) stack the r, z, c blocks;
    w_h (2H, H) stacks r, z; w_c (H, H) is the candidate's recurrent weight.
    """
    hd = h.data.shape[1]
    if w_x.data.shape[0] != 3 * hd or w_h.data.shape[0] != 2 * hd:
        raise ValueError("GRU parameter blocks do not match hidden size")
    pre_x = x.data @ w_x.data.T + b.data          # (B, 3H)
    rz_h = h.data @ w_h.data.T                    # (B, 2H)
    r = _sigmoid_np(pre_x[:, :hd] + rz_h[:, :hd])
    z = _sigmoid_np(pre_x[:, hd:2 * hd] + rz_h[:, hd:])
    gh = r * h.data
    c = np.tanh(pre_x[:, 2 * hd:] + gh @ w_c.data.T)
    out = Tensor((1.0 - z) * h.data + z * c, _needs(x, h, w_x, w_h, w_c, b))

    def backward():
        g = out.grad
        dz = g * (c - h.data)
        dc = g * z
        dh = g * (1.0 - z)

        dcx = dc * (1.0 - c * c)                  # candidate pre-activation
        if w_c.requires_grad:
            _accum(w_c, dcx.T @ gh, own=True)
        dgh = dcx @ w_c.data
        dr = dgh * h.data
        dh = dh + dgh * r

        dzx = dz * z * (1.0 - z)
        drx = dr * r * (1.0 - r)
        dpre = np.concatenate([drx, dzx, dcx], axis=1)
        if w_x.requires_grad:
            _accum(w_x, dpre.T @ x.data, own=True)
        if b.requires_grad:
            _accum(b, dpre.sum(axis=0), own=True)
        if x.requires_grad:
            _accum(x, dpre @ w_x.data, own=True)

        drz = dpre[:, :2 * hd]
        if w_h.requires_grad:
            _accum(w_h, drz.T @ h.data, own=True)
        dh = dh + drz @ w_h.data
        _accum(h, dh, own=True)

    _record(out, backward)
    return out


def masked_log_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log-softmax restricted to mask-true entries.

    Masked entries come out at MASKED_LOGP (exp -> exactly 0) and receive no
    gradient.  Rows must have at least one feasible entry.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.data.shape:
        raise ValueError(f"mask shape {mask.shape} != logits shape {logits.data.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("masked_log_softmax: some row has no feasible entry")
    neg = np.where(mask, logits.data, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    ex = np.exp(neg - m)          # masked entries: exp(-inf) = 0
    zsum = ex.sum(axis=1, keepdims=True)
    logp = np.where(mask, neg - m - np.log(zsum), MASKED_LOGP)
    probs = ex / zsum
    out = Tensor(logp, logits.requires_grad)

    def backward():
        # probs is zero at masked entries, so dl vanishes there by itself
        g = np.where(mask, out.grad, 0.0)
        dl = g - probs * g.sum(axis=1, keepdims=True)
        _accum(logits, dl, own=True)

    _record(out, backward)
    return out


def log_softmax(logits: Tensor) -> Tensor:
    return masked_log_softmax(logits, np.ones(logits.data.shape, dtype=bool))


def softmax(logits: Tensor) -> Tensor:
    m = logits.data.max(axis=-1, keepdims=True)
    ex = np.exp(logits.data - m)
    p = ex / ex.sum(axis=-1, keepdims=True)
    out = Tensor(p, logits.requires_grad)

    def backward():
        g = out.grad
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(logits, p * (g - dot), own=True)

    _record(out, backward)
    return out


def nll_loss(logp: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row log-probs."""
    picked = gather_cols(logp, targets)
    return scale(mean_all(picked), -1.0)


# ------------------------------------------------------------------- training

class ParamSet:
    """Named parameter tensors with their Adam accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParamSet":
        other = ParamSet()
        for name, t in self._params.items():
            other.add(name, t.data.copy())
        return other

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointError(
                f"parameter names do not match (missing {sorted(missing)}, "
                f"unexpected {sorted(extra)})"
            )
        for name, arr in arrays.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: have {t.data.shape}, file {arr.shape}"
                )
            t.data = np.array(arr, dtype=np.float64)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """U[-1/sqrt(fan_in), +1/sqrt(fan_in)], the init every layer here uses."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def adam_step(
    params: ParamSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grads: dict[str, np.ndarray] | None = None,
) -> None:
    """Bias-corrected Adam update in place; parameters without a gradient
    this step are left untouched."""
    for name, t in params.items():
        g = grads.get(name) if grads is not None else t.grad
        if g is None:
            continue
        m, v, step = params._adam.get(name, (np.zeros_like(t.data), np.zeros_like(t.data), 0))
        step += 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        params._adam[name] = (m, v, step)
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def ema_update(target: ParamSet, online: ParamSet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, elementwise."""
    for name, t in target.items():
        t.data *= (1.0 - tau)
        t.data += tau * online[name].data


# ---------------------------------------------------------------- checkpoints

def save_params(path: str, params: ParamSet, meta: dict | None = None) -> None:
    """Versioned header with named shapes, then raw little-endian float64."""
    names = params.names()
    lines = [PARAMS_MAGIC, json.dumps(meta or {}, sort_keys=True)]
    for name in names:
        shape = ",".join(str(d) for d in params[name].data.shape)
        lines.append(f"tensor {name} {shape or 'scalar'}")
    lines.append("data")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_params(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    cut = blob.find(b"\ndata\n")
    if cut < 0:
        raise CheckpointError(f"{path}: no data section found")
    header_lines = blob[:cut].decode("utf-8").split("\n")
    payload = blob[cut + len(b"\ndata\n"):]
    if header_lines[0] != PARAMS_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {header_lines[0]!r}, expected {PARAMS_MAGIC!r}"
        )
    try:
        meta = json.loads(header_lines[1])
    except (IndexError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad metadata line: {exc}") from exc

    specs = []
    for line in header_lines[2:]:
        parts = line.split()
        if len(parts) != 3 or parts[0] != "tensor":
            raise CheckpointError(f"{path}: malformed tensor line {line!r}")
        shape = () if parts[2] == "scalar" else tuple(int(d) for d in parts[2].split(","))
        specs.append((parts[1], shape))

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise CheckpointError(
                f"{path}: truncated payload for tensor {name!r} "
                f"(need {nbytes} bytes at offset {offset}, have {len(payload) - offset})"
            )
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(shape)
        arrays[name] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} unexpected trailing bytes")
    return arrays, meta
