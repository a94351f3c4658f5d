"""Differentiable classifier heads over fixed feature vectors.

A small tanh MLP with either a softmax head (probability over a label
vocab) or an independent-sigmoid head (per-type membership scores).
Gradients are exact analytic backprop, checked against finite differences
in the test suite; no autodiff framework is involved.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

PRED_CLAMP = 1e-12  # floor for probabilities inside logs

HEADS = ("softmax", "sigmoid")


@dataclass
class ClassifierParams:
    """MLP weights/biases. ``weights[i]`` has shape (n_in, n_out); hidden
    activations are tanh, the final layer is raw logits."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "softmax"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError(f"bias shape {b.shape} does not match weight {W.shape}")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, interleaved [W0, b0, W1, b1, ...]."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
        )


def init_params(
    d_feat: int,
    hidden_sizes: tuple[int, ...],
    n_out: int,
    head: str = "softmax",
    seed: int = 0,
) -> ClassifierParams:
    """Xavier-uniform weights, zero biases; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    sizes = [d_feat, *hidden_sizes, n_out]
    weights, biases = [], []
    for n_in, n_o in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_o))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_o)))
        biases.append(np.zeros(n_o))
    return ClassifierParams(weights=weights, biases=biases, head=head)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _check_input(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.shape[-1] != params.n_in:
        raise ValueError(f"feature dim {X.shape[-1]} does not match model input {params.n_in}")
    return X


def _forward_cached(params: ClassifierParams, X: np.ndarray):
    """Returns (logits, activations) with activations[i] the input to layer i."""
    acts = [X]
    a = X
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        a = z if i == len(params.weights) - 1 else np.tanh(z)
        acts.append(a)
    return acts[-1], acts


def forward_logits(params: ClassifierParams, x) -> np.ndarray:
    X = _check_input(params, x)
    squeeze = X.ndim == 1
    logits, _ = _forward_cached(params, np.atleast_2d(X))
    return logits[0] if squeeze else logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_softmax(params: ClassifierParams, x) -> np.ndarray:
    """Probability distribution(s) over the label vocab for feature row(s)."""
    return softmax(forward_logits(params, x))


def forward_multilabel(params: ClassifierParams, x) -> np.ndarray:
    """Independent per-type membership scores in (0, 1)."""
    return sigmoid(forward_logits(params, x))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def soft_cross_entropy(pred, target) -> float:
    """-sum_c target_c * ln(pred_c), with pred clamped at 1e-12.

    Equals KL(target || pred) plus the target entropy, so its gradients in
    the model parameters are identical to the KL objective's.
    """
    p = np.maximum(np.asarray(pred, dtype=np.float64), PRED_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return float(-np.sum(t * np.log(p)))


def batch_soft_cross_entropy(P: np.ndarray, T: np.ndarray) -> float:
    """Mean soft cross-entropy over rows."""
    P = np.maximum(np.asarray(P, dtype=np.float64), PRED_CLAMP)
    return float(-np.mean(np.sum(T * np.log(P), axis=1)))


def negative_weights(targets: np.ndarray, w_neg: float) -> np.ndarray:
    """Per-type loss weights for partially annotated multi-label targets:
    1 at target 1, ``w_neg`` at target 0, linear in between for mixed
    (interpolated) targets."""
    return w_neg + (1.0 - w_neg) * targets


def multilabel_bce(scores, positive_types, w_neg: float = 0.1) -> float:
    """Mean over types of binary cross-entropy against the positive set,
    negative terms down-weighted by ``w_neg`` (annotations are partial, so
    an unannotated type is only weak evidence of absence)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.zeros(s.shape[-1])
    for t in positive_types:
        if not 0 <= t < s.shape[-1]:
            raise ValueError(f"type index {t} outside ontology of size {s.shape[-1]}")
        y[t] = 1.0
    return batch_multilabel_bce(np.atleast_2d(s), np.atleast_2d(y), w_neg)


def batch_multilabel_bce(S: np.ndarray, Y: np.ndarray, w_neg: float = 0.1) -> float:
    S = np.clip(np.asarray(S, dtype=np.float64), PRED_CLAMP, 1.0 - PRED_CLAMP)
    Y = np.asarray(Y, dtype=np.float64)
    w = negative_weights(Y, w_neg)
    per_type = -(Y * np.log(S) + (1.0 - Y) * np.log(1.0 - S))
    return float(np.mean(np.sum(w * per_type, axis=1) / S.shape[1]))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _backprop(params: ClassifierParams, acts: list[np.ndarray], dZ_out: np.ndarray):
    """Backpropagate a final-layer logit gradient through the tanh stack."""
    grads: list[np.ndarray] = []
    dZ = dZ_out
    for i in range(len(params.weights) - 1, -1, -1):
        a_in = acts[i]
        grads.insert(0, dZ.sum(axis=0))          # db
        grads.insert(0, a_in.T @ dZ)             # dW
        if i > 0:
            dA = dZ @ params.weights[i].T
            dZ = dA * (1.0 - acts[i] ** 2)       # tanh'
    return grads


def grad_batch(params: ClassifierParams, X, T) -> tuple[float, list[np.ndarray]]:
    """Loss and analytic gradient of the mean soft cross-entropy over a
    batch. Gradients are returned as a flat list aligned with
    ``params.arrays()``. Valid while predictions sit above the clamp,
    which holds everywhere the loss is finite anyway.
    """
    X = np.atleast_2d(_check_input(params, X))
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty batch")
    logits, acts = _forward_cached(params, X)
    P = softmax(logits)
    loss = batch_soft_cross_entropy(P, T)
    # d(mean CE)/dlogits for targets summing to 1: (P - T) / B
    dZ = (P - T) / len(X)
    return loss, _backprop(params, acts, dZ)


def grad_batch_multilabel(
    params: ClassifierParams, X, Y, w_neg: float = 0.1
) -> tuple[float, list[np.ndarray]]:
    """Loss and gradient of the mean down-weighted multi-label BCE."""
    X = np.atleast_2d(_check_input(params, X))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty batch")
    logits, acts = _forward_cached(params, X)
    S = sigmoid(logits)
    loss = batch_multilabel_bce(S, Y, w_neg)
    w = negative_weights(Y, w_neg)
    dZ = w * (S - Y) / (Y.shape[1] * len(X))
    return loss, _backprop(params, acts, dZ)


def predict_types(scores, threshold: float = 0.5) -> set[int]:
    """Types scoring above ``threshold``; falls back to the single best
    type so predictions are never empty."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    s = np.asarray(scores, dtype=np.float64)
    picked = set(np.flatnonzero(s > threshold).tolist())
    if not picked:
        picked = {int(np.argmax(s))}
    return picked


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment accumulators for Adam with bias correction."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ClassifierParams, lr: float = 1e-5) -> AdamState:
    arrays = params.arrays()
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        lr=lr,
    )


def adam_step(params: ClassifierParams, state: AdamState, grads: list[np.ndarray]) -> None:
    """One Adam update, in place on both ``params`` and ``state``."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError("gradient structure does not match parameters")
    state.step += 1
    t = state.step
    for a, m, v, g in zip(arrays, state.m, state.v, grads):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        a -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
# Format: one UTF-8 JSON header line (shapes, head, vocab hash, seed),
# then the raw little-endian float64 bytes of every parameter array in
# ``params.arrays()`` order. Lossless and byte-stable for fixed inputs.

def vocab_hash(names) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


def save_checkpoint(params: ClassifierParams, path, vocab_names, seed: int) -> None:
    header = {
        "format": "mixbudget-checkpoint-v1",
        "head": params.head,
        "shapes": [list(a.shape) for a in params.arrays()],
        "vocab_hash": vocab_hash(vocab_names),
        "seed": seed,
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for a in params.arrays():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ClassifierParams, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != "mixbudget-checkpoint-v1":
            raise ValueError(f"{path}: not a recognized checkpoint file")
        arrays = []
        for shape in header["shapes"]:
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    weights = arrays[0::2]
    biases = arrays[1::2]
    return ClassifierParams(weights=weights, biases=biases, head=header["head"]), header
