"""Training strategies over uneven single / multi / unlabeled splits.

Plain cross-entropy variants (combined, upsampling, curriculum) and the
interpolation-based family that mixes convex combinations of example
pairs, within and across the three sets. Unlabeled examples enter through
argmax-sharpened pseudo labels recomputed from the current model each
iteration; cross-set terms are weighted by a linearly ramped coefficient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusSplit, LabelVocab, aggregate_annotations
from .model import (
    ClassifierParams,
    adam_step,
    forward_multilabel,
    forward_softmax,
    grad_batch,
    grad_batch_multilabel,
    init_adam,
    init_params,
    predict_types,
)

STRATEGY_KINDS = (
    "ce_combined",
    "ce_upsampling",
    "ce_curriculum",
    "mixup_s",
    "mixup_sm",
    "mixup_su",
    "mixup_su_then_m",
    "mixup_smu",
)

# Loss terms per interpolation strategy. Within-set terms carry unit
# weight; cross-set terms are scaled by the ramped coefficient.
WITHIN_TERMS = {"L_ss": "s", "L_mm": "m"}
CROSS_TERMS = {"L_sm": ("s", "m"), "L_su": ("s", "u"), "L_mu": ("m", "u")}
STRATEGY_TERMS = {
    "mixup_s": ("L_ss",),
    "mixup_sm": ("L_ss", "L_mm", "L_sm"),
    "mixup_su": ("L_ss", "L_su"),
    "mixup_su_then_m": ("L_ss", "L_su"),
    "mixup_smu": ("L_ss", "L_mm", "L_sm", "L_su", "L_mu"),
}
SET_NAMES = {"s": "singles", "m": "multis", "u": "unlabeled"}


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class MixupConfig:
    """Interpolation hyperparameters. ``batch_size`` is shared by all
    three sets so cross-set batches pair element-wise."""

    eta: float = 1.0
    alpha_max: float = 2.0
    ramp_iters: int = 100
    batch_size: int = 128

    def __post_init__(self):
        if self.eta <= 0:
            raise StrategyError("eta must be positive")
        if self.ramp_iters < 1:
            raise StrategyError("ramp_iters must be >= 1")
        if self.batch_size < 1:
            raise StrategyError("batch_size must be >= 1")


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    iterations_main: int = 3500
    iterations_finetune: int = 30
    mixup: MixupConfig = field(default_factory=MixupConfig)
    lr: float = 1e-5
    hidden_sizes: tuple[int, ...] = (64,)
    head: str = "softmax"
    target_mode: str = "distribution"  # "distribution" or "prediction"
    w_neg: float = 0.1
    input_dropout: float = 0.0
    train_smooth_mass: float = 0.0  # label smoothing applied to one-hot single targets
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}")
        if self.iterations_main <= 0:
            raise StrategyError("iterations_main must be positive")
        if self.iterations_finetune < 0:
            raise StrategyError("iterations_finetune must be >= 0")
        if self.target_mode not in ("distribution", "prediction"):
            raise StrategyError(f"unknown target mode {self.target_mode!r}")
        if not 0.0 <= self.input_dropout < 1.0:
            raise StrategyError("input_dropout must lie in [0, 1)")
        if not 0.0 <= self.train_smooth_mass <= 1.0:
            raise StrategyError("train_smooth_mass must lie in [0, 1]")


@dataclass
class TrainLog:
    """Per-iteration records: iter, phase, alpha, total loss, and the loss
    components that apply to the strategy."""

    entries: list[dict] = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(e, sort_keys=True) + "\n")

    @staticmethod
    def read(path) -> "TrainLog":
        with open(path, encoding="utf-8") as f:
            return TrainLog([json.loads(line) for line in f if line.strip()])


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

def one_hot(index: int, size: int) -> np.ndarray:
    y = np.zeros(size)
    y[index] = 1.0
    return y


def multi_hot(indices, size: int) -> np.ndarray:
    y = np.zeros(size)
    for i in indices:
        y[i] = 1.0
    return y


def make_targets(split: CorpusSplit, vocab: LabelVocab, spec: StrategySpec) -> dict:
    """Training arrays per set: {"s": (X, Y), "m": (X, Y), "u": X or None}.

    Softmax head: singles get one-hot targets; multis get empirical
    frequencies (distribution mode) or the majority one-hot (prediction
    mode). Sigmoid head: targets are multi-hot over the annotated types.
    Empty sets map to None.
    """
    k = vocab.size

    def dist_target(ex):
        if spec.head == "sigmoid":
            return multi_hot(set(ex.annotations), k)
        if spec.target_mode == "prediction":
            return one_hot(aggregate_annotations(ex.annotations, "majority", vocab), k)
        return aggregate_annotations(ex.annotations, "distribution", vocab)

    def pack(examples):
        if not examples:
            return None
        X = np.stack([ex.features for ex in examples])
        Y = np.stack([dist_target(ex) for ex in examples])
        return X, Y

    out = {"s": pack(split.singles), "m": pack(split.multis)}
    if out["s"] is not None and spec.train_smooth_mass > 0 and spec.head == "softmax":
        from .calibrate import train_smooth

        Xs, Ys = out["s"]
        out["s"] = (Xs, train_smooth(Ys, spec.train_smooth_mass))
    out["u"] = np.stack([ex.features for ex in split.unlabeled]) if split.unlabeled else None
    return out


# ---------------------------------------------------------------------------
# interpolation primitives
# ---------------------------------------------------------------------------

def mix_pair(a, b, lam: float):
    """Convex combination of two (features, target) pairs."""
    xa, ya = a
    xb, yb = b
    (xm,), (ym,) = mix_batches((np.atleast_2d(xa), np.atleast_2d(ya)),
                               (np.atleast_2d(xb), np.atleast_2d(yb)), lam)
    return xm, ym


def mix_batches(batch_a, batch_b, lam: float):
    """Row-wise convex combinations of two equal-size (X, Y) batches."""
    if not 0.0 <= lam <= 1.0:
        raise StrategyError(f"lambda must lie in [0, 1], got {lam}")
    Xa, Ya = batch_a
    Xb, Yb = batch_b
    if Xa.shape != Xb.shape or Ya.shape != Yb.shape:
        raise StrategyError("mixed batches must share shapes")
    return lam * Xa + (1.0 - lam) * Xb, lam * Ya + (1.0 - lam) * Yb


def ramp_alpha(iteration: int, cfg: MixupConfig) -> float:
    """Cross-term weight: linear from 0 to alpha_max over the first
    ``ramp_iters`` iterations, flat afterwards."""
    if iteration < 0:
        raise StrategyError("iteration must be >= 0")
    return min(1.0, iteration / cfg.ramp_iters) * cfg.alpha_max


def pseudo_label(params: ClassifierParams, x_u) -> np.ndarray:
    """Sharpened model target for unlabeled features: one-hot at the
    argmax of the predicted distribution (softmax head), or the multi-hot
    thresholded type set (sigmoid head). Never part of the gradient."""
    if params.head == "sigmoid":
        scores = forward_multilabel(params, x_u)
        if scores.ndim == 1:
            return multi_hot(predict_types(scores), scores.shape[0])
        return np.stack([multi_hot(predict_types(s), scores.shape[1]) for s in scores])
    probs = forward_softmax(params, x_u)
    if probs.ndim == 1:
        return one_hot(int(np.argmax(probs)), probs.shape[0])
    Y = np.zeros_like(probs)
    Y[np.arange(len(probs)), np.argmax(probs, axis=1)] = 1.0
    return Y


@dataclass
class MixPairing:
    """Index plan for one interpolation iteration: a shared lambda plus,
    per loss term, the row orders of the two batches being paired."""

    lam: float
    term_pairs: dict[str, tuple[np.ndarray, np.ndarray]]


def draw_pairing(rng: np.random.Generator, terms, batch_size: int, cfg: MixupConfig) -> MixPairing:
    """Draw one iteration's lambda and pairings.

    Draw order is fixed for reproducibility: lambda first, then per term
    (in the strategy's canonical order) one permutation for within-set
    terms, or two independent shuffles for cross-set terms.
    """
    lam = float(rng.beta(cfg.eta, cfg.eta))
    pairs = {}
    for term in terms:
        if term in WITHIN_TERMS:
            pairs[term] = (np.arange(batch_size), rng.permutation(batch_size))
        else:
            pairs[term] = (rng.permutation(batch_size), rng.permutation(batch_size))
    return MixPairing(lam=lam, term_pairs=pairs)


def apply_pairing(batches: dict, pairing: MixPairing) -> dict:
    """Build the mixed (X, Y) batch for every term in the pairing."""
    out = {}
    for term, (idx_a, idx_b) in pairing.term_pairs.items():
        if term in WITHIN_TERMS:
            set_a = set_b = WITHIN_TERMS[term]
        else:
            set_a, set_b = CROSS_TERMS[term]
        Xa, Ya = batches[set_a]
        Xb, Yb = batches[set_b]
        out[term] = mix_batches((Xa[idx_a], Ya[idx_a]), (Xb[idx_b], Yb[idx_b]), pairing.lam)
    return out


def composite_loss_and_grad(
    params: ClassifierParams,
    term_batches: dict,
    alpha: float,
    w_neg: float = 0.1,
):
    """Total loss, gradient, and per-term components for one iteration.

    total = sum(within terms) + alpha * sum(cross terms); every term is
    the mean batch loss on its mixed batch (soft cross-entropy for the
    softmax head, down-weighted BCE for the sigmoid head).
    """
    grads = None
    total = 0.0
    components = {}
    for term, (Xm, Ym) in term_batches.items():
        if params.head == "sigmoid":
            loss, g = grad_batch_multilabel(params, Xm, Ym, w_neg)
        else:
            loss, g = grad_batch(params, Xm, Ym)
        weight = 1.0 if term in WITHIN_TERMS else alpha
        components[term] = loss
        total += weight * loss
        if grads is None:
            grads = [weight * gi for gi in g]
        else:
            for acc, gi in zip(grads, g):
                acc += weight * gi
    return total, grads, components


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _sample_rows(rng, n: int, batch_size: int) -> np.ndarray:
    # with replacement only when the set is smaller than a batch
    return rng.choice(n, size=batch_size, replace=n < batch_size)


def _require(data, set_key: str, kind: str):
    if data[set_key] is None:
        raise StrategyError(f"strategy {kind} requires non-empty {SET_NAMES[set_key]}")


def terms_sets(terms) -> list[str]:
    """Sorted set keys a collection of loss terms touches."""
    keys = set()
    for t in terms:
        if t in WITHIN_TERMS:
            keys.add(WITHIN_TERMS[t])
        else:
            keys.update(CROSS_TERMS[t])
    return sorted(keys)


def _grad_step(params, adam, X, Y, spec):
    if spec.head == "sigmoid":
        loss, g = grad_batch_multilabel(params, X, Y, spec.w_neg)
    else:
        loss, g = grad_batch(params, X, Y)
    adam_step(params, adam, g)
    return loss


def _maybe_input_dropout(rng, X, p):
    if p <= 0:
        return X
    mask = rng.random(X.shape) >= p
    return X * mask / (1.0 - p)


def _abort_if_not_finite(loss, it, log):
    if not np.isfinite(loss):
        tail = json.dumps(log[-5:])
        raise StrategyError(f"non-finite loss at iteration {it}; log tail: {tail}")


def _ce_phase(params, adam, sampler, iterations, spec, rng, log, phase):
    B = spec.mixup.batch_size
    for it in range(iterations):
        X, Y = sampler(rng, B)
        X = _maybe_input_dropout(rng, X, spec.input_dropout)
        loss = _grad_step(params, adam, X, Y, spec)
        _abort_if_not_finite(loss, it, log)
        log.append({"iter": it, "phase": phase, "alpha": 0.0, "loss": loss})


def _mixup_phase(params, adam, data, terms, iterations, spec, rng, log, phase):
    cfg = spec.mixup
    B = cfg.batch_size
    set_keys = terms_sets(terms)
    for it in range(iterations):
        batches = {}
        for key in set_keys:  # deterministic "m" < "s" < "u" draw order
            if key == "u":
                idx = _sample_rows(rng, len(data["u"]), B)
                Xu = _maybe_input_dropout(rng, data["u"][idx], spec.input_dropout)
                batches["u"] = (Xu, pseudo_label(params, Xu))
            else:
                X, Y = data[key]
                idx = _sample_rows(rng, len(X), B)
                batches[key] = (_maybe_input_dropout(rng, X[idx], spec.input_dropout), Y[idx])
        pairing = draw_pairing(rng, terms, B, cfg)
        alpha = ramp_alpha(it, cfg)
        term_batches = apply_pairing(batches, pairing)
        loss, grads, comps = composite_loss_and_grad(params, term_batches, alpha, spec.w_neg)
        adam_step(params, adam, grads)
        _abort_if_not_finite(loss, it, log)
        entry = {"iter": it, "phase": phase, "alpha": alpha, "loss": loss}
        entry.update(comps)
        log.append(entry)


def run_strategy(
    spec: StrategySpec, split: CorpusSplit, vocab: LabelVocab
) -> tuple[ClassifierParams, TrainLog]:
    """Train a classifier on ``split`` under ``spec``; deterministic given
    ``spec.seed``. Curriculum kinds run the main phase, then fine-tune on
    the multi set with plain cross-entropy for ``iterations_finetune``."""
    data = make_targets(split, vocab, spec)
    sets_present = [k for k in ("s", "m") if data[k] is not None]
    if not sets_present:
        raise StrategyError(f"strategy {spec.kind} requires at least one labeled set")
    d_feat = data[sets_present[0]][0].shape[1]

    params = init_params(d_feat, spec.hidden_sizes, vocab.size, spec.head, spec.seed)
    adam = init_adam(params, spec.lr)
    rng = np.random.default_rng(spec.seed)
    log: list[dict] = []

    def pool_sampler(X, Y):
        def sample(r, B):
            idx = _sample_rows(r, len(X), B)
            return X[idx], Y[idx]

        return sample

    kind = spec.kind
    if kind == "ce_combined":
        X = np.concatenate([data[k][0] for k in sets_present])
        Y = np.concatenate([data[k][1] for k in sets_present])
        _ce_phase(params, adam, pool_sampler(X, Y), spec.iterations_main, spec, rng, log, phase=1)
    elif kind == "ce_upsampling":
        _require(data, "s", kind)
        _require(data, "m", kind)
        Xs, Ys = data["s"]
        Xm, Ym = data["m"]

        def upsampler(r, B):
            # each slot is an even coin flip between the two sets, so multi
            # examples match single examples in aggregate frequency
            from_multi = r.random(B) < 0.5
            idx_s = r.integers(0, len(Xs), size=B)
            idx_m = r.integers(0, len(Xm), size=B)
            X = np.where(from_multi[:, None], Xm[idx_m], Xs[idx_s])
            Y = np.where(from_multi[:, None], Ym[idx_m], Ys[idx_s])
            return X, Y

        _ce_phase(params, adam, upsampler, spec.iterations_main, spec, rng, log, phase=1)
    elif kind == "ce_curriculum":
        _require(data, "s", kind)
        _ce_phase(params, adam, pool_sampler(*data["s"]), spec.iterations_main, spec, rng, log, phase=1)
    else:
        terms = STRATEGY_TERMS[kind]
        for key in terms_sets(terms):
            _require(data, key, kind)
        _mixup_phase(params, adam, data, terms, spec.iterations_main, spec, rng, log, phase=1)

    if kind in ("ce_curriculum", "mixup_su_then_m") and spec.iterations_finetune > 0:
        _require(data, "m", kind)
        _ce_phase(
            params, adam, pool_sampler(*data["m"]), spec.iterations_finetune, spec, rng, log, phase=2
        )

    return params, TrainLog(log)
