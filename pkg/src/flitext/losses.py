"""Every objective term: cross entropy, consistency KL, output- and
feature-based distillation, training-signal annealing, and the two full
training objectives (teacher stage, student stage).

Conventions: batch losses are means; the clean/consistency reference branch
and all teacher-derived quantities are gradient-detached; logs are floored at
1e-8 so one-hot rows stay finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, clip_min, log, mul, neg, no_grad, softmax, square, stack, sub, tsum
from .errors import ConfigError, DataError, DimensionError, PreconditionError, UsageError
from .models import ForwardTrace, inspirer_forward

LOG_FLOOR = 1e-8

TSA_KINDS = ("linear", "log", "exp", "none")

COMPONENT_NAMES = ("output_distill", "feature_distill", "consistency")


@dataclass
class ComponentToggles:
    output_distill: bool = True
    feature_distill: bool = True
    consistency: bool = True

    @classmethod
    def without(cls, removed):
        bad = set(removed) - set(COMPONENT_NAMES)
        if bad:
            raise ConfigError(f"unknown components {sorted(bad)}; valid: {COMPONENT_NAMES}")
        return cls(**{name: name not in removed for name in COMPONENT_NAMES})


@dataclass
class LossBreakdown:
    """Per-step decomposition; inactive components are recorded as exactly 0."""

    l_ce: float = 0.0
    l_consist_t: float = 0.0
    l_soft_sup: float = 0.0
    l_soft_unsup: float = 0.0
    l_hard: float = 0.0
    l_feat_sup: float = 0.0
    l_feat_unsup: float = 0.0
    l_consist_s: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def component_sum(self):
        return sum(getattr(self, f.name) for f in fields(self) if f.name != "total")


def _zero():
    return Tensor(np.zeros(()))


def _check_prob_rows(p, what):
    if p.ndim != 2:
        raise DimensionError(f"{what} must be [batch, classes], got shape {p.shape}")
    sums = p.data.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-5:
        raise PreconditionError(f"{what} rows must sum to 1 (worst sum {sums[np.argmax(np.abs(sums - 1.0))]:.6f})")


def ce_loss(probs, labels, weights=None):
    """Mean over the batch of -log p[y]; optional 0/1 example weights
    (TSA masking) normalize by the unmasked count, 0 when all are masked."""
    _check_prob_rows(probs, "ce_loss probabilities")
    b, c = probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise DataError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c}): min={labels.min()}, max={labels.max()}")
    if weights is None:
        weights = np.ones(b)
    weights = np.asarray(weights, dtype=probs.data.dtype)
    denom = float(weights.sum())
    if denom == 0.0:
        return _zero()
    onehot = np.zeros((b, c), dtype=probs.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    picked = tsum(mul(probs, onehot), axis=1)
    per_example = neg(log(clip_min(picked, LOG_FLOOR)))
    return tsum(mul(per_example, weights / denom))


def consistency_kl(p_ref, p_other):
    """Mean KL(p_ref || p_other) over rows; gradient stops on p_ref."""
    _check_prob_rows(p_ref, "consistency reference")
    _check_prob_rows(p_other, "consistency candidate")
    if p_ref.shape != p_other.shape:
        raise DimensionError(f"consistency_kl shapes differ: {p_ref.shape} vs {p_other.shape}")
    ref = p_ref.detach()
    log_ref = np.log(np.maximum(ref.data, LOG_FLOOR))
    log_other = log(clip_min(p_other, LOG_FLOOR))
    rows = tsum(mul(ref, sub(log_ref, log_other)), axis=1)
    return rows.mean()


def soft_distill(z_t, z_s):
    """Mean over the batch of ||z_t - z_s||^2; teacher logits carry no grad."""
    if z_t.shape != z_s.shape:
        raise DimensionError(f"soft_distill shapes differ: {z_t.shape} vs {z_s.shape}")
    b = z_t.shape[0]
    diff = sub(z_s, z_t.detach())
    return tsum(square(diff)) * (1.0 / b)


def hard_distill(p_t, p_s):
    """Cross entropy of the student against teacher argmax pseudo-labels
    (ties break to the lowest class index)."""
    _check_prob_rows(p_t, "hard_distill teacher probabilities")
    pseudo = np.argmax(p_t.data, axis=1)
    return ce_loss(p_s, pseudo)


def feature_distill(if_map, tf_map, pairs):
    """Mean over alignment pairs of MSE(If^l, Tf^k); inspirer side detached."""
    if not pairs:
        raise ConfigError("feature_distill needs a nonempty alignment")
    want_l = {l for l, _ in pairs}
    want_k = {k for _, k in pairs}
    if set(if_map) != want_l or set(tf_map) != want_k:
        raise ConfigError(
            f"alignment keys mismatch: inspirer has {sorted(if_map)} (need {sorted(want_l)}), "
            f"target has {sorted(tf_map)} (need {sorted(want_k)})"
        )
    total = None
    for l, k in pairs:
        a, b = if_map[l], tf_map[k]
        if a.shape != b.shape:
            raise DimensionError(f"projected features for pair ({l},{k}) differ: {a.shape} vs {b.shape}")
        mse = square(sub(b, a.detach())).mean()
        total = mse if total is None else total + mse
    return total * (1.0 / len(pairs))


@dataclass
class TsaSchedule:
    """Training-signal annealing threshold schedule (UDA lineage)."""

    kind: str = "linear"
    total_steps: int = 1
    classes: int = 2

    def __post_init__(self):
        if self.kind not in TSA_KINDS:
            raise ConfigError(f"tsa kind must be one of {TSA_KINDS}, got {self.kind!r}")
        if self.total_steps < 1:
            raise ConfigError(f"tsa total_steps must be >= 1, got {self.total_steps}")
        if self.classes < 2:
            raise ConfigError(f"tsa classes must be >= 2, got {self.classes}")

    def threshold(self, step):
        """eta(t): rises from 1/C to 1 over total_steps."""
        if not 0 <= step <= self.total_steps:
            raise PreconditionError(f"step {step} outside [0, {self.total_steps}]")
        if self.kind == "none":
            return 1.0
        frac = step / self.total_steps
        lo = 1.0 / self.classes
        span = 1.0 - lo
        if self.kind == "linear":
            alpha = frac
        elif self.kind == "log":
            alpha = 1.0 - math.exp(-5.0 * frac)
        else:  # exp
            alpha = math.exp(5.0 * (frac - 1.0))
        return alpha * span + lo


def tsa_mask(probs, labels, eta):
    """0/1 weights; an example is masked when its true-class probability
    exceeds eta."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    true_probs = p[np.arange(p.shape[0]), labels]
    return (true_probs <= eta).astype(p.dtype)


def tsa_threshold(step, schedule: TsaSchedule):
    return schedule.threshold(step)


def inspirer_objective(labeled, unlabeled, config, params, schedule, step, rng_factory=None):
    """Teacher-stage objective: TSA-masked CE on labeled data plus consistency
    KL(clean || augmented) on unlabeled pairs, unit weights.

    Returns (scalar total, LossBreakdown). The clean branch runs under
    no_grad; both branches use train-mode forwards.
    """
    if not unlabeled:
        raise PreconditionError("inspirer objective needs a nonempty unlabeled batch")
    if not labeled:
        raise PreconditionError("inspirer objective needs a nonempty labeled batch")

    def rng(tag, i):
        return rng_factory(tag, i) if rng_factory is not None else None

    logits = stack([
        inspirer_forward(x, config, params, "train", rng("sup", i)).logits
        for i, (x, _) in enumerate(labeled)
    ])
    labels = [y for _, y in labeled]
    probs = softmax(logits, axis=-1)
    eta = schedule.threshold(step)
    weights = tsa_mask(probs, labels, eta)
    l_ce = ce_loss(probs, labels, weights)

    with no_grad():
        clean = softmax(stack([
            inspirer_forward(u, config, params, "train", rng("unsup_u", j)).logits
            for j, (u, _) in enumerate(unlabeled)
        ]), axis=-1)
    aug = softmax(stack([
        inspirer_forward(a, config, params, "train", rng("unsup_a", j)).logits
        for j, (_, a) in enumerate(unlabeled)
    ]), axis=-1)
    l_kl = consistency_kl(clean, aug)

    total = l_ce + l_kl
    breakdown = LossBreakdown(l_ce=l_ce.item(), l_consist_t=l_kl.item(), total=total.item())
    return total, breakdown


@dataclass
class TraceSet:
    """Forward traces for one batch: labeled inputs, clean unlabeled inputs,
    and (student only) augmented unlabeled inputs."""

    labeled: list = field(default_factory=list)
    unlabeled: list = field(default_factory=list)
    unlabeled_aug: list | None = None


def _stack_logits(traces):
    return stack([tr.logits for tr in traces])


def _stack_projected(traces, keys):
    return {key: stack([tr.projected[key] for tr in traces]) for key in keys}


def _check_teacher(traces: TraceSet, need_unsup):
    batches = [traces.labeled] + ([traces.unlabeled] if need_unsup else [])
    for batch in batches:
        for tr in batch:
            if tr is None or not isinstance(tr, ForwardTrace):
                raise UsageError("missing teacher trace")
            if tr.logits.requires_grad:
                raise UsageError("teacher traces must be computed in eval mode under no_grad")


def target_objective(labels, teacher: TraceSet, student: TraceSet, pairs,
                     mode="soft", toggles: ComponentToggles | None = None):
    """Student-stage objective: the unit-weight sum of CE on labeled data,
    output distillation (labeled + unlabeled), feature distillation (labeled +
    unlabeled), and the student consistency KL.

    Output distillation is soft (squared logit distance) or hard (CE against
    teacher argmax pseudo-labels) per `mode`; one mode covers both branches.
    Disabled components are skipped and recorded as exactly 0.
    """
    if mode not in ("soft", "hard"):
        raise ConfigError(f"distill mode must be 'soft' or 'hard', got {mode!r}")
    toggles = toggles or ComponentToggles()
    if not student.labeled:
        raise PreconditionError("target objective needs a nonempty labeled batch")
    need_unsup = toggles.output_distill or toggles.feature_distill or toggles.consistency
    distill_on = toggles.output_distill or toggles.feature_distill
    if distill_on:
        _check_teacher(teacher, toggles.output_distill or toggles.feature_distill)
    if need_unsup and not student.unlabeled:
        raise PreconditionError("enabled unsupervised components need a nonempty unlabeled batch")

    breakdown = LossBreakdown()
    z_s_lab = _stack_logits(student.labeled)
    p_s_lab = softmax(z_s_lab, axis=-1)
    total = ce_loss(p_s_lab, labels)
    breakdown.l_ce = total.item()

    if toggles.output_distill:
        z_t_lab = _stack_logits(teacher.labeled)
        z_s_un = _stack_logits(student.unlabeled)
        z_t_un = _stack_logits(teacher.unlabeled)
        if mode == "soft":
            sup = soft_distill(z_t_lab, z_s_lab)
            unsup = soft_distill(z_t_un, z_s_un)
            breakdown.l_soft_sup = sup.item()
            breakdown.l_soft_unsup = unsup.item()
            total = total + sup + unsup
        else:
            hard = hard_distill(softmax(z_t_lab, axis=-1), p_s_lab) + hard_distill(
                softmax(z_t_un, axis=-1), softmax(z_s_un, axis=-1))
            breakdown.l_hard = hard.item()
            total = total + hard

    if toggles.feature_distill:
        want_l = [l for l, _ in pairs]
        want_k = [k for _, k in pairs]
        feat_sup = feature_distill(
            _stack_projected(teacher.labeled, want_l),
            _stack_projected(student.labeled, want_k), pairs)
        feat_unsup = feature_distill(
            _stack_projected(teacher.unlabeled, want_l),
            _stack_projected(student.unlabeled, want_k), pairs)
        breakdown.l_feat_sup = feat_sup.item()
        breakdown.l_feat_unsup = feat_unsup.item()
        total = total + feat_sup + feat_unsup

    if toggles.consistency:
        if student.unlabeled_aug is None:
            raise UsageError("consistency needs student traces on the augmented branch")
        p_clean = softmax(_stack_logits(student.unlabeled), axis=-1)
        p_aug = softmax(_stack_logits(student.unlabeled_aug), axis=-1)
        consist = consistency_kl(p_clean, p_aug)
        breakdown.l_consist_s = consist.item()
        total = total + consist

    breakdown.total = total.item()
    return total, breakdown
