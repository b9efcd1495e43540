"""Two-stage orchestration: stage 1 trains the inspirer (consistency SSL),
stage 2 freezes it and distills into the TextCNN target; plus evaluation,
checkpointing, the ablation and alignment-sweep drivers, and run-dir output.

Every random draw comes from a generator derived from (seed, purpose tags),
never from a shared sequential stream, so runs are bitwise-reproducible and
disabling a component cannot shift the draws of another.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, adam_step, backward, no_grad, zero_grads
from .checkpoint import load_checkpoint, params_from_arrays, save_checkpoint
from .config import RunConfig
from .data import (DatasetBundle, generate_synthetic, load_bundle, load_embeddings,
                   make_batches, pad_to, steps_per_epoch)
from .errors import ConfigError, DataError, NumericError
from .losses import (ComponentToggles, TraceSet, TsaSchedule, inspirer_objective,
                     target_objective)
from .models import (InspirerConfig, TargetConfig, clone_store, init_inspirer,
                     init_target, inspirer_forward, project_features, target_forward)

# tags for derived rng streams (crc32 of the purpose name)


def rng_for(seed, *tags):
    """Deterministic generator keyed by (seed, tags); strings are crc32-hashed."""
    key = [int(seed) & 0xFFFFFFFF]
    for t in tags:
        key.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t) & 0xFFFFFFFF)
    return np.random.default_rng(key)


@dataclass
class AlignmentSpec:
    """Ordered (transformer layer, filter size) pairs; textual form
    "{l1,l2,...}-{k1,k2,...}" zips the two lists positionally."""

    pairs: tuple

    def __post_init__(self):
        self.pairs = tuple((int(l), int(k)) for l, k in self.pairs)
        if not self.pairs:
            raise ConfigError("alignment needs at least one pair")
        if len(set(self.pairs)) != len(self.pairs):
            raise ConfigError(f"alignment pairs must be unique, got {self.pairs}")

    @classmethod
    def parse(cls, text) -> "AlignmentSpec":
        text = text.strip()
        parts = text.split("-")
        if len(parts) != 2 or not all(p.startswith("{") and p.endswith("}") for p in parts):
            raise ConfigError(f'alignment must look like "{{0,1,2}}-{{2,3,5}}", got {text!r}')
        try:
            layers = [int(x) for x in parts[0][1:-1].split(",")]
            sizes = [int(x) for x in parts[1][1:-1].split(",")]
        except ValueError as e:
            raise ConfigError(f"alignment contains a non-integer: {text!r}") from e
        if len(layers) != len(sizes):
            raise ConfigError(f"alignment lists differ in length: {len(layers)} vs {len(sizes)}")
        return cls(tuple(zip(layers, sizes)))

    def format(self) -> str:
        return ("{" + ",".join(str(l) for l, _ in self.pairs) + "}-{"
                + ",".join(str(k) for _, k in self.pairs) + "}")

    def validate(self, inspirer: InspirerConfig, target: TargetConfig):
        for l, k in self.pairs:
            if not 0 <= l < inspirer.layers:
                raise ConfigError(f"alignment layer {l} outside [0, {inspirer.layers})")
            if k not in target.filter_sizes:
                raise ConfigError(f"alignment filter size {k} not in {target.filter_sizes}")
        return self

    @classmethod
    def monotone(cls, layers, filter_sizes) -> "AlignmentSpec":
        """Default pairing: sorted layers vs sorted sizes positionally, after
        evenly subsampling the longer list to the shorter's length."""
        ls = list(range(layers))
        ks = sorted(filter_sizes)
        n = min(len(ls), len(ks))

        def subsample(xs):
            if len(xs) == n:
                return xs
            idx = np.round(np.linspace(0, len(xs) - 1, n)).astype(int)
            return [xs[i] for i in idx]

        return cls(tuple(zip(subsample(ls), subsample(ks))))


def resolve_alignment(cfg: RunConfig, inspirer: InspirerConfig, target: TargetConfig) -> AlignmentSpec:
    text = cfg.train.alignment
    if text == "auto":
        spec = AlignmentSpec.monotone(inspirer.layers, target.filter_sizes)
    else:
        spec = AlignmentSpec.parse(text)
    return spec.validate(inspirer, target)


@dataclass
class RunMetrics:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_dev: float = 0.0
    best_epoch: int = -1
    final_test: float = 0.0
    wall_clock: dict = field(default_factory=dict)

    def records(self):
        """The deterministic metrics stream (excludes wall clock)."""
        out = [dict(kind="step", **s) for s in self.steps]
        out += [dict(kind="epoch", **e) for e in self.epochs]
        out.append({"kind": "final", "best_dev": self.best_dev,
                    "best_epoch": self.best_epoch, "test_acc": self.final_test})
        return out


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------

def build_bundle(cfg: RunConfig) -> DatasetBundle:
    max_len = cfg.inspirer_config(vocab_size=4, classes=2).max_len
    if cfg.data.synthetic is not None:
        return generate_synthetic(cfg.data.synthetic, max_len)
    return load_bundle(cfg.data.train, cfg.data.dev, cfg.data.test, max_len,
                       unlabeled_path=cfg.data.unlabeled, max_vocab=cfg.data.max_vocab)


def _model_configs(cfg: RunConfig, bundle: DatasetBundle):
    classes = bundle.classes
    if classes < 2:
        raise DataError("dataset defines fewer than 2 classes")
    vocab = len(bundle.vocab)
    i_cfg = cfg.inspirer_config(vocab, classes)
    t_cfg = cfg.target_config(vocab, classes)
    if max(t_cfg.filter_sizes) + 1 > i_cfg.max_len:
        raise ConfigError(
            f"inspirer max_len {i_cfg.max_len} cannot hold the conv padding floor "
            f"{max(t_cfg.filter_sizes) + 1}"
        )
    return i_cfg, t_cfg


def _target_embeddings(cfg: RunConfig, bundle: DatasetBundle, t_cfg: TargetConfig):
    if cfg.data.embeddings is None:
        return None
    return load_embeddings(cfg.data.embeddings, bundle.vocab, t_cfg.emb_dim, seed=cfg.seed)


def _tfidf_table(cfg: RunConfig, bundle: DatasetBundle):
    if cfg.augment.kind != "tfidf_replace":
        return None
    from .augment import build_tfidf_table

    docs = [ids for ids, _ in bundle.labeled] + list(bundle.unlabeled)
    return build_tfidf_table(docs, len(bundle.vocab))


def _min_len(t_cfg: TargetConfig):
    return max(t_cfg.filter_sizes) + 1


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise DataError("accuracy needs equal-length nonempty predictions and labels")
    return float(np.mean(predictions == labels))


def evaluate_params(kind, config, params, split, min_len=1) -> float:
    """Argmax accuracy of eval-mode forwards over a (ids, label) split."""
    if not split:
        raise DataError("cannot evaluate on an empty split")
    preds = []
    with no_grad():
        for ids, _ in split:
            padded = pad_to(ids, min_len)
            if kind == "inspirer":
                trace = inspirer_forward(padded, config, params, "eval")
            else:
                trace = target_forward(padded, config, params, "eval")
            preds.append(int(np.argmax(trace.logits.data)))
    return accuracy(preds, [y for _, y in split])


# ---------------------------------------------------------------------------
# stage 1: inspirer
# ---------------------------------------------------------------------------

def _finite_or_raise(total, step):
    if not np.isfinite(total.data).all():
        raise NumericError(f"loss diverged (non-finite) at step {step}")


def train_inspirer(cfg: RunConfig, bundle: DatasetBundle):
    """Optimize the consistency objective for the configured epochs; keeps the
    best-dev parameter snapshot. Returns (params, RunMetrics)."""
    t0 = time.perf_counter()
    i_cfg, t_cfg = _model_configs(cfg, bundle)
    min_len = _min_len(t_cfg)
    tfidf = _tfidf_table(cfg, bundle)
    params = init_inspirer(i_cfg, rng_for(cfg.seed, "inspirer_init"))
    head = {n: p for n, p in params.items() if n.startswith("cls.")}
    encoder = {n: p for n, p in params.items() if not n.startswith("cls.")}
    opt_head, opt_enc = AdamState(), AdamState()

    per_epoch = steps_per_epoch(bundle, cfg.train.labeled_batch, cfg.train.unsup_ratio)
    total_steps = max(1, cfg.train.epochs * per_epoch)
    schedule = TsaSchedule(cfg.train.tsa, total_steps=total_steps, classes=i_cfg.classes)

    metrics = RunMetrics()
    best = clone_store(params)
    step = 0
    for epoch in range(cfg.train.epochs):
        batches = make_batches(bundle, cfg.train.labeled_batch, cfg.train.unsup_ratio,
                               cfg.augment, cfg.seed, epoch, min_len=min_len, tfidf=tfidf)
        for (lab_ids, lab_y), unlab in batches:
            labeled = list(zip(lab_ids, lab_y))

            def factory(tag, i, _epoch=epoch, _step=step):
                return rng_for(cfg.seed, "drop_insp", _epoch, _step, tag, i)

            zero_grads(params)
            total, br = inspirer_objective(labeled, unlab, i_cfg, params, schedule,
                                           step, rng_factory=factory)
            _finite_or_raise(total, step)
            backward(total)
            adam_step(encoder, opt_enc, cfg.train.inspirer_encoder_lr)
            adam_step(head, opt_head, cfg.train.inspirer_head_lr)
            metrics.steps.append({"step": step, "epoch": epoch,
                                  "eta": schedule.threshold(step), **br.as_dict()})
            step += 1
        dev_acc = evaluate_params("inspirer", i_cfg, params, bundle.dev, min_len)
        metrics.epochs.append({"epoch": epoch, "dev_acc": dev_acc, "network": "inspirer"})
        if dev_acc > metrics.best_dev or metrics.best_epoch < 0:
            metrics.best_dev = dev_acc
            metrics.best_epoch = epoch
            best = clone_store(params)
    metrics.final_test = evaluate_params("inspirer", i_cfg, best, bundle.test, min_len)
    metrics.wall_clock["train_inspirer_s"] = time.perf_counter() - t0
    return best, metrics


# ---------------------------------------------------------------------------
# stage 2: target (distillation and supervised baseline share this loop)
# ---------------------------------------------------------------------------

def _validate_store(config, store, kind):
    rng = np.random.default_rng(0)
    expect = init_inspirer(config, rng) if kind == "inspirer" else init_target(config, rng)
    got = {n: tuple(t.data.shape) for n, t in store.items()}
    want = {n: tuple(t.data.shape) for n, t in expect.items()}
    if got != want:
        missing = sorted(set(want) - set(got))
        extra = sorted(set(got) - set(want))
        diff = sorted(n for n in set(got) & set(want) if got[n] != want[n])
        raise ConfigError(
            f"{kind} checkpoint incompatible with config "
            f"(missing={missing}, unexpected={extra}, shape-mismatch={diff})"
        )


def _teacher_traces(ids_batch, i_cfg, teacher, align_pairs, need_features, activation):
    traces = []
    with no_grad():
        for ids in ids_batch:
            tr = inspirer_forward(ids, i_cfg, teacher, "eval")
            if need_features:
                project_features(tr, align_pairs, teacher, activation)
            traces.append(tr)
    return traces


def train_target(cfg: RunConfig, bundle: DatasetBundle, teacher_store=None,
                 toggles: ComponentToggles | None = None):
    """Stage 2 when `teacher_store` is given; the CE-only supervised baseline
    when it is None (then all components are off and no unlabeled data is
    consumed, which makes the two drivers step-for-step identical)."""
    t0 = time.perf_counter()
    i_cfg, t_cfg = _model_configs(cfg, bundle)
    min_len = _min_len(t_cfg)

    if teacher_store is None:
        toggles = ComponentToggles(False, False, False)
    else:
        toggles = toggles if toggles is not None else cfg.train.toggles
        _validate_store(i_cfg, teacher_store, "inspirer")
    need_unsup = toggles.output_distill or toggles.feature_distill or toggles.consistency
    need_features = toggles.feature_distill
    align = None
    if need_features:
        if t_cfg.projection_dim is None or i_cfg.projection_dim is None:
            raise ConfigError("feature distillation needs projection_dim on both models")
        if t_cfg.projection_dim != i_cfg.projection_dim:
            raise ConfigError(
                f"projection dims differ: inspirer {i_cfg.projection_dim} "
                f"vs target {t_cfg.projection_dim}"
            )
        align = resolve_alignment(cfg, i_cfg, t_cfg)
    pairs = align.pairs if align is not None else ()

    tfidf = _tfidf_table(cfg, bundle)
    emb = _target_embeddings(cfg, bundle, t_cfg)
    params = init_target(t_cfg, rng_for(cfg.seed, "target_init"), embedding_matrix=emb)
    opt = AdamState()

    metrics = RunMetrics()
    best = clone_store(params)
    step = 0
    for epoch in range(cfg.train.epochs):
        batches = make_batches(bundle, cfg.train.labeled_batch, cfg.train.unsup_ratio,
                               cfg.augment, cfg.seed, epoch, min_len=min_len,
                               tfidf=tfidf, supervised=not need_unsup)
        for (lab_ids, lab_y), unlab in batches:
            def srng(tag, i, _epoch=epoch, _step=step):
                return rng_for(cfg.seed, "drop_tgt", _epoch, _step, tag, i)

            student = TraceSet(
                labeled=[target_forward(ids, t_cfg, params, "train", srng("sup", i))
                         for i, ids in enumerate(lab_ids)],
            )
            teacher = TraceSet()
            if need_unsup:
                student.unlabeled = [
                    target_forward(u, t_cfg, params, "train", srng("unsup_u", j))
                    for j, (u, _) in enumerate(unlab)
                ]
                if toggles.consistency:
                    student.unlabeled_aug = [
                        target_forward(a, t_cfg, params, "train", srng("unsup_a", j))
                        for j, (_, a) in enumerate(unlab)
                    ]
            if toggles.output_distill or toggles.feature_distill:
                teacher.labeled = _teacher_traces(lab_ids, i_cfg, teacher_store, pairs,
                                                  need_features, t_cfg.projection_activation)
                teacher.unlabeled = _teacher_traces([u for u, _ in unlab], i_cfg, teacher_store,
                                                    pairs, need_features, t_cfg.projection_activation)
            if need_features:
                for tr in student.labeled + student.unlabeled:
                    project_features(tr, pairs, params, t_cfg.projection_activation)

            zero_grads(params)
            total, br = target_objective(lab_y, teacher, student, pairs,
                                         mode=cfg.train.distill_mode, toggles=toggles)
            _finite_or_raise(total, step)
            backward(total)
            adam_step(params, opt, cfg.train.target_lr)
            metrics.steps.append({"step": step, "epoch": epoch, **br.as_dict()})
            step += 1
        dev_acc = evaluate_params("target", t_cfg, params, bundle.dev, min_len)
        metrics.epochs.append({"epoch": epoch, "dev_acc": dev_acc, "network": "target"})
        if dev_acc > metrics.best_dev or metrics.best_epoch < 0:
            metrics.best_dev = dev_acc
            metrics.best_epoch = epoch
            best = clone_store(params)
    metrics.final_test = evaluate_params("target", t_cfg, best, bundle.test, min_len)
    phase = "distill_target_s" if teacher_store is not None else "train_supervised_s"
    metrics.wall_clock[phase] = time.perf_counter() - t0
    return best, metrics


def distill_target(cfg: RunConfig, teacher_store, bundle: DatasetBundle,
                   toggles: ComponentToggles | None = None):
    return train_target(cfg, bundle, teacher_store=teacher_store, toggles=toggles)


def train_supervised_target(cfg: RunConfig, bundle: DatasetBundle):
    return train_target(cfg, bundle, teacher_store=None)


# ---------------------------------------------------------------------------
# drivers (ablation, alignment sweep)
# ---------------------------------------------------------------------------

def run_ablation(cfg: RunConfig, removals, bundle: DatasetBundle, teacher_store):
    """One stage-2 run per removed component plus the full baseline, all with
    the same seed so differences isolate the removal."""
    rows = []
    arms = [("baseline", ())] + [(f"-{name}", (name,)) for name in removals]
    for arm_name, removed in arms:
        toggles = ComponentToggles.without(removed)
        store, metrics = distill_target(cfg, teacher_store, bundle, toggles=toggles)
        rows.append({"arm": arm_name, "removed": list(removed),
                     "test_acc": metrics.final_test, "best_dev": metrics.best_dev,
                     "metrics": metrics, "store": store})
    return rows


def run_alignment_sweep(cfg: RunConfig, spec_texts, bundle: DatasetBundle, teacher_store):
    """One stage-2 run per alignment from a shared stage-1 checkpoint."""
    rows = []
    for text in spec_texts:
        arm_cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, alignment=text))
        store, metrics = distill_target(arm_cfg, teacher_store, bundle)
        rows.append({"alignment": text.strip(), "test_acc": metrics.final_test,
                     "best_dev": metrics.best_dev, "metrics": metrics, "store": store})
    return rows


# ---------------------------------------------------------------------------
# run-directory output
# ---------------------------------------------------------------------------

def write_manifest(out_dir, command, cfg: RunConfig, extra=None):
    doc = {"command": command, "seed": cfg.seed, "config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_metrics(out_dir, metrics: RunMetrics, name="metrics.jsonl"):
    path = out_dir / name
    with open(path, "w", encoding="utf-8") as f:
        for rec in metrics.records():
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def write_summary(out_dir, metrics: RunMetrics, extra=None, name="summary.json"):
    doc = {"best_dev": metrics.best_dev, "best_epoch": metrics.best_epoch,
           "test_acc": metrics.final_test, "wall_clock": metrics.wall_clock}
    if extra:
        doc.update(extra)
    path = out_dir / name
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def save_model(out_dir, name, kind, config, store, vocab):
    """Checkpoint plus a sidecar that makes `evaluate --ckpt` self-sufficient."""
    ckpt = out_dir / f"{name}.ckpt"
    save_checkpoint(ckpt, store)
    sidecar = {"kind": kind, "model_config": config.__dict__.copy(),
               "vocab": vocab.id_to_token}
    if kind == "target":
        sidecar["model_config"]["filter_sizes"] = list(config.filter_sizes)
    with open(str(ckpt) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f)
        f.write("\n")
    return ckpt


def load_model(ckpt_path):
    """Rebuild (kind, config, params, vocab) from a checkpoint + sidecar."""
    from .data import Vocab

    sidecar_path = str(ckpt_path) + ".json"
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"missing checkpoint sidecar {sidecar_path}") from e
    kind = sidecar["kind"]
    kwargs = dict(sidecar["model_config"])
    if kind == "inspirer":
        config = InspirerConfig(**kwargs)
    elif kind == "target":
        kwargs["filter_sizes"] = tuple(kwargs["filter_sizes"])
        config = TargetConfig(**kwargs)
    else:
        raise DataError(f"unknown model kind {kind!r} in {sidecar_path}")
    params = params_from_arrays(load_checkpoint(ckpt_path))
    _validate_store(config, params, kind)
    vocab = Vocab(sidecar["vocab"][3:])
    return kind, config, params, vocab
