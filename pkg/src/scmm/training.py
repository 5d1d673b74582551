"""Pre-training and fine-tuning loops with Adam and run logging.

One optimization loop owns its ParameterStore. Every stochastic choice
(shuffling, masks, splits) is derived from the run seed plus loop
counters, so a run is reproducible bit-for-bit from its config, and any
epoch is reproducible in isolation.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import network as net
from . import objectives as obj
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError, OptimizationError
from .features import FeatureMatrix
from .masking import MaskConfig, draw_mask_batch

PROBE_JOINT = "joint"
PROBE_LINEAR = "linear_probe"


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 5e-4
    weight_decay: float = 3e-4
    mask: MaskConfig = field(default_factory=MaskConfig)
    softcl: obj.SoftCLConfig = field(default_factory=obj.SoftCLConfig)
    seed: int = 0
    use_contrastive: bool = True
    use_reconstruction: bool = True
    aggregate_include_masked: bool = True
    aggregate_anchor_masked: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigurationError("epochs must be >= 1 and batch_size >= 2")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be > 0 and weight_decay >= 0")
        if not (self.use_contrastive or self.use_reconstruction):
            raise ConfigurationError("at least one pre-training loss must be enabled")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 5e-4
    weight_decay: float = 3e-4
    probe_mode: str = PROBE_JOINT
    label_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.probe_mode not in (PROBE_JOINT, PROBE_LINEAR):
            raise ConfigurationError(f"unknown probe_mode {self.probe_mode!r}")
        if not (0.0 < self.label_fraction <= 1.0):
            raise ConfigurationError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")


class RunLog:
    """Append-only per-epoch records plus a config snapshot.

    The persisted runlog.jsonl holds only deterministic content (config,
    seed, per-epoch losses); wall-clock timings go to a sibling
    timings.json so two identical runs produce byte-identical logs.
    """

    def __init__(self, kind: str, seed: int, config_snapshot: dict):
        self.kind = kind
        self.seed = seed
        self.config_snapshot = config_snapshot
        self.records: list[dict] = []
        self.timings: list[float] = []

    def append(self, record: dict, wall_seconds: float):
        self.records.append(record)
        self.timings.append(wall_seconds)

    def to_jsonl(self) -> str:
        header = {"kind": self.kind, "seed": self.seed, "config": self.config_snapshot}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(rec, sort_keys=True) for rec in self.records]
        return "\n".join(lines) + "\n"

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "runlog.jsonl").write_text(self.to_jsonl())
        (directory / "timings.json").write_text(
            json.dumps({"per_epoch_seconds": self.timings}, indent=2)
        )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self):
        self.step = 0
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}


def adam_step(
    store: net.ParameterStore,
    learning_rate: float,
    weight_decay: float,
    state: AdamState,
    trainable: set[str] | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update from the gradients currently held by the store.

    Weight decay is decoupled (an extra -lr*wd*theta term) and skips the
    log-sigma loss weights. Non-finite gradients abort with the parameter
    name.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, param in store.params.items():
        if trainable is not None and name not in trainable:
            continue
        grad = param.grad
        if grad is None:
            continue
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(param.data)
        v = state.second_moment.get(name)
        if v is None:
            v = state.second_moment[name] = np.zeros_like(param.data)
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data = param.data - learning_rate * update
        if weight_decay and not name.startswith("loss."):
            param.data = param.data - learning_rate * weight_decay * param.data
    # future gradients accumulate into fresh buffers against the new values
    for name, param in store.params.items():
        if trainable is None or name in trainable:
            param.zero_grad()


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------

def _stack_values(samples: list[FeatureMatrix]) -> np.ndarray:
    return np.stack([m.values for m in samples])


def _epoch_batches(count, batch_size, seed, epoch):
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0x7065]))
    order = rng.permutation(count)
    return [order[i : i + batch_size] for i in range(0, count, batch_size)]


def pretrain_batch_loss(
    store: net.ParameterStore,
    x: np.ndarray,
    x_masked: np.ndarray,
    config: PretrainConfig,
    weights: np.ndarray | None = None,
):
    """Forward pass of one pre-training batch.

    Returns (total, contrastive, reconstruction) tensors; disabled terms
    come back as None. In original-space mode the pair weights depend only
    on the raw batch and may be precomputed and passed in; with fixed views
    and weights the result is a pure function of the parameters, which is
    what the gradient checks rely on.
    """
    batch = x.shape[0]
    joint_h = net.encode(store, np.concatenate([x, x_masked], axis=0))
    joint_z = net.project(store, joint_h)
    emb = obj.BatchEmbeddings.from_joint(joint_z, joint_h, batch)

    loss_c = None
    if config.use_contrastive:
        if weights is None:
            weights = obj.batch_weights(x, config.softcl, embeddings=emb.z_orig.data)
        loss_c = obj.soft_contrastive_loss(emb, weights, config.softcl.temperature)

    loss_r = None
    if config.use_reconstruction:
        combined, _ = obj.aggregate(
            emb,
            config.softcl.temperature,
            include_masked=config.aggregate_include_masked,
            anchor_masked=config.aggregate_anchor_masked,
        )
        decoded = net.decode(store, combined)
        loss_r = obj.reconstruction_loss(x, decoded)

    return obj.total_loss(loss_c, loss_r, store), loss_c, loss_r


def masked_views(x: np.ndarray, mask_config: MaskConfig, seed, epoch, batch_index) -> np.ndarray:
    """Fresh per-sample masks for one batch, drawn per epoch."""
    keep = draw_mask_batch(
        mask_config,
        x.shape[0],
        x.shape[1],
        x.shape[2],
        np.random.SeedSequence([mask_config.seed, seed, epoch, batch_index]),
    )
    return x * keep


def pretrain(
    samples: list[FeatureMatrix],
    config: PretrainConfig,
    network_config: net.NetworkConfig,
    out_dir=None,
) -> tuple[net.ParameterStore, RunLog]:
    """Self-supervised pre-training loop; saves final-epoch parameters."""
    if not samples:
        raise ContractError("pre-training corpus is empty")
    store = net.init_parameters(network_config, config.seed)
    state = AdamState()
    values = _stack_values(samples)
    log = RunLog("pretrain", config.seed, _config_snapshot(config, network_config))

    total_batches = 0
    skipped = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sums = {"contrastive": 0.0, "reconstruction": 0.0, "total": 0.0}
        used = 0
        for batch_index, idx in enumerate(_epoch_batches(len(samples), config.batch_size, config.seed, epoch)):
            if len(idx) < 2:
                continue
            x = values[idx]
            x_masked = masked_views(x, config.mask, config.seed, epoch, batch_index)
            total_batches += 1
            try:
                loss, loss_c, loss_r = pretrain_batch_loss(store, x, x_masked, config)
            except obj.DegenerateBatchError as exc:
                skipped += 1
                _warn(f"epoch {epoch}: skipping degenerate batch {batch_index}: {exc}")
                continue
            store.zero_grads()
            ad.backward(loss)
            adam_step(store, config.learning_rate, config.weight_decay, state)
            sums["total"] += loss.item()
            sums["contrastive"] += loss_c.item() if loss_c is not None else 0.0
            sums["reconstruction"] += loss_r.item() if loss_r is not None else 0.0
            used += 1
        if skipped > 0.1 * total_batches:
            raise ContractError(
                f"{skipped} of {total_batches} batches degenerate; aborting"
            )
        record = {
            "epoch": epoch,
            "batches": used,
            "skipped": skipped,
            "loss_contrastive": sums["contrastive"] / max(used, 1),
            "loss_reconstruction": sums["reconstruction"] / max(used, 1),
            "loss_total": sums["total"] / max(used, 1),
        }
        log.append(record, time.perf_counter() - t0)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        net.save_checkpoint(store, out_dir / "checkpoint.scmmckpt")
        log.write(out_dir)
    return store, log


# ---------------------------------------------------------------------------
# fine-tuning and evaluation
# ---------------------------------------------------------------------------

def _cross_entropy(store, x, labels):
    logits = net.classify(store, net.encode(store, x))
    log_probs = ad.log_softmax_rows(logits)
    onehot = np.zeros(logits.data.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.scale(ad.tensor_sum(ad.mul(Tensor(onehot), log_probs)), -1.0 / len(labels))


def finetune(
    store: net.ParameterStore,
    samples: list[FeatureMatrix],
    config: FinetuneConfig,
    out_dir=None,
) -> tuple[net.ParameterStore, RunLog]:
    """Supervised fine-tuning with cross-entropy; encoder updates are optional.

    Joint mode trains encoder plus classifier; linear-probe mode freezes
    the encoder. Projector, decoder, and the loss weights are never touched.
    """
    if not samples:
        raise ContractError("fine-tuning set is empty")
    store = store.clone()
    labels_all = [m.label for m in samples]
    if any(l is None for l in labels_all):
        raise ConfigurationError("fine-tuning requires labeled samples")
    present = set(labels_all)
    expected = set(range(store.config.class_count))
    if present != expected:
        raise ConfigurationError(
            f"classes {sorted(expected - present)} absent from the fine-tune set"
        )

    trainable = {n for n in store.names() if n.startswith("classifier.")}
    if config.probe_mode == PROBE_JOINT:
        trainable |= {n for n in store.names() if n.startswith("encoder.")}

    values = _stack_values(samples)
    labels = np.asarray(labels_all, dtype=np.int64)
    state = AdamState()
    log = RunLog("finetune", config.seed, {"finetune": asdict(config)})

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        for idx in _epoch_batches(len(samples), config.batch_size, config.seed, epoch):
            x = values[idx]
            y = labels[idx]
            loss = _cross_entropy(store, x, y)
            store.zero_grads()
            ad.backward(loss)
            adam_step(store, config.learning_rate, config.weight_decay, state, trainable=trainable)
            loss_sum += loss.item() * len(idx)
            with ad.no_grad():
                logits = net.classify(store, net.encode(store, x))
            correct += int((logits.data.argmax(axis=1) == y).sum())
        log.append(
            {
                "epoch": epoch,
                "cross_entropy": loss_sum / len(samples),
                "train_accuracy": correct / len(samples),
            },
            time.perf_counter() - t0,
        )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        net.save_checkpoint(store, out_dir / "checkpoint.scmmckpt")
        log.write(out_dir)
    return store, log


def evaluate(store: net.ParameterStore, samples: list[FeatureMatrix]) -> metrics_mod.PredictionBatch:
    if not samples:
        raise ContractError("evaluation set is empty")
    values = _stack_values(samples)
    labels = np.asarray([m.label for m in samples], dtype=np.int64)
    with ad.no_grad():
        logits = net.classify(store, net.encode(store, values))
        probs = ad.softmax_rows(logits)
    return metrics_mod.PredictionBatch(probabilities=probs.data, true_labels=labels)


# ---------------------------------------------------------------------------
# cross-corpus protocol
# ---------------------------------------------------------------------------

def _config_snapshot(pretrain_config, network_config):
    return {
        "pretrain": asdict(pretrain_config),
        "network": network_config.to_dict(),
    }


def _warn(message):
    import sys

    print(f"warning: {message}", file=sys.stderr)


def align_corpus(samples, source_channels, target_channels, policy=None):
    if list(source_channels) == list(target_channels) and policy is None:
        return samples
    if policy is None:
        alignment = corpus_mod.make_alignment(source_channels, target_channels)
    else:
        alignment = corpus_mod.ChannelAlignment(
            list(source_channels), list(target_channels), policy
        )
    return [corpus_mod.align_channels(m, alignment) for m in samples]


def cross_corpus_run(
    pretrain_dir,
    finetune_dir,
    pretrain_config: PretrainConfig,
    finetune_config: FinetuneConfig,
    finetune_trials_per_session: int,
    network_config: net.NetworkConfig | None = None,
    split_seed: int | None = None,
    pretrained_store: net.ParameterStore | None = None,
    alignment: corpus_mod.ChannelAlignment | None = None,
    out_dir=None,
) -> dict:
    """Pre-train on one corpus, then fine-tune and test per subject of another.

    The fine-tuning corpus is the channel standard: the pre-training corpus
    is aligned to it (dropping extras or zero-filling gaps; pass an explicit
    alignment to override the automatic policy). Reports per-subject metrics
    and their mean/std in percent.
    """
    pre_manifest = corpus_mod.load_manifest(pretrain_dir)
    fine_manifest = corpus_mod.load_manifest(finetune_dir)
    if split_seed is None:
        split_seed = finetune_config.seed

    if network_config is None:
        network_config = net.NetworkConfig(
            channel_count=fine_manifest.channel_count,
            band_count=fine_manifest.band_count,
            class_count=len(fine_manifest.class_names),
        )

    if pretrained_store is None:
        if alignment is None:
            pre_samples = align_corpus(
                corpus_mod.load_samples(pretrain_dir),
                pre_manifest.channel_names,
                fine_manifest.channel_names,
            )
        else:
            pre_samples = [
                corpus_mod.align_channels(m, alignment)
                for m in corpus_mod.load_samples(pretrain_dir)
            ]
        pretrained_store, _ = pretrain(pre_samples, pretrain_config, network_config)

    finetune_refs, test_refs = corpus_mod.leave_trials_out_split(
        fine_manifest, finetune_trials_per_session, split_seed
    )
    if finetune_config.label_fraction < 1.0:
        finetune_refs = corpus_mod.subsample_labeled(
            finetune_refs, finetune_config.label_fraction, finetune_config.seed
        )

    per_subject = []
    for subject in range(fine_manifest.subjects):
        ft = [r for r in finetune_refs if r.subject == subject]
        te = [r for r in test_refs if r.subject == subject]
        if not ft or not te:
            raise ConfigurationError(f"subject {subject} has an empty fine-tune or test side")
        tuned, _ = finetune(
            pretrained_store, corpus_mod.load_samples(finetune_dir, ft), finetune_config
        )
        batch = evaluate(tuned, corpus_mod.load_samples(finetune_dir, te))
        scores = metrics_mod.classification_metrics(batch)
        scores["auroc"] = metrics_mod.auroc(batch)
        scores["auprc"] = metrics_mod.auprc(batch)
        scores["subject"] = subject
        per_subject.append(scores)

    summary = metrics_mod.aggregate_subjects(
        [{k: v for k, v in row.items() if k != "subject"} for row in per_subject]
    )
    report = {
        "pretrain_corpus": pre_manifest.corpus_id,
        "finetune_corpus": fine_manifest.corpus_id,
        "subjects": per_subject,
        "mean_std_percent": summary,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
