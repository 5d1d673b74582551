"""Synthetic labeled corpora with short-term continuity, plus persistence.

A corpus lives in a directory:

    <corpus_dir>/manifest.json
    <corpus_dir>/samples/s<subject>_e<session>_t<trial>_g<segment>.scmm

Sample file format (normative, bit-exact):
    16-byte header: magic b"SCMM", format version (u32 LE), C (u32 LE),
    F (u32 LE); payload: C*F float32 LE values, row-major (channel-major).
Labels and provenance live in the manifest, not in sample files.

The generator emits feature matrices directly from a latent band-power
model: per trial, a class-conditioned mean grid plus a stationary AR(1)
latent drift makes temporally adjacent segments of a trial more similar
to each other than to segments of different-class trials. An optional
raw-signal mode synthesizes band-limited noise per channel instead and
routes it through the feature-extraction pipeline.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigurationError, ContractError, FormatError
from .features import DEFAULT_BANDS, FeatureMatrix, RawRecording, extract_features

MAGIC = b"SCMM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_MAX_CELLS = 1 << 26  # refuse absurd shapes before allocating

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuityProfile:
    """Knobs for how strongly adjacent segments of a trial resemble each other."""

    ar_coefficient: float = 0.9
    class_separation: float = 1.0
    noise_scale: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.ar_coefficient < 1.0):
            raise ConfigurationError(f"ar_coefficient must lie in [0, 1), got {self.ar_coefficient}")
        if self.class_separation <= 0.0:
            raise ConfigurationError(f"class_separation must be positive, got {self.class_separation}")
        if self.noise_scale < 0.0:
            raise ConfigurationError(f"noise_scale must be >= 0, got {self.noise_scale}")


@dataclass(frozen=True)
class SampleRef:
    path: str
    subject: int
    session: int
    trial: int
    segment: int
    label: int


@dataclass
class CorpusManifest:
    corpus_id: str
    subjects: int
    sessions_per_subject: int
    trials_per_session: int
    segments_per_trial: int
    channel_count: int
    band_count: int
    class_names: list[str]
    window_seconds: float
    generator_seed: int
    template_seed: int
    generator_mode: str
    channel_names: list[str]
    continuity: dict
    sample_files: list[SampleRef] = field(default_factory=list)

    def validate(self):
        expected = (
            self.subjects
            * self.sessions_per_subject
            * self.trials_per_session
            * self.segments_per_trial
        )
        if len(self.sample_files) != expected:
            raise FormatError(
                f"manifest lists {len(self.sample_files)} samples, expected {expected}"
            )
        for ref in self.sample_files:
            if not (0 <= ref.label < len(self.class_names)):
                raise FormatError(f"label {ref.label} out of range in {ref.path}")

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        doc = json.loads(text)
        doc["sample_files"] = [SampleRef(**entry) for entry in doc["sample_files"]]
        manifest = cls(**doc)
        manifest.validate()
        return manifest


@dataclass(frozen=True)
class ChannelAlignment:
    source_channels: list[str]
    target_channels: list[str]
    policy: str  # "drop_extra" or "zero_fill"

    def __post_init__(self):
        if self.policy not in ("drop_extra", "zero_fill"):
            raise ConfigurationError(f"unknown alignment policy {self.policy!r}")
        source = set(self.source_channels)
        target = set(self.target_channels)
        if self.policy == "drop_extra" and not target <= source:
            missing = sorted(target - source)
            raise AlignmentError(f"drop_extra requires target within source; missing {missing}")
        if self.policy == "zero_fill" and not source <= target:
            extra = sorted(source - target)
            raise AlignmentError(f"zero_fill requires source within target; extra {extra}")


# ---------------------------------------------------------------------------
# sample file I/O
# ---------------------------------------------------------------------------

def store_sample(matrix: FeatureMatrix, path) -> None:
    values = np.ascontiguousarray(matrix.values, dtype=np.float32)
    if not np.all(np.isfinite(values)):
        raise ContractError(f"refusing to store non-finite values to {path}")
    channels, bands = values.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, channels, bands)
    Path(path).write_bytes(header + values.tobytes())


def load_sample(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, expected >= 16)")
    magic, version, channels, bands = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if channels == 0 or bands == 0 or channels * bands > _MAX_CELLS:
        raise FormatError(f"{path}: implausible shape {channels} x {bands}")
    expected = _HEADER.size + channels * bands * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    values = payload.reshape(channels, bands).astype(np.float64)
    return FeatureMatrix(values=values)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _channel_names(count):
    return [f"ch{i:02d}" for i in range(count)]


def class_template(template_seed: int, class_index: int, channel_index: int, bands: int) -> np.ndarray:
    """Deterministic per-(class, channel) band profile, shared across corpora.

    Streams are keyed by channel index, so two corpora generated with the
    same template seed agree on every channel they share regardless of
    their channel counts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([template_seed, class_index, channel_index]))
    return rng.normal(size=bands)


def _trial_rng(seed, subject, session, trial):
    return np.random.default_rng(np.random.SeedSequence([seed, subject, session, trial, 0x7261]))


def _session_labels(seed, subject, session, trials, class_count):
    """Near-balanced label assignment over the trials of one session."""
    base = [t % class_count for t in range(trials)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, subject, session, 0x6C61]))
    rng.shuffle(base)
    return base


def generate_corpus(
    out_dir,
    *,
    corpus_id: str,
    subjects: int,
    sessions_per_subject: int,
    trials_per_session: int,
    segments_per_trial: int,
    channel_count: int,
    class_names: list[str],
    profile: ContinuityProfile,
    seed: int,
    band_count: int = 5,
    window_seconds: float = 1.0,
    template_seed: int | None = None,
    mode: str = "direct",
    sample_rate: float = 200.0,
) -> CorpusManifest:
    """Generate and persist a corpus; regeneration with the same seed is bit-identical."""
    if min(subjects, sessions_per_subject, trials_per_session, segments_per_trial) < 1:
        raise ConfigurationError("all corpus counts must be positive")
    if channel_count < 1 or band_count < 1:
        raise ConfigurationError("channel_count and band_count must be positive")
    if len(class_names) < 1:
        raise ConfigurationError("at least one class required")
    if mode not in ("direct", "raw_signal"):
        raise ConfigurationError(f"unknown generator mode {mode!r}")
    if template_seed is None:
        template_seed = seed

    out_dir = Path(out_dir)
    samples_dir = out_dir / "samples"
    try:
        samples_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}") from exc

    class_count = len(class_names)
    templates = {
        k: np.stack(
            [class_template(template_seed, k, c, band_count) * profile.class_separation
             for c in range(channel_count)]
        )
        for k in range(class_count)
    }

    refs = []
    for subject in range(subjects):
        for session in range(sessions_per_subject):
            labels = _session_labels(seed, subject, session, trials_per_session, class_count)
            for trial in range(trials_per_session):
                label = labels[trial]
                latents = _trial_latents(
                    templates[label], profile, segments_per_trial,
                    _trial_rng(seed, subject, session, trial),
                )
                matrices = _render_trial(
                    latents, mode, window_seconds, sample_rate,
                    np.random.default_rng(np.random.SeedSequence([seed, subject, session, trial, 0x7369])),
                )
                for segment_idx, matrix in enumerate(matrices):
                    name = f"s{subject:02d}_e{session:02d}_t{trial:02d}_g{segment_idx:03d}.scmm"
                    store_sample(matrix, samples_dir / name)
                    refs.append(SampleRef(
                        path=f"samples/{name}",
                        subject=subject,
                        session=session,
                        trial=trial,
                        segment=segment_idx,
                        label=label,
                    ))

    manifest = CorpusManifest(
        corpus_id=corpus_id,
        subjects=subjects,
        sessions_per_subject=sessions_per_subject,
        trials_per_session=trials_per_session,
        segments_per_trial=segments_per_trial,
        channel_count=channel_count,
        band_count=band_count,
        class_names=list(class_names),
        window_seconds=window_seconds,
        generator_seed=seed,
        template_seed=template_seed,
        generator_mode=mode,
        channel_names=_channel_names(channel_count),
        continuity=asdict(profile),
        sample_files=refs,
    )
    manifest.validate()
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def _trial_latents(mean_grid, profile, segments, rng):
    """AR(1) latent drift around the class mean; stationary unit marginal."""
    rho = profile.ar_coefficient
    innovation = np.sqrt(1.0 - rho * rho)
    drift = rng.normal(size=mean_grid.shape)
    latents = []
    for _ in range(segments):
        observed = mean_grid + drift + profile.noise_scale * rng.normal(size=mean_grid.shape)
        latents.append(observed)
        drift = rho * drift + innovation * rng.normal(size=mean_grid.shape)
    return latents


def _render_trial(latents, mode, window_seconds, sample_rate, rng):
    if mode == "direct":
        return [FeatureMatrix(values=latent) for latent in latents]
    return _render_raw_trial(latents, window_seconds, sample_rate, rng)


def _render_raw_trial(latents, window_seconds, sample_rate, rng):
    """Synthesize band-limited noise whose per-band variance encodes the latents.

    Entry (c, f) of a latent grid is treated as a target differential
    entropy; the matching band component is scaled so its within-window
    variance is exp(2 * target) / (2*pi*e). The summed signal then runs
    through the real extraction pipeline.
    """
    from .features import bandpass  # local import to keep module load light

    bands = DEFAULT_BANDS[: latents[0].shape[1]]
    if len(bands) != latents[0].shape[1]:
        raise ConfigurationError(
            f"raw mode supports at most {len(DEFAULT_BANDS)} bands, got {latents[0].shape[1]}"
        )
    channels = latents[0].shape[0]
    window = int(round(window_seconds * sample_rate))
    total = window * len(latents)

    signal = np.zeros((channels, total), dtype=np.float64)
    for f, band in enumerate(bands):
        noise = RawRecording(
            samples=rng.normal(size=(channels, total)), sample_rate=sample_rate
        )
        component = bandpass(noise, band).samples
        for seg_idx, latent in enumerate(latents):
            target_var = np.exp(2.0 * latent[:, f] - _LOG_2PI_E)
            chunk = component[:, seg_idx * window : (seg_idx + 1) * window]
            std = chunk.std(axis=1, keepdims=True)
            std[std == 0.0] = 1.0
            signal[:, seg_idx * window : (seg_idx + 1) * window] += (
                chunk / std * np.sqrt(target_var)[:, None]
            )

    recording = RawRecording(samples=signal, sample_rate=sample_rate)
    return extract_features(recording, bands, window_seconds)


# ---------------------------------------------------------------------------
# loading and alignment
# ---------------------------------------------------------------------------

def load_manifest(corpus_dir) -> CorpusManifest:
    path = Path(corpus_dir) / "manifest.json"
    if not path.exists():
        raise FormatError(f"no manifest at {path}")
    return CorpusManifest.from_json(path.read_text())


def load_samples(corpus_dir, refs=None) -> list[FeatureMatrix]:
    """Load samples with provenance and labels attached from the manifest."""
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    if refs is None:
        refs = manifest.sample_files
    out = []
    for ref in refs:
        matrix = load_sample(corpus_dir / ref.path)
        matrix.label = ref.label
        matrix.subject_id = ref.subject
        matrix.session_id = ref.session
        matrix.trial_id = ref.trial
        out.append(matrix)
    return out


def align_channels(matrix: FeatureMatrix, alignment: ChannelAlignment) -> FeatureMatrix:
    """Reorder, drop, or zero-fill channels so rows match the target list."""
    if matrix.channel_count != len(alignment.source_channels):
        raise AlignmentError(
            f"matrix has {matrix.channel_count} channels but alignment names "
            f"{len(alignment.source_channels)} source channels"
        )
    index = {name: i for i, name in enumerate(alignment.source_channels)}
    bands = matrix.band_count
    values = np.zeros((len(alignment.target_channels), bands), dtype=np.float64)
    for row, name in enumerate(alignment.target_channels):
        src = index.get(name)
        if src is not None:
            values[row] = matrix.values[src]
        elif alignment.policy == "drop_extra":
            raise AlignmentError(f"channel {name!r} missing from source under drop_extra")
    return FeatureMatrix(
        values=values,
        label=matrix.label,
        subject_id=matrix.subject_id,
        session_id=matrix.session_id,
        trial_id=matrix.trial_id,
    )


def make_alignment(source_channels, target_channels) -> ChannelAlignment:
    """Pick drop_extra or zero_fill from the channel sets (target is the standard)."""
    source = set(source_channels)
    target = set(target_channels)
    policy = "drop_extra" if target <= source else "zero_fill"
    return ChannelAlignment(
        source_channels=list(source_channels),
        target_channels=list(target_channels),
        policy=policy,
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def leave_trials_out_split(
    manifest: CorpusManifest, finetune_trials_per_session: int, seed: int
) -> tuple[list[SampleRef], list[SampleRef]]:
    """Disjoint per-(subject, session) trial partition; a trial never straddles sides.

    Selection is stratified by class within each session so both sides keep
    class coverage whenever counts permit.
    """
    trials = manifest.trials_per_session
    if not (1 <= finetune_trials_per_session < trials):
        raise ConfigurationError(
            f"need 1 <= finetune trials < {trials}, got {finetune_trials_per_session}"
        )

    by_session: dict[tuple[int, int], dict[int, int]] = {}
    for ref in manifest.sample_files:
        by_session.setdefault((ref.subject, ref.session), {})[ref.trial] = ref.label

    finetune_keys = set()
    for (subject, session), trial_labels in sorted(by_session.items()):
        rng = np.random.default_rng(np.random.SeedSequence([seed, subject, session, 0x7370]))
        by_class: dict[int, list[int]] = {}
        for trial, label in sorted(trial_labels.items()):
            by_class.setdefault(label, []).append(trial)
        classes = sorted(by_class)
        for cls in classes:
            rng.shuffle(by_class[cls])
        order = rng.permutation(len(classes))
        picked = 0
        cursor = 0
        while picked < finetune_trials_per_session:
            cls = classes[order[cursor % len(classes)]]
            if by_class[cls]:
                finetune_keys.add((subject, session, by_class[cls].pop()))
                picked += 1
            cursor += 1

    finetune, test = [], []
    for ref in manifest.sample_files:
        if (ref.subject, ref.session, ref.trial) in finetune_keys:
            finetune.append(ref)
        else:
            test.append(ref)
    return finetune, test


def subsample_labeled(refs: list[SampleRef], fraction: float, seed: int) -> list[SampleRef]:
    """Random subset of the given size with every present class retained."""
    if not (0.0 < fraction <= 1.0):
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(refs)
    classes = sorted({ref.label for ref in refs})
    count = int(round(fraction * len(refs)))
    if count < len(classes):
        raise ConfigurationError(
            f"fraction {fraction} keeps {count} samples, fewer than {len(classes)} classes"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7375]))
    by_class: dict[int, list[int]] = {}
    for idx, ref in enumerate(refs):
        by_class.setdefault(ref.label, []).append(idx)
    chosen = set()
    for cls in classes:
        chosen.add(int(rng.choice(by_class[cls])))
    remaining = [i for i in range(len(refs)) if i not in chosen]
    fill = count - len(chosen)
    if fill > 0:
        chosen.update(int(i) for i in rng.choice(remaining, size=fill, replace=False))
    return [refs[i] for i in sorted(chosen)]
