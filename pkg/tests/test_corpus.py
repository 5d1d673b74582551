"""Corpus tests: binary format, generation determinism, continuity, splits."""
import json

import numpy as np
import pytest

from scmm import corpus
from scmm.corpus import ChannelAlignment, ContinuityProfile, SampleRef
from scmm.errors import AlignmentError, ConfigurationError, FormatError
from scmm.features import FeatureMatrix


def small_corpus(tmp_path, name="a", seed=0, rho=0.9, channels=6, mode="direct",
                 subjects=2, trials=6, segments=8, template_seed=None, noise=0.5):
    return corpus.generate_corpus(
        tmp_path / name,
        corpus_id=name,
        subjects=subjects,
        sessions_per_subject=1,
        trials_per_session=trials,
        segments_per_trial=segments,
        channel_count=channels,
        class_names=["neg", "neu", "pos"],
        profile=ContinuityProfile(ar_coefficient=rho, class_separation=1.0, noise_scale=noise),
        seed=seed,
        template_seed=template_seed,
        mode=mode,
    )


# ---------------------------------------------------------------------------
# sample file format
# ---------------------------------------------------------------------------

def test_store_load_roundtrip_values(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(62, 5))
    path = tmp_path / "x.scmm"
    corpus.store_sample(FeatureMatrix(values=values), path)
    loaded = corpus.load_sample(path)
    assert np.array_equal(loaded.values, values.astype(np.float32).astype(np.float64))


def test_store_load_store_bytes_identical(tmp_path):
    rng = np.random.default_rng(1)
    p1, p2 = tmp_path / "a.scmm", tmp_path / "b.scmm"
    corpus.store_sample(FeatureMatrix(values=rng.normal(size=(8, 5))), p1)
    corpus.store_sample(corpus.load_sample(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.scmm"
    good = tmp_path / "good.scmm"
    corpus.store_sample(FeatureMatrix(values=np.ones((2, 2))), good)
    path.write_bytes(b"NOPE" + good.read_bytes()[4:])
    with pytest.raises(FormatError, match="magic"):
        corpus.load_sample(path)


def test_load_rejects_bad_version(tmp_path):
    good = tmp_path / "good.scmm"
    corpus.store_sample(FeatureMatrix(values=np.ones((2, 2))), good)
    raw = bytearray(good.read_bytes())
    raw[4] = 99
    bad = tmp_path / "bad.scmm"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        corpus.load_sample(bad)


def test_load_truncated_payload_names_byte_counts(tmp_path):
    good = tmp_path / "good.scmm"
    corpus.store_sample(FeatureMatrix(values=np.ones((4, 5))), good)
    trunc = tmp_path / "trunc.scmm"
    trunc.write_bytes(good.read_bytes()[:-7])
    with pytest.raises(FormatError, match=r"expected 96 bytes, got 89"):
        corpus.load_sample(trunc)


def test_load_rejects_shape_overflow(tmp_path):
    import struct

    path = tmp_path / "huge.scmm"
    path.write_bytes(struct.pack("<4sIII", b"SCMM", 1, 2**20, 2**20))
    with pytest.raises(FormatError, match="implausible shape"):
        corpus.load_sample(path)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_generation_is_bit_identical_under_seed(tmp_path):
    m1 = small_corpus(tmp_path, "one", seed=7)
    m2 = small_corpus(tmp_path, "two", seed=7)
    for r1, r2 in zip(m1.sample_files, m2.sample_files):
        b1 = (tmp_path / "one" / r1.path).read_bytes()
        b2 = (tmp_path / "two" / r2.path).read_bytes()
        assert b1 == b2
    m3 = small_corpus(tmp_path, "three", seed=8)
    changed = any(
        (tmp_path / "one" / r1.path).read_bytes() != (tmp_path / "three" / r3.path).read_bytes()
        for r1, r3 in zip(m1.sample_files, m3.sample_files)
    )
    assert changed


def test_manifest_counts_and_roundtrip(tmp_path):
    manifest = small_corpus(tmp_path, "m")
    assert len(manifest.sample_files) == 2 * 1 * 6 * 8
    loaded = corpus.load_manifest(tmp_path / "m")
    assert loaded == manifest
    on_disk = {ref.path for ref in loaded.sample_files}
    existing = {f"samples/{p.name}" for p in (tmp_path / "m" / "samples").iterdir()}
    assert on_disk == existing


def _trial_similarity_stats(manifest, root):
    samples = corpus.load_samples(root)
    by_trial = {}
    for m in samples:
        by_trial.setdefault((m.subject_id, m.session_id, m.trial_id, m.label), []).append(m)
    adjacent, cross = [], []
    flat = {k: [x.values.reshape(-1) for x in sorted_v]
            for k, sorted_v in by_trial.items()}

    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    keys = list(flat)
    for key, vecs in flat.items():
        for a, b in zip(vecs, vecs[1:]):
            adjacent.append(cos(a, b))
    rng = np.random.default_rng(0)
    for _ in range(2000):
        k1, k2 = keys[rng.integers(len(keys))], keys[rng.integers(len(keys))]
        if k1[3] == k2[3]:
            continue
        v1 = flat[k1][rng.integers(len(flat[k1]))]
        v2 = flat[k2][rng.integers(len(flat[k2]))]
        cross.append(cos(v1, v2))
    return float(np.median(adjacent)), float(np.median(cross))


def test_continuity_profile_creates_adjacent_similarity_margin(tmp_path):
    # 4 x 9 trials x 29 transitions > 1000 adjacent pairs
    manifest = small_corpus(tmp_path, "cont", rho=0.9, subjects=4, trials=9, segments=30)
    adjacent, cross = _trial_similarity_stats(manifest, tmp_path / "cont")
    assert adjacent - cross >= 0.2


def test_rho_zero_adjacent_matches_distant_same_class(tmp_path):
    manifest = small_corpus(tmp_path, "iid", rho=0.0, subjects=3, trials=9, segments=12)
    samples = corpus.load_samples(tmp_path / "iid")
    by_trial = {}
    for m in samples:
        by_trial.setdefault((m.subject_id, m.trial_id), []).append(m.values.reshape(-1))

    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    adjacent, distant = [], []
    for vecs in by_trial.values():
        for a, b in zip(vecs, vecs[1:]):
            adjacent.append(cos(a, b))
        for a, b in zip(vecs, vecs[6:]):
            distant.append(cos(a, b))
    assert abs(np.mean(adjacent) - np.mean(distant)) < 0.05


def test_shared_template_seed_aligns_class_structure(tmp_path):
    wide = small_corpus(tmp_path, "wide", seed=1, channels=8, template_seed=77)
    narrow = small_corpus(tmp_path, "narrow", seed=2, channels=5, template_seed=77)
    assert wide.template_seed == narrow.template_seed == 77
    for k in range(3):
        t_wide = corpus.class_template(77, k, 2, wide.band_count)
        t_narrow = corpus.class_template(77, k, 2, narrow.band_count)
        assert np.array_equal(t_wide, t_narrow)


def test_raw_signal_mode_recovers_latent_features(tmp_path):
    manifest = small_corpus(
        tmp_path, "raw", mode="raw_signal", subjects=1, trials=2, segments=4, channels=2
    )
    direct = small_corpus(
        tmp_path, "direct", mode="direct", subjects=1, trials=2, segments=4, channels=2
    )
    raw_samples = corpus.load_samples(tmp_path / "raw")
    direct_samples = corpus.load_samples(tmp_path / "direct")
    assert all(np.isfinite(m.values).all() for m in raw_samples)
    # same seed, same latent model: the extracted features track the direct values
    errs = [
        np.abs(r.values - d.values).mean()
        for r, d in zip(raw_samples, direct_samples)
    ]
    assert np.median(errs) < 0.35


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def test_align_drop_extra_selects_rows_in_target_order():
    rng = np.random.default_rng(0)
    m = FeatureMatrix(values=rng.normal(size=(5, 3)))
    source = [f"ch{i:02d}" for i in range(5)]
    target = ["ch03", "ch01"]
    out = corpus.align_channels(m, ChannelAlignment(source, target, "drop_extra"))
    assert out.values.shape == (2, 3)
    assert np.array_equal(out.values[0], m.values[3])
    assert np.array_equal(out.values[1], m.values[1])


def test_align_zero_fill_pads_missing_channels():
    rng = np.random.default_rng(1)
    m = FeatureMatrix(values=rng.normal(size=(2, 4)))
    source = ["ch00", "ch01"]
    target = ["ch00", "ch01", "ch02", "ch03"]
    out = corpus.align_channels(m, ChannelAlignment(source, target, "zero_fill"))
    assert out.values.shape == (4, 4)
    assert np.array_equal(out.values[:2], m.values)
    assert np.all(out.values[2:] == 0.0)


def test_align_identity():
    m = FeatureMatrix(values=np.arange(6.0).reshape(2, 3))
    names = ["ch00", "ch01"]
    out = corpus.align_channels(m, ChannelAlignment(names, names, "drop_extra"))
    assert np.array_equal(out.values, m.values)


def test_alignment_invariants_enforced():
    with pytest.raises(AlignmentError):
        ChannelAlignment(["ch00"], ["ch00", "ch01"], "drop_extra")
    with pytest.raises(AlignmentError):
        ChannelAlignment(["ch00", "ch01"], ["ch00"], "zero_fill")
    m = FeatureMatrix(values=np.zeros((1, 2)))
    with pytest.raises(AlignmentError, match="names 2 source"):
        corpus.align_channels(m, ChannelAlignment(["ch00", "ch01"], ["ch00"], "drop_extra"))


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _split_manifest(trials=15, subjects=2, sessions=2, classes=3):
    refs = []
    for s in range(subjects):
        for e in range(sessions):
            for t in range(trials):
                for g in range(2):
                    refs.append(SampleRef(
                        path=f"samples/s{s}_e{e}_t{t}_g{g}.scmm",
                        subject=s, session=e, trial=t, segment=g,
                        label=t % classes,
                    ))
    return corpus.CorpusManifest(
        corpus_id="split",
        subjects=subjects,
        sessions_per_subject=sessions,
        trials_per_session=trials,
        segments_per_trial=2,
        channel_count=4,
        band_count=5,
        class_names=["a", "b", "c"][:classes],
        window_seconds=1.0,
        generator_seed=0,
        template_seed=0,
        generator_mode="direct",
        channel_names=[f"ch{i:02d}" for i in range(4)],
        continuity={},
        sample_files=refs,
    )


def test_leave_trials_out_counts_nine_of_fifteen():
    manifest = _split_manifest(trials=15)
    finetune, test = corpus.leave_trials_out_split(manifest, 9, seed=0)
    for s in range(manifest.subjects):
        for e in range(manifest.sessions_per_subject):
            ft = {r.trial for r in finetune if r.subject == s and r.session == e}
            te = {r.trial for r in test if r.subject == s and r.session == e}
            assert len(ft) == 9 and len(te) == 6
            assert ft | te == set(range(15)) and not ft & te


def test_leave_trials_out_counts_sixteen_of_twentyfour():
    manifest = _split_manifest(trials=24, classes=3)
    finetune, test = corpus.leave_trials_out_split(manifest, 16, seed=1)
    ft = {r.trial for r in finetune if r.subject == 0 and r.session == 0}
    te = {r.trial for r in test if r.subject == 0 and r.session == 0}
    assert len(ft) == 16 and len(te) == 8


def test_split_keeps_whole_trials_together():
    manifest = _split_manifest()
    finetune, test = corpus.leave_trials_out_split(manifest, 9, seed=3)
    ft_keys = {(r.subject, r.session, r.trial) for r in finetune}
    te_keys = {(r.subject, r.session, r.trial) for r in test}
    assert not ft_keys & te_keys
    assert len(finetune) + len(test) == len(manifest.sample_files)


def test_split_deterministic_and_seed_sensitive():
    manifest = _split_manifest()
    a1, _ = corpus.leave_trials_out_split(manifest, 9, seed=5)
    a2, _ = corpus.leave_trials_out_split(manifest, 9, seed=5)
    b, _ = corpus.leave_trials_out_split(manifest, 9, seed=6)
    assert a1 == a2
    assert a1 != b


def test_split_infeasible_counts_rejected():
    manifest = _split_manifest(trials=6)
    with pytest.raises(ConfigurationError):
        corpus.leave_trials_out_split(manifest, 6, seed=0)
    with pytest.raises(ConfigurationError):
        corpus.leave_trials_out_split(manifest, 0, seed=0)


def test_subsample_identity_and_exact_count():
    manifest = _split_manifest(trials=15, subjects=1, sessions=1)
    refs = manifest.sample_files  # 30 refs
    assert corpus.subsample_labeled(refs, 1.0, seed=0) == list(refs)
    reduced = corpus.subsample_labeled(refs, 0.2, seed=0)
    assert len(reduced) == 6


def test_subsample_exact_tenth_of_thousand():
    refs = [
        SampleRef(path=f"p{i}", subject=0, session=0, trial=i, segment=0, label=i % 4)
        for i in range(1000)
    ]
    reduced = corpus.subsample_labeled(refs, 0.10, seed=1)
    assert len(reduced) == 100


def test_subsample_keeps_every_class():
    refs = [
        SampleRef(path=f"p{i}", subject=0, session=0, trial=i, segment=0,
                  label=(0 if i < 97 else 1 + (i % 3)))
        for i in range(100)
    ]
    for seed in range(10):
        reduced = corpus.subsample_labeled(refs, 0.05, seed=seed)
        assert {r.label for r in reduced} == {0, 1, 2, 3}
        assert len(reduced) == 5


def test_subsample_starvation_rejected():
    refs = [
        SampleRef(path=f"p{i}", subject=0, session=0, trial=i, segment=0, label=i % 5)
        for i in range(100)
    ]
    with pytest.raises(ConfigurationError):
        corpus.subsample_labeled(refs, 0.01, seed=0)  # 1 sample < 5 classes


def test_manifest_json_is_valid_single_document(tmp_path):
    small_corpus(tmp_path, "doc")
    doc = json.loads((tmp_path / "doc" / "manifest.json").read_text())
    assert doc["corpus_id"] == "doc"
    assert len(doc["sample_files"]) == doc["subjects"] * doc["sessions_per_subject"] * \
        doc["trials_per_session"] * doc["segments_per_trial"]
