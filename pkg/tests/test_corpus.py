import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accommodation import corpus as cp
from accommodation.corpus import (
    Corpus,
    CorpusFormatError,
    GenerationError,
    Inventory,
    TrajectoryParams,
    Utterance,
    gen_corpus,
    gen_inventory,
    gen_trajectory,
    read_corpus,
    write_corpus,
)
from accommodation.plant import speaker, synthesize_utterance
from accommodation.rng import RngStream

from oracles import gaussian_kernel_reference


def same_corpus(a: Corpus, b: Corpus):
    assert (a.seed, a.n, a.speaker_id, a.lam) == (b.seed, b.n, b.speaker_id, b.lam)
    assert a.split == b.split
    assert len(a.utterances) == len(b.utterances)
    for u, v in zip(a.utterances, b.utterances):
        assert (u.id, u.speaker_id, u.segments) == (v.id, v.speaker_id, v.segments)
        assert np.array_equal(u.frames, v.frames)
        assert (u.artic is None and v.artic is None) or np.array_equal(u.artic, v.artic)


@pytest.fixture(scope="module")
def corpus100():
    return gen_corpus(speaker("RS"), 100, seed=7)


# -- inventory -------------------------------------------------------------------


def test_inventory_deterministic_and_separated():
    a, b = gen_inventory(7), gen_inventory(7)
    assert np.array_equal(a.targets, b.targets)
    assert a.targets.shape == (8, 6) and np.all(np.abs(a.targets) <= 0.9)
    frames = synthesize_utterance(a.targets, speaker("RS"))
    d = np.linalg.norm(frames[:, None] - frames[None, :], axis=-1)
    assert d[np.triu_indices(8, 1)].min() >= 0.5
    assert not np.array_equal(gen_inventory(8).targets, a.targets)


def test_inventory_single_target():
    inv = gen_inventory(3, n_targets=1)
    assert len(inv) == 1


def test_inventory_unattainable_separation_raises(monkeypatch):
    monkeypatch.setattr(cp, "MIN_SEPARATION", 1e6)
    with pytest.raises(GenerationError):
        gen_inventory(0, n_targets=2)


# -- smoothing and trajectories -------------------------------------------------


def test_kernel_matches_reference():
    np.testing.assert_allclose(cp.gaussian_kernel(), gaussian_kernel_reference(), rtol=1e-15)
    assert cp.gaussian_kernel().sum() == pytest.approx(1.0, abs=1e-15)


def test_smoothing_constant_is_identity():
    x = np.full((30, 6), 0.37)
    np.testing.assert_allclose(cp.smooth(x), x, rtol=1e-15)


def test_smoothing_unit_step_midpoint():
    x = np.zeros((60, 1))
    x[30:] = 1.0
    y = cp.smooth(x)[:, 0]
    # The boundary lies between frames 29 and 30; by symmetry they average to one half.
    assert (y[29] + y[30]) / 2 == pytest.approx(0.5, abs=0.01)
    # Frame 30 sits half a frame past the boundary: close to the Gaussian CDF at 0.5/sigma.
    phi = 0.5 * (1 + math.erf(0.5 / 3.0 / math.sqrt(2)))
    assert y[30] == pytest.approx(phi, abs=0.01)
    assert np.all(np.diff(y) >= 0)


def test_single_segment_is_constant():
    inv = gen_inventory(7)
    params = TrajectoryParams(min_segments=1, max_segments=1)
    artic, segments = gen_trajectory(inv, RngStream(1, "t"), params)
    (label, start, end), = segments
    assert start == 0 and end == artic.shape[0]
    np.testing.assert_allclose(artic, np.repeat(inv.targets[label][None], end, axis=0), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63))
def test_trajectory_contracts(seed):
    inv = gen_inventory(7)
    artic, segments = gen_trajectory(inv, RngStream(seed, "traj/0"))
    assert np.all(np.abs(artic) <= 0.98)
    assert 3 <= len(segments) <= 8
    pos = 0
    for label, start, end in segments:
        assert 0 <= label < 8 and start == pos and 8 <= end - start <= 20
        pos = end
    assert pos == artic.shape[0]


def test_clamp_applies_to_extreme_targets():
    inv = Inventory(np.array([[1.0, -1.0, 0.99, 0.0, 0.0, 0.0]]))
    artic, _ = gen_trajectory(inv, RngStream(0, "t"))
    assert artic.max() == 0.98 and artic.min() == -0.98


def test_trajectories_are_smooth(corpus100):
    worst = max(np.abs(np.diff(u.artic, axis=0)).max() for u in corpus100.utterances)
    assert worst <= 0.35


# -- splits ----------------------------------------------------------------------


@pytest.mark.parametrize("n,sizes", [(100, (64, 16, 20)), (6, (4, 1, 1)), (7, (5, 1, 1)), (26, (17, 4, 5))])
def test_split_sizes(n, sizes):
    assert cp.split_sizes(n) == sizes


@pytest.mark.parametrize("n", [0, 3, 5])
def test_split_would_be_empty(n):
    with pytest.raises(GenerationError, match="split would be empty"):
        cp.make_split([cp.utterance_id(i) for i in range(n)], 0)


def test_split_disjoint_and_complete(corpus100):
    s = corpus100.split
    assert (len(s.train), len(s.val), len(s.test)) == (64, 16, 20)
    ids = set(s.train) | set(s.val) | set(s.test)
    assert len(ids) == 100 and ids == {u.id for u in corpus100.utterances}
    assert [len(corpus100.subset(k)) for k in ("train", "val", "test")] == [64, 16, 20]


def test_split_depends_on_seed():
    ids = [cp.utterance_id(i) for i in range(50)]
    assert cp.make_split(ids, 1) == cp.make_split(ids, 1)
    assert cp.make_split(ids, 1) != cp.make_split(ids, 2)


# -- corpora ---------------------------------------------------------------------


def test_cross_speaker_alignment():
    rs = gen_corpus(speaker("RS"), 10, seed=4)
    s1 = gen_corpus(speaker("S1"), 10, seed=4)
    assert rs.split == s1.split
    for u, v in zip(rs.utterances, s1.utterances):
        assert np.array_equal(u.artic, v.artic) and u.segments == v.segments
        assert not np.array_equal(u.frames, v.frames)
        assert v.speaker_id == "S1"
        np.testing.assert_array_equal(v.frames, synthesize_utterance(v.artic, speaker("S1")))


def test_utterance_validation():
    frames = np.zeros((5, 18))
    with pytest.raises(ValueError):
        Utterance("u", "RS", np.zeros((0, 18)))
    with pytest.raises(ValueError):
        Utterance("u", "RS", frames, artic=np.zeros((4, 6)))
    with pytest.raises(ValueError):
        Utterance("u", "RS", frames, segments=[(0, 0, 2), (1, 3, 5)])
    with pytest.raises(ValueError):
        Utterance("u", "RS", frames, segments=[(0, 0, 4)])
    assert len(Utterance("u", "RS", frames, segments=[(0, 0, 2), (1, 2, 5)])) == 5


# -- serialization ---------------------------------------------------------------


def test_round_trip(tmp_path, small_corpus):
    path = tmp_path / "c.corpus"
    write_corpus(small_corpus, path)
    same_corpus(read_corpus(path), small_corpus)


def test_header_line(tmp_path, small_corpus):
    import json

    path = tmp_path / "c.corpus"
    write_corpus(small_corpus, path)
    header = json.loads(path.read_text().splitlines()[0])
    assert header == {"format_version": 1, "seed": 3, "n": 20, "speaker": "RS", "lambda": 1.0}


def test_round_trip_without_optional_fields(tmp_path):
    c = Corpus(1, 6, "S2", 1.12, [Utterance(cp.utterance_id(i), "S2", np.full((3, 18), i + 0.1)) for i in range(6)])
    c.split = cp.make_split([u.id for u in c.utterances], 1)
    write_corpus(c, tmp_path / "x")
    same_corpus(read_corpus(tmp_path / "x"), c)


def test_regeneration_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        write_corpus(gen_corpus(speaker("S1"), 12, seed=5), tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_empty_corpus(tmp_path):
    write_corpus(Corpus(0, 0, "RS", 1.0), tmp_path / "e")
    c = read_corpus(tmp_path / "e")
    assert c.utterances == [] and c.n == 0
    (tmp_path / "blank").write_text("")
    assert read_corpus(tmp_path / "blank").utterances == []


def test_truncated_line_names_the_line(tmp_path, small_corpus):
    path = tmp_path / "c.corpus"
    write_corpus(small_corpus, path)
    lines = path.read_text().splitlines()
    lines[4] = lines[4][: len(lines[4]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError, match="line 5"):
        read_corpus(path)


def test_bad_header_and_wrong_width(tmp_path, small_corpus):
    path = tmp_path / "c.corpus"
    path.write_text('{"format_version": 2, "seed": 0, "n": 0, "speaker": "RS", "lambda": 1}\n')
    with pytest.raises(CorpusFormatError, match="line 1"):
        read_corpus(path)
    write_corpus(small_corpus, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace('"frames":[[', '"frames":[[0.5,', 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError, match="line 3"):
        read_corpus(path)


def test_missing_records_detected(tmp_path, small_corpus):
    path = tmp_path / "c.corpus"
    write_corpus(small_corpus, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(CorpusFormatError, match="n=20"):
        read_corpus(path)


def test_floats_survive_text(tmp_path):
    x = np.array([[0.1, 1 / 3, -2.5e-300, 1e300, np.nextafter(1.0, 2.0), -0.0] * 3])
    c = Corpus(0, 1, "RS", 1.0, [Utterance("u", "RS", x)])
    write_corpus(c, tmp_path / "f")
    text = (tmp_path / "f").read_text().splitlines()
    import json

    back = np.array(json.loads(text[1])["frames"])
    assert np.array_equal(back, x)
