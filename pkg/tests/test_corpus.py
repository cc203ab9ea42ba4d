import numpy as np
import pytest

from e2easr import corpus
from e2easr.frontend import Waveform, write_wav


@pytest.fixture
def data_dir(tmp_path):
    for utt in ("u1", "u2"):
        write_wav(tmp_path / f"{utt}.wav", Waveform(np.zeros(4000), 16000))
    (tmp_path / "wav.scp").write_text("u2 u2.wav\nu1 u1.wav\n")
    (tmp_path / "text").write_text("u1 hello there\nu2 [noise] yes\n")
    return tmp_path


def test_load_data_dir(data_dir):
    d = corpus.load_data_dir(data_dir)
    assert len(d) == 2 and d.utt_ids == ["u1", "u2"]
    assert d.text["u1"] == "hello there"


def test_duplicate_id_is_named(data_dir):
    (data_dir / "text").write_text("u1 a\nu1 b\nu2 c\n")
    with pytest.raises(corpus.DataDirError, match="u1"):
        corpus.load_data_dir(data_dir)


def test_dangling_text_id(data_dir):
    (data_dir / "text").write_text("u1 a\nu2 b\nu3 c\n")
    with pytest.raises(corpus.DataDirError, match="u3"):
        corpus.load_data_dir(data_dir)


def test_unreadable_audio(data_dir):
    (data_dir / "u2.wav").unlink()
    with pytest.raises(corpus.DataDirError, match="u2"):
        corpus.load_data_dir(data_dir)


def test_chime_vocabulary_has_33_units():
    v = corpus.chime_vocabulary()
    assert len(v) == 33
    assert v.num_outputs == 34
    assert v.blank_id == 0 and v.start_id == 34


def test_small_vocabulary():
    v = corpus.build_vocabulary(["aba"], [" "])
    assert v.units == ["a", "b", " "]
    assert v.encode("ab a") == [1, 2, 3, 1]
    assert v.decode([1, 0, 2]) == "ab"
    with pytest.raises(ValueError):
        corpus.build_vocabulary([])


def test_vocabulary_tokenizes_noise_tags(tmp_path):
    v = corpus.build_vocabulary(["[noise] ok"])
    assert v.tokenize("[noise] ok") == ["[noise]", " ", "o", "k"]
    v.save(tmp_path / "a")
    corpus.build_vocabulary(["[noise] ok"]).save(tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert corpus.Vocabulary.load(tmp_path / "a").units == v.units


def test_synthetic_single_char_no_noise():
    spec = corpus.SyntheticSpec(alphabet="a", num_utterances=1, length_range=(1, 1),
                                frames_per_char=(4, 4), noise=0.0)
    (u,) = corpus.generate_synthetic_corpus(spec)
    tmpl = corpus.synthetic_templates(spec)[0].astype(np.float32)
    assert u.text == "a"
    assert u.features.num_frames == 4
    assert np.all(u.features.frames == tmpl[None, :])


def test_synthetic_is_deterministic():
    spec = corpus.SyntheticSpec(num_utterances=20, seed=3)
    a, b = corpus.generate_synthetic_corpus(spec), corpus.generate_synthetic_corpus(spec)
    assert [u.text for u in a] == [u.text for u in b]
    assert all(np.array_equal(x.features.frames, y.features.frames) for x, y in zip(a, b))


def test_synthetic_has_no_adjacent_repeats_and_respects_ranges():
    spec = corpus.SyntheticSpec(num_utterances=50)
    for u in corpus.generate_synthetic_corpus(spec):
        assert 3 <= len(u.text) <= 8
        assert all(x != y for x, y in zip(u.text, u.text[1:]))
        assert 3 * len(u.text) <= u.features.num_frames <= 8 * len(u.text)


def test_template_separation():
    spec = corpus.SyntheticSpec()
    tm = corpus.synthetic_templates(spec)
    d = [np.linalg.norm(tm[i] - tm[j]) for i in range(len(tm)) for j in range(i + 1, len(tm))]
    assert np.mean(d) > 5 * spec.noise


def test_corpus_round_trip(tmp_path):
    utts = corpus.generate_synthetic_corpus(corpus.SyntheticSpec(num_utterances=5))
    corpus.save_corpus(utts, tmp_path)
    back = corpus.load_corpus(tmp_path)
    assert [u.utt_id for u in back] == [u.utt_id for u in utts]
    assert [u.text for u in back] == [u.text for u in utts]
    assert all(np.array_equal(x.features.frames, y.features.frames) for x, y in zip(back, utts))
