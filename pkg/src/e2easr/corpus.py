"""Kaldi-style data directories, character vocabularies and a synthetic corpus.

The synthetic corpus stands in for real audio: each character owns a fixed
random feature template, and an utterance is its characters' templates
repeated for a random number of frames plus Gaussian noise.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .frontend import FeatureKind, FeatureMatrix, read_feat, write_feat

# Four punctuation/space units plus three noise tags, each a single unit.
DEFAULT_AUX_UNITS: Tuple[str, ...] = (" ", "'", "-", ".", "[noise]", "[laughs]", "[inaudible]")
BLANK_SYMBOL = "<blank>"
START_SYMBOL = "<s>"


class DataDirError(ValueError):
    pass


def _read_kv(path: Path) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(maxsplit=1)
        key = parts[0]
        if key in out:
            raise DataDirError(f"{path}:{lineno}: duplicate utterance id {key!r}")
        out[key] = parts[1] if len(parts) > 1 else ""
    return out


def write_kv(path: Union[str, Path], mapping: Dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(mapping):
            f.write(f"{key} {mapping[key]}\n")


@dataclass
class DataDir:
    wav_scp: Dict[str, str]
    text: Dict[str, str]
    root: Optional[Path] = None

    @property
    def utt_ids(self) -> List[str]:
        return sorted(self.wav_scp)

    def __len__(self) -> int:
        return len(self.wav_scp)

    def audio_path(self, utt_id: str) -> Path:
        p = Path(self.wav_scp[utt_id])
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


def load_data_dir(path: Union[str, Path], check_audio: bool = True) -> DataDir:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    for name in ("wav.scp", "text"):
        if not (root / name).is_file():
            raise FileNotFoundError(f"{root / name} is missing")
    wav = _read_kv(root / "wav.scp")
    text = _read_kv(root / "text")
    missing_audio = sorted(set(text) - set(wav))
    missing_text = sorted(set(wav) - set(text))
    if missing_audio:
        raise DataDirError(f"utterances with text but no audio: {', '.join(missing_audio)}")
    if missing_text:
        raise DataDirError(f"utterances with audio but no text: {', '.join(missing_text)}")
    d = DataDir(dict(sorted(wav.items())), dict(sorted(text.items())), root)
    if check_audio:
        for utt in d.utt_ids:
            p = d.audio_path(utt)
            if not p.is_file():
                raise DataDirError(f"{utt}: unreadable audio {p}")
    return d


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Units indexed densely: blank is 0, units are 1..K, the start symbol is K+1.

    Output layers have ``num_outputs = K + 1`` entries. Attention decoders and
    the LM reuse slot 0 as end-of-sequence.
    """

    units: List[str]
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.units)) != len(self.units):
            raise ValueError("duplicate units in vocabulary")
        self._index = {u: i + 1 for i, u in enumerate(self.units)}

    blank_id = 0
    eos_id = 0

    @property
    def start_id(self) -> int:
        return len(self.units) + 1

    @property
    def num_outputs(self) -> int:
        return len(self.units) + 1

    def __len__(self) -> int:
        return len(self.units)

    def index(self, unit: str) -> int:
        try:
            return self._index[unit]
        except KeyError:
            raise KeyError(f"unit {unit!r} not in vocabulary") from None

    def tokenize(self, text: str) -> List[str]:
        return _split_units(text, self.units)

    def encode(self, text: str) -> List[int]:
        return [self.index(u) for u in self.tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.units[i - 1] for i in ids if 0 < i <= len(self.units))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(u + "\n" for u in self.units), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)


def _split_units(text: str, aux: Sequence[str]) -> List[str]:
    multi = sorted((u for u in aux if len(u) > 1), key=len, reverse=True)
    out, i = [], 0
    while i < len(text):
        for u in multi:
            if text.startswith(u, i):
                out.append(u)
                i += len(u)
                break
        else:
            out.append(text[i])
            i += 1
    return out


def build_vocabulary(texts: Iterable[str], aux_units: Sequence[str] = DEFAULT_AUX_UNITS) -> Vocabulary:
    """Observed non-auxiliary characters (sorted) followed by ``aux_units`` in order."""
    texts = list(texts)
    if not texts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    aux = list(dict.fromkeys(aux_units))
    observed = set()
    for t in texts:
        observed.update(_split_units(t, aux))
    letters = sorted(observed - set(aux))
    return Vocabulary(letters + aux)


def chime_vocabulary() -> Vocabulary:
    """26 lowercase letters plus the seven default auxiliary units (33 units)."""
    return build_vocabulary([string.ascii_lowercase], DEFAULT_AUX_UNITS)


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticSpec:
    alphabet: str = "abcdefgh"
    num_utterances: int = 600
    length_range: Tuple[int, int] = (3, 8)
    frames_per_char: Tuple[int, int] = (3, 8)
    feat_dim: int = 20
    seed: int = 0
    noise: float = 0.3
    # Adjacent repeats would be indistinguishable from one long character.
    allow_repeats: bool = False

    def validate(self) -> None:
        if not self.alphabet:
            raise ValueError("alphabet must be non-empty")
        for lo, hi in (self.length_range, self.frames_per_char):
            if not 0 < lo <= hi:
                raise ValueError(f"invalid range ({lo}, {hi})")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if len(self.alphabet) < 2 and not self.allow_repeats and self.length_range[1] > 1:
            raise ValueError("single-letter alphabet needs allow_repeats for length > 1")


@dataclass
class Utterance:
    utt_id: str
    text: str
    features: FeatureMatrix


def synthetic_templates(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    return rng.standard_normal((len(spec.alphabet), spec.feat_dim))


def generate_synthetic_corpus(spec: SyntheticSpec, prefix: str = "synth") -> List[Utterance]:
    spec.validate()
    templates = synthetic_templates(spec)
    rng = np.random.default_rng([spec.seed, 1])
    width = len(str(max(spec.num_utterances - 1, 0)))
    out = []
    for n in range(spec.num_utterances):
        length = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        chars: List[int] = []
        for _ in range(length):
            choices = [i for i in range(len(spec.alphabet)) if spec.allow_repeats or not chars or i != chars[-1]]
            chars.append(int(choices[rng.integers(0, len(choices))]))
        blocks = []
        for c in chars:
            reps = int(rng.integers(spec.frames_per_char[0], spec.frames_per_char[1] + 1))
            blocks.append(np.repeat(templates[c][None, :], reps, axis=0))
        frames = np.concatenate(blocks, axis=0)
        if spec.noise > 0:
            frames = frames + spec.noise * rng.standard_normal(frames.shape)
        text = "".join(spec.alphabet[c] for c in chars)
        feats = FeatureMatrix(frames.astype(np.float32), feature_kind=FeatureKind.SYNTHETIC)
        out.append(Utterance(f"{prefix}{n:0{width}d}", text, feats))
    return out


def save_corpus(utts: Sequence[Utterance], out_dir: Union[str, Path]) -> None:
    """Write ``feats/<id>.feat``, a ``feats.scp`` manifest and a ``text`` file."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    scp, text = {}, {}
    for u in utts:
        rel = f"feats/{u.utt_id}.feat"
        write_feat(out / rel, u.features)
        scp[u.utt_id] = rel
        text[u.utt_id] = u.text
    write_kv(out / "feats.scp", scp)
    write_kv(out / "text", text)


def load_corpus(in_dir: Union[str, Path], feature_kind=FeatureKind.SYNTHETIC) -> List[Utterance]:
    root = Path(in_dir)
    if not (root / "feats.scp").is_file():
        raise FileNotFoundError(f"{root / 'feats.scp'} is missing")
    scp = _read_kv(root / "feats.scp")
    text = _read_kv(root / "text") if (root / "text").is_file() else {}
    out = []
    for utt in sorted(scp):
        p = Path(scp[utt])
        feats = read_feat(p if p.is_absolute() else root / p, feature_kind)
        out.append(Utterance(utt, text.get(utt, ""), feats))
    return out
