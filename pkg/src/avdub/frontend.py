"""Text normalisation and lexicon-based grapheme-to-phoneme conversion."""
from dataclasses import dataclass, field
from importlib import resources
import re
import typing as tp

from .errors import ValidationError

PAD, UNK, SEP = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<sep>")

# ARPAbet inventory without stress marks
PHONES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY",
    "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
VOWELS = frozenset({"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY",
                    "IH", "IY", "OW", "OY", "UH", "UW"})
VOICELESS = frozenset({"CH", "F", "HH", "K", "P", "S", "SH", "T", "TH"})

LETTER_FALLBACK = {
    "a": ("AE",), "b": ("B",), "c": ("K",), "d": ("D",), "e": ("EH",), "f": ("F",),
    "g": ("G",), "h": ("HH",), "i": ("IH",), "j": ("JH",), "k": ("K",), "l": ("L",),
    "m": ("M",), "n": ("N",), "o": ("AA",), "p": ("P",), "q": ("K",), "r": ("R",),
    "s": ("S",), "t": ("T",), "u": ("AH",), "v": ("V",), "w": ("W",), "x": ("K", "S"),
    "y": ("Y",), "z": ("Z",),
}


@dataclass(frozen=True)
class PhonemeVocab:
    symbols: tp.Tuple[str, ...] = RESERVED + PHONES
    index: tp.Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.symbols[:3]) != RESERVED:
            raise ValidationError(f"first three symbols must be {RESERVED}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValidationError("phoneme symbols must be unique")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self.index.get(symbol, UNK)

    def ids(self, symbols: tp.Iterable[str]) -> tp.List[int]:
        return [self.id(s) for s in symbols]

    def symbol(self, idx: int) -> str:
        return self.symbols[idx]

    def is_vowel(self, idx: int) -> bool:
        return self.symbols[idx] in VOWELS

    def is_voiceless(self, idx: int) -> bool:
        return self.symbols[idx] in VOICELESS


class Lexicon(dict):
    """Lowercase word -> tuple of phoneme symbols."""

    @classmethod
    def from_lines(cls, lines: tp.Iterable[str], vocab: tp.Optional[PhonemeVocab] = None) -> "Lexicon":
        vocab = vocab or PhonemeVocab()
        lex = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            try:
                word, pron = line.split("\t")
            except ValueError:
                raise ValidationError(f"lexicon line {lineno}: expected 'word<TAB>phones'") from None
            phones = tuple(pron.split())
            bad = [p for p in phones if p not in vocab.index or vocab.index[p] < len(RESERVED)]
            if bad or not phones:
                raise ValidationError(f"lexicon line {lineno}: unknown phonemes {bad}")
            lex[word.lower()] = phones
        return lex

    @classmethod
    def load(cls, path: str, vocab: tp.Optional[PhonemeVocab] = None) -> "Lexicon":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(f, vocab)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word in sorted(self):
                f.write(f"{word}\t{' '.join(self[word])}\n")


def bundled_lexicon(vocab: tp.Optional[PhonemeVocab] = None) -> Lexicon:
    text = resources.files("avdub").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
    return Lexicon.from_lines(text.splitlines(), vocab)


_APOSTROPHES = str.maketrans({"’": "'", "‘": "'"})
# letters/digits, with apostrophes kept only between word characters
_TOKEN = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


def normalize(text: str) -> str:
    """Lowercase, strip punctuation to word boundaries, collapse whitespace.

    >>> normalize("Hello,  WORLD!")
    'hello world'
    """
    return " ".join(_TOKEN.findall(text.translate(_APOSTROPHES).lower()))


def word_phones(word: str, lexicon: tp.Mapping[str, tp.Sequence[str]]) -> tp.List[str]:
    if word in lexicon:
        return list(lexicon[word])
    out: tp.List[str] = []
    for ch in word:
        if ch == "'":
            continue
        out.extend(LETTER_FALLBACK.get(ch, (RESERVED[UNK],)))
    return out


def g2p(text: str, lexicon: tp.Mapping[str, tp.Sequence[str]],
        vocab: tp.Optional[PhonemeVocab] = None) -> tp.List[int]:
    """Phoneme ids for normalised ``text``, words separated by SEP."""
    vocab = vocab or PhonemeVocab()
    ids: tp.List[int] = []
    for i, word in enumerate(text.split()):
        if i:
            ids.append(SEP)
        ids.extend(vocab.id(p) for p in word_phones(word, lexicon))
    return ids


def inverse_lexicon(lexicon: tp.Mapping[str, tp.Sequence[str]]) -> tp.Dict[tp.Tuple[str, ...], str]:
    """Pronunciation -> word. Homophones resolve to the alphabetically first word."""
    inv: tp.Dict[tp.Tuple[str, ...], str] = {}
    for word in sorted(lexicon):
        inv.setdefault(tuple(lexicon[word]), word)
    return inv
