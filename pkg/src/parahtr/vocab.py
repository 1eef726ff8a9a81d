"""Character vocabularies for the decoder and the language model.

File format (UTF-8, ``\\n`` separated): the first line is a header naming
the kind and the special tokens in id order, e.g. ::

    #parahtr-vocab decoder <pad> <bos> <eos> <nl>

and each following line holds exactly one symbol (a space is a line with a
single space). Ids are dense from 0: specials first, then symbols in file
order. Newline characters never appear as symbols; the decoder spells them
with ``<nl>``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, NEWLINE, MASK, UNK = "<pad>", "<bos>", "<eos>", "<nl>", "<mask>", "<unk>"
DECODER_SPECIALS = (PAD, BOS, EOS, NEWLINE)
LM_SPECIALS = (PAD, BOS, EOS, MASK, UNK)
_HEADER = "#parahtr-vocab"


class Vocabulary:
    kind = "decoder"
    specials: tuple[str, ...] = DECODER_SPECIALS

    def __init__(self, chars: Iterable[str]):
        chars = list(dict.fromkeys(chars))
        for c in chars:
            if len(c) != 1 or c == "\n":
                raise ValueError(f"invalid vocabulary symbol {c!r}")
        self.symbols: list[str] = list(self.specials) + chars
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.special_ids = frozenset(range(len(self.specials)))

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        chars = sorted({c for t in texts for c in t if c != "\n"})
        return cls(chars)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.symbols == other.symbols

    # symbol-level bijection
    def encode(self, symbols: Sequence[str]) -> list[int]:
        return [self.index[s] for s in symbols]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]

    # text-level helpers
    @property
    def newline_id(self) -> int:
        return self.index[NEWLINE]

    def encode_text(self, text: str, bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.bos_id] if bos else []
        for c in text:
            if c == "\n":
                ids.append(self.newline_id)
            elif c in self.index:
                ids.append(self.index[c])
            else:
                raise KeyError(f"character {c!r} not in vocabulary")
        if eos:
            ids.append(self.eos_id)
        return ids

    def decode_text(self, ids: Sequence[int]) -> str:
        """Render ids as text, dropping PAD/BOS/EOS and spelling NEWLINE as '\\n'."""
        out = []
        for i in ids:
            s = self.symbols[i]
            if s == NEWLINE:
                out.append("\n")
            elif i not in self.special_ids:
                out.append(s)
        return "".join(out)

    # file format
    def dumps(self) -> str:
        header = " ".join([_HEADER, self.kind, *self.specials])
        return "\n".join([header, *self.symbols[len(self.specials):]]) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        head = lines[0].split(" ")
        if head[0] != _HEADER or head[1] != cls.kind or tuple(head[2:]) != cls.specials:
            raise ValueError(f"bad vocabulary header {lines[0]!r} for {cls.kind}")
        return cls(lines[1:])

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


class LmTokenizer(Vocabulary):
    """Character tokenizer for the masked LM; unknown characters map to ``<unk>``."""

    kind = "lm"
    specials = LM_SPECIALS

    def __init__(self, chars: Iterable[str]):
        super().__init__(chars)
        self.mask_id = self.index[MASK]
        self.unk_id = self.index[UNK]

    @property
    def newline_id(self) -> int:
        raise AttributeError("the LM tokenizer works on single lines")

    def encode_text(self, text: str, bos: bool = True, eos: bool = True) -> list[int]:
        if "\n" in text:
            raise ValueError("LM tokenizer encodes one line at a time")
        ids = [self.bos_id] if bos else []
        ids.extend(self.index.get(c, self.unk_id) for c in text)
        if eos:
            ids.append(self.eos_id)
        return ids

    def decode_text(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids if i not in self.special_ids or i == self.unk_id
                       ).replace(UNK, "�")
