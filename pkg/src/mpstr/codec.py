"""Character inventory, special tokens, and string <-> token-id conversion.

Everything here is pure and stateless; a :class:`Charset` instance can be
shared freely across threads.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field


DEFAULT_CHARACTERS = string.digits + string.ascii_lowercase


class LengthViolation(ValueError):
    """Raised when a label is empty or longer than the configured maximum."""


@dataclass(frozen=True)
class SpecialTokens:
    """Token ids for [E], [B], [P], [M].

    The ids sit immediately after the charset in the embedding table.  [E]
    comes first so the output head's class space (characters + ending symbol)
    is a prefix of the embedding id space.
    """

    eos: int
    bos: int
    pad: int
    mask: int


@dataclass(frozen=True)
class LabelSequence:
    ids: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Charset:
    """Ordered character inventory: digits '0'-'9' then letters 'a'-'z'."""

    characters: str = DEFAULT_CHARACTERS
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.characters)) != len(self.characters):
            raise ValueError("charset contains duplicate characters")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.characters)})

    @property
    def size(self) -> int:
        return len(self.characters)

    @property
    def specials(self) -> SpecialTokens:
        n = self.size
        return SpecialTokens(eos=n, bos=n + 1, pad=n + 2, mask=n + 3)

    @property
    def num_embeddings(self) -> int:
        """Rows of the decoder embedding table (characters + 4 specials)."""
        return self.size + 4

    @property
    def num_classes(self) -> int:
        """Output head width: characters plus the ending symbol."""
        return self.size + 1

    def normalize_text(self, raw: str) -> str:
        """Lowercase and drop characters outside the inventory. Idempotent."""
        return "".join(c for c in raw.lower() if c in self._index)

    def encode(self, text: str, max_len: int) -> LabelSequence:
        """Map normalized text to character ids. No special tokens included."""
        if not 1 <= len(text) <= max_len:
            raise LengthViolation(
                f"label length {len(text)} outside [1, {max_len}]: {text!r}"
            )
        try:
            ids = tuple(self._index[c] for c in text)
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in charset") from None
        return LabelSequence(ids)

    def decode(self, ids) -> str:
        """Characters up to (excluding) the first ending symbol.

        `ids` are drawn from the output class space (characters + EOS);
        anything at or after the first EOS is discarded.
        """
        eos = self.specials.eos
        out = []
        for i in ids:
            i = int(i)
            if i == eos:
                break
            out.append(self.characters[i])
        return "".join(out)

    def save(self, path) -> None:
        """Single-line serialization so experiments reproduce byte-for-byte."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.characters + "\n")

    @classmethod
    def load(cls, path) -> "Charset":
        with open(path, encoding="utf-8") as f:
            return cls(f.readline().rstrip("\n"))
