"""Word vocabulary with reserved special tokens."""

from collections import Counter

from ..errors import ContractError, VocabularyError
from .text import tokenize

PAD, START, END, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<start>", "<end>", "<unk>")


class Vocabulary:
    """Bijection between tokens and ids; ids 0-3 are PAD, START, END, UNK."""

    def __init__(self, words, min_count=1):
        self.min_count = min_count
        self.itos = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate words in vocabulary")

    @classmethod
    def build(cls, captions, min_count=1):
        """Words with count >= min_count, most frequent first, ties alphabetical."""
        captions = list(captions)
        if not captions:
            raise ContractError("cannot build a vocabulary from an empty corpus")
        counts = Counter(t for c in captions for t in tokenize(c))
        kept = [w for w, n in counts.items() if n >= min_count and w not in SPECIALS]
        kept.sort(key=lambda w: (-counts[w], w))
        return cls(kept, min_count)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def encode(self, text):
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids):
        out = []
        for i in ids:
            if not 0 <= i < len(self.itos):
                raise VocabularyError(f"token id {i} outside vocabulary of size {len(self.itos)}")
            if i in (PAD, START, END):
                continue
            out.append(self.itos[i])
        return " ".join(out)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# min_count={self.min_count}\n")
            for w in self.itos[len(SPECIALS):]:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        min_count = 1
        words = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# min_count="):
                    min_count = int(line.split("=", 1)[1])
                elif line:
                    words.append(line)
        return cls(words, min_count)
