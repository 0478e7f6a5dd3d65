# Core/vocabulary.py

"""
Word-level tokenizer and the Vocabulary used by every model component.

Tokens are words (runs of letters/digits/underscore), single punctuation
characters, and the reserved table markers. Each token keeps its character span
so callers can recover exact substrings of the source text.
"""
import re
import json
import hashlib
from typing import Dict, Iterable, List, Sequence, Tuple

from Utils.log_utils import get_logger, DEBUG_L2

logger = get_logger()

# ─── Reserved symbols ───
HEAD_MARKER = "[HEAD]"
ROW_MARKER = "[ROW]"
COL_SEPARATOR = "|"
CELL_DELIMITER = "||"
RESERVED_MARKERS = (HEAD_MARKER, ROW_MARKER, CELL_DELIMITER, COL_SEPARATOR)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOA_TOKEN = "<boa>"
EOA_TOKEN = "<eoa>"

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOA_TOKEN, EOA_TOKEN,
                  HEAD_MARKER, ROW_MARKER, COL_SEPARATOR, CELL_DELIMITER)

_TOKEN_PATTERN = re.compile(r"\[HEAD\]|\[ROW\]|\|\||\||\w+|[^\w\s]")

# Punctuation that is written without surrounding spaces when detokenizing
_GLUE_TOKENS = frozenset({"-", "/", ".", ",", ":", "+", "%", "'", "$"})


def tokenize_with_spans(text: str) -> List[Tuple[str, int, int]]:
    """Split text into (token, start, end) triples."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_PATTERN.finditer(text)]


def tokenize_text(text: str) -> List[str]:
    return [tok for tok, _, _ in tokenize_with_spans(text)]


def detokenize(tokens: Sequence[str]) -> str:
    """Join word tokens back into text; glue punctuation attaches to both neighbours."""
    out = ""
    previous = None
    for tok in tokens:
        if previous is None or tok in _GLUE_TOKENS or previous in _GLUE_TOKENS:
            out += tok
        else:
            out += " " + tok
        previous = tok
    return out


class Vocabulary:
    """Dense, stable token <-> id mapping with the special ids fixed first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: List[str] = []
        self.token_to_id: Dict[str, int] = {}
        for tok in SPECIAL_TOKENS:
            self._add(tok)
        for tok in tokens:
            self._add(tok)
        self.unk_count = 0

    def _add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        """Build from an iterable of raw strings; token order is first occurrence."""
        vocab = cls()
        for text in texts:
            for tok in tokenize_text(text):
                vocab._add(tok)
        logger.debug_at_level(DEBUG_L2, "Vocabulary", f"Built vocabulary with {len(vocab)} entries")
        return vocab

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def boa_id(self) -> int:
        return self.token_to_id[BOA_TOKEN]

    @property
    def eoa_id(self) -> int:
        return self.token_to_id[EOA_TOKEN]

    def encode_tokens(self, tokens: Sequence[str]) -> List[int]:
        ids = []
        for tok in tokens:
            idx = self.token_to_id.get(tok)
            if idx is None:
                self.unk_count += 1
                logger.debug_at_level(DEBUG_L2, "Vocabulary", f"Unknown token '{tok}' mapped to {UNK_TOKEN}")
                idx = self.unk_id
            ids.append(idx)
        return ids

    def encode(self, text: str) -> List[int]:
        return self.encode_tokens(tokenize_text(text))

    def decode(self, ids: Sequence[int], strip_special: bool = True) -> str:
        specials = {self.pad_id, self.boa_id, self.eoa_id}
        tokens = []
        for idx in ids:
            idx = int(idx)
            if strip_special and idx in specials:
                continue
            tokens.append(self.id_to_token[idx] if 0 <= idx < len(self) else UNK_TOKEN)
        return detokenize(tokens)

    def fingerprint(self) -> str:
        """sha256 over the ordered token list; checkpoints refuse to load on mismatch."""
        payload = json.dumps(self.id_to_token, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def to_json(self) -> List[str]:
        return list(self.id_to_token)

    @classmethod
    def from_json(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("Serialized vocabulary does not start with the reserved special tokens")
        return cls(tokens[len(SPECIAL_TOKENS):])

    def extends(self, base: "Vocabulary") -> bool:
        """True when this vocabulary starts with every token of base, in base's order."""
        return self.id_to_token[:len(base)] == base.id_to_token
