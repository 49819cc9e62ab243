"""Byte-level tokenizer for the fallback text tower.

No BPE vocabulary ships with this package, so prompts are tokenized as
raw UTF-8 bytes between start and end markers. The scoring engine only
ever sees the resulting embeddings, so the token scheme is private to
the exporter.
"""

from __future__ import annotations

PAD = 0
SOT = 1
EOT = 2
VOCAB_SIZE = 259  # pad + sot + eot + 256 byte values


def encode(text: str, context: int) -> tuple[list[int], int]:
    """Token ids padded to `context`, plus the index of the EOT token.

    Texts longer than context - 2 bytes are truncated; truncation never
    splits the markers.
    """
    if context < 3:
        raise ValueError("context must fit sot, one byte, and eot")
    body = list(text.encode("utf-8"))[: context - 2]
    ids = [SOT] + [b + 3 for b in body] + [EOT]
    eot_index = len(ids) - 1
    ids.extend([PAD] * (context - len(ids)))
    return ids, eot_index
