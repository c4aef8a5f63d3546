"""Token ids: five reserved specials, then node ``v`` at ``v + NUM_SPECIAL``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD, CLS, SEP, MASK, UNK = 0, 1, 2, 3, 4
NUM_SPECIAL = 5
SPECIAL_NAMES = {PAD: "[PAD]", CLS: "[CLS]", SEP: "[SEP]", MASK: "[MASK]", UNK: "[UNK]"}


@dataclass(frozen=True)
class Vocabulary:
    num_nodes: int

    @property
    def size(self) -> int:
        return self.num_nodes + NUM_SPECIAL

    def token(self, node):
        return np.asarray(node) + NUM_SPECIAL if not isinstance(node, int) else node + NUM_SPECIAL

    def node(self, token: int) -> int | None:
        if not 0 <= token < self.size:
            raise IndexError(f"token {token} outside vocabulary of size {self.size}")
        return None if token < NUM_SPECIAL else token - NUM_SPECIAL

    def is_special(self, token: int) -> bool:
        return token < NUM_SPECIAL


def rwpe_for_token(rpm: np.ndarray, token: int) -> np.ndarray:
    """Return-probability row for a token; specials and absent nodes get zeros."""
    n, k = rpm.shape
    if not 0 <= token < n + NUM_SPECIAL:
        raise IndexError(f"token {token} outside vocabulary of size {n + NUM_SPECIAL}")
    if token < NUM_SPECIAL:
        return np.zeros(k)
    return rpm[token - NUM_SPECIAL].copy()
