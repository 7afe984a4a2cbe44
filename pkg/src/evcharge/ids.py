"""Seedable UUID generation.

Bill and transaction ids are UUID4-format strings. Drawing them from a
seeded RNG keeps simulated runs reproducible; the default source is
unseeded and suitable for production use.
"""

from __future__ import annotations

import random
import uuid


class IdSource:
    """Produces UUID4-format id strings from an optionally seeded RNG."""

    def __init__(self, seed: int | None = None):
        self._rng = random.Random(seed)

    def new_id(self) -> str:
        return str(uuid.UUID(int=self._rng.getrandbits(128), version=4))
