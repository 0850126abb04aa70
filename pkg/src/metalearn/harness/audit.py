"""Log of record ids consumed by each phase, for data-hygiene checks."""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Iterable

# `train` ids influence parameters; `score` ids are only predicted on
ROLES = ("train", "score")


class IdAudit:
    """Thread-safe set of consumed ids keyed by (phase, group, seed, role)."""

    def __init__(self):
        self._entries: dict[tuple[str, str, int | None, str], set[str]] = {}
        self._lock = threading.Lock()

    def record(self, phase: str, group: str, ids: Iterable[str], seed: int | None = None,
               role: str = "train") -> None:
        if role not in ROLES:
            raise ValueError(f"IdAudit: unknown role {role!r}")
        key = (phase, group, seed, role)
        with self._lock:
            self._entries.setdefault(key, set()).update(ids)

    def consumed(self, group: str, phase: str | None = None, seed: int | None = None,
                 role: str = "train") -> set[str]:
        """Union of ids matching the filter (``None`` matches any phase / seed)."""
        out: set[str] = set()
        with self._lock:
            for (p, g, s, r), ids in self._entries.items():
                if g == group and r == role and phase in (None, p) and (seed is None or s == seed):
                    out |= ids
        return out

    def keys(self) -> list[tuple[str, str, int | None, str]]:
        with self._lock:
            return sorted(self._entries, key=lambda k: (k[0], k[1], -1 if k[2] is None else k[2], k[3]))

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in self.keys():
                phase, group, seed, role = key
                ids = sorted(self._entries[key])
                fh.write(json.dumps({"phase": phase, "group": group, "seed": seed, "role": role,
                                     "n": len(ids), "ids": ids}) + "\n")
