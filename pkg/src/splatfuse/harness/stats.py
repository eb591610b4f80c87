"""k-frequency tables and ablation summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence


@dataclass
class KTable:
    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def probabilities(self) -> dict[int, float]:
        n = self.total
        return {k: (c / n if n else 0.0) for k, c in self.counts.items()}

    def mass(self, ks: Sequence[int]) -> float:
        p = self.probabilities
        return sum(p.get(k, 0.0) for k in ks)

    def format(self) -> str:
        ks = list(self.counts)
        probs = self.probabilities
        w = max(7, *(len(str(self.counts[k])) + 1 for k in ks)) if ks else 7
        lines = ["k     " + "".join(f"{k:>{w}}" for k in ks),
                 "Freq. " + "".join(f"{self.counts[k]:>{w}}" for k in ks),
                 "Prob. " + "".join(f"{100.0 * probs[k]:>{w - 1}.1f}%" for k in ks)]
        return "\n".join(lines) + f"\n({self.total} non-zero queries)\n"


def k_table(ks: Sequence[int], candidates: Sequence[int]) -> KTable:
    counts = {int(c): 0 for c in candidates}
    for k in ks:
        if int(k) not in counts:
            raise ValueError(f"k = {k} is not a candidate {tuple(candidates)}")
        counts[int(k)] += 1
    return KTable(counts)


def k_stats(path) -> KTable:
    """Frequency table from a k-decision CSV (``query_index,k,expectation,p...``)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["query_index", "k", "expectation"]:
            raise ValueError(f"{path}: not a k-decision file")
        cands = [int(h[1:]) for h in header[3:] if h.startswith("p")]
        ks = []
        for n, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{n}: expected {len(header)} columns")
            ks.append(int(row[1]))
    return k_table(ks, cands)
