"""Per-class top-K confidence records of unlabeled samples, cleared each epoch."""

from __future__ import annotations

import csv
from pathlib import Path


def capacity(labeled_count: int, n_classes: int) -> int:
    """K = floor(labeled_count / C) * 2, i.e. extra samples capped at twice the labeled set."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    return (labeled_count // n_classes) * 2


class MemoryBank:
    """C rows of at most K (sample_id -> confidence) records.

    A full row admits a new id only if its confidence beats the row minimum,
    which it then replaces.  Re-offering an id keeps its higher confidence.
    Ties on confidence are resolved by sample id so the final contents do not
    depend on offer order.
    """

    def __init__(self, n_classes: int, k: int):
        if n_classes < 1 or k < 0:
            raise ValueError("need n_classes >= 1 and k >= 0")
        self.n_classes = n_classes
        self.k = k
        self.rows: list[dict[int, float]] = [{} for _ in range(n_classes)]

    def __len__(self) -> int:
        return sum(len(r) for r in self.rows)

    def offer(self, sample_id: int, predicted_class: int, confidence: float) -> MemoryBank:
        if not 0 <= predicted_class < self.n_classes:
            raise IndexError(f"class {predicted_class} out of range")
        if self.k == 0:
            return self
        row = self.rows[predicted_class]
        sid, conf = int(sample_id), float(confidence)
        if sid in row:
            row[sid] = max(row[sid], conf)
            return self
        if len(row) < self.k:
            row[sid] = conf
            return self
        worst = min(row, key=lambda i: (row[i], -i))
        if (conf, -sid) > (row[worst], -worst):
            del row[worst]
            row[sid] = conf
        return self

    def offer_many(self, ids, classes, confidences) -> MemoryBank:
        for sid, c, conf in zip(ids, classes, confidences):
            self.offer(int(sid), int(c), float(conf))
        return self

    def entries(self) -> list[tuple[int, int, float]]:
        """(sample_id, class, confidence), sorted per class by descending confidence."""
        out = []
        for c, row in enumerate(self.rows):
            for sid in sorted(row, key=lambda i: (-row[i], i)):
                out.append((sid, c, row[sid]))
        return out

    def harvest(self) -> list[tuple[int, int]]:
        """Emit every record as (sample_id, pseudo_class) and clear the bank."""
        out = [(sid, c) for sid, c, _ in self.entries()]
        self.clear()
        return out

    def clear(self) -> None:
        self.rows = [{} for _ in range(self.n_classes)]


def write_harvest_csv(path, entries, epoch: int) -> None:
    """Append one epoch's (sample_id, class, confidence) records to ``path``."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["epoch", "sample_id", "class", "confidence"])
        for sid, c, conf in entries:
            w.writerow([epoch, sid, c, f"{conf:.17g}"])
