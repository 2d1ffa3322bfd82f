"""LIBSVM parsing, sparse datasets, and client partitioning schemes.

A dataset is an immutable list of sparse binary-labeled examples.  The
three partition schemes split example indices among K clients: uniform
IID with the remainder dropped, contiguous blocks with caller-supplied
proportions, and single-label clients (label skew).  All shuffles use an
explicit Fisher-Yates sweep driven by a seeded generator so that a given
seed produces the same partition everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Example",
    "Dataset",
    "Partition",
    "ParseError",
    "InvalidConfigurationError",
    "parse_libsvm",
    "serialize_libsvm",
    "partition_iid",
    "partition_imbalanced",
    "partition_label_skew",
]


class ParseError(ValueError):
    """Malformed LIBSVM input.  Carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InvalidConfigurationError(ValueError):
    """Partition parameters inconsistent with the dataset."""


@dataclass(frozen=True)
class Example:
    """One labeled sparse example: y in {-1,+1}, 1-based feature indices."""

    label: int
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values length mismatch")
        for prev, cur in zip(self.indices, self.indices[1:]):
            if cur <= prev:
                raise ValueError("feature indices must be strictly increasing")
        if self.indices and self.indices[0] < 1:
            raise ValueError("feature indices are 1-based")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of examples with dimension d."""

    examples: tuple[Example, ...]
    d: int

    def __post_init__(self):
        max_idx = max((ex.indices[-1] for ex in self.examples if ex.indices), default=0)
        if self.d < max_idx:
            raise ValueError(f"dimension {self.d} below max feature index {max_idx}")

    @property
    def n(self) -> int:
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.float64)


@dataclass(frozen=True)
class Partition:
    """Disjoint assignment of example indices to K clients."""

    assignments: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for client in self.assignments:
            if len(client) == 0:
                raise ValueError("every client must receive at least one example")
            for idx in client:
                if idx in seen:
                    raise ValueError(f"example index {idx} assigned twice")
                seen.add(idx)

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    @property
    def client_sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.assignments)

    @property
    def total(self) -> int:
        return sum(self.client_sizes)


def _default_label_map(raw: int) -> int:
    return 1 if raw == 1 else -1


def parse_libsvm(
    text: str | Iterable[str],
    label_map: Mapping[int, int] | None = None,
    d: int | None = None,
) -> Dataset:
    """Parse LIBSVM-format lines into a Dataset.

    Each nonblank line is ``<label> <idx>:<val> ...`` with strictly
    increasing indices.  Raw labels are mapped to {-1,+1}: by default +1
    maps to +1 and everything else to -1; an explicit ``label_map`` must
    cover every raw label encountered.  ``d`` may override the dimension
    upward; by default it is the maximum feature index seen.
    """
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = list(text)
    examples: list[Example] = []
    max_idx = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_label = int(float(tokens[0]))
        except ValueError:
            raise ParseError(lineno, f"bad label token {tokens[0]!r}") from None
        if label_map is None:
            label = _default_label_map(raw_label)
        else:
            if raw_label not in label_map:
                raise ParseError(lineno, f"unmapped label {raw_label}")
            label = label_map[raw_label]
        if label not in (-1, 1):
            raise ParseError(lineno, f"label {raw_label} maps to {label}, not -1/+1")
        indices: list[int] = []
        values: list[float] = []
        for tok in tokens[1:]:
            idx_s, _, val_s = tok.partition(":")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(lineno, f"bad feature token {tok!r}") from None
            if idx < 1:
                raise ParseError(lineno, f"feature index {idx} is not positive")
            if indices and idx <= indices[-1]:
                raise ParseError(lineno, f"non-increasing feature index {idx}")
            indices.append(idx)
            values.append(val)
        if indices:
            max_idx = max(max_idx, indices[-1])
        examples.append(Example(label, tuple(indices), tuple(values)))
    dim = max_idx if d is None else d
    if dim < max_idx:
        raise ParseError(0, f"dimension override {d} below max feature index {max_idx}")
    return Dataset(tuple(examples), dim)


def serialize_libsvm(dataset: Dataset) -> str:
    """Render a Dataset back to LIBSVM text, one example per line."""
    lines = []
    for ex in dataset.examples:
        feats = " ".join(f"{i}:{v:.17g}" for i, v in zip(ex.indices, ex.values))
        label = "+1" if ex.label == 1 else "-1"
        lines.append(f"{label} {feats}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def _fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Explicit Fisher-Yates shuffle of range(n); fixed so seeds are portable."""
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def partition_iid(dataset: Dataset, n_clients: int, seed: int) -> Partition:
    """Shuffle and deal floor(N/K) examples to each client; remainder dropped."""
    if n_clients < 1:
        raise InvalidConfigurationError("need at least one client")
    if n_clients > dataset.n:
        raise InvalidConfigurationError(
            f"K={n_clients} exceeds dataset size N={dataset.n}"
        )
    rng = np.random.default_rng(seed)
    order = _fisher_yates(dataset.n, rng)
    per = dataset.n // n_clients
    assignments = tuple(
        tuple(int(i) for i in order[k * per : (k + 1) * per]) for k in range(n_clients)
    )
    return Partition(assignments)


def partition_imbalanced(
    dataset: Dataset, proportions: Iterable[float], seed: int
) -> Partition:
    """Split shuffled indices into contiguous blocks of size floor(p_k * N).

    Proportions must be positive and sum to 1 (within 1e-9); the leftover
    from flooring goes to the largest client.
    """
    props = list(proportions)
    if any(p <= 0 for p in props):
        raise InvalidConfigurationError("proportions must be positive")
    if abs(sum(props) - 1.0) > 1e-9:
        raise InvalidConfigurationError(f"proportions sum to {sum(props)}, not 1")
    n = dataset.n
    sizes = [int(np.floor(p * n)) for p in props]
    if any(s < 1 for s in sizes):
        raise InvalidConfigurationError("a proportion yields an empty client")
    largest = int(np.argmax(props))
    sizes[largest] += n - sum(sizes)
    rng = np.random.default_rng(seed)
    order = _fisher_yates(n, rng)
    assignments = []
    start = 0
    for s in sizes:
        assignments.append(tuple(int(i) for i in order[start : start + s]))
        start += s
    return Partition(tuple(assignments))


def _allocate_clients_per_label(class_sizes: list[int], n_clients: int) -> list[int]:
    """Clients per label, proportional to class size with a floor of one."""
    total = sum(class_sizes)
    counts = [max(1, int(np.floor(n_clients * s / total))) for s in class_sizes]
    # Largest-remainder top-up, then trim from the biggest counts if the
    # floors overshot K.
    while sum(counts) < n_clients:
        remainders = [
            n_clients * s / total - c for s, c in zip(class_sizes, counts)
        ]
        counts[int(np.argmax(remainders))] += 1
    while sum(counts) > n_clients:
        candidates = [i for i, c in enumerate(counts) if c > 1]
        counts[max(candidates, key=lambda i: counts[i])] -= 1
    return counts


def partition_label_skew(dataset: Dataset, n_clients: int, seed: int) -> Partition:
    """Give every client examples of a single label.

    Examples are grouped by label; each group is shuffled and split almost
    equally (sizes differ by at most one) among the clients allotted to
    that label.  Clients are allotted to labels proportionally to class
    size, at least one per label.
    """
    labels = sorted({ex.label for ex in dataset.examples})
    if n_clients < len(labels):
        raise InvalidConfigurationError(
            f"K={n_clients} below distinct-label count {len(labels)}"
        )
    groups = {
        lab: [i for i, ex in enumerate(dataset.examples) if ex.label == lab]
        for lab in labels
    }
    counts = _allocate_clients_per_label([len(groups[lab]) for lab in labels], n_clients)
    rng = np.random.default_rng(seed)
    assignments: list[tuple[int, ...]] = []
    for lab, n_cl in zip(labels, counts):
        idxs = np.array(groups[lab], dtype=np.int64)
        if len(idxs) < n_cl:
            raise InvalidConfigurationError(
                f"label {lab} has {len(idxs)} examples for {n_cl} clients"
            )
        order = idxs[_fisher_yates(len(idxs), rng)]
        splits = np.array_split(order, n_cl)
        assignments.extend(tuple(int(i) for i in part) for part in splits)
    return Partition(tuple(assignments))
