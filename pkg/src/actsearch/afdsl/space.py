"""Search-space enumeration, output fingerprints, and duplicate removal."""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .graph import FORMS, ActivationGraph, X, binary, evaluate, nary, unary
from .operators import BASE_TABLE, OperatorTable

PROBE_SEED = 42
N_PROBES = 1000
PROBE_RANGE = 5.0

SPACES = {
    "three-node": ("three_node",),
    "four-node": (
        "binary_left_deep",
        "binary_right_deep",
        "nary",
        "unary_of_binary",
        "unary_chain",
    ),
}


class UnknownSpaceError(ValueError):
    pass


def probe_inputs(seed: int = PROBE_SEED, n: int = N_PROBES) -> np.ndarray:
    """Shared probe points: standard normal draws clipped to [-5, 5]."""
    rng = np.random.default_rng(seed)
    return np.clip(rng.standard_normal(n), -PROBE_RANGE, PROBE_RANGE)


def digest(values: np.ndarray) -> str:
    """64-bit blake2b digest of the little-endian float64 bytes, as hex."""
    data = np.ascontiguousarray(values, dtype="<f8").tobytes()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass(frozen=True)
class OutputFingerprint:
    values: np.ndarray
    hash: str

    def __eq__(self, other):
        if not isinstance(other, OutputFingerprint):
            return NotImplemented
        return self.hash == other.hash and _same_values(self.values, other.values)

    def __hash__(self):
        return hash(self.hash)


def _same_values(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _canonical_values(values: np.ndarray) -> np.ndarray:
    # -0.0 -> 0.0 and a single NaN bit pattern, so equality is bytewise
    v = np.asarray(values, dtype=np.float64) + 0.0
    v[np.isnan(v)] = np.nan
    return v


def fingerprint(
    graph: ActivationGraph, probes: np.ndarray | None = None, table: OperatorTable = BASE_TABLE
) -> OutputFingerprint:
    if probes is None:
        probes = probe_inputs()
    values = _canonical_values(evaluate(graph, probes, table))
    return OutputFingerprint(values, digest(values))


def _slots(shape: str) -> list[str]:
    """Operator kinds of a shape string in pre-order."""
    out = []
    i = 0
    while i < len(shape):
        for kind in ("unary", "binary", "nary"):
            if shape.startswith(kind, i):
                out.append(kind)
                i += len(kind)
                break
        else:
            i += 1
    return out


def _build(form: str, names: tuple[str, ...]) -> ActivationGraph:
    if form == "three_node":
        b, u1, u2 = names
        return binary(b, unary(u1), unary(u2))
    if form == "binary_left_deep":
        b, u1, u2, u3 = names
        return binary(b, unary(u1, unary(u2)), unary(u3))
    if form == "binary_right_deep":
        b, u1, u2, u3 = names
        return binary(b, unary(u1), unary(u2, unary(u3)))
    if form == "nary":
        n, u1, u2, u3 = names
        return nary(n, unary(u1), unary(u2), unary(u3))
    if form == "unary_of_binary":
        u0, b, u1, u2 = names
        return unary(u0, binary(b, unary(u1), unary(u2)))
    if form == "unary_chain":
        u1, u2, u3, u4 = names
        return unary(u1, unary(u2, unary(u3, unary(u4))))
    raise UnknownSpaceError(form)


def _slot_choices(form: str, table: OperatorTable) -> list[list[str]]:
    names = {"unary": table.unary_names, "binary": table.binary_names, "nary": table.nary_names}
    return [names[k] for k in _slots(FORMS[form])]


def space_forms(space: str) -> tuple[str, ...]:
    try:
        return SPACES[space]
    except KeyError:
        raise UnknownSpaceError(f"unknown space {space!r}; choose from {sorted(SPACES)}") from None


def space_size(space: str, table: OperatorTable = BASE_TABLE) -> int:
    total = 0
    for form in space_forms(space):
        n = 1
        for choices in _slot_choices(form, table):
            n *= len(choices)
        total += n
    return total


def enumerate_space(space: str, table: OperatorTable = BASE_TABLE) -> Iterator[ActivationGraph]:
    """Every graph of ``space`` in a fixed order: forms in listed order, then slot
    operators in pre-order with the last slot varying fastest."""
    for form in space_forms(space):
        for names in itertools.product(*_slot_choices(form, table)):
            yield _build(form, names)


def dedup(
    graphs: Iterable[ActivationGraph],
    probes: np.ndarray | None = None,
    table: OperatorTable = BASE_TABLE,
) -> dict[str, ActivationGraph]:
    """Keep the first graph of each distinct output fingerprint.

    Returns a mapping ``digest -> representative`` in first-seen order.
    """
    if probes is None:
        probes = probe_inputs()
    seen: dict[str, tuple[ActivationGraph, bytes]] = {}
    for g in graphs:
        fp = fingerprint(g, probes, table)
        key = fp.hash
        raw = fp.values.tobytes()
        while key in seen and seen[key][1] != raw:
            key += "+"  # 64-bit digest collision between distinct vectors
        if key not in seen:
            seen[key] = (g, raw)
    return {k: v[0] for k, v in seen.items()}


def bulk_fingerprints(
    space: str, probes: np.ndarray | None = None, table: OperatorTable = BASE_TABLE
) -> Iterator[tuple[int, str]]:
    """Yield ``(enumeration index, digest)`` for every graph of ``space``.

    Vectorised over the last slot of each form using cached unary tables; the
    values are bit-identical to :func:`fingerprint` on the same graph.
    """
    if probes is None:
        probes = probe_inputs()
    x = np.asarray(probes, dtype=np.float64)
    U = table.unary
    with np.errstate(all="ignore"):
        u1 = np.stack([op.fn(x) for op in U])  # u1[j] = u_j(x)
        u2 = np.stack([op.fn(u1) for op in U])  # u2[i, j] = u_i(u_j(x))
        index = 0
        for form in space_forms(space):
            for block in _form_blocks(form, table, x, u1, u2):
                block = block + 0.0
                block[np.isnan(block)] = np.nan
                for row in np.ascontiguousarray(block, dtype="<f8"):
                    yield index, hashlib.blake2b(row.tobytes(), digest_size=8).hexdigest()
                    index += 1


def _form_blocks(form, table, x, u1, u2):
    """Output blocks in enumeration order; each block spans the trailing slots."""
    U = table.unary
    if form == "three_node":
        for b in table.binary:
            for a in range(len(U)):
                yield b.fn(u1[a][None, :], u1)
    elif form == "binary_left_deep":
        for b in table.binary:
            for i in range(len(U)):
                for j in range(len(U)):
                    yield b.fn(u2[i, j][None, :], u1)
    elif form == "binary_right_deep":
        for b in table.binary:
            for i in range(len(U)):
                yield b.fn(u1[i][None, None, :], u2).reshape(-1, x.size)
    elif form == "nary":
        for n in table.nary:
            for i in range(len(U)):
                for j in range(len(U)):
                    yield n.fn(u1[i][None, :], u1[j][None, :], u1)
    elif form == "unary_of_binary":
        for top in U:
            for b in table.binary:
                for i in range(len(U)):
                    yield top.fn(b.fn(u1[i][None, :], u1))
    elif form == "unary_chain":
        flat2 = u2.reshape(-1, x.size)
        for a in U:
            for b in U:
                yield a.fn(b.fn(flat2))
    else:
        raise UnknownSpaceError(form)


def unique_count(space: str, probes: np.ndarray | None = None, table: OperatorTable = BASE_TABLE) -> int:
    """Number of distinct output fingerprints in ``space`` (bulk path)."""
    return len({h for _, h in bulk_fingerprints(space, probes, table)})


def unique_indices(space: str, probes: np.ndarray | None = None, table: OperatorTable = BASE_TABLE) -> list[int]:
    """Enumeration indices of first-seen representatives (bulk path)."""
    seen: set[str] = set()
    out = []
    for i, h in bulk_fingerprints(space, probes, table):
        if h not in seen:
            seen.add(h)
            out.append(i)
    return out
