"""Scoring an inferred network against a reference network."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError
from .inference import InferredNetwork
from .simulate import TrueNetwork

CATEGORIES = ("true", "undetermined", "reversed", "missing", "false")


@dataclass
class PartialGraph:
    """Nodes plus directed ``(parent, child)`` and undirected ``(a, b)`` edges."""

    names: tuple
    directed: list = field(default_factory=list)
    undirected: list = field(default_factory=list)

    def __post_init__(self):
        self.names = tuple(self.names)
        P = len(self.names)
        seen = set()
        for a, b in list(self.directed) + list(self.undirected):
            if not (0 <= a < P and 0 <= b < P) or a == b:
                raise ValidationError(f"bad edge ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"more than one edge between {self.names[a]} and {self.names[b]}")
            seen.add(key)

    def states(self) -> dict:
        """``{(a, b): state}`` for ``a < b``; state is ``a->b``, ``b->a`` or ``undirected``."""
        out = {}
        for p, c in self.directed:
            out[(min(p, c), max(p, c))] = "a->b" if p < c else "b->a"
        for a, b in self.undirected:
            out[(min(a, b), max(a, b))] = "undirected"
        return out


def as_graph(obj) -> PartialGraph:
    if isinstance(obj, PartialGraph):
        return obj
    if isinstance(obj, InferredNetwork):
        return PartialGraph(obj.names, obj.directed_edges(), obj.undirected_edges())
    if isinstance(obj, TrueNetwork):
        return PartialGraph(obj.names, list(obj.edges))
    raise ValidationError(f"cannot score an object of type {type(obj).__name__}")


def _check_nodes(a, b):
    if tuple(a.names) != tuple(b.names):
        raise ValidationError(f"node sets differ: {a.names} vs {b.names}")


@dataclass
class EvalReport:
    true: int
    undetermined: int
    reversed: int
    missing: int
    false: int
    hamming: int
    ledger: list  # (name_a, name_b, reference_state, inferred_state, category)

    @property
    def counts(self) -> tuple:
        return (self.true, self.undetermined, self.reversed, self.missing, self.false)

    @property
    def n_reference(self) -> int:
        return self.true + self.undetermined + self.reversed + self.missing

    def table(self, label="inferred") -> str:
        head = f"{'network':<12}{'True':>6}{'Undet.':>8}{'Rev.':>6}{'Miss.':>7}{'False':>7}{'Hamming':>9}"
        row = (f"{label:<12}{self.true:>6}{self.undetermined:>8}{self.reversed:>6}"
               f"{self.missing:>7}{self.false:>7}{self.hamming:>9}")
        return head + "\n" + row + "\n"

    def ledger_table(self) -> str:
        rows = ["node_a,node_b,reference,inferred,category"]
        rows += [",".join(map(str, r)) for r in self.ledger]
        return "\n".join(rows) + "\n"


def hamming_distance(inferred, reference) -> int:
    """Number of node pairs whose edge state differs.

    Each add, remove or redirect operation touches one pair, and pairs never
    interact, so the minimum edit count equals this per-pair mismatch count.
    """
    a, b = as_graph(inferred), as_graph(reference)
    _check_nodes(a, b)
    sa, sb = a.states(), b.states()
    return sum(sa.get(p) != sb.get(p) for p in set(sa) | set(sb))


def classify_edges(inferred, reference) -> EvalReport:
    inf, ref = as_graph(inferred), as_graph(reference)
    _check_nodes(inf, ref)
    si, sr = inf.states(), ref.states()
    names = ref.names
    counts = dict.fromkeys(CATEGORIES, 0)
    ledger = []
    for pair in sorted(set(si) | set(sr)):
        r, g = sr.get(pair), si.get(pair)
        if r is None:
            cat = "false"
        elif g is None:
            cat = "missing"
        elif g == "undirected" or r == "undirected":
            cat = "true" if g == r else "undetermined"
        else:
            cat = "true" if g == r else "reversed"
        counts[cat] += 1
        ledger.append((names[pair[0]], names[pair[1]], r or "none", g or "none", cat))
    return EvalReport(**counts, hamming=hamming_distance(inf, ref), ledger=ledger)
