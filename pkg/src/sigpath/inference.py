"""From posterior summaries to a partially directed network.

Step 1 keeps unordered pairs whose association score ``w_hat_(i,j)`` clears
a threshold in enough runs. Step 2 reads each pair's condition-level streams
``{w_hat_ij^(k)}_k`` and ``{w_hat_ji^(k)}_k``. When controlling one protein
makes the association collapse, that protein is the child.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .model import InterventionDesign, check_model

FORWARD, REVERSE, UNDETERMINED, NO_ASSOCIATION = "forward", "reverse", "undetermined", "no_association"
VERDICTS = (FORWARD, REVERSE, UNDETERMINED, NO_ASSOCIATION)
_MIRROR = {FORWARD: REVERSE, REVERSE: FORWARD, UNDETERMINED: UNDETERMINED, NO_ASSOCIATION: NO_ASSOCIATION}
_TOL = 1e-12


@dataclass(frozen=True)
class Thresholds:
    u1: float = 0.4
    u1_prime: float = 0.4
    u2: float = 0.1
    u3: float = 0.3
    u_f: float = 0.8

    def __post_init__(self):
        for name in ("u1", "u1_prime", "u2", "u3", "u_f"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and 0.0 <= val <= 1.0):
                raise ValidationError(f"threshold {name} must lie in [0, 1], got {val!r}")

    def association(self, model: str) -> float:
        return self.u1_prime if model == "rhm" else self.u1


# ---------------------------------------------------------------- thresholds

@dataclass
class JumpSuggestion:
    threshold: float
    gap: float
    gap_ratio: float
    low_confidence: bool


def detect_jump(values) -> JumpSuggestion:
    """Midpoint of the largest gap in the upper half of the sorted scores.

    ``gap_ratio`` compares that gap with the median gap of the whole
    sequence; below 2 the suggestion is flagged as low confidence.
    """
    v = np.sort(np.asarray(list(values), dtype=float))
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise ValidationError("need at least two scores to look for a jump")
    gaps = np.diff(v)
    start = max(v.size // 2, 1)
    m = start + int(np.argmax(gaps[start - 1:]))  # largest gap sits between v[m-1] and v[m]
    gap = float(gaps[m - 1])
    med = float(np.median(gaps))
    ratio = math.inf if med == 0 and gap > 0 else (1.0 if med == 0 else gap / med)
    return JumpSuggestion(threshold=float(0.5 * (v[m - 1] + v[m])), gap=gap, gap_ratio=ratio,
                          low_confidence=ratio < 2.0)


def permutation_baseline(data, hp, config, model="hm", workers=1) -> float:
    """Largest association score after breaking every dependence.

    Each protein's cells are shuffled independently within every condition
    block and the model is refitted. The result is an over-liberal lower
    bound for ``u1``.
    """
    from .model import Dataset
    from .sampler import run_chains, summarize

    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(7,)))
    blocks = []
    for b in data.blocks:
        nb = b.copy()
        for i in range(nb.shape[1]):
            nb[:, i] = rng.permutation(nb[:, i])
        blocks.append(nb)
    permuted = Dataset(data.panel, data.design, blocks)
    summary = summarize(run_chains(permuted, hp, config, model, workers=workers))
    scores = [w for run in range(summary.n_runs) for _, _, w in summary.pair_scores(run)]
    return float(max(scores))


# -------------------------------------------------------------- associations

def _runs(summary):
    runs = list(summary.runs)
    if not runs:
        raise ValidationError("no runs to select associations from")
    return runs


def selection_frequency(summary, th: Thresholds) -> np.ndarray:
    """Fraction of runs in which each unordered pair clears the association threshold."""
    runs = _runs(summary)
    u = th.association(summary.model)
    hits = sum(np.nan_to_num(r.w_pair, nan=-1.0) > u for r in runs)
    return hits / len(runs)


def select_associations(summary, th: Thresholds) -> list:
    """Unordered pairs ``(i, j)``, ``i < j``, selected in at least ``u_f`` of the runs."""
    freq = selection_frequency(summary, th)
    P = freq.shape[0]
    return [(i, j) for i in range(P) for j in range(i + 1, P) if freq[i, j] >= th.u_f - _TOL]


# ----------------------------------------------------------------- directions

def perturbation_sets(i, j, design: InterventionDesign):
    """``(S_i, S_j)``: conditions in which ``i`` (resp. ``j``) is a named target."""
    return design.controlled(i), design.controlled(j)


def case_of(i, j, design: InterventionDesign) -> int:
    """Which of the four direction cases the pair falls in under ``design``."""
    si, sj = perturbation_sets(i, j, design)
    s = si | sj
    if not s:
        return 4
    if len(s) == 1:
        return 1
    if si and sj:
        return 3
    return 2


@dataclass
class StreamVerdict:
    """Outcome of one stream.

    ``verdict`` is ``forward``/``reverse`` relative to the pair, or
    ``silent`` or ``ignored``.
    """

    name: str
    values: list
    verdict: str
    stats: list = field(default_factory=list)


@dataclass
class DirectionDecision:
    pair: tuple
    verdict: str
    case: int = 4
    streams: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValidationError(f"unknown verdict {self.verdict!r}")

    def mirrored(self) -> DirectionDecision:
        i, j = self.pair
        swap = {"ij": "ji", "ji": "ij"}
        streams = [replace(s, name=swap.get(s.name, s.name), verdict=_MIRROR.get(s.verdict, s.verdict))
                   for s in self.streams]
        return DirectionDecision((j, i), _MIRROR[self.verdict], self.case, streams)


def _stream_verdict(name, values, si, sj, th):
    vals = [float(v) for v in values]
    if not vals or any(not math.isfinite(v) for v in vals) or all(v < th.u2 for v in vals):
        return StreamVerdict(name, vals, "ignored")
    if si and sj:
        d = [vals[k1] - vals[k2] for k1 in sorted(si) for k2 in sorted(sj)]
        if all(x > th.u3 for x in d):
            verdict = FORWARD
        elif all(x <= -th.u3 for x in d):
            verdict = REVERSE
        else:
            verdict = "silent"
        return StreamVerdict(name, vals, verdict, d)
    # one protein controlled: a collapse under control marks it as the child
    top = max(vals)
    controlled_is_i = bool(si)
    drops = [top - vals[k] for k in sorted(si or sj)]
    if all(x > th.u3 for x in drops):
        verdict = REVERSE if controlled_is_i else FORWARD
    elif all(x <= th.u3 for x in drops):
        verdict = FORWARD if controlled_is_i else REVERSE
    else:
        verdict = "silent"
    return StreamVerdict(name, vals, verdict, drops)


def _combine(streams):
    calls = {s.verdict for s in streams if s.verdict in (FORWARD, REVERSE)}
    return calls.pop() if len(calls) == 1 else UNDETERMINED


def classify_direction(pair, run, design: InterventionDesign, th: Thresholds, model: str) -> DirectionDecision:
    """Direction verdict for one associated pair from one run's summary.

    The pair is always evaluated in ascending index order and mirrored
    afterwards, so ``(i, j)`` and ``(j, i)`` give mirrored verdicts even at
    threshold ties.
    """
    check_model(model)
    i, j = pair
    if i == j:
        raise ValidationError("a pair needs two distinct proteins")
    P = run.w_pair.shape[0]
    if not (0 <= i < P and 0 <= j < P):
        raise ValidationError(f"pair {pair} absent from the summary")
    if i > j:
        return classify_direction((j, i), run, design, th, model).mirrored()
    case = case_of(i, j, design)
    if case == 4 or model == "nhm" or run.w_condition is None:
        return DirectionDecision((i, j), UNDETERMINED, case)
    si, sj = perturbation_sets(i, j, design)
    wc = run.w_condition
    if model == "rhm":
        streams = [_stream_verdict("shared", wc[:, i, j], si, sj, th)]
    else:
        streams = [_stream_verdict("ij", wc[:, i, j], si, sj, th),
                   _stream_verdict("ji", wc[:, j, i], si, sj, th)]
    return DirectionDecision((i, j), _combine(streams), case, streams)


# ------------------------------------------------------------------ assembly

def majority_vote(verdicts) -> str:
    """Plurality over per-run verdicts; a tie for first place is undetermined."""
    verdicts = list(verdicts)
    if not verdicts:
        return UNDETERMINED
    ranked = Counter(verdicts).most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return UNDETERMINED
    return ranked[0][0]


@dataclass
class PairCall:
    pair: tuple
    verdict: str
    case: int
    w_hat: float
    frequency: float
    votes: dict
    per_run: list  # (run index, DirectionDecision)


@dataclass
class InferredNetwork:
    names: list
    calls: list
    model: str = "hm"
    thresholds: Thresholds = None

    def __post_init__(self):
        seen = set()
        for c in self.calls:
            key = tuple(sorted(c.pair))
            if key in seen:
                raise ValidationError(f"more than one decision for pair {key}")
            seen.add(key)

    @property
    def decisions(self) -> list:
        return [DirectionDecision(c.pair, c.verdict, c.case) for c in self.calls]

    def directed_edges(self) -> list:
        out = []
        for c in self.calls:
            i, j = c.pair
            if c.verdict == FORWARD:
                out.append((i, j))
            elif c.verdict == REVERSE:
                out.append((j, i))
        return out

    def undirected_edges(self) -> list:
        return [tuple(sorted(c.pair)) for c in self.calls if c.verdict == UNDETERMINED]

    def pair_states(self) -> dict:
        """``{(a, b): state}`` with ``a < b`` and state ``"a->b"``, ``"b->a"`` or ``"undirected"``."""
        states = {}
        for p, c in self.directed_edges():
            a, b = min(p, c), max(p, c)
            states[(a, b)] = "a->b" if p == a else "b->a"
        for a, b in self.undirected_edges():
            states[(a, b)] = "undirected"
        return states


def assemble_network(calls_per_pair, names, model="hm", th=None) -> InferredNetwork:
    """Majority-vote the per-run decisions of every selected pair.

    ``calls_per_pair`` maps a pair to ``(w_hat, frequency, [(run, decision), ...])``.
    """
    calls = []
    for pair, (w_hat, freq, per_run) in sorted(calls_per_pair.items()):
        verdicts = [d.verdict for _, d in per_run]
        case = per_run[0][1].case if per_run else 4
        calls.append(PairCall(pair=pair, verdict=majority_vote(verdicts), case=case, w_hat=w_hat,
                              frequency=freq, votes=dict(sorted(Counter(verdicts).items())),
                              per_run=list(per_run)))
    return InferredNetwork(list(names), calls, model, th)


def infer_network(summary, design: InterventionDesign, th: Thresholds) -> InferredNetwork:
    """Both steps: association selection, then per-run directions and the vote.

    Directions are voted only over the runs in which the pair was selected.
    """
    model = summary.model
    runs = _runs(summary)
    if len(summary.labels) != design.size:
        raise ValidationError("summary and design have different numbers of conditions")
    freq = selection_frequency(summary, th)
    u = th.association(model)
    table = {}
    for i, j in select_associations(summary, th):
        per_run = [(r, classify_direction((i, j), run, design, th, model))
                   for r, run in enumerate(runs) if run.w_pair[i, j] > u]
        table[(i, j)] = (float(summary.pooled.w_pair[i, j]), float(freq[i, j]), per_run)
    return assemble_network(table, summary.names, model, th)


# ------------------------------------------------------------------- output

def to_dot(net: InferredNetwork, name="inferred") -> str:
    """DOT digraph; undetermined edges are drawn with ``dir=none``."""
    q = lambda s: '"' + str(s).replace('"', r'\"') + '"'
    lines = [f"digraph {q(name)} {{"]
    for n in net.names:
        lines.append(f"  {q(n)};")
    for p, c in net.directed_edges():
        lines.append(f"  {q(net.names[p])} -> {q(net.names[c])};")
    for a, b in net.undirected_edges():
        lines.append(f"  {q(net.names[a])} -> {q(net.names[b])} [dir=none];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def decisions_table(net: InferredNetwork) -> str:
    """One row per selected pair: scores, case, verdict and the vote."""
    names = net.names
    rows = ["protein_i,protein_j,w_hat,frequency,case,verdict,edge,votes"]
    for c in net.calls:
        i, j = c.pair
        edge = {FORWARD: f"{names[i]}->{names[j]}", REVERSE: f"{names[j]}->{names[i]}"}.get(
            c.verdict, f"{names[i]}--{names[j]}")
        votes = ";".join(f"{k}:{v}" for k, v in c.votes.items())
        rows.append(f"{names[i]},{names[j]},{c.w_hat!r},{c.frequency!r},{c.case},{c.verdict},{edge},{votes}")
    return "\n".join(rows) + "\n"


def streams_table(net: InferredNetwork, labels) -> str:
    """Per-run, per-stream detail behind every verdict."""
    names = net.names
    rows = ["protein_i,protein_j,run,stream,stream_verdict,run_verdict,statistics,"
            + ",".join(f"w[{lab}]" for lab in labels)]
    for c in net.calls:
        i, j = c.pair
        for r, d in c.per_run:
            for s in d.streams:
                stats = ";".join(repr(float(x)) for x in s.stats)
                vals = ",".join(repr(float(x)) for x in s.values)
                rows.append(f"{names[i]},{names[j]},{r},{s.name},{s.verdict},{d.verdict},{stats},{vals}")
    return "\n".join(rows) + "\n"
