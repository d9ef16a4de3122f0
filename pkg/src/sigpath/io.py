"""File formats: networks, designs, datasets, summaries, traces and checkpoints.

Network file::

    # comment
    @nodes A B C          (optional; fixes node order)
    A B 1.25              (parent child [coefficient])

Design file, one condition per line::

    label mode [target]   (mode: inhibit | activate | general)

Several lines sharing a label add targets to the same condition.

Dataset CSV: header ``condition,<protein1>,...``, one row per cell, floats
written with ``repr`` so a write/read round trip is bit-exact. The design
lives in a sidecar file (``<stem>.design.txt`` by default).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .model import MODES, ChainState, Condition, Dataset, InterventionDesign, ProteinPanel
from .sampler import PosteriorSummary, RunSummary
from .simulate import TrueNetwork, generate_coefficients

FORMAT_VERSION = 1


class InputOutputError(OSError):
    """A file could not be read or written."""


def _read_lines(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def shipped(name: str) -> Path:
    """Path of a bundled data file (``figure1_network.txt``, ``table1_design.txt``)."""
    return Path(str(resources.files("sigpath") / "data" / name))


# -------------------------------------------------------------------- networks

def read_network(path):
    """Parse an edge list; returns ``(names, edges, coefs)``.

    ``coefs`` is None when no line carries a coefficient.
    """
    names, edges, coefs = [], [], []
    declared = False
    for lineno, line in _read_lines(path):
        tok = line.split()
        if tok[0] == "@nodes":
            if declared or edges:
                raise ValidationError(f"{path}:{lineno}: @nodes must come once, before any edge")
            names = tok[1:]
            declared = True
            continue
        if len(tok) not in (2, 3):
            raise ValidationError(f"{path}:{lineno}: expected 'parent child [coefficient]'")
        for t in tok[:2]:
            if t not in names:
                if declared:
                    raise ValidationError(f"{path}:{lineno}: node {t!r} not declared in @nodes")
                names.append(t)
        edges.append((names.index(tok[0]), names.index(tok[1])))
        if len(tok) == 3:
            try:
                coefs.append(float(tok[2]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad coefficient {tok[2]!r}") from None
        else:
            coefs.append(None)
    if len(names) < 2:
        raise ValidationError(f"{path}: a network needs at least two nodes")
    given = [c is not None for c in coefs]
    if any(given) and not all(given):
        raise ValidationError(f"{path}: give coefficients for every edge or for none")
    return tuple(names), edges, (coefs if coefs and all(given) else None)


def load_network(path, seed=0) -> TrueNetwork:
    """Network from file; missing coefficients are drawn with ``seed``."""
    names, edges, coefs = read_network(path)
    if coefs is None:
        return generate_coefficients(names, edges, seed)
    P = len(names)
    coef = np.zeros((P, P))
    for (p, c), a in zip(edges, coefs):
        coef[c, p] = a
    return TrueNetwork(names, edges, coef)


def write_network(net: TrueNetwork, path, with_coefficients=True):
    lines = ["@nodes " + " ".join(net.names)]
    for p, c in net.edges:
        row = f"{net.names[p]} {net.names[c]}"
        if with_coefficients:
            row += f" {float(net.coef[c, p])!r}"
        lines.append(row)
    _write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------- designs

def read_design(path, panel: ProteinPanel) -> InterventionDesign:
    order, targets = [], {}
    for lineno, line in _read_lines(path):
        tok = line.split()
        if len(tok) not in (2, 3) or tok[1] not in MODES:
            raise ValidationError(f"{path}:{lineno}: expected 'label inhibit|activate|general [target]'")
        label, mode = tok[0], tok[1]
        if label not in targets:
            order.append(label)
            targets[label] = {}
        if mode == "general":
            if len(tok) == 3:
                raise ValidationError(f"{path}:{lineno}: a general condition takes no target")
            continue
        if len(tok) != 3:
            raise ValidationError(f"{path}:{lineno}: {mode} needs a target protein")
        try:
            i = panel.index(tok[2])
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        targets[label][i] = mode
    if not order:
        raise ValidationError(f"{path}: no conditions")
    return InterventionDesign([Condition(lab, targets[lab]) for lab in order])


def write_design(design: InterventionDesign, panel: ProteinPanel, path):
    lines = []
    for c in design.conditions:
        if c.is_general:
            lines.append(f"{c.label} general")
        for i, mode in sorted(c.targets.items()):
            lines.append(f"{c.label} {mode} {panel.names[i]}")
    _write_text(path, "\n".join(lines) + "\n")


# -------------------------------------------------------------------- datasets

def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".design.txt")


def load_dataset(path, design_path=None) -> Dataset:
    """Read a dataset CSV plus its design sidecar."""
    design_path = sidecar_path(path) if design_path is None else Path(design_path)
    if not design_path.exists():
        raise InputOutputError(f"design file {design_path} not found")
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "condition" or len(header) < 3:
            raise ValidationError(f"{path}: header must be 'condition,<protein1>,...,<proteinP>'")
        panel = ProteinPanel([h.strip() for h in header[1:]])
        design = read_design(design_path, panel)
        rows = {lab: [] for lab in design.labels}
        P = panel.size
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != P + 1:
                raise ValidationError(f"{path}: row {lineno} has {len(row)} fields, expected {P + 1}")
            label = row[0].strip()
            if label not in rows:
                raise ValidationError(f"{path}: row {lineno}: unknown condition {label!r}")
            vals = []
            for name, cell in zip(panel.names, row[1:]):
                cell = cell.strip()
                if not cell:
                    raise ValidationError(f"{path}: row {lineno}: missing value for {name}")
                try:
                    val = float(cell)
                except ValueError:
                    raise ValidationError(f"{path}: row {lineno}: non-numeric value {cell!r} for {name}") from None
                if not math.isfinite(val):
                    raise ValidationError(f"{path}: row {lineno}: non-finite value for {name}")
                vals.append(val)
            rows[label].append(vals)
    for lab, r in rows.items():
        if not r:
            raise ValidationError(f"{path}: condition {lab!r} has no cells")
    blocks = [np.array(rows[lab], dtype=float) for lab in design.labels]
    return Dataset(panel, design, blocks)


def write_dataset(data: Dataset, path, design_path=None):
    design_path = sidecar_path(path) if design_path is None else design_path
    lines = ["condition," + ",".join(data.panel.names)]
    for lab, block in zip(data.design.labels, data.blocks):
        for row in block:
            lines.append(lab + "," + ",".join(repr(float(v)) for v in row))
    _write_text(path, "\n".join(lines) + "\n")
    write_design(data.design, data.panel, design_path)


# ------------------------------------------------------------------- summaries

def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


def _array(x):
    return np.array(_nan_nested(x), dtype=float)


def _nan_nested(x):
    if isinstance(x, list):
        return [_nan_nested(v) for v in x]
    return np.nan if x is None else x


def _run_dict(r: RunSummary):
    return {"seed": r.seed, "n_draws": r.n_draws, "w_overall": r.w_overall,
            "w_pair": r.w_pair, "w_condition": r.w_condition}


def _run_from(d) -> RunSummary:
    return RunSummary(w_overall=_array(d["w_overall"]), w_pair=_array(d["w_pair"]),
                      w_condition=None if d["w_condition"] is None else _array(d["w_condition"]),
                      n_draws=int(d["n_draws"]), seed=d["seed"])


def summary_to_json(summary: PosteriorSummary) -> str:
    doc = {"format_version": FORMAT_VERSION, "model": summary.model, "names": summary.names,
           "labels": summary.labels, "meta": summary.meta,
           "runs": [_run_dict(r) for r in summary.runs], "pooled": _run_dict(summary.pooled)}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"


def save_summary(summary: PosteriorSummary, path):
    _write_text(path, summary_to_json(summary))


def load_summary(path) -> PosteriorSummary:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a summary file ({exc})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported summary version {doc.get('format_version')}")
    return PosteriorSummary(names=doc["names"], labels=doc["labels"], model=doc["model"],
                            runs=[_run_from(r) for r in doc["runs"]], pooled=_run_from(doc["pooled"]),
                            meta=doc.get("meta", {}))


def emit_sorted_w(summary: PosteriorSummary, path, run=None):
    """Association scores sorted ascending, plus a per-condition companion file.

    Writes ``path`` (rank, protein_i, protein_j, w_hat) and
    ``<stem>_conditions.csv`` (response, predictor, condition, w_hat). Returns
    both paths.
    """
    names = summary.names
    pairs = sorted(summary.pair_scores(run), key=lambda t: (t[2], t[0], t[1]))
    lines = ["rank,protein_i,protein_j,w_hat"]
    for r, (i, j, w) in enumerate(pairs, 1):
        lines.append(f"{r},{names[i]},{names[j]},{w!r}")
    _write_text(path, "\n".join(lines) + "\n")
    p = Path(path)
    comp = p.with_name(p.stem + "_conditions.csv")
    s = summary.pooled if run is None else summary.runs[run]
    lines = ["response,predictor,condition,w_hat"]
    if s.w_condition is not None:
        P = len(names)
        for i in range(P):
            for j in range(P):
                for k, lab in enumerate(summary.labels):
                    v = s.w_condition[k, i, j]
                    if i != j and np.isfinite(v):
                        lines.append(f"{names[i]},{names[j]},{lab},{float(v)!r}")
    _write_text(comp, "\n".join(lines) + "\n")
    return p, comp


def read_sorted_w(path):
    with open(path, newline="") as fh:
        return [(row["protein_i"], row["protein_j"], float(row["w_hat"])) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------- traces

def trace_columns(trace) -> list:
    """Column order of the trace CSV: draw, w[i,j] for defined pairs, psi, phi[i,k]."""
    names = trace.names
    P = len(names)
    cols = ["draw"] + [f"w[{names[i]};{names[j]}]" for i, j in _defined_w(trace)]
    cols.append("psi")
    for i in range(P):
        for k, lab in enumerate(trace.labels):
            cols.append(f"phi[{names[i]};{lab}]")
    return cols


def _defined_w(trace):
    m = trace.mask
    P = m.shape[0]
    return [(i, j) for i in range(P) for j in range(P)
            if i != j and (m[i, j] or (trace.model == "rhm" and m[j, i]))]


def write_trace_csv(trace, path):
    """Dump retained draws (precisions, not variances) one row per draw."""
    w = trace.draws["w"]
    defined = _defined_w(trace)
    lines = [",".join(trace_columns(trace))]
    for d in range(trace.n_draws):
        vals = [str(d)] + [repr(float(w[d, i, j])) for i, j in defined]
        vals.append(repr(float(trace.draws["psi"][d])))
        vals += [repr(float(v)) for v in trace.draws["phi"][d].ravel()]
        lines.append(",".join(vals))
    _write_text(path, "\n".join(lines) + "\n")


def read_trace_csv(path):
    """``(columns, array)`` of a trace dump."""
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return cols, arr


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(path, state: ChainState, rng: np.random.Generator, iteration: int):
    """Versioned snapshot of a chain, including the generator state."""
    meta = {"format_version": FORMAT_VERSION, "model": state.model, "iteration": int(iteration),
            "psi": state.psi, "varying_variance": state.varying_variance,
            "bit_generator": rng.bit_generator.state}
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, default=int)), intercept=state.intercept,
                     coef=state.coef, z=state.z, w=state.w, slab_mean=state.slab_mean,
                     slab_prec=state.slab_prec, phi=state.phi, xt=state.xt, mask=state.mask)
    except OSError as exc:
        raise InputOutputError(f"cannot write checkpoint {path}: {exc}") from None


def load_checkpoint(path):
    """Returns ``(state, rng, iteration)``."""
    try:
        f = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise InputOutputError(f"cannot read checkpoint {path}: {exc}") from None
    with f:
        meta = json.loads(str(f["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        state = ChainState(model=meta["model"], intercept=f["intercept"], coef=f["coef"], z=f["z"],
                           w=f["w"], slab_mean=f["slab_mean"], slab_prec=f["slab_prec"], phi=f["phi"],
                           psi=float(meta["psi"]), xt=f["xt"], mask=f["mask"],
                           varying_variance=bool(meta["varying_variance"]))
    bg = getattr(np.random, meta["bit_generator"]["bit_generator"])()
    bg.state = meta["bit_generator"]
    return state, np.random.Generator(bg), int(meta["iteration"])


# ---------------------------------------------------------------------- config

def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    return doc


# ------------------------------------------------------------ partial graphs

def read_partial_graph(path, names=None):
    """Read a network for scoring.

    Accepts a decisions CSV written by ``infer`` or an edge-list file in
    which ``A -- B`` marks an undirected edge. Returns a
    :class:`sigpath.evaluation.PartialGraph`.
    """
    from .evaluation import PartialGraph

    p = Path(path)
    if p.suffix == ".csv":
        try:
            fh = open(p, newline="")
        except OSError as exc:
            raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
        with fh:
            rows = list(csv.DictReader(fh))
        if names is None:
            raise ValidationError(f"{path}: a decisions file needs the node names (pass the reference)")
        idx = {n: k for k, n in enumerate(names)}
        directed, undirected = [], []
        for r in rows:
            try:
                i, j = idx[r["protein_i"]], idx[r["protein_j"]]
                verdict = r["verdict"]
            except KeyError as exc:
                raise ValidationError(f"{path}: unknown protein or missing column {exc}") from None
            if verdict == "forward":
                directed.append((i, j))
            elif verdict == "reverse":
                directed.append((j, i))
            elif verdict == "undetermined":
                undirected.append((i, j))
        return PartialGraph(names, directed, undirected)
    decl, directed, undirected, seen = None, [], [], []
    for lineno, line in _read_lines(p):
        tok = line.split()
        if tok[0] == "@nodes":
            decl = tok[1:]
            continue
        if len(tok) == 3 and tok[1] == "--":
            pair, bucket = (tok[0], tok[2]), undirected
        elif len(tok) in (2, 3):
            pair, bucket = (tok[0], tok[1]), directed
        else:
            raise ValidationError(f"{path}:{lineno}: expected 'parent child' or 'a -- b'")
        for t in pair:
            if t not in seen:
                seen.append(t)
        bucket.append(pair)
    node_names = list(names) if names is not None else (decl or seen)
    if decl is not None and names is not None and list(decl) != list(names):
        raise ValidationError(f"{path}: node set {decl} differs from {list(names)}")
    idx = {n: k for k, n in enumerate(node_names)}
    try:
        return PartialGraph(node_names, [(idx[a], idx[b]) for a, b in directed],
                            [(idx[a], idx[b]) for a, b in undirected])
    except KeyError as exc:
        raise ValidationError(f"{path}: node {exc} not in the node set") from None


def write_partial_graph(graph, path):
    lines = ["@nodes " + " ".join(graph.names)]
    lines += [f"{graph.names[p]} {graph.names[c]}" for p, c in graph.directed]
    lines += [f"{graph.names[a]} -- {graph.names[b]}" for a, b in graph.undirected]
    _write_text(path, "\n".join(lines) + "\n")


def file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc.strerror or exc}") from None
