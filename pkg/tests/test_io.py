import json

import numpy as np
import pytest

from sigpath import ValidationError
from sigpath import io as sio
from sigpath.evaluation import PartialGraph
from sigpath.model import Condition, Dataset, InterventionDesign, ProteinPanel
from sigpath.sampler import PosteriorSummary, RunSummary
from sigpath.simulate import generate_coefficients


def test_network_round_trip(tmp_path):
    net = generate_coefficients(("A", "B", "C"), [(0, 1), (1, 2)], seed=4)
    sio.write_network(net, tmp_path / "n.txt")
    back = sio.load_network(tmp_path / "n.txt")
    assert back.names == net.names and back.edges == net.edges
    assert np.array_equal(back.coef, net.coef)


def test_network_without_coefficients_is_seeded(tmp_path):
    (tmp_path / "n.txt").write_text("# c\nA B\nB C\n")
    a = sio.load_network(tmp_path / "n.txt", seed=1)
    b = sio.load_network(tmp_path / "n.txt", seed=1)
    assert np.array_equal(a.coef, b.coef) and a.names == ("A", "B", "C")


@pytest.mark.parametrize("text, where", [
    ("A B\nB C x\n", ":2"),
    ("A B 1\nB C\n", "every edge"),
    ("@nodes A B\nA C\n", ":2"),
    ("A B C D\n", ":1"),
])
def test_network_errors_name_the_line(tmp_path, text, where):
    (tmp_path / "n.txt").write_text(text)
    with pytest.raises(ValidationError, match=where):
        sio.read_network(tmp_path / "n.txt")


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(sio.InputOutputError):
        sio.read_network(tmp_path / "nope.txt")


def test_design_round_trip(tmp_path):
    panel = ProteinPanel(("A", "B", "C"))
    design = InterventionDesign([Condition("g"), Condition("x", {0: "inhibit", 2: "activate"})])
    sio.write_design(design, panel, tmp_path / "d.txt")
    back = sio.read_design(tmp_path / "d.txt", panel)
    assert back.labels == design.labels
    assert [c.targets for c in back.conditions] == [c.targets for c in design.conditions]


def test_design_errors(tmp_path):
    panel = ProteinPanel(("A", "B"))
    for text in ("x inhibit\n", "x general A\n", "x block A\n", "x inhibit Q\n", "# nothing\n"):
        (tmp_path / "d.txt").write_text(text)
        with pytest.raises(ValidationError):
            sio.read_design(tmp_path / "d.txt", panel)


def _dataset(seed=0):
    rng = np.random.default_rng(seed)
    panel = ProteinPanel(("A", "B", "C"))
    design = InterventionDesign([Condition("g"), Condition("i", {1: "inhibit"})])
    return Dataset(panel, design, [rng.normal(size=(4, 3)) * 1e3, rng.normal(size=(2, 3)) / 7])


def test_dataset_round_trip_is_bit_exact(tmp_path):
    data = _dataset()
    sio.write_dataset(data, tmp_path / "d.csv")
    assert (tmp_path / "d.design.txt").exists()
    back = sio.load_dataset(tmp_path / "d.csv")
    for a, b in zip(data.blocks, back.blocks):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("bad, msg", [
    ("g,1,2", "row 3 has 3 fields"),
    ("g,1,,3", "row 3: missing value for B"),
    ("g,1,x,3", "row 3: non-numeric"),
    ("g,1,nan,3", "row 3: non-finite"),
    ("q,1,2,3", "row 3: unknown condition"),
])
def test_dataset_errors_name_the_row(tmp_path, bad, msg):
    sio.write_dataset(_dataset(), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines.insert(2, bad)
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match=msg):
        sio.load_dataset(tmp_path / "d.csv")


def test_dataset_missing_sidecar(tmp_path):
    (tmp_path / "d.csv").write_text("condition,A,B\ng,1,2\n")
    with pytest.raises(sio.InputOutputError):
        sio.load_dataset(tmp_path / "d.csv")


def _summary():
    w = np.array([[np.nan, 0.7, 0.2], [0.7, np.nan, 0.9], [0.2, 0.9, np.nan]])
    wc = np.stack([w, w * 0.5])
    r = RunSummary(w_overall=w, w_pair=w, w_condition=wc, n_draws=10, seed=123)
    return PosteriorSummary(["A", "B", "C"], ["g", "i"], "hm", [r, r], r, meta={"seed": 1})


def test_summary_round_trip(tmp_path):
    s = _summary()
    sio.save_summary(s, tmp_path / "s.json")
    back = sio.load_summary(tmp_path / "s.json")
    assert back.names == s.names and back.model == "hm" and back.meta == {"seed": 1}
    np.testing.assert_array_equal(back.runs[0].w_condition, s.runs[0].w_condition)
    assert sio.summary_to_json(back) == sio.summary_to_json(s)


def test_summary_version_checked(tmp_path):
    sio.save_summary(_summary(), tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="version"):
        sio.load_summary(tmp_path / "s.json")


def test_sorted_w(tmp_path):
    main, comp = sio.emit_sorted_w(_summary(), tmp_path / "w.csv")
    rows = sio.read_sorted_w(main)
    assert [r[2] for r in rows] == sorted(r[2] for r in rows) == [0.2, 0.7, 0.9]
    assert comp.name == "w_conditions.csv"
    assert len(comp.read_text().splitlines()) == 1 + 6 * 2


def test_partial_graph_formats(tmp_path):
    g = PartialGraph(("A", "B", "C"), [(0, 1)], [(1, 2)])
    sio.write_partial_graph(g, tmp_path / "g.txt")
    back = sio.read_partial_graph(tmp_path / "g.txt")
    assert back.states() == g.states()
    (tmp_path / "dec.csv").write_text(
        "protein_i,protein_j,w_hat,verdict\nA,B,0.9,reverse\nB,C,0.8,undetermined\n")
    d = sio.read_partial_graph(tmp_path / "dec.csv", names=("A", "B", "C"))
    assert d.states() == {(0, 1): "b->a", (1, 2): "undirected"}
    with pytest.raises(ValidationError):
        sio.read_partial_graph(tmp_path / "g.txt", names=("A", "B", "D"))


def test_config_hash_ignores_key_order():
    assert sio.config_hash({"a": 1, "b": [1.0, 2]}) == sio.config_hash({"b": [1.0, 2], "a": 1})
    assert sio.config_hash({"a": 1}) != sio.config_hash({"a": 2})


def test_config_must_be_mapping(tmp_path):
    (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ValidationError):
        sio.load_config(tmp_path / "c.yaml")
