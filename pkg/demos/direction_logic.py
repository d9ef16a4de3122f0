"""How interventions turn per-condition inclusion probabilities into directions.

No sampling here: the per-condition scores are written by hand so each case
of the decision rule can be seen in isolation.
"""

import numpy as np

from sigpath import io as sio
from sigpath.inference import Thresholds, case_of, classify_direction
from sigpath.model import ProteinPanel
from sigpath.sampler import RunSummary

names = ("Raf", "Mek", "Plcg", "PIP2", "PIP3", "Erk", "Akt", "PKA", "PKC", "P38", "Jnk")
design = sio.read_design(sio.shipped("table1_design.txt"), ProteinPanel(names))
th = Thresholds()


def show(i, j, edit):
    wc = np.full((design.size, 11, 11), 0.9)
    edit(wc)
    run = RunSummary(w_overall=np.full((11, 11), 0.9), w_pair=np.full((11, 11), 0.9), w_condition=wc, n_draws=1)
    d = classify_direction((i, j), run, design, th, "hm")
    streams = ", ".join(f"{s.name}={s.verdict}" for s in d.streams)
    print(f"{names[i]:>5} - {names[j]:<5} case {d.case}: {d.verdict:<12} [{streams}]")


pip3, akt, erk, pka, raf, mek = (names.index(n) for n in ("PIP3", "Akt", "Erk", "PKA", "Raf", "Mek"))
akt_off = [k for k, c in enumerate(design.conditions) if akt in c.targets]


def akt_drop(wc):
    for k in akt_off:
        wc[k, pip3, akt] = wc[k, akt, pip3] = 0.05


def one_stream_drops(wc):
    for k in akt_off:
        wc[k, akt, erk] = 0.0


def pka_drop(wc):
    wc[-1, akt, pka] = wc[-1, pka, akt] = 0.1


print("cases on the 9-condition design")
for i, j in [(raf, mek), (pip3, akt), (akt, pka), (names.index("Plcg"), pip3)]:
    print(f"  {names[i]}-{names[j]}: case {case_of(i, j, design)}")
print()
show(pip3, akt, akt_drop)          # both streams drop when Akt is inhibited
show(erk, akt, one_stream_drops)   # streams disagree
show(raf, mek, lambda wc: None)    # Mek controlled, nothing drops: Mek is upstream
show(akt, pka, pka_drop)           # both controlled, only PKA's control matters
