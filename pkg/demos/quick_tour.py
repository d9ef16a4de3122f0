"""A five-minute tour: simulate the shipped network, fit hm, call directions, score.

Run from the repository root:  python demos/quick_tour.py
"""

from sigpath import io as sio
from sigpath.evaluation import classify_edges
from sigpath.inference import Thresholds, detect_jump, infer_network, to_dot
from sigpath.model import Hyperparameters, ProteinPanel
from sigpath.sampler import SamplerConfig, run_chains, summarize
from sigpath.simulate import SimConfig, simulate_study

net = sio.load_network(sio.shipped("figure1_network.txt"), seed=11)
design = sio.read_design(sio.shipped("table1_design.txt"), ProteinPanel(net.names))
study = simulate_study(net, design, SimConfig(seed=11))
print(f"{design.size} conditions x {study.dataset.blocks[0].shape[0]} cells, {net.n_nodes} proteins")

# short chains; the full study uses 200k iterations per chain
cfg = SamplerConfig(iterations=15_000, burn_in=3_000, thin=10, n_chains=3, seed=5,
                    fix_sigma_m=1e-3, keep_draws=False)
summary = summarize(run_chains(study.dataset, Hyperparameters(), cfg, "hm"))

scores = sorted(w for _, _, w in summary.pair_scores())
jump = detect_jump(scores)
print("sorted w:", " ".join(f"{w:.2f}" for w in scores[-25:]))
print(f"suggested u1 {jump.threshold:.3f} (gap {jump.gap:.3f}{', low confidence' if jump.low_confidence else ''})")

inferred = infer_network(summary, design, Thresholds(u1=jump.threshold))
print(classify_edges(inferred, net).table("hm"))
print(to_dot(inferred))
