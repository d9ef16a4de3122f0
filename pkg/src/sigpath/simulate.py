"""Ground-truth networks and interventional single-cell data.

Every random quantity comes from its own ``SeedSequence`` substream keyed by
(purpose, condition, node), so regenerating one part of a study never shifts
the draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from graphlib import CycleError as _GraphCycle, TopologicalSorter

import numpy as np

from .errors import CycleError, ValidationError
from .model import Condition, Dataset, InterventionDesign, ProteinPanel

REGIMES = ("constant", "variable", "heavy_tail", "variable_heavy_tail")
_ALIASES = {"heavy": "heavy_tail", "t": "heavy_tail", "variable_heavy": "variable_heavy_tail"}

# substream purposes
_POOL, _COND, _MEAS, _COEF, _SD = 0, 1, 2, 3, 4


def canonical_regime(regime: str) -> str:
    r = _ALIASES.get(regime, regime)
    if r not in REGIMES:
        raise ValidationError(f"unknown noise regime {regime!r}; expected one of {REGIMES}")
    return r


def _stream(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _child_seed(seed, *key) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class TrueNetwork:
    """Directed acyclic network with linear-Gaussian structural equations.

    ``coef[i, j]`` is the effect of parent ``j`` on child ``i``.
    """

    names: tuple
    edges: list
    coef: np.ndarray
    intercept: np.ndarray = None
    intrinsic_sd: np.ndarray = None

    def __post_init__(self):
        self.names = tuple(ProteinPanel(self.names).names)
        P = len(self.names)
        self.edges = [(int(p), int(c)) for p, c in self.edges]
        self.coef = np.asarray(self.coef, dtype=float)
        self.intercept = np.zeros(P) if self.intercept is None else np.asarray(self.intercept, dtype=float)
        self.intrinsic_sd = np.ones(P) if self.intrinsic_sd is None else np.asarray(self.intrinsic_sd, dtype=float)
        if self.coef.shape != (P, P) or self.intercept.shape != (P,) or self.intrinsic_sd.shape != (P,):
            raise ValidationError("coefficient, intercept or sd arrays do not match the node count")
        if len(set(self.edges)) != len(self.edges):
            raise ValidationError("duplicate edges")
        on_edge = np.zeros((P, P), dtype=bool)
        for p, c in self.edges:
            if not (0 <= p < P and 0 <= c < P):
                raise ValidationError(f"edge ({p}, {c}) out of range")
            if p == c:
                raise ValidationError(f"self-loop on {self.names[p]}")
            on_edge[c, p] = True
        if np.any(self.coef[on_edge] == 0) or np.any(self.coef[~on_edge] != 0):
            raise ValidationError("coefficients must be nonzero exactly on edges")
        if not np.all(self.intrinsic_sd > 0):
            raise ValidationError("intrinsic sds must be positive")
        self._order = topological_order(P, self.edges, self.names)

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def order(self) -> list:
        return list(self._order)

    def parents(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.coef[i])

    def adjacency(self) -> np.ndarray:
        """Boolean ``A[parent, child]``."""
        return self.coef.T != 0


def topological_order(P, edges, names=None) -> list:
    ts = TopologicalSorter({i: set() for i in range(P)})
    for p, c in edges:
        ts.add(c, p)
    try:
        return list(ts.static_order())
    except _GraphCycle as exc:
        cyc = exc.args[1]
        if names is not None:
            cyc = [names[i] for i in cyc]
        raise CycleError(f"network contains a cycle: {' -> '.join(map(str, cyc))}") from None


def generate_coefficients(names, edges, seed, low=0.5, high=2.0) -> TrueNetwork:
    """Random structural coefficients: ``|alpha| ~ U[low, high]`` with a fair random sign."""
    names = tuple(names)
    P = len(names)
    topological_order(P, [(int(p), int(c)) for p, c in edges], names)
    rng = _stream(seed, _COEF)
    coef = np.zeros((P, P))
    for p, c in edges:
        mag = rng.uniform(low, high)
        coef[c, p] = mag if rng.random() < 0.5 else -mag
    return TrueNetwork(names, list(edges), coef)


def draw_intrinsic_sd(P, regime, seed) -> np.ndarray:
    """1 for the constant regimes; ``0.1 * sqrt(IG(2, 1))`` for the variable ones."""
    regime = canonical_regime(regime)
    if not regime.startswith("variable"):
        return np.ones(P)
    rng = _stream(seed, _SD)
    ig = 1.0 / rng.gamma(2.0, 1.0, size=P)  # inverse gamma, shape 2, scale 1
    return 0.1 * np.sqrt(ig)


@dataclass
class SimConfig:
    cells_per_condition: int = 600
    regime: str = "constant"
    sigma_m: float = 0.1
    low_quantile: float = 0.05
    high_quantile: float = 0.95
    pool_size: int = 10_000
    seed: int = 0

    def __post_init__(self):
        self.regime = canonical_regime(self.regime)
        if self.cells_per_condition < 1:
            raise ValidationError("cells_per_condition must be positive")
        if not self.sigma_m > 0:
            raise ValidationError("sigma_m must be positive")
        if not (0 < self.low_quantile < 1 and 0 < self.high_quantile < 1):
            raise ValidationError("tail quantiles must lie in (0, 1)")
        if self.low_quantile >= self.high_quantile:
            raise ValidationError("low quantile must be below the high quantile")
        if self.pool_size < 1000:
            raise ValidationError("pool_size must be at least 1000")


def _noise(rng, n, regime):
    if regime.endswith("heavy_tail"):
        return rng.standard_t(1, size=n)
    return rng.standard_normal(n)


def _structural(net, n, regime, seed, clamped=None):
    """Sample ``(n, P)`` true activities; ``clamped`` maps node -> fixed values."""
    regime = canonical_regime(regime)
    clamped = clamped or {}
    xt = np.zeros((n, net.n_nodes))
    for i in net.order:
        if i in clamped:
            xt[:, i] = clamped[i]
            continue
        eps = net.intrinsic_sd[i] * _noise(_stream(seed, _COND, i), n, regime)
        xt[:, i] = net.intercept[i] + xt @ net.coef[i] + eps
    return xt


def simulate_observational(net: TrueNetwork, n_cells: int, regime: str, seed) -> np.ndarray:
    """``(n_cells, P)`` true activities with no intervention."""
    if n_cells < 1:
        raise ValidationError("n_cells must be positive")
    return _structural(net, n_cells, regime, seed)


@dataclass
class EmpiricalPools:
    """Sorted unperturbed activities per protein."""

    values: np.ndarray  # (P, pool_size), each row sorted

    def cutoffs(self, i, low=0.05, high=0.95):
        return tail_cutoffs(self.values[i], low, high)


def tail_cutoffs(pool, low=0.05, high=0.95):
    """Order-statistic cutoffs: the pool {1..100} has 5th-percentile cutoff 5."""
    pool = np.asarray(pool, dtype=float)
    if not 0 < low < high < 1:
        raise ValidationError("need 0 < low < high < 1")
    lo, hi = np.quantile(pool, [low, high], method="inverted_cdf")
    return float(lo), float(hi)


def build_empirical_pools(net: TrueNetwork, config: SimConfig) -> EmpiricalPools:
    if config.pool_size < 1000:
        raise ValidationError("pool_size must be at least 1000")
    xt = _structural(net, config.pool_size, config.regime, _child_seed(config.seed, _POOL))
    return EmpiricalPools(np.sort(xt.T, axis=1))


def _tail_draw(pool_row, mode, n, cfg, rng):
    lo, hi = tail_cutoffs(pool_row, cfg.low_quantile, cfg.high_quantile)
    members = pool_row[pool_row <= lo] if mode == "inhibit" else pool_row[pool_row >= hi]
    return members[rng.integers(0, members.size, size=n)]


def simulate_condition(net: TrueNetwork, pools: EmpiricalPools, condition: Condition,
                       config: SimConfig, seed=None):
    """One block: returns ``(x, xt)``, both ``(cells, P)``.

    Targets are clamped to uniform draws from the pool tail beyond the
    configured quantile; every other node follows its structural equation.
    """
    seed = config.seed if seed is None else seed
    P, n = net.n_nodes, config.cells_per_condition
    clamped = {}
    for i, mode in condition.targets.items():
        if not 0 <= i < P:
            raise ValidationError(f"condition {condition.label!r} targets unknown node {i}")
        clamped[i] = _tail_draw(pools.values[i], mode, n, config, _stream(seed, _POOL, i))
    xt = _structural(net, n, config.regime, seed, clamped)
    x = xt + config.sigma_m * _stream(seed, _MEAS).standard_normal(xt.shape)
    return x, xt


@dataclass
class Study:
    dataset: Dataset
    latent: list
    network: TrueNetwork
    config: SimConfig
    extras: dict = field(default_factory=dict)


def simulate_study(net: TrueNetwork, design: InterventionDesign, config: SimConfig) -> Study:
    """One block of ``cells_per_condition`` cells per condition of ``design``.

    Under a variable regime the network's intrinsic sds are redrawn from the
    seed before anything else is simulated.
    """
    design.validate_for(net.n_nodes)
    if config.regime.startswith("variable"):
        net = replace(net, intrinsic_sd=draw_intrinsic_sd(net.n_nodes, config.regime, config.seed))
    pools = build_empirical_pools(net, config)
    xs, xts = [], []
    for k, cond in enumerate(design.conditions):
        x, xt = simulate_condition(net, pools, cond, config, seed=_child_seed(config.seed, _COND, k))
        xs.append(x)
        xts.append(xt)
    data = Dataset(ProteinPanel(net.names), design, xs)
    return Study(dataset=data, latent=xts, network=net, config=config, extras={"pools": pools})
