"""Domain types and exact log-densities for the hierarchical regression models.

Three model families share one parameterisation:

* ``hm``  -- hierarchical model. Every condition ``k`` has its own intercepts
  ``alpha_i0^(k)``, coefficients ``alpha_ij^(k)`` and inclusion indicators
  ``z_ij^(k)``. Included coefficients share a slab ``N(alpha_ij, 1/lambda_ij)``
  across conditions and the indicators share an overall inclusion probability
  ``w_ij``. The condition-level probabilities ``w_ij^(k) ~ Beta(w v, (1-w) v)``
  are integrated out analytically, which makes ``z_ij^(k) | w_ij`` iid
  Bernoulli.
* ``rhm`` -- restricted hierarchical model. ``w_ij = w_ji`` and
  ``w_ij^(k) = w_ji^(k)``. After integrating ``w^(k)`` out the two indicators
  of a pair in a condition follow a beta-binomial law, so ``v`` matters.
* ``nhm`` -- pooled model with condition-free coefficients and a direct
  ``N(a_i, tau_i)`` slab.

The latent true activities ``xt`` enter through the product of per-protein
structural regressions times the Gaussian measurement layer
``x = xt + N(0, 1/psi)``. :func:`log_prior` plus the sum of
:func:`log_likelihood_block` over all blocks is the log target every sampler
kernel is checked against.

Precisions use Gamma priors in the shape-rate parameterisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ValidationError

MODELS = ("hm", "rhm", "nhm")
MODES = ("inhibit", "activate", "general")


@dataclass(frozen=True)
class ProteinPanel:
    names: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValidationError("a panel needs at least two proteins")
        if any(not n.strip() for n in names):
            raise ValidationError("protein names must be non-empty")
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate protein names in {names}")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.size:
                raise ValidationError(f"protein index {name} out of range")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown protein {name!r}") from None


@dataclass
class Condition:
    """One experimental condition.

    ``targets`` maps protein index to ``"inhibit"`` or ``"activate"``; a
    general stimulation has no targets.
    """

    label: str
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.targets = {int(i): m for i, m in self.targets.items()}
        for i, mode in self.targets.items():
            if mode not in ("inhibit", "activate"):
                raise ValidationError(f"condition {self.label!r}: bad mode {mode!r} for target {i}")

    @property
    def is_general(self) -> bool:
        return not self.targets


@dataclass
class InterventionDesign:
    conditions: list

    def __post_init__(self):
        if len(self.conditions) < 1:
            raise ValidationError("a design needs at least one condition")
        labels = [c.label for c in self.conditions]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate condition labels in {labels}")

    @property
    def size(self) -> int:
        return len(self.conditions)

    @property
    def labels(self) -> list:
        return [c.label for c in self.conditions]

    def validate_for(self, n_proteins: int):
        for c in self.conditions:
            for i in c.targets:
                if not 0 <= i < n_proteins:
                    raise ValidationError(f"condition {c.label!r} targets protein {i}, panel has {n_proteins}")

    def controlled(self, i: int) -> set:
        """Conditions in which protein ``i`` is a named target."""
        return {k for k, c in enumerate(self.conditions) if i in c.targets}

    def perturbed(self, i: int, j: int) -> set:
        """``S_{i,j}``: conditions in which ``i`` or ``j`` is a named target."""
        return self.controlled(i) | self.controlled(j)


@dataclass
class Dataset:
    """Measured activities grouped by condition.

    ``blocks[k]`` is an ``(N_k, P)`` array of cells by proteins.
    """

    panel: ProteinPanel
    design: InterventionDesign
    blocks: list

    def __post_init__(self):
        self.blocks = [np.ascontiguousarray(b, dtype=float) for b in self.blocks]
        P = self.panel.size
        if len(self.blocks) != self.design.size:
            raise ValidationError(f"{len(self.blocks)} blocks for {self.design.size} conditions")
        self.design.validate_for(P)
        for k, b in enumerate(self.blocks):
            if b.ndim != 2 or b.shape[1] != P:
                raise ValidationError(f"block {k} has shape {b.shape}, expected (N_k, {P})")
            if b.shape[0] < 1:
                raise ValidationError(f"block {k} ({self.design.labels[k]!r}) has no cells")
            if not np.all(np.isfinite(b)):
                raise ValidationError(f"block {k} contains non-finite values")

    @property
    def n_proteins(self) -> int:
        return self.panel.size

    @property
    def n_conditions(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.shape[0] for b in self.blocks], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        """Start index of each block in the stacked cell axis, plus the total."""
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    def stacked(self) -> np.ndarray:
        """All cells as a C-contiguous ``(P, N)`` array, blocks in design order."""
        return np.ascontiguousarray(np.concatenate(self.blocks, axis=0).T)

    def standardized(self) -> Dataset:
        """Global per-protein z-scoring over all conditions pooled.

        Centering within a condition would erase the shifts that interventions
        induce, so the location and scale are computed on the pooled cells.
        """
        pooled = np.concatenate(self.blocks, axis=0)
        mu = pooled.mean(axis=0)
        sd = pooled.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset(self.panel, self.design, [(b - mu) / sd for b in self.blocks])


@dataclass
class Hyperparameters:
    """Prior settings.

    ``tau`` is read as the *variance* of the slab-mean prior ``N(a_i, tau_i)``
    unless ``tau_is_variance`` is False, in which case it is a standard
    deviation. The pooled model uses the same variance for its slab.
    """

    beta1: float = 1.0
    beta2: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    gamma4: float = 1.0
    gamma5: float = 1.0
    gamma6: float = 1.0
    a: object = 0.0
    tau: object = 1000.0
    v: float = 0.1
    intercept_prior_sd: float = math.sqrt(1000.0)
    tau_is_variance: bool = True

    def __post_init__(self):
        for name in ("beta1", "beta2", "gamma1", "gamma2", "gamma3", "gamma4",
                     "gamma5", "gamma6", "v", "intercept_prior_sd"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValidationError(f"hyperparameter {name} must be positive, got {val}")
        if np.any(~np.isfinite(np.asarray(self.a, dtype=float))):
            raise ValidationError("hyperparameter a must be finite")
        tau = np.asarray(self.tau, dtype=float)
        if np.any(~(tau > 0)) or np.any(~np.isfinite(tau)):
            raise ValidationError("hyperparameter tau must be positive")

    def a_vector(self, P: int) -> np.ndarray:
        return _broadcast(self.a, P, "a")

    def slab_mean_variance(self, P: int) -> np.ndarray:
        tau = _broadcast(self.tau, P, "tau")
        return tau if self.tau_is_variance else tau ** 2

    def as_dict(self) -> dict:
        out = {}
        for k, val in self.__dict__.items():
            out[k] = np.asarray(val).tolist() if isinstance(val, np.ndarray) else val
        return out


def _broadcast(value, P, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(P, float(arr))
    if arr.shape != (P,):
        raise ValidationError(f"hyperparameter {name} has shape {arr.shape}, expected ({P},)")
    return arr.copy()


def n_groups(model: str, n_conditions: int) -> int:
    """Number of coefficient sets: one per condition, or one when pooled."""
    check_model(model)
    return 1 if model == "nhm" else n_conditions


def group_of(model: str, k: int) -> int:
    return 0 if model == "nhm" else k


def check_model(model: str):
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass
class ChainState:
    """All latent quantities of one chain.

    Shapes, with ``G`` coefficient groups (``K`` for hm/rhm, 1 for nhm) and
    ``N`` stacked cells:

    ``intercept (G, P)``, ``coef (G, P, P)`` with ``coef[g, i, j]`` the effect
    of protein ``j`` in the regression of protein ``i``, ``z (G, P, P)``,
    ``w (P, P)``, ``slab_mean (P, P)``, ``slab_prec (P, P)``, ``phi (P, K)``
    intrinsic precisions, ``psi`` measurement precision, ``xt (P, N)``.

    Under rhm only the upper triangle of ``w`` is stored; the lower triangle is
    NaN so the single slot per unordered pair cannot drift. ``mask[i, j]``
    marks which predictors may enter regression ``i`` (all off-diagonal pairs
    by default).
    """

    model: str
    intercept: np.ndarray
    coef: np.ndarray
    z: np.ndarray
    w: np.ndarray
    slab_mean: np.ndarray
    slab_prec: np.ndarray
    phi: np.ndarray
    psi: float
    xt: np.ndarray
    mask: np.ndarray
    varying_variance: bool = False

    @property
    def n_proteins(self) -> int:
        return self.coef.shape[1]

    @property
    def n_groups(self) -> int:
        return self.coef.shape[0]

    @property
    def n_conditions(self) -> int:
        return self.phi.shape[1]

    def copy(self) -> ChainState:
        return ChainState(
            self.model, self.intercept.copy(), self.coef.copy(), self.z.copy(), self.w.copy(),
            self.slab_mean.copy(), self.slab_prec.copy(), self.phi.copy(), float(self.psi),
            self.xt.copy(), self.mask.copy(), self.varying_variance,
        )

    def w_of(self, i: int, j: int) -> float:
        """Overall inclusion probability of ``j`` in regression ``i``."""
        if self.model == "rhm":
            i, j = min(i, j), max(i, j)
        return float(self.w[i, j])

    def w_ordered(self) -> np.ndarray:
        """``(P, P)`` matrix of ``w_ij`` with the rhm slot mirrored."""
        if self.model != "rhm":
            return self.w.copy()
        up = np.triu(np.nan_to_num(self.w), 1)
        out = up + up.T
        np.fill_diagonal(out, np.nan)
        return out

    def latent_block(self, data: Dataset, k: int) -> np.ndarray:
        off = data.offsets
        return self.xt[:, off[k]:off[k + 1]].T

    def validate(self, data: Dataset | None = None):
        check_model(self.model)
        G, P, P2 = self.coef.shape
        K = self.phi.shape[1]
        if P != P2 or self.z.shape != self.coef.shape or self.intercept.shape != (G, P):
            raise ValidationError("inconsistent coefficient shapes")
        if self.phi.shape[0] != P or self.mask.shape != (P, P):
            raise ValidationError("inconsistent precision or mask shapes")
        if G != n_groups(self.model, K):
            raise ValidationError(f"{G} coefficient groups for model {self.model} with {K} conditions")
        if np.any(np.diagonal(self.coef, axis1=1, axis2=2) != 0) or np.any(np.diagonal(self.z, axis1=1, axis2=2)):
            raise ValidationError("self-regression coefficients must be zero")
        if np.any((self.coef != 0) != self.z.astype(bool)):
            raise ValidationError("coefficients must be nonzero exactly where indicators are set")
        if np.any(self.z.astype(bool) & ~self.mask[None]):
            raise ValidationError("indicator set on a masked pair")
        if not (np.all(self.phi > 0) and np.all(np.isfinite(self.phi)) and self.psi > 0 and np.isfinite(self.psi)):
            raise ValidationError("precisions must be positive and finite")
        for i, j in allowed_pairs(self.mask, self.model):
            w = self.w_of(i, j)
            if not 0 < w < 1:
                raise ValidationError(f"w[{i},{j}]={w} outside (0, 1)")
        for arr, name in ((self.intercept, "intercept"), (self.coef, "coef"), (self.xt, "latent")):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite {name}")
        if data is not None:
            if data.n_proteins != P or data.n_conditions != K:
                raise ValidationError("state dimensions do not match the dataset")
            if self.xt.shape != (P, int(data.sizes.sum())):
                raise ValidationError(f"latent array shape {self.xt.shape} does not match the dataset")


def default_mask(P: int) -> np.ndarray:
    m = np.ones((P, P), dtype=bool)
    np.fill_diagonal(m, False)
    return m


def allowed_pairs(mask: np.ndarray, model: str):
    """Ordered pairs (hm/nhm) or unordered ``i < j`` pairs (rhm) carrying a ``w``."""
    P = mask.shape[0]
    if model == "rhm":
        return [(i, j) for i in range(P) for j in range(i + 1, P) if mask[i, j] or mask[j, i]]
    return [(i, j) for i in range(P) for j in range(P) if i != j and mask[i, j]]


def wcond_posterior_params(w: float, v: float, included, trials: int = 1):
    """Beta parameters of ``w_ij^(k)`` given ``w_ij`` and the indicators.

    ``included`` is a boolean for one indicator, or the number of set
    indicators out of ``trials`` when a pair shares ``w^(k)`` (rhm).

    >>> wcond_posterior_params(0.9, 0.1, True)
    (1.09, 0.01)
    """
    if not 0 < w < 1:
        raise ValidationError(f"w must lie in (0, 1), got {w}")
    if not v > 0:
        raise ValidationError(f"v must be positive, got {v}")
    s = int(included)
    if not 0 <= s <= trials:
        raise ValidationError(f"{s} inclusions out of {trials} trials")
    return w * v + s, (1.0 - w) * v + (trials - s)


def log_likelihood_block(state: ChainState, data: Dataset, protein: int, condition: int) -> float:
    """Structural plus measurement log-density of one protein in one block."""
    _check_dims(state, data)
    i, k = protein, condition
    if not (0 <= i < data.n_proteins and 0 <= k < data.n_conditions):
        raise ValidationError(f"(protein, condition)=({i}, {k}) out of range")
    g = group_of(state.model, k)
    xt = state.latent_block(data, k)
    x = data.blocks[k]
    if not (np.all(np.isfinite(xt)) and np.all(np.isfinite(state.coef[g]))):
        raise ValidationError("non-finite latent activities or coefficients")
    mean = state.intercept[g, i] + xt @ state.coef[g, i, :]
    sd_struct = 1.0 / math.sqrt(state.phi[i, k])
    sd_meas = 1.0 / math.sqrt(state.psi)
    struct = stats.norm.logpdf(xt[:, i], mean, sd_struct).sum()
    meas = stats.norm.logpdf(x[:, i], xt[:, i], sd_meas).sum()
    return float(struct + meas)


def log_prior(state: ChainState, hp: Hyperparameters) -> float:
    """Joint log prior with the condition-level probabilities integrated out."""
    state.validate()
    P, G, K = state.n_proteins, state.n_groups, state.n_conditions
    a = hp.a_vector(P)
    V = hp.slab_mean_variance(P)
    v = hp.v
    z = state.z.astype(bool)
    lp = 0.0

    def slab_term(i, j):
        # included coefficients only; excluded ones sit on the point mass
        out = 0.0
        if state.model == "nhm":
            m, sd = a[i], math.sqrt(V[i])
        else:
            m, sd = state.slab_mean[i, j], 1.0 / math.sqrt(state.slab_prec[i, j])
        for g in range(G):
            if z[g, i, j]:
                out += stats.norm.logpdf(state.coef[g, i, j], m, sd)
        return out

    def slab_hyper(i, j):
        return (stats.norm.logpdf(state.slab_mean[i, j], a[i], math.sqrt(V[i]))
                + stats.gamma.logpdf(state.slab_prec[i, j], hp.gamma3, scale=1.0 / hp.gamma4))

    for i, j in allowed_pairs(state.mask, state.model):
        w = state.w_of(i, j)
        lp += stats.beta.logpdf(w, hp.beta1, hp.beta2)
        if state.model == "rhm":
            dirs = [(r, c) for r, c in ((i, j), (j, i)) if state.mask[r, c]]
            t = len(dirs)
            for g in range(G):
                s = sum(int(z[g, r, c]) for r, c in dirs)
                lp += special.betaln(w * v + s, (1 - w) * v + t - s) - special.betaln(w * v, (1 - w) * v)
            for r, c in dirs:
                lp += slab_term(r, c) + slab_hyper(r, c)
        else:
            s = int(z[:, i, j].sum())
            lp += s * math.log(w) + (G - s) * math.log1p(-w)
            lp += slab_term(i, j)
            if state.model == "hm":
                lp += slab_hyper(i, j)

    lp += stats.norm.logpdf(state.intercept, 0.0, hp.intercept_prior_sd).sum()
    phis = state.phi if state.varying_variance else state.phi[:, :1]
    lp += stats.gamma.logpdf(phis, hp.gamma1, scale=1.0 / hp.gamma2).sum()
    lp += stats.gamma.logpdf(state.psi, hp.gamma5, scale=1.0 / hp.gamma6)
    if not np.isfinite(lp):
        raise ValidationError("log prior is not finite; parameters out of range")
    return float(lp)


def log_joint(state: ChainState, data: Dataset, hp: Hyperparameters) -> float:
    """Unnormalised log posterior: prior plus every likelihood block."""
    total = log_prior(state, hp)
    for k in range(data.n_conditions):
        for i in range(data.n_proteins):
            total += log_likelihood_block(state, data, i, k)
    return total


def _check_dims(state, data):
    if state.n_proteins != data.n_proteins or state.n_conditions != data.n_conditions:
        raise ValidationError("state dimensions do not match the dataset")
    if state.xt.shape != (data.n_proteins, int(data.sizes.sum())):
        raise ValidationError("latent array does not match the dataset")
    if state.n_groups != n_groups(state.model, data.n_conditions):
        raise ValidationError("coefficient groups do not match model and dataset")
