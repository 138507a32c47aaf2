"""Trial-proposal strategies behind a single ask/tell contract.

Identical (seed, space, tell sequence) gives an identical ask sequence for
every sampler; resuming a study replays asks and tells, which restores both
the history and the generator state.  Method choice is itself a top-level
categorical dimension; per-method parameters are sampled only for the chosen
method.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .searchspace import UNBOUNDED, ConfigError, MethodSpace, ParamDef, StudySpec, TrialConfig, validate

__all__ = [
    "Exhausted",
    "TrialOutcome",
    "Sampler",
    "RandomSampler",
    "BruteForceSampler",
    "TPESampler",
    "NSGAIISampler",
    "make_sampler",
    "tpe_split",
    "tpe_propose",
    "nondominated_sort",
    "crowding_distance",
    "nsga2_step",
]

TPE_GAMMA = 0.25
TPE_CANDIDATES = 24
NSGA2_CROSSOVER_PROB = 0.9
WORST_OBJECTIVE = -1e18  # stands in for failed trials during selection


class Exhausted(Exception):
    """A finite space has been fully enumerated; the study stops early."""


@dataclass(frozen=True)
class TrialOutcome:
    """One history entry: what was asked and how it scored."""

    config: TrialConfig
    objectives: tuple[float, ...] | None
    pruned: bool = False
    failed: bool = False


class Sampler:
    """Base ask/tell sampler over a study's conditional space."""

    def __init__(self, spec: StudySpec, seed: int | None = None):
        self.spec = spec
        self.seed = spec.sampler.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.history: list[TrialOutcome] = []
        self._arity = 2 if spec.multi_objective else 1

    def ask(self) -> TrialConfig:
        raise NotImplementedError

    def tell(self, config: TrialConfig, objectives, pruned: bool = False, failed: bool = False) -> None:
        if objectives is not None:
            objectives = tuple(float(v) for v in objectives)
            if len(objectives) != self._arity:
                raise ValueError(f"objective arity {len(objectives)} != study arity {self._arity}")
        self.history.append(TrialOutcome(config, objectives, pruned=pruned, failed=failed))

    # ------------------------------------------------------------ utilities
    def _uniform_param(self, p: ParamDef):
        size = p.grid_size()
        if size is UNBOUNDED:
            return float(self.rng.uniform(p.low, p.high))
        return p.value_at(int(self.rng.integers(size)))

    def _uniform_config(self) -> TrialConfig:
        ms = self.spec.methods[int(self.rng.integers(len(self.spec.methods)))]
        params = {p.name: self._uniform_param(p) for p in ms.params}
        norm = self._uniform_normalization()
        return TrialConfig(ms.method, params, normalization=norm, granularity=self.spec.granularity)

    def _uniform_normalization(self) -> str:
        if self.spec.search_normalizations:
            return self.spec.normalizations[int(self.rng.integers(len(self.spec.normalizations)))]
        return self.spec.fixed_normalization


class RandomSampler(Sampler):
    """Uniform draws over the conditional space."""

    def ask(self) -> TrialConfig:
        return self._uniform_config()


class BruteForceSampler(Sampler):
    """Deterministic enumeration of a finite space, each point exactly once."""

    def __init__(self, spec: StudySpec, seed: int | None = None):
        super().__init__(spec, seed)
        self._points = list(_enumerate_space(spec))
        self._cursor = 0

    def ask(self) -> TrialConfig:
        if self._cursor >= len(self._points):
            raise Exhausted(f"all {len(self._points)} configurations enumerated")
        point = self._points[self._cursor]
        self._cursor += 1
        return point


def _enumerate_space(spec: StudySpec):
    norms = spec.normalizations if spec.search_normalizations else (spec.fixed_normalization,)
    for ms in spec.methods:
        grids = []
        for p in ms.params:
            if p.grid_size() is UNBOUNDED:
                raise ConfigError(f"{ms.method}.{p.name}: cannot enumerate a stepless float range")
            grids.append(p.grid_values())
        for combo in itertools.product(*grids):
            params = {p.name: v for p, v in zip(ms.params, combo)}
            for norm in norms:
                yield TrialConfig(ms.method, params, normalization=norm, granularity=spec.granularity)


# ------------------------------------------------------------------- TPE

def nondominated_sort(points) -> list[list[int]]:
    """Indices grouped into fronts; p dominates q iff >= everywhere, > somewhere."""
    pts = [tuple(p) for p in points]
    n = len(pts)

    def dominates(a, b):
        return all(x >= y for x, y in zip(pts[a], pts[b])) and any(x > y for x, y in zip(pts[a], pts[b]))

    dominated_by = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(p, q):
                dominated_by[p].append(q)
            elif dominates(q, p):
                domination_count[p] += 1
        if domination_count[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                domination_count[q] -= 1
                if domination_count[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    fronts.pop()
    return fronts


def crowding_distance(front_points) -> list[float]:
    """Per-point crowding distance; boundary points are infinite."""
    pts = [tuple(p) for p in front_points]
    n = len(pts)
    if n == 0:
        return []
    dist = [0.0] * n
    n_obj = len(pts[0])
    for m in range(n_obj):
        order = sorted(range(n), key=lambda i: pts[i][m])
        lo, hi = pts[order[0]][m], pts[order[-1]][m]
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for k in range(1, n - 1):
            if math.isinf(dist[order[k]]):
                continue
            dist[order[k]] += (pts[order[k + 1]][m] - pts[order[k - 1]][m]) / (hi - lo)
    return dist


def tpe_split(history: list[TrialOutcome], gamma: float = TPE_GAMMA, multi_objective: bool = False):
    """Partition scored history into (good, bad) observation sets.

    Single-objective: top ceil(gamma*n) by objective, earliest trial first on
    ties.  Multi-objective: whole nondominated fronts are added until the
    good set reaches ceil(gamma*n) members (it may overshoot).
    """
    scored = [h for h in history if h.objectives is not None]
    n = len(scored)
    if n == 0:
        return [], []
    k = math.ceil(gamma * n)
    if not multi_objective:
        order = sorted(range(n), key=lambda i: (-scored[i].objectives[0], i))
        good_idx = set(order[:k])
    else:
        fronts = nondominated_sort([h.objectives for h in scored])
        good_idx = set()
        for front in fronts:
            good_idx.update(front)
            if len(good_idx) >= k:
                break
    good = [scored[i] for i in range(n) if i in good_idx]
    bad = [scored[i] for i in range(n) if i not in good_idx]
    return good, bad


def _categorical_probs(values, choices) -> np.ndarray:
    counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=np.float64)
    return (counts + 1.0) / (counts.sum() + len(choices))  # add-one smoothing


def _grid_probs(indices, size: int) -> np.ndarray:
    if not indices:
        return np.full(size, 1.0 / size)
    arr = np.asarray(indices, dtype=np.float64)
    sigma = float(arr.std())
    bandwidth = max(1.0, sigma * len(arr) ** (-0.2))  # Scott's rule on grid indices
    grid = np.arange(size, dtype=np.float64)
    dens = np.exp(-((grid[None, :] - arr[:, None]) ** 2) / (2 * bandwidth**2)).sum(axis=0)
    dens += 1e-12
    return dens / dens.sum()


def tpe_propose(good_values, bad_values, param: ParamDef, rng: np.random.Generator,
                n_candidates: int = TPE_CANDIDATES):
    """Draw candidates from the good-set density, return the best ratio l/g."""
    if param.kind == "categorical":
        choices = list(param.choices)
        if not good_values:
            return choices[int(rng.integers(len(choices)))]
        l = _categorical_probs(good_values, choices)
        g = _categorical_probs(bad_values, choices)
        drawn = rng.choice(len(choices), size=n_candidates, p=l)
        ratios = l[drawn] / g[drawn]
        return choices[int(drawn[int(np.argmax(ratios))])]
    size = param.grid_size()
    if size is UNBOUNDED:
        raise ConfigError(f"{param.name}: TPE needs a stepped grid, not a continuous range")
    to_index = lambda v: int(round((v - param.low) / param.step))
    if not good_values:
        return param.value_at(int(rng.integers(size)))
    l = _grid_probs([to_index(v) for v in good_values], size)
    g = _grid_probs([to_index(v) for v in bad_values], size)
    drawn = rng.choice(size, size=n_candidates, p=l)
    ratios = l[drawn] / g[drawn]
    return param.value_at(int(drawn[int(np.argmax(ratios))]))


class TPESampler(Sampler):
    """Tree-structured Parzen estimator, single- or multi-objective.

    The first ``n_startup_trials`` asks are uniform draws identical in
    distribution (and, under the same seed, in value) to RandomSampler's.
    """

    def __init__(self, spec: StudySpec, seed: int | None = None,
                 gamma: float = TPE_GAMMA, n_candidates: int = TPE_CANDIDATES):
        super().__init__(spec, seed)
        self.gamma = gamma
        self.n_candidates = n_candidates
        for ms in spec.methods:
            for p in ms.params:
                if p.grid_size() is UNBOUNDED:
                    raise ConfigError(f"{ms.method}.{p.name}: TPESampler needs stepped or categorical parameters")

    def ask(self) -> TrialConfig:
        if len(self.history) < self.spec.sampler.n_startup_trials:
            return self._uniform_config()
        good, bad = tpe_split(self.history, self.gamma, self.spec.multi_objective)
        if not good:
            return self._uniform_config()
        method_dim = ParamDef("method", "categorical", choices=tuple(ms.method for ms in self.spec.methods))
        method = tpe_propose(
            [h.config.method for h in good], [h.config.method for h in bad],
            method_dim, self.rng, self.n_candidates,
        )
        ms = self.spec.method_space(method)
        params = {}
        for p in ms.params:
            good_vals = [h.config.params[p.name] for h in good if h.config.method == method]
            bad_vals = [h.config.params[p.name] for h in bad if h.config.method == method]
            params[p.name] = tpe_propose(good_vals, bad_vals, p, self.rng, self.n_candidates)
        if self.spec.search_normalizations:
            norm_dim = ParamDef("normalization", "categorical", choices=self.spec.normalizations)
            norm = tpe_propose(
                [h.config.normalization for h in good], [h.config.normalization for h in bad],
                norm_dim, self.rng, self.n_candidates,
            )
        else:
            norm = self.spec.fixed_normalization
        return TrialConfig(method, params, normalization=norm, granularity=self.spec.granularity)


# ------------------------------------------------------------------ NSGA-II

def _genes(spec: StudySpec) -> list[tuple[str, ParamDef]]:
    """Flat genotype: method gene plus every method-qualified parameter."""
    genes: list[tuple[str, ParamDef]] = [
        ("method", ParamDef("method", "categorical", choices=tuple(ms.method for ms in spec.methods)))
    ]
    for ms in spec.methods:
        for p in ms.params:
            genes.append((f"{ms.method}|{p.name}", p))
    if spec.search_normalizations:
        genes.append(("normalization", ParamDef("normalization", "categorical", choices=spec.normalizations)))
    return genes


def _genotype_to_config(genotype: dict, spec: StudySpec) -> TrialConfig:
    method = genotype["method"]
    ms = spec.method_space(method)
    params = {p.name: genotype[f"{method}|{p.name}"] for p in ms.params}
    norm = genotype.get("normalization", spec.fixed_normalization)
    return TrialConfig(method, params, normalization=norm, granularity=spec.granularity)


def nsga2_step(population, spec: StudySpec, rng: np.random.Generator,
               n_offspring: int | None = None, mutation_prob: float | None = None):
    """Produce offspring genotypes from an evaluated population.

    ``population`` is a list of (genotype, objectives).  Binary tournaments
    select by (front rank, crowding distance); uniform crossover fires with
    probability 0.9 and each gene mutates with probability 1/d by resampling
    its domain.  Every offspring's phenotype passes space validation.
    """
    genes = _genes(spec)
    d = len(genes)
    if mutation_prob is None:
        mutation_prob = 1.0 / d
    if n_offspring is None:
        n_offspring = len(population)
    objectives = [obj for _, obj in population]
    fronts = nondominated_sort(objectives)
    rank = {}
    crowd = {}
    for front_rank, front in enumerate(fronts):
        dists = crowding_distance([objectives[i] for i in front])
        for i, dist in zip(front, dists):
            rank[i] = front_rank
            crowd[i] = dist

    def tournament() -> dict:
        a, b = int(rng.integers(len(population))), int(rng.integers(len(population)))
        if (rank[a], -crowd[a]) <= (rank[b], -crowd[b]):
            return population[a][0]
        return population[b][0]

    offspring = []
    for _ in range(n_offspring):
        p1 = tournament()
        p2 = tournament()
        if rng.random() < NSGA2_CROSSOVER_PROB:
            child = {name: (p1[name] if rng.random() < 0.5 else p2[name]) for name, _ in genes}
        else:
            child = dict(p1)
        for name, pdef in genes:
            if rng.random() < mutation_prob:
                size = pdef.grid_size()
                if size is UNBOUNDED:
                    child[name] = float(rng.uniform(pdef.low, pdef.high))
                else:
                    child[name] = pdef.value_at(int(rng.integers(size)))
        config = _genotype_to_config(child, spec)
        violations = validate(config, spec)
        if violations:  # pragma: no cover - construction keeps configs in-domain
            raise AssertionError(f"offspring failed validation: {violations}")
        offspring.append(child)
    return offspring


class NSGAIISampler(Sampler):
    """Elitist genetic sampler using nondominated sorting and crowding."""

    def __init__(self, spec: StudySpec, seed: int | None = None, population_size: int | None = None):
        super().__init__(spec, seed)
        if population_size is None:
            population_size = max(4, spec.sampler.n_trials // 4)
            if population_size % 2:
                population_size += 1
        self.population_size = population_size
        self._genes = _genes(spec)
        self._pending: list[dict] = []  # genotypes waiting to be asked
        self._asked: list[dict] = []  # genotypes asked in the current generation
        self._parents: list[tuple[dict, tuple[float, ...]]] = []

    def _random_genotype(self) -> dict:
        out = {}
        for name, pdef in self._genes:
            size = pdef.grid_size()
            if size is UNBOUNDED:
                out[name] = float(self.rng.uniform(pdef.low, pdef.high))
            else:
                out[name] = pdef.value_at(int(self.rng.integers(size)))
        return out

    def _generation_results(self) -> list[tuple[dict, tuple[float, ...]]]:
        told = self.history[-len(self._asked):]
        results = []
        for genotype, outcome in zip(self._asked, told):
            objs = outcome.objectives
            if objs is None:
                objs = (WORST_OBJECTIVE,) * self._arity
            results.append((genotype, objs))
        return results

    def ask(self) -> TrialConfig:
        if not self._pending:
            if not self._asked:  # first generation: random population
                self._pending = [self._random_genotype() for _ in range(self.population_size)]
            else:
                evaluated = self._generation_results()
                pool = self._parents + evaluated
                self._parents = self._survivors(pool)
                self._pending = nsga2_step(self._parents, self.spec, self.rng, self.population_size)
                self._asked = []
        genotype = self._pending.pop(0)
        self._asked.append(genotype)
        return _genotype_to_config(genotype, self.spec)

    def _survivors(self, pool):
        objectives = [obj for _, obj in pool]
        fronts = nondominated_sort(objectives)
        chosen: list[int] = []
        for front in fronts:
            if len(chosen) + len(front) <= self.population_size:
                chosen.extend(sorted(front))
                continue
            dists = crowding_distance([objectives[i] for i in front])
            ranked = sorted(zip(front, dists), key=lambda t: (-t[1], t[0]))
            chosen.extend(i for i, _ in ranked[: self.population_size - len(chosen)])
            break
        return [pool[i] for i in chosen]


SAMPLERS = {
    "RandomSampler": RandomSampler,
    "BruteForceSampler": BruteForceSampler,
    "TPESampler": TPESampler,
    "NSGAIISampler": NSGAIISampler,
}


def make_sampler(spec: StudySpec, seed: int | None = None) -> Sampler:
    try:
        cls = SAMPLERS[spec.sampler.name]
    except KeyError:
        raise ConfigError(f"unknown sampler {spec.sampler.name!r}; accepted: {sorted(SAMPLERS)}") from None
    return cls(spec, seed)
