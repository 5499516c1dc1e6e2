"""Genetic programming over term-weighting expression trees."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expr import BINARY_OPS, UNARY_OPS, Binary, Expr, Leaf, Unary, children, depth, print_prefix, size
from .termstats import TERMINALS

log = logging.getLogger(__name__)

INTERNAL_NODE_BIAS = 0.9


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 50
    generations: int = 50
    tournament_size: int = 3
    p_crossover: float = 0.85
    p_mutation: float = 0.15
    init_depth_range: tuple[int, int] = (2, 6)
    max_depth: int = 8
    elitism_count: int = 1
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        lo, hi = self.init_depth_range
        if not 1 <= lo <= hi:
            raise ValueError("init_depth_range must satisfy 1 <= min <= max")
        if self.max_depth < hi:
            raise ValueError("max_depth must be >= the largest initial depth")
        if self.p_crossover < 0 or self.p_mutation < 0 or self.p_crossover + self.p_mutation > 1 + 1e-12:
            raise ValueError("need p_crossover, p_mutation >= 0 with sum <= 1")
        if self.population_size < max(1, self.tournament_size):
            raise ValueError("population_size must be >= tournament_size")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must be within 0..population_size")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")


@dataclass
class Individual:
    expr: Expr
    fitness: float | None = None

    @property
    def size(self) -> int:
        return size(self.expr)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_size: int
    best_expr: str


@dataclass
class GpRun:
    config: GpConfig
    log: list[GenerationStats] = field(default_factory=list)
    best: Individual | None = None
    evaluations: int = 0

    def rows(self):
        for g in self.log:
            yield (g.generation, g.best_fitness, g.mean_fitness, g.best_size, g.best_expr)


RUNLOG_HEADER = ("generation", "best_fitness", "mean_fitness", "best_size", "best_expr")


# -- tree construction ----------------------------------------------------


def random_terminal(rng: np.random.Generator) -> Leaf:
    return Leaf(TERMINALS[rng.integers(len(TERMINALS))])


def _random_function(rng: np.random.Generator) -> str:
    ops = BINARY_OPS + UNARY_OPS
    return ops[rng.integers(len(ops))]


def _build(op: str, make_child) -> Expr:
    if op in BINARY_OPS:
        left = make_child()
        return Binary(op, left, make_child())
    return Unary(op, make_child())


def full_tree(target_depth: int, rng: np.random.Generator) -> Expr:
    """Every branch reaches ``target_depth`` (leaves count as depth 1)."""
    if target_depth <= 1:
        return random_terminal(rng)
    return _build(_random_function(rng), lambda: full_tree(target_depth - 1, rng))


def grow_tree(max_depth: int, rng: np.random.Generator, root: bool = True) -> Expr:
    """Variable-shape tree no deeper than ``max_depth``.

    Below the root each node is drawn uniformly from functions and terminals together.
    """
    if max_depth <= 1:
        return random_terminal(rng)
    n_func = len(BINARY_OPS) + len(UNARY_OPS)
    if not root and rng.integers(n_func + len(TERMINALS)) >= n_func:
        return random_terminal(rng)
    return _build(_random_function(rng), lambda: grow_tree(max_depth - 1, rng, root=False))


def init_population(cfg: GpConfig, rng: np.random.Generator) -> list[Individual]:
    """Ramped half-and-half: even slots use full trees, odd slots grow trees,
    depths cycling through ``init_depth_range`` in pairs."""
    lo, hi = cfg.init_depth_range
    depths = list(range(lo, hi + 1))
    pop = []
    for i in range(cfg.population_size):
        d = depths[(i // 2) % len(depths)]
        tree = full_tree(d, rng) if i % 2 == 0 else grow_tree(d, rng)
        pop.append(Individual(tree))
    return pop


# -- node addressing --------------------------------------------------------


def nodes(tree: Expr) -> list[tuple[tuple[int, ...], Expr]]:
    """Pre-order list of (path, subtree); a path is the child indices from the root."""
    out = []
    stack = [((), tree)]
    while stack:
        path, node = stack.pop()
        out.append((path, node))
        kids = children(node)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((path + (i,), kids[i]))
    return out


def subtree_at(tree: Expr, path: Sequence[int]) -> Expr:
    for i in path:
        tree = children(tree)[i]
    return tree


def replace_at(tree: Expr, path: Sequence[int], new: Expr) -> Expr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(tree, Unary):
        return Unary(tree.op, replace_at(tree.child, rest, new))
    if isinstance(tree, Binary):
        if head == 0:
            return Binary(tree.op, replace_at(tree.left, rest, new), tree.right)
        return Binary(tree.op, tree.left, replace_at(tree.right, rest, new))
    raise IndexError("path descends below a leaf")


def _pick_crossover_point(tree: Expr, rng: np.random.Generator) -> tuple[int, ...]:
    all_nodes = nodes(tree)
    internal = [p for p, n in all_nodes if not isinstance(n, Leaf)]
    leaves = [p for p, n in all_nodes if isinstance(n, Leaf)]
    if internal and rng.random() < INTERNAL_NODE_BIAS:
        return internal[rng.integers(len(internal))]
    pool = leaves if internal else [p for p, _ in all_nodes]
    return pool[rng.integers(len(pool))]


# -- operators ------------------------------------------------------------


def _better(a: Individual, b: Individual) -> bool:
    """Strictly better: higher fitness, then smaller tree."""
    if a.fitness != b.fitness:
        return a.fitness > b.fitness
    return a.size < b.size


def tournament_select(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Best of ``k`` draws with replacement; ties go to the smaller tree, then the earlier draw."""
    picks = rng.integers(len(pop), size=k)
    winner = None
    for idx in picks:
        cand = pop[idx]
        if cand.fitness is None:
            raise ValueError("tournament over an unevaluated individual")
        if winner is None or _better(cand, winner):
            winner = cand
    return winner


def crossover(a: Individual, b: Individual, rng: np.random.Generator, max_depth: int) -> tuple[Individual, Individual]:
    pa = _pick_crossover_point(a.expr, rng)
    pb = _pick_crossover_point(b.expr, rng)
    sa, sb = subtree_at(a.expr, pa), subtree_at(b.expr, pb)
    c1 = replace_at(a.expr, pa, sb)
    c2 = replace_at(b.expr, pb, sa)
    out1 = Individual(c1) if depth(c1) <= max_depth else Individual(a.expr, a.fitness)
    out2 = Individual(c2) if depth(c2) <= max_depth else Individual(b.expr, b.fitness)
    return out1, out2


def _other(choices: Sequence, current, rng: np.random.Generator):
    pool = [c for c in choices if c != current]
    return pool[rng.integers(len(pool))]


def mutate(a: Individual, rng: np.random.Generator) -> Individual:
    """Point mutation: one uniformly chosen node swaps for another of the same arity."""
    all_nodes = nodes(a.expr)
    path, node = all_nodes[rng.integers(len(all_nodes))]
    if isinstance(node, Leaf):
        new = Leaf(_other(TERMINALS, node.terminal, rng))
    elif isinstance(node, Unary):
        new = Unary(_other(UNARY_OPS, node.op, rng), node.child)
    else:
        new = Binary(_other(BINARY_OPS, node.op, rng), node.left, node.right)
    return Individual(replace_at(a.expr, path, new))


# -- generation loop ----------------------------------------------------------


FitnessFn = Callable[[Expr], float]


class _Evaluator:
    """Fitness memo keyed by canonical printed form; order-preserving parallel map."""

    def __init__(self, fitness_fn: FitnessFn, workers: int):
        self.fitness_fn = fitness_fn
        self.workers = workers
        self.cache: dict[str, float] = {}
        self.calls = 0

    def _score(self, expr: Expr) -> float:
        value = float(self.fitness_fn(expr))
        if math.isnan(value):
            log.warning("fitness of %s is NaN; using 0", print_prefix(expr))
            return 0.0
        return value

    def __call__(self, pop: list[Individual]) -> None:
        pending: dict[str, Expr] = {}
        for ind in pop:
            if ind.fitness is None:
                key = print_prefix(ind.expr)
                if key not in self.cache and key not in pending:
                    pending[key] = ind.expr
        keys = list(pending)
        if keys:
            if self.workers > 1 and len(keys) > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    values = list(pool.map(self._score, (pending[k] for k in keys)))
            else:
                values = [self._score(pending[k]) for k in keys]
            self.calls += len(keys)
            self.cache.update(zip(keys, values))
        for ind in pop:
            if ind.fitness is None:
                ind.fitness = self.cache[print_prefix(ind.expr)]


def _ranked(pop: Sequence[Individual]) -> list[int]:
    return sorted(range(len(pop)), key=lambda i: (-pop[i].fitness, pop[i].size, i))


def _record(run: GpRun, gen: int, pop: list[Individual]) -> None:
    best = pop[_ranked(pop)[0]]
    mean = float(np.mean([ind.fitness for ind in pop]))
    run.log.append(GenerationStats(gen, best.fitness, mean, best.size, print_prefix(best.expr)))
    if run.best is None or _better(best, run.best):
        run.best = Individual(best.expr, best.fitness)


def next_generation(pop: list[Individual], cfg: GpConfig, rng: np.random.Generator) -> list[Individual]:
    ranked = _ranked(pop)
    new = [Individual(pop[i].expr, pop[i].fitness) for i in ranked[:cfg.elitism_count]]
    while len(new) < cfg.population_size:
        r = rng.random()
        if r < cfg.p_crossover:
            a = tournament_select(pop, cfg.tournament_size, rng)
            b = tournament_select(pop, cfg.tournament_size, rng)
            for child in crossover(a, b, rng, cfg.max_depth):
                if len(new) < cfg.population_size:
                    new.append(child)
        elif r < cfg.p_crossover + cfg.p_mutation:
            new.append(mutate(tournament_select(pop, cfg.tournament_size, rng), rng))
        else:
            parent = tournament_select(pop, cfg.tournament_size, rng)
            new.append(Individual(parent.expr, parent.fitness))
    return new


def evolve(cfg: GpConfig, fitness_fn: FitnessFn, rng: np.random.Generator | None = None,
           on_generation: Callable[[GenerationStats], None] | None = None) -> GpRun:
    """Generational GP with elitism.  ``fitness_fn`` must be pure; with
    ``cfg.workers > 1`` it is called from several threads at once."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    evaluate = _Evaluator(fitness_fn, cfg.workers)
    run = GpRun(cfg)
    pop = init_population(cfg, rng)
    evaluate(pop)
    _record(run, 0, pop)
    if on_generation:
        on_generation(run.log[-1])
    for gen in range(1, cfg.generations + 1):
        pop = next_generation(pop, cfg, rng)
        evaluate(pop)
        _record(run, gen, pop)
        if on_generation:
            on_generation(run.log[-1])
    run.evaluations = evaluate.calls
    return run


def with_seed(cfg: GpConfig, seed: int) -> GpConfig:
    return replace(cfg, rng_seed=seed)
