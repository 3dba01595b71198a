"""Row decompositions, splittability / pair-completeness detection, integer
lattices of edge indices, and barrier diagnosis.

Splittability and pair-completeness are existential density conditions; the
searches here are exact (complete backtracking) for small classes and a
verified local-search heuristic above a size cap.  Any returned witness is
re-checked through the independent `graphs.density` path before it is handed
back, so witnesses are always exact and only *absence* is mode-qualified.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

from .graphs import (MultipartiteGraph, PartitionLabeling, Vertex,
                     clique_complex_edges, density, index_vector)

EXACT_CLASS_CAP = 8


# -- row decompositions -------------------------------------------------------


@dataclass(frozen=True)
class RowDecomposition:
    """Blocks rows[i][j] partitioning each class j into s rows of weight p_i.

    Every block in row i has exactly weights[i] * unit vertices.
    """

    weights: tuple[int, ...]
    unit: int
    rows: tuple[tuple[frozenset[int], ...], ...]  # rows[i][j]: offsets in class j

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            for j, block in enumerate(row):
                if len(block) != self.weights[i] * self.unit:
                    raise ValueError(
                        f"block ({i},{j}) has {len(block)} vertices, "
                        f"expected {self.weights[i] * self.unit}")
        r = len(self.rows[0])
        for j in range(r):
            all_offsets: set[int] = set()
            total = 0
            for i in range(self.s):
                all_offsets |= self.rows[i][j]
                total += len(self.rows[i][j])
            if total != len(all_offsets):
                raise ValueError(f"rows overlap in class {j}")

    @property
    def s(self) -> int:
        return len(self.weights)

    @property
    def r(self) -> int:
        return len(self.rows[0])

    def block(self, i: int, j: int) -> frozenset[int]:
        return self.rows[i][j]

    def block_vertices(self, i: int, j: int) -> list[Vertex]:
        return [(j, o) for o in sorted(self.rows[i][j])]

    def row_vertices(self, i: int) -> list[Vertex]:
        out = []
        for j in range(self.r):
            out.extend(self.block_vertices(i, j))
        return out

    def row_of(self, v: Vertex) -> int:
        c, o = v
        for i in range(self.s):
            if o in self.rows[i][c]:
                return i
        raise ValueError(f"vertex {v} is not in the decomposition")


def trivial_decomposition(g: MultipartiteGraph, k: int) -> RowDecomposition:
    sizes = set(g.class_sizes)
    if len(sizes) != 1 or g.class_sizes[0] % k != 0:
        raise ValueError("classes must have equal size divisible by k")
    n = g.class_sizes[0] // k
    return RowDecomposition(
        (k,), n,
        (tuple(frozenset(range(g.class_sizes[0])) for _ in range(g.r)),))


def min_diagonal_density(g: MultipartiteGraph, decomp: RowDecomposition) -> Fraction:
    """Minimum density between blocks in different rows and columns; 1 when
    the decomposition has a single row."""
    if decomp.s == 1:
        return Fraction(1)
    best = Fraction(1)
    for i in range(decomp.s):
        for i2 in range(decomp.s):
            if i2 == i:
                continue
            for j in range(decomp.r):
                for j2 in range(decomp.r):
                    if j2 == j:
                        continue
                    d = density(g, decomp.block_vertices(i, j),
                                decomp.block_vertices(i2, j2))
                    if d < best:
                        best = d
    return best


# -- splittability ------------------------------------------------------------


@dataclass
class SplitWitness:
    """Sets S_j of size p_prime*n per class with all cross densities
    d(S_j, V_j' \\ S_j') at least 1-d."""

    p_prime: int
    sets: list[tuple[int, ...]]  # offsets per class
    achieved: Fraction           # minimum density over all ordered pairs


def verify_split_witness(g: MultipartiteGraph, w: SplitWitness,
                         d: Fraction) -> bool:
    """Recheck a split witness through the plain density path."""
    r = g.r
    size = g.class_sizes[0]
    achieved = Fraction(1)
    for j in range(r):
        if len(set(w.sets[j])) != len(w.sets[j]):
            return False
    for j in range(r):
        for j2 in range(r):
            if j == j2:
                continue
            s_j = [(j, o) for o in w.sets[j]]
            comp = [(j2, o) for o in range(size) if o not in set(w.sets[j2])]
            dens = density(g, s_j, comp)
            achieved = min(achieved, dens)
    w.achieved = achieved
    return achieved >= 1 - d


def is_splittable(g: MultipartiteGraph, p: int, d: Fraction,
                  mode: str = "exact", *, seed: int = 0, restarts: int = 8,
                  max_steps: int = 60) -> SplitWitness | None:
    """Search for an equal-proportion split with all diagonal densities >= 1-d.

    In exact mode the search is complete backtracking over per-class subsets
    (lexicographic, so the first witness found is the least); in heuristic
    mode it is seeded hill climbing and absence is not certified.
    """
    sizes = set(g.class_sizes)
    if len(sizes) != 1:
        raise ValueError("classes must have equal size")
    size = g.class_sizes[0]
    if p < 1 or size % p != 0:
        raise ValueError(f"class size {size} is not divisible by weight {p}")
    if p == 1:
        return None
    n = size // p
    if mode == "exact":
        witness = _split_exact(g, p, n, d)
    elif mode == "heuristic":
        witness = _split_heuristic(g, p, n, d, seed, restarts, max_steps)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if witness is not None and not verify_split_witness(g, witness, d):
        raise AssertionError("searcher returned a witness that fails verification")
    return witness


def _split_exact(g, p, n, d):
    size = p * n
    bound = 1 - Fraction(d)
    num, den = bound.numerator, bound.denominator

    def comp_mask(j, mask):
        return g.class_mask(j) & ~mask

    for p_prime in range(1, p):
        target = p_prime * n
        s_size = target
        c_size = size - target
        per_class = [
            [(combo, sum(1 << (g.flat((j, o))) for o in combo))
             for combo in combinations(range(size), target)]
            for j in range(g.r)
        ]
        masks: list[int] = []
        comps: list[int] = []
        chosen: list[tuple[int, ...]] = []

        def backtrack(j):
            if j == g.r:
                return True
            for combo, mask in per_class[j]:
                masks.append(mask)
                comps.append(comp_mask(j, mask))
                ok = True
                a = j
                for b in range(j):
                    e1 = g.edge_count_between(masks[a], comps[b])
                    e2 = g.edge_count_between(masks[b], comps[a])
                    if (e1 * den < num * s_size * c_size
                            or e2 * den < num * s_size * c_size):
                        ok = False
                        break
                if ok:
                    chosen.append(combo)
                    if backtrack(j + 1):
                        return True
                    chosen.pop()
                masks.pop()
                comps.pop()
            return False

        if backtrack(0):
            return SplitWitness(p_prime, list(chosen), Fraction(0))
    return None


def _split_pivot_candidates(g, p, n):
    """Deterministic seed splits derived from single vertices: outside the
    pivot's class take its non-neighbors, inside take the vertices with the
    most similar neighborhoods.  Exact for blow-up-shaped instances."""
    size = p * n
    for c in range(g.r):
        for o in range(size):
            v = (c, o)
            nv = g.adj_mask(v)
            non_counts = [(g.class_mask(j) & ~nv).bit_count()
                          for j in range(g.r) if j != c]
            if not non_counts:
                continue
            p_prime = round(sum(non_counts) / len(non_counts) / n)
            if not (1 <= p_prime <= p - 1):
                continue
            target = p_prime * n
            sets = []
            for j in range(g.r):
                if j == c:
                    ranked = sorted(
                        range(size),
                        key=lambda o2: ((g.adj_mask((j, o2)) ^ nv).bit_count(),
                                        o2))
                else:
                    ranked = sorted(
                        range(size),
                        key=lambda o2: (bool(nv >> g.flat((j, o2)) & 1), o2))
                sets.append(tuple(sorted(ranked[:target])))
            yield p_prime, sets


def _split_heuristic(g, p, n, d, seed, restarts, max_steps):
    size = p * n
    bound = 1 - Fraction(d)

    def objective(sets):
        worst = Fraction(1)
        total = Fraction(0)
        for a in range(g.r):
            for b in range(g.r):
                if a == b:
                    continue
                mask_a = sum(1 << g.flat((a, o)) for o in sets[a])
                comp_b = g.class_mask(b) & ~sum(1 << g.flat((b, o)) for o in sets[b])
                e = g.edge_count_between(mask_a, comp_b)
                dens = Fraction(e, len(sets[a]) * (size - len(sets[b])))
                worst = min(worst, dens)
                total += dens
        return worst, total

    def climb(sets, rng):
        best = objective(sets)
        for _ in range(max_steps):
            if best[0] >= bound:
                break
            improved = False
            moves = [(j, out_v, in_v)
                     for j in range(g.r)
                     for out_v in sets[j]
                     for in_v in range(size) if in_v not in set(sets[j])]
            rng.shuffle(moves)
            for j, out_v, in_v in moves[:80]:
                trial = list(sets)
                trial[j] = sorted((set(sets[j]) - {out_v}) | {in_v})
                val = objective(trial)
                if val > best:
                    sets, best, improved = trial, val, True
                    break
            if not improved:
                break
        return sets, best

    for p_prime, sets in _split_pivot_candidates(g, p, n):
        w = SplitWitness(p_prime, [tuple(s) for s in sets], Fraction(0))
        if verify_split_witness(g, w, d):
            return w

    for p_prime in range(1, p):
        target = p_prime * n
        for t in range(restarts):
            rng = random.Random(f"split:{seed}:{p_prime}:{t}")
            sets = [sorted(rng.sample(range(size), target)) for _ in range(g.r)]
            sets, best = climb(sets, rng)
            if best[0] >= bound:
                w = SplitWitness(p_prime, [tuple(s) for s in sets], best[0])
                if verify_split_witness(g, w, d):
                    return w
    return None


def naive_is_splittable(g: MultipartiteGraph, p: int, d: Fraction) -> bool:
    """Independent full-enumeration checker (no pruning); test oracle only."""
    size = g.class_sizes[0]
    n = size // p
    from itertools import product
    for p_prime in range(1, p):
        target = p_prime * n
        options = list(combinations(range(size), target))
        for pick in product(options, repeat=g.r):
            ok = True
            for a in range(g.r):
                for b in range(g.r):
                    if a == b:
                        continue
                    s_a = [(a, o) for o in pick[a]]
                    comp_b = [(b, o) for o in range(size) if o not in pick[b]]
                    if density(g, s_a, comp_b) < 1 - d:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                return True
    return False


# -- pair-completeness ----------------------------------------------------------


@dataclass
class PairCompleteWitness:
    """Halves S_j of size n per class: dense within each half, sparse across."""

    halves: list[tuple[int, ...]]
    min_half_density: Fraction
    min_cohalf_density: Fraction
    max_cross_density: Fraction


def verify_pair_complete_witness(g: MultipartiteGraph, w: PairCompleteWitness,
                                 d: Fraction) -> bool:
    size = g.class_sizes[0]
    lo1 = lo2 = Fraction(1)
    hi = Fraction(0)
    for j in range(g.r):
        for j2 in range(g.r):
            if j == j2:
                continue
            s_j = [(j, o) for o in w.halves[j]]
            s_j2 = [(j2, o) for o in w.halves[j2]]
            t_j = [(j, o) for o in range(size) if o not in set(w.halves[j])]
            t_j2 = [(j2, o) for o in range(size) if o not in set(w.halves[j2])]
            lo1 = min(lo1, density(g, s_j, s_j2))
            lo2 = min(lo2, density(g, t_j, t_j2))
            hi = max(hi, density(g, s_j, t_j2))
    w.min_half_density, w.min_cohalf_density, w.max_cross_density = lo1, lo2, hi
    return lo1 >= 1 - d and lo2 >= 1 - d and hi <= d


def is_pair_complete(g: MultipartiteGraph, d: Fraction,
                     mode: str = "exact", *, seed: int = 0, restarts: int = 8,
                     max_steps: int = 60) -> PairCompleteWitness | None:
    """Search for halves with near-complete intra-half and near-empty
    cross-half densities.  Witnesses are re-verified before return."""
    sizes = set(g.class_sizes)
    if len(sizes) != 1:
        raise ValueError("classes must have equal size")
    size = g.class_sizes[0]
    if size % 2 != 0:
        raise ValueError("classes must have even size")
    n = size // 2
    if mode == "exact":
        witness = _pc_exact(g, n, d)
    elif mode == "heuristic":
        witness = _pc_heuristic(g, n, d, seed, restarts, max_steps)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if witness is not None and not verify_pair_complete_witness(g, witness, d):
        raise AssertionError("searcher returned a witness that fails verification")
    return witness


def _pc_pair_ok(g, size, n, d, mask_a, mask_b, comp_a, comp_b):
    lo = (1 - Fraction(d))
    hi = Fraction(d)
    e_ss = g.edge_count_between(mask_a, mask_b)
    if e_ss * lo.denominator < lo.numerator * n * n:
        return False
    e_tt = g.edge_count_between(comp_a, comp_b)
    if e_tt * lo.denominator < lo.numerator * n * n:
        return False
    e_st = g.edge_count_between(mask_a, comp_b)
    e_ts = g.edge_count_between(mask_b, comp_a)
    if e_st * hi.denominator > hi.numerator * n * n:
        return False
    if e_ts * hi.denominator > hi.numerator * n * n:
        return False
    return True


def _pc_exact(g, n, d):
    size = 2 * n
    # Global half-swap symmetry: restrict class 0 to halves containing offset 0.
    first = [c for c in combinations(range(size), n) if 0 in c]
    rest = list(combinations(range(size), n))
    masks: list[int] = []
    comps: list[int] = []
    chosen: list[tuple[int, ...]] = []

    def backtrack(j):
        if j == g.r:
            return True
        options = first if j == 0 else rest
        for combo in options:
            mask = sum(1 << g.flat((j, o)) for o in combo)
            comp = g.class_mask(j) & ~mask
            ok = all(_pc_pair_ok(g, size, n, d, masks[b], mask, comps[b], comp)
                     for b in range(j))
            if ok:
                masks.append(mask)
                comps.append(comp)
                chosen.append(combo)
                if backtrack(j + 1):
                    return True
                chosen.pop()
                masks.pop()
                comps.pop()
        return False

    if backtrack(0):
        return PairCompleteWitness(list(chosen), Fraction(0), Fraction(0), Fraction(0))
    return None


def _pc_pivot_candidates(g, n):
    """Deterministic seed halves from single vertices: outside the pivot's
    class its neighbors, inside the most similar neighborhoods."""
    size = 2 * n
    for c in range(g.r):
        for o in range(size):
            v = (c, o)
            nv = g.adj_mask(v)
            halves = []
            for j in range(g.r):
                if j == c:
                    ranked = sorted(
                        range(size),
                        key=lambda o2: ((g.adj_mask((j, o2)) ^ nv).bit_count(),
                                        o2))
                else:
                    ranked = sorted(
                        range(size),
                        key=lambda o2: (not (nv >> g.flat((j, o2)) & 1), o2))
                halves.append(tuple(sorted(ranked[:n])))
            yield halves


def _pc_heuristic(g, n, d, seed, restarts, max_steps):
    size = 2 * n

    def score(halves):
        # feasibility margin: min over constraints of slack
        lo = Fraction(1)
        hi = Fraction(0)
        for a in range(g.r):
            for b in range(g.r):
                if a == b:
                    continue
                s_a = sum(1 << g.flat((a, o)) for o in halves[a])
                s_b = sum(1 << g.flat((b, o)) for o in halves[b])
                t_a = g.class_mask(a) & ~s_a
                t_b = g.class_mask(b) & ~s_b
                lo = min(lo, Fraction(g.edge_count_between(s_a, s_b), n * n))
                lo = min(lo, Fraction(g.edge_count_between(t_a, t_b), n * n))
                hi = max(hi, Fraction(g.edge_count_between(s_a, t_b), n * n))
        return lo, hi

    for cand in _pc_pivot_candidates(g, n):
        w = PairCompleteWitness([tuple(h) for h in cand],
                                Fraction(0), Fraction(0), Fraction(0))
        if verify_pair_complete_witness(g, w, d):
            return w

    for t in range(restarts):
        rng = random.Random(f"pc:{seed}:{t}")
        halves = [sorted(rng.sample(range(size), n)) for _ in range(g.r)]
        lo, hi = score(halves)
        for _ in range(max_steps):
            if lo >= 1 - d and hi <= d:
                break
            improved = False
            for j in range(g.r):
                inside = set(halves[j])
                for out_v in sorted(inside):
                    for in_v in [o for o in range(size) if o not in inside]:
                        trial = list(halves)
                        trial[j] = sorted((inside - {out_v}) | {in_v})
                        lo2, hi2 = score(trial)
                        if (lo2 - hi2) > (lo - hi):
                            halves, lo, hi = trial, lo2, hi2
                            improved = True
                            break
                    if improved:
                        break
                if improved:
                    break
            if not improved:
                break
        if lo >= 1 - d and hi <= d:
            w = PairCompleteWitness([tuple(h) for h in halves],
                                    lo, lo, hi)
            if verify_pair_complete_witness(g, w, d):
                return w
    return None


def naive_is_pair_complete(g: MultipartiteGraph, d: Fraction) -> bool:
    """Independent full-enumeration checker; test oracle only."""
    from itertools import product
    size = g.class_sizes[0]
    n = size // 2
    options = list(combinations(range(size), n))
    for pick in product(options, repeat=g.r):
        ok = True
        for a in range(g.r):
            for b in range(g.r):
                if a == b:
                    continue
                s_a = [(a, o) for o in pick[a]]
                s_b = [(b, o) for o in pick[b]]
                t_b = [(b, o) for o in range(size) if o not in pick[b]]
                t_a = [(a, o) for o in range(size) if o not in pick[a]]
                if (density(g, s_a, s_b) < 1 - d
                        or density(g, t_a, t_b) < 1 - d
                        or density(g, s_a, t_b) > d):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return True
    return False


# -- iterative refinement -------------------------------------------------------


@dataclass
class SplitEvent:
    row: int
    p_prime: int
    threshold: Fraction


@dataclass
class IterationResult:
    decomposition: RowDecomposition
    events: list[SplitEvent]
    min_diagonal_density: Fraction


def iterate_decomposition(g: MultipartiteGraph, k: int,
                          thresholds: Sequence[Fraction],
                          mode: str = "auto", *, seed: int = 0,
                          exact_cap: int = EXACT_CLASS_CAP) -> IterationResult:
    """Refine the trivial one-row decomposition by splitting rows while any
    row is splittable at the threshold for the current row count.

    Tie-breaking is deterministic: the lowest-index splittable row splits
    first, using the lexicographically least witness the searcher finds.
    """
    thresholds = [Fraction(t) for t in thresholds]
    if any(t2 <= t1 for t1, t2 in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly ascending")
    if len(thresholds) < k:
        raise ValueError(f"need at least {k} thresholds")
    decomp = trivial_decomposition(g, k)
    n = decomp.unit
    weights = [k]
    rows: list[list[frozenset[int]]] = [list(decomp.rows[0])]
    events: list[SplitEvent] = []

    while len(weights) < k:
        s = len(weights)
        d_s = thresholds[s - 1]
        split_done = False
        for i in range(s):
            if weights[i] < 2:
                continue
            selection = [sorted(rows[i][j]) for j in range(g.r)]
            sub, _, _ = g.induced(selection)
            row_mode = mode
            if mode == "auto":
                row_mode = "exact" if sub.class_sizes[0] <= exact_cap else "heuristic"
            w = is_splittable(sub, weights[i], d_s, row_mode, seed=seed)
            if w is None:
                continue
            new_first = []
            new_second = []
            for j in range(g.r):
                ordered = selection[j]
                in_split = frozenset(ordered[t] for t in w.sets[j])
                new_first.append(in_split)
                new_second.append(frozenset(ordered) - in_split)
            rows[i] = new_first
            rows.append(new_second)
            weights.append(weights[i] - w.p_prime)
            weights[i] = w.p_prime
            events.append(SplitEvent(i, w.p_prime, d_s))
            split_done = True
            break
        if not split_done:
            break

    final = RowDecomposition(tuple(weights), n,
                             tuple(tuple(row) for row in rows))
    return IterationResult(final, events, min_diagonal_density(g, final))


# -- integer lattices -------------------------------------------------------------


class IntegerLattice:
    """Subgroup of Z^d given by generators; canonical triangular basis with
    membership by back-substitution over the integers."""

    def __init__(self, dim: int, generators: Iterable[Sequence[int]] = ()):
        self.dim = dim
        self._rows: list[list[int]] = []  # sorted by pivot column
        for v in generators:
            self.add_vector(v)

    def _pivot_col(self, row: list[int]) -> int:
        for j, x in enumerate(row):
            if x:
                return j
        return self.dim

    def add_vector(self, vec: Sequence[int]) -> None:
        v = list(vec)
        if len(v) != self.dim:
            raise ValueError("vector has wrong dimension")
        while True:
            j = self._pivot_col(v)
            if j == self.dim:
                return
            hit = None
            for idx, row in enumerate(self._rows):
                pj = self._pivot_col(row)
                if pj == j:
                    hit = idx
                    break
                if pj > j:
                    break
            if hit is None:
                if v[j] < 0:
                    v = [-x for x in v]
                insert_at = 0
                while (insert_at < len(self._rows)
                       and self._pivot_col(self._rows[insert_at]) < j):
                    insert_at += 1
                self._rows.insert(insert_at, v)
                self._normalize()
                return
            row = self._rows[hit]
            a, b = row[j], v[j]
            g, x, y = _xgcd(a, b)
            combined = [x * ra + y * va for ra, va in zip(row, v)]
            reduced = [(a // g) * va - (b // g) * ra for ra, va in zip(row, v)]
            self._rows[hit] = combined
            v = reduced

    def _normalize(self) -> None:
        # Hermite-style: positive pivots, entries above each pivot reduced.
        self._rows.sort(key=self._pivot_col)
        for idx, row in enumerate(self._rows):
            j = self._pivot_col(row)
            if row[j] < 0:
                self._rows[idx] = [-x for x in row]
        for idx in range(len(self._rows) - 1, -1, -1):
            row = self._rows[idx]
            j = self._pivot_col(row)
            p = row[j]
            for above in range(idx):
                q, rem = divmod(self._rows[above][j], p)
                if q:
                    self._rows[above] = [xa - q * xr for xa, xr
                                         in zip(self._rows[above], row)]

    @property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        self._normalize()
        return tuple(tuple(row) for row in self._rows)

    def __contains__(self, vec: Sequence[int]) -> bool:
        v = list(vec)
        if len(v) != self.dim:
            raise ValueError("vector has wrong dimension")
        for row in self._rows:
            j = self._pivot_col(row)
            if v[j] == 0:
                continue
            q, rem = divmod(v[j], row[j])
            if rem != 0:
                # one more chance after subtracting q+? no: pivot must divide
                return False
            v = [xv - q * xr for xv, xr in zip(v, row)]
        return all(x == 0 for x in v)

    def __repr__(self):
        return f"IntegerLattice(dim={self.dim}, basis={self.basis})"


def _xgcd(a: int, b: int) -> tuple[int, int, int]:
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def robust_edge_lattice(edges: Iterable[Iterable[Vertex]],
                        labeling: PartitionLabeling,
                        mu_count: int) -> IntegerLattice:
    """Lattice generated by every index vector attained by at least mu_count
    edges (an absolute count standing in for a density threshold; mu_count=0
    keeps every attained vector)."""
    counts = Counter(index_vector(e, labeling) for e in edges)
    floor = max(mu_count, 1)
    gens = sorted(v for v, c in counts.items() if c >= floor)
    return IntegerLattice(labeling.d, gens)


def is_complete_wrt(lattice: IntegerLattice, q: PartitionLabeling):
    """True iff u_a - u_b is in the lattice for every pair of parts a, b that
    lie inside a single class; otherwise (False, (a, b)) for one violation."""
    if not q.respects_classes:
        raise ValueError("labeling must refine the class partition")
    if lattice.dim != q.d:
        raise ValueError("lattice dimension must match part count")
    per_class: dict[int, set[int]] = {}
    for c, row in enumerate(q.part_of):
        per_class.setdefault(c, set()).update(row)
    for c in sorted(per_class):
        parts = sorted(per_class[c])
        for a, b in combinations(parts, 2):
            vec = [0] * q.d
            vec[a], vec[b] = 1, -1
            if vec not in lattice:
                return False, (a, b)
    return True, None


def merge_to_minimal(q: PartitionLabeling, lattice: IntegerLattice):
    """Merge same-class part pairs whose basis-vector difference lies in the
    lattice, repeatedly, producing a minimal refinement and merged lattice."""
    part_of = [list(row) for row in q.part_of]
    dim = q.d
    gens = [list(b) for b in lattice.basis]
    changed = True
    while changed:
        changed = False
        per_class: dict[int, set[int]] = {}
        for c, row in enumerate(part_of):
            per_class.setdefault(c, set()).update(row)
        lat = IntegerLattice(dim, gens)
        for c in sorted(per_class):
            for a, b in combinations(sorted(per_class[c]), 2):
                vec = [0] * dim
                vec[a], vec[b] = 1, -1
                if vec in lat:
                    # merge part b into part a, compact indices
                    remap = {}
                    nxt = 0
                    for p in range(dim):
                        if p == b:
                            continue
                        remap[p] = nxt
                        nxt += 1
                    remap[b] = remap[a]
                    for row in part_of:
                        for idx, p in enumerate(row):
                            row[idx] = remap[p]
                    new_gens = []
                    for gvec in gens:
                        out = [0] * (dim - 1)
                        for p, x in enumerate(gvec):
                            out[remap[p]] += x
                        new_gens.append(out)
                    gens = new_gens
                    dim -= 1
                    changed = True
                    break
            if changed:
                break
    new_q = PartitionLabeling(dim, tuple(tuple(row) for row in part_of))
    return new_q, IntegerLattice(dim, gens)


# -- barrier constructions ---------------------------------------------------------


def space_barrier_graph(r: int, p: int, n: int, j: int,
                        extra: int = 0) -> tuple[MultipartiteGraph, list[list[int]]]:
    """Graph on classes of size p*n in which every p-clique has at most j
    vertices inside the planted set S (first j*n + extra offsets per class).

    Inside S, vertices carry one of j group labels (offset // n, capped) and
    same-label cross-class pairs are non-adjacent; every other cross-class
    pair is an edge.  Any clique within S therefore has pairwise-distinct
    labels, hence at most j vertices.  Returns the graph and S as per-class
    offset lists.
    """
    if not (1 <= j < p):
        raise ValueError("need 1 <= j < p")
    size = p * n
    s_size = j * n + extra
    if s_size > size:
        raise ValueError("planted set exceeds the class")
    from .graphs import complete_multipartite
    g = complete_multipartite([size] * r)
    masks = list(g._adj)

    def label(o: int) -> int:
        return min(o // n, j - 1)

    for c1 in range(r):
        for o1 in range(s_size):
            f1 = g.flat((c1, o1))
            for c2 in range(c1 + 1, r):
                for o2 in range(s_size):
                    if label(o1) == label(o2):
                        f2 = g.flat((c2, o2))
                        masks[f1] &= ~(1 << f2)
                        masks[f2] &= ~(1 << f1)
    out = MultipartiteGraph([size] * r)
    out._adj = masks
    planted = [list(range(s_size)) for _ in range(r)]
    return out, planted


def divisibility_barrier_graph(r: int, half: int,
                               other: int | None = None
                               ) -> tuple[MultipartiteGraph, PartitionLabeling]:
    """Two complete r-partite halves with no cross edges: the robust edge
    lattice of any clique layer is incomplete with respect to the per-class
    half split.  Classes have size half + other (other defaults to half)."""
    if other is None:
        other = half
    size = half + other
    g = MultipartiteGraph([size] * r)
    for c1 in range(r):
        for c2 in range(c1 + 1, r):
            for o1 in range(size):
                side1 = o1 < half
                for o2 in range(size):
                    if (o2 < half) == side1:
                        f1, f2 = g.flat((c1, o1)), g.flat((c2, o2))
                        g._adj[f1] |= 1 << f2
                        g._adj[f2] |= 1 << f1
    labeling = PartitionLabeling(
        2 * r,
        tuple(tuple(2 * c + (0 if o < half else 1) for o in range(size))
              for c in range(r)))
    return g, labeling


# -- barrier diagnosis ----------------------------------------------------------


def _class_bipartitions(size: int, floor: int):
    """Unordered 2-part splits of range(size) with both sides >= floor,
    canonicalized so offset 0 is in the first side; plus None (no split)."""
    yield None
    for a_minus_rest in range(max(floor, 1) - 1, size - max(floor, 1) + 1):
        for rest in combinations(range(1, size), a_minus_rest):
            a = (0,) + rest
            if size - len(a) >= max(floor, 1):
                yield a


def diagnose_barriers(g: MultipartiteGraph, p_weight: int, *,
                      d: Fraction, beta: Fraction = Fraction(0),
                      mode: str = "exact", mu_count: int = 1,
                      floor: int | None = None,
                      space_budget: int = 200_000,
                      divisibility_budget: int = 20_000,
                      seed: int = 0) -> dict:
    """Structured report of detected obstructions to a perfect clique packing.

    Space candidates are planted sets S (one slice per class) such that at
    most a beta fraction of the enumerated p-cliques have more than j
    vertices in S; divisibility candidates are class refinements whose robust
    edge lattice is incomplete.  Enumeration is exhaustive within the budgets
    and flagged otherwise.
    """
    sizes = set(g.class_sizes)
    if len(sizes) != 1:
        raise ValueError("classes must have equal size")
    size = g.class_sizes[0]
    if size % p_weight != 0:
        raise ValueError("class size must be divisible by the weight")
    n = size // p_weight
    if floor is None:
        floor = max(1, n // 2)

    report: dict = {"splittable": None, "pair_complete": None,
                    "space": [], "divisibility": [],
                    "space_exhaustive": True, "divisibility_exhaustive": True}

    w = is_splittable(g, p_weight, d, mode, seed=seed)
    if w is not None:
        report["splittable"] = {"p_prime": w.p_prime,
                                "sets": [list(s) for s in w.sets],
                                "achieved": str(w.achieved)}
    if p_weight == 2 and size % 2 == 0:
        pc = is_pair_complete(g, d, mode, seed=seed)
        if pc is not None:
            report["pair_complete"] = {
                "halves": [list(h) for h in pc.halves],
                "min_half_density": str(pc.min_half_density),
                "min_cohalf_density": str(pc.min_cohalf_density),
                "max_cross_density": str(pc.max_cross_density)}

    cliques = clique_complex_edges(g, p_weight)
    clique_masks = [g.mask_of(c) for c in cliques]

    # space barriers: S with j*n vertices per class and at most a beta
    # fraction of cliques holding more than j vertices of S
    beta = Fraction(beta)
    allowed = int(beta * len(clique_masks))
    for j in range(1, p_weight):
        target = j * n
        options = list(combinations(range(size), target))
        total = len(options) ** g.r
        if total > space_budget:
            report["space_exhaustive"] = False
            continue
        from itertools import product
        for pick in product(options, repeat=g.r):
            s_mask = 0
            for c, offs in enumerate(pick):
                for o in offs:
                    s_mask |= 1 << g.flat((c, o))
            violating = sum(1 for cm in clique_masks
                            if (cm & s_mask).bit_count() > j)
            if violating <= allowed:
                report["space"].append({"j": j,
                                        "sets": [list(offs) for offs in pick],
                                        "violating_cliques": violating})
                if len(report["space"]) >= 20:
                    break

    # divisibility barriers: per-class bipartitions with parts >= floor
    split_options = list(_class_bipartitions(size, floor))
    total = len(split_options) ** g.r
    if total > divisibility_budget:
        report["divisibility_exhaustive"] = False
    else:
        from itertools import product
        seen_keys = set()
        for pick in product(split_options, repeat=g.r):
            if all(s is None for s in pick):
                continue
            part_rows = []
            next_part = 0
            for c in range(g.r):
                if pick[c] is None:
                    part_rows.append(tuple(next_part for _ in range(size)))
                    next_part += 1
                else:
                    inside = set(pick[c])
                    part_rows.append(tuple(next_part if o in inside
                                           else next_part + 1
                                           for o in range(size)))
                    next_part += 2
            q = PartitionLabeling(next_part, tuple(part_rows))
            lattice = robust_edge_lattice(cliques, q, mu_count)
            complete, violating = is_complete_wrt(lattice, q)
            if complete:
                continue
            minimal_q, minimal_lat = merge_to_minimal(q, lattice)
            if minimal_q.d == g.r:
                continue  # merging collapsed the refinement entirely
            complete2, violating2 = is_complete_wrt(minimal_lat, minimal_q)
            if complete2:
                continue
            key = tuple(minimal_q.part_of)
            if key in seen_keys:
                continue
            seen_keys.add(key)
            report["divisibility"].append({
                "part_of": [list(row) for row in minimal_q.part_of],
                "d": minimal_q.d,
                "violating_pair": list(violating2),
                "basis": [list(b) for b in minimal_lat.basis]})
    return report
