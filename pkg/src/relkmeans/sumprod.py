"""SumProd queries over a join tree for arbitrary commutative semirings.

The value computed is the semiring sum, over all rows of the (virtual)
join, of the semiring product of per-feature values q_f(x_f).  Evaluation
is one message pass over the join tree, so the join itself is never built.
Each feature is applied at exactly one owner node to avoid double-counting
features shared between tables.

Two implementations live here: a generic one that works for any carrier
(used by the bucketed distance multisets), and :class:`JoinEvaluator`, a
numpy fast path for the counting and cost-pair instances that the samplers
hammer with thousands of box-restricted grouped queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from .relational import BoxRect, JoinTree, Table, box_row_masks


@dataclass(frozen=True)
class SemiringSpec:
    """A commutative semiring plus the per-feature embedding q_f.

    ``feature_map`` maps feature name to a function from the real feature
    value into the carrier.  ``compact``, when set, is applied to every
    per-row value and message entry as it is formed; it is the hook the
    approximate counter uses for geometric re-bucketing and must satisfy
    compact(plus(a, b)) == plus(compact(a), compact(b)).
    """

    zero: Any
    one: Any
    plus: Callable[[Any, Any], Any]
    times: Callable[[Any, Any], Any]
    feature_map: Mapping[str, Callable[[float], Any]]
    compact: Callable[[Any], Any] | None = None


@dataclass(frozen=True)
class CostPair:
    """Carrier tracking (aggregate cost, count) through a SumProd query."""

    a: float
    b: float

    def __add__(self, other: "CostPair") -> "CostPair":
        return CostPair(self.a + other.a, self.b + other.b)

    def __mul__(self, other: "CostPair") -> "CostPair":
        return CostPair(self.a * other.b + other.a * self.b, self.b * other.b)


COSTPAIR_ZERO = CostPair(0.0, 0.0)
COSTPAIR_ONE = CostPair(0.0, 1.0)


@dataclass(frozen=True)
class GroupedResult:
    """Per-row query values for one table, aligned with its row order."""

    table_id: int
    values: tuple

    def __len__(self) -> int:
        return len(self.values)


def counting_semiring(features: list[str]) -> SemiringSpec:
    """q_f = 1 everywhere; the query value is the number of join rows."""
    return SemiringSpec(
        zero=0, one=1,
        plus=lambda x, y: x + y,
        times=lambda x, y: x * y,
        feature_map={f: (lambda v: 1) for f in features},
    )


def costpair_semiring(features: list[str], target: Mapping[str, float]) -> SemiringSpec:
    """q_f(v) = ((v - y_f)^2, 1); the a-component sums squared distances to y."""
    def q(name: str) -> Callable[[float], CostPair]:
        yf = float(target[name])
        return lambda v: CostPair((v - yf) ** 2, 1.0)

    return SemiringSpec(
        zero=COSTPAIR_ZERO, one=COSTPAIR_ONE,
        plus=lambda x, y: x + y,
        times=lambda x, y: x * y,
        feature_map={f: q(f) for f in features},
    )


def default_ownership(tree: JoinTree, tables: list[Table]) -> dict[str, int]:
    """Assign each feature to the lowest table id containing it."""
    owner: dict[str, int] = {}
    for t in tables:
        for f in t.features:
            owner.setdefault(f.name, t.id)
    return owner


def _node_value(table: Table, row: int, spec: SemiringSpec,
                owner: Mapping[str, int]) -> Any:
    val = spec.one
    for pos, f in enumerate(table.features):
        if owner[f.name] == table.id:
            val = spec.times(val, spec.feature_map[f.name](table.rows[row, pos]))
    return val


def _sep_key(table: Table, row: int, separator: tuple[str, ...]) -> tuple:
    names = table.feature_names()
    return tuple(table.rows[row, names.index(s)] for s in separator)


def eval_sumprod_grouped(tree: JoinTree, tables: list[Table], spec: SemiringSpec,
                         group: int,
                         ownership: Mapping[str, int] | None = None,
                         masks: list[np.ndarray] | None = None) -> GroupedResult:
    """Grouped SumProd: entry r is the query value with the group table
    pinned to its single row r.  One upward pass rooted at the group table.
    """
    owner = dict(ownership) if ownership is not None else default_ownership(tree, tables)
    order = tree.rooted_order(group)
    compact = spec.compact or (lambda v: v)

    # messages[node] = dict: separator key -> carrier, sent to its parent
    messages: dict[int, dict[tuple, Any]] = {}
    sep_of: dict[int, tuple[str, ...]] = {}
    children: dict[int, list[int]] = {i: [] for i in range(tree.n_nodes)}
    for node, par in order:
        if par is not None:
            children[par].append(node)
            sep_of[node] = tree.edge_separator(node, par)

    values_at: dict[int, list[Any]] = {}
    for node, par in order:
        table = tables[node]
        mask = masks[node] if masks is not None else None
        vals = []
        for row in range(table.n_rows):
            if mask is not None and not mask[row]:
                vals.append(spec.zero)
                continue
            v = _node_value(table, row, spec, owner)
            dead = False
            for c in children[node]:
                key = _sep_key(table, row, sep_of[c])
                incoming = messages[c].get(key)
                if incoming is None:
                    dead = True
                    break
                v = spec.times(v, incoming)
            vals.append(spec.zero if dead else compact(v))
        values_at[node] = vals
        if par is not None:
            msg: dict[tuple, Any] = {}
            for row, v in enumerate(vals):
                if mask is not None and not mask[row]:
                    continue
                key = _sep_key(table, row, sep_of[node])
                msg[key] = compact(spec.plus(msg[key], v)) if key in msg else v
            messages[node] = msg

    return GroupedResult(group, tuple(values_at[group]))


def eval_sumprod(tree: JoinTree, tables: list[Table], spec: SemiringSpec,
                 ownership: Mapping[str, int] | None = None,
                 masks: list[np.ndarray] | None = None) -> Any:
    """Scalar SumProd over all join rows; zero for an empty join."""
    grouped = eval_sumprod_grouped(tree, tables, spec, tree.root, ownership, masks)
    total = spec.zero
    for v in grouped.values:
        total = spec.plus(total, v)
    compact = spec.compact or (lambda v: v)
    return compact(total)


class JoinEvaluator:
    """Vectorized counting / cost-pair queries against one (tree, tables) pair.

    Separator keys are factorized once per edge; every query after that is
    masked bincount aggregation, so box-restricted and row-conditioned
    variants cost O(total rows) each.  Key comparison is bit-exact (values
    come from input files, never from arithmetic).
    """

    def __init__(self, tree: JoinTree, tables: list[Table],
                 ownership: Mapping[str, int] | None = None):
        self.tree = tree
        self.tables = tables
        self.owner = dict(ownership) if ownership is not None else \
            default_ownership(tree, tables)
        self.n_features = len({f.name for t in tables for f in t.features})
        self._edge_keys: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, int]] = {}
        self._orders: dict[int, list[tuple[int, int | None]]] = {}
        # owned column positions per node, plus feature index for box lookups
        self._owned: dict[int, list[tuple[int, int]]] = {}
        for t in tables:
            self._owned[t.id] = [
                (pos, f.index) for pos, f in enumerate(t.features)
                if self.owner[f.name] == t.id
            ]

    def _order(self, root: int) -> list[tuple[int, int | None]]:
        if root not in self._orders:
            self._orders[root] = self.tree.rooted_order(root)
        return self._orders[root]

    def _keys(self, child: int, parent: int) -> tuple[np.ndarray, np.ndarray, int]:
        """(child row key ids, parent row key ids, number of keys) for an edge."""
        edge = (min(child, parent), max(child, parent))
        if edge not in self._edge_keys:
            sep = self.tree.edge_separator(*edge)
            ta, tb = self.tables[edge[0]], self.tables[edge[1]]
            codes: dict[tuple, int] = {}

            def encode(t: Table) -> np.ndarray:
                names = t.feature_names()
                cols = [t.rows[:, names.index(s)] for s in sep]
                ids = np.empty(t.n_rows, dtype=np.int64)
                for i in range(t.n_rows):
                    key = tuple(c[i] for c in cols)
                    ids[i] = codes.setdefault(key, len(codes))
                return ids

            ids_a, ids_b = encode(ta), encode(tb)
            self._edge_keys[edge] = (ids_a, ids_b, len(codes))
        ids_a, ids_b, n = self._edge_keys[edge]
        if child == min(child, parent):
            return ids_a, ids_b, n
        return ids_b, ids_a, n

    def count_grouped(self, group: int,
                      masks: list[np.ndarray] | None = None) -> np.ndarray:
        """Join-row counts extending each row of the group table (float64,
        exact for counts below 2**53)."""
        base = {
            t.id: (masks[t.id].astype(np.float64) if masks is not None
                   else np.ones(t.n_rows))
            for t in self.tables
        }
        vals = dict(base)
        for node, par in self._order(group):
            if par is None:
                break
            ids_child, ids_par, n = self._keys(node, par)
            msg = np.bincount(ids_child, weights=vals[node], minlength=n)
            vals[par] = vals[par] * msg[ids_par]
        return vals[group]

    def count_scalar(self, masks: list[np.ndarray] | None = None) -> float:
        return float(self.count_grouped(self.tree.root, masks).sum())

    def costpair_grouped(self, group: int, target: np.ndarray,
                         masks: list[np.ndarray] | None = None,
                         ) -> tuple[np.ndarray, np.ndarray]:
        """(cost, count) per group-table row for squared distance to target.

        ``target`` is positional by feature index over the full space.
        """
        a_at: dict[int, np.ndarray] = {}
        b_at: dict[int, np.ndarray] = {}
        for t in self.tables:
            active = (masks[t.id] if masks is not None
                      else np.ones(t.n_rows, dtype=bool))
            b = active.astype(np.float64)
            a = np.zeros(t.n_rows)
            for pos, fidx in self._owned[t.id]:
                a += (t.rows[:, pos] - target[fidx]) ** 2
            a_at[t.id] = a * b
            b_at[t.id] = b
        for node, par in self._order(group):
            if par is None:
                break
            ids_child, ids_par, n = self._keys(node, par)
            msg_a = np.bincount(ids_child, weights=a_at[node], minlength=n)
            msg_b = np.bincount(ids_child, weights=b_at[node], minlength=n)
            ma, mb = msg_a[ids_par], msg_b[ids_par]
            a_at[par], b_at[par] = a_at[par] * mb + ma * b_at[par], b_at[par] * mb
        return a_at[group], b_at[group]

    def masks_for_box(self, box: BoxRect,
                      conditioned: list[np.ndarray] | None = None,
                      ) -> list[np.ndarray]:
        masks = box_row_masks(self.tables, box)
        if conditioned is not None:
            masks = [m & c for m, c in zip(masks, conditioned)]
        return masks

    def singleton_masks(self, fixed_rows: Mapping[int, int]) -> list[np.ndarray]:
        """Masks pinning the given tables to single rows (no table mutation)."""
        masks = []
        for t in self.tables:
            if t.id in fixed_rows:
                m = np.zeros(t.n_rows, dtype=bool)
                m[fixed_rows[t.id]] = True
            else:
                m = np.ones(t.n_rows, dtype=bool)
            masks.append(m)
        return masks


def boxed_cost_grouped(tree: JoinTree, tables: list[Table], box: BoxRect,
                       target: np.ndarray, group: int,
                       evaluator: JoinEvaluator | None = None,
                       conditioned: list[np.ndarray] | None = None) -> np.ndarray:
    """For each row r of the group table, the total squared distance to
    ``target`` of the join rows that extend r and lie inside ``box``.
    Rows filtered out by the box get 0.
    """
    ev = evaluator if evaluator is not None else JoinEvaluator(tree, tables)
    masks = ev.masks_for_box(box, conditioned)
    cost, _ = ev.costpair_grouped(group, np.asarray(target, dtype=np.float64), masks)
    return cost
