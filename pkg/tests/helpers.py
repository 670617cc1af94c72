"""Shared test machinery: fixtures writers, brute-force oracles, random expressions."""

from __future__ import annotations

import random
from pathlib import Path

from profilebits.query import And, AndNot, Or, Predicate, Xor


def write_table(path: Path, columns, rows, delimiter="\t") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [delimiter.join(columns)]
    lines.extend(delimiter.join(str(f) for f in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


TABLE1_COLUMNS = ["user_id", "age", "gender"]
TABLE1_ROWS = [["sam", "15", "male"], ["alex", "29", "male"]]


def write_table1(path: Path) -> Path:
    return write_table(path, TABLE1_COLUMNS, TABLE1_ROWS)


class SetOracle:
    """Brute-force reference evaluation over raw (id, label, value) rows.

    Ids may be external strings or numeric uids; the oracle only does set
    algebra, mirroring the engine's semantics: an absent (label, value) pair
    is the empty set and negation exists only as binary difference.
    """

    def __init__(self) -> None:
        self.sets: dict[tuple[str, str], set] = {}
        self.universe: set = set()

    def observe(self, row_id, label: str, value: str) -> None:
        value = value.strip()
        if not value:
            return
        self.sets.setdefault((label, value), set()).add(row_id)
        self.universe.add(row_id)

    @classmethod
    def from_rows(cls, rows) -> "SetOracle":
        oracle = cls()
        for row_id, label, value in rows:
            oracle.observe(row_id, label, value)
        return oracle

    def evaluate(self, expr) -> set:
        if isinstance(expr, Predicate):
            return set(self.sets.get((expr.label, expr.value), set()))
        if isinstance(expr, And):
            out = self.evaluate(expr.children[0])
            for child in expr.children[1:]:
                out &= self.evaluate(child)
            return out
        if isinstance(expr, Or):
            out = self.evaluate(expr.children[0])
            for child in expr.children[1:]:
                out |= self.evaluate(child)
            return out
        if isinstance(expr, Xor):
            return self.evaluate(expr.a) ^ self.evaluate(expr.b)
        if isinstance(expr, AndNot):
            return self.evaluate(expr.a) - self.evaluate(expr.b)
        raise TypeError(expr)


def random_expr(rng: random.Random, values_by_label: dict[str, list[str]], max_depth=4, max_predicates=6):
    """A random expression of depth <= max_depth with <= max_predicates leaves."""
    labels = sorted(values_by_label)

    def leaf():
        label = rng.choice(labels)
        values = values_by_label[label]
        if rng.random() < 0.05:
            return Predicate(label, "absent-value")
        return Predicate(label, rng.choice(values))

    def gen(depth, budget):
        if depth <= 0 or budget <= 1 or rng.random() < 0.35:
            return leaf(), 1
        kind = rng.choice(("and", "or", "xor", "andnot"))
        if kind in ("and", "or"):
            n = rng.randint(2, min(3, budget))
            children = []
            used = 0
            for _ in range(n):
                child, c = gen(depth - 1, budget - used - (n - len(children) - 1))
                children.append(child)
                used += c
            node = And(tuple(children)) if kind == "and" else Or(tuple(children))
            return node, used
        left, lc = gen(depth - 1, budget - 1)
        right, rc = gen(depth - 1, budget - lc)
        node = Xor(left, right) if kind == "xor" else AndNot(left, right)
        return node, lc + rc

    expr, _ = gen(max_depth, max_predicates)
    return expr
