"""Finite marked plane trees in word (Neveu) notation.

A tree is stored as two parallel tuples listing, in lexicographic order of
the node words (which is depth-first preorder), the out-degree and the mark
of every node.  Words are derived on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

Word = tuple[int, ...]

ROOT: Word = ()


class TreeError(ValueError):
    """Raised for malformed trees or words that are not nodes of a tree."""


def word_norm(u: Word) -> int:
    """Return ``max(|u|, largest letter)``; the root has norm 0."""
    return max(len(u), max(u, default=0))


def parse_word(text: str) -> Word:
    """Parse ``""``/``"root"``/``"1.3.2"``/``"132"`` into a word.

    Dot- or comma-separated letters are read as integers; an undelimited
    string is read one digit per letter.
    """
    text = text.strip()
    if text in ("", "root", "()", "0"):
        return ROOT
    for sep in (".", ",", " "):
        if sep in text:
            letters = tuple(int(a) for a in text.split(sep) if a)
            break
    else:
        letters = tuple(int(c) for c in text)
    if any(a < 1 for a in letters):
        raise TreeError(f"word letters must be positive: {text!r}")
    return letters


def format_word(u: Word) -> str:
    return ".".join(map(str, u)) if u else "root"


def _check_lukasiewicz(degrees: Sequence[int]) -> None:
    if not degrees:
        raise TreeError("a tree has at least one node")
    open_slots = 1
    for i, k in enumerate(degrees):
        if k < 0:
            raise TreeError("degrees must be nonnegative")
        if open_slots == 0:
            raise TreeError(f"degree sequence ends early at position {i}")
        open_slots += k - 1
    if open_slots != 0:
        raise TreeError("degree sequence does not close the tree")


@dataclass(frozen=True)
class MarkedTree:
    """Immutable finite marked tree; equality is equality of both sequences."""

    degrees: tuple[int, ...]
    marks: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "degrees", tuple(int(k) for k in self.degrees))
        object.__setattr__(self, "marks", tuple(int(bool(m)) for m in self.marks))
        if len(self.degrees) != len(self.marks):
            raise TreeError("degrees and marks must have equal length")
        _check_lukasiewicz(self.degrees)

    # ----------------------------------------------------------- builders
    @classmethod
    def leaf(cls, mark: int = 0) -> "MarkedTree":
        return cls((0,), (mark,))

    @classmethod
    def from_words(cls, words: Iterable[Word], marked: Iterable[Word] = ()) -> "MarkedTree":
        """Build a tree from a prefix-closed set of words."""
        nodes = {tuple(w) for w in words}
        nodes.add(ROOT)
        for u in nodes:
            if u and u[:-1] not in nodes:
                raise TreeError(f"word set is not prefix-closed at {format_word(u)}")
            if u and u[-1] > 1 and u[:-1] + (u[-1] - 1,) not in nodes:
                raise TreeError(f"children of {format_word(u[:-1])} are not contiguous")
        marked = {tuple(w) for w in marked}
        if not marked <= nodes:
            raise TreeError("marked words must be nodes")
        order = sorted(nodes)
        degree = {u: 0 for u in order}
        for u in order:
            if u:
                degree[u[:-1]] += 1
        return cls(tuple(degree[u] for u in order), tuple(int(u in marked) for u in order))

    @classmethod
    def from_nested(cls, node) -> "MarkedTree":
        """Build from ``(mark, [child, ...])`` nested pairs."""
        degrees: list[int] = []
        marks: list[int] = []
        stack = [node]
        while stack:
            mark, children = stack.pop()
            degrees.append(len(children))
            marks.append(mark)
            stack.extend(reversed(children))
        return cls(tuple(degrees), tuple(marks))

    # --------------------------------------------------------- structure
    def __len__(self) -> int:
        return len(self.degrees)

    @property
    def size(self) -> int:
        return len(self.degrees)

    @property
    def mark_count(self) -> int:
        """M(t*), the number of marked nodes."""
        return sum(self.marks)

    @cached_property
    def words(self) -> tuple[Word, ...]:
        out: list[Word] = []
        stack: list[list] = []
        for k in self.degrees:
            if stack:
                top = stack[-1]
                top[2] += 1
                w = top[0] + (top[2],)
                if top[2] == top[1]:
                    stack.pop()
            else:
                w = ROOT
            out.append(w)
            if k > 0:
                stack.append([w, k, 0])
        return tuple(out)

    @cached_property
    def _index(self) -> dict[Word, int]:
        return {w: i for i, w in enumerate(self.words)}

    @cached_property
    def subtree_sizes(self) -> tuple[int, ...]:
        sizes = [0] * len(self.degrees)
        stack: list[int] = []
        for i in range(len(self.degrees) - 1, -1, -1):
            total = 1
            for _ in range(self.degrees[i]):
                total += stack.pop()
            sizes[i] = total
            stack.append(total)
        return tuple(sizes)

    def index(self, u: Word) -> int:
        try:
            return self._index[tuple(u)]
        except KeyError:
            raise TreeError(f"{format_word(tuple(u))} is not a node of the tree") from None

    def __contains__(self, u) -> bool:
        return tuple(u) in self._index

    def degree(self, u: Word) -> int:
        return self.degrees[self.index(u)]

    def mark(self, u: Word) -> int:
        return self.marks[self.index(u)]

    def children(self, i: int) -> list[int]:
        """Preorder indices of the children of node ``i``."""
        out, j = [], i + 1
        for _ in range(self.degrees[i]):
            out.append(j)
            j += self.subtree_sizes[j]
        return out

    @property
    def height(self) -> int:
        return max(len(w) for w in self.words)

    @property
    def norm_height(self) -> int:
        return max(word_norm(w) for w in self.words)

    def leaves(self) -> list[Word]:
        return [w for w, k in zip(self.words, self.degrees) if k == 0]

    def marked_words(self) -> list[Word]:
        return [w for w, m in zip(self.words, self.marks) if m]

    def to_nested(self):
        def build(i):
            return (self.marks[i], [build(c) for c in self.children(i)])

        return build(0)

    # ------------------------------------------------------ serialization
    def to_text(self) -> str:
        """Canonical text form ``(k,m)[child...]``; leaves carry no brackets."""
        parts: list[str] = []
        closers: list[int] = []
        for k, m in zip(self.degrees, self.marks):
            parts.append(f"({k},{m})")
            if k:
                parts.append("[")
                closers.append(k)
            else:
                while closers:
                    closers[-1] -= 1
                    if closers[-1]:
                        break
                    closers.pop()
                    parts.append("]")
        return "".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "MarkedTree":
        degrees: list[int] = []
        marks: list[int] = []
        i, n = 0, len(text)
        while i < n:
            c = text[i]
            if c == "(":
                j = text.index(")", i)
                k, m = text[i + 1 : j].split(",")
                degrees.append(int(k))
                marks.append(int(m))
                i = j + 1
            elif c in "[] \n\t":
                i += 1
            else:
                raise TreeError(f"unexpected character {c!r} in tree text")
        return cls(tuple(degrees), tuple(marks))

    def to_json_obj(self) -> dict:
        def build(i):
            return {
                "degree": self.degrees[i],
                "mark": self.marks[i],
                "children": [build(c) for c in self.children(i)],
            }

        return build(0)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "MarkedTree":
        degrees: list[int] = []
        marks: list[int] = []
        stack = [obj]
        while stack:
            node = stack.pop()
            children = node.get("children", [])
            if node.get("degree", len(children)) != len(children):
                raise TreeError("'degree' disagrees with the number of children")
            degrees.append(len(children))
            marks.append(int(node.get("mark", 0)))
            stack.extend(reversed(children))
        return cls(tuple(degrees), tuple(marks))

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "MarkedTree":
        return cls.from_json_obj(json.loads(text))

    def __repr__(self) -> str:
        return f"MarkedTree({self.to_text()})"


@dataclass(frozen=True)
class RestrictedTree:
    """A window onto a possibly larger tree.

    ``truncated`` holds the words whose true out-degree exceeds the degree
    shown in ``tree``; for such nodes only a lower bound is known.
    """

    tree: MarkedTree
    window: str
    h: int
    truncated: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.window not in ("height", "norm"):
            raise TreeError("window must be 'height' or 'norm'")

    def key(self) -> str:
        tail = ",".join(format_word(u) for u in sorted(self.truncated))
        return f"{self.tree.to_text()}|{tail}"

    def to_json_obj(self) -> dict:
        obj = self.tree.to_json_obj()
        stack = [(obj, ROOT)]
        while stack:
            node, w = stack.pop()
            if w in self.truncated:
                node["truncated"] = True
            for i, child in enumerate(node["children"], start=1):
                stack.append((child, w + (i,)))
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict, window: str, h: int) -> "RestrictedTree":
        truncated = set()
        stack = [(obj, ROOT)]
        while stack:
            node, w = stack.pop()
            if node.get("truncated"):
                truncated.add(w)
            for i, child in enumerate(node.get("children", []), start=1):
                stack.append((child, w + (i,)))
        return cls(MarkedTree.from_json_obj(obj), window, h, frozenset(truncated))


# ------------------------------------------------------------------ operations
def restrict(t: MarkedTree, h: int, window: str = "height") -> RestrictedTree:
    """Restriction to height ``h`` or to nodes of norm at most ``h``.

    Marks of nodes at depth ``h`` are reset to 0 in both windows.
    """
    if h < 0:
        raise TreeError("h must be nonnegative")
    keep_degree: list[int] = []
    keep_mark: list[int] = []
    truncated = set()
    for w, k, m in zip(t.words, t.degrees, t.marks):
        if len(w) > h:
            continue
        if window == "norm" and w and max(w) > h:
            continue
        if len(w) == h:
            shown = 0
        elif window == "norm":
            shown = min(k, h)
        else:
            shown = k
        if shown < k:
            truncated.add(w)
        keep_degree.append(shown)
        keep_mark.append(m if len(w) < h else 0)
    return RestrictedTree(MarkedTree(tuple(keep_degree), tuple(keep_mark)), window, h, frozenset(truncated))


def subtree_at(t: MarkedTree, u: Word) -> MarkedTree:
    """The subtree rooted at ``u`` (descendants of ``u``, relabelled), marks kept."""
    i = t.index(u)
    j = i + t.subtree_sizes[i]
    return MarkedTree(t.degrees[i:j], t.marks[i:j])


def subtree_below(t: MarkedTree, x: Word) -> MarkedTree:
    """Remove the strict descendants of ``x`` and unmark ``x``.

    For the root this returns the single unmarked node.
    """
    i = t.index(x)
    if i == 0:
        return MarkedTree.leaf(0)
    j = i + t.subtree_sizes[i]
    degrees = t.degrees[:i] + (0,) + t.degrees[j:]
    marks = t.marks[:i] + (0,) + t.marks[j:]
    return MarkedTree(degrees, marks)


def forest_above(t: MarkedTree, x: Word) -> tuple[MarkedTree, ...]:
    """The subtrees rooted at the children of ``x``, in order."""
    i = t.index(x)
    if t.degrees[i] == 0:
        raise TreeError(f"{format_word(tuple(x))} is a leaf; its forest is empty")
    return tuple(
        MarkedTree(t.degrees[c : c + t.subtree_sizes[c]], t.marks[c : c + t.subtree_sizes[c]])
        for c in t.children(i)
    )


def graft(t: MarkedTree, x: Word, s: MarkedTree) -> MarkedTree:
    """Append the root-children of ``s`` after the children of ``x`` in ``t``.

    The mark of ``x`` is taken from ``t``; the root mark of ``s`` is dropped.
    """
    i = t.index(x)
    end = i + t.subtree_sizes[i]
    degrees = list(t.degrees)
    degrees[i] += s.degrees[0]
    degrees[end:end] = s.degrees[1:]
    marks = list(t.marks)
    marks[end:end] = s.marks[1:]
    return MarkedTree(tuple(degrees), tuple(marks))


def _prune_extra_children(s: MarkedTree, x: Word, keep: int) -> MarkedTree | None:
    if x not in s:
        return None
    i = s.index(x)
    if s.degrees[i] < keep:
        return None
    kids = s.children(i)
    if len(kids) == keep:
        return s
    start = kids[keep]
    end = i + s.subtree_sizes[i]
    degrees = list(s.degrees[:start] + s.degrees[end:])
    degrees[i] = keep
    return MarkedTree(tuple(degrees), s.marks[:start] + s.marks[end:])


def in_graft_set(s: MarkedTree, t: MarkedTree, x: Word) -> bool:
    """True iff ``s = graft(t, x, t')`` for some marked tree ``t'``."""
    t.index(x)
    pruned = _prune_extra_children(s, tuple(x), t.degree(x))
    return pruned is not None and pruned == t


def in_graft_set_plus(s: MarkedTree, t: MarkedTree, x: Word, k: int) -> bool:
    """``in_graft_set`` with the extra requirement that ``x`` has at least ``k`` children in ``s``."""
    return in_graft_set(s, t, x) and s.degree(x) >= k


def ball_in_graft_set(ball: RestrictedTree, t: MarkedTree, x: Word, k: int = 0) -> bool:
    """Graft-set membership decided from a restricted view of the tree.

    Raises ``TreeError`` when the window is too small for the answer to be
    determined.
    """
    s = ball.tree
    x = tuple(x)
    t.index(x)
    # Every node of t must be visible with its exact degree, except x which
    # needs only a lower bound.
    for u, deg_t, mark_t in zip(t.words, t.degrees, t.marks):
        if u not in s:
            if ball.window == "norm" and word_norm(u) > ball.h or len(u) > ball.h:
                raise TreeError("window too small to decide graft membership")
            return False
        j = s.index(u)
        if len(u) >= ball.h:
            raise TreeError("window too small to decide graft membership")
        deg_s, cut = s.degrees[j], u in ball.truncated
        if s.marks[j] != mark_t:
            return False
        if u == x:
            need = max(k, deg_t)
            if deg_s >= need:
                continue
            if cut:
                raise TreeError("window too small to decide the degree at x")
            return False
        if cut:
            if deg_s > deg_t:
                return False
            raise TreeError("window too small to decide a degree")
        if deg_s != deg_t:
            return False
    return True


# ------------------------------------------------------- mark decomposition
@dataclass(frozen=True)
class MarkDecomposition:
    """Forest of marked nodes and the unmarked-descendant skeleton."""

    forest: tuple[MarkedTree, ...]
    skeleton: MarkedTree
    labels: tuple[tuple[Word, ...], ...]

    @property
    def roots(self) -> tuple[Word, ...]:
        return tuple(lab[0] for lab in self.labels)

    @property
    def node_count(self) -> int:
        return sum(f.size for f in self.forest)


def mark_decomposition(t: MarkedTree) -> MarkDecomposition:
    """Reduce a marked tree to the forest spanned by its marked nodes.

    A marked node ``v`` becomes a child of the closest marked strict
    ancestor of ``v``; marked nodes without a marked strict ancestor are the
    forest roots.  If the root itself is marked, the forest is a single tree
    rooted at it.
    """
    n = t.size
    parent = [-1] * n
    for i in range(n):
        for c in t.children(i):
            parent[c] = i
    nearest = [-1] * n  # nearest marked strict ancestor
    for i in range(1, n):
        p = parent[i]
        nearest[i] = p if t.marks[p] else nearest[p]

    kids: dict[int, list[int]] = {i: [] for i in range(n) if t.marks[i]}
    roots: list[int] = []
    for i in range(n):
        if not t.marks[i]:
            continue
        if nearest[i] == -1:
            roots.append(i)
        else:
            kids[nearest[i]].append(i)

    forest, labels = [], []
    for r in roots:
        degrees, order = [], []
        stack = [r]
        while stack:
            v = stack.pop()
            degrees.append(len(kids[v]))
            order.append(t.words[v])
            stack.extend(reversed(kids[v]))
        forest.append(MarkedTree(tuple(degrees), (1,) * len(degrees)))
        labels.append(tuple(order))

    if t.marks[0]:
        skeleton = MarkedTree.leaf(1)
    else:
        sk_deg, sk_mark = [], []
        for i in range(n):
            if nearest[i] != -1:
                continue
            sk_deg.append(0 if t.marks[i] else t.degrees[i])
            sk_mark.append(t.marks[i])
        skeleton = MarkedTree(tuple(sk_deg), tuple(sk_mark))
    return MarkDecomposition(tuple(forest), skeleton, tuple(labels))


# ------------------------------------------------------------- enumeration
def enumerate_plane_forests(size: int, roots: int = 1, degrees: Iterable[int] | None = None) -> Iterator[tuple[int, ...]]:
    """Preorder degree sequences of all plane forests with ``roots`` trees and ``size`` nodes."""
    allowed = sorted(set(degrees)) if degrees is not None else list(range(size))
    seq: list[int] = []

    def rec(open_slots: int, left: int):
        if left == 0:
            if open_slots == 0:
                yield tuple(seq)
            return
        if open_slots == 0:
            return
        for k in allowed:
            nxt = open_slots - 1 + k
            if nxt > left - 1:
                break
            seq.append(k)
            yield from rec(nxt, left - 1)
            seq.pop()

    if roots < 1 or size < roots:
        return
    yield from rec(roots, size)


def split_forest(degrees: Sequence[int]) -> list[tuple[int, ...]]:
    """Cut a forest's preorder degree sequence into its trees."""
    out, start, slots = [], 0, 0
    for i, k in enumerate(degrees):
        slots += k - (0 if i == start else 1)
        if slots == 0:
            out.append(tuple(degrees[start : i + 1]))
            start = i + 1
    return out


def enumerate_trees(size: int, degrees: Iterable[int] | None = None) -> Iterator[tuple[int, ...]]:
    return enumerate_plane_forests(size, 1, degrees)


def enumerate_marked_trees(max_size: int, degrees: Iterable[int] | None = None) -> Iterator[MarkedTree]:
    """All marked trees with at most ``max_size`` nodes (degrees optionally restricted)."""
    allowed = None if degrees is None else list(degrees)
    for n in range(1, max_size + 1):
        for seq in enumerate_trees(n, allowed):
            for bits in range(1 << n):
                yield MarkedTree(seq, tuple((bits >> i) & 1 for i in range(n)))
