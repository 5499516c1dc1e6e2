"""Term-weighting expression trees.

A tree combines terminals (see :mod:`twsgp.termstats`) with the function set
``+ - * div log2 sqrt pow2``.  Evaluation is element-wise over N x |V| matrices,
with per-term vectors repeated across rows and constants filled everywhere.
Operators are protected so every tree evaluates to a finite matrix:

* ``div(a, b)`` is 0 where ``|b| <= 1e-12``
* ``log2(x)`` is ``log2|x|``, or 0 where ``|x| <= 1e-12``
* ``sqrt(x)`` is ``sqrt|x|``
* any result that overflows to +-inf is replaced by 0
"""

from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Union

import numpy as np

from .corpus import DocumentSet
from .termstats import TERMINALS, Terminal, TermStats

EPS = 1e-12

UNARY_OPS = ("log2", "sqrt", "pow2")
BINARY_OPS = ("add", "sub", "mul", "div")
FUNCTIONS = BINARY_OPS + UNARY_OPS

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "div",
           "log2": "log2", "sqrt": "sqrt", "pow2": "pow2"}

_OP_ALIASES = {
    "+": "add", "plus": "add", "add": "add",
    "-": "sub", "minus": "sub", "sub": "sub",
    "*": "mul", "×": "mul", "$\\times$": "mul", "\\times": "mul", "times": "mul", "mul": "mul",
    "div": "div", "/": "div",
    "log2": "log2", "log": "log2",
    "sqrt": "sqrt",
    "pow2": "pow2",
}

TERMINAL_NAMES = {
    Terminal.W1: "N", Terminal.W2: "V", Terminal.W3: "CHI", Terminal.W4: "IG",
    Terminal.W5: "TFIDF", Terminal.W6: "TF", Terminal.W7: "GLOBTF", Terminal.W8: "TP",
    Terminal.W9: "FP", Terminal.W10: "TN", Terminal.W11: "FN", Terminal.W12: "ACCU",
    Terminal.W13: "ACBAL", Terminal.W14: "BNS", Terminal.W15: "DFREQ", Terminal.W16: "FMEAS",
    Terminal.W17: "ODDSR", Terminal.W18: "POWER", Terminal.W19: "ProbR", Terminal.W20: "MAXTERM",
    Terminal.W21: "RF", Terminal.W22: "TF-RF",
}

_TERMINAL_ALIASES = {name.upper(): t for t, name in TERMINAL_NAMES.items()}
_TERMINAL_ALIASES.update({t.name: t for t in TERMINALS})
_TERMINAL_ALIASES["TF-IDF"] = Terminal.W5


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Leaf:
    terminal: Terminal

    def __str__(self):
        return print_prefix(self)


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"{self.op!r} is not a unary operator")

    def __str__(self):
        return print_prefix(self)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"{self.op!r} is not a binary operator")

    def __str__(self):
        return print_prefix(self)


Expr = Union[Leaf, Unary, Binary]


def children(node: Expr) -> tuple:
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, Unary):
        return (node.child,)
    return ()


def depth(node: Expr) -> int:
    kids = children(node)
    return 1 + (max(depth(k) for k in kids) if kids else 0)


def size(node: Expr) -> int:
    return 1 + sum(size(k) for k in children(node))


def terminals(node: Expr) -> Counter:
    if isinstance(node, Leaf):
        return Counter([node.terminal])
    out: Counter = Counter()
    for k in children(node):
        out.update(terminals(k))
    return out


def metrics(node: Expr) -> dict:
    return {"depth": depth(node), "size": size(node), "terminals": terminals(node)}


# -- printing / parsing ---------------------------------------------------


def print_prefix(node: Expr) -> str:
    if isinstance(node, Leaf):
        return TERMINAL_NAMES[node.terminal]
    args = ",".join(print_prefix(k) for k in children(node))
    return f"{_SYMBOL[node.op]}({args})"


_TOKEN = re.compile(r"\s*(?:([(),])|([^\s(),]+))")


def _lex(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        tok = m.group(1) or m.group(2)
        tokens.append((tok, m.start(1) if m.group(1) else m.start(2)))
        pos = m.end()
    return tokens


def parse_prefix(text: str) -> Expr:
    """Parse a prefix expression such as ``-(sqrt(TFIDF),div(RF,TF))``.

    Operator spellings ``+ plus - minus * × times div log log2 sqrt pow2`` and
    terminal names (``TF``, ``TF-RF``, ``ProbR``, ... or ``W1``..``W22``) are
    accepted case-insensitively.
    """
    tokens = _lex(text)
    if not tokens:
        raise ParseError("empty expression", 0)
    node, i = _parse(tokens, 0, len(text))
    if i != len(tokens):
        tok, pos = tokens[i]
        if tok == ")":
            raise ParseError("unbalanced ')'", pos)
        raise ParseError(f"unexpected token {tok!r}", pos)
    return node


def _parse(tokens, i, end):
    if i >= len(tokens):
        raise ParseError("unexpected end of expression", end)
    tok, pos = tokens[i]
    if tok in "(),":
        raise ParseError(f"unexpected {tok!r}", pos)
    followed_by_paren = i + 1 < len(tokens) and tokens[i + 1][0] == "("
    op = _OP_ALIASES.get(tok.lower()) or _OP_ALIASES.get(tok)
    if not followed_by_paren:
        term = _TERMINAL_ALIASES.get(tok.upper())
        if term is not None:
            return Leaf(term), i + 1
        if op is not None:
            raise ParseError(f"operator {tok!r} needs arguments", pos)
        raise ParseError(f"unknown token {tok!r}", pos)
    if op is None:
        if tok.upper() in _TERMINAL_ALIASES:
            raise ParseError(f"terminal {tok!r} takes no arguments", pos)
        raise ParseError(f"unknown operator {tok!r}", pos)
    i += 2
    args = []
    while True:
        arg, i = _parse(tokens, i, end)
        args.append(arg)
        if i >= len(tokens):
            raise ParseError("unbalanced '(': missing ')'", end)
        sep, sep_pos = tokens[i]
        if sep == ",":
            i += 1
            continue
        if sep == ")":
            i += 1
            break
        raise ParseError(f"expected ',' or ')' but found {sep!r}", sep_pos)
    arity = 2 if op in BINARY_OPS else 1
    if len(args) != arity:
        raise ParseError(f"{tok!r} takes {arity} argument(s), got {len(args)}", pos)
    if arity == 2:
        return Binary(op, args[0], args[1]), i
    return Unary(op, args[0]), i


# -- evaluation -------------------------------------------------------------


def _finite(x: np.ndarray) -> np.ndarray:
    if np.isfinite(x).all():
        return x
    return np.where(np.isfinite(x), x, 0.0)


def apply_unary(op: str, x: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op == "sqrt":
            r = np.sqrt(np.abs(x))
        elif op == "pow2":
            r = np.square(x)
        elif op == "log2":
            ax = np.abs(x)
            r = np.zeros_like(ax)
            np.log2(ax, out=r, where=ax > EPS)
        else:
            raise ValueError(f"unknown unary operator {op!r}")
    return _finite(r)


def apply_binary(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op == "add":
            r = a + b
        elif op == "sub":
            r = a - b
        elif op == "mul":
            r = a * b
        elif op == "div":
            shape = np.broadcast_shapes(a.shape, b.shape)
            r = np.zeros(shape)
            np.divide(a, b, out=r, where=np.abs(b) > EPS)
        else:
            raise ValueError(f"unknown binary operator {op!r}")
    return _finite(r)


def evaluate_compact(node: Expr, stats: TermStats, data: DocumentSet, memo: dict | None = None) -> np.ndarray:
    """Evaluate without materializing broadcast operands.

    The result has shape (1, 1), (1, |V|) or (N, |V|); broadcasting it gives
    the same values as evaluating on fully replicated matrices.
    """
    if memo is not None:
        hit = memo.get(node)
        if hit is not None:
            return hit
    if isinstance(node, Leaf):
        value = stats.terminal_value(node.terminal, data)
    elif isinstance(node, Unary):
        value = apply_unary(node.op, evaluate_compact(node.child, stats, data, memo))
    else:
        value = apply_binary(node.op, evaluate_compact(node.left, stats, data, memo),
                             evaluate_compact(node.right, stats, data, memo))
    if memo is not None:
        memo[node] = value
    return value


def evaluate(node: Expr, stats: TermStats, data: DocumentSet, share_subtrees: bool = True) -> np.ndarray:
    """Weight matrix (N x |V|) of ``node`` on ``data`` using statistics fitted on training data."""
    stats.check_compatible(data)
    memo = {} if share_subtrees else None
    value = evaluate_compact(node, stats, data, memo)
    out = np.empty((data.n_docs, stats.vocab_size))
    out[...] = value
    return out


# -- model files ------------------------------------------------------------

MODEL_HEADER = "# twsgp model"


def save_model(path: str | os.PathLike, node: Expr, metadata: dict) -> None:
    """Line 1 is the canonical prefix expression; then ``key: value`` lines."""
    from .fileio import atomic_write_text

    lines = [print_prefix(node), MODEL_HEADER]
    for key, value in metadata.items():
        text = str(value)
        if "\n" in text or ":" in key:
            raise ValueError(f"metadata {key!r} must be a single line")
        lines.append(f"{key}: {text}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path: str | os.PathLike) -> tuple[Expr, dict]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty model file")
    node = parse_prefix(lines[0])
    meta = {}
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"{path}: bad metadata line {line!r}")
        meta[key.strip()] = value.strip()
    return node, meta
