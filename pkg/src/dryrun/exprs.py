"""Expression trees over 64-bit values.

Trees are tagged tuples so they hash/compare structurally and share
substructure for free:

    ("lit", value) | ("var", name) | ("sym", id) | (op, lhs, rhs)

with ``op`` one of ``& | ^ + - == != < >``.  Comparisons yield 0/1.
``var`` leaves appear in parsed workloads; the driver runtime substitutes
them with concrete values or ``sym`` placeholders for pending reads.
"""

from __future__ import annotations

import re

MASK64 = (1 << 64) - 1

BINOPS = ("&", "|", "^", "+", "-", "==", "!=", "<", ">")
CMP_OPS = ("==", "!=", "<", ">")

# lowest binds loosest
_PRECEDENCE = {"==": 0, "!=": 0, "<": 0, ">": 0, "|": 1, "^": 2, "&": 3, "+": 4, "-": 4}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<hex>0[xX][0-9a-fA-F]+)|(?P<num>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>==|!=|<|>|&|\||\^|\+|-|\(|\)))"
)


class ExprSyntaxError(ValueError):
    pass


def tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ExprSyntaxError(f"bad token at {text[pos:]!r}")
            break
        pos = m.end()
        if m.lastgroup == "hex":
            tokens.append(("num", int(m.group("hex"), 16)))
        elif m.lastgroup == "num":
            tokens.append(("num", int(m.group("num"))))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident")))
        else:
            tokens.append(("op", m.group("op")))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected {op!r}, got {val!r}")

    def parse(self):
        node = self._cmp()
        if self.pos != len(self.tokens):
            raise ExprSyntaxError(f"trailing tokens after expression: {self.tokens[self.pos:]!r}")
        return node

    def _cmp(self):
        node = self._chain(1)
        kind, val = self.peek()
        if kind == "op" and val in CMP_OPS:
            self.take()
            rhs = self._chain(1)
            node = (val, node, rhs)
        return node

    def _chain(self, level):
        ops = {1: ("|",), 2: ("^",), 3: ("&",), 4: ("+", "-")}[level]
        node = self._chain(level + 1) if level < 4 else self._primary()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in ops:
                self.take()
                rhs = self._chain(level + 1) if level < 4 else self._primary()
                node = (val, node, rhs)
            else:
                return node

    def _primary(self):
        kind, val = self.take()
        if kind == "num":
            return ("lit", val & MASK64)
        if kind == "ident":
            return ("var", val)
        if kind == "op" and val == "(":
            node = self._cmp()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected token {val!r}")


def parse_expr(text: str):
    return _Parser(tokenize(text)).parse()


def format_expr(expr, parent_prec: int = -1) -> str:
    tag = expr[0]
    if tag == "lit":
        v = expr[1]
        return f"{v:#x}" if v >= 16 else str(v)
    if tag in ("var", "sym"):
        return expr[1] if tag == "var" else f"$S{expr[1]}"
    prec = _PRECEDENCE[tag]
    inner = f"{format_expr(expr[1], prec)} {tag} {format_expr(expr[2], prec + 1)}"
    return f"({inner})" if prec <= parent_prec else inner


def apply_op(op: str, a: int, b: int) -> int:
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "+":
        return (a + b) & MASK64
    if op == "-":
        return (a - b) & MASK64
    if op == "==":
        return 1 if a == b else 0
    if op == "!=":
        return 1 if a != b else 0
    if op == "<":
        return 1 if a < b else 0
    if op == ">":
        return 1 if a > b else 0
    raise ValueError(f"unknown operator {op!r}")


def eval_expr(expr, lookup):
    """Reduce a tree given ``lookup(tag, payload) -> int | tree``.

    Leaves the tree partially symbolic when lookups return trees; folds to
    an int when everything resolves.
    """
    tag = expr[0]
    if tag == "lit":
        return expr[1]
    if tag in ("var", "sym"):
        return lookup(tag, expr[1])
    a = eval_expr(expr[1], lookup)
    b = eval_expr(expr[2], lookup)
    if isinstance(a, int) and isinstance(b, int):
        return apply_op(tag, a, b)
    an = ("lit", a) if isinstance(a, int) else a
    bn = ("lit", b) if isinstance(b, int) else b
    return (tag, an, bn)


def expr_symbols(expr, acc=None) -> set:
    """Collect ids of ``sym`` leaves."""
    if acc is None:
        acc = set()
    tag = expr[0]
    if tag == "sym":
        acc.add(expr[1])
    elif tag not in ("lit", "var"):
        expr_symbols(expr[1], acc)
        expr_symbols(expr[2], acc)
    return acc


def expr_depth(expr) -> int:
    if expr[0] in ("lit", "var", "sym"):
        return 1
    return 1 + max(expr_depth(expr[1]), expr_depth(expr[2]))
