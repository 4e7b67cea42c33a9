"""Probabilistic CFG over the matcher's clarification/selection fragment.

Utterance strings are tokenized (lowercase, punctuation stripped, multi-word
lexicon labels merged) and chart-parsed into ranked logical forms; the
inverse direction realizes logical forms through fixed templates. The rule
set ships as a JSON asset; color terms are injected as expansions of a
designated preterminal with uniform probability.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

from .lexicon import Lexicon
from .logic import Act, LogicalForm

PROB_TOLERANCE = 1e-9

# matcher phrasings use comparative forms freely ("the darker blue")
_COMPARATIVE_FORMS = {
    "darker": "dark",
    "lighter": "light",
    "brighter": "bright",
    "paler": "pale",
    "deeper": "deep",
}

_PUNCT_RE = re.compile(r"[^\w\s]")


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple[str, ...]
    p: float


class Grammar:
    """Rule set plus the act/patch-word interpretation tables."""

    def __init__(
        self,
        rules: list[Rule],
        start: str,
        term_symbol: str,
        acts: dict[str, Act],
        patch_words: dict[str, int],
    ):
        self.rules = rules
        self.start = start
        self.term_symbol = term_symbol
        self.acts = acts
        self.patch_words = patch_words
        self.nonterminals = {r.lhs for r in rules} | {term_symbol}
        self._validate()

    def _validate(self) -> None:
        sums: dict[str, float] = {}
        for rule in self.rules:
            if not 0.0 < rule.p <= 1.0:
                raise GrammarError(f"rule {rule.lhs} -> {rule.rhs} has probability {rule.p}")
            if not rule.rhs:
                raise GrammarError(f"rule {rule.lhs} has an empty expansion")
            sums[rule.lhs] = sums.get(rule.lhs, 0.0) + rule.p
        for lhs, total in sums.items():
            if abs(total - 1.0) > PROB_TOLERANCE:
                raise GrammarError(f"probabilities for {lhs!r} sum to {total}, not 1")
        if self.start not in sums:
            raise GrammarError(f"start symbol {self.start!r} has no rules")
        # unit-rule graph must be acyclic or parsing would not terminate
        unit_edges: dict[str, set[str]] = {}
        for rule in self.rules:
            if len(rule.rhs) == 1 and rule.rhs[0] in self.nonterminals:
                unit_edges.setdefault(rule.lhs, set()).add(rule.rhs[0])
        seen: dict[str, int] = {}

        def visit(sym: str) -> None:
            state = seen.get(sym, 0)
            if state == 1:
                raise GrammarError(f"unit-rule cycle through {sym!r}")
            if state == 2:
                return
            seen[sym] = 1
            for nxt in unit_edges.get(sym, ()):
                visit(nxt)
            seen[sym] = 2

        for sym in list(unit_edges):
            visit(sym)

    @classmethod
    def from_json(cls, obj: dict) -> "Grammar":
        rules = [
            Rule(lhs=r["lhs"], rhs=tuple(r["rhs"]), p=float(r["p"]))
            for r in obj["rules"]
        ]
        acts = {sym: Act(name) for sym, name in obj["acts"].items()}
        patch_words = {w: int(i) for w, i in obj["patch_words"].items()}
        return cls(
            rules=rules,
            start=obj["start"],
            term_symbol=obj.get("term_symbol", "TERM"),
            acts=acts,
            patch_words=patch_words,
        )


def load_grammar(path=None) -> Grammar:
    if path is None:
        data = resources.files("refgame.assets").joinpath("grammar.json").read_text()
    else:
        with open(path) as fh:
            data = fh.read()
    return Grammar.from_json(json.loads(data))


def tokenize(utterance: str, lexicon: Lexicon) -> list[str]:
    """Lowercase, strip punctuation, normalize comparatives, then merge
    multi-word lexicon labels into single tokens (greedy longest match)."""
    text = _PUNCT_RE.sub(" ", utterance.lower())
    words = [_COMPARATIVE_FORMS.get(w, w) for w in text.split()]
    label_seqs = sorted(
        (tuple(label.split()) for label in lexicon.labels() if " " in label),
        key=len,
        reverse=True,
    )
    tokens: list[str] = []
    i = 0
    while i < len(words):
        for seq in label_seqs:
            if tuple(words[i : i + len(seq)]) == seq:
                tokens.append(" ".join(seq))
                i += len(seq)
                break
        else:
            tokens.append(words[i])
            i += 1
    return tokens


# ---------------------------------------------------------------------------
# CKY machinery

@dataclass(frozen=True)
class _Item:
    symbol: str
    prob: float
    rule: Rule | None            # originating (pre-binarization) rule, if any
    children: tuple = ()         # child _Item objects
    token: str | None = None     # leaf word


class _CompiledGrammar:
    """Binarized view: preterminal, unit and binary rule indexes."""

    def __init__(self, grammar: Grammar, lexicon: Lexicon):
        self.grammar = grammar
        self.lexicon = lexicon
        self.preterm: dict[str, list[tuple[str, float, Rule | None]]] = {}
        self.units: list[tuple[str, str, float, Rule]] = []
        self.binary: dict[tuple[str, str], list[tuple[str, float, Rule | None]]] = {}
        self._counter = 0
        for rule in grammar.rules:
            self._compile(rule)
        n = len(lexicon)
        for term in lexicon.terms:
            self.preterm.setdefault(term.label, []).append(
                (grammar.term_symbol, 1.0 / n, None)
            )

    def _wrap(self, symbol: str) -> str:
        if symbol in self.grammar.nonterminals:
            return symbol
        name = f"_t:{symbol}"
        entries = self.preterm.setdefault(symbol, [])
        if not any(sym == name for sym, _, _ in entries):
            entries.append((name, 1.0, None))
        return name

    def _compile(self, rule: Rule) -> None:
        rhs = rule.rhs
        if len(rhs) == 1:
            sym = rhs[0]
            if sym in self.grammar.nonterminals:
                self.units.append((rule.lhs, sym, rule.p, rule))
            else:
                self.preterm.setdefault(sym, []).append((rule.lhs, rule.p, rule))
            return
        wrapped = [self._wrap(s) for s in rhs]
        # right-branching chain; the original probability sits on the top rule
        lhs = rule.lhs
        p = rule.p
        orig: Rule | None = rule
        while len(wrapped) > 2:
            self._counter += 1
            mid = f"_bin:{rule.lhs}:{self._counter}"
            self.binary.setdefault((wrapped[0], mid), []).append((lhs, p, orig))
            lhs, p, orig = mid, 1.0, None
            wrapped = wrapped[1:]
        self.binary.setdefault((wrapped[0], wrapped[1]), []).append((lhs, p, orig))


_compiled_cache: dict[tuple[int, int], _CompiledGrammar] = {}


def _compiled(grammar: Grammar, lexicon: Lexicon) -> _CompiledGrammar:
    key = (id(grammar), id(lexicon))
    cached = _compiled_cache.get(key)
    if cached is None or cached.grammar is not grammar or cached.lexicon is not lexicon:
        cached = _CompiledGrammar(grammar, lexicon)
        _compiled_cache[key] = cached
    return cached


def _unit_closure(items: list[_Item], compiled: _CompiledGrammar) -> None:
    frontier = list(items)
    while frontier:
        new: list[_Item] = []
        for lhs, rhs_sym, p, rule in compiled.units:
            for item in frontier:
                if item.symbol == rhs_sym:
                    new.append(
                        _Item(symbol=lhs, prob=p * item.prob, rule=rule, children=(item,))
                    )
        items.extend(new)
        frontier = new


def parse(
    utterance: str, grammar: Grammar, lexicon: Lexicon
) -> list[tuple[LogicalForm, float]]:
    """All complete parses as (logical form, probability), ranked by
    descending probability; duplicate logical forms keep their best
    derivation. Unknown tokens yield an empty list."""
    tokens = tokenize(utterance, lexicon)
    if not tokens:
        raise ValueError("utterance is empty after tokenization")
    compiled = _compiled(grammar, lexicon)
    n = len(tokens)
    chart: dict[tuple[int, int], list[_Item]] = {}
    for i, token in enumerate(tokens):
        cell = [
            _Item(symbol=sym, prob=p, rule=rule, token=token)
            for sym, p, rule in compiled.preterm.get(token, [])
        ]
        _unit_closure(cell, compiled)
        chart[(i, i + 1)] = cell
    for span in range(2, n + 1):
        for i in range(0, n - span + 1):
            j = i + span
            cell: list[_Item] = []
            for k in range(i + 1, j):
                for left in chart[(i, k)]:
                    for right in chart[(k, j)]:
                        for lhs, p, rule in compiled.binary.get(
                            (left.symbol, right.symbol), []
                        ):
                            cell.append(
                                _Item(
                                    symbol=lhs,
                                    prob=p * left.prob * right.prob,
                                    rule=rule,
                                    children=(left, right),
                                )
                            )
            _unit_closure(cell, compiled)
            chart[(i, j)] = cell
    results: dict[LogicalForm, float] = {}
    order: dict[LogicalForm, int] = {}
    for idx, item in enumerate(chart[(0, n)]):
        if item.symbol != grammar.start:
            continue
        lf = _extract(item, grammar, lexicon)
        if lf is None:
            continue
        if lf not in results or item.prob > results[lf]:
            results[lf] = item.prob
            order.setdefault(lf, idx)
    ranked = sorted(results.items(), key=lambda kv: (-kv[1], order[kv[0]]))
    return ranked


def _extract(
    item: _Item, grammar: Grammar, lexicon: Lexicon
) -> LogicalForm | None:
    act_sym = item.children[0].symbol if item.children else None
    act = grammar.acts.get(act_sym or "")
    if act is None:
        return None
    terms: list[str] = []
    patch_ref: int | None = None

    def walk(node: _Item) -> None:
        nonlocal patch_ref
        if node.symbol == grammar.term_symbol and node.token is not None:
            term = lexicon.by_label(node.token)
            if term is not None:
                terms.append(term.id)
            return
        if node.token is not None and node.token in grammar.patch_words:
            patch_ref = grammar.patch_words[node.token]
        for child in node.children:
            walk(child)

    walk(item)
    try:
        return LogicalForm(act=act, terms=tuple(terms), patch_ref=patch_ref)
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# Template realization

_PATCH_NAMES = ("left", "middle", "right")


def realize(lf: LogicalForm, lexicon: Lexicon) -> str:
    """Deterministic surface string for a logical form; empty for end-turn."""

    def label(joiner: str = " and ") -> str:
        return joiner.join(lexicon.by_id(t).label for t in lf.terms)

    if lf.act is Act.DESCRIBE:
        return f"the {label()} one"
    if lf.act is Act.NEGATE_DESCRIPTION:
        return f"not the {label()} one"
    if lf.act is Act.AFFIRM_TERM:
        return f"yes, {label()}"
    if lf.act is Act.NEGATE_TERM:
        return f"no, not {label()}"
    if lf.act is Act.CLARIFY_TERM:
        return f"is it the {label()} one?"
    if lf.act is Act.CLARIFY_PATCH:
        return f"is it the {_PATCH_NAMES[lf.patch_ref]} one?"
    if lf.act is Act.SELECT:
        return f"i pick the {_PATCH_NAMES[lf.patch_ref]} one"
    return ""
