import json
from pathlib import Path

import numpy as np
import pytest

from refgame.grammar import (
    Grammar,
    GrammarError,
    load_grammar,
    parse,
    realize,
    tokenize,
)
from refgame.lexicon import load_lexicon
from refgame.logic import (
    Act,
    LogicalForm,
    affirm_term,
    clarify_patch,
    clarify_term,
    describe,
    negate_term,
)

GOLDEN_PATH = Path(__file__).parent / "data" / "golden_utterances.json"


@pytest.fixture(scope="module")
def lexicon():
    return load_lexicon()


@pytest.fixture(scope="module")
def grammar():
    return load_grammar()


def enumerate_language(grammar, lexicon):
    """Independent oracle: expand every derivation of the (finite) grammar
    top-down and interpret it, without touching the chart parser."""

    rules_by_lhs = {}
    for rule in grammar.rules:
        rules_by_lhs.setdefault(rule.lhs, []).append(rule)

    def expand(symbol):
        # yields (tokens, prob, term_ids, patch_ref)
        if symbol == grammar.term_symbol:
            n = len(lexicon)
            for term in lexicon.terms:
                yield (term.label,), 1.0 / n, (term.id,), None
            return
        if symbol not in rules_by_lhs:
            patch = grammar.patch_words.get(symbol)
            yield (symbol,), 1.0, (), patch
            return
        for rule in rules_by_lhs[symbol]:
            partials = [((), rule.p, (), None)]
            for child in rule.rhs:
                nxt = []
                for tokens, p, terms, patch in partials:
                    for ct, cp, cterms, cpatch in expand(child):
                        nxt.append(
                            (
                                tokens + ct,
                                p * cp,
                                terms + cterms,
                                cpatch if cpatch is not None else patch,
                            )
                        )
                partials = nxt
            yield from partials

    language = {}
    for rule in rules_by_lhs[grammar.start]:
        act = grammar.acts.get(rule.rhs[0])
        if act is None:
            continue
        for tokens, p, terms, patch in expand(rule.rhs[0]):
            try:
                lf = LogicalForm(act=act, terms=terms, patch_ref=patch)
            except ValueError:
                continue
            entry = language.setdefault(tokens, {})
            prob = rule.p * p
            if lf not in entry or prob > entry[lf]:
                entry[lf] = prob
    return language


@pytest.fixture(scope="module")
def oracle(grammar, lexicon):
    return enumerate_language(grammar, lexicon)


class TestTokenizer:
    def test_lowercase_and_punctuation(self, lexicon):
        assert tokenize("IS it, THE teal ONE?!", lexicon) == [
            "is", "it", "the", "teal", "one",
        ]

    def test_multiword_label_merge(self, lexicon):
        assert tokenize("not the dark blue one", lexicon) == [
            "not", "the", "dark blue", "one",
        ]

    def test_comparative_normalization(self, lexicon):
        assert tokenize("the darker blue", lexicon) == ["the", "dark blue"]
        assert tokenize("the lighter green one", lexicon) == [
            "the", "light green", "one",
        ]


class TestParse:
    def test_golden_suite(self, grammar, lexicon):
        cases = json.loads(GOLDEN_PATH.read_text())
        assert len(cases) >= 25
        for case in cases:
            results = parse(case["utterance"], grammar, lexicon)
            assert results, f"no parse for {case['utterance']!r}"
            top = results[0][0]
            assert top.act.value == case["act"], case["utterance"]
            assert list(top.terms) == case["terms"], case["utterance"]
            assert top.patch_ref == case["patch_ref"], case["utterance"]

    def test_unknown_token_gives_empty_result(self, grammar, lexicon):
        assert parse("xyzzy?", grammar, lexicon) == []
        assert parse("is it the xyzzy one", grammar, lexicon) == []

    def test_empty_after_tokenization_raises(self, grammar, lexicon):
        with pytest.raises(ValueError):
            parse("?!.", grammar, lexicon)

    def test_matches_exhaustive_enumeration(self, grammar, lexicon, oracle):
        # every sentence the oracle derives parses to the same ranked LFs
        rng = np.random.default_rng(19)
        sentences = list(oracle)
        picks = rng.choice(len(sentences), size=250, replace=False)
        for idx in picks:
            tokens = sentences[int(idx)]
            expected = oracle[tokens]
            got = parse(" ".join(tokens), grammar, lexicon)
            assert {lf: p for lf, p in got} == pytest.approx(expected)
            probs = [p for _, p in got]
            assert probs == sorted(probs, reverse=True)
            assert all(0.0 < p <= 1.0 for p in probs)

    def test_spec_phrasings(self, grammar, lexicon):
        top = parse("is it the teal one?", grammar, lexicon)[0][0]
        assert top == clarify_term("teal")
        top = parse("the darker blue?", grammar, lexicon)[0][0]
        assert top == clarify_term("dark_blue")


class TestRealize:
    def test_templates(self, lexicon):
        assert realize(describe("teal"), lexicon) == "the teal one"
        assert realize(negate_term("dark_blue"), lexicon) == "no, not dark blue"
        assert (
            realize(LogicalForm(Act.NEGATE_DESCRIPTION, terms=("teal",)), lexicon)
            == "not the teal one"
        )
        assert realize(affirm_term("rose"), lexicon) == "yes, rose"
        assert realize(clarify_patch(1), lexicon) == "is it the middle one?"
        assert realize(LogicalForm(Act.END_TURN), lexicon) == ""

    def test_round_trip_on_random_clarification_lfs(self, grammar, lexicon):
        rng = np.random.default_rng(23)
        makers = [
            lambda: clarify_term(lexicon.terms[rng.integers(len(lexicon))].id),
            lambda: clarify_patch(int(rng.integers(3))),
            lambda: affirm_term(lexicon.terms[rng.integers(len(lexicon))].id),
            lambda: negate_term(lexicon.terms[rng.integers(len(lexicon))].id),
        ]
        for _ in range(1000):
            lf = makers[rng.integers(len(makers))]()
            text = realize(lf, lexicon)
            results = parse(text, grammar, lexicon)
            assert results, f"no parse for realized {lf}"
            top = results[0][0]
            assert top.act == lf.act
            assert top.terms == lf.terms
            assert top.polarity == lf.polarity
            if lf.act is Act.CLARIFY_PATCH:
                assert top.patch_ref == lf.patch_ref


class TestGrammarValidation:
    def test_rejects_bad_probability_sum(self):
        with pytest.raises(GrammarError):
            Grammar(
                rules=[
                    type(load_grammar().rules[0])(lhs="S", rhs=("a",), p=0.5),
                ],
                start="S",
                term_symbol="TERM",
                acts={},
                patch_words={},
            )

    def test_rejects_unit_cycle(self):
        rule = type(load_grammar().rules[0])
        with pytest.raises(GrammarError):
            Grammar(
                rules=[
                    rule(lhs="S", rhs=("B",), p=1.0),
                    rule(lhs="B", rhs=("S",), p=1.0),
                ],
                start="S",
                term_symbol="TERM",
                acts={},
                patch_words={},
            )

    def test_every_lexicon_label_parseable(self, grammar, lexicon):
        for label in lexicon.labels():
            assert parse(label, grammar, lexicon), label
