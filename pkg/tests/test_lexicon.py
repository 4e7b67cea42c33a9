import math

import numpy as np
import pytest

from refgame.colors import Color, ColorContext, classify_condition
from refgame.lexicon import (
    Lexicon,
    Term,
    applicability,
    applicability_matrix,
    lexicon_from_json,
    lexicon_to_json,
    listener,
    load_lexicon,
    speaker,
)


@pytest.fixture(scope="module")
def lexicon():
    return load_lexicon()


def make_context(*colors, target=0):
    cols = tuple(colors)
    return ColorContext(cols, target, classify_condition(cols))


class TestApplicability:
    def test_one_at_center(self, lexicon):
        term = lexicon.by_id("teal")
        color = Color.from_lab(*term.center)
        # from_lab snaps to the nearest representable rgb, so allow slack
        assert applicability(term, color) == pytest.approx(1.0, abs=1e-4)

    def test_one_spread_away(self):
        term = Term(id="t", label="t", center=(50.0, 0.0, 0.0), spread=(10.0, 10.0, 10.0))
        color = Color.from_lab(60.0, 0.0, 0.0)
        assert applicability(term, color) == pytest.approx(math.exp(-0.5), abs=1e-4)

    def test_monotone_along_ray(self):
        term = Term(id="t", label="t", center=(55.0, 0.0, 0.0), spread=(12.0, 14.0, 14.0))
        values = []
        for step in np.linspace(0.0, 30.0, 12):
            color = Color.from_lab(55.0 - step, 2.0 * step / 30.0 * 5.0, 0.0)
            values.append(applicability(term, color))
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_in_unit_interval(self, lexicon):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c = Color.from_rgb(*rng.random(3))
            for term in lexicon.terms:
                assert 0.0 <= applicability(term, c) <= 1.0

    def test_matrix_agrees_with_scalar(self, lexicon):
        rng = np.random.default_rng(5)
        cols = tuple(Color.from_rgb(*rng.random(3)) for _ in range(3))
        ctx = make_context(*cols)
        mat = applicability_matrix(lexicon, ctx)
        for ti, term in enumerate(lexicon.terms):
            for pi, patch in enumerate(ctx.patches):
                assert mat[ti, pi] == pytest.approx(applicability(term, patch))


class TestSpeaker:
    def test_identical_patches_match_brute_force(self, lexicon):
        c = Color.from_rgb(0.1, 0.5, 0.55)
        ctx = make_context(c, c, c)
        got = speaker(c, ctx, lexicon)
        # independent brute force: app * (1 - app)^2 per term, normalized
        raw = {}
        for term in lexicon.terms:
            a = math.exp(
                -0.5
                * sum(
                    ((x - m) / s) ** 2
                    for x, m, s in zip(c.lab, term.center, term.spread)
                )
            )
            raw[term.id] = a * (1.0 - a) ** 2
        total = sum(raw.values())
        for tid, score in raw.items():
            assert got[tid] == pytest.approx(score / total, abs=1e-9)

    def test_discriminating_term_beats_distractor_term(self):
        target = Color.from_lab(50, 0, 0)
        distractor = Color.from_lab(80, 0, 40)
        other = Color.from_lab(30, 30, -30)
        lex = Lexicon(
            terms=(
                Term(id="a", label="a", center=target.lab, spread=(8, 8, 8)),
                Term(id="b", label="b", center=distractor.lab, spread=(8, 8, 8)),
            )
        )
        ctx = make_context(target, distractor, other)
        dist = speaker(target, ctx, lex)
        assert dist["a"] > dist["b"]

    def test_blue_target_gets_blue_family_term(self, lexicon):
        blue = Color.from_rgb(0, 0, 1)
        ctx = make_context(blue, Color.from_rgb(1, 0, 0), Color.from_rgb(0, 1, 0))
        dist = speaker(blue, ctx, lexicon)
        best = max(dist, key=dist.get)
        assert any(h in best for h in ("blue", "azure", "indigo", "violet"))

    def test_distractor_order_invariant(self, lexicon):
        rng = np.random.default_rng(7)
        for _ in range(25):
            cols = [Color.from_rgb(*rng.random(3)) for _ in range(3)]
            ctx_a = make_context(cols[0], cols[1], cols[2])
            ctx_b = make_context(cols[0], cols[2], cols[1])
            da = speaker(cols[0], ctx_a, lexicon)
            db = speaker(cols[0], ctx_b, lexicon)
            for tid in da:
                assert da[tid] == pytest.approx(db[tid], abs=1e-12)

    def test_is_distribution(self, lexicon):
        rng = np.random.default_rng(9)
        for _ in range(50):
            cols = tuple(Color.from_rgb(*rng.random(3)) for _ in range(3))
            ctx = make_context(*cols)
            dist = speaker(cols[0], ctx, lexicon)
            assert all(v >= 0 for v in dist.values())
            assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_fallback(self):
        # single term that fits the distractors perfectly: score is zero
        c = Color.from_lab(50, 0, 0)
        lex = Lexicon(terms=(Term(id="x", label="x", center=(0, 0, 0), spread=(1, 1, 1)),))
        ctx = make_context(c, c, c)
        # applicability to all patches is ~0 -> all-zero scores -> uniform
        assert speaker(c, ctx, lex)["x"] == pytest.approx(1.0)

    def test_requires_target_in_context(self, lexicon):
        c = Color.from_lab(50, 0, 0)
        ctx = make_context(c, c, c)
        with pytest.raises(ValueError):
            speaker(Color.from_lab(80, 0, 0), ctx, lexicon)


class TestListener:
    def test_point_mass(self):
        target = Color.from_lab(50, 0, 0)
        far1 = Color.from_lab(95, 0, 0)
        far2 = Color.from_lab(5, 0, 0)
        term = Term(id="t", label="t", center=target.lab, spread=(1.5, 1.5, 1.5))
        ctx = make_context(target, far1, far2)
        pos = listener(term, ctx)
        assert pos[0] == pytest.approx(1.0, abs=1e-6)
        neg = listener(term, ctx, negated=True)
        assert neg[0] == pytest.approx(0.0, abs=1e-6)
        assert neg[1] == pytest.approx(0.5, abs=1e-6)
        assert neg[2] == pytest.approx(0.5, abs=1e-6)

    def test_normalization_arithmetic(self):
        # applicabilities (0.8, 0.4, 0.2) -> positive (4/7, 2/7, 1/7)
        term = Term(id="t", label="t", center=(50.0, 0.0, 0.0), spread=(10.0, 10.0, 10.0))
        labs = [50.0 + 10.0 * math.sqrt(-2.0 * math.log(a)) for a in (0.8, 0.4, 0.2)]
        cols = tuple(Color.from_lab(l, 0, 0) for l in labs)
        ctx = make_context(*cols)
        pos = listener(term, ctx)
        assert pos[0] == pytest.approx(4 / 7, abs=1e-4)
        assert pos[1] == pytest.approx(2 / 7, abs=1e-4)
        assert pos[2] == pytest.approx(1 / 7, abs=1e-4)

    def test_both_modes_sum_to_one(self, lexicon):
        rng = np.random.default_rng(13)
        for _ in range(40):
            cols = tuple(Color.from_rgb(*rng.random(3)) for _ in range(3))
            ctx = make_context(*cols)
            for term in lexicon.terms[::5]:
                for negated in (False, True):
                    dist = listener(term, ctx, negated=negated)
                    assert sum(dist) == pytest.approx(1.0, abs=1e-9)
                    assert all(v >= 0 for v in dist)

    def test_equal_applicabilities_give_uniform_in_both_modes(self):
        c = Color.from_lab(60, 5, 5)
        term = Term(id="t", label="t", center=(50.0, 0.0, 0.0), spread=(10.0, 10.0, 10.0))
        ctx = make_context(c, c, c)
        for negated in (False, True):
            dist = listener(term, ctx, negated=negated)
            assert dist == pytest.approx((1 / 3, 1 / 3, 1 / 3))


class TestLexiconIO:
    def test_round_trip(self, lexicon):
        back = lexicon_from_json(lexicon_to_json(lexicon))
        assert back == lexicon

    def test_default_size(self, lexicon):
        assert len(lexicon) >= 20

    def test_duplicate_ids_rejected(self):
        t = Term(id="x", label="x", center=(0, 0, 0), spread=(1, 1, 1))
        u = Term(id="x", label="y", center=(0, 0, 0), spread=(1, 1, 1))
        with pytest.raises(ValueError):
            Lexicon(terms=(t, u))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Lexicon(terms=())

    def test_nonpositive_spread_rejected(self):
        with pytest.raises(ValueError):
            Term(id="x", label="x", center=(0, 0, 0), spread=(1, 0, 1))
