import numpy as np
import pytest

from twsgp.expr import (Binary, Leaf, ParseError, Unary, apply_binary, apply_unary, depth, evaluate,
                        evaluate_compact, load_model, metrics, parse_prefix, print_prefix, save_model, size,
                        terminals)
from twsgp.gp import full_tree, grow_tree
from twsgp.termstats import Terminal, TermStats

from helpers import TOY_COUNTS, TOY_IDF, TOY_RF, random_set, toy_set

# Learned schemes as published, verbatim (mixed operator spellings included).
PUBLISHED = [
    r"-(sqrt(TFIDF),div(log2(sqrt(ProbR)),RF))",
    r"sqrt(div(pow2(sqrt(TFIDF)),div(pow2(TF-RF),pow2(TF-RF))))",
    r"sqrt(sqrt(div(TF,GLOBTF)))",
    r"sqrt($\times$(sqrt(sqrt(TFIDF)), sqrt($\times$(sqrt(TFIDF),IG))))",
    r"div(TF-RF,+(+(+(RF,TF-RF),FMEAS),FMEAS))",
    r"$\times$(ProbR,TFIDF)",
    r"div(TF,sqrt(log2(ACCU)))",
    r"-(IG,plus(TF-RF,TFIDF))",
    r"-(-(RF,TF-RF),TF-IDF)",
    r"div(TF-RF,pow2(ODDSR))",
    r"minus(TF-RF,PROBR)",
    r"div(TF,log2(div(TF,log(TF-RF))))",
    r"+(-(TF-RF,-(-(TF-RF,-(TF-RF,POWER)),POWER)),TF)",
    r"$\times$(IG,TF-RF)",
    r"sqrt(sqrt(-(ODDSR,sqrt(sqrt(TF-RF)))))",
    r"sqrt(-(TF-RF,ACBAL))",
]

TF, TFIDF, RF, TFRF = Leaf(Terminal.W6), Leaf(Terminal.W5), Leaf(Terminal.W21), Leaf(Terminal.W22)


class TestParsing:
    @pytest.mark.parametrize("text", PUBLISHED)
    def test_published_round_trip(self, text):
        tree = parse_prefix(text)
        canon = print_prefix(tree)
        assert parse_prefix(canon) == tree
        assert print_prefix(parse_prefix(canon)) == canon

    def test_aliases(self):
        assert parse_prefix(r"$\times$(IG,TF-RF)") == parse_prefix("*(IG,TF-RF)") == parse_prefix("times(w4, W22)")
        assert parse_prefix("log(TF)") == Unary("log2", TF)
        assert parse_prefix("TF-IDF") == parse_prefix("tfidf") == TFIDF
        assert parse_prefix("plus(TF,RF)") == Binary("add", TF, RF)

    def test_canonical_form(self):
        assert print_prefix(parse_prefix("minus( TF-RF , PROBR )")) == "-(TF-RF,ProbR)"

    def test_tf_rf_is_one_terminal(self):
        assert parse_prefix("TF-RF") == TFRF

    @pytest.mark.parametrize("text, fragment", [
        ("", "empty"),
        ("+(TF", r"missing '\)'"),
        ("+(TF,RF))", r"unbalanced '\)'"),
        ("sqrt(TF,RF)", "argument"),
        ("+(TF)", "argument"),
        ("foo(TF)", "unknown operator"),
        ("BM25", "unknown token"),
        ("TF(RF)", "takes no arguments"),
        ("sqrt", "needs arguments"),
        ("TF RF", "unexpected token"),
    ])
    def test_errors(self, text, fragment):
        with pytest.raises(ParseError, match=fragment):
            parse_prefix(text)

    def test_error_position(self):
        with pytest.raises(ParseError) as info:
            parse_prefix("+(TF,XYZ)")
        assert info.value.position == 5


class TestShape:
    def test_metrics(self):
        tree = parse_prefix("+(-(TF-RF,-(-(TF-RF,-(TF-RF,POWER)),POWER)),TF)")
        m = metrics(tree)
        assert (m["depth"], m["size"]) == (6, 11)
        assert m["terminals"][Terminal.W22] == 3

    def test_depth_counts_leaves_as_one(self):
        assert depth(TF) == 1 and size(TF) == 1
        assert depth(Unary("sqrt", TF)) == 2

    def test_first_published_tree(self):
        # -, sqrt, TFIDF, div, log2, sqrt, ProbR, RF: eight nodes, longest path - div log2 sqrt ProbR
        tree = parse_prefix(PUBLISHED[0])
        assert (size(tree), depth(tree)) == (8, 5)
        assert tree == Binary("sub", Unary("sqrt", TFIDF),
                              Binary("div", Unary("log2", Unary("sqrt", Leaf(Terminal.W19))), RF))

    def test_operator_validation(self):
        with pytest.raises(ValueError):
            Unary("add", TF)
        with pytest.raises(ValueError):
            Binary("sqrt", TF, TF)


class TestProtectedOperators:
    def test_div_by_small(self):
        r = apply_binary("div", np.array([[1.0, 2.0, 3.0]]), np.array([[0.0, 1e-13, 2.0]]))
        assert r.tolist() == [[0.0, 0.0, 1.5]]

    def test_log_and_sqrt_use_absolute_value(self):
        x = np.array([[-8.0, 0.0, 4.0, 1e-13]])
        assert apply_unary("log2", x).tolist() == [[3.0, 0.0, 2.0, 0.0]]
        assert apply_unary("sqrt", x)[0, :3].tolist() == [np.sqrt(8.0), 0.0, 2.0]

    def test_overflow_becomes_zero(self):
        assert apply_unary("pow2", np.array([[1e200]])).tolist() == [[0.0]]
        assert apply_binary("mul", np.array([[1e200]]), np.array([[1e200]])).tolist() == [[0.0]]

    def test_broadcast_shapes(self):
        r = apply_binary("add", np.ones((1, 1)), np.arange(3.0)[None, :])
        assert r.shape == (1, 3)


class TestEvaluation:
    def test_tf_times_idf_reconstructs_tfidf(self):
        ds = toy_set()
        st = TermStats.fit(ds)
        hand = TOY_COUNTS * np.array(TOY_IDF)[None, :]
        tree = parse_prefix("*(TF,div(TFIDF,TF))")
        np.testing.assert_allclose(evaluate(tree, st, ds), hand, rtol=0, atol=1e-12)
        np.testing.assert_allclose(evaluate(TFIDF, st, ds), hand, rtol=0, atol=1e-12)

    def test_tf_times_rf_is_tfrf(self):
        ds = toy_set()
        st = TermStats.fit(ds)
        np.testing.assert_array_equal(evaluate(Binary("mul", TF, RF), st, ds), evaluate(TFRF, st, ds))
        np.testing.assert_allclose(evaluate(TFRF, st, ds), TOY_COUNTS * np.array(TOY_RF), atol=1e-12)

    def test_constants_fill_matrix(self):
        ds = toy_set()
        st = TermStats.fit(ds)
        out = evaluate(parse_prefix("div(N,V)"), st, ds)
        assert out.shape == (5, 6) and (out == 5 / 6).all()

    def test_compact_matches_full_replication(self):
        rng = np.random.default_rng(5)
        ds = random_set(rng, n=12, v=9, k=3)
        st = TermStats.fit(ds)
        for _ in range(200):
            tree = grow_tree(int(rng.integers(1, 7)), rng) if rng.random() < 0.5 else full_tree(int(rng.integers(1, 5)), rng)
            np.testing.assert_array_equal(evaluate(tree, st, ds), _evaluate_naive(tree, st, ds))

    def test_shared_subtrees_do_not_change_values(self):
        rng = np.random.default_rng(9)
        ds = random_set(rng, n=10, v=6)
        st = TermStats.fit(ds)
        tree = parse_prefix("+(sqrt(TFIDF),*(sqrt(TFIDF),sqrt(TFIDF)))")
        np.testing.assert_array_equal(evaluate(tree, st, ds), evaluate(tree, st, ds, share_subtrees=False))

    @pytest.mark.parametrize("text", PUBLISHED)
    def test_published_trees_are_finite(self, text):
        ds = random_set(np.random.default_rng(11), n=30, v=15, k=4)
        st = TermStats.fit(ds)
        assert np.isfinite(evaluate(parse_prefix(text), st, ds)).all()

    def test_compact_shapes(self):
        ds = toy_set()
        st = TermStats.fit(ds)
        assert evaluate_compact(parse_prefix("sqrt(N)"), st, ds).shape == (1, 1)
        assert evaluate_compact(parse_prefix("+(IG,N)"), st, ds).shape == (1, 6)
        assert evaluate_compact(parse_prefix("+(IG,TF)"), st, ds).shape == (5, 6)


def _evaluate_naive(tree, st, ds):
    """Reference evaluator: every operand is a full N x |V| matrix."""
    if isinstance(tree, Leaf):
        return np.array(st.terminal_matrix(tree.terminal, ds))
    if isinstance(tree, Unary):
        return apply_unary(tree.op, _evaluate_naive(tree.child, st, ds))
    return apply_binary(tree.op, _evaluate_naive(tree.left, st, ds), _evaluate_naive(tree.right, st, ds))


class TestModelFile:
    def test_round_trip(self, tmp_path):
        tree = parse_prefix(PUBLISHED[0])
        save_model(tmp_path / "m.tws", tree, {"seed": 3, "fitness": "0.5"})
        back, meta = load_model(tmp_path / "m.tws")
        assert back == tree
        assert meta == {"seed": "3", "fitness": "0.5"}
        assert (tmp_path / "m.tws").read_text().splitlines()[0] == print_prefix(tree)

    def test_multiline_metadata_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_model(tmp_path / "m.tws", TF, {"note": "a\nb"})
