"""Keyword and hook classifiers against a brute-force counting oracle."""
from __future__ import annotations

import sys
import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ablmta.classifier import HookClassifier, HookFailure, KeywordClassifier
from oracles import oracle_count_ci

KW = KeywordClassifier(keywords=(("win", 0.5), ("free", 1.0)), threshold=1.0)


class TestKeywordClassifier:
    def test_score_is_weighted_sum_of_counts(self):
        verdict = KW.classify(None, b"WIN free win stuff")
        assert verdict.score == 0.5 * 2 + 1.0
        assert verdict.is_spam
        assert verdict.reason == "keywords:win,free"

    def test_threshold_is_inclusive(self):
        exactly = KW.classify(None, b"win win")
        assert exactly.score == 1.0
        assert exactly.is_spam
        under = KW.classify(None, b"win only")
        assert under.score == 0.5
        assert not under.is_spam
        assert under.reason == ""

    def test_counting_is_non_overlapping_and_case_blind(self):
        clf = KeywordClassifier(keywords=(("aa", 1.0),), threshold=10.0)
        assert clf.classify(None, b"aAaAa").score == 2.0

    def test_reason_lists_only_matched_keywords_in_config_order(self):
        clf = KeywordClassifier(
            keywords=(("alpha", 5.0), ("beta", 5.0), ("gamma", 5.0)), threshold=1.0
        )
        verdict = clf.classify(None, b"gamma then alpha")
        assert verdict.reason == "keywords:alpha,gamma"

    def test_no_keywords_never_spam(self):
        clf = KeywordClassifier(keywords=(), threshold=0.0)
        verdict = clf.classify(None, b"anything")
        # Zero score still crosses a zero threshold.
        assert verdict.score == 0.0
        assert verdict.is_spam

    def test_validation(self):
        with pytest.raises(ValueError):
            KeywordClassifier(keywords=(("", 1.0),), threshold=1.0)
        with pytest.raises(ValueError):
            KeywordClassifier(keywords=(("x", -0.5),), threshold=1.0)
        with pytest.raises(ValueError):
            KeywordClassifier(keywords=(("x", float("nan")),), threshold=1.0)

    @settings(max_examples=300, deadline=None)
    @given(
        body=st.binary(max_size=60),
        words=st.lists(
            st.tuples(
                st.text(alphabet="abcWIN ", min_size=1, max_size=4),
                st.floats(0, 10, allow_nan=False),
            ),
            max_size=4,
        ),
        threshold=st.floats(0, 20),
    )
    def test_score_matches_oracle(self, body, words, threshold):
        clf = KeywordClassifier(keywords=tuple(words), threshold=threshold)
        expected = 0.0
        for word, weight in words:
            hits = oracle_count_ci(body, word.encode("utf-8"))
            if hits:
                expected += weight * hits
        verdict = clf.classify(None, body)
        assert verdict.score == expected
        assert verdict.is_spam == (expected >= threshold)

    @settings(max_examples=200, deadline=None)
    @given(body=st.binary(max_size=40), suffix=st.binary(max_size=40))
    def test_more_text_never_lowers_the_score(self, body, suffix):
        assert KW.classify(None, body + suffix).score >= KW.classify(None, body).score


def write_hook(tmp_path, name, source):
    path = tmp_path / name
    path.write_text(textwrap.dedent(source))
    return (sys.executable, str(path))


class TestHookClassifier:
    def test_scoring_hook(self, tmp_path):
        command = write_hook(
            tmp_path,
            "hook.py",
            """\
            import sys
            body = sys.stdin.buffer.read()
            print("score=%d" % body.count(b"win"))
            print("diagnostic chatter, ignored")
            """,
        )
        clf = HookClassifier(command, threshold=2.0)
        spam = clf.classify(None, b"win win win")
        assert (spam.score, spam.is_spam) == (3.0, True)
        assert spam.reason == "hook score=3"
        clean = clf.classify(None, b"nothing here")
        assert (clean.score, clean.is_spam) == (0.0, False)

    def test_fractional_scores_parse(self, tmp_path):
        command = write_hook(tmp_path, "hook.py", 'print("score=2.5")\n')
        assert HookClassifier(command, threshold=2.5).classify(None, b"").is_spam

    @pytest.mark.parametrize(
        "source,fragment",
        [
            ('print("score=banana")\n', "unparsable"),
            ('print("no score here")\n', "expected score="),
            ("", "expected score="),
            ('import sys; print("score=9"); sys.exit(3)\n', "exit status 3"),
        ],
    )
    def test_misbehaving_hooks_raise(self, tmp_path, source, fragment):
        command = write_hook(tmp_path, "hook.py", source)
        clf = HookClassifier(command, threshold=1.0)
        with pytest.raises(HookFailure, match=fragment):
            clf.run_hook(b"body")

    def test_classify_fails_open(self, tmp_path):
        command = write_hook(tmp_path, "hook.py", "import sys; sys.exit(1)\n")
        verdict = HookClassifier(command, threshold=0.0).classify(None, b"x")
        assert not verdict.is_spam
        assert verdict.score == 0.0
        assert verdict.reason.startswith("hook failed")

    def test_timeout_fails_open(self, tmp_path):
        command = write_hook(
            tmp_path, "hook.py", "import time; time.sleep(30); print('score=1')\n"
        )
        clf = HookClassifier(command, threshold=0.0, timeout_ms=300)
        with pytest.raises(HookFailure, match="timed out"):
            clf.run_hook(b"")
        assert not clf.classify(None, b"").is_spam

    def test_missing_binary_fails_open(self):
        clf = HookClassifier(("/nonexistent/hook-binary",), threshold=0.0)
        with pytest.raises(HookFailure, match="could not run"):
            clf.run_hook(b"")
        assert not clf.classify(None, b"").is_spam

    def test_from_command_line_splits_like_a_shell(self):
        clf = HookClassifier.from_command_line("scorer --mode 'two words'", 1.0)
        assert clf.command == ("scorer", "--mode", "two words")
        with pytest.raises(ValueError):
            HookClassifier.from_command_line("   ", 1.0)
