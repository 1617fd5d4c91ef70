from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reidlab import evalkit as ek
from reidlab.backend import (
    BackendError,
    IdentityEmbedder,
    NoisyOracle,
    PerfectOracle,
    image_part,
)
from reidlab.evalkit import (
    EvalError,
    PrefilterConfig,
    RankedEntry,
    RankingConfig,
    SimilarityList,
    build_split,
    compute_ap,
    compute_cmc,
    prefilter,
    rank_best_choice,
    rank_pairwise,
    run_eval,
)
from conftest import make_corpus


def brute_force_ap(ranked_ids: list[str], relevant: set[str]) -> float:
    """Independent AP oracle: explicit prefix recount at every hit."""
    hits = 0
    total = 0.0
    for i in range(len(ranked_ids)):
        if ranked_ids[i] in relevant:
            hits += 1
            in_prefix = sum(1 for j in range(i + 1) if ranked_ids[j] in relevant)
            total += in_prefix / (i + 1)
    return total / hits


def brute_force_cmc(rankings, max_rank):
    """Independent CMC oracle: direct membership enumeration per rank."""
    out = []
    for r in range(max_rank):
        hit = sum(1 for sl, rel in rankings if any(e.image_id in rel for e in sl.entries[: r + 1]))
        out.append(hit / len(rankings))
    return out


def sim_list(ids_scores, query_id="q", strategy="pairwise"):
    entries = [RankedEntry(image_id=i, score=s) for i, s in ids_scores]
    return SimilarityList(query_id=query_id, entries=entries, strategy=strategy)


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(identities=5, images_per_identity=4)


@pytest.fixture(scope="module")
def oracle(corpus):
    return PerfectOracle(corpus)


@pytest.fixture(scope="module")
def embedder(corpus):
    return IdentityEmbedder(corpus, sigma=0.0)


class TestPrefilter:
    def test_tau_below_range_keeps_all(self, corpus, embedder):
        gallery = corpus.image_ids()[1:]
        query = corpus.image_ids()[0]
        retained = prefilter(query, gallery, embedder, PrefilterConfig(tau=-1.0, floor=1))
        assert sorted(retained) == sorted(gallery)

    def test_tau_one_floor_five(self, corpus, embedder):
        gallery = corpus.image_ids()[1:]
        query = corpus.image_ids()[0]
        retained = prefilter(query, gallery, embedder, PrefilterConfig(tau=1.0, floor=5))
        assert len(retained) == 5

    def test_sigma0_tau_half_retains_identity_set(self, corpus, embedder):
        query = corpus.image_ids()[0]
        pid = corpus.identity_of(query)
        gallery = [i for i in corpus.image_ids() if i != query]
        retained = prefilter(query, gallery, embedder, PrefilterConfig(tau=0.5, floor=1))
        assert set(retained) == {i for i in gallery if corpus.identity_of(i) == pid}

    def test_output_sorted_by_similarity(self, corpus):
        noisy = IdentityEmbedder(corpus, sigma=0.3, seed=4)
        query = corpus.image_ids()[0]
        gallery = [i for i in corpus.image_ids() if i != query]
        retained = prefilter(query, gallery, noisy, PrefilterConfig(tau=-1.0, floor=1))
        qvec = noisy.embed(query)
        sims = [float(np.dot(qvec, noisy.embed(g))) for g in retained]
        assert sims == sorted(sims, reverse=True)

    @given(taus=st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
    @settings(max_examples=25, deadline=None)
    def test_antitone_nesting(self, taus):
        corpus = make_corpus(identities=4, images_per_identity=3)
        noisy = IdentityEmbedder(corpus, sigma=0.4, seed=8)
        tau1, tau2 = min(taus), max(taus)
        query = corpus.image_ids()[0]
        gallery = [i for i in corpus.image_ids() if i != query]
        low = prefilter(query, gallery, noisy, PrefilterConfig(tau=tau1, floor=1))
        high = prefilter(query, gallery, noisy, PrefilterConfig(tau=tau2, floor=1))
        # pre-floor nesting: drop the floor top-up by recomputing retained sets
        qvec = noisy.embed(query)
        retained1 = {g for g in gallery if float(np.dot(qvec, noisy.embed(g))) > tau1}
        retained2 = {g for g in gallery if float(np.dot(qvec, noisy.embed(g))) > tau2}
        assert retained2 <= retained1
        assert set(high[: len(retained2)]) <= set(low)

    def test_embedder_failure_lists_ids(self, corpus, embedder):
        from reidlab.backend import EmbeddingError

        query = corpus.image_ids()[0]
        gallery = [corpus.image_ids()[1], "ghost1", "ghost2"]
        with pytest.raises(EmbeddingError) as err:
            prefilter(query, gallery, embedder, PrefilterConfig(tau=-1.0, floor=1))
        assert err.value.failed_ids == ["ghost1", "ghost2"]

    def test_floor_validation(self):
        with pytest.raises(ValueError):
            PrefilterConfig(floor=0)


class CountingOracle:
    def __init__(self, inner):
        self.inner = inner
        self.judge = 0
        self.choose = 0

    def judge_pair(self, query, candidate):
        self.judge += 1
        return self.inner.judge_pair(query, candidate)

    def choose_best(self, query, candidates):
        self.choose += 1
        return self.inner.choose_best(query, candidates)


class TestRankPairwise:
    def test_matches_above_non_matches(self, corpus, oracle):
        query = corpus.image_ids()[0]
        pid = corpus.identity_of(query)
        gallery = [i for i in corpus.image_ids() if i != query]
        ranking = rank_pairwise("q", [image_part(query)], gallery, oracle)
        matches = {i for i in gallery if corpus.identity_of(i) == pid}
        top = ranking.ids()[: len(matches)]
        assert set(top) == matches

    def test_single_entry_gallery(self, corpus, oracle):
        gallery = [corpus.image_ids()[1]]
        ranking = rank_pairwise("q", [image_part(corpus.image_ids()[0])], gallery, oracle)
        assert len(ranking.entries) == 1

    def test_one_call_per_image(self, corpus, oracle):
        counting = CountingOracle(oracle)
        gallery = corpus.image_ids()[1:10]
        rank_pairwise("q", [image_part(corpus.image_ids()[0])], gallery, counting)
        assert counting.judge == len(gallery)

    def test_backend_errors_flag_entries(self, corpus, oracle):
        class Flaky:
            def __init__(self, fail_for):
                self.fail_for = fail_for

            def judge_pair(self, query, candidate):
                if candidate in self.fail_for:
                    raise BackendError("boom")
                return oracle.judge_pair(query, candidate)

        gallery = corpus.image_ids()[1:6]
        flaky = Flaky(set(gallery[:3]))
        ranking = rank_pairwise("q", [image_part(corpus.image_ids()[0])], gallery, flaky)
        flagged = [e for e in ranking.entries if e.flagged]
        assert len(flagged) == 3
        assert ranking.degraded  # 3 of 5 > 10%
        assert all(e.score == float("-inf") for e in flagged)

    def test_empty_gallery_rejected(self, corpus, oracle):
        with pytest.raises(EvalError):
            rank_pairwise("q", [image_part(corpus.image_ids()[0])], [], oracle)

    def test_noise_monotonicity_small(self, corpus):
        # mAP at epsilon 0.3 strictly below epsilon 0.1, averaged over 5 seeds.
        split = build_split(corpus, "standard")
        embedder = IdentityEmbedder(corpus, sigma=0.0)
        means = {}
        for epsilon in (0.1, 0.3):
            values = []
            for seed in range(5):
                report = run_eval(
                    corpus,
                    split,
                    NoisyOracle(corpus, epsilon, seed=seed),
                    embedder,
                    prefilter_config=PrefilterConfig(tau=-1.0, floor=1),
                )
                values.append(report.mean_ap)
            means[epsilon] = np.mean(values)
        assert means[0.3] < means[0.1]


class TestRankBestChoice:
    def test_planted_match_first(self, corpus, oracle):
        query = corpus.image_ids()[0]
        pid = corpus.identity_of(query)
        others = [i for i in corpus.image_ids() if corpus.identity_of(i) != pid][:6]
        match = [i for i in corpus.image_ids() if i != query and corpus.identity_of(i) == pid][0]
        gallery = others[:3] + [match] + others[3:]
        for batch in (2, 3, 8):
            ranking = rank_best_choice("q", [image_part(query)], gallery, oracle, batch_size=batch)
            assert ranking.ids()[0] == match

    def test_seven_entries_each_once(self, corpus, oracle):
        gallery = corpus.image_ids()[1:8]
        ranking = rank_best_choice("q", [image_part(corpus.image_ids()[0])], gallery, oracle, batch_size=3)
        assert len(ranking.entries) == 7
        assert sorted(ranking.ids()) == sorted(gallery)

    def test_large_batch_equals_repeated_choose_best(self, corpus, oracle):
        query = corpus.image_ids()[0]
        gallery = corpus.image_ids()[1:7]
        ranking = rank_best_choice("q", [image_part(query)], gallery, oracle, batch_size=32)
        # oracle replay: repeated choose_best over the remainder
        remainder = list(gallery)
        expected = []
        while remainder:
            if len(remainder) == 1:
                expected.append(remainder.pop())
                break
            choice = oracle.choose_best([image_part(query)], remainder).verdict
            expected.append(remainder.pop(choice))
        assert ranking.ids() == expected

    def test_scores_strictly_descending(self, corpus, oracle):
        gallery = corpus.image_ids()[1:9]
        ranking = rank_best_choice("q", [image_part(corpus.image_ids()[0])], gallery, oracle, batch_size=3)
        scores = [e.score for e in ranking.entries]
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_selection_and_turn_counts(self, corpus, oracle):
        # Turn-count oracle: selection over m remaining takes one window of
        # min(B, m) plus ceil((m - min(B, m)) / (B - 1)) champion windows.
        import math

        def tournament_turns(n, batch):
            total = 0
            for m in range(n, 1, -1):
                first = min(batch, m)
                total += 1 + math.ceil((m - first) / (batch - 1))
            return total

        counting = CountingOracle(oracle)
        gallery = corpus.image_ids()[1:8]  # size 7, B=3
        ranking = rank_best_choice("q", [image_part(corpus.image_ids()[0])], gallery, counting, batch_size=3)
        assert len(ranking.entries) == 7  # exactly |gallery| selections
        assert counting.choose == tournament_turns(7, 3) == 12
        # the first selection scans 7 candidates in ceil(7/3) = 3 windows
        assert 1 + math.ceil((7 - 3) / 2) == 3

    def test_prefix_agreement_with_pairwise(self, corpus, oracle):
        query = corpus.image_ids()[0]
        pid = corpus.identity_of(query)
        gallery = [i for i in corpus.image_ids() if i != query]
        matches = {i for i in gallery if corpus.identity_of(i) == pid}
        pw = rank_pairwise("q", [image_part(query)], gallery, oracle)
        bc = rank_best_choice("q", [image_part(query)], gallery, oracle, batch_size=4)
        # both strategies put the full match set in the top-n prefix
        n = len(matches)
        assert set(pw.ids()[:n]) == matches == set(bc.ids()[:n])


class TestComputeAP:
    def test_pattern_oracle_value(self):
        # relevance [1,0,1,0] -> (1/1 + 2/3) / 2 = 5/6
        ranking = sim_list([("a", 4), ("b", 3), ("c", 2), ("d", 1)])
        assert compute_ap(ranking, {"a", "c"}) == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_ranking(self):
        ranking = sim_list([("a", 3), ("b", 2), ("c", 1)])
        assert compute_ap(ranking, {"a", "b"}) == 1.0

    def test_single_relevant_closed_form(self):
        # closed form 1/r checked for all r <= n <= 8
        for n in range(1, 9):
            for r in range(1, n + 1):
                ids = [(f"g{i}", n - i) for i in range(n)]
                ranking = sim_list(ids)
                assert compute_ap(ranking, {f"g{r-1}"}) == pytest.approx(1 / r, abs=1e-12)

    def test_no_relevant_raises(self):
        ranking = sim_list([("a", 1)])
        with pytest.raises(EvalError):
            compute_ap(ranking, {"z"})

    def test_matches_brute_force_on_random_galleries(self):
        rng = random.Random(123)
        for _ in range(1000):
            size = rng.randint(1, 8)
            ids = [f"g{i}" for i in range(size)]
            rng.shuffle(ids)
            ranking = sim_list([(i, size - k) for k, i in enumerate(ids)])
            relevant = set(rng.sample(ids, rng.randint(1, size)))
            assert compute_ap(ranking, relevant) == pytest.approx(
                brute_force_ap(ranking.ids(), relevant), abs=1e-12
            )


class TestComputeCMC:
    def test_first_entry_relevant(self):
        rankings = [(sim_list([("a", 2), ("b", 1)]), {"a"}) for _ in range(4)]
        cmc = compute_cmc(rankings)
        assert cmc[0] == 1.0

    def test_two_query_enumeration(self):
        # hits at ranks 1 and 3 -> cmc = [0.5, 0.5, 1.0, ...]
        r1 = sim_list([("a", 4), ("b", 3), ("c", 2), ("d", 1)])
        r2 = sim_list([("e", 4), ("f", 3), ("g", 2), ("h", 1)])
        cmc = compute_cmc([(r1, {"a"}), (r2, {"g"})])
        assert list(cmc) == [0.5, 0.5, 1.0, 1.0]

    def test_non_decreasing(self):
        rng = random.Random(5)
        rankings = []
        for q in range(20):
            size = rng.randint(1, 10)
            ids = [f"q{q}g{i}" for i in range(size)]
            rankings.append((sim_list([(i, size - k) for k, i in enumerate(ids)]), {rng.choice(ids)}))
        cmc = compute_cmc(rankings)
        assert all(a <= b + 1e-12 for a, b in zip(cmc, cmc[1:]))

    def test_matches_direct_enumeration(self):
        rng = random.Random(7)
        rankings = []
        for q in range(30):
            size = rng.randint(2, 9)
            ids = [f"q{q}g{i}" for i in range(size)]
            relevant = set(rng.sample(ids, rng.randint(1, size)))
            rankings.append((sim_list([(i, size - k) for k, i in enumerate(ids)]), relevant))
        max_rank = max(len(sl.entries) for sl, _ in rankings)
        assert list(compute_cmc(rankings)) == brute_force_cmc(rankings, max_rank)

    def test_empty_query_set_rejected(self):
        with pytest.raises(EvalError):
            compute_cmc([])


class TestRunEval:
    @pytest.mark.parametrize("strategy", ["pairwise", "best_choice"])
    def test_perfect_components_forced_perfect(self, fixture_index, strategy):
        split = build_split(fixture_index, "standard")
        report = run_eval(
            fixture_index,
            split,
            PerfectOracle(fixture_index),
            IdentityEmbedder(fixture_index, sigma=0.0),
            ranking_config=RankingConfig(strategy=strategy),
        )
        assert report.mean_ap == 1.0
        assert report.rank1 == 1.0

    def test_vi_relevant_pairs_differ_in_modality(self, fixture_index):
        split = build_split(fixture_index, "vi")
        for query in split.queries:
            relevant = ek._relevant_ids(
                fixture_index, "vi", query, ek._scope_gallery(fixture_index, "vi", query, split.gallery)
            )
            assert relevant
            for ref in relevant:
                assert fixture_index.records[ref].modality != query.modality

    def test_cc_relevance_excludes_same_clothing(self, fixture_index):
        split = build_split(fixture_index, "cc")
        for query in split.queries:
            relevant = ek._relevant_ids(fixture_index, "cc", query, split.gallery)
            for ref in relevant:
                assert fixture_index.records[ref].clothing_state_id != query.clothing_state_id

    def test_t2i_uses_text_queries(self, fixture_index):
        split = build_split(fixture_index, "t2i")
        assert all(q.image_id is None and q.text for q in split.queries)
        report = run_eval(
            fixture_index,
            split,
            PerfectOracle(fixture_index),
            IdentityEmbedder(fixture_index, sigma=0.0),
        )
        assert report.mean_ap == 1.0

    def test_junk_removal_excludes_same_camera(self, fixture_index):
        split = build_split(fixture_index, "standard")
        query = split.queries[0]
        junk = ek._junk_ids(fixture_index, "standard", query)
        for ref in junk:
            if ref in fixture_index.records and ref != query.image_id:
                rec = fixture_index.records[ref]
                assert rec.identity_id == query.identity_id
                assert rec.camera_id == query.camera_id

    def test_call_accounting(self, fixture_index):
        split = build_split(fixture_index, "standard")
        report = run_eval(
            fixture_index,
            split,
            PerfectOracle(fixture_index),
            IdentityEmbedder(fixture_index, sigma=0.0),
            ranking_config=RankingConfig(strategy="pairwise"),
        )
        total_evaluated = sum(q["evaluated"] for q in report.per_query)
        assert report.calls["judge"] == total_evaluated

    def test_report_invariants(self, fixture_index):
        split = build_split(fixture_index, "standard")
        report = run_eval(
            fixture_index,
            split,
            NoisyOracle(fixture_index, 0.2, seed=0),
            IdentityEmbedder(fixture_index, sigma=0.0),
            prefilter_config=PrefilterConfig(tau=-1.0, floor=1),
        )
        cmc = report.cmc
        assert all(a <= b + 1e-12 for a, b in zip(cmc, cmc[1:]))
        assert 0.0 <= report.mean_ap <= 1.0
        assert report.mean_ap == pytest.approx(np.mean([q["ap"] for q in report.per_query]))

    def test_gallery_cap(self, fixture_index):
        split = build_split(fixture_index, "standard")
        report = run_eval(
            fixture_index,
            split,
            PerfectOracle(fixture_index),
            IdentityEmbedder(fixture_index, sigma=0.0),
            prefilter_config=PrefilterConfig(tau=-1.0, floor=1),
            ranking_config=RankingConfig(strategy="pairwise", gallery_cap=10),
        )
        assert all(q["evaluated"] <= 10 for q in report.per_query)

    def test_unknown_setting_rejected(self, fixture_index):
        with pytest.raises(EvalError):
            build_split(fixture_index, "mystery")

    def test_summary_table_shape(self, fixture_index):
        split = build_split(fixture_index, "standard")
        report = run_eval(
            fixture_index, split, PerfectOracle(fixture_index), IdentityEmbedder(fixture_index, sigma=0.0)
        )
        table = report.summary_table()
        assert "mAP" in table and "Rank-1" in table
        assert "100.0" in table
