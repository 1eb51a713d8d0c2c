import pytest

from conftest import standoff
from src.timeline.annotation import build_document
from src.timeline.errors import BudgetExceeded, FormulationError, InsufficientDevDocs, TooFewEvents
from src.timeline.formulations import (
    GenerationSettings,
    InstanceBuilder,
    generate_cot_rationale,
    generate_mrc,
    generate_nli,
    generate_pairwise,
    generate_timeline,
    select_demonstrations,
)


def chain_document(n, doc_id="synthetic", split="test"):
    """n events in textual order, each one after the previous"""
    words = [f"step{i}" for i in range(1, n + 1)]
    text = "Synthetic\n" + " ".join(f"Then {w} occurred." for w in words)
    mentions = [(f"T{i}", w) for i, w in enumerate(words, start=1)]
    after = [(f"T{i + 1}", f"T{i}") for i in range(1, n)]
    return build_document(doc_id, text, standoff(text, mentions, after),
                          {"dct": "2023-01-01", "topic": "environment", "split": split})


def by_query(instances, **query):
    return next(i for i in instances if all(i.query.get(k) == v for k, v in query.items()))


class TestInstanceCounts:
    @pytest.mark.parametrize("n", range(2, 11))
    def test_counts(self, registry, n):
        doc = chain_document(n)
        assert len(generate_nli(doc, registry.get("nli_01"))) == n * (n - 1) * 3
        assert len(generate_pairwise(doc, registry.get("pairwise_01"))) == n * (n - 1)
        assert len(generate_mrc(doc, registry.get("mrc_01"))) == 3 * n
        assert generate_timeline(doc, registry.get("timeline_01")).formulation == "timeline"

    def test_monkeypox_counts(self, registry, monkeypox):
        assert len(generate_nli(monkeypox, registry.get("nli_02"))) == 36
        assert len(generate_pairwise(monkeypox, registry.get("pairwise_02"))) == 12
        assert len(generate_mrc(monkeypox, registry.get("mrc_01"))) == 12

    def test_ids_unique(self, registry, monkeypox):
        instances = generate_nli(monkeypox, registry.get("nli_01"))
        assert len({i.instance_id for i in instances}) == len(instances)

    def test_single_event(self, registry):
        doc = chain_document(1)
        with pytest.raises(TooFewEvents):
            generate_nli(doc, registry.get("nli_01"))
        with pytest.raises(TooFewEvents):
            generate_pairwise(doc, registry.get("pairwise_01"))
        assert len(generate_mrc(doc, registry.get("mrc_01"))) == 3

    def test_no_events(self, registry):
        text = "Empty\nOfficials spoke."
        doc = build_document("empty", text, standoff(text, [("T1", "Officials", "Entity")]),
                             {"dct": "2023-01-01", "topic": "health", "split": "test"})
        assert generate_mrc(doc, registry.get("mrc_01")) == []

    def test_wrong_template(self, registry, outing):
        with pytest.raises(FormulationError):
            InstanceBuilder(registry.get("nli_01")).pairwise(outing)


class TestGoldAnswers:
    def test_mrc_before(self, registry, monkeypox):
        instances = generate_mrc(monkeypox, registry.get("mrc_01"))
        inst = by_query(instances, anchor="T1", relation="BEFORE")
        assert sorted(inst.gold) == ["T3", "T4"]
        assert "Which events happened before [e1]identified[/e1]?" in inst.prompt
        assert inst.prompt.endswith("Answer:")
        assert inst.reference == "[e2]death[/e2], [e3]diagnosed[/e3]"

    def test_mrc_after(self, registry, testing_doc):
        inst = by_query(generate_mrc(testing_doc, registry.get("mrc_01")), anchor="T1", relation="AFTER")
        assert inst.gold == ["T2", "T3"]
        assert "What happened after [e1]tested[/e1]?" in inst.prompt

    def test_mrc_empty_answer(self, registry, outing):
        inst = by_query(generate_mrc(outing, registry.get("mrc_01")), anchor="T1", relation="BEFORE")
        assert inst.gold == []
        assert inst.reference == "none"

    def test_nli(self, registry, monkeypox):
        instances = generate_nli(monkeypox, registry.get("nli_02"))
        holds = by_query(instances, x="T4", y="T3", relation="AFTER")
        assert holds.gold is True
        assert holds.reference == "Yes"
        assert "[e1]death[/e1] started after [e2]diagnosed[/e2] started." in holds.prompt
        fails = by_query(instances, x="T4", y="T3", relation="BEFORE")
        assert fails.gold is False
        assert fails.reference == "No"
        coex = by_query(instances, x="T1", y="T5", relation="COEX")
        assert coex.gold is True

    def test_nli_gold_balance(self, registry, outing):
        instances = generate_nli(outing, registry.get("nli_01"))
        # a total order of three events: each ordered pair is true for exactly one statement out of three
        assert sum(i.gold for i in instances) == 6

    def test_pairwise(self, registry, monkeypox):
        instances = generate_pairwise(monkeypox, registry.get("pairwise_02"))
        inst = by_query(instances, x="T5", y="T1")
        assert inst.gold == "COEX"
        assert inst.reference == "SIMULTANEOUS"
        # the pair is numbered 1..2 by textual order
        assert "between [e2]investigating[/e2] and [e1]identified[/e1]?" in inst.prompt
        assert [r.id for r in inst.events] == ["T1", "T5"]
        assert by_query(instances, x="T4", y="T1").gold == "BEFORE"
        assert by_query(instances, x="T1", y="T4").gold == "AFTER"

    def test_pairwise_none(self, registry, testing_doc):
        inst = by_query(generate_pairwise(testing_doc, registry.get("pairwise_01")), x="T2", y="T3")
        assert inst.gold == "NONE"
        assert inst.reference == "VAGUE"

    def test_timeline(self, registry, monkeypox):
        inst = generate_timeline(monkeypox, registry.get("timeline_01"))
        assert inst.gold == [["T4"], ["T3"], ["T1", "T5"]]
        assert inst.reference == (
            "T1:\n- [e3]diagnosed[/e3]\n"
            "T2:\n- [e2]death[/e2]\n"
            "T3:\n- [e1]identified[/e1]\n- [e4]investigating[/e4]"
        )
        assert "- [e4]investigating[/e4]" in inst.prompt
        assert inst.prompt.endswith("Now, create a timeline with the events:")

    def test_timeline_code_flavor(self, registry, monkeypox):
        inst = generate_timeline(monkeypox, registry.get("timeline_code_01"))
        assert inst.flavor == "code"
        assert "self.event1 = events[1] # [e1]identified[/e1]" in inst.prompt
        assert "T1 = [self.event3]" in inst.reference
        assert "T3 = [self.event1, self.event4]" in inst.reference

    def test_cot_rationale(self, monkeypox):
        assert generate_cot_rationale(monkeypox) == (
            "[e1]identified[/e1] started after [e2]death[/e2]. "
            "[e2]death[/e2] started after [e3]diagnosed[/e3]. "
            "[e1]identified[/e1] started around the same time as [e4]investigating[/e4]."
        )
        assert generate_cot_rationale(monkeypox, "mrc").startswith(
            "[e2]death[/e2] happened before [e1]identified[/e1].")

    def test_timeline_cot(self, registry, monkeypox):
        inst = generate_timeline(monkeypox, registry.get("timeline_cot_01"))
        assert inst.prompt.endswith("temporal relations in the article:")
        assert "Then, the timeline is:\nT1:" in inst.reference
        assert inst.max_new_tokens == 512

    def test_representations(self, registry, outing):
        star = generate_timeline(outing, registry.get("timeline_01"), settings=GenerationSettings(representation="star"))
        assert "I **visited** my aunt" in star.prompt
        structured = generate_mrc(outing, registry.get("mrc_01"),
                                  settings=GenerationSettings(representation="structured"))
        assert "[EVENT]went[/EVENT]" in structured[0].prompt

    def test_deterministic(self, registry, monkeypox, bookstore):
        settings = GenerationSettings(n_demos=1, seed=3)
        a = InstanceBuilder(registry.get("pairwise_02"), [bookstore], settings).build(monkeypox)
        b = InstanceBuilder(registry.get("pairwise_02"), [bookstore], settings).build(monkeypox)
        assert [i.model_dump() for i in a] == [i.model_dump() for i in b]


class TestDemonstrations:
    def test_seeded_and_excludes_query(self):
        pool = ["a", "b", "c", "d"]
        first = select_demonstrations(pool, 2, seed=1, query_id="c")
        assert first == select_demonstrations(pool, 2, seed=1, query_id="c")
        assert "c" not in first
        assert len(set(first)) == 2

    def test_zero(self):
        assert select_demonstrations(["a"], 0, seed=0) == []

    def test_too_few(self):
        with pytest.raises(InsufficientDevDocs):
            select_demonstrations(["a", "b"], 3, seed=0)

    def test_query_never_its_own_demo(self, registry, monkeypox, bookstore):
        builder = InstanceBuilder(registry.get("mrc_01"), [monkeypox, bookstore], GenerationSettings(n_demos=1))
        assert {tuple(i.demo_ids) for i in builder.build(monkeypox)} == {("bookstore",)}

    def test_demo_block_is_complete(self, registry, monkeypox, bookstore, outing):
        builder = InstanceBuilder(registry.get("pairwise_02"), [monkeypox, bookstore],
                                  GenerationSettings(n_demos=2, seed=5))
        inst = builder.build(outing)[0]
        assert sorted(inst.demo_ids) == ["bookstore", "monkeypox"]
        assert inst.prompt.count("What is the temporal relation between") == 3
        # both demonstrations carry an answer, the query does not
        assert inst.prompt.count("Answer: ") == 2
        assert inst.prompt.endswith("Answer:")

    def test_timeline_demo_shows_whole_document(self, registry, bookstore, outing):
        inst = generate_timeline(outing, registry.get("timeline_01"), [bookstore], GenerationSettings(n_demos=1))
        assert "T4:\n- [e4]reopened[/e4]" in inst.prompt
        assert inst.demo_ids == ["bookstore"]

    def test_insufficient_dev_docs(self, registry, bookstore, outing):
        with pytest.raises(InsufficientDevDocs):
            generate_mrc(outing, registry.get("mrc_01"), [bookstore], GenerationSettings(n_demos=2))


class TestBudget:
    def test_overflow_raises(self, registry, monkeypox):
        with pytest.raises(BudgetExceeded) as info:
            generate_timeline(monkeypox, registry.get("timeline_01"), settings=GenerationSettings(budget=10))
        assert info.value.details["budget"] == 10

    def test_overflow_skipped(self, registry, monkeypox):
        builder = InstanceBuilder(registry.get("pairwise_02"), settings=GenerationSettings(budget=10, skip_overflow=True))
        assert builder.build(monkeypox) == []
        assert builder.skipped == 12

    def test_custom_length_function(self, registry, outing):
        words = GenerationSettings(budget=200, length_fn=lambda s: len(s.split()))
        assert len(generate_pairwise(outing, registry.get("pairwise_02"), settings=words)) == 6
        with pytest.raises(BudgetExceeded):
            generate_pairwise(outing, registry.get("pairwise_02"),
                              settings=GenerationSettings(budget=20, length_fn=lambda s: len(s.split())))

    def test_max_new_tokens(self, registry, outing):
        assert generate_mrc(outing, registry.get("mrc_01"))[0].max_new_tokens == 128
        assert generate_pairwise(outing, registry.get("pairwise_01"))[0].max_new_tokens == 16
        custom = GenerationSettings(max_new_tokens=7)
        assert generate_timeline(outing, registry.get("timeline_01"), settings=custom).max_new_tokens == 7
