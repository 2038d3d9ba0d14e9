"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py``; the summary lines appear in the
"acceptance criteria" section at the end of the report (and inline with -s).
"""

import itertools
import random
import statistics
import time
from fractions import Fraction

from conftest import ACCEPTANCE_LINES
from valuecascade.baselines import StrategyConfig, run_strategy
from valuecascade.cli import EXIT_OK, run
from valuecascade.datagen import dedup_filter, emit_alpaca, rebalance_round, rouge_l
from valuecascade.detector import DetectorSample, RelevanceEstimate, SamplingConfig, aggregate, parse_detector_response
from valuecascade.gateway import MockBackend, count_tokens
from valuecascade.metrics import accuracy, class_distribution, macro_f1
from valuecascade.persona import PersonaScore, aggregate_individual, level1_values, persona_accuracy, wvs_score
from valuecascade.pipeline import PartitionConfig, consistency_study, partition
from valuecascade.prompts import render_baseline_prompt, render_final_prompt
from valuecascade.values import LabelVector, Record, TextInstance, load_value_system

from cli_support import forbid_network, make_records, write_config, write_dataset
from mock_responders import final_candidates, flip, generator, random_sentence, verdict_lines

CLONING = (
    "I am in favor of the opinion of We should ban human cloning, because it will only cause huge issues "
    "when you have a bunch of the same humans running around all acting the same."
)


def report(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- oracles -----------------------------------------------------------------------------------------


def brute_lcs(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            it = iter(long_)
            if all(short[i] in it for i in idx):
                return k
    return 0


def brute_rouge(ta, tb):
    lcs = brute_lcs(ta, tb)
    if lcs == 0:
        return 0.0
    p, r = Fraction(lcs, len(tb)), Fraction(lcs, len(ta))
    return float(2 * p * r / (p + r))


def confusion_oracle(preds, golds):
    n = len(golds[0])
    cells = sum(len(g) for g in golds)
    acc = Fraction(sum(a == b for p, g in zip(preds, golds) for a, b in zip(p, g)), cells)
    f1s = []
    for i in range(n):
        tp = sum(1 for p, g in zip(preds, golds) if p[i] and g[i])
        fp = sum(1 for p, g in zip(preds, golds) if p[i] and not g[i])
        fn = sum(1 for p, g in zip(preds, golds) if g[i] and not p[i])
        f1s.append(Fraction(2 * tp, 2 * tp + fp + fn) if tp + fp + fn else Fraction(0))
    return acc, sum(f1s) / n


# -- criteria ------------------------------------------------------------------------------------------


def test_partition_oracle_equivalence():
    rng = random.Random(11)
    grid = [i / 10 for i in range(11)]
    mismatches = 0
    start = time.perf_counter()
    for _ in range(10_000):
        lo, hi = sorted(rng.sample(grid[1:-1], 2)) if rng.random() < 0.5 else sorted((rng.uniform(0.01, 0.5), rng.uniform(0.51, 0.99)))
        cfg = PartitionConfig(lo, hi)
        probs = tuple(rng.choice(grid) if rng.random() < 0.5 else rng.random() for _ in range(20))
        part = partition(RelevanceEstimate(probs, 5), cfg)
        cover = part.confirmed | part.candidates | part.rejected
        disjoint = not (part.confirmed & part.candidates or part.confirmed & part.rejected or part.candidates & part.rejected)
        direct = (
            {i for i, p in enumerate(probs) if p > hi},
            {i for i, p in enumerate(probs) if lo <= p <= hi},
            {i for i, p in enumerate(probs) if p < lo},
        )
        if not (disjoint and cover == set(range(20)) and (part.confirmed, part.candidates, part.rejected) == direct):
            mismatches += 1
    elapsed = time.perf_counter() - start
    report("partition oracle", mismatches == 0 and elapsed < 1.0, f"10000 triples, {mismatches} mismatches, {elapsed:.3f}s (< 1 s)")


def test_aggregation_matches_count_over_l(system):
    rng = random.Random(12)
    bad = 0
    for _ in range(2000):
        L = rng.randint(1, 10)
        rows = [[int(rng.random() < rng.random()) for _ in range(20)] for _ in range(L)]
        est = aggregate([DetectorSample(LabelVector(tuple(r), system.name)) for r in rows])
        for i in range(20):
            count = sum(r[i] for r in rows)
            exact = Fraction(count, L)
            if est.exact(i) != exact or est.probs[i] != count / L or (est.probs[i] * L) != round(est.probs[i] * L):
                bad += 1
    report("aggregation count/L", bad == 0, f"2000 random sample sets (L <= 10, 20 values), {bad} mismatches")


def test_rouge_l_oracle():
    rng = random.Random(13)
    vocab = "a b c d e f".split()
    worst = 0.0
    for _ in range(200):
        ta = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        tb = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        worst = max(worst, abs(rouge_l(" ".join(ta), " ".join(tb)) - brute_rouge(ta, tb)))
    worked = rouge_l("the cat sat on the mat", "the cat lay on the mat")
    ok = worst <= 1e-9 and abs(worked - 5 / 6) <= 1e-9
    report("ROUGE-L", ok, f"200 random pairs, max |delta| {worst:.1e} (<= 1e-9); worked example {worked:.4f} (5/6)")


def test_metrics_oracle():
    rng = random.Random(14)
    s = load_value_system({f"V{i}": ["d"] for i in range(20)}, name="rand20")
    worst = 0.0
    for _ in range(100):
        rate = rng.uniform(0.05, 0.5)
        golds = [tuple(int(rng.random() < rate) for _ in range(20)) for _ in range(50)]
        preds = [tuple(g if rng.random() < 0.8 else 1 - g for g in row) for row in golds]
        acc, macro = confusion_oracle(preds, golds)
        P = [LabelVector(p, s.name) for p in preds]
        G = [LabelVector(g, s.name) for g in golds]
        worst = max(worst, abs(accuracy(P, G) - acc), abs(macro_f1(P, G, s)[0] - macro))
    ab = load_value_system({"A": ["a"], "B": ["b"]}, name="ab")
    gold = [LabelVector(t, ab.name) for t in [(1, 0), (0, 1), (1, 0)]]
    pred = [LabelVector(t, ab.name) for t in [(1, 0), (1, 0), (1, 0)]]
    hand_macro, hand_acc = macro_f1(pred, gold, ab)[0], accuracy(pred, gold)
    ok = worst <= 1e-12 and abs(hand_macro - 0.4) <= 1e-12 and abs(hand_acc - 0.6667) < 5e-5
    report(
        "metrics",
        ok,
        f"100 random 50x20 datasets, max |delta| vs exact-rational oracle {worst:.1e}; hand fixture macro {hand_macro:.4f}, accuracy {hand_acc:.4f}",
    )


def test_token_economy(system):
    start = time.perf_counter()
    triples = [count_tokens(render_final_prompt(list(c), CLONING)) for c in itertools.combinations(system, 3)]
    single = count_tokens(render_baseline_prompt(list(system), CLONING))
    elapsed = time.perf_counter() - start
    mean = statistics.mean(triples)
    ratio = single / mean
    ok = mean <= 700 and single >= 2000 and ratio >= 3 and elapsed < 1.0
    report(
        "token economy",
        ok,
        f"3-candidate final prompt mean {mean:.0f} tokens over all {len(triples)} triples (<= 700, max {max(triples)}); "
        f"single-step {single} (>= 2000); reduction {ratio:.2f}x (>= 3); {elapsed:.2f}s",
    )


def test_definition_token_count(system):
    n = count_tokens(" ".join(v.definition for v in system))
    report("definition length", 2000 <= n <= 3000, f"20 definitions = {n} tokens (in [2000, 3000])")


def test_call_counts(system):
    def reply(req):
        return verdict_lines({c: False for c in final_candidates(req.messages[0].content)})

    got = {}
    for size in (20, 4, 1):
        backend = MockBackend(reply)
        run_strategy(backend, system, CLONING, StrategyConfig(size))
        got[size] = len(backend.calls)
    report("call counts", got == {20: 1, 4: 5, 1: 20}, f"batch 20/4/1 -> {got[20]}/{got[4]}/{got[1]} calls (expected 1/5/20)")


def test_end_to_end_determinism(tmp_path, monkeypatch, capsys):
    data = write_dataset(tmp_path / "fixture.jsonl", n=20)
    cfg = write_config(tmp_path)
    out = tmp_path / "out" / "results.jsonl"
    assert run(["identify", "--config", str(cfg), "--dataset", str(data), "--replay-mode", "record"]) == EXIT_OK
    attempts = forbid_network(monkeypatch)
    outputs, codes = [], []
    for _ in range(3):
        out.unlink()
        codes.append(run(["identify", "--config", str(cfg), "--dataset", str(data), "--replay-mode", "replay-strict", "--workers", "4"]))
        outputs.append(out.read_bytes())
    lines = outputs[0].decode().count("\n")
    ok = codes == [EXIT_OK] * 3 and len(set(outputs)) == 1 and lines == 20 and not attempts
    report(
        "end-to-end determinism",
        ok,
        f"20 instances x 3 replay-strict invocations, {len(set(outputs))} distinct results file(s), {len(attempts)} network attempts",
    )


def test_dedup_soundness():
    rng = random.Random(15)
    originals = [Record(TextInstance(f"o{i}", random_sentence(rng, rng.randint(8, 16)))) for i in range(160)]
    planted = []
    for j in range(40):
        src = rng.choice(originals)
        text = src.instance.text.upper() if j % 2 else src.instance.text
        planted.append(Record(TextInstance(f"dup{j}", text)))
    records = list(originals)
    for rec in planted:
        records.insert(rng.randint(records.index(next(r for r in originals if r.instance.text.lower() == rec.instance.text.lower())) + 1, len(records)), rec)
    kept, dropped = dedup_filter(records, (), 0.7)
    survivors = [(a.instance.id, b.instance.id) for a, b in itertools.combinations(kept, 2) if rouge_l(a.instance.text, b.instance.text) > 0.7]
    planted_kept = [r.instance.id for r in kept if r.instance.id.startswith("dup")]
    ok = not survivors and not planted_kept and len(records) == 200
    report(
        "dedup soundness",
        ok,
        f"200 records, {len(dropped)} dropped, {len(survivors)} surviving pairs > 0.7 on O(n^2) recheck, {len(planted_kept)}/40 planted duplicates kept",
    )


def test_rebalancing_direction(system):
    rng = random.Random(16)
    records, k = [], 0
    for i, name in enumerate(system.names):
        for _ in range(1 if name == "Humility" else 3 + 4 * (i % 4)):
            records.append(Record(TextInstance(f"r{k}", random_sentence(rng)), LabelVector.from_names([name], system), {name: "x"}))
            k += 1
    before = class_distribution([r.labels for r in records], system).ratio
    new = rebalance_round(MockBackend(generator()), system, records, 3, 5)
    after = class_distribution([r.labels for r in records + new], system).ratio
    report("rebalancing direction", after < before, f"max/min class-count ratio {before:.2f} -> {after:.2f} after one targeted round ({len(new)} records)")


def test_alpaca_round_trip(system):
    records = make_records(50, seed=17)
    records.append(Record(TextInstance("empty", "a text with no values"), LabelVector.zeros(system)))
    plain = emit_alpaca(records, system)
    recovered = sum(parse_detector_response(t.output, system).labels == r.labels for r, t in zip(records, plain))
    extra = len(emit_alpaca(records, system, include_reflection=True)) - len(plain)
    ok = recovered == len(records) and extra == len(system) == 20
    report("Alpaca round trip", ok, f"{recovered}/{len(records)} label vectors recovered; reflection adds {extra} records (one per value)")


def test_persona_formulas():
    scores = {a: wvs_score(a) for a in (1, 4, 6)}
    formula_ok = scores[1] == 1.0 and abs(scores[4] - 0.142857) <= 1e-6 and abs(scores[4] - 0.5 / 3.5) <= 1e-9 and scores[6] == 0.0
    values = level1_values()
    texts = [{v: int(v == "Power" and t < 3 or v == "Hedonism" and t < 2) for v in values} for t in range(20)]
    agg = aggregate_individual(texts)
    agg_ok = agg["Power"] == 1 and agg["Hedonism"] == 0 and aggregate_individual([{v: 0 for v in values}] * 20) == {v: 0 for v in values}
    flags = persona_accuracy(PersonaScore({"A": 1.0, "B": wvs_score(4), "C": 0.5}, {"A": 1, "B": 1, "C": 0})).correct
    strict_ok = flags == {"A": True, "B": False, "C": False}
    report(
        "persona formulas",
        formula_ok and agg_ok and strict_ok,
        f"wvs_score 1->{scores[1]}, 4->{scores[4]:.6f}, 6->{scores[6]}; 3-of-20 rule {'ok' if agg_ok else 'broken'}; strict 0.5 {'ok' if strict_ok else 'broken'}",
    )


def test_consistency_variance_law(system):
    texts = [f"instance {i}: {random_sentence(random.Random(i))}" for i in range(200)]
    start = time.perf_counter()
    reports = consistency_study(MockBackend(flip()), MockBackend(flip()), system, texts, 10, SamplingConfig(L=5))
    elapsed = time.perf_counter() - start
    got = {r.stage: r.mean_variance for r in reports}
    d1, dL = got["detector_1"], got["detector_L"]
    ratio = dL / d1
    ok = abs(d1 - 0.0125) <= 0.2 * 0.0125 and abs(ratio - 0.2) <= 0.3 * 0.2 and elapsed < 30
    report(
        "consistency harness",
        ok,
        f"detector_1 {d1:.5f} (0.0125 +-20%), detector_L {dL:.5f} = {ratio:.3f} x detector_1 (0.2 +-30%), 200 x 10 runs in {elapsed:.1f}s",
    )
