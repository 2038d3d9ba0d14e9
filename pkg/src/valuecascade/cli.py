"""Command-line entry point.

Exit codes: 0 success, 1 fatal runtime error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

from . import baselines, datagen, metrics, persona
from .config import ConfigError, RunConfig
from .detector import SamplingConfig
from .gateway import Backend, ChatRequest, MockBackend, ReplayStore
from .pipeline import FinalResult, PartitionConfig, consistency_study, identify, result_row
from .values import (
    ImportReport,
    LabelVector,
    Record,
    ValueSystem,
    import_touche,
    load_system_arg,
    read_records,
    write_records,
)

log = logging.getLogger("valuecascade")

EXIT_OK, EXIT_FATAL, EXIT_CONFIG = 0, 1, 2

T = TypeVar("T")
R = TypeVar("R")


# -- plumbing ------------------------------------------------------------------------------------


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    flag_map = {
        "dataset": "dataset",
        "output_dir": "output_dir",
        "replay_mode": "replay_mode",
        "replay_store": "replay_store",
        "value_system": "value_system",
        "workers": "workers",
        "seed": "seed",
        "limit": "limit",
        "p_low": "thresholds.p_low",
        "p_high": "thresholds.p_high",
        "L": "sampling.L",
        "temperature": "sampling.temperature",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.override(key, value)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        cfg.override(key.strip(), _parse_value(raw))
    return cfg


def _map(fn: Callable[[T], R], items: Sequence[T], workers: int, backends: Sequence[Backend]) -> list[R]:
    # list-scripted mocks are consumed in call order, so keep them serial
    if any(isinstance(b, MockBackend) and b.scripted for b in backends):
        workers = 1
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _inner_backends(*bs: Backend) -> list[Backend]:
    out = []
    for b in bs:
        out.append(b)
        inner = getattr(b, "inner", None)
        if inner is not None:
            out.append(inner)
    return out


def _write_jsonl(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class Runner:
    """Holds the validated config, value system and backends for one command."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        errs = cfg.validate(command)
        system: ValueSystem | None = None
        if not errs:
            try:
                system = load_system_arg(cfg.value_system)
            except (OSError, ValueError) as exc:
                errs.append(f"value system: {exc}")
        if system is not None:
            errs.extend(e for e in cfg.validate(command, len(system)) if e not in errs)
        if errs:
            raise ConfigError(errs)
        assert system is not None
        self.system = system
        self.out = Path(cfg.output_dir)
        self._store: ReplayStore | None = None

    def backend(self, which: str) -> Backend:
        if self.cfg.replay_mode != "live" and self._store is None:
            self._store = ReplayStore(self.cfg.store_path)
        return self.cfg.backend(which, self._store)

    def records(self) -> list[Record]:
        recs = read_records(self.cfg.dataset, self.system)  # type: ignore[arg-type]
        return recs[: self.cfg.limit] if self.cfg.limit else recs

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(L=self.cfg.sampling.L, temperature=self.cfg.sampling.temperature)

    def thresholds(self) -> PartitionConfig:
        return PartitionConfig(self.cfg.thresholds.p_low, self.cfg.thresholds.p_high)

    def strategy(self) -> baselines.StrategyConfig | None:
        s = self.cfg.strategy
        if s.kind != "baseline":
            return None
        return baselines.StrategyConfig(s.batch_size, s.cot, s.shuffle_seed)  # type: ignore[arg-type]

    def identifier(self) -> tuple[Callable[[str], FinalResult], list[Backend]]:
        strat = self.strategy()
        llm = self.backend("llm")
        if strat is not None:
            return (lambda text: baselines.run_strategy(llm, self.system, text, strat)), _inner_backends(llm)
        det = self.backend("detector")
        sampling, thresholds, cot = self.sampling(), self.thresholds(), self.cfg.final_cot
        return (lambda text: identify(det, llm, self.system, text, sampling, thresholds, cot)), _inner_backends(det, llm)

    def strategy_label(self) -> str:
        strat = self.strategy()
        return strat.label if strat else "eavit"


# -- commands -----------------------------------------------------------------------------------------


def cmd_identify(runner: Runner) -> int:
    records = runner.records()
    fn, backends = runner.identifier()
    results = _map(lambda r: fn(r.instance.text), records, runner.cfg.workers, backends)
    runner.out.mkdir(parents=True, exist_ok=True)
    label = runner.strategy_label()
    rows = [result_row(r.instance.id, res, runner.system, strategy=label) for r, res in zip(records, results)]
    _write_jsonl(runner.out / "results.jsonl", rows)
    tr = metrics.token_report(results)
    metrics.write_json(runner.out / "token_report.json", tr.to_json())
    print(f"{len(results)} instances, strategy {label}, {tr.total_llm_calls} LLM calls "
          f"({tr.total_llm_calls / max(len(results), 1):.2f} per instance), "
          f"mean online tokens {tr.mean_online_tokens:.1f}")
    gold = [r for r in records if r.labels is not None]
    if gold and len(gold) == len(records):
        report = metrics.evaluate([res.labels for res in results], [r.labels for r in records], runner.system, results)  # type: ignore[misc]
        metrics.write_json(runner.out / "eval.json", report.to_json())
        metrics.write_json(runner.out / "eval_levels.json", metrics.level_table(report, persona.level1_map()))
        print(report.table())
    return EXIT_OK


def cmd_eval(runner: Runner, predictions: str) -> int:
    gold = {r.instance.id: r for r in runner.records()}
    rows = _read_jsonl(predictions)
    missing = [row["id"] for row in rows if row["id"] not in gold]
    if missing:
        raise ConfigError([f"predictions for unknown ids: {missing[:5]}"])
    preds = [LabelVector.from_names(row["labels"], runner.system) for row in rows]
    golds = [gold[row["id"]].labels for row in rows]
    if any(g is None for g in golds):
        raise ConfigError(["gold dataset has unlabeled records"])
    report = metrics.evaluate(preds, golds, runner.system, rows)  # type: ignore[arg-type]
    runner.out.mkdir(parents=True, exist_ok=True)
    metrics.write_json(runner.out / "eval.json", report.to_json())
    metrics.write_json(runner.out / "eval_levels.json", metrics.level_table(report, persona.level1_map()))
    dist = metrics.class_distribution(golds, runner.system)  # type: ignore[arg-type]
    metrics.write_json(runner.out / "distribution.json", dist.to_json())
    print(report.table())
    return EXIT_OK


def cmd_token_report(results_path: str, out: str | None) -> int:
    rows = _read_jsonl(results_path)
    tr = metrics.token_report(rows)
    doc = tr.to_json()
    if out:
        metrics.write_json(out, doc)
    for k, v in doc.items():
        print(f"{k:32s} {v:12.2f}" if isinstance(v, float) else f"{k:32s} {v:12d}")
    return EXIT_OK


def cmd_consistency(runner: Runner) -> int:
    records = runner.records()
    det, llm = runner.backend("detector"), runner.backend("llm")
    reports = consistency_study(
        det,
        llm,
        runner.system,
        [r.instance.text for r in records],
        runner.cfg.repeats,
        runner.sampling(),
        runner.thresholds(),
        runner.cfg.final_cot,
    )
    runner.out.mkdir(parents=True, exist_ok=True)
    doc = {"instances": len(records), "repeats": runner.cfg.repeats, "stages": {r.stage: r.mean_variance for r in reports}}
    metrics.write_json(runner.out / "consistency.json", doc)
    for r in reports:
        print(f"{r.stage:14s} {r.mean_variance:.6f}")
    return EXIT_OK


def cmd_datagen(runner: Runner) -> int:
    d = runner.cfg.datagen
    records = runner.records()
    runner.out.mkdir(parents=True, exist_ok=True)
    system = runner.system
    if d.mode == "emit":
        training = datagen.emit_alpaca(records, system, d.include_reflection)
        datagen.write_alpaca(runner.out / "alpaca.json", training)
        print(f"wrote {len(training)} training records")
        return EXIT_OK

    llm = runner.backend("llm")
    if d.mode == "explain":
        rep = datagen.AugmentReport()
        explained = datagen.augment_explanations(llm, system, records, d.explanation_cap, rep)
        write_records(runner.out / "explained.jsonl", explained, system)
        doc = {"calls": rep.calls, "explained": rep.explained, "over_cap": rep.over_cap, "skipped": rep.skipped}
        metrics.write_json(runner.out / "explain_report.json", doc)
        print(f"{rep.calls} explanation calls, {len(rep.over_cap)} over the length cap, {len(rep.skipped)} records skipped")
        return EXIT_OK

    rep = datagen.GenerationReport()
    if d.mode == "icl":
        new = datagen.generate_batch(llm, system, "icl", records, d.count, d.max_calls, runner.cfg.seed, report=rep)
    else:
        new = datagen.rebalance_round(llm, system, records, d.k, d.per_value, runner.cfg.seed, report=rep)
    kept, dropped = datagen.dedup_filter(new, records, d.dedup_threshold)
    rep.dropped["duplicate"] += len(dropped)
    labelled = [r.labels for r in records if r.labels is not None]
    before = metrics.class_distribution(labelled, system)
    after = metrics.class_distribution(labelled + [r.labels for r in kept], system)
    rep.counts_before, rep.counts_after = before.counts, after.counts
    write_records(runner.out / "generated.jsonl", kept, system)
    doc = rep.to_json() | {"kept_after_dedup": len(kept), "ratio_before": before.ratio, "ratio_after": after.ratio}
    metrics.write_json(runner.out / "generation_report.json", doc)
    print(f"generated {len(new)}, kept {len(kept)} after dedup; max/min ratio {before.ratio} -> {after.ratio}")
    return EXIT_OK


def cmd_persona(runner: Runner) -> int:
    people = persona.read_wvs_answers(runner.cfg.persona.wvs_answers)  # type: ignore[arg-type]
    topics = runner.cfg.persona.topics or persona.persona_topics()
    writer = runner.backend("llm")
    fn, backends = runner.identifier()
    out_people = []
    texts_rows = []
    agreements = []
    for pid, answers in people.items():

        def one(item: tuple[int, str]) -> tuple[str, FinalResult]:
            t, topic = item
            prompt = persona.render_persona_prompt(answers, topic)
            ex = writer.complete(ChatRequest.user(writer.model, prompt, temperature=0.7, sample_tag=f"persona-{pid}-{t}"))
            text = persona.persona_text(topic, ex.response_text)
            return text, fn(text)

        produced = _map(one, list(enumerate(topics)), runner.cfg.workers, backends + _inner_backends(writer))
        per_text = [persona.to_level1(res.labels, runner.system) for _, res in produced]
        s_pred = persona.aggregate_individual(per_text, runner.cfg.persona.min_texts)
        s_real = persona.real_scores(answers)
        agreement = persona.persona_accuracy(persona.PersonaScore(s_real, s_pred))
        agreements.append(agreement)
        out_people.append({"individual": pid, "s_real": s_real, "s_pred": s_pred, "correct": agreement.correct, "accuracy": agreement.accuracy})
        texts_rows.extend(
            {"individual": pid, "topic": topics[t], "text": text, "labels": res.labels.names(runner.system)}
            for t, (text, res) in enumerate(produced)
        )
    runner.out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(runner.out / "persona_texts.jsonl", texts_rows)
    mean = persona.mean_accuracy(agreements)
    metrics.write_json(runner.out / "persona.json", {"mean_accuracy": mean, "individuals": out_people})
    for p in out_people:
        print(f"{p['individual']}: accuracy {p['accuracy']:.2f}")
    print(f"mean accuracy {mean:.3f}")
    return EXIT_OK


def cmd_import(args: argparse.Namespace) -> int:
    system = load_system_arg(args.value_system)
    report = ImportReport()
    pairs = import_touche(args.arguments, args.labels, system, report)
    write_records(args.out, [Record(inst, lab) for inst, lab in pairs], system)
    print(f"imported {len(pairs)} instances")
    if report.only_in_arguments:
        print(f"{len(report.only_in_arguments)} argument IDs without labels: {report.only_in_arguments[:10]}")
    if report.only_in_labels:
        print(f"{len(report.only_in_labels)} label IDs without arguments: {report.only_in_labels[:10]}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted path, JSON value)")
    p.add_argument("--dataset")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--replay-mode", dest="replay_mode", choices=("live", "record", "replay-strict"))
    p.add_argument("--replay-store", dest="replay_store")
    p.add_argument("--value-system", dest="value_system")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--p-low", dest="p_low", type=float)
    p.add_argument("--p-high", dest="p_high", type=float)
    p.add_argument("-L", dest="L", type=int)
    p.add_argument("--temperature", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valuecascade", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", help="label a dataset (cascade or baseline strategy)")
    _common(p)
    p.add_argument("--cot", action="store_true", default=None, help="chain-of-thought final prompt")

    p = sub.add_parser("baseline", help="identify with an LLM-only batching strategy")
    _common(p)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--cot", action="store_true", default=None)

    p = sub.add_parser("datagen", help="explanation augmentation, generation and Alpaca emission")
    _common(p)
    p.add_argument("mode", choices=("explain", "icl", "targeted", "emit"))
    p.add_argument("--count", type=int)
    p.add_argument("-k", type=int)
    p.add_argument("--per-value", dest="per_value", type=int)
    p.add_argument("--no-reflection", dest="no_reflection", action="store_true")

    p = sub.add_parser("eval", help="score a results file against gold labels")
    _common(p)
    p.add_argument("--predictions", required=True)

    p = sub.add_parser("consistency", help="per-stage output variance over repeated runs")
    _common(p)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("persona", help="virtual-individual questionnaire study")
    _common(p)
    p.add_argument("--wvs", dest="wvs")

    p = sub.add_parser("token-report", help="summarise token usage of a results file")
    p.add_argument("results")
    p.add_argument("--out")

    p = sub.add_parser("import", help="convert Touché TSV tables to the JSON-lines dataset format")
    p.add_argument("--arguments", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--value-system", dest="value_system")
    p.add_argument("--out", required=True)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "token-report":
            return cmd_token_report(args.results, args.out)
        if args.command == "import":
            return cmd_import(args)

        cfg = build_config(args)
        command = args.command
        if command == "baseline":
            cfg.strategy.kind = "baseline"
            if args.batch_size is not None:
                cfg.strategy.batch_size = args.batch_size
            if args.cot:
                cfg.strategy.cot = True
            command = "identify"
        elif command == "identify" and args.cot:
            cfg.final_cot = True
        elif command == "datagen":
            cfg.datagen.mode = args.mode
            for attr in ("count", "k", "per_value"):
                if getattr(args, attr) is not None:
                    setattr(cfg.datagen, attr, getattr(args, attr))
            if args.no_reflection:
                cfg.datagen.include_reflection = False
        elif command == "consistency" and args.repeats is not None:
            cfg.repeats = args.repeats
        elif command == "persona" and args.wvs:
            cfg.persona.wvs_answers = args.wvs

        runner = Runner(cfg, command)
        if command == "identify":
            return cmd_identify(runner)
        if command == "eval":
            return cmd_eval(runner, args.predictions)
        if command == "consistency":
            return cmd_consistency(runner)
        if command == "datagen":
            return cmd_datagen(runner)
        if command == "persona":
            return cmd_persona(runner)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("fatal error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_FATAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
