"""Command-line interface.

Verbs: convert, adapt, train-ner, train-lemma, predict, evaluate,
package-submission, validate-submission.

Every verb accepts ``--config FILE``: a flat ``key = value`` file whose keys
are option names (``batch_size`` or ``batch-size``); command-line flags win.
``role.<name> = <checkpoint dir>`` lines bind preset roles for ``predict``.
``SLAVNER_OUTPUT_ROOT`` anchors relative output paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from . import adapters, corpus, evaluation, lemmatizer, submission, tagger
from .corpus import LANGUAGES

log = logging.getLogger("slavner")


class CliError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CliError(f"{path}: line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get("SLAVNER_OUTPUT_ROOT")
    return p if p.is_absolute() or not root else Path(root) / p


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _language_of(path: Path, explicit: Optional[str]) -> str:
    if explicit:
        return explicit
    for part in reversed(path.parent.parts):
        if part in LANGUAGES:
            return part
    raise CliError(f"{path}: cannot infer language; pass --language")


def _raw_files(raw_dir: Path) -> list[Path]:
    if not raw_dir.is_dir():
        raise CliError(f"{raw_dir}: not a directory")
    files = sorted(p for p in raw_dir.rglob("*.txt") if p.is_file())
    if not files:
        raise CliError(f"{raw_dir}: no .txt documents")
    return files


def _load_raw(path: Path, language: Optional[str], layout: corpus.DocumentLayout) -> corpus.RawDocument:
    lang = _language_of(path, language)
    try:
        return corpus.parse_bsnlp_document(path.read_bytes(), lang, layout, str(path))
    except (corpus.CorpusError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_convert(args) -> int:
    root = Path(args.input_dir)
    layout = corpus.DocumentLayout.parse(args.layout) if args.layout else corpus.DocumentLayout()
    chunks = []
    unmatched_rows = []
    mentions_by_lang: dict[str, list] = {lang: [] for lang in LANGUAGES}
    for raw_path in _raw_files(root / "raw"):
        rel = raw_path.relative_to(root / "raw")
        ann_path = (root / "annotated" / rel).with_suffix(".out")
        doc = _load_raw(raw_path, args.language, layout)
        if not ann_path.exists():
            raise CliError(f"{ann_path}: annotation file missing for {raw_path}")
        try:
            ann_id, mentions = corpus.parse_annotation_file(ann_path.read_bytes(), str(ann_path))
        except (corpus.CorpusError, UnicodeDecodeError) as exc:
            raise CliError(f"{ann_path}: {exc}") from None
        if ann_id != doc.doc_id:
            raise CliError(f"{ann_path}: document id {ann_id!r} does not match {doc.doc_id!r}")
        report = corpus.ProjectionReport()
        tagged = corpus.project_annotations(corpus.tokenize(doc), mentions, report)
        chunks.append(b"-DOCSTART- O\n\n" + corpus.write_conll(tagged))
        unmatched_rows.extend(f"{doc.doc_id}\t{m.form}\t{m.category}\n" for m in report.unmatched)
        mentions_by_lang[doc.language].extend(mentions)
    out = _out_path(args.output)
    atomic_write(out, b"".join(chunks))
    unmatched_path = _out_path(args.unmatched) if args.unmatched else out.with_name(out.name + ".unmatched.tsv")
    atomic_write(unmatched_path, "".join(unmatched_rows).encode("utf-8"))
    if args.lemma_examples:
        lemma_examples = [
            e for lang, ms in mentions_by_lang.items() for e in adapters.extract_shared_task_lemma_pairs(ms, lang)
        ]
        atomic_write(_out_path(args.lemma_examples), adapters.write_lemma_examples(lemma_examples))
    print(f"converted {len(chunks)} documents; {len(unmatched_rows)} unmatched mentions -> {unmatched_path}")
    return 0


def cmd_adapt(args) -> int:
    files = []
    for p in args.files:
        path = Path(p)
        if not path.exists():
            raise CliError(f"{path}: no such file")
        files.append((str(path), path.read_bytes()))
    out = _out_path(args.output)
    try:
        if args.format in adapters.NER_FORMATS:
            mapping = adapters.parse_mapping(Path(args.mapping).read_bytes()) if args.mapping else None
            sentences = adapters.adapt_ner_corpus(files, args.format, mapping, args.language)
            atomic_write(out, corpus.write_conll(sentences))
            print(f"wrote {len(sentences)} sentences to {out}")
        elif args.format in adapters.LEMMA_ORIGINS:
            if not args.language:
                raise CliError("lemma resources need --language")
            skips = adapters.SkipReport()
            examples = adapters.load_lemma_resource(files, args.format, args.language, skips)
            atomic_write(out, adapters.write_lemma_examples(examples))
            print(f"wrote {len(examples)} examples to {out}; skipped {skips.skipped}, duplicates {skips.duplicates}")
        else:
            raise CliError(f"unknown format {args.format!r}")
    except adapters.AdapterError as exc:
        raise CliError(str(exc)) from None
    return 0


def _read_conll_paths(paths: Sequence[str]) -> list[corpus.TaggedSentence]:
    out = []
    for p in paths:
        path = Path(p)
        files = sorted(path.rglob("*.conll")) if path.is_dir() else [path]
        if not path.exists() or not files:
            raise CliError(f"{path}: no CoNLL data")
        for f in files:
            try:
                out.extend(corpus.read_conll(f.read_bytes()))
            except corpus.CorpusError as exc:
                raise CliError(f"{f}: {exc}") from None
    return out


def cmd_train_ner(args) -> int:
    if not args.train:
        raise CliError("no --train corpus given")
    for p in list(args.train) + list(args.val or []):
        if not Path(p).exists():
            raise CliError(f"{p}: no such corpus")
    weights = [float(w) for w in (args.weight or [])]
    if weights and len(weights) != len(args.train):
        raise CliError("give one --weight per --train corpus")
    try:
        config = tagger.TrainConfig(
            seed=int(args.seed),
            epochs=int(args.epochs),
            batch_size=int(args.batch_size),
            learning_rate=float(args.lr),
            max_pieces=int(args.max_pieces),
            crf_enabled=not _flag(args.no_crf),
            constraint_mask=_flag(args.constraint_mask),
        )
    except (tagger.TaggerError, TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}") from None
    corpora = {p: _read_conll_paths([p]) for p in args.train}
    if len(corpora) > 1 or weights:
        merged = adapters.merge_corpora(
            corpora, dict(zip(args.train, weights or [1.0] * len(args.train))), seed=config.seed
        )
        train_set = [m.sentence for m in merged]
    else:
        train_set = next(iter(corpora.values()))
    val = _read_conll_paths(args.val) if args.val else None
    model = tagger.train(train_set, config, val)
    report = model.report
    metrics = {
        "seed": config.seed,
        "final_loss": report.epoch_losses[-1],
        "train_span_f1": tagger.evaluate_model(model, train_set),
        "best_epoch": report.best_epoch,
        "truncated": report.truncated,
    }
    if report.val_f1:
        metrics["val_span_f1"] = max(report.val_f1)
    out = _out_path(args.out)
    tagger.save_model(model, out, metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_train_lemma(args) -> int:
    if not args.examples and not args.pairs:
        raise CliError("give --examples and/or --pairs")
    for p in list(args.examples or []) + list(args.pairs or []) + list(args.val_examples or []):
        if not Path(p).exists():
            raise CliError(f"{p}: no such file")
    multilingual = not _flag(args.monolingual)
    try:
        config = lemmatizer.LemmaConfig(
            seed=int(args.seed),
            epochs=int(args.epochs),
            batch_size=int(args.batch_size),
            learning_rate=float(args.lr),
            multilingual=multilingual,
        )
        lemmatizer.select_tier([], args.tier)
    except (lemmatizer.LemmatizerError, TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}") from None
    examples = []
    for p in args.examples or []:
        examples.extend(adapters.read_lemma_examples(Path(p).read_bytes()))
    pairs = lemmatizer.assemble_training_set(examples, (), multilingual, args.tier)
    for p in args.pairs or []:
        pairs.extend(lemmatizer.read_pair_file(Path(p).read_bytes()))
    if not pairs:
        raise CliError("no training pairs after tier selection")
    val = None
    if args.val_examples:
        val_ex = []
        for p in args.val_examples:
            val_ex.extend(adapters.read_lemma_examples(Path(p).read_bytes()))
        val = [(lemmatizer.build_source(e.language, e.surface, multilingual), e.lemma) for e in val_ex]
    elif _flag(args.validate_on_train):
        val = pairs
    model = lemmatizer.train_lemmatizer(pairs, config, val)
    preds = model.adapter.generate_batch([s for s, _ in pairs])
    metrics = {
        "seed": config.seed,
        "tier": args.tier,
        "pairs": len(pairs),
        "train_exact_match": evaluation.lemma_exact_match([(t, p) for (_, t), p in zip(pairs, preds)]),
        "best_epoch": model.adapter.best_epoch,
    }
    out = _out_path(args.out)
    lemmatizer.save_lemmatizer(model, out, metrics)
    atomic_write(out / "pairs.tsv", lemmatizer.write_pair_file(pairs))
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _bindings(args) -> dict[str, str]:
    binds = {}
    for item in args.bind or []:
        role, sep, path = item.partition("=")
        if not sep:
            raise CliError(f"--bind expects ROLE=PATH, got {item!r}")
        binds[role.strip()] = path.strip()
    for key, value in getattr(args, "_config", {}).items():
        if key.startswith("role."):
            binds.setdefault(key[5:], value)
    return binds


def cmd_predict(args) -> int:
    preset = _preset(args.preset)
    binds = _bindings(args)
    for lang in LANGUAGES:
        if args.ner_model:
            binds.setdefault(preset.ner[lang], args.ner_model)
        if args.lemma_model:
            binds.setdefault(preset.lemmatizer[lang], args.lemma_model)
    layout = corpus.DocumentLayout.parse(args.layout) if args.layout else corpus.DocumentLayout()
    raw_root = Path(args.raw_dir)
    docs = [(p, _load_raw(p, args.language, layout)) for p in _raw_files(raw_root)]
    needed = {preset.ner[d.language] for _, d in docs} | {preset.lemmatizer[d.language] for _, d in docs}
    missing = sorted(r for r in needed if r not in binds or not Path(binds[r], "manifest.json").exists())
    if missing:
        raise CliError(
            "missing checkpoints for roles: "
            + ", ".join(f"{r} ({binds.get(r, 'unbound')})" for r in missing)
        )
    ner_models: dict[str, tagger.NerModel] = {}
    lemma_models: dict[str, lemmatizer.LemmaModel] = {}
    fallback = lemmatizer.FallbackReport()
    out_root = _out_path(args.out)
    for path, doc in docs:
        ner_path = binds[preset.ner[doc.language]]
        lemma_path = binds[preset.lemmatizer[doc.language]]
        if ner_path not in ner_models:
            ner_models[ner_path] = tagger.load_model(ner_path)
        if lemma_path not in lemma_models:
            lemma_models[lemma_path] = lemmatizer.load_lemmatizer(lemma_path)
        records = predict_records(ner_models[ner_path], lemma_models[lemma_path], doc, fallback)
        rel = path.relative_to(raw_root).with_suffix(".out")
        atomic_write(out_root / rel, submission.format_prediction(doc.doc_id, records))
    print(f"predicted {len(docs)} documents; lemma fallbacks: {fallback.fallbacks}/{fallback.calls}")
    return 0


def predict_records(
    ner_model: tagger.NerModel,
    lemma_model: lemmatizer.LemmaModel,
    doc: corpus.RawDocument,
    fallback: Optional[lemmatizer.FallbackReport] = None,
) -> list[submission.Record]:
    """NER spans -> unique (surface, category) -> lemma for each."""
    spans = tagger.predict_document(ner_model, doc)
    mentions = submission.unique_mentions((s.surface, s.category) for s, _ in spans)
    lemmas = lemmatizer.predict_lemmas(lemma_model, [(doc.language, m) for m, _ in mentions], fallback)
    return [submission.Record(m, lem, cat) for (m, cat), lem in zip(mentions, lemmas)]


def _annotation_dir(root: Path, kind: str) -> dict[str, tuple[str, list]]:
    if not root.is_dir():
        raise CliError(f"{root}: not a directory")
    docs = {}
    for f in sorted(root.rglob("*.out")):
        try:
            if kind == "gold":
                doc_id, mentions = corpus.parse_annotation_file(f.read_bytes(), str(f))
                records = [(m.form, m.lemma, m.category) for m in mentions]
            else:
                doc_id, recs = submission.parse_prediction(f.read_bytes(), str(f))
                records = [(r.form, r.lemma, r.category) for r in recs]
        except (corpus.CorpusError, submission.SubmissionError, UnicodeDecodeError) as exc:
            raise CliError(f"{f}: {exc}") from None
        lang = next((p for p in reversed(f.relative_to(root).parent.parts) if p in LANGUAGES), "all")
        docs[doc_id] = (lang, records)
    if not docs:
        raise CliError(f"{root}: no .out files")
    return docs


def cmd_evaluate(args) -> int:
    reports: list[evaluation.EvalReport] = []
    if args.span_f1:
        gold = _read_conll_paths([args.gold])
        pred = _read_conll_paths([args.pred])
        try:
            reports.append(evaluation.span_f1(gold, pred))
        except evaluation.EvaluationError as exc:
            raise CliError(str(exc)) from None
    else:
        gold = _annotation_dir(Path(args.gold), "gold")
        pred = _annotation_dir(Path(args.pred), "pred")
        unmatched = sorted(set(gold) ^ set(pred))
        if unmatched:
            raise CliError("document ids without a counterpart: " + ", ".join(unmatched))
        langs = sorted({lang for lang, _ in gold.values()})
        for lang in langs + (["all"] if len(langs) > 1 else []):
            ids = [d for d in gold if lang == "all" or gold[d][0] == lang]
            if args.lemma_em:
                pairs = _lemma_pairs(gold, pred, ids)
                if not pairs:
                    raise CliError(f"{lang}: no recognized gold mentions to score lemmas on")
                reports.append(evaluation.lemma_report(pairs, lang))
            else:
                reports.append(
                    evaluation.mention_set_f1(
                        {d: [(f, c) for f, _, c in gold[d][1]] for d in ids},
                        {d: [(f, c) for f, _, c in pred[d][1]] for d in ids},
                        case_sensitive=_flag(args.case_sensitive),
                        language=lang,
                    )
                )
    out_dir = _out_path(args.out) if args.out else None
    for r in reports:
        text = evaluation.render_report(r, args.format)
        sys.stdout.write(text.decode())
        if out_dir:
            atomic_write(out_dir / f"{r.metric}-{r.language}.txt", evaluation.render_report(r, "plain"))
            atomic_write(out_dir / f"{r.metric}-{r.language}.json", evaluation.render_report(r, "json"))
    return 0


def _lemma_pairs(gold, pred, ids) -> list[tuple[str, str]]:
    """Gold vs predicted lemma for every gold mention whose form was recognized."""
    pairs = []
    for d in ids:
        predicted = {}
        for form, lemma, _ in pred[d][1]:
            predicted.setdefault(evaluation.normalize_lemma(form), lemma)
        seen = set()
        for form, lemma, _ in gold[d][1]:
            key = evaluation.normalize_lemma(form)
            if key in predicted and key not in seen:
                seen.add(key)
                pairs.append((lemma, predicted[key]))
    return pairs


def cmd_package_submission(args) -> int:
    _preset(args.preset)
    pred_root = Path(args.pred_dir)
    if not pred_root.is_dir():
        raise CliError(f"{pred_root}: not a directory")
    entries = {}
    for f in sorted(pred_root.rglob("*.out")):
        data = f.read_bytes()
        try:
            submission.parse_prediction(data, str(f))
        except submission.SubmissionError as exc:
            raise CliError(str(exc)) from None
        entries[f.relative_to(pred_root).as_posix()] = data
    if not entries:
        raise CliError(f"{pred_root}: no prediction files")
    if args.raw_dir:
        expected = {p.relative_to(args.raw_dir).with_suffix(".out").as_posix() for p in _raw_files(Path(args.raw_dir))}
        missing = sorted(expected - set(entries))
        if missing:
            raise CliError("missing predictions for: " + ", ".join(missing))
    archive = submission.build_archive(entries, args.preset)
    problems = submission.validate_submission(archive)
    if problems:
        raise CliError("archive failed validation: " + "; ".join(problems))
    out = _out_path(args.out)
    atomic_write(out, archive)
    print(f"packaged {len(entries)} documents into {out}")
    return 0


def cmd_validate_submission(args) -> int:
    path = Path(args.archive)
    if not path.exists():
        raise CliError(f"{path}: no such file")
    problems = submission.validate_submission(path.read_bytes())
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return 1
    print(f"{path}: ok")
    return 0


def _preset(name: Optional[str]) -> submission.SystemPreset:
    if not name:
        raise CliError("no --preset given")
    try:
        return submission.get_preset(name)
    except submission.SubmissionError as exc:
        raise CliError(str(exc)) from None


def _flag(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="slavner", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value config file")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("convert", cmd_convert, "shared-task raw + annotated files -> CoNLL")
    p.add_argument("input_dir", help="directory with raw/ and annotated/ trees")
    p.add_argument("output", help="CoNLL output path")
    p.add_argument("--layout", help="raw file layout, e.g. 'metadata_lines=4,language_line=1'")
    p.add_argument("--language", choices=LANGUAGES)
    p.add_argument("--unmatched", help="unmatched-mention report (default: OUTPUT.unmatched.tsv)")
    p.add_argument("--lemma-examples", help="also write shared-task lemma examples here")

    p = add("adapt", cmd_adapt, "external NER corpus or lemma resource -> toolkit format")
    p.add_argument("format", choices=adapters.NER_FORMATS + adapters.LEMMA_ORIGINS)
    p.add_argument("output")
    p.add_argument("files", nargs="+")
    p.add_argument("--mapping", help="label mapping file (source target per line)")
    p.add_argument("--language", choices=LANGUAGES)

    p = add("train-ner", cmd_train_ner, "train a recognition model")
    p.add_argument("--train", action="append", help="CoNLL file or directory (repeatable)")
    p.add_argument("--weight", action="append", help="mixing weight per --train corpus")
    p.add_argument("--val", action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", default=13)
    p.add_argument("--epochs", default=100)
    p.add_argument("--batch-size", default=8)
    p.add_argument("--lr", default=5e-3)
    p.add_argument("--max-pieces", default=256)
    p.add_argument("--no-crf", action="store_true", default=False)
    p.add_argument("--constraint-mask", action="store_true", default=False)

    p = add("train-lemma", cmd_train_lemma, "train a lemmatizer")
    p.add_argument("--examples", action="append", help="LemmaExample TSV (repeatable)")
    p.add_argument("--pairs", action="append", help="source<TAB>target pair file (repeatable)")
    p.add_argument("--tier", default="lexicon", help="original | poleval | lexicon")
    p.add_argument("--val-examples", action="append")
    p.add_argument("--validate-on-train", action="store_true", default=False)
    p.add_argument("--monolingual", action="store_true", default=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", default=13)
    p.add_argument("--epochs", default=300)
    p.add_argument("--batch-size", default=16)
    p.add_argument("--lr", default=3e-3)

    p = add("predict", cmd_predict, "recognize and lemmatize raw documents")
    p.add_argument("raw_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--preset")
    p.add_argument("--bind", action="append", help="ROLE=CHECKPOINT_DIR (repeatable)")
    p.add_argument("--ner-model", help="checkpoint for every unbound NER role")
    p.add_argument("--lemma-model", help="checkpoint for every unbound lemmatizer role")
    p.add_argument("--layout")
    p.add_argument("--language", choices=LANGUAGES)

    p = add("evaluate", cmd_evaluate, "score predictions against gold")
    p.add_argument("gold")
    p.add_argument("pred")
    metric = p.add_mutually_exclusive_group(required=True)
    metric.add_argument("--span-f1", action="store_true")
    metric.add_argument("--mention-f1", action="store_true")
    metric.add_argument("--lemma-em", action="store_true")
    p.add_argument("--case-sensitive", action="store_true", default=False)
    p.add_argument("--format", choices=(evaluation.PLAIN, evaluation.JSON), default=evaluation.PLAIN)
    p.add_argument("--out", help="directory for report files")

    p = add("package-submission", cmd_package_submission, "zip prediction files")
    p.add_argument("pred_dir")
    p.add_argument("--preset")
    p.add_argument("--out", required=True)
    p.add_argument("--raw-dir", help="check that every raw document has a prediction")

    p = add("validate-submission", cmd_validate_submission, "check an archive's format")
    p.add_argument("archive")
    return parser, subs


def _apply_config(argv: list[str], subs: dict[str, argparse.ArgumentParser]) -> dict[str, str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    config = read_config(known.config)
    command = next((a for a in argv if a in subs), None)
    if command is None:
        return config
    p = subs[command]
    dests = {a.dest for a in p._actions}
    defaults = {}
    for key, value in config.items():
        if key.startswith("role."):
            continue
        dest = key.replace("-", "_")
        if dest not in dests:
            raise CliError(f"{known.config}: unknown key {key!r} for {command}")
        action = next(a for a in p._actions if a.dest == dest)
        defaults[dest] = [value] if isinstance(action, argparse._AppendAction) else value
    p.set_defaults(**defaults)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        config = _apply_config(argv, subs)
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    args._config = config
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
