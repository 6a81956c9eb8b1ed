"""Command-line entry point: ``gercs <subcommand>``.

Exit codes: 0 ok, 1 failed check, 2 usage/config error, 3 I/O error,
4 adapter-state error (NotAdapted / AlreadyAdapted), 5 mismatched utterance sets.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import h2tmodel as hm
from .errors import AlreadyAdapted, ContextOverflow, GERError, NotAdapted
from .experiment import ExperimentConfig, load_config, relative_reduction
from .metrics import evaluate, pct
from .nbest import EnsembleSpec, build_ensembles, load_hypotheses, load_refs, one_best
from .prompt import format_prompt, make_pair, read_pairs, write_pairs
from .simcorpus import emit_hypotheses, generate_corpus, load_grammar, pretraining_corpus, split
from .textnorm import detokenize, from_surfaces

log = logging.getLogger("gercs")

EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_ADAPTER, EXIT_MISMATCH = 1, 2, 3, 4, 5


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> ExperimentConfig:
    try:
        cfg = load_config(getattr(args, "config", None), getattr(args, "set", None) or ())
    except OSError as e:
        raise CLIError(f"cannot read config: {e}", EXIT_USAGE)
    except (KeyError, ValueError, TypeError) as e:
        raise CLIError(f"bad config: {e}", EXIT_USAGE)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e}", EXIT_IO)


def _write_json(path, obj) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(obj, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    except OSError as e:
        raise CLIError(f"cannot write {path}: {e}", EXIT_IO)


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash()}


def _spec(args, cfg) -> EnsembleSpec:
    try:
        return EnsembleSpec.parse(args.ensemble_spec or cfg.ensemble)
    except ValueError as e:
        raise CLIError(f"bad ensemble spec: {e}", EXIT_USAGE)


def _split_ids(args) -> set[str] | None:
    if not getattr(args, "split_manifest", None):
        return None
    manifest = json.loads("\n".join(_read_lines(args.split_manifest)))
    return set(manifest[args.split])


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    if args.n is not None and args.n < 1:
        raise CLIError("--n must be >= 1", EXIT_USAGE)
    cfg = _config(args)
    if args.personas:
        cfg = _apply_personas(cfg, args.personas)
    n = args.n if args.n is not None else cfg.corpus.size
    out = Path(args.out_dir or cfg.paths.corpus_dir)
    corpus = generate_corpus(n, cfg.seed)
    try:
        stats = emit_hypotheses(corpus, cfg.make_personas(), cfg.beams, cfg.seed + cfg.corpus.hyp_seed_offset,
                                out, cfg.ensemble_spec())
    except OSError as e:
        raise CLIError(str(e), EXIT_IO)
    manifest = {**_provenance(cfg), "n": n, **stats}
    if cfg.split.train_count + cfg.split.test_count <= n:
        split(corpus, cfg.split, out / "split.json")
        manifest["split"] = str(out / "split.json")
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(manifest, ensure_ascii=False))
    return 0


def _apply_personas(cfg: ExperimentConfig, path) -> ExperimentConfig:
    """Personas file: TOML tables ``[name]`` with rate keys and an optional ``beam``."""
    from .experiment import tomllib

    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise CLIError(f"cannot read personas file: {e}", EXIT_IO)
    except tomllib.TOMLDecodeError as e:
        raise CLIError(f"bad personas file: {e}", EXIT_USAGE)
    personas, beams = {}, {}
    for name, spec in data.items():
        spec = dict(spec)
        beams[name] = int(spec.pop("beam", 1))
        personas[name] = spec
    cfg.personas, cfg.beams = personas, beams
    try:
        cfg.make_personas()
    except (TypeError, ValueError) as e:
        raise CLIError(f"bad persona: {e}", EXIT_USAGE)
    return cfg


def cmd_ensemble(args) -> int:
    cfg = _config(args)
    table = load_hypotheses(_read_lines(args.hyps))
    lists = build_ensembles(table, _spec(args, cfg))
    lines = []
    for utt_id, lst in lists.items():
        lines.append(json.dumps({"utt_id": utt_id, "entries": [h.to_record() for h in lst.entries],
                                 "provenance": lst.provenance, "flags": lst.flags}, ensure_ascii=False))
    try:
        Path(args.out).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    except OSError as e:
        raise CLIError(f"cannot write {args.out}: {e}", EXIT_IO)
    return 0


def _load_predictions(spec: str) -> tuple[str, dict[str, str]]:
    name, sep, path = spec.partition("=")
    if not sep:
        name, path = Path(spec).stem, spec
    preds = {}
    for line in _read_lines(path):
        if line.strip():
            rec = json.loads(line)
            preds[rec["utt_id"]] = rec["text"]
    return name, preds


def cmd_score(args) -> int:
    cfg = _config(args)
    refs = load_refs(_read_lines(args.refs))
    keep = _split_ids(args)
    if keep is not None:
        refs = {u: t for u, t in refs.items() if u in keep}
    outputs: dict[str, dict[str, str]] = {}
    lists = None
    spec = _spec(args, cfg)
    if args.hyps:
        table = load_hypotheses(_read_lines(args.hyps))
        systems = spec.systems + sorted({s for per in table.values() for s in per} - set(spec.systems))
        for s in systems:
            outputs[s] = one_best(table, s)
        try:
            lists = build_ensembles(table, spec)
        except GERError as e:
            raise CLIError(str(e), EXIT_USAGE)
    for p in args.pred or ():
        name, preds = _load_predictions(p)
        outputs[name] = preds
    if not outputs:
        raise CLIError("nothing to score: give --hyps and/or --pred", EXIT_USAGE)
    primary = args.primary or (_load_predictions(args.pred[0])[0] if args.pred else spec.systems[0])
    report = evaluate(refs, outputs, lists, primary=primary)
    report.seed, report.config_hash = cfg.seed, cfg.hash()
    out = report.to_json()
    out["primary"] = primary
    out["raw"] = {"corpus_mer": report.corpus_mer, "per_system": report.per_system,
                  "oracle_nb": report.oracle_nb, "oracle_cp": report.oracle_cp}
    for system, ids in report.missing.items():
        log.warning("%s: %d utterances without output scored as deletions", system, len(ids))
    if args.report:
        _write_json(args.report, out)
    print(f"{'system':<20}{'MER':>8}")
    for s, v in report.per_system.items():
        print(f"{s:<20}{pct(v):>8.1f}")
    if lists is not None:
        print(f"{'oracle o_nb':<20}{pct(report.oracle_nb):>8.1f}")
        print(f"{'oracle o_cp':<20}{pct(report.oracle_cp):>8.1f}")
    return 0


def cmd_make_pairs(args) -> int:
    cfg = _config(args)
    refs = load_refs(_read_lines(args.refs))
    lists = build_ensembles(load_hypotheses(_read_lines(args.hyps)), _spec(args, cfg))
    keep = _split_ids(args)
    pairs = []
    for utt_id, text in refs.items():
        if keep is not None and utt_id not in keep:
            continue
        if utt_id not in lists:
            log.warning("no hypotheses for %s; skipped", utt_id)
            continue
        try:
            pairs.append(make_pair(lists[utt_id], text, cfg.prompt, cfg.model.max_context))
        except ContextOverflow as e:
            log.warning("%s", e)
    try:
        write_pairs(args.out, pairs)
    except OSError as e:
        raise CLIError(f"cannot write {args.out}: {e}", EXIT_IO)
    print(json.dumps({"pairs": len(pairs), **_provenance(cfg)}))
    return 0


def _load_ckpt(path) -> hm.H2TModel:
    try:
        return hm.load_checkpoint(path)
    except OSError as e:
        raise CLIError(f"cannot read checkpoint {path}: {e}", EXIT_IO)
    except ValueError as e:
        raise CLIError(f"bad checkpoint {path}: {e}", EXIT_USAGE)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.checkpoint_out)
    if args.stage == "base":
        grammar = load_grammar()
        vocab = hm.build_vocabulary(grammar.token_inventory())
        texts = pretraining_corpus(cfg.corpus.pretrain_sentences, cfg.seed + cfg.corpus.pretrain_seed_offset,
                                   grammar)
        model = hm.pretrain_base(texts, cfg.model, cfg.seed, vocab=vocab, train=cfg.pretrain,
                                 log_every=args.log_every)
        curve = model.history["pretrain_curve"]
    else:
        if not args.checkpoint_in:
            raise NotAdapted("--stage lora needs a base model via --checkpoint-in")
        if not args.pairs:
            raise CLIError("--stage lora needs --pairs", EXIT_USAGE)
        base = _load_ckpt(args.checkpoint_in)
        pairs = read_pairs(args.pairs)
        model = hm.inject_lora(base, cfg.lora, seed=cfg.seed)
        model, curve = hm.train_lora(model, pairs, cfg.lora, seed=cfg.seed, log=args.log_every > 0)
        log.info("trainable %d of %d base parameters", model.trainable_count(), model.base_count())
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        hm.save_checkpoint(model, out, extra={**_provenance(cfg), "stage": args.stage})
    except OSError as e:
        raise CLIError(f"cannot write checkpoint {out}: {e}", EXIT_IO)
    curve_path = Path(args.curve_out) if args.curve_out else out.with_suffix(".curve.json")
    key = "step_losses" if args.stage == "base" else "epoch_losses"
    _write_json(curve_path, {"stage": args.stage, key: curve, **_provenance(cfg)})
    print(json.dumps({"checkpoint": str(out), "curve": str(curve_path), "final": curve[-1] if curve else None}))
    return 0


def cmd_decode(args) -> int:
    cfg = _config(args)
    model = _load_ckpt(args.checkpoint)
    lines = _read_lines(args.hyps)
    table = load_hypotheses(lines)
    if not table:
        log.warning("no hypotheses in %s; writing empty predictions", args.hyps)
    lists = build_ensembles(table, _spec(args, cfg))
    keep = _split_ids(args)
    records = []
    for utt_id, lst in lists.items():
        if keep is not None and utt_id not in keep:
            continue
        try:
            toks = hm.decode_greedy(model, format_prompt(lst, cfg.prompt).tokens, args.max_len)
        except ContextOverflow as e:
            log.warning("%s: %s; skipped", utt_id, e)
            continue
        records.append({"utt_id": utt_id, "text": detokenize(from_surfaces(toks))})
    try:
        with open(args.out, "w", encoding="utf-8") as f:
            for r in records:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")
    except OSError as e:
        raise CLIError(f"cannot write {args.out}: {e}", EXIT_IO)
    return 0


def _report_row(label: str, baseline: dict, ger: dict) -> dict:
    b, g = baseline["raw"], ger["raw"]
    return {
        "label": label,
        "1-Best": pct(b["corpus_mer"]),
        "GER": pct(g["corpus_mer"]),
        "GER_rel": relative_reduction(b["corpus_mer"], g["corpus_mer"]),
        "o_nb": pct(b["oracle_nb"]),
        "o_cp": pct(b["oracle_cp"]),
    }


def format_table(rows: list[dict]) -> str:
    head = f"{'system':<16}{'1-Best':>8}{'GER':>20}{'o_nb':>8}{'o_cp':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ger = f"{r['GER']:.1f} ({r['GER_rel']:+.1f}%)"
        lines.append(f"{r['label']:<16}{r['1-Best']:>8.1f}{ger:>20}{r['o_nb']:>8.1f}{r['o_cp']:>8.1f}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    baseline = json.loads("\n".join(_read_lines(args.baseline)))
    ger = json.loads("\n".join(_read_lines(args.ger)))
    b_ids = {u["utt_id"] for u in baseline["utterances"]}
    g_ids = {u["utt_id"] for u in ger["utterances"]}
    if b_ids != g_ids:
        only_b, only_g = sorted(b_ids - g_ids), sorted(g_ids - b_ids)
        print(f"utterance sets differ: only in baseline {only_b[:20]}, only in GER {only_g[:20]}", file=sys.stderr)
        return EXIT_MISMATCH
    row = _report_row(args.label, baseline, ger)
    print(format_table([row]))
    if args.out:
        _write_json(args.out, {"rows": [row], "columns": ["1-Best", "GER", "o_nb", "o_cp"],
                               "seed": ger.get("seed"), "config_hash": ger.get("config_hash")})
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    model = _load_ckpt(args.checkpoint)
    if not model.adapted:
        model = hm.inject_lora(model, cfg.lora, seed=cfg.seed)
        hm.perturb_adapters(model, std=0.05, seed=cfg.seed)
    pairs = read_pairs(args.pairs)
    if not pairs:
        raise CLIError("no pairs to check", EXIT_USAGE)
    res = hm.grad_check(model, pairs[0], args.epsilon, args.samples, cfg.seed)
    ok = res["max_rel_error"] <= args.tol
    print(json.dumps({"max_rel_error": res["max_rel_error"], "epsilon": args.epsilon,
                      "samples": len(res["entries"]), "pass": ok}))
    return 0 if ok else EXIT_CHECK


# ---------------------------------------------------------------- parser


def _common(p, seed_required=False):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. lora.rank=8 (repeatable)")
    p.add_argument("--seed", type=int, required=seed_required)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gercs", description="Generative error correction for code-switching ASR")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize refs.jsonl and hypotheses.jsonl")
    _common(p, seed_required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--personas", help="TOML file of noise personas")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("ensemble", help="build per-utterance ensemble N-best lists")
    _common(p)
    p.add_argument("--hyps", required=True)
    p.add_argument("--ensemble-spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("score", help="MER per system plus o_nb / o_cp")
    _common(p)
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps")
    p.add_argument("--pred", action="append", metavar="[NAME=]PATH", help="predictions.jsonl to score")
    p.add_argument("--ensemble-spec")
    p.add_argument("--primary", help="system reported as corpus_mer")
    p.add_argument("--split-manifest")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--report")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("make-pairs", help="write H2T training pairs")
    _common(p)
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--ensemble-spec")
    p.add_argument("--split-manifest")
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_pairs)

    p = sub.add_parser("train", help="pretrain the base model or train LoRA adapters")
    _common(p, seed_required=True)
    p.add_argument("--stage", choices=["base", "lora"], required=True)
    p.add_argument("--pairs")
    p.add_argument("--checkpoint-in")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--curve-out")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="greedy GER decoding to predictions.jsonl")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--ensemble-spec")
    p.add_argument("--split-manifest")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("report", help="1-Best vs GER vs oracle table")
    p.add_argument("--baseline", required=True, help="score report of the 1-best system (with N-best oracles)")
    p.add_argument("--ger", required=True, help="score report of the GER predictions")
    p.add_argument("--label", default="ensemble")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of adapter gradients")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (NotAdapted, AlreadyAdapted) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ADAPTER
    except GERError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
