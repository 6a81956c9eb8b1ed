"""GER on hypotheses from the transliterating persona only: how many Latin words come back?"""

from _common import dump, parser, setup

from gercs.experiment import adapt, make_pairs, predict, prepare_data, relative_reduction, score_ger
from gercs.metrics import latin_recovery, pct
from gercs.nbest import one_best


def main():
    ap = parser(__doc__)
    ap.add_argument("--ensemble", default="mono_like:5")
    ap.add_argument("--show", type=int, default=10, help="example outputs to print")
    args = ap.parse_args()
    cfg, base = setup(args)
    data = prepare_data(cfg, args.ensemble)
    model, _ = adapt(base, make_pairs(data.train, cfg.prompt, cfg.model.max_context), cfg)
    test = data.test
    preds = predict(model, test.lists, cfg.prompt)
    system = test.lists[test.utts[0].utt_id].entries[0].system
    onebest = one_best(test.table, system)
    ger_hit = one_hit = total = 0
    for i, u in enumerate(test.utts):
        hit, n = latin_recovery(u.ref, test.lists[u.utt_id], preds[u.utt_id])
        ger_hit, total = ger_hit + hit, total + n
        one_hit += latin_recovery(u.ref, test.lists[u.utt_id], onebest.get(u.utt_id, ""))[0]
        if i < args.show:
            print(f"{onebest.get(u.utt_id, '')}  ->  {preds[u.utt_id]}   (ref {u.text})")
    rep = score_ger(test, preds, system)
    one, ger = rep.per_system[system], rep.per_system["ger"]
    out = {"ensemble": args.ensemble, "latin_tokens": total, "ger_recovered": ger_hit, "onebest_recovered": one_hit,
           "1-Best": pct(one), "GER": pct(ger), "GER_rel": relative_reduction(one, ger),
           "o_nb": pct(rep.oracle_nb), "o_cp": pct(rep.oracle_cp), "seed": cfg.seed, "config_hash": cfg.hash()}
    print(out)
    dump(args.out, out)


if __name__ == "__main__":
    main()
