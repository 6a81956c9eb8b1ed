"""End-to-end GER run: 1-best vs GER vs oracles for one or more ensemble setups.

    python3 scripts/run_ger_experiment.py --out runs/reports/ger.json \
        --ensemble whisper_like:5,conformer_like:1,mono_like:1 --ensemble conformer_like:5
"""

import time

from _common import dump, parser, setup

from gercs.experiment import adapt, make_pairs, predict, prepare_data, relative_reduction, score_ger
from gercs.metrics import pct


def main():
    ap = parser(__doc__)
    ap.add_argument("--ensemble", action="append", help="ensemble spec (repeatable); default from config")
    args = ap.parse_args()
    cfg, base = setup(args)
    rows = []
    for spec in args.ensemble or [cfg.ensemble]:
        t0 = time.perf_counter()
        data = prepare_data(cfg, spec)
        model, curve = adapt(base, make_pairs(data.train, cfg.prompt, cfg.model.max_context), cfg, log=True)
        preds = predict(model, data.test.lists, cfg.prompt)
        baseline = data.test.lists[data.test.utts[0].utt_id].entries[0].system
        rep = score_ger(data.test, preds, baseline)
        one, ger = rep.per_system[baseline], rep.per_system["ger"]
        row = {"ensemble": spec, "1-Best": pct(one), "GER": pct(ger), "GER_rel": relative_reduction(one, ger),
               "o_nb": pct(rep.oracle_nb), "o_cp": pct(rep.oracle_cp), "epoch_losses": curve,
               "seconds": round(time.perf_counter() - t0, 1)}
        print(row)
        rows.append(row)
    dump(args.out, {"rows": rows, "seed": cfg.seed, "config_hash": cfg.hash()})


if __name__ == "__main__":
    main()
