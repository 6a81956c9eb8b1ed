"""GER test MER as a function of the number of H2T training pairs (fixed seed)."""

from _common import dump, parser, setup

from gercs.experiment import adapt, make_pairs, predict, prepare_data, relative_reduction, score_ger
from gercs.metrics import pct


def main():
    ap = parser(__doc__)
    ap.add_argument("--sizes", default="250,500,1000,2000")
    args = ap.parse_args()
    cfg, base = setup(args)
    data = prepare_data(cfg)
    baseline = data.test.lists[data.test.utts[0].utt_id].entries[0].system
    points = []
    for n in [int(x) for x in args.sizes.split(",")]:
        model, curve = adapt(base, make_pairs(data.train, cfg.prompt, cfg.model.max_context, limit=n), cfg)
        rep = score_ger(data.test, predict(model, data.test.lists, cfg.prompt), baseline)
        one, ger = rep.per_system[baseline], rep.per_system["ger"]
        points.append({"pairs": n, "GER": pct(ger), "GER_rel": relative_reduction(one, ger), "1-Best": pct(one),
                       "final_loss": curve[-1]})
        print(points[-1])
    dump(args.out, {"points": points, "seed": cfg.seed, "config_hash": cfg.hash()})


if __name__ == "__main__":
    main()
