import argparse
import json
import time
from pathlib import Path

import torch

from gercs.experiment import load_config, load_or_pretrain


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--config", default=None)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--base", default="runs/checkpoints/base.ckpt", help="cached base checkpoint")
    ap.add_argument("--out", required=True, help="results JSON")
    return ap


def setup(args):
    torch.set_num_threads(1)
    cfg = load_config(args.config, args.set)
    t0 = time.perf_counter()
    base = load_or_pretrain(cfg, args.base, log_every=250)
    print(f"base ready in {time.perf_counter() - t0:.0f}s (final pretrain loss {base.history['final_loss']:.3f})")
    return cfg, base


def dump(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {path}")
