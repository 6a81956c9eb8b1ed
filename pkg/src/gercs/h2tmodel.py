"""Desk-scale decoder-only transformer with LoRA adapters on Q/K/V.

The base network is pretrained as a plain next-token language model, then
frozen; H2T adaptation trains only the low-rank A/B matrices.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AlreadyAdapted, ContextOverflow, NotAdapted, UnknownToken
from .prompt import EOS, H2TPair, PromptTemplate

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"


@dataclass
class ModelConfig:
    vocab_size: int = 0
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 256
    max_context: int = 256

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class LoraConfig:
    rank: int = 4
    alpha: float | None = None  # None means alpha == rank (unit scale)
    targets: tuple[str, ...] = ("q", "k", "v")
    learning_rate: float = 2e-4
    epochs: int = 10
    batch_size: int = 32
    init_std: float = 0.02

    def __post_init__(self):
        self.targets = tuple(self.targets)
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if not set(self.targets) <= {"q", "k", "v"}:
            raise ValueError(f"unsupported LoRA targets {self.targets}")

    @property
    def scale(self) -> float:
        alpha = self.rank if self.alpha is None else self.alpha
        return alpha / self.rank


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 3e-3
    seq_len: int = 160
    warmup: int = 100
    weight_decay: float = 0.0
    repeat_prob: float = 0.5


class Vocabulary:
    """Token <-> id bijection; reserved markers come first."""

    def __init__(self, tokens: Iterable[str], reserved: Sequence[str] | None = None):
        if reserved is None:
            reserved = [PAD, UNK, BOS, EOS, *PromptTemplate().markers]
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for t in [*reserved, *tokens]:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)
        self.reserved = tuple(reserved)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def encode(self, tokens: Iterable[str], allow_unk: bool = False) -> list[int]:
        ids = []
        for t in tokens:
            i = self.stoi.get(t)
            if i is None:
                if not allow_unk:
                    raise UnknownToken(t)
                i = self.stoi[UNK]
            ids.append(i)
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]


class LoraLinear(nn.Module):
    """Frozen linear map plus a trainable low-rank update ``scale * B @ A``."""

    def __init__(self, base: nn.Linear, rank: int, scale: float, init_std: float, generator: torch.Generator):
        super().__init__()
        self.base = base
        d_out, d_in = base.weight.shape
        a = torch.randn(rank, d_in, generator=generator, dtype=base.weight.dtype) * init_std
        self.lora_A = nn.Parameter(a)
        self.lora_B = nn.Parameter(torch.zeros(d_out, rank, dtype=base.weight.dtype))
        self.scale = scale

    def forward(self, x):
        return self.base(x) + self.scale * F.linear(F.linear(x, self.lora_A), self.lora_B)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, d)

    def attn(self, x):
        b, t, d = x.shape
        h = self.n_heads

        def heads(z):
            return z.view(b, t, h, d // h).transpose(1, 2)

        y = F.scaled_dot_product_attention(heads(self.q(x)), heads(self.k(x)), heads(self.v(x)), is_causal=True)
        return self.proj(y.transpose(1, 2).reshape(b, t, d))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class TransformerLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos = nn.Embedding(cfg.max_context, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.apply(self._init)

    @staticmethod
    def _init(m):
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)

    def forward(self, ids):
        t = ids.shape[1]
        if t > self.cfg.max_context:
            raise ContextOverflow(t, self.cfg.max_context)
        x = self.tok(ids) + self.pos(torch.arange(t))
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.ln_f(x))


@dataclass
class H2TModel:
    config: ModelConfig
    vocab: Vocabulary
    net: TransformerLM
    lora: LoraConfig | None = None
    seed: int | None = None
    history: dict = field(default_factory=dict)

    @property
    def adapted(self) -> bool:
        return self.lora is not None

    def adapter_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.net.named_parameters() if ".lora_" in n]

    def base_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.net.named_parameters() if ".lora_" not in n]

    def base_checksum(self) -> str:
        h = hashlib.sha256()
        # wrapped projections are named "<proj>.base.*"; hash under the unwrapped name
        for name, p in sorted((n.replace(".base.", "."), p) for n, p in self.base_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def trainable_count(self) -> int:
        return sum(p.numel() for _, p in self.net.named_parameters() if p.requires_grad)

    def base_count(self) -> int:
        return sum(p.numel() for _, p in self.base_parameters())

    def logits(self, ids: Sequence[int]) -> torch.Tensor:
        with torch.no_grad():
            return self.net(torch.tensor([list(ids)]))[0]


def build_vocabulary(tokens: Iterable[str]) -> Vocabulary:
    return Vocabulary(sorted(set(tokens)))


def _lr_at(step: int, total: int, base_lr: float, warmup: int) -> float:
    if step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return base_lr * 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))


def _pack_stream(docs: list[list[int]], seq_len: int, rng: random.Random, eos: int, bos: int,
                 repeat_prob: float) -> list[int]:
    # one window: BOS then EOS-joined sentences; some restate an earlier one
    window = [bos]
    used: list[list[int]] = []
    while len(window) < seq_len + 1:
        if used and rng.random() < repeat_prob:
            sent = used[rng.randrange(len(used))]
        else:
            sent = docs[rng.randrange(len(docs))]
            used.append(sent)
        window += sent + [eos]
    return window[: seq_len + 1]


def pretrain_base(
    corpus: Sequence[Sequence[str]],
    config: ModelConfig,
    seed: int,
    vocab: Vocabulary | None = None,
    train: PretrainConfig | None = None,
    log_every: int = 0,
) -> H2TModel:
    """Next-token LM training on token sequences packed into fixed windows.

    Windows are runs of EOS-separated sentences in which earlier sentences
    recur with probability ``repeat_prob``; those repeated spans are what
    give the base model the in-context copying a hypotheses prompt needs.
    """
    train = train or PretrainConfig()
    if vocab is None:
        vocab = build_vocabulary(t for s in corpus for t in s)
    docs = [vocab.encode(s) for s in corpus]
    config = copy.deepcopy(config)
    config.vocab_size = len(vocab)
    if train.seq_len + 1 > config.max_context:
        raise ContextOverflow(train.seq_len + 1, config.max_context)
    torch.manual_seed(seed)
    net = TransformerLM(config)
    rng = random.Random(seed)
    opt = torch.optim.AdamW(net.parameters(), lr=train.learning_rate, betas=(0.9, 0.999),
                            weight_decay=train.weight_decay)
    curve = []
    net.train()
    for step in range(train.steps):
        batch = torch.tensor([_pack_stream(docs, train.seq_len, rng, vocab.eos_id, vocab.bos_id,
                                           train.repeat_prob)
                              for _ in range(train.batch_size)])
        for g in opt.param_groups:
            g["lr"] = _lr_at(step, train.steps, train.learning_rate, train.warmup)
        logits = net(batch[:, :-1])
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), batch[:, 1:].reshape(-1))
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(net.parameters(), 1.0)
        opt.step()
        curve.append(loss.item())
        if log_every and step % log_every == 0:
            print(f"pretrain step {step} loss {loss.item():.4f}")
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    tail = curve[-20:]
    return H2TModel(config, vocab, net, seed=seed,
                    history={"pretrain_curve": curve, "final_loss": sum(tail) / len(tail)})


def sentence_loss(model: H2TModel, tokens: Sequence[str]) -> float:
    """Mean next-token cross-entropy of one sentence under the model."""
    ids = [model.vocab.bos_id] + model.vocab.encode(tokens) + [model.vocab.eos_id]
    with torch.no_grad():
        logits = model.net(torch.tensor([ids[:-1]]))[0]
        return F.cross_entropy(logits, torch.tensor(ids[1:])).item()


def inject_lora(model: H2TModel, config: LoraConfig | None = None, seed: int = 0) -> H2TModel:
    """Copy of ``model`` with LoRA adapters on every targeted projection."""
    if model.adapted:
        raise AlreadyAdapted("model already carries LoRA adapters")
    config = config or LoraConfig()
    if config.rank >= model.config.d_model:
        raise ValueError("LoRA rank must be smaller than d_model")
    out = copy.deepcopy(model)
    for p in out.net.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(seed)
    for blk in out.net.blocks:
        for name in config.targets:
            setattr(blk, name, LoraLinear(getattr(blk, name), config.rank, config.scale, config.init_std, gen))
    out.lora = config
    return out


def perturb_adapters(model: H2TModel, std: float = 0.05, seed: int = 0) -> H2TModel:
    """Give every B matrix small random values (fresh adapters have B = 0, which zeroes dL/dA)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.adapter_parameters():
            if name.endswith("lora_B"):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return model


def expected_trainable(config: ModelConfig, lora: LoraConfig) -> int:
    return len(lora.targets) * config.n_layers * lora.rank * (config.d_model + config.d_model)


def encode_pair(model: H2TModel, pair: H2TPair, allow_unk: bool = True) -> tuple[list[int], list[bool]]:
    ids = model.vocab.encode(pair.tokens, allow_unk=allow_unk)
    if len(ids) > model.config.max_context:
        raise ContextOverflow(len(ids), model.config.max_context, pair.utt_id)
    return ids, pair.loss_mask


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean -log p(target) over positions where ``mask`` is true."""
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    mask = mask.to(nll.dtype)
    return (nll * mask).sum() / mask.sum()


def _collate(encoded: list[tuple[list[int], list[bool]]], pad_id: int):
    width = max(len(ids) for ids, _ in encoded)
    ids = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.bool)
    for row, (seq, m) in enumerate(encoded):
        ids[row, : len(seq)] = torch.tensor(seq)
        mask[row, : len(m)] = torch.tensor(m)
    return ids, mask


def _batch_loss(model: H2TModel, encoded) -> torch.Tensor:
    # right padding only: causal attention keeps real positions blind to pads
    ids, mask = _collate(encoded, model.vocab.pad_id)
    logits = model.net(ids[:, :-1])
    return masked_cross_entropy(logits, ids[:, 1:], mask[:, 1:])


def h2t_loss(model: H2TModel, pair: H2TPair) -> float:
    with torch.no_grad():
        return _batch_loss(model, [encode_pair(model, pair)]).item()


def train_lora(
    model: H2TModel,
    pairs: Sequence[H2TPair],
    config: LoraConfig | None = None,
    seed: int = 0,
    log: bool = False,
) -> tuple[H2TModel, list[float]]:
    """Adam on the adapter matrices only; returns the model and per-epoch mean loss."""
    if not model.adapted:
        raise NotAdapted("inject LoRA adapters before H2T training")
    config = config or model.lora
    encoded = [encode_pair(model, p) for p in pairs]
    params = [p for _, p in model.adapter_parameters()]
    for p in params:
        p.requires_grad_(True)
    before = model.base_checksum()
    torch.manual_seed(seed)
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999))
    rng = random.Random(seed)
    curve: list[float] = []
    model.net.train()
    for epoch in range(config.epochs):
        order = list(range(len(encoded)))
        rng.shuffle(order)
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [encoded[i] for i in order[start: start + config.batch_size]]
            loss = _batch_loss(model, batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        curve.append(total / count)
        if log:
            print(f"lora epoch {epoch + 1} loss {curve[-1]:.4f}")
    model.net.eval()
    if model.base_checksum() != before:
        raise RuntimeError("base weights changed during adapter training")
    model.history.setdefault("lora_curves", []).append(curve)
    return model, curve


def decode_greedy(model: H2TModel, prompt: Sequence[str], max_len: int = 64) -> list[str]:
    """Argmax continuation until EOS or ``max_len``; markers are stripped."""
    ids = model.vocab.encode(prompt, allow_unk=True)
    if len(ids) > model.config.max_context:
        raise ContextOverflow(len(ids), model.config.max_context)
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_len):
            if len(ids) >= model.config.max_context:
                break
            logits = model.net(torch.tensor([ids]))[0, -1]
            nxt = int(torch.argmax(logits))  # first maximum wins ties
            if nxt == model.vocab.eos_id:
                break
            ids.append(nxt)
            out.append(nxt)
    reserved = set(model.vocab.reserved)
    return [t for t in model.vocab.decode(out) if t not in reserved]


def decode_batch(model: H2TModel, prompts: Sequence[Sequence[str]], max_len: int = 64) -> list[list[str]]:
    """Greedy decoding of many prompts; same output as calling decode_greedy on each."""
    return [decode_greedy(model, p, max_len) for p in prompts]


def grad_check(model: H2TModel, pair: H2TPair, epsilon: float = 1e-3, samples: int = 64,
               seed: int = 0) -> dict:
    """Analytic adapter gradients vs. central differences, in float64.

    Returns max relative error plus the per-entry table.
    """
    if not model.adapted:
        raise NotAdapted("gradient check needs adapters")
    m = copy.deepcopy(model)
    m.net.double()
    encoded = [encode_pair(m, pair)]
    params = dict(m.adapter_parameters())
    for p in params.values():
        p.requires_grad_(True)
        p.grad = None
    loss = _batch_loss(m, encoded)
    loss.backward()
    rng = random.Random(seed)
    index = [(n, i) for n, p in sorted(params.items()) for i in range(p.numel())]
    chosen = rng.sample(index, min(samples, len(index)))
    rows = []
    worst = 0.0
    with torch.no_grad():
        for name, i in chosen:
            flat = params[name].view(-1)
            analytic = params[name].grad.view(-1)[i].item()
            orig = flat[i].item()
            flat[i] = orig + epsilon
            up = _batch_loss(m, encoded).item()
            flat[i] = orig - epsilon
            down = _batch_loss(m, encoded).item()
            flat[i] = orig
            numeric = (up - down) / (2 * epsilon)
            denom = max(abs(analytic), abs(numeric))
            rel = abs(analytic - numeric) / denom if denom > 0 else 0.0
            worst = max(worst, rel)
            rows.append({"param": name, "index": i, "analytic": analytic, "numeric": numeric, "rel_error": rel})
    return {"max_rel_error": worst, "epsilon": epsilon, "entries": rows}


# ---------------------------------------------------------------- checkpoints

MAGIC = b"GERCKPT1"


def save_checkpoint(model: H2TModel, path, extra: dict | None = None) -> None:
    """Header: magic, u64 JSON length, JSON manifest; then little-endian f32 tensors."""
    tensors = []
    blobs = []
    offset = 0
    for name, p in model.net.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        data = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "config": asdict(model.config),
        "lora": None if model.lora is None else asdict(model.lora),
        "vocab": model.vocab.itos,
        "reserved": list(model.vocab.reserved),
        "seed": model.seed,
        "history": {k: v for k, v in model.history.items() if k != "pretrain_curve"},
        "tensors": tensors,
        "extra": extra or {},
    }
    raw = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path) -> H2TModel:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start: start + n].decode("utf-8"))
    body = raw[start + n:]
    cfg = ModelConfig(**header["config"])
    vocab = Vocabulary(header["vocab"][len(header["reserved"]):], header["reserved"])
    if len(vocab) != cfg.vocab_size:
        raise ValueError("vocabulary size does not match config")
    model = H2TModel(cfg, vocab, TransformerLM(cfg), seed=header.get("seed"), history=header.get("history", {}))
    for p in model.net.parameters():
        p.requires_grad_(False)
    if header["lora"] is not None:
        model = inject_lora(model, LoraConfig(**header["lora"]))
    state = model.net.state_dict()
    if set(state) != {t["name"] for t in header["tensors"]}:
        raise ValueError("checkpoint tensor names do not match the configured model")
    loaded = {}
    for t in header["tensors"]:
        if list(state[t["name"]].shape) != t["shape"]:
            raise ValueError(f"shape mismatch for {t['name']}: {t['shape']} vs {list(state[t['name']].shape)}")
        arr = np.frombuffer(body, dtype="<f4", count=math.prod(t["shape"]) if t["shape"] else 1,
                            offset=t["offset"]).reshape(t["shape"])
        loaded[t["name"]] = torch.from_numpy(arr.astype(np.float32))
    model.net.load_state_dict(loaded)
    return model
