"""Miniature masked-language-model backbone.

The stack is word + learned absolute position embeddings, a few pre-norm
transformer encoder layers, and an MLM head (dense, GELU, LayerNorm, untied
decoder to the vocabulary). The decoder is deliberately not tied to the word
embeddings so that the head can be trained while the embedding table stays
frozen.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .schedule import LRSchedule, lr_at
from .tokenizer import SPECIALS, Tokenizer

logger = logging.getLogger(__name__)

FREEZE_POLICIES = ("frozen_backbone", "full_finetune")
PARAMETER_GROUPS = ("encoder", "word_embeddings", "mlm_head")


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    max_sequence_length: int = 256
    ffn_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.max_sequence_length < 16:
            raise ValueError("max_sequence_length must be >= 16")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim


@runtime_checkable
class MLMBackbone(Protocol):
    """What the prompting and tuning code needs from a masked language model.

    Any pretrained model can be plugged in by wrapping it to provide these
    members; :class:`MiniBackbone` is the built-in implementation.
    """

    tokenizer: Tokenizer
    hidden_dim: int
    max_sequence_length: int

    def embed_ids(self, token_ids: torch.Tensor) -> torch.Tensor: ...

    def forward_hidden(self, input_embeddings: torch.Tensor,
                       attention_mask: torch.Tensor | None = None) -> torch.Tensor: ...

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor: ...

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]: ...


class SelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, key_padding):
        b, n, d = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(b, n, 3, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if key_padding is not None:
            scores = scores.masked_fill(key_padding[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(b, n, d))


class EncoderLayer(nn.Module):
    def __init__(self, dim, heads, ffn_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))

    def forward(self, x, key_padding):
        x = x + self.attn(self.norm1(x), key_padding)
        return x + self.ffn(self.norm2(x))


class MLMHead(nn.Module):
    def __init__(self, dim, vocab_size):
        super().__init__()
        self.dense = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.decoder = nn.Linear(dim, vocab_size)

    def forward(self, h):
        return self.decoder(self.norm(F.gelu(self.dense(h))))


class MiniBackbone(nn.Module):
    """Tokenizer + encoder + MLM head with an explicit freeze policy."""

    def __init__(self, tokenizer: Tokenizer, config: EncoderConfig, freeze_policy: str = "frozen_backbone"):
        super().__init__()
        if config.vocab_size != tokenizer.vocab_size:
            raise ValueError("config.vocab_size must equal the tokenizer vocabulary size")
        self.tokenizer = tokenizer
        self.config = config
        self.freeze_policy = freeze_policy
        d = config.hidden_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.word_embeddings = nn.Embedding(config.vocab_size, d)
            self.position_embeddings = nn.Embedding(config.max_sequence_length, d)
            self.embed_norm = nn.LayerNorm(d)
            self.layers = nn.ModuleList(
                EncoderLayer(d, config.num_heads, config.ffn_dim) for _ in range(config.num_layers))
            self.final_norm = nn.LayerNorm(d)
            self.mlm_head = MLMHead(d, config.vocab_size)
            self.apply(_init_weights)

    @property
    def freeze_policy(self):
        return self._freeze_policy

    @freeze_policy.setter
    def freeze_policy(self, value):
        if value not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}")
        self._freeze_policy = value

    hidden_dim = property(lambda self: self.config.hidden_dim)
    max_sequence_length = property(lambda self: self.config.max_sequence_length)
    vocab_size = property(lambda self: self.config.vocab_size)

    def encode_tokens(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)

    def embed_ids(self, token_ids) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        if ids.numel() and (int(ids.max()) >= self.vocab_size or int(ids.min()) < 0):
            raise IndexError("token id outside the vocabulary")
        return self.word_embeddings(ids)

    def forward_hidden(self, input_embeddings: torch.Tensor, attention_mask: torch.Tensor | None = None):
        """Run the encoder over already-embedded inputs.

        ``input_embeddings`` is ``(batch, length, hidden)`` or ``(length, hidden)``;
        ``attention_mask`` is 1/True for real positions, 0/False for padding.
        """
        squeeze = input_embeddings.dim() == 2
        x = input_embeddings.unsqueeze(0) if squeeze else input_embeddings
        n = x.shape[1]
        if n > self.max_sequence_length:
            raise ValueError(f"sequence length {n} exceeds max_sequence_length {self.max_sequence_length}")
        if x.shape[-1] != self.hidden_dim:
            raise ValueError(f"expected hidden size {self.hidden_dim}, got {x.shape[-1]}")
        key_padding = None
        if attention_mask is not None:
            mask = torch.as_tensor(attention_mask).bool()
            key_padding = ~(mask.unsqueeze(0) if squeeze else mask)
        positions = torch.arange(n, device=x.device)
        x = self.embed_norm(x + self.position_embeddings(positions))
        for layer in self.layers:
            x = layer(x, key_padding)
        x = self.final_norm(x)
        return x.squeeze(0) if squeeze else x

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        if hidden.shape[-1] != self.hidden_dim:
            raise ValueError(f"expected hidden size {self.hidden_dim}, got {hidden.shape[-1]}")
        return self.mlm_head(hidden)

    def forward(self, token_ids: torch.Tensor, attention_mask: torch.Tensor | None = None):
        return self.mlm_logits(self.forward_hidden(self.embed_ids(token_ids), attention_mask))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        encoder = [p for name, p in self.named_parameters()
                   if not name.startswith(("word_embeddings.", "mlm_head."))]
        return {
            "encoder": encoder,
            "word_embeddings": list(self.word_embeddings.parameters()),
            "mlm_head": list(self.mlm_head.parameters()),
        }

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _init_weights(module):
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, std=0.02)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)


def build_backbone(tokenizer: Tokenizer, hidden_dim=64, num_heads=4, num_layers=2,
                   max_sequence_length=256, seed=0, freeze_policy="frozen_backbone") -> MiniBackbone:
    config = EncoderConfig(vocab_size=tokenizer.vocab_size, hidden_dim=hidden_dim, num_heads=num_heads,
                           num_layers=num_layers, max_sequence_length=max_sequence_length, seed=seed)
    return MiniBackbone(tokenizer, config, freeze_policy=freeze_policy)


# ---------------------------------------------------------------------------
# hashing and checkpoints
# ---------------------------------------------------------------------------

def hash_tensors(tensors: Sequence[torch.Tensor]) -> str:
    h = hashlib.sha256()
    for t in tensors:
        arr = t.detach().cpu().contiguous().numpy()
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def parameter_hashes(backbone, prompt_table=None) -> dict[str, str]:
    groups = {k: hash_tensors(v) for k, v in backbone.parameter_groups().items()}
    if prompt_table is not None:
        groups["prompt_table"] = hash_tensors([prompt_table.vectors])
    return groups


def save_checkpoint(path, backbone: MiniBackbone, extra_arrays: dict | None = None,
                    metadata: dict | None = None) -> Path:
    """Write config, vocabulary and every parameter array into one ``.npz`` archive.

    Entries are written in sorted order with a fixed timestamp, so equal
    contents give byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"backbone/{k}": v.detach().cpu().numpy() for k, v in backbone.state_dict().items()}
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v.detach().cpu().numpy() if torch.is_tensor(v) else np.asarray(v)
    header = {
        "config": asdict(backbone.config),
        "vocabulary": backbone.tokenizer.vocabulary,
        "freeze_policy": backbone.freeze_policy,
        "shapes": {k: list(a.shape) for k, a in arrays.items()},
        "metadata": metadata or {},
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[MiniBackbone, dict, dict]:
    """Return ``(backbone, extra_arrays, metadata)`` from :func:`save_checkpoint` output."""
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(archive["__header__"].tobytes().decode("utf-8"))
        arrays = {k: archive[k] for k in archive.files if k != "__header__"}
    for k, shape in header["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"array {k} has shape {arrays[k].shape}, header declares {shape}")
    tokenizer = Tokenizer(header["vocabulary"])
    backbone = MiniBackbone(tokenizer, EncoderConfig(**header["config"]), header["freeze_policy"])
    state = {k[len("backbone/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items()
             if k.startswith("backbone/")}
    backbone.load_state_dict(state)
    extra = {k[len("extra/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("extra/")}
    return backbone, extra, header["metadata"]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# MLM pretraining
# ---------------------------------------------------------------------------

def _documents(items, tokenizer, max_len):
    docs = []
    for item in items:
        if isinstance(item, tuple):
            # two segments concatenated the way the prompt template lays them out
            a, b = (tokenizer.encode(t) for t in item)
            room = max_len - 1
            if len(a) + len(b) > room:
                keep_a = max(1, room * len(a) // (len(a) + len(b)))
                a, b = a[:keep_a], b[: room - keep_a]
            ids = a + b
        else:
            ids = tokenizer.encode(item)[: max_len - 1]
        if ids:
            docs.append([tokenizer.cls_id] + ids)
    return docs


def _mask_batch(docs, tokenizer, rng: np.random.Generator, mask_rate):
    n = max(len(d) for d in docs)
    ids = np.full((len(docs), n), tokenizer.pad_id, dtype=np.int64)
    labels = np.full((len(docs), n), -100, dtype=np.int64)
    for r, doc in enumerate(docs):
        doc = np.asarray(doc)
        ids[r, : len(doc)] = doc
        cand = np.arange(1, len(doc))
        chosen = cand[rng.random(len(cand)) < mask_rate]
        if chosen.size == 0:
            chosen = rng.choice(cand, size=1)
        labels[r, chosen] = doc[chosen]
        roll = rng.random(chosen.size)
        ids[r, chosen[roll < 0.8]] = tokenizer.mask_id
        rand_pos = chosen[(roll >= 0.8) & (roll < 0.9)]
        ids[r, rand_pos] = rng.integers(len(SPECIALS), tokenizer.vocab_size, size=rand_pos.size)
    attn = ids != tokenizer.pad_id
    return torch.from_numpy(ids), torch.from_numpy(attn), torch.from_numpy(labels)


def mlm_batch_loss(backbone, ids, attn, labels):
    logits = backbone(ids, attn)
    return F.cross_entropy(logits.view(-1, logits.shape[-1]), labels.view(-1), ignore_index=-100)


def pretrain_mlm(corpus, config: EncoderConfig | None = None, mask_rate: float = 0.15, steps: int = 1000,
                 seed: int = 0, *, tokenizer: Tokenizer | None = None, batch_size: int = 32,
                 peak_lr: float = 1e-3, weight_decay: float = 0.01, warmup_fraction: float = 0.05,
                 heldout_fraction: float = 0.1, backbone: MiniBackbone | None = None,
                 log_every: int = 0) -> MiniBackbone:
    """Pretrain a miniature backbone with masked-token prediction.

    ``corpus`` holds snippets (objects with ``.text``), plain strings, or
    ``(text_a, text_b)`` tuples that are concatenated into one document. A
    seeded held-out slice is scored before and after training with a fixed
    mask pattern; both values land in ``backbone.pretrain_log``.
    """
    texts = [getattr(s, "text", s) for s in corpus]
    if not texts:
        raise ValueError("pretraining corpus is empty")
    flat = [t for item in texts for t in (item if isinstance(item, tuple) else (item,))]
    if not 0 < mask_rate < 1:
        raise ValueError("mask_rate must lie in (0, 1)")
    if tokenizer is None:
        tokenizer = backbone.tokenizer if backbone is not None else Tokenizer.build(flat)
    if backbone is None:
        if config is None:
            config = EncoderConfig(vocab_size=tokenizer.vocab_size, seed=seed)
        backbone = MiniBackbone(tokenizer, config)

    rng = np.random.default_rng(seed)
    docs = _documents(texts, tokenizer, backbone.max_sequence_length)
    order = rng.permutation(len(docs))
    n_held = int(round(len(docs) * heldout_fraction)) if len(docs) > 1 else 0
    n_held = min(max(n_held, 1 if len(docs) > 1 else 0), len(docs) - 1)
    held = [docs[i] for i in order[:n_held]] or [docs[order[0]]]
    train_docs = [docs[i] for i in order[n_held:]]

    held_rng = np.random.default_rng([seed, 1])
    held_batches = [_mask_batch(held[i:i + batch_size], tokenizer, held_rng, mask_rate)
                    for i in range(0, len(held), batch_size)]

    def heldout_loss():
        backbone.eval()
        with torch.no_grad():
            total, count = 0.0, 0
            for ids, attn, labels in held_batches:
                k = int((labels != -100).sum())
                total += float(mlm_batch_loss(backbone, ids, attn, labels)) * k
                count += k
        return total / count

    log = {"initial_heldout_loss": heldout_loss(), "steps": steps, "seed": seed, "mask_rate": mask_rate}
    if steps > 0:
        params = [p for p in backbone.parameters()]
        optimizer = torch.optim.AdamW(params, lr=peak_lr, weight_decay=weight_decay)
        schedule = LRSchedule(max(1, int(steps * warmup_fraction)), steps, peak_lr)
        batch_rng = np.random.default_rng([seed, 2])
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            backbone.train()
            for step in range(steps):
                pick = batch_rng.choice(len(train_docs), size=min(batch_size, len(train_docs)), replace=False)
                ids, attn, labels = _mask_batch([train_docs[i] for i in pick], tokenizer, batch_rng, mask_rate)
                for group in optimizer.param_groups:
                    group["lr"] = lr_at(schedule, step)
                loss = mlm_batch_loss(backbone, ids, attn, labels)
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(params, 1.0)
                optimizer.step()
                if log_every and (step + 1) % log_every == 0:
                    logger.info("pretrain step %d loss %.4f", step + 1, loss.item())
        backbone.eval()
    log["final_heldout_loss"] = heldout_loss()
    backbone.pretrain_log = log
    return backbone
