"""Word-level tokenizer and the frozen transformer text encoder.

The encoder is a small bidirectional transformer whose weights are
randomly initialised from a seed and then frozen; only prompt vectors
injected into its input stream are trainable.  Injection overwrites the
first k positions of the input of each prompting layer j <= p, so layer j
sees its own prompt matrix while deeper layers process the stream
untouched.  Prompt positions carry no positional embedding and text
positions are numbered from zero either way, which keeps the p=0 path
identical to a plain forward.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import torch
from torch import nn

from .config import EncoderConfig
from .prompts import PromptSet

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)

# text segment tags
SEG_QUESTION = "question"
SEG_Q_PARA = "q-paraphrase"
SEG_CHOICE = "choice"
SEG_C_PARA = "c-paraphrase"
SEG_EVIDENCE = "evidence"
SEG_SPECIAL = "special"


class SequenceOverflowError(ValueError):
    """Prompts plus text exceed the encoder's position budget."""


class WordTokenizer:
    """Lower-cased word tokenizer over a fixed vocabulary file."""

    def __init__(self, vocab: list[str]):
        if list(vocab[:4]) != list(SPECIAL_TOKENS):
            vocab = list(SPECIAL_TOKENS) + [
                t for t in vocab if t not in SPECIAL_TOKENS
            ]
        self.vocab = list(vocab)
        self.ids = {tok: i for i, tok in enumerate(self.vocab)}

    def __len__(self) -> int:
        return len(self.vocab)

    @staticmethod
    def words(text: str) -> list[str]:
        return re.findall(r"[a-z0-9]+", text.casefold())

    @classmethod
    def from_texts(cls, texts) -> "WordTokenizer":
        seen: set[str] = set()
        for text in texts:
            seen.update(cls.words(text))
        return cls(list(SPECIAL_TOKENS) + sorted(seen))

    def encode_words(self, words: list[str]) -> list[int]:
        unk = self.ids[UNK]
        return [self.ids.get(w, unk) for w in words]

    def encode(self, text: str) -> list[int]:
        return self.encode_words(self.words(text))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.vocab:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "WordTokenizer":
        with open(path, encoding="utf-8") as fh:
            vocab = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(vocab)


@dataclass(frozen=True)
class PositionRole:
    """What one sequence position holds: a prompt slot or a text token."""

    kind: str                      # "prompt" | "text"
    segment: str | None = None     # text only
    token: str | None = None       # text only
    slot: int | None = None        # prompt only


def verbalize(item) -> str:
    """Evidence item to text: strings pass through, triples become
    'head relation tail'."""
    if isinstance(item, str):
        return item
    head, rel, tail = item
    return f"{head} {rel} {tail}"


def assemble_segments(
    question: str,
    choice: str,
    q_paras: list[str],
    c_paras: list[str],
    evidence: list,
    tokenizer: WordTokenizer,
    max_tokens: int = 256,
) -> tuple[list[int], list[PositionRole]]:
    """Token ids plus a total role map, in the fixed segment order
    [CLS] question q-paraphrase [SEP] choice c-paraphrase [SEP] evidence,
    truncated from the tail to max_tokens."""
    ids: list[int] = []
    roles: list[PositionRole] = []

    def put(word: str, segment: str) -> None:
        ids.append(tokenizer.ids.get(word, tokenizer.ids[UNK]))
        roles.append(PositionRole(kind="text", segment=segment, token=word))

    def put_text(text: str, segment: str) -> None:
        for w in tokenizer.words(text):
            put(w, segment)

    ids.append(tokenizer.ids[CLS])
    roles.append(PositionRole(kind="text", segment=SEG_SPECIAL, token=CLS))
    put_text(question, SEG_QUESTION)
    for p in q_paras:
        put_text(p, SEG_Q_PARA)
    ids.append(tokenizer.ids[SEP])
    roles.append(PositionRole(kind="text", segment=SEG_SPECIAL, token=SEP))
    put_text(choice, SEG_CHOICE)
    for p in c_paras:
        put_text(p, SEG_C_PARA)
    ids.append(tokenizer.ids[SEP])
    roles.append(PositionRole(kind="text", segment=SEG_SPECIAL, token=SEP))
    for item in evidence:
        put_text(verbalize(item), SEG_EVIDENCE)

    return ids[:max_tokens], roles[:max_tokens]


def assemble_text(
    instance,
    choice_index: int,
    paraphrases,
    evidence: list,
    *,
    tokenizer: WordTokenizer,
    question_entities=(),
    choice_entities=(),
    include_paraphrase_texts: bool = True,
    max_tokens: int = 256,
) -> tuple[list[int], list[PositionRole]]:
    """Instance-level assembly: paraphrase texts are looked up for the
    grounded entities, in sorted entity order for determinism."""
    q_paras: list[str] = []
    c_paras: list[str] = []
    if include_paraphrase_texts and paraphrases is not None:
        for ent in sorted(set(question_entities)):
            defn = paraphrases.get(ent)
            if defn:
                q_paras.append(defn)
        for ent in sorted(set(choice_entities)):
            defn = paraphrases.get(ent)
            if defn:
                c_paras.append(defn)
    return assemble_segments(
        instance.question,
        instance.choices[choice_index],
        q_paras,
        c_paras,
        evidence,
        tokenizer,
        max_tokens=max_tokens,
    )


class TransformerLayer(nn.Module):
    """Post-norm block: self-attention then a ReLU MLP, residual both."""

    def __init__(self, hidden: int, heads: int, ff: int):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.wq = nn.Linear(hidden, hidden)
        self.wk = nn.Linear(hidden, hidden)
        self.wv = nn.Linear(hidden, hidden)
        self.wo = nn.Linear(hidden, hidden)
        self.ln1 = nn.LayerNorm(hidden)
        self.ff1 = nn.Linear(hidden, ff)
        self.ff2 = nn.Linear(ff, hidden)
        self.ln2 = nn.LayerNorm(hidden)

    def attend(self, x: torch.Tensor) -> torch.Tensor:
        s = x.shape[0]
        q = self.wq(x).view(s, self.heads, self.head_dim)
        k = self.wk(x).view(s, self.heads, self.head_dim)
        v = self.wv(x).view(s, self.heads, self.head_dim)
        scores = torch.einsum("qhd,khd->hqk", q, k) / self.head_dim**0.5
        alpha = torch.softmax(scores, dim=-1)
        ctx = torch.einsum("hqk,khd->qhd", alpha, v).reshape(s, -1)
        return self.wo(ctx)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.ln1(x + self.attend(x))
        x = self.ln2(x + self.ff2(torch.relu(self.ff1(x))))
        return x


@dataclass
class EncoderOutput:
    states: torch.Tensor                       # (k + T, hidden) final layer
    captures: dict[int, torch.Tensor]          # layer j -> (k, hidden)
    roles: list[PositionRole]                  # total over all positions
    prompt_set: PromptSet | None = None
    prompt_len: int = 0


class FrozenTransformerEncoder(nn.Module):
    """Seed-initialised transformer whose weights never train."""

    def __init__(self, cfg: EncoderConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ValueError("vocab_size must be set before building the encoder")
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.hidden_size)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.hidden_size)
        self.layers = nn.ModuleList(
            TransformerLayer(cfg.hidden_size, cfg.num_heads, cfg.ff_size)
            for _ in range(cfg.num_layers)
        )
        self.to(dtype)
        self._init_weights(cfg.init_seed)
        self.freeze()
        self._snapshot = [p.detach().clone() for p in self.parameters()]

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if "ln" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    values = torch.randn(p.shape, generator=gen, dtype=torch.float64)
                    p.copy_((values * 0.02).to(p.dtype))

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)

    def take_snapshot(self) -> None:
        """Refresh the reference copy used by weights_unchanged()."""
        self._snapshot = [p.detach().clone() for p in self.parameters()]

    def weights_unchanged(self) -> bool:
        """Bit-identical comparison against the construction snapshot."""
        return all(
            torch.equal(p.detach(), s)
            for p, s in zip(self.parameters(), self._snapshot)
        )

    def embed(self, ids: list[int] | torch.Tensor) -> torch.Tensor:
        ids_t = torch.as_tensor(ids, dtype=torch.long)
        pos = torch.arange(ids_t.shape[0])
        return self.tok_emb(ids_t) + self.pos_emb(pos)

    def bag_of_embeddings(self, ids: list[int] | torch.Tensor) -> torch.Tensor:
        """Token-table rows only, no positions and no layers; the encoder
        bypass used when the whole prompting stage is ablated."""
        return self.tok_emb(torch.as_tensor(ids, dtype=torch.long))

    def plain_forward(self, ids: list[int] | torch.Tensor) -> torch.Tensor:
        """Prompt-free forward; also the p=0 path of encode()."""
        if len(ids) > self.cfg.max_len:
            raise SequenceOverflowError(
                f"SEQUENCE_OVERFLOW: {len(ids)} tokens > {self.cfg.max_len}"
            )
        x = self.embed(ids)
        for layer in self.layers:
            x = layer(x)
        return x

    def encode(
        self,
        ids: list[int] | torch.Tensor,
        prompt_set: PromptSet | None,
        roles: list[PositionRole] | None = None,
    ) -> EncoderOutput:
        """Forward with layerwise prompt injection.

        Prompt states of layer j are captured from layer j's output before
        the layer j+1 overwrite; the last prompting layer's slots are read
        from the final layer instead, after the plain tail layers ran.
        """
        roles = list(roles) if roles is not None else []
        if prompt_set is None or prompt_set.is_empty():
            states = self.plain_forward(ids)
            return EncoderOutput(states, {}, roles, prompt_set, 0)

        p, k = prompt_set.num_layers, prompt_set.length
        if p > len(self.layers):
            raise ValueError("more prompt layers than encoder layers")
        if k + len(ids) > self.cfg.max_len:
            raise SequenceOverflowError(
                f"SEQUENCE_OVERFLOW: {k} prompt slots + {len(ids)} tokens "
                f"> {self.cfg.max_len}"
            )
        prompt_roles = [PositionRole(kind="prompt", slot=s) for s in range(k)]
        roles = prompt_roles + roles

        captures: dict[int, torch.Tensor] = {}
        x = torch.cat([prompt_set.layers[0], self.embed(ids)], dim=0)
        for j, layer in enumerate(self.layers, start=1):
            if 2 <= j <= p:
                x = torch.cat([prompt_set.layers[j - 1], x[k:]], dim=0)
            x = layer(x)
            if j < p:
                captures[j] = x[:k]
        captures[p] = x[:k]
        return EncoderOutput(x, captures, roles, prompt_set, k)

    def mean_pool_text(self, text: str, tokenizer: WordTokenizer) -> torch.Tensor:
        """phi: mean of final-layer states over [CLS] words [SEP], no prompts."""
        ids = (
            [tokenizer.ids[CLS]]
            + tokenizer.encode(text)[: self.cfg.max_len - 2]
            + [tokenizer.ids[SEP]]
        )
        return self.plain_forward(ids).mean(dim=0)


def extract_triplet_outputs(output: EncoderOutput) -> dict[int, dict[str, torch.Tensor]]:
    """Per-triplet prompt output states, keyed by triplet rank then
    component tag; null slots are skipped."""
    result: dict[int, dict[str, torch.Tensor]] = {}
    ps = output.prompt_set
    if ps is None or ps.is_empty():
        return result
    for layer_idx, layer_roles in enumerate(ps.slot_roles, start=1):
        if layer_idx not in output.captures:
            continue
        states = output.captures[layer_idx]
        for slot, role in enumerate(layer_roles):
            if role is None:
                continue
            rank, comp = role
            result.setdefault(rank, {})[comp] = states[slot]
    return result


def _normalized_mean(states: torch.Tensor, idx: list[int]) -> torch.Tensor:
    if not idx:
        return torch.zeros(states.shape[1], dtype=states.dtype)
    m = states[idx].mean(dim=0)
    norm = torch.linalg.vector_norm(m)
    if norm.item() == 0.0:
        return m
    return m / norm


def extract_segment_embeddings(
    output: EncoderOutput,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Mean-pooled, L2-normalised embeddings for the question group
    (question + q-paraphrase), the choice group (choice + c-paraphrase)
    and the evidence segment.  Empty segments give zero vectors."""
    q_idx, c_idx, e_idx = [], [], []
    for i, role in enumerate(output.roles):
        if role.kind != "text":
            continue
        if role.segment in (SEG_QUESTION, SEG_Q_PARA):
            q_idx.append(i)
        elif role.segment in (SEG_CHOICE, SEG_C_PARA):
            c_idx.append(i)
        elif role.segment == SEG_EVIDENCE:
            e_idx.append(i)
    s = output.states
    return (
        _normalized_mean(s, q_idx),
        _normalized_mean(s, c_idx),
        _normalized_mean(s, e_idx),
    )
