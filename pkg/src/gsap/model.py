"""The full per-choice scoring pipeline.

For each answer choice the model grounds entities, builds that choice's
evidence graph, scores node relevance, prunes, encodes the graph, turns
the question-to-choice triplets into prompts, runs the frozen text
encoder under prompt injection, refreshes the graph with prompt output
states, and fuses everything into one pre-activation score.  The choice
scores form the logit vector; the observable output is their ReLU and
the argmax prediction (lowest index on ties).

Static per-(instance, choice) work (extraction, graph construction,
text features, token ids) is cached: the text encoder is frozen, so phi
features never move during training, while relevance, pruning and
prompts are recomputed on every forward because they depend on live
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .config import ExperimentConfig
from .data import QAInstance
from .encoder import (
    EncoderOutput,
    FrozenTransformerEncoder,
    WordTokenizer,
    assemble_text,
    extract_segment_embeddings,
    extract_triplet_outputs,
    verbalize,
)
from .fusion import FusionHead, MeanPoolHead, refreshed_features
from .gnn import RelationalGraphEncoder
from .graph import (
    EvidenceGraph,
    RelevanceScorer,
    build_graph,
    build_lexicon,
    extract_topic_entities,
    prune,
    prune_indices,
    select_qc_triplets,
)
from .knowledge import EvidenceCorpus, ParaphraseDict, TripleStore, retrieve_evidence


@dataclass
class PreparedChoice:
    """Static artifacts for one (instance, choice) pair."""

    graph: EvidenceGraph
    node_phi: torch.Tensor          # (N, H), frozen text features per node
    question_phi: torch.Tensor      # (H,)
    token_ids: list[int]
    roles: list
    q_entities: list[str]
    c_entities: list[str]
    evidence: list


class GSAPModel(nn.Module):
    """Graph-structure-aware prompting over a frozen text encoder."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        store: TripleStore,
        para: ParaphraseDict,
        corpus: EvidenceCorpus,
        tokenizer: WordTokenizer,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        cfg.flags.validate()
        self.cfg = cfg
        self.flags = cfg.flags
        self.tokenizer = tokenizer
        self.dtype_ = dtype

        # knowledge sources, possibly masked; the grounding lexicon keeps
        # every surface so entity extraction stays stable across maskings
        self.lexicon = build_lexicon(store, para)
        self.store = store if "triples" in self.flags.kg_sources else TripleStore()
        self.para = (
            para
            if "paraphrases" in self.flags.kg_sources
            and not self.flags.no_paraphrase_nodes
            else None
        )
        self.text_para = (
            para if "paraphrases" in self.flags.kg_sources else ParaphraseDict()
        )
        self.corpus = (
            corpus if "corpus" in self.flags.kg_sources else EvidenceCorpus()
        )

        enc_cfg = cfg.encoder
        if enc_cfg.vocab_size <= 0:
            enc_cfg.vocab_size = len(tokenizer)
        self.encoder = FrozenTransformerEncoder(enc_cfg, dtype=dtype)
        if enc_cfg.checkpoint:
            from .checkpoint import load_manifest

            self.encoder.load_state_dict(load_manifest(enc_cfg.checkpoint))
            self.encoder.freeze()
            self.encoder.take_snapshot()

        h = enc_cfg.hidden_size
        d = cfg.graph.dim
        self.scorer = RelevanceScorer(h, dtype=dtype)
        self.node_proj = nn.Linear(h, d).to(dtype)
        self.gnn = RelationalGraphEncoder(
            cfg.graph, self.store.relation_vocab, dtype=dtype
        )
        self.gnn_refresh = (
            RelationalGraphEncoder(cfg.graph, self.store.relation_vocab, dtype=dtype)
            if cfg.fusion.own_gnn
            else None
        )

        self.prompt_len = cfg.prompt.length
        self.prompt_layers = cfg.prompt.resolved_layers(enc_cfg.num_layers)
        if self.flags.no_prompt or self.flags.no_sapl:
            self.prompt_gen = None
            self.prompt_len = 0
            self.prompt_layers = 0
        else:
            from .prompts import PromptGenerator

            self.prompt_gen = PromptGenerator(
                graph_dim=d,
                prompt_dim=h,
                hidden_dim=cfg.prompt.hidden_size,
                relation_vocab=self.store.relation_vocab,
                length=self.prompt_len,
                num_layers=self.prompt_layers,
                include_entities=not self.flags.no_prompt_entity,
                include_relation=not self.flags.no_prompt_relation,
                dtype=dtype,
            )

        if self.flags.no_hmpr:
            self.fusion = None
            self.simple_head = MeanPoolHead(h, dtype=dtype)
        else:
            self.fusion = FusionHead(h, d, cfg.fusion.dim, dtype=dtype)
            self.simple_head = None

        self._phi_cache: dict[str, torch.Tensor] = {}
        self._extract_cache: dict[str, tuple] = {}
        self._prep_cache: dict[tuple[str, int], PreparedChoice] = {}

    # ---------------------------------------------------------- features

    def phi(self, text: str) -> torch.Tensor:
        """Frozen mean-pooled text feature; cached, never differentiated."""
        hit = self._phi_cache.get(text)
        if hit is None:
            with torch.no_grad():
                hit = self.encoder.mean_pool_text(text, self.tokenizer)
            self._phi_cache[text] = hit
        return hit

    def _extract(self, inst: QAInstance):
        hit = self._extract_cache.get(inst.id)
        if hit is None:
            v_q, v_c = extract_topic_entities(
                inst.question, list(inst.choices), self.lexicon
            )
            per_choice = [
                sorted(e for e, ci in v_c if ci == i)
                for i in range(len(inst.choices))
            ]
            hit = (sorted(v_q), per_choice)
            self._extract_cache[inst.id] = hit
        return hit

    def prepare(self, inst: QAInstance, choice: int) -> PreparedChoice:
        key = (inst.id, choice)
        hit = self._prep_cache.get(key)
        if hit is not None:
            return hit
        v_q, per_choice = self._extract(inst)
        v_c = per_choice[choice]
        graph = build_graph(
            set(v_q),
            set(v_c),
            self.store,
            self.para,
            self.cfg.graph,
            question=inst.question,
            lexicon=self.lexicon,
        )
        node_phi = torch.stack([self.phi(n.surface) for n in graph.nodes])
        evidence: list = retrieve_evidence(
            self.corpus, inst.question, self.cfg.graph.top_k_evidence
        )
        token_ids, roles = self._assemble(inst, choice, v_q, v_c, evidence)
        hit = PreparedChoice(
            graph=graph,
            node_phi=node_phi,
            question_phi=self.phi(inst.question),
            token_ids=token_ids,
            roles=roles,
            q_entities=v_q,
            c_entities=v_c,
            evidence=evidence,
        )
        self._prep_cache[key] = hit
        return hit

    def _assemble(self, inst, choice, v_q, v_c, evidence):
        return assemble_text(
            inst,
            choice,
            self.text_para,
            evidence,
            tokenizer=self.tokenizer,
            question_entities=v_q,
            choice_entities=v_c,
            include_paraphrase_texts=not self.flags.no_paraphrase_texts,
            max_tokens=self.cfg.encoder.max_len - self.prompt_len,
        )

    # ----------------------------------------------------------- forward

    def score_choice(self, inst: QAInstance, choice: int) -> torch.Tensor:
        """Pre-activation score for one choice."""
        prep = self.prepare(inst, choice)
        graph = prep.graph
        n_all = len(graph.nodes)

        if self.flags.no_relevance_score:
            lam = torch.full((n_all,), 0.5, dtype=self.dtype_)
            for node in graph.nodes:
                node.relevance = 0.5
            keep = list(range(n_all))
        else:
            q_feat = prep.question_phi
            feats = torch.cat(
                [prep.node_phi, q_feat.expand(n_all, -1)], dim=-1
            )
            lam = self.scorer(feats)
            for node, value in zip(graph.nodes, lam.detach().tolist()):
                node.relevance = value
            keep = prune_indices(graph, self.cfg.graph.prune_threshold)

        if len(keep) < n_all:
            sub = prune(graph, self.cfg.graph.prune_threshold)
            keep_t = torch.tensor(keep, dtype=torch.long)
            lam_sub = lam[keep_t]
            phi_sub = prep.node_phi[keep_t]
        else:
            sub = graph
            lam_sub = lam
            phi_sub = prep.node_phi

        h0 = self.node_proj(phi_sub)
        channels = self.gnn.channels(sub)
        states, g_vec, _ = self.gnn(
            channels, h0, lam_sub,
            uniform_attention=self.flags.no_graph_attention,
        )

        triplets = select_qc_triplets(sub)
        token_ids, roles = prep.token_ids, prep.roles
        if self.cfg.verbalize_triplets and triplets:
            extra = [verbalize(t.as_tuple()) for t in triplets]
            token_ids, roles = self._assemble(
                inst, choice, prep.q_entities, prep.c_entities,
                list(prep.evidence) + extra,
            )
        if self.flags.no_sapl:
            out = EncoderOutput(
                self.encoder.bag_of_embeddings(token_ids), {}, list(roles)
            )
            prompt_set = None
        else:
            if self.prompt_gen is None:
                prompt_set = None
            elif self.flags.random_prompt:
                prompt_set = self.prompt_gen.random_set()
            else:
                prompt_set = self.prompt_gen.generate(triplets, states, g_vec)
            out = self.encoder.encode(token_ids, prompt_set, roles)
        t_q, t_c, t_k = extract_segment_embeddings(out)

        if self.flags.no_hmpr:
            return self.simple_head(t_q, t_c, t_k)

        trip_outs = extract_triplet_outputs(out)
        kept = prompt_set.triplets if prompt_set is not None else []
        h0_r = refreshed_features(h0, kept, trip_outs, self.fusion.back_proj)
        gnn2 = self.gnn_refresh if self.gnn_refresh is not None else self.gnn
        _, g2, _ = gnn2(
            channels, h0_r, lam_sub,
            uniform_attention=self.flags.no_graph_attention,
        )
        score, _ = self.fusion.fuse(
            t_q, t_c, t_k, g2,
            no_bigru=self.flags.no_bigru,
            no_gates=self.flags.no_knowledge_attention,
        )
        return score

    def forward(self, inst: QAInstance) -> torch.Tensor:
        """Pre-activation score per choice, shape (b,)."""
        return torch.stack(
            [self.score_choice(inst, i) for i in range(len(inst.choices))]
        )

    def predict(self, inst: QAInstance) -> tuple[torch.Tensor, int]:
        """(ReLU scores, predicted index); ties go to the lowest index."""
        o = torch.relu(self.forward(inst))
        return o, int(torch.argmax(o).item())

    # ------------------------------------------------------- inspection

    def scored_graph(self, inst: QAInstance, choice: int) -> EvidenceGraph:
        """The pruned, relevance-annotated graph for a dump."""
        with torch.no_grad():
            prep = self.prepare(inst, choice)
            graph = prep.graph
            if not self.flags.no_relevance_score:
                n_all = len(graph.nodes)
                feats = torch.cat(
                    [prep.node_phi, prep.question_phi.expand(n_all, -1)], dim=-1
                )
                lam = self.scorer(feats)
                for node, value in zip(graph.nodes, lam.tolist()):
                    node.relevance = value
                return prune(graph, self.cfg.graph.prune_threshold)
            return graph

    def text_side_parameters(self) -> list[nn.Parameter]:
        """Prompt, mapping and projection parameters (the slow group)."""
        mods: list[nn.Module] = [self.scorer, self.node_proj]
        if self.prompt_gen is not None:
            mods.append(self.prompt_gen)
        return [p for m in mods for p in m.parameters() if p.requires_grad]

    def graph_side_parameters(self) -> list[nn.Parameter]:
        """Graph encoder and fusion head (the fast group)."""
        mods: list[nn.Module] = [self.gnn]
        if self.gnn_refresh is not None:
            mods.append(self.gnn_refresh)
        if self.fusion is not None:
            mods.append(self.fusion)
        if self.simple_head is not None:
            mods.append(self.simple_head)
        return [p for m in mods for p in m.parameters() if p.requires_grad]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return self.text_side_parameters() + self.graph_side_parameters()

    def trainable_state(self) -> dict[str, torch.Tensor]:
        """Trainable parameters plus normalisation running statistics.

        The running stats pair with the weights they were accumulated
        under; restoring one without the other yields a model no
        evaluation ever measured.
        """
        state = {
            name: p.detach().clone()
            for name, p in self.named_parameters()
            if p.requires_grad
        }
        for name, buf in self.named_buffers():
            state[name] = buf.detach().clone()
        return state

    def load_trainable_state(self, state: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name in state:
                    p.copy_(state[name])
            for name, buf in self.named_buffers():
                if name in state:
                    buf.copy_(state[name])
