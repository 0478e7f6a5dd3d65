# Core/model.py

"""
The relevance-gated QA model.

    URS path:  shared embedding -> TE_URS -> variational head -> eta_uns
    fusion:    eta = lambda_uns * eta_uns + lambda_cell * eta_cell
    QA path:   shared embedding, table region scaled by eta -> TE_QA -> TD_QA

The URS encoder starts as a copy of the QA encoder's initial weights and is
trained separately from then on.
"""
import copy
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from Core.cell_highlighter import SOURCE_QUESTION, SOURCE_STATEMENT, highlight
from Core.neural import (
    ModelDims, PositionalEncoding, TransformerDecoder, TransformerEncoder,
    count_parameters, decode_generate, embed, encode,
)
from Core.relevance import (
    ClusterState, VariationalHead, fuse_scores, overlap_baseline_score,
    relevance_forward, scale_embeddings, soft_assign,
)
from Core.synth_tasks import QAExample
from Core.table import CellCoord, EncodedInput, tokenize_linearize
from Core.vocabulary import Vocabulary
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L3

logger = get_logger()

RELEVANCE_URS = "urs"
RELEVANCE_OVERLAP = "overlap"
RELEVANCE_NONE = "none"
RELEVANCE_SOURCES = (RELEVANCE_URS, RELEVANCE_OVERLAP, RELEVANCE_NONE)


# ─── Example preparation ───

@dataclass
class PreparedExample:
    """Everything the model needs from one QAExample; arrays cover the table region."""
    example: QAExample
    encoded: EncodedInput
    eta_cell: np.ndarray
    overlap: np.ndarray
    gold_mask: np.ndarray
    cell_mask: np.ndarray
    answer_ids: List[int]
    highlighted: List[str] = field(default_factory=list)

    @property
    def input_ids(self) -> List[int]:
        return self.encoded.input_ids

    @property
    def question_length(self) -> int:
        return self.encoded.question_length


def prepare_example(example: QAExample, vocab: Vocabulary, highlight_source: str = SOURCE_STATEMENT,
                    statement_as_input: bool = False) -> PreparedExample:
    question = example.question
    if statement_as_input:
        question = f"{question} {example.parsing_statement}"
    encoded = tokenize_linearize(example.table, question, vocab)
    lin = encoded.linearized

    highlight_text = example.question if highlight_source == SOURCE_QUESTION else example.parsing_statement
    result = highlight(example.table, lin, highlight_text, highlight_source)

    tags = lin.token_cell_map
    cell_mask = np.array([isinstance(t, CellCoord) and t.row >= 1 for t in tags])
    gold_mask = np.array([isinstance(t, CellCoord) and t in example.gold_cells for t in tags])
    return PreparedExample(
        example=example,
        encoded=encoded,
        eta_cell=result.eta_cell,
        overlap=overlap_baseline_score(encoded.question_tokens, lin),
        gold_mask=gold_mask,
        cell_mask=cell_mask,
        answer_ids=vocab.encode(example.answer),
        highlighted=result.highlighted_strings,
    )


@dataclass
class Batch:
    input_ids: torch.Tensor        # (B, L)
    pad_mask: torch.Tensor         # (B, L) True at padding
    table_mask: torch.Tensor       # (B, L) True on table tokens
    eta_cell: torch.Tensor         # (B, L)
    overlap: torch.Tensor          # (B, L)
    decoder_input: torch.Tensor    # (B, T) <boa> a_1 .. a_n
    decoder_target: torch.Tensor   # (B, T) a_1 .. a_n <eoa>
    items: List[PreparedExample]

    @property
    def size(self) -> int:
        return self.input_ids.shape[0]


def collate(items: Sequence[PreparedExample], vocab: Vocabulary, dtype=torch.float32,
            device: str = "cpu") -> Batch:
    batch = len(items)
    length = max(len(it.input_ids) for it in items)
    answer_len = max(len(it.answer_ids) for it in items) + 1

    input_ids = torch.full((batch, length), vocab.pad_id, dtype=torch.long)
    table_mask = torch.zeros(batch, length, dtype=torch.bool)
    eta_cell = torch.zeros(batch, length, dtype=dtype)
    overlap = torch.zeros(batch, length, dtype=dtype)
    dec_in = torch.full((batch, answer_len), vocab.pad_id, dtype=torch.long)
    dec_out = torch.full((batch, answer_len), vocab.pad_id, dtype=torch.long)

    for b, it in enumerate(items):
        n = len(it.input_ids)
        start, end = it.encoded.table_span
        input_ids[b, :n] = torch.tensor(it.input_ids)
        table_mask[b, start:end] = True
        eta_cell[b, start:end] = torch.as_tensor(it.eta_cell, dtype=dtype)
        overlap[b, start:end] = torch.as_tensor(it.overlap, dtype=dtype)
        answer = it.answer_ids
        dec_in[b, :len(answer) + 1] = torch.tensor([vocab.boa_id] + answer)
        dec_out[b, :len(answer) + 1] = torch.tensor(answer + [vocab.eoa_id])

    return Batch(
        input_ids=input_ids.to(device),
        pad_mask=(input_ids == vocab.pad_id).to(device),
        table_mask=table_mask.to(device),
        eta_cell=eta_cell.to(device),
        overlap=overlap.to(device),
        decoder_input=dec_in.to(device),
        decoder_target=dec_out.to(device),
        items=list(items),
    )


# ─── Model ───

@dataclass
class ForwardOutput:
    logits: torch.Tensor
    eta_uns: torch.Tensor
    z: torch.Tensor
    eta: torch.Tensor
    h_urs: torch.Tensor
    q: torch.Tensor                # (N_table_tokens, 2) soft assignments
    memory: torch.Tensor


class RelevanceGatedQA(nn.Module):

    def __init__(self, dims: ModelDims, pad_id: int):
        super().__init__()
        self.dims = dims
        self.pad_id = pad_id
        self.embedding = nn.Embedding(dims.vocab_size, dims.d_model, padding_idx=pad_id)
        self.positional = PositionalEncoding(dims.d_model, dims.max_len, enabled=dims.use_positions)
        self.qa_encoder = TransformerEncoder(dims.d_model, dims.n_heads, dims.n_enc_layers, dims.d_ff)
        self.urs_encoder = copy.deepcopy(self.qa_encoder)
        self.head = VariationalHead(dims.d_model)
        self.clusters = ClusterState(dims.d_model)
        self.decoder = TransformerDecoder(self.embedding, self.positional, dims.d_model,
                                          dims.n_heads, dims.n_dec_layers, dims.d_ff)
        self.noise_generator = torch.Generator()
        logger.debug_at_level(DEBUG_L1, "Model", f"Built model with {count_parameters(self)} parameters "
                                                 f"(d={dims.d_model}, heads={dims.n_heads}, "
                                                 f"layers={dims.n_enc_layers}/{dims.n_dec_layers})")

    # ─── Parameter groups ───
    def urs_parameters(self):
        for module in (self.urs_encoder, self.head, self.clusters):
            yield from module.parameters()

    def qa_parameters(self):
        urs = {id(p) for p in self.urs_parameters()}
        for p in self.parameters():
            if id(p) not in urs:
                yield p

    def set_urs_trainable(self, trainable: bool):
        for p in self.urs_parameters():
            p.requires_grad_(trainable)

    def seed_noise(self, seed: int):
        self.noise_generator.manual_seed(seed)

    # ─── Forward ───
    def relevance(self, batch: Batch, lambda_uns: float, lambda_cell: float,
                  source: str = RELEVANCE_URS, noise: Optional[torch.Tensor] = None):
        """Returns (eta_uns, z, eta, h_urs) over the full (B, L) grid."""
        e = embed(batch.input_ids, self.embedding, self.positional)
        h = encode(e, self.urs_encoder, batch.pad_mask)
        eta_uns, z = relevance_forward(h, self.head, batch.table_mask, self.training, noise, self.noise_generator)
        if source == RELEVANCE_URS:
            eta = fuse_scores(eta_uns, batch.eta_cell, lambda_uns, lambda_cell)
        elif source == RELEVANCE_OVERLAP:
            eta = fuse_scores(batch.overlap, batch.eta_cell, lambda_uns, lambda_cell)
        elif source == RELEVANCE_NONE:
            eta = torch.ones_like(eta_uns)
        else:
            raise ValueError(f"Unknown relevance source {source!r}")
        return eta_uns, z, eta, h

    def forward(self, batch: Batch, lambda_uns: float = 0.7, lambda_cell: float = 0.3,
                source: str = RELEVANCE_URS, noise: Optional[torch.Tensor] = None) -> ForwardOutput:
        eta_uns, z, eta, h = self.relevance(batch, lambda_uns, lambda_cell, source, noise)
        e = embed(batch.input_ids, self.embedding, self.positional)
        e_scaled = scale_embeddings(e, eta, batch.table_mask)
        memory = encode(e_scaled, self.qa_encoder, batch.pad_mask)
        logits = self.decoder(batch.decoder_input, memory, batch.pad_mask)
        q = soft_assign(h[batch.table_mask], self.clusters)
        logger.debug_at_level(DEBUG_L3, "Model", f"Forward: batch={batch.size}, len={batch.input_ids.shape[1]}")
        return ForwardOutput(logits, eta_uns, z, eta, h, q, memory)

    @torch.no_grad()
    def generate(self, batch: Batch, max_len: int, bos_id: int, eos_id: int, beam_size: int = 1,
                 lambda_uns: float = 0.7, lambda_cell: float = 0.3, source: str = RELEVANCE_URS):
        """Decode answers in eval mode (s = 0); returns (answer id lists, eta_uns, eta, h_urs)."""
        was_training = self.training
        self.eval()
        try:
            eta_uns, _, eta, h = self.relevance(batch, lambda_uns, lambda_cell, source)
            e = scale_embeddings(embed(batch.input_ids, self.embedding, self.positional), eta, batch.table_mask)
            memory = encode(e, self.qa_encoder, batch.pad_mask)
            answers = decode_generate(memory, self.decoder, max_len, bos_id, eos_id, batch.pad_mask, beam_size)
        finally:
            self.train(was_training)
        return answers, eta_uns, eta, h
