# Managers/training_manager.py

"""
End-to-end training of the relevance scorer and the QA model.

    L = L_CE + lambda_clu * L_clu + lambda_sep * L_sep + lambda_sparse * L_sparse

Both parts are always co-trained in one optimizer; the only coupling from the
QA loss back into the scorer is the embedding scaling by eta.
"""
import math
import random
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from Core.errors import NonFiniteLossError, TableQAError, TrainingDivergedError, VocabularyMismatchError
from Core.event_manager import EventManager, TRAIN_COMPLETE, TRAIN_EPOCH, TRAIN_STEP
from Core.model import (
    RELEVANCE_URS, Batch, ForwardOutput, PreparedExample, RelevanceGatedQA, collate, prepare_example,
)
from Core.neural import ModelDims, count_parameters, cross_entropy_loss
from Core.relevance import clustering_loss, separation_loss, sparsification_loss, target_distribution
from Core.synth_tasks import QAExample
from Core.vocabulary import Vocabulary
from Utils.config_utils import TrainConfig
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2, DEBUG_L3
from Utils.save_utils import load_checkpoint_npz, save_checkpoint_npz

logger = get_logger()

CHECKPOINT_SCHEMA = "tableqa-checkpoint"
CHECKPOINT_VERSION = 1


def set_seed(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def torch_dtype(cfg: TrainConfig):
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def build_model(cfg: TrainConfig, vocab: Vocabulary) -> RelevanceGatedQA:
    dims = ModelDims(
        vocab_size=len(vocab),
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_enc_layers=cfg.n_enc_layers,
        n_dec_layers=cfg.n_dec_layers,
        d_ff=cfg.d_ff or None,
        use_positions=cfg.use_positions,
    )
    model = RelevanceGatedQA(dims, vocab.pad_id).to(torch_dtype(cfg))
    model.seed_noise(cfg.seed)
    return model


def prepare_examples(examples: Sequence[QAExample], vocab: Vocabulary, cfg: TrainConfig) -> List[PreparedExample]:
    return [prepare_example(ex, vocab, cfg.highlight_source, cfg.statement_as_input) for ex in examples]


# ─── Loss ───

@dataclass
class LossBreakdown:
    total: torch.Tensor
    ce: torch.Tensor
    clu: torch.Tensor
    sep: torch.Tensor
    sparse: torch.Tensor
    output: Optional[ForwardOutput] = None

    def components(self) -> Dict[str, float]:
        return {"total": float(self.total), "ce": float(self.ce), "clu": float(self.clu),
                "sep": float(self.sep), "sparse": float(self.sparse)}


def total_loss(model: RelevanceGatedQA, batch: Batch, cfg: TrainConfig,
               noise: Optional[torch.Tensor] = None, check_finite: bool = True,
               targets: Optional[torch.Tensor] = None) -> LossBreakdown:
    """
    One forward pass; every component is computed from it. `targets` fixes the
    clustering targets Z instead of deriving them from this pass. Auxiliary
    components stay zero unless cfg.uses_auxiliary_losses. Raises
    NonFiniteLossError.
    """
    out = model(batch, cfg.lambda_uns, cfg.lambda_cell, cfg.relevance_source, noise)
    ce = cross_entropy_loss(out.logits, batch.decoder_target, model.pad_id)
    zero = torch.zeros((), dtype=ce.dtype, device=ce.device)
    clu = sep = sparse = zero
    if cfg.uses_auxiliary_losses:
        z_target = target_distribution(out.q) if targets is None else targets
        clu = clustering_loss(out.q, z_target, batch.size)
        sep = separation_loss(model.clusters)
        sparse = sparsification_loss(out.z, batch.table_mask)
    total = ce + cfg.lambda_clu * clu + cfg.lambda_sep * sep + cfg.lambda_sparse * sparse
    losses = LossBreakdown(total, ce, clu, sep, sparse, out)
    if check_finite:
        values = losses.components()
        bad = [name for name, value in values.items() if not math.isfinite(value)]
        if bad:
            raise NonFiniteLossError(f"Non-finite loss components {bad}: {values}", values)
    return losses


# ─── Checkpoints ───

def save_checkpoint(path: str, model: RelevanceGatedQA, vocab: Vocabulary, cfg: TrainConfig,
                    extra: Optional[Dict] = None) -> str:
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "train_config": cfg.to_dict(),
        "model_dims": asdict(model.dims),
        "vocab": vocab.to_json(),
        "vocab_hash": vocab.fingerprint(),
        "n_parameters": count_parameters(model),
        **(extra or {}),
    }
    if not save_checkpoint_npz(path, arrays, meta):
        raise TableQAError(f"Failed to write checkpoint {path}")
    logger.info("Trainer", f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path: str, vocab: Optional[Vocabulary] = None,
                    base: Optional[Vocabulary] = None) -> Tuple[RelevanceGatedQA, Vocabulary, TrainConfig, Dict]:
    """
    Rebuild the model; refuses when the vocabulary hash does not match.

    `vocab` must match the stored vocabulary exactly; `base` (the generator
    vocabulary at eval time) only has to be a prefix of it.
    """
    arrays, meta = load_checkpoint_npz(path)
    if meta.get("schema") != CHECKPOINT_SCHEMA or meta.get("version") != CHECKPOINT_VERSION:
        raise TableQAError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    stored = Vocabulary.from_json(meta["vocab"])
    if stored.fingerprint() != meta["vocab_hash"]:
        raise VocabularyMismatchError(f"{path}: stored vocabulary does not match its recorded hash")
    if vocab is not None and vocab.fingerprint() != meta["vocab_hash"]:
        raise VocabularyMismatchError(
            f"{path}: checkpoint vocabulary hash {meta['vocab_hash'][:12]} != current {vocab.fingerprint()[:12]}")
    if base is not None and not stored.extends(base):
        raise VocabularyMismatchError(
            f"{path}: checkpoint vocabulary ({len(stored)} tokens) was not built on the current "
            f"generator vocabulary ({len(base)} tokens)")
    cfg = TrainConfig.from_dict(meta["train_config"])
    model = build_model(cfg, stored)
    dtype = torch_dtype(cfg)
    state = {k: torch.as_tensor(v) for k, v in arrays.items()}
    state = {k: (v.to(dtype) if v.is_floating_point() else v) for k, v in state.items()}
    model.load_state_dict(state)
    model.eval()
    logger.debug_at_level(DEBUG_L1, "Trainer", f"Loaded checkpoint {path} ({count_parameters(model)} parameters)")
    return model, stored, cfg, meta


# ─── Trainer ───

@dataclass
class TrainResult:
    model: RelevanceGatedQA
    loss_curve: List[float] = field(default_factory=list)
    ce_curve: List[float] = field(default_factory=list)
    epoch_stats: List[Dict] = field(default_factory=list)
    steps: int = 0
    checkpoint: Optional[str] = None


class Trainer:

    def __init__(self, cfg: TrainConfig, vocab: Vocabulary, model: Optional[RelevanceGatedQA] = None,
                 events: Optional[EventManager] = None):
        self.cfg = cfg
        self.vocab = vocab
        set_seed(cfg.seed)
        self.model = model if model is not None else build_model(cfg, vocab)
        self.events = events or EventManager.get_instance()
        self.dtype = torch_dtype(cfg)
        if cfg.freeze_urs:
            self.model.set_urs_trainable(False)
            logger.info("Trainer", "Relevance scorer parameters frozen")
        logger.log_mapping(DEBUG_L2, "Trainer", "Training config", cfg.to_dict())

    def _optimizer(self):
        params = [p for p in self.model.parameters() if p.requires_grad]
        if self.cfg.optimizer == "adamw":
            return torch.optim.AdamW(params, lr=self.cfg.lr, weight_decay=self.cfg.weight_decay)
        if self.cfg.optimizer == "adam":
            return torch.optim.Adam(params, lr=self.cfg.lr)
        return torch.optim.SGD(params, lr=self.cfg.lr, momentum=0.9)

    @torch.no_grad()
    def _initialize_clusters(self, batch: Batch):
        was_training = self.model.training
        self.model.eval()
        eta_uns, _, _, h = self.model.relevance(batch, self.cfg.lambda_uns, self.cfg.lambda_cell)
        self.model.clusters.initialize(h[batch.table_mask], eta_uns[batch.table_mask], seed=self.cfg.seed)
        self.model.train(was_training)

    def _batches(self, prepared: List[PreparedExample], rng: np.random.Generator):
        order = rng.permutation(len(prepared))
        for k in range(0, len(order), self.cfg.batch_size):
            yield collate([prepared[int(i)] for i in order[k:k + self.cfg.batch_size]], self.vocab, self.dtype)

    def train(self, examples: Sequence[QAExample], eval_examples: Optional[Sequence[QAExample]] = None,
              checkpoint: Optional[str] = None) -> TrainResult:
        if not examples:
            raise TableQAError("Cannot train on an empty dataset")
        cfg = self.cfg
        prepared = prepare_examples(examples, self.vocab, cfg)
        steps_per_epoch = math.ceil(len(prepared) / cfg.batch_size)
        total_steps = steps_per_epoch * cfg.epochs
        if cfg.max_steps:
            total_steps = min(total_steps, cfg.max_steps) if cfg.epochs else cfg.max_steps
        epochs = cfg.epochs if not cfg.max_steps else max(cfg.epochs, math.ceil(cfg.max_steps / steps_per_epoch))

        optimizer = self._optimizer()
        scheduler = None
        if cfg.scheduler == "cosine" and total_steps > 0:
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)

        rng = np.random.default_rng(cfg.seed)
        result = TrainResult(self.model)
        initial_loss, above = None, 0
        logger.info("Trainer", f"Training on {len(prepared)} examples: {epochs} epochs x {steps_per_epoch} steps, "
                               f"{count_parameters(self.model, trainable_only=True)} trainable parameters")

        self.model.train()
        for epoch in range(1, epochs + 1):
            epoch_losses, epoch_ce = [], []
            for batch in self._batches(prepared, rng):
                if result.steps >= total_steps:
                    break
                if (cfg.relevance_source == RELEVANCE_URS and not cfg.freeze_urs
                        and not bool(self.model.clusters.initialized)):
                    self._initialize_clusters(batch)

                optimizer.zero_grad()
                losses = total_loss(self.model, batch, cfg)
                losses.total.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()

                result.steps += 1
                values = losses.components()
                result.loss_curve.append(values["total"])
                result.ce_curve.append(values["ce"])
                epoch_losses.append(values["total"])
                epoch_ce.append(values["ce"])
                self.events.publish(TRAIN_STEP, {"step": result.steps, "epoch": epoch, "loss": values["total"],
                                                 "components": values, "lr": optimizer.param_groups[0]["lr"]})
                logger.debug_at_level(DEBUG_L3, "Trainer", f"step {result.steps}: {values}")

                if initial_loss is None:
                    initial_loss = values["total"]
                above = above + 1 if values["total"] > cfg.divergence_factor * abs(initial_loss) else 0
                if above >= cfg.divergence_patience:
                    raise TrainingDivergedError(
                        f"Loss above {cfg.divergence_factor}x its initial value ({initial_loss:.4f}) "
                        f"for {above} consecutive steps", list(result.loss_curve))

            if not epoch_losses:
                break
            stats = {"epoch": epoch, "mean_loss": float(np.mean(epoch_losses)), "mean_ce": float(np.mean(epoch_ce)),
                     "first_ce": epoch_ce[0], "last_ce": epoch_ce[-1], "steps": result.steps}
            if eval_examples and cfg.eval_interval and epoch % cfg.eval_interval == 0:
                from Managers.evaluation_manager import accuracy_on
                stats["exact_match"] = accuracy_on(self.model, self.vocab, cfg, eval_examples)
                self.model.train()
            result.epoch_stats.append(stats)
            self.events.publish(TRAIN_EPOCH, stats)
            logger.debug_at_level(DEBUG_L1, "Trainer", f"Epoch {epoch}: loss={stats['mean_loss']:.4f} "
                                                       f"ce={stats['mean_ce']:.4f}")
            logger.debug_at_level(DEBUG_L2, "Trainer", f"Epoch {epoch} stats: {stats}")

        self.model.eval()
        if checkpoint:
            result.checkpoint = save_checkpoint(checkpoint, self.model, self.vocab, cfg,
                                                {"steps": result.steps, "loss_curve": result.loss_curve})
        self.events.publish(TRAIN_COMPLETE, {"steps": result.steps,
                                             "final_loss": result.loss_curve[-1] if result.loss_curve else None,
                                             "checkpoint": result.checkpoint})
        logger.info("Trainer", f"Training finished after {result.steps} steps")
        return result


def train(cfg: TrainConfig, examples: Sequence[QAExample], vocab: Vocabulary,
          checkpoint: Optional[str] = None, eval_examples: Optional[Sequence[QAExample]] = None) -> TrainResult:
    return Trainer(cfg, vocab).train(examples, eval_examples, checkpoint)
