# Core/relevance.py

"""
Unsupervised relevance scorer: variational head, two-centroid soft clustering
with a Student's t kernel, the clustering / separation / sparsification losses,
score fusion, embedding scaling, and the token-overlap baseline scorer.

Index convention: every per-token tensor here spans the whole input sequence
(B, L). Scores are meaningful only where `table_mask` is True; elsewhere they
are held at zero.
"""
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from sklearn.cluster import KMeans

from Core.table import LinearizedTable, CellCoord
from Core.vocabulary import tokenize_text
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2

logger = get_logger()

RELEVANT = 0
IRRELEVANT = 1


class VariationalHead(nn.Module):
    """mu_p = phi_mu(h_p), sigma_p = phi_sigma(h_p); one scalar each per token."""

    def __init__(self, d_model: int):
        super().__init__()
        self.phi_mu = nn.Linear(d_model, 1)
        self.phi_sigma = nn.Linear(d_model, 1)

    def forward(self, h: torch.Tensor):
        return self.phi_mu(h).squeeze(-1), self.phi_sigma(h).squeeze(-1)


def relevance_forward(h: torch.Tensor, head: VariationalHead, table_mask: Optional[torch.Tensor] = None,
                      training: bool = False, noise: Optional[torch.Tensor] = None,
                      generator: Optional[torch.Generator] = None):
    """
    Returns (eta_uns, z). z = mu + s * sigma where s is `noise` when given,
    s ~ N(0, 1) per token in training mode, and s = 0 otherwise.
    """
    mu, sigma = head(h)
    if noise is not None:
        s = noise.to(mu.dtype)
    elif training:
        s = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    else:
        s = torch.zeros_like(mu)
    z = mu + s * sigma
    eta_uns = torch.sigmoid(z)
    if table_mask is not None:
        z = torch.where(table_mask, z, torch.zeros_like(z))
        eta_uns = torch.where(table_mask, eta_uns, torch.zeros_like(eta_uns))
    return eta_uns, z


# ─── Clustering ───

class ClusterState(nn.Module):
    """Two learnable centroids (row 0 relevant, row 1 irrelevant) and alpha."""

    def __init__(self, d_model: int, alpha: float = 1.0):
        super().__init__()
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)
        self.centroids = nn.Parameter(torch.randn(2, d_model))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    @classmethod
    def from_centroids(cls, centroids, alpha: float = 1.0) -> "ClusterState":
        centroids = torch.as_tensor(centroids)
        if centroids.shape[0] != 2:
            raise ValueError("Exactly two centroids are required")
        state = cls(centroids.shape[1], alpha).to(centroids.dtype)
        with torch.no_grad():
            state.centroids.copy_(centroids)
            state.initialized.fill_(True)
        return state

    @property
    def mu_relevant(self) -> torch.Tensor:
        return self.centroids[RELEVANT]

    @property
    def mu_irrelevant(self) -> torch.Tensor:
        return self.centroids[IRRELEVANT]

    @torch.no_grad()
    def initialize(self, h_table: torch.Tensor, eta_uns: torch.Tensor, seed: int = 0):
        """
        2-means over table-token representations. The centroid whose members
        have the higher mean eta_uns becomes the relevant one. Falls back to two
        random orthogonal unit vectors when a cluster comes out empty.
        """
        points = h_table.detach().cpu().double().numpy()
        eta = eta_uns.detach().cpu().double().numpy()
        centers = None
        if len(points) >= 2 and len(np.unique(points, axis=0)) >= 2:
            kmeans = KMeans(n_clusters=2, n_init=10, random_state=seed).fit(points)
            labels = kmeans.labels_
            if np.bincount(labels, minlength=2).min() > 0:
                centers = kmeans.cluster_centers_
                if eta[labels == 1].mean() > eta[labels == 0].mean():
                    centers = centers[::-1]
                logger.debug_at_level(DEBUG_L2, "Clustering",
                                      f"2-means on {len(points)} table tokens, sizes {np.bincount(labels).tolist()}")
        if centers is None:
            rng = np.random.default_rng(seed)
            basis, _ = np.linalg.qr(rng.standard_normal((points.shape[1], 2)))
            centers = basis.T
            logger.warning("Clustering", "2-means produced an empty cluster; using random orthogonal centroids")
        self.centroids.copy_(torch.as_tensor(np.ascontiguousarray(centers), dtype=self.centroids.dtype))
        self.initialized.fill_(True)
        logger.debug_at_level(DEBUG_L1, "Clustering", "Centroids initialized")


def soft_assign(h: torch.Tensor, clusters: Union[ClusterState, torch.Tensor], alpha: Optional[float] = None):
    """(..., d) -> (..., 2) Student's t soft assignment to the two centroids."""
    if isinstance(clusters, ClusterState):
        centroids, alpha = clusters.centroids, clusters.alpha
    else:
        centroids, alpha = clusters, (1.0 if alpha is None else alpha)
    dist2 = ((h.unsqueeze(-2) - centroids) ** 2).sum(-1)
    kernel = (1.0 + dist2 / alpha) ** (-(alpha + 1.0) / 2.0)
    return kernel / kernel.sum(-1, keepdim=True)


def target_distribution(q: torch.Tensor) -> torch.Tensor:
    """
    Sharpened targets from a batch of assignments q (N, 2), using the soft
    cluster frequency f_j = sum_p q_pj. The result carries no gradient.
    """
    q = q.detach()
    weight = q ** 2 / q.sum(0)
    return weight / weight.sum(-1, keepdim=True)


def clustering_loss(q: torch.Tensor, z: torch.Tensor, batch_size: int) -> torch.Tensor:
    """KL(Z || Q) summed over tokens and clusters, divided by the batch size."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    z = z.detach()
    return (z * (torch.log(z) - torch.log(q))).sum() / batch_size


def separation_loss(clusters: Union[ClusterState, torch.Tensor]) -> torch.Tensor:
    """2 - ||u_rel - u_irr||^2 on unit-normalized copies of the centroids; in [-2, 2]."""
    centroids = clusters.centroids if isinstance(clusters, ClusterState) else clusters
    norms = centroids.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("Cannot normalize a zero-norm centroid")
    units = centroids / norms
    return 2.0 - ((units[RELEVANT] - units[IRRELEVANT]) ** 2).sum()


def sparsification_loss(z: torch.Tensor, table_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean of exp(-z^2) over table-region logits. With a (B, L) mask the mean is
    taken per example and then averaged over the batch.
    """
    if table_mask is None:
        if z.numel() == 0:
            raise ValueError("Empty table region")
        return torch.exp(-z ** 2).mean()
    counts = table_mask.sum(-1)
    if bool((counts == 0).any()):
        raise ValueError("Empty table region")
    values = torch.where(table_mask, torch.exp(-z ** 2), torch.zeros_like(z))
    return (values.sum(-1) / counts.to(z.dtype)).mean()


# ─── Fusion and gating ───

def fuse_scores(eta_uns, eta_cell, lambda_uns: float, lambda_cell: float):
    """eta = lambda_uns * eta_uns + lambda_cell * eta_cell (tensors or arrays)."""
    if not isinstance(eta_uns, torch.Tensor):
        eta_uns = np.asarray(eta_uns, dtype=float)
    if not isinstance(eta_cell, torch.Tensor):
        eta_cell = np.asarray(eta_cell, dtype=float)
    if tuple(eta_uns.shape) != tuple(eta_cell.shape):
        raise ValueError(f"Score shapes differ: {tuple(eta_uns.shape)} vs {tuple(eta_cell.shape)}")
    return lambda_uns * eta_uns + lambda_cell * eta_cell


def scale_embeddings(e: torch.Tensor, eta: torch.Tensor, region: Union[int, torch.Tensor]) -> torch.Tensor:
    """
    e'_p = eta_p * e_p on table-region positions; question positions unchanged.
    `region` is either the question length of an unpadded sequence or a bool
    table mask shaped like eta.
    """
    if isinstance(region, int):
        mask = torch.arange(e.shape[-2], device=e.device) >= region
        mask = mask.expand(eta.shape)
    else:
        mask = region
    return torch.where(mask.unsqueeze(-1), eta.unsqueeze(-1).to(e.dtype) * e, e)


# ─── Baseline ───

def overlap_baseline_score(question: Union[str, Sequence[str]], lin: LinearizedTable) -> np.ndarray:
    """
    Row-level token overlap: |row tokens & question tokens| / |row tokens| over
    distinct lowercase cell tokens. Every table token, markers included, gets
    the score of its row.
    """
    tokens = tokenize_text(question) if isinstance(question, str) else list(question)
    question_set = {tok.lower() for tok in tokens}

    row_tokens = {}
    for tok, tag in zip(lin.token_strings, lin.token_cell_map):
        if isinstance(tag, CellCoord):
            row_tokens.setdefault(tag.row, set()).add(tok.lower())
    row_scores = {row: len(words & question_set) / len(words) for row, words in row_tokens.items()}
    return np.array([row_scores.get(lin.row_of(p), 0.0) for p in range(len(lin))], dtype=float)
