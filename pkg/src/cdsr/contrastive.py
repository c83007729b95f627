"""Negative queue and InfoNCE objective for momentum-contrast training."""
from __future__ import annotations

import torch


class QueueStateError(RuntimeError):
    """Raised when the loss is requested from an empty queue."""


class NegativeQueue:
    """Fixed-capacity FIFO ring of unit-norm key embeddings.

    Single writer: ``enqueue`` mutates in place; ``contents`` returns a copy
    ordered oldest to newest.
    """

    def __init__(self, capacity: int = 8192, dim: int = 256, dtype=torch.float32, norm_tol: float = 1e-6):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.norm_tol = norm_tol
        self.buffer = torch.zeros(capacity, dim, dtype=dtype)
        self.head = 0
        self.fill = 0

    def __len__(self):
        return self.fill

    def enqueue(self, embeddings) -> "NegativeQueue":
        x = torch.as_tensor(embeddings).detach()
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected embeddings of width {self.dim}, got {x.shape[-1]}")
        norms = x.double().norm(dim=1)
        if (norms - 1.0).abs().max() > self.norm_tol:
            raise ValueError("queue entries must have unit L2 norm")
        n = x.shape[0]
        if n >= self.capacity:
            self.buffer.copy_(x[-self.capacity:].to(self.buffer.dtype))
            self.head = 0
            self.fill = self.capacity
            return self
        idx = (self.head + torch.arange(n)) % self.capacity
        self.buffer[idx] = x.to(self.buffer.dtype)
        self.head = (self.head + n) % self.capacity
        self.fill = min(self.fill + n, self.capacity)
        return self

    def contents(self) -> torch.Tensor:
        if self.fill < self.capacity:
            return self.buffer[: self.fill].clone()
        return torch.roll(self.buffer, -self.head, dims=0).clone()

    def state_dict(self):
        return {"buffer": self.buffer.clone(), "head": self.head, "fill": self.fill, "capacity": self.capacity}

    def load_state_dict(self, state):
        if state["capacity"] != self.capacity or tuple(state["buffer"].shape) != tuple(self.buffer.shape):
            raise ValueError("queue state does not match this queue's shape")
        self.buffer.copy_(state["buffer"])
        self.head = int(state["head"])
        self.fill = int(state["fill"])


def enqueue(queue: NegativeQueue, embeddings) -> NegativeQueue:
    return queue.enqueue(embeddings)


def info_nce(anchors, positives, negatives, tau: float = 0.07, include_positive_in_denominator: bool = False):
    """Batch-summed InfoNCE.

    ``-log(exp(a.p / tau) / sum_j exp(a.n_j / tau))`` for every anchor, with
    the negatives taken from a queue (or an (N, C) tensor) and detached. By
    default the positive appears only in the numerator, so the loss can be
    negative; set ``include_positive_in_denominator`` for the usual form.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    neg = negatives.contents() if isinstance(negatives, NegativeQueue) else torch.as_tensor(negatives)
    if neg.shape[0] == 0:
        raise QueueStateError("negative queue is empty")
    neg = neg.detach().to(anchors.dtype)
    pos_logit = (anchors * positives).sum(dim=1) / tau
    neg_logits = anchors @ neg.t() / tau
    if include_positive_in_denominator:
        neg_logits = torch.cat([pos_logit.unsqueeze(1), neg_logits], dim=1)
    return (torch.logsumexp(neg_logits, dim=1) - pos_logit).sum()


def l1_loss(sr, hr):
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def total_loss(l_cl, sr, hr):
    return l_cl + l1_loss(sr, hr)
