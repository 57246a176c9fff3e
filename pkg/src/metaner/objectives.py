"""Token cross-entropy with first-piece selection, the max-augmented loss, and
random masking of entity subwords."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractViolation

PROB_FLOOR = 1e-12


@dataclass
class TokenLossVector:
    """Per-position losses (zero where inactive) and the active mask."""
    losses: ad.Tensor
    active: np.ndarray
    floored: int = 0

    @property
    def values(self):
        return self.losses.data


@dataclass(frozen=True)
class MaskingConfig:
    probability: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("mask probability must lie in [0, 1]")


def token_losses(probs, gold, active):
    """``-log p[gold]`` at active positions, 0 elsewhere.

    ``probs`` is a Tensor (or array) ``[..., C]``; ``gold`` and ``active`` are
    ``[...]``. Probabilities under 1e-12 are clamped and counted in ``floored``.
    """
    probs = ad.as_tensor(probs)
    active = np.asarray(active, dtype=bool)
    gold = np.where(active, np.asarray(gold), 0)
    p = ad.pick(probs, gold)
    floored = int(np.count_nonzero((p.data < PROB_FLOOR) & active))
    losses = ad.neg(ad.log(p, floor=PROB_FLOOR)) * active
    return TokenLossVector(losses, active, floored)


def _check_lambda(lam):
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")


def mean_loss(tlv):
    """Mean over the active positions of one example."""
    n = int(tlv.active.sum())
    if n == 0:
        raise ContractViolation("mean_loss needs at least one active position")
    return tlv.losses.sum() / n


def max_augmented_loss(tlv, lam=2.0):
    """Mean loss plus ``lam`` times the largest active token loss."""
    _check_lambda(lam)
    mean = mean_loss(tlv)
    if lam == 0:
        return mean
    flat = tlv.losses.reshape(-1)
    return mean + ad.tmax(flat, axis=0, where=tlv.active.reshape(-1)) * lam


def example_losses(tlv, members, lam=0.0):
    """Per-example mean (+ ``lam`` * max) for batched rows.

    ``tlv`` covers rows ``[..., R, L]``; ``members`` is ``[..., E, R*L]`` and
    marks which active positions belong to example ``e``, so an example split
    over several windows is scored as one unit. Returns ``[..., E]``.
    """
    _check_lambda(lam)
    lead = tlv.losses.shape[:-2]
    flat = tlv.losses.reshape(lead + (1, -1))
    members = np.asarray(members, dtype=bool)
    counts = members.sum(axis=-1)
    if np.any(counts == 0):
        raise ContractViolation("an example has no active positions")
    out = (flat * members).sum(axis=-1) * (1.0 / counts)
    if lam:
        wide = flat + np.zeros(members.shape)
        out = out + ad.tmax(wide, axis=-1, where=members) * lam
    return out


def mask_entities(piece_ids, entity_pieces, mask_id, probability, rng):
    """Replace each entity subword by ``mask_id`` with the given probability.

    Draws are independent per position and fresh on every call.
    """
    piece_ids = np.asarray(piece_ids)
    if probability == 0.0:
        return piece_ids.copy()
    draw = rng.random(piece_ids.shape) < probability
    return np.where(np.asarray(entity_pieces, dtype=bool) & draw, mask_id, piece_ids)


def masking_rng(seed, epoch, sentence_id):
    return np.random.default_rng((seed, epoch, sentence_id, 0x6D61736B))
