"""Mapping from raw coefficient vectors to per-(fleet, age) parameter values.

Three parameter families are mapped: the catch log-sd block, one survey
log-sd block per survey fleet, and one log-catchability block per survey
fleet.  Each block is governed by a regime: a manual partition, one free
value per age ("maximal"), or a penalized spline on log-age.  Every regime
reduces to a linear map ``values = E @ coeffs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutMismatch, LengthMismatch, NonContiguousGroups
from .splines import SplineBlock, build_spline_block

VARIANCE_GROUP = "variance_shared"
CATCHABILITY_GROUP = "catchability_shared"


@dataclass(frozen=True)
class BlockRegime:
    kind: str  # "partition", "maximal" or "spline"
    groups: tuple = None  # partition only: per-age group index, -1 unobserved
    basis: str = None  # spline only: "cs" or "bs"
    penalty_group: str = None  # spline only

    @property
    def is_spline(self) -> bool:
        return self.kind == "spline"


@dataclass(frozen=True)
class Block:
    block_id: str
    fleet: int
    family: str  # "catch_sd", "survey_sd" or "catchability"
    age_indices: tuple  # 0-based internal ages this fleet observes
    regime: BlockRegime
    E: np.ndarray  # (len(age_indices), n_coeffs)
    offset: int
    spline: SplineBlock = None

    @property
    def n_coeffs(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class ParamMap:
    n_ages: int
    blocks: dict = field(default_factory=dict)  # block_id -> Block

    @property
    def n_coeffs(self) -> int:
        return sum(b.n_coeffs for b in self.blocks.values())

    def block(self, block_id: str) -> Block:
        if block_id not in self.blocks:
            raise LayoutMismatch(f"unknown block {block_id!r}")
        return self.blocks[block_id]

    def split(self, coeffs):
        """Slice a full coefficient vector into per-block vectors."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape[0] != self.n_coeffs:
            raise LayoutMismatch(
                f"expected {self.n_coeffs} coefficients, got {coeffs.shape[0]}")
        return {bid: coeffs[b.offset:b.offset + b.n_coeffs]
                for bid, b in self.blocks.items()}

    def penalty_groups(self):
        """Ordered distinct penalty groups among spline blocks."""
        seen = []
        for b in self.blocks.values():
            g = b.regime.penalty_group
            if b.regime.is_spline and g not in seen:
                seen.append(g)
        # variance group first, catchability second (stable, order-free)
        order = {VARIANCE_GROUP: 0, CATCHABILITY_GROUP: 1}
        return sorted(seen, key=lambda g: order.get(g, 99))


def parse_partition_spec(spec, n_ages=None) -> BlockRegime:
    """Validate a partition given as a list of per-age group indices.

    Indices must be contiguous from 0 in first-appearance order; -1 marks
    ages the fleet does not observe.
    """
    groups = list(spec)
    if n_ages is not None and len(groups) != n_ages:
        raise LengthMismatch(
            f"partition length {len(groups)} does not match {n_ages} ages")
    try:
        groups = [int(g) for g in groups]
    except (TypeError, ValueError):
        raise NonContiguousGroups(f"partition entries must be integers: {spec}")
    used = [g for g in groups if g != -1]
    if not used:
        raise NonContiguousGroups("partition assigns no ages")
    if any(g < -1 for g in groups):
        raise NonContiguousGroups("group indices must be >= 0 (or -1)")
    if sorted(set(used)) != list(range(max(used) + 1)):
        raise NonContiguousGroups(f"group indices have gaps: {sorted(set(used))}")
    # each group must be one consecutive run of ages
    for g in set(used):
        idx = [i for i, gi in enumerate(groups) if gi == g]
        if idx != list(range(idx[0], idx[-1] + 1)):
            raise NonContiguousGroups(
                f"group {g} is split across non-adjacent ages")
    return BlockRegime(kind="partition", groups=tuple(groups))


def _partition_design(regime, age_indices, n_ages):
    if len(regime.groups) != n_ages:
        raise LengthMismatch(
            f"partition length {len(regime.groups)} does not match {n_ages} ages")
    n_groups = max(regime.groups) + 1
    E = np.zeros((len(age_indices), n_groups))
    for row, a in enumerate(age_indices):
        g = regime.groups[a]
        if g == -1:
            raise LengthMismatch(
                f"age index {a} is observed but marked -1 in the partition")
        E[row, g] = 1.0
    return E


def make_block(block_id, fleet, family, age_indices, regime, n_ages,
               offset, shrinkage_epsilon=0.01, bs_degree=3):
    age_indices = tuple(age_indices)
    spline = None
    if regime.kind == "partition":
        E = _partition_design(regime, age_indices, n_ages)
    elif regime.kind == "maximal":
        E = np.eye(len(age_indices))
    elif regime.kind == "spline":
        spline = build_spline_block(regime.basis, n_ages,
                                    shrinkage_epsilon=shrinkage_epsilon,
                                    bs_degree=bs_degree)
        E = spline.X[list(age_indices), :]
    else:
        raise LayoutMismatch(f"unknown regime kind {regime.kind!r}")
    return Block(block_id=block_id, fleet=fleet, family=family,
                 age_indices=age_indices, regime=regime, E=E,
                 offset=offset, spline=spline)


def build_param_map(data, regimes, shrinkage_epsilon=0.01, bs_degree=3) -> ParamMap:
    """Assemble the full parameter map for a stock.

    ``regimes`` maps block ids ("catch_sd", "survey_sd[j]", "catchability[j]")
    to :class:`BlockRegime`.
    """
    n_ages = data.n_ages
    blocks = {}
    offset = 0

    def _observed(fleet):
        return tuple(data.ages.index(a) for a in data.observed_ages(fleet))

    order = [("catch_sd", 0, "catch_sd")]
    for f in data.surveys:
        order.append((f"survey_sd[{f.fleet}]", f.fleet, "survey_sd"))
    for f in data.surveys:
        order.append((f"catchability[{f.fleet}]", f.fleet, "catchability"))

    for block_id, fleet, family in order:
        regime = regimes[block_id]
        blk = make_block(block_id, fleet, family, _observed(fleet), regime,
                         n_ages, offset, shrinkage_epsilon=shrinkage_epsilon,
                         bs_degree=bs_degree)
        blocks[block_id] = blk
        offset += blk.n_coeffs
    return ParamMap(n_ages=n_ages, blocks=blocks)


def evaluate_block(pmap: ParamMap, block_id: str, coeffs):
    """Per-age values (log scale) over the block's observed ages."""
    blk = pmap.block(block_id)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (blk.n_coeffs,):
        raise LayoutMismatch(
            f"{block_id}: expected {blk.n_coeffs} coefficients, "
            f"got {coeffs.shape}")
    return blk.E @ coeffs


def count_parameters(pmap: ParamMap):
    """Coefficient counts per block, total, and count of penalty parameters."""
    counts = {bid: b.n_coeffs for bid, b in pmap.blocks.items()}
    return {
        "blocks": counts,
        "total": sum(counts.values()),
        "penalties": len(pmap.penalty_groups()),
    }
