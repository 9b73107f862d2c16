"""Deterministic audit-ledger, norm-detection, and intervention engine for
multi-agent resource games."""

from .attribution import ResponsibilityTracker, compute_rho, top_k, windowed_scores
from .causal import (
    GrangerState,
    ThresholdSchedule,
    granger_f_batch,
    h0_for_alpha,
    insert_causal_edges,
)
from .detection import (
    BudgetAllocator,
    CusumDetector,
    NormSpec,
    collusion_pulse,
    gini,
    load_statistic,
    lorden_delay_bound,
)
from .environment import World, WorldConfig, allocate, build_graph, reward
from .hashing import DEFAULT_HASH, HashConfig
from .intervention import (
    CompromiseLedger,
    EscalationState,
    Intervention,
    apply_link_throttle,
    apply_policy_patch,
    apply_reward_shaping,
    compromise_ceiling,
    cost_bound,
    failsafe_update,
    min_penalty,
    plan_intervention,
)
from .ledger import (
    Event,
    LedgerDag,
    MerkleSnapshot,
    ResourceAccount,
    RingBuffer,
    account_resources,
    make_event,
)
from .merkle import InclusionProof, MerkleLog, verify_inclusion

__version__ = "0.1.0"

__all__ = [
    "ResponsibilityTracker",
    "compute_rho",
    "top_k",
    "windowed_scores",
    "GrangerState",
    "ThresholdSchedule",
    "granger_f_batch",
    "h0_for_alpha",
    "insert_causal_edges",
    "BudgetAllocator",
    "CusumDetector",
    "NormSpec",
    "collusion_pulse",
    "gini",
    "load_statistic",
    "lorden_delay_bound",
    "World",
    "WorldConfig",
    "allocate",
    "build_graph",
    "reward",
    "DEFAULT_HASH",
    "HashConfig",
    "CompromiseLedger",
    "EscalationState",
    "Intervention",
    "apply_link_throttle",
    "apply_policy_patch",
    "apply_reward_shaping",
    "compromise_ceiling",
    "cost_bound",
    "failsafe_update",
    "min_penalty",
    "plan_intervention",
    "Event",
    "LedgerDag",
    "MerkleSnapshot",
    "ResourceAccount",
    "RingBuffer",
    "account_resources",
    "make_event",
    "InclusionProof",
    "MerkleLog",
    "verify_inclusion",
    "__version__",
]
