from __future__ import annotations

from drsched.core.admm.consensus import (
    ADMMConfig,
    ADMMResult,
    ConsensusState,
    JointProgram,
    Message,
    MessageLog,
    TraceRow,
    admm_solve,
    build_joint_program,
    balance_rho,
    default_rho,
    restore_schedule,
    solve_joint,
    stitch_decision,
    write_trace_csv,
)
from drsched.core.admm.partition import Region, RegionPartition, partition_case, read_partition, single_region
from drsched.core.admm.region import RegionModel, RegionPrices, build_region_sdp, region_prices

__all__ = [
    "ADMMConfig",
    "ADMMResult",
    "ConsensusState",
    "JointProgram",
    "Message",
    "MessageLog",
    "Region",
    "RegionModel",
    "RegionPartition",
    "RegionPrices",
    "TraceRow",
    "admm_solve",
    "balance_rho",
    "build_joint_program",
    "build_region_sdp",
    "default_rho",
    "partition_case",
    "read_partition",
    "region_prices",
    "restore_schedule",
    "single_region",
    "solve_joint",
    "stitch_decision",
    "write_trace_csv",
]
