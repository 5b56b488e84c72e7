"""Cross-sender bit-mixing coding: masking-string sets, the two-phase codec,
an OR superimposition channel, and a failure-rate simulator."""
from __future__ import annotations

from .channel import (
    COLLISION,
    SILENT,
    Phase2Observation,
    flip_slots,
    inject_bit_flips,
    superimpose_phase1,
    superimpose_phase2,
)
from .codec import (
    DataOutcome,
    DecodedMaskingList,
    MaskingIndex,
    airtime_bytes,
    decode_data,
    decode_data_detailed,
    decode_masking,
    encode_data,
    encode_masking,
    masking_scores,
    phase1_codeword,
)
from .erasure import (
    BLANK,
    ERASED,
    DataItem,
    ErasureDecodeError,
    RsParams,
    choose_wu,
    crc32,
    crc_append,
    crc_check,
    rs_encode,
    rs_erasure_decode,
)
from .masking import (
    CandidateSet,
    LcsEstimate,
    MaskingParams,
    MaskingString,
    PromisingDiagnostics,
    check_promising,
    construct_candidate_set,
    extend_lcs,
    footprint_bits,
    inner_product,
    is_compatible,
    lcs_size,
    monte_carlo_lcs_check,
    monte_carlo_lcs_sweep,
    read_lcs,
    theoretical_w,
    write_lcs,
)
from .sim import (
    ExperimentConfig,
    ExperimentResult,
    RoundResult,
    Topology,
    bmc1_failure_rate,
    bmc2_failure_rate,
    compatibility_holds,
    medium_utilization,
    rand_access1,
    rand_access2,
    ra1_failure_exact,
    ra2_failure_exact,
    run_bmc_round,
    run_sweep,
)

__version__ = "0.1.0"
