"""Block-sparse streaming attention with calibrated per-block gating.

Core pieces: a double-precision dense oracle (bsfa.core), a single-precision
tiled online-softmax engine with pluggable gates (bsfa.engine, bsfa.gates),
offline threshold calibration (bsfa.calibration), analytic cost/density
accounting (bsfa.costs), and deterministic synthetic workloads
(bsfa.workloads).  The ``bsfa`` CLI wires them together.
"""

from .core import (AttentionOutput, BlockMask, HeadInput, dense_attention,
                   masked_dense_attention, max_rel_err)
from .engine import GateTrace, RunningStats, ScoreTile, flash_forward, pad_to_blocks
from .gates import (GateContext, DenseGate, FrontierOnlyGate, RunningMaxGate,
                    SlidingWindowGate, ThresholdGate, dense_gate,
                    frontier_only_gate, running_max_gate, sliding_window_gate,
                    threshold_gate)
from .calibration import (BlockMaximaProfile, CalibrationDump, CalibrationSample,
                          calibrate, collect_block_maxima, load_dump, save_dump,
                          thresholds_from_maxima)
from .costs import (CostConfig, CostReport, attention_flops, hbm_traffic,
                    measured_density, predicted_density,
                    projection_vs_attention_ratio, threshold_tensor_size)
from .thresholds import (ThresholdTensor, load_thresholds, save_thresholds,
                         threshold_lookup)
from .tiling import TileConfig, frontier_blocks, frontier_count, off_frontier_count
from .workloads import (NeedleSample, WorkloadSpec, gen_dump, gen_model_dump,
                        gen_needle, gen_random, gen_structured)

__version__ = "0.1.0"
