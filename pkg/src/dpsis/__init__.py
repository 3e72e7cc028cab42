"""Differentially private feature selection from correlations.

DP-SIS ranks features by ``|x_(i)^T y|`` on max-norm-bounded data and picks
the top k with the canonical Lipschitz mechanism. The package also carries
the non-private SIS screen, a coordinate-descent LASSO, the block-voting
two-stage baseline, synthetic generators and a benchmark harness.
"""

from dpsis.data import (
    Dataset,
    SynthSpec,
    gen_instability_w1,
    gen_instability_w1w2,
    gen_synth_fan,
    load_csv,
    preprocess,
)
from dpsis.lipschitz import (
    MechanismParams,
    ScoreVector,
    SelectionResult,
    brute_force_mechanism,
    canonical_loss,
    enumerate_utility_classes,
    harmonic,
    lipschitz_topk,
    sample_max_noise,
)
from dpsis.metrics import BoundInput, RankedReference, recovery_bound, tgg_flags, topk_accuracy
from dpsis.selectors import (
    LassoParams,
    TwoStageParams,
    dp_sis,
    lasso_cd,
    lasso_topk,
    sis,
    two_stage_select,
)

__version__ = "0.1.0"
