"""Anisotropic (score-aware) quantization for maximum inner product search."""

from .datasets import (
    Dataset,
    DiagnosticsReport,
    diagnose,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    unit_normalize,
    write_fvecs,
    write_ivecs,
)
from .errors import *  # noqa: F401,F403
from .formats import read_codebook, read_codes, write_codebook, write_codes
from .geometry import (
    AnisotropicWeights,
    Constant,
    Indicator,
    Tabulated,
    anisotropic_loss,
    anisotropic_loss_batch,
    eta_exact,
    eta_limit,
    h_coefficients,
    indicator_weights,
    monte_carlo_loss,
    residual_decompose,
)
from .index import (
    EvalReport,
    LookupTable,
    SearchResult,
    adc_score,
    adc_scores,
    adc_search,
    build_lut,
    evaluate,
    exact_search,
    ground_truth,
)
from .pq import (
    ProductCodebook,
    assemble_system,
    pq_assign_point,
    pq_codebook_update,
    pq_quantize,
    reconstruct,
    solve_system,
    train_apq,
    train_l2_pq,
)
from .vq import (
    Codebook,
    QuantizedDataset,
    TrainConfig,
    VqAssignment,
    assign_point,
    train_avq,
    update_codeword,
    vq_quantize,
)

__version__ = "0.1.0"
