"""Zero-shot anomaly classification and localization.

Language scoring over prompt ensembles, dual-image visual reference scoring,
and per-image test-time adaptation of patch tokens, evaluated with AUROC,
AP, F1-max, and AUPRO.
"""

from .encoder import (
    ClassToken,
    FeatureBundle,
    PatchTokenGrid,
    load_feature_bundle,
    toy_encode_image,
    toy_encode_text,
    vv_attention_block,
    write_feature_bundle,
)
from .metrics import RegionLabeling, ScoredSet, aupro, auroc, average_precision, connected_components, f1_max
from .pipeline import (
    DatasetManifest,
    EvalReport,
    ManifestEntry,
    RunConfig,
    emit_heatmap,
    load_manifest,
    make_synthetic_fixture,
    pair_assignment,
    run_eval,
)
from .prompts import PromptSet, TextTokenPair, aggregate_text_tokens, expand_templates
from .scoring import (
    AnomalyMap,
    FusionWeights,
    fuse_classification,
    fuse_localization,
    joint_map,
    language_map,
    language_score,
    upsample_map,
    visual_reference_map,
)
from .synth import NoiseField, PseudoSample, binarize_mask, perlin_field, synthesize_pseudo
from .tta import (
    AdapterState,
    TTAHyper,
    adapt_tokens,
    loss_gradients,
    loss_pseudo,
    loss_sim,
    loss_total,
    tta_fit,
    tta_score_map,
)

__version__ = "0.1.0"
