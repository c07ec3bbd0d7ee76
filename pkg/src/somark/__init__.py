"""Mark-based visual prompting for multimodal chat models.

Partition an image into regions, stamp each region with a small
speakable mark, ask a vision-language model about the marked image,
and parse its answer back into region-grounded triplets. Includes
deterministic rendering, a cached chat gateway, benchmark protocols
for six grounding tasks, and an interactive playground service.
"""

from .masks import (
    BinaryMask,
    Box,
    MaskError,
    Region,
    RegionSet,
    box_iou,
    iou,
    mask_to_box,
    region_set_from_dict,
    region_set_to_dict,
    rle_decode,
    rle_encode,
)
from .allocate import (
    AllocationConfig,
    AllocationError,
    DistanceField,
    MarkLocation,
    allocate_marks,
    compute_residuals,
    distance_transform,
)
from .render import (
    Manifest,
    ManifestEntry,
    MarkedImage,
    MarkStyle,
    RenderError,
    assign_mark_ids,
    choose_colors,
    manifest_from_dict,
    manifest_to_dict,
    render,
)
from .ingest import (
    IngestConfig,
    IngestError,
    PartitionSource,
    fetch_partition,
    filter_regions,
    load_image_rgb,
    load_regions,
)
from .prompts import (
    PromptError,
    PromptSpec,
    TaskKind,
    TemplateCatalog,
    build_task_prompt,
    interleave_marks,
)
from .parsing import (
    GroundedAnswer,
    MarkMention,
    Triplet,
    bind_triplets,
    grounded_from_dict,
    grounded_to_dict,
    parse_response,
)
from .metrics import (
    GtInstance,
    MetricError,
    MetricReport,
    acc_at_05,
    boundary_f_measure,
    jf_score,
    match_selections,
    miou_referring,
    normalize_label,
    precision_classification,
    recall_at_1,
)
from .gateway import (
    ChatRequest,
    ChatResponse,
    ImagePart,
    LmmClient,
    MockTransport,
    RetryPolicy,
    TextPart,
    Turn,
    cache_key,
    send_chat,
)
from .bench import (
    BenchError,
    BenchSpec,
    aggregate_report,
    load_bench_spec,
    run_benchmark,
    sample_subset,
    spec_hash,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationConfig",
    "AllocationError",
    "BenchError",
    "BenchSpec",
    "BinaryMask",
    "Box",
    "ChatRequest",
    "ChatResponse",
    "DistanceField",
    "GroundedAnswer",
    "GtInstance",
    "ImagePart",
    "IngestConfig",
    "IngestError",
    "LmmClient",
    "Manifest",
    "ManifestEntry",
    "MarkedImage",
    "MarkLocation",
    "MarkMention",
    "MarkStyle",
    "MaskError",
    "MetricError",
    "MetricReport",
    "MockTransport",
    "PartitionSource",
    "PromptError",
    "PromptSpec",
    "Region",
    "RegionSet",
    "RenderError",
    "RetryPolicy",
    "TaskKind",
    "TemplateCatalog",
    "TextPart",
    "Triplet",
    "Turn",
    "acc_at_05",
    "aggregate_report",
    "allocate_marks",
    "assign_mark_ids",
    "bind_triplets",
    "boundary_f_measure",
    "box_iou",
    "build_task_prompt",
    "cache_key",
    "choose_colors",
    "compute_residuals",
    "distance_transform",
    "fetch_partition",
    "filter_regions",
    "grounded_from_dict",
    "grounded_to_dict",
    "interleave_marks",
    "iou",
    "jf_score",
    "load_bench_spec",
    "load_image_rgb",
    "load_regions",
    "manifest_from_dict",
    "manifest_to_dict",
    "mask_to_box",
    "match_selections",
    "miou_referring",
    "normalize_label",
    "parse_response",
    "precision_classification",
    "recall_at_1",
    "region_set_from_dict",
    "region_set_to_dict",
    "render",
    "rle_decode",
    "rle_encode",
    "run_benchmark",
    "sample_subset",
    "send_chat",
    "spec_hash",
]
