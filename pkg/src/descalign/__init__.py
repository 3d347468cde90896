"""Few-shot classification and weakly-supervised localization over
deep-descriptor feature tensors."""

from .alignment import (AlignmentResult, AlignmentScore, QueryRepresentation,
                        SupportPool, alignment_distance, class_probabilities,
                        classify, episode_loss, loss_gradient_wrt_query,
                        representation_from_field, select_and_build)
from .core import (ActivationMask, ConvWeights, DescriptorField,
                   apply_selection_mask, conv2d_forward, cosine_similarity,
                   descriptor_at, nearest_resize, spatial_multiply)
from .daf import read_feature_file, read_feature_header, write_feature_file
from .episodes import (Episode, EpisodeSpec, EvalReport, PipelineConfig,
                       confidence_interval, evaluate, format_report,
                       sample_episode, synthetic_dataset, write_synthetic)
from .errors import (CapacityError, DomainError, EmptySelectionError,
                     FormatError, ShapeError)
from .localization import (BBox, Cam, ChannelAttentionWeights, ClassifierOutput,
                           ClassifierWeights, LocalizationResult, LocalizerWeights,
                           WsolRecord, cam_to_bbox, channel_attention_mask,
                           classifier_forward, complementary_classification_loss,
                           erased_mask, fuse_cams, important_mask, iou,
                           load_localizer_weights, localize_field, normalize_cam,
                           random_localizer_weights, save_localizer_weights,
                           wsol_metrics)
from .manifest import (DatasetManifest, ManifestRecord, ensure_disjoint_classes,
                       format_manifest, load_manifest, parse_manifest,
                       write_manifest)

__version__ = "0.1.0"
