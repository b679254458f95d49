"""Knowledge-guided prompt learning for two-step phantom brain segmentation.

Pipeline: pretrain small 3D backbones on noisy labels, then fine-tune
with knowledge-embedding-initialized prompt tokens injected into the
frozen encoder. See the README for the CLI walkthrough.
"""

from .backbones import (BackboneConfig, BackboneKind, build, make_prompt_config,
                        parameter_counts, partition_parameters)
from .core import (LabelMap, Sex, SubjectAttributes, Volume, from_one_hot,
                   one_hot, validate_pair)
from .data import (PhantomSpec, Sample, augment_flip, corrupt_boundary_labels,
                   generate_phantom, load_manifest, load_sample, make_dataset,
                   preprocess, preprocess_sample, split)
from .knowledge import (DEFAULT_TEMPLATE, HashTextEncoder, KnowledgeEmbedding,
                        PromptSentence, TextEncoder, bucket_age, cached_encode,
                        encode_knowledge, render_sentence)
from .losses import (LossConfig, combined_loss, combined_loss_from_logits,
                     dice_loss, dice_loss_from_logits, focal_term)
from .metrics import ClassMetrics, SegReport, asd, dsc, report
from .prompt import (ImageTokenBlock, InjectionRecord, PromptConfig,
                     PromptLayerSpec, PromptPath, PromptState, discard,
                     init_prompts, inject, preinitialize, project_aap,
                     project_transpose, propagate)
from .train import (Checkpoint, Stage, TrainConfig, TrainMode, cascade_predict,
                    finetune_full, finetune_kgpl, finetune_random_prompts,
                    load_checkpoint, lr_at, pretrain, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "BackboneKind", "build", "make_prompt_config",
    "parameter_counts", "partition_parameters",
    "LabelMap", "Sex", "SubjectAttributes", "Volume", "from_one_hot", "one_hot",
    "validate_pair",
    "PhantomSpec", "Sample", "augment_flip", "corrupt_boundary_labels",
    "generate_phantom", "load_manifest", "load_sample", "make_dataset",
    "preprocess", "preprocess_sample", "split",
    "DEFAULT_TEMPLATE", "HashTextEncoder", "KnowledgeEmbedding", "PromptSentence",
    "TextEncoder", "bucket_age", "cached_encode", "encode_knowledge",
    "render_sentence",
    "LossConfig", "combined_loss", "combined_loss_from_logits", "dice_loss",
    "dice_loss_from_logits", "focal_term",
    "ClassMetrics", "SegReport", "asd", "dsc", "report",
    "ImageTokenBlock", "InjectionRecord", "PromptConfig", "PromptLayerSpec",
    "PromptPath", "PromptState", "discard", "init_prompts", "inject",
    "preinitialize", "project_aap", "project_transpose", "propagate",
    "Checkpoint", "Stage", "TrainConfig", "TrainMode", "cascade_predict",
    "finetune_full", "finetune_kgpl", "finetune_random_prompts",
    "load_checkpoint", "lr_at", "pretrain", "save_checkpoint",
    "__version__",
]
