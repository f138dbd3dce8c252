"""Few-shot joint intent classification and slot filling with prototypical
networks, supervised contrastive regularization, and data augmentation."""

from .augment import (AugmentLevel, AugmentMethod, AugmentationConfig,
                      MockTranslationClient, TranslationClient)
from .contrastive import ContrastiveConfig, ContrastiveLevel
from .corpus import (Dataset, SlotValueDict, SplitSpec, Utterance,
                     build_slot_value_dict, build_token_vocab, load_dataset,
                     make_split_atis_style, make_split_snips_style,
                     save_dataset)
from .encoder import EncoderConfig, EncoderParams, encode, init_params
from .episode import Episode, SamplerConfig, sample_episode
from .evaluation import aggregate, evaluate, ic_accuracy, slot_f1
from .experiment import ExperimentConfig, load_config, run_experiment
from .protonet import (LossBreakdown, PrototypeSet, compute_prototypes,
                       intent_loss, predict_intent, predict_slots, slot_loss,
                       total_loss)
from .synthetic import GrammarSpec, atis_like, generate, snips_like
from .syntax import RuleTagger, SyntaxConfig, SyntaxMode, annotate
from .trainer import TrainConfig, meta_train

__version__ = "0.1.0"

__all__ = [
    "AugmentLevel", "AugmentMethod", "AugmentationConfig", "ContrastiveConfig",
    "ContrastiveLevel", "Dataset", "EncoderConfig", "EncoderParams", "Episode",
    "ExperimentConfig", "GrammarSpec", "LossBreakdown", "MockTranslationClient",
    "PrototypeSet", "RuleTagger", "SamplerConfig", "SlotValueDict", "SplitSpec",
    "SyntaxConfig", "SyntaxMode", "TrainConfig", "TranslationClient",
    "Utterance", "aggregate", "annotate", "atis_like", "build_slot_value_dict",
    "build_token_vocab", "compute_prototypes", "encode", "evaluate", "generate",
    "ic_accuracy", "init_params", "intent_loss", "load_config", "load_dataset",
    "make_split_atis_style", "make_split_snips_style", "meta_train",
    "predict_intent", "predict_slots", "run_experiment", "sample_episode",
    "save_dataset", "slot_f1", "slot_loss", "snips_like", "total_loss",
]
