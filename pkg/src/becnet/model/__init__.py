from .train import Adam, TrainConfig, Trainer, corpus_eval, evaluate_teacher_forced, lr_schedule
from .transformer import ModelConfig, Seq2SeqTransformer, attention

__all__ = [
    "Adam",
    "ModelConfig",
    "Seq2SeqTransformer",
    "TrainConfig",
    "Trainer",
    "attention",
    "corpus_eval",
    "evaluate_teacher_forced",
    "lr_schedule",
]
