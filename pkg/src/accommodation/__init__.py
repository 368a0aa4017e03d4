"""Accommodation learning of forward and inverse speech-production models.

A recurrent inverse model turns acoustic frames into articulatory commands,
a black-box plant renders the commands, and a framewise forward model
learns to predict the plant.  The inverse model improves by imitating its
input through the frozen forward model.
"""

from .corpus import Corpus, CorpusSplit, Inventory, Utterance, gen_corpus, gen_inventory, read_corpus, write_corpus
from .models import ForwardModel, InverseModel, ModelConfig, init_forward, init_inverse
from .plant import PlantOracle, SpeakerPlant, speaker, synthesize_frame, synthesize_utterance
from .rng import RngStream
from .trainer import EpochMetrics, RunRecord, TrainConfig, accommodation_step, evaluate_split, run_training

__all__ = [
    "Corpus", "CorpusSplit", "EpochMetrics", "ForwardModel", "Inventory", "InverseModel", "ModelConfig",
    "PlantOracle", "RngStream", "RunRecord", "SpeakerPlant", "TrainConfig", "Utterance", "accommodation_step",
    "evaluate_split", "gen_corpus", "gen_inventory", "init_forward", "init_inverse", "read_corpus", "run_training",
    "speaker", "synthesize_frame", "synthesize_utterance", "write_corpus",
]
