"""Export audio clips and captions into EMB1 embedding sequences.

Audio goes through a CNN14-style convolutional encoder (log-mel frontend,
one 2048-dim embedding per ~0.32 s of audio); captions go through a
word-vector table (300-dim per word).  Outputs are EMB1 files plus a
manifest.json consumable by the retrieval engine.
"""

from .emb1 import write_embedding_file
from .encoder import AudioEncoder, EncoderConfig, load_encoder
from .errors import ExportError
from .export import ExportJob, export_dataset
from .text import Vocabulary, embed_sentence, tokenize

__all__ = [
    "AudioEncoder", "EncoderConfig", "ExportError", "ExportJob",
    "Vocabulary", "embed_sentence", "export_dataset", "load_encoder",
    "tokenize", "write_embedding_file",
]
