"""Evidence-chain synthesis and grounded-QA evaluation for video question
answering: hierarchical segmentation, question-conditioned captioning,
likelihood-guided chain search, chain-of-thought distillation, and the
IoP/IoU evaluation toolkit, all behind a pluggable scorer so the full
pipeline runs offline.
"""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled data file (toy corpus and evaluation fixtures)."""
    return resources.files("evchain").joinpath("data", name)


def toy_corpus_path():
    return data_path("toy_qa.jsonl")
