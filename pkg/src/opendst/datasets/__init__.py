from .corpus import Corpus, FormatError, MissingGold, SchemaMismatch, dump_corpus, load_corpus_dump
from .multiwoz import MULTIWOZ_SLOTS, canonical_slot, load_multiwoz, multiwoz_schema
from .sgd import infer_entity_type, load_sgd, service_to_domain, sgd_schema
from .stats import CorpusStats, corpus_stats

__all__ = [
    "Corpus",
    "CorpusStats",
    "FormatError",
    "MissingGold",
    "MULTIWOZ_SLOTS",
    "SchemaMismatch",
    "canonical_slot",
    "corpus_stats",
    "dump_corpus",
    "infer_entity_type",
    "load_corpus_dump",
    "load_multiwoz",
    "load_sgd",
    "multiwoz_schema",
    "service_to_domain",
    "sgd_schema",
]
