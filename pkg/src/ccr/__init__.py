"""Pipeline toolkit for questionnaire- and dictionary-based psychological scoring
of historical text corpora, built around contrastive adapter training over
frozen paragraph embeddings."""

__version__ = "0.1.0"
