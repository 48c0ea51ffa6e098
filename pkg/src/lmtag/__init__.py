"""Sequence labeling toolkit with language-model-augmented taggers.

Submodules:
    tensor     -- dense arrays on a recorded computation graph (reverse mode)
    data       -- CoNLL ingestion, normalization, tag schemes, vocabularies
    layers     -- embeddings, char encoders, recurrent cells, bi-layers
    crf        -- linear-chain CRF scoring, partition, marginals, Viterbi
    lm         -- forward/backward language models and embedding extraction
    tagger     -- tagger assembly with configurable LM injection points
    train      -- Adam, gradient clipping, annealing schedule, multi-seed runs
    evaluation -- span-level micro P/R/F1 and report tables
    persist    -- binary model container with checksum
    cli        -- command line entry point
"""

__version__ = "0.1.0"
