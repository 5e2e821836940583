"""prodrec: product recommendations from purchase-receipt sequences.

Pipeline: parse receipt logs into per-user purchase sequences, train
skip-gram product (and user) embeddings with negative sampling, diversify
product-to-product recommendations through cluster-transition modeling,
score daily top-K lists with time decay and cohort-popularity back-fill,
evaluate offline per test day, and serve the result from TTL'd stores over
HTTP.
"""

__version__ = "0.1.0"
