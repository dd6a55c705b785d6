"""recfeat: LLM-generated user-preference features for recommendation.

Generates candidate user-preference features with policy models under
four search strategies, validates them with a reward model, deduplicates
them by embedding + density clustering, and measures their effect on
listwise recommendation tasks.
"""

__version__ = "0.1.0"
