"""Retrieval evaluation."""

from trajsim.eval.retrieval import Ranking, evaluate_suite, hr_at_k, rank_candidates, recall_t_at_k

__all__ = ["Ranking", "evaluate_suite", "hr_at_k", "rank_candidates", "recall_t_at_k"]
