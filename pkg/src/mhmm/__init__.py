"""Next-artist prediction for music play sequences.

Frequency baselines, user- and item-based collaborative filtering, a
discrete HMM trained by Baum-Welch, and a mixture that concatenates HMM and
CF rankings, evaluated with MAP@K on held-out plays.
"""

from .cf import RatingMatrix, ScoreVector, cosine_similarity
from .corpus import Corpus, artist_frequencies, generate_synthetic, load_csv, split_holdout
from .evaluate import EvalReport, ap_at_k, bench_all, map_at_k
from .hmm import HmmModel, baum_welch, forward, next_symbol_distribution
from .predict import MixtureConfig, PredictConfig, Ranking, mhmm_predict, top_n

__version__ = "0.1.0"
