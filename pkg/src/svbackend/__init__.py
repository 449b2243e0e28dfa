"""Speaker-verification backend with jointly trained, side-information
dependent calibration, plus the PLDA and trial-based-calibration baselines
and the Cllr/min-Cllr/EER evaluation suite."""

from .calibration import (EffectivePrior, GlobalCal, apply_cal, cross_entropy,
                          fit_global)
from .data import (IMPOSTOR, TARGET, EmbeddingSet, SampleMeta, ScoreSet, Trial,
                   read_embeddings, read_metadata, read_scores, read_trials,
                   write_embeddings, write_metadata, write_scores, write_trials)
from .dplda import (CalParamMap, DpldaModel, SideInfoExtractor, calib_params,
                    forward_trial, load_model, save_model, score_trials,
                    side_info, warm_start)
from .errors import ConvergenceError, DataFormatError, DegenerateDataError
from .frontend import FrontEnd, apply_front, apply_front_matrix, fit_lda
from .metrics import EvalReport, cllr, eer, evaluate_scores, min_cllr, pav_calibrate
from .plda import (PldaScorer, TwoCovModel, fit_two_cov, plda_score,
                   plda_score_pairs, two_cov_to_scorer)
from .synth import (ConditionSpec, SynthConfig, generate, oracle_llr,
                    oracle_scores, sample_trials)
from .tbc import CondPlda, TbcConfig, TbcScorer, fit_cond_plda, tbc_score
from .training import (Adam, BatchSpec, TrainStageConfig, TrainingPool,
                       loss_and_grads, sample_minibatch, sweep_and_select, train)

__all__ = [name for name in dir() if not name.startswith("_")]
