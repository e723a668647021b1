"""Tomography of positive-amplitude quantum states with restricted
Boltzmann machines, trained by contrastive-divergence variants and
mode-assisted updates."""

from .analysis import (StateGraph, TransitionStats, distance,
                       export_state_graph, fidelity, kl_divergence, nll,
                       transition_experiment)
from .bits import (all_bitstrings, bits_to_index, bits_to_string,
                   index_to_bits, string_to_bits)
from .errors import (CapacityError, ConfigError, DimensionError,
                     NumericalError, RbmTomoError)
from .mode_solver import (AnnealConfig, ModeResult, QuboInstance,
                          best_candidate_mode, find_mode, marginal_mode,
                          solve_anneal, solve_exact, to_qubo)
from .rbm import (DEFAULT_ENUMERATION_CAP, ExactModelTable, Rbm, energy,
                  exact_kl_gradient, exact_table, load_checkpoint,
                  log_unnormalized_pv, save_checkpoint, softplus,
                  cond_h_given_v, cond_v_given_h)
from .samplers import (ChainState, PersistentChains, PtLadder, cd_k_sample,
                       gibbs_step, gibbs_sweep, make_pt_ladder, pcd_step,
                       pt_step, rng_for_stream, sample_hidden, sample_visible)
from .states import (MeasurementDataset, OutcomeDistribution, TargetState,
                     depolarized_w_distribution, ghz, load_dataset,
                     sample_depolarized_w, sample_ghz, sample_measurements,
                     sample_w, save_dataset, tffim_ground_state,
                     toric_code_ground_state, triangular_edges, w_state)
from .trainer import (ModeSchedule, TrainConfig, TrainTrace, TraceRecord,
                      grad_update, infer_mode_set, mode_schedule_probability,
                      mode_update, train)

__version__ = "0.1.0"
