"""Channel-knowledge-map enabled NLoS target localization.

Layers, bottom up:

* :mod:`ckmsense.geometry` — scenes, single-bounce paths, LoS mapping,
  composite-path enumeration;
* :mod:`ckmsense.pathmap` — per-path Gaussian statistics interface and the
  exact-geometry oracle map;
* :mod:`ckmsense.cadm` — the learned channel angle-delay map (training,
  analytic Jacobian, persistence);
* :mod:`ckmsense.sensing` — noisy observations, composite likelihood,
  gradient-descent localizer, geometric baselines;
* :mod:`ckmsense.crlb` — Fisher information and position bounds;
* :mod:`ckmsense.bench` — reproducible Monte-Carlo sweeps, CSVs, plots;
* :mod:`ckmsense.cli` — the ``ckmsense`` command.
"""

from .geometry import (SPEED_OF_LIGHT, CommChannelKnowledge, CommPath,
                       CompositePath, Environment, GeometryError,
                       InvalidObservationError, Point2, Scatterer,
                       composite_index, composite_pair_to_index,
                       enumerate_composite_paths, invert_los, load_scene,
                       los_angle_delay, save_scene, single_bounce_paths,
                       wrap_angle)
from .pathmap import (GeometricPathMap, PathStats, PathStatsJacobian,
                      canonical_slot_order, top_paths_batch)
from .cadm import (CadmModel, GaussianPathDist, ModelFormatError, NumericError,
                   TrainingConfig, TrainingFailureError, TrainingSet,
                   cadm_forward, cadm_jacobian, cadm_load, cadm_save,
                   cadm_train, prediction_errors)
from .sensing import (ErrorSpec, LocalizationFailureError, LocalizationResult,
                      LocalizerConfig, SensingObservation, localize_ckm,
                      localize_geometry_los, localize_geometry_nlos,
                      nll_batch, nll_grad_batch, sensing_nll,
                      sensing_nll_gradient, synthesize_los_observation,
                      synthesize_observation)
from .crlb import (FimReport, composite_mean_jacobian, crlb_sweep,
                   fim_constant_variance, fim_los_geometry, fim_monte_carlo)
from .bench import (METHODS, CrlbRow, ScenarioConfig, SweepRow, TrialRecord,
                    build_training_set, emit_plots, generate_scene,
                    load_scenario_config, run_crlb_sweep, run_sweep,
                    sweep_points, train_scene_models)

__version__ = "0.1.0"
