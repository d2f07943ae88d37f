"""SNR-adaptive joint source-channel coding for massive-MIMO CSI feedback.

The package spans the full experimental chain: synthetic clustered-multipath
FDD channel generation, angular-delay transforms, a differentiable fading
feedback channel with receive combining, SNR-adaptive encoder/decoder networks,
quantized digital baselines, training loops, NMSE evaluation, and an
experiment runner exposed through the csi-djscc command.
"""

from .errors import (ConfigError, ContractError, DatasetError,
                     DegenerateInputError, StageError, TrainingDiverged)
from .scenario import ChannelScenario, TruncationSpec, PROFILES, get_profile
from .transforms import (AngularDelayMatrix, ad_to_sf, retained_energy_fraction,
                         sf_to_ad, truncate, zero_pad)
from .datagen import (CsiDataset, NormStats, dataset_sparsity, denormalize,
                      generate_dataset, load_dataset, normalize, sample_paths,
                      save_dataset, synthesize_csi)
from .channel import (ChannelConfig, apply_awgn, apply_channel, apply_fading_mrc,
                      complex_to_real, make_generator, power_normalize,
                      real_to_complex, snr_to_noise_power)
from .networks import (AFModule, ModelBundle, count_params, group_param_count,
                       init_params, load_group_blobs, load_bundle_meta,
                       save_bundle)
from .quantization import (IdealSchemeSpec, QuantizerSpec, capacity,
                           capacity_ergodic, dequantize, envelope,
                           ideal_curve, ideal_dimension, quantize,
                           sscc_ideal_nmse)
from .pipelines import (FeedbackModel, PipelineConfig, SnrPolicy, build_bundle,
                        load_pipeline_bundle, network_inputs, reconstruct)
from .training import (BitLevelConfig, TrainConfig, TrainReport, loss_e2e,
                       sample_snr, train, train_bitlevel)
from .evaluation import (SweepResult, cliff_metric, load_results, make_report,
                         nmse, snr_sweep)
from .experiments import (ExperimentConfig, list_presets, load_config,
                          load_preset, run_experiment)

__version__ = "0.1.0"
