"""Heart sound segmentation and classification.

A regime-switching AR model in companion state-space form drives three
segmentation schemes (switching Kalman filter, switching Kalman smoother,
and a fusion of the filter with a duration-dependent Viterbi decoder);
segmented beats are classified normal / abnormal / x-factor by
Gaussian-mixture HMMs over MFCC features.
"""

from .duration import (DurationModel, DurationStats, HeartRateEstimate,
                       build_duration_model, cyclic_successor_matrix,
                       duration_stats_from_tracks, estimate_heart_rate,
                       skf_viterbi)
from .errors import (ConfigError, EstimationError, FormatError,
                     HeartMsarError, NumericalError, ValidationError)
from .hmm import (BeatSegment, ClassifierBank, HmmParams, baum_welch_train,
                  classify_beat, classify_recording, forward_loglik,
                  load_bank, save_bank, segmental_kmeans_init, viterbi_loglik,
                  window_xfactor)
from .io import (AnnotationTrack, DatasetManifest, ManifestEntry, Recording,
                 load_annotations, load_manifest, load_recording,
                 load_state_runs, rescale_track, resample, save_annotations,
                 save_manifest, save_recording, save_state_runs)
from .metrics import (PlainMetrics, RegimeMetrics, SegConfusion, SegMetrics,
                      XFactorConfusion, class_metrics_plain,
                      class_metrics_xfactor, kfold_split, penalized_f1,
                      seg_metrics, segmentation_confusion)
from .mfcc import (FeatureSequence, MfccConfig, extract_mfcc, frame_signal,
                   load_features, mel_filterbank, save_features)
from .msar import (ClusteredSeries, MsarParams, StateSpaceView,
                   dynamic_cluster, estimate_obs_noise, fit_ar_least_squares,
                   init_transition_matrix, load_msar, pool_parameters,
                   save_msar, to_state_space)
from .pipeline import (PipelineConfig, SegmenterModel, load_config,
                       run_classify, run_segment, save_config,
                       segment_signal, train_classifier, train_segmenter)
from .preprocess import (PreprocessConfig, bandpass_filter, preprocess_signal,
                         remove_spikes, zscore_normalize)
from .slds import (FilteredTrajectory, GaussianBelief, SmoothedTrajectory,
                   collapse, decode_map_states, kalman_filter_step,
                   save_trajectory, skf, sks)
from .synth import (SynthSpec, cyclic_plan, demo_durations, demo_params,
                    generate_msar, plan_to_track, write_synthetic_dataset)

__version__ = "0.1.0"
