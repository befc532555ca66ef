"""GMM voice conversion with glottal waveform separation.

Pitch-synchronous closed-phase LPC splits speech into a vocal-tract filter and
a glottal residual; a joint GMM maps source LSFs to target LSFs and excitation
prototypes learned from the target speaker replace the source residual.
"""
from .wavio import (ParallelCorpus, UtterancePair, Waveform, ingest_corpus, load_wav,
                    normalize_peak, save_wav)
from .lpc import (LpcModel, LsfVector, inverse_filter, levinson_durbin, lpc_analysis,
                  lpc_to_lsf, lsf_to_lpc, synthesize)
from .glottal import (AnalysisFrame, GciMarks, PitchConfig, PitchTrack, analyze,
                      closed_phase_lpc, detect_gci, estimate_pitch, frame_pitch_synchronous)
from .align import FeatureSequence, WarpPath, dtw_align
from .gmm import EmConfig, Gmm, JointGmm, em_fit, posterior, regress
from .conversion import (ConversionConfig, ConversionModel, convert, load_model,
                         predict_excitation, save_model, train)
from .evaluation import (EvalReport, ExperimentGrid, avg_spectral_distortion, evaluate,
                         run_experiment, snr_db)
from .errors import DataError, NumericalError, VcError

__version__ = "0.1.0"
