"""Bit-exact simulator and compiler for a multi-channel DDS pulse sequencer.

The package models the full chain of a backplane-based RF pulse-sequencing
instrument: tuning-word arithmetic and phase accumulation, the compact
event encoding of pulse programs, phase-coherent edge timing, amplitude
shaping through a logarithmic VGA, the 48-bit master/card wire protocol,
conditional feedback on photon-count detection, analog upconversion
(doubler chains and Hartley single-sideband mixing), and the phase-noise /
jitter analysis toolbox.
"""

from .backplane import BROADCAST, Backplane, FrameError, LinkModel, WireWord, decode_word, \
    dump_frames, encode_word, format_word
from .coherence import CoherenceClock, coherent_pow
from .controller import (Controller, DetectionEvent, FeedbackBudget, PlaybackOutcomes,
                         PoissonOutcomes, run_experiment, threshold_detect,
                         update_path_latency_ns)
from .dsl import (CompiledSequence, DslSemanticError, DslSyntaxError, SourceError,
                  compile_source)
from .noise import (BandError, JitterBudget, SpectralDensity, VgaNoiseModel, combine_jitter,
                    estimate_psd, integrate_jitter, normalize_carrier, read_psd_csv,
                    synthesize_phase_noise, tone_level_dbc, vga_noise_floor, write_psd_csv)
from .playback import (ScheduledEdge, SequencingError, collect_edges, render_tone_window,
                       render_window, walk_program)
from .sequence import (Branch, CodecError, EdgeEvent, EncodedProgram, Hold, Loop, PhaseMode,
                       PlayEdge, SequenceProgram, TableOverflowError, WaitTrigger, decode,
                       encode, encoded_size, validate)
from .shaping import (EnvelopeSpec, PulseShape, Shape, VgaModel, control_lowpass,
                      envelope_samples, first_sidelobe_db, precompensate,
                      reconstruct_envelope, rise_profile, vga_gain_db)
from .timebase import (ASF_FULL_SCALE, ASF_REL_STEP, DAC_FULL_SCALE, FTW_WRAP, NcoState,
                       OFF_WORDS, POW_STEP_RAD, POW_WRAP, RangeError, Timebase,
                       TuningWordSet, amplitude_from_asf, asf_from_amplitude, fast_forward,
                       freq_from_ftw, ftw_from_freq, phase_from_pow, pow_from_phase,
                       step_samples)
from .upconversion import (BandLimits, DoublerChain, Sideband, SsbConfig, TuneResult,
                           apply_doubler_chain, double, image_rejection_db,
                           quantized_image_model, ssb_mix, tone_power_dbc, tune_imbalance)

__version__ = "0.1.0"
