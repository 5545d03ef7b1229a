"""Short-range radar hand-gesture recognition toolkit.

Sweep framing, range-frequency Doppler features, a compact CNN+TCN
classifier with from-scratch training, post-training quantization, and
static memory accounting, plus a synthetic radar simulator used as a
physics oracle.
"""

from .errors import FormatError, RadarGestError, ValidationError
from .features import (
    AuxFeatureVector,
    FeatureFrame,
    aux_feature,
    compute_rfdm,
    normalize_frame,
    signal_variation_2d,
)
from .gradcheck import grad_check
from .memplan import MemoryPlan, memory_plan
from .model import (
    ModelConfig,
    Network,
    build_network,
    count_macs,
    count_params,
    forward_sequence,
    load_network,
    lstm_param_formula,
    network_backward,
    save_network,
    sequence_param_table,
    tcn_param_formula,
)
from .pipeline import dataset_from_recordings, frame_features, sequences_from_recording
from .quantize import (
    QuantizedNetwork,
    QuantParams,
    calibrate_and_quantize,
    load_quantized,
    model_size_bytes,
    quantized_forward_sequence,
    save_quantized,
)
from .recording import (
    RawFrame,
    SweepRecording,
    decode_recording,
    encode_recording,
    frame_stream,
    read_recording,
    write_recording,
)
from .synth import (
    GESTURE_CLASSES,
    SynthTargetSpec,
    build_synthetic_corpus,
    make_gesture_recording,
    predict_doppler_bin,
    synth_recording,
)
from .training import (
    GestureDataset,
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    evaluate,
    split_cv5,
    split_loocv,
    train,
)

__version__ = "0.1.0"
