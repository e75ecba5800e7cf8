//! Style-content disentangled generator with AdaIN fusion, a patch
//! discriminator, and per-cluster training.

mod checkpoint;
mod network;
mod params;
mod train;

pub use checkpoint::{
    claim_checkpoint_dir, load_checkpoint, pick_style, read_manifest, save_checkpoint, synthesize, synthesize_with,
    Manifest, TensorEntry, MANIFEST, WEIGHTS,
};
pub use network::{
    check_divisible, content_forward, decoder_forward, discriminate, discriminator_forward, encode_content,
    encode_style, generate, generator_forward, gram_matrix, init_discriminator, init_generator, Architecture,
    DecoderTrace, GeneratorTrace, ScaleStats, StyleBank, StyleBatch, StyleCode, BANK_SCALES, DISC_RECEPTIVE_FIELD,
    INJECT_SCALES, LRELU_SLOPE,
};
pub use params::{Bound, ParamSet};
pub use train::{
    discriminator_loss, evaluation_styles, generator_loss, mean_l1, shared_bank, train_cluster, with_flips,
    write_log, GanModel, LogRow, TrainConfig, TrainOutcome, TrainingPair, LOG_HEADER,
};
