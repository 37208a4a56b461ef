//! The learned Koopman object: normalization, stable generator, SVD-DMD
//! residual encoder/decoder, initialization and serialization.

mod checkpoint;
mod koopman;
mod normalizer;
mod stable;

pub use checkpoint::{load_model, save_model, ModelCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use koopman::{
    init_from_dmd, DmdData, EigenFields, KoopmanModel, ModelVars, ParamGroup, ParamKind,
    Trainable, INIT_WEIGHT_STDDEV,
};
pub use normalizer::{NormalizationMode, Normalizer};
pub use stable::StableKoopman;
