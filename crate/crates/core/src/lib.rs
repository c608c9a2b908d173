//! Contrastive distillation of sentence encoders with a negative queue and
//! hard-negative pre-filtering, margin-scored (xsim) similarity search, and
//! parallel corpus filtering, at desk scale with linear hashed-feature
//! encoders.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod filter;
pub mod margin;
pub mod synth;

pub use contrastive::{
    batch_infonce_loss, equalize_negatives, filtered_infonce_loss, infonce_loss, make_batches,
    prefilter_mask, queue_update, student_loss_and_grad, train_distill, train_from, train_step, EpochStats, FilterSet,
    NegativeQueue, NegativesSource, StepReport, TrainConfig, TrainOutcome,
};
pub use corpus::{count_tokens, SentencePair};
pub use embedding::{cosine, l2_normalize, read_embeddings, write_embeddings, Embedding, EmbeddingMatrix};
pub use encoder::{featurize, EncoderParams, FeaturizerConfig, SparseFeatures, WeightGrad};
pub use error::{Error, Result};
pub use filter::{score_corpus, select_by_token_budget, BudgetSpec, ScoredPair};
pub use margin::{align, knn, margin, xsim_error_rate, AlignmentResult, MarginKind, SearchConfig};
pub use synth::{gen_cipher_corpus, inject_noise, CipherSpec, NoisyCorpus};
