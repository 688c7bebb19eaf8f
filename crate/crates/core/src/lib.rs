//! Multi-fake evolutionary auxiliary-classifier GAN training for imbalanced
//! classification of hyperspectral image patches, with CNN, oversampled CNN,
//! ACGAN and kNN baselines.

pub mod tensor;
pub mod data;
pub mod networks;
pub mod losses;
pub mod training;
pub mod eval;
pub mod app;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/networks.md")]
    struct Networks;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
