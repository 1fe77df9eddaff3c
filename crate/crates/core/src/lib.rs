//! Voice-cloning evaluation: compare reference and generated recordings by
//! speaker-embedding similarity and ten acoustic-feature similarities.

pub mod audio;
pub mod cli;
pub mod embedding;
pub mod features;
pub mod pipeline;
pub mod similarity;
