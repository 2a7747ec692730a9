//! Checkpoint archives, weight-change analysis and low-rank adapters.

pub mod archive;
pub mod lora;
pub mod mawc;

pub use archive::{ArchiveBuilder, Dtype, TensorArchive, TensorInfo};
pub use lora::{half_rank_alpha, lora_delta, merge_archive, merge_lora, LoraSpec};
pub use mawc::{block_aggregate, load_group_rules, mawc, BlockSummary, GroupRule, MawcReport, WeightDelta};
