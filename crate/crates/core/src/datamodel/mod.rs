// SPDX-License-Identifier: MIT OR Apache-2.0

//! Domain types, the binary activation store, and dataset handling.

mod dataset;
mod store;
mod types;

pub use dataset::{
    build_qa_instances, pair_records, pair_tasks, CandidateEntry, Dataset, QaDataset, SkippedTask,
    TaskEntry,
};
pub use store::{read_store, write_store, ActivationStore, ManifestEntry, StoreSummary, MAGIC, VERSION};
pub use types::{
    ActivationRecord, Benchmark, CandidateSolution, ConfidencePayload, HiddenStates, Label,
    PairedActivations, PromptKind, QaInstance, TaskSpec, N_LEVELS,
};
