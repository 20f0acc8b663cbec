//! Actigraphy records, preprocessing into windows, and the synthetic cohort generator.

mod container;
mod preprocess;
mod records;
mod synthetic;
mod window;

pub use container::{
    read_windows, read_windows_from, write_windows, write_windows_to, CONTAINER_MAGIC,
    CONTAINER_VERSION,
};
pub use preprocess::{
    assert_no_leakage, assign_splits, interpolate_gaps, preprocess, split_sizes, Normalization,
    PreprocessConfig, PreprocessReport, Preprocessed, STD_FLOOR,
};
pub use records::{
    format_timestamp, parse_actigraphy_csv, parse_labels_csv, write_actigraphy_csv,
    write_labels_csv, ParseReport, ParticipantRecord, LABEL_COLUMNS,
};
pub use synthetic::{
    generate_synthetic, participant_id, sample_labels, synthesize_participant, ClassEffects,
    Prevalence, SyntheticConfig, EPOCH_START,
};
pub use window::{
    batch_tensor, Labels, Split, Task, Window, CHANNELS, SAMPLE_PERIOD_SECS, WINDOW_LENGTH,
};
