//! Synthetic data: pose sampling, captioning, observations, chat records,
//! batch mixing and benchmark construction.

pub mod caption;
pub mod generate;
pub mod mixing;
pub mod observe;
pub mod prior;
pub mod record;
pub mod templates;

pub use caption::{activity_of, caption_pose, nearest_prototype, PROTOTYPES};
pub use generate::{build_benchmark, DatasetKind, Generator};
pub use mixing::{batch_counts, MixedBatches};
pub use observe::{observe, Attribute, AttributedPerson, Camera, ObservationSeq, Placement, SizeLabel};
pub use prior::{sample_pose, PosePrior};
pub use record::{read_poses, read_records, write_poses, write_records, ChatRecord, RecordBuilder, RecordKind};
pub use templates::{shipped_corpus, Templates};
