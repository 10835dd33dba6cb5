//! Seeded dataset and benchmark generation.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::observe::{Attribute, AttributedPerson, Placement, SizeLabel};
use crate::data::prior::{sample_pose, PosePrior};
use crate::data::record::{write_records, ChatRecord, RecordBuilder};
use crate::data::templates::vqa_pairs;
use crate::error::{Error, Result};

pub const DEFAULT_SPG_SIZE: usize = 780;
pub const DEFAULT_RPE_SIZE: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Text2pose,
    Obs2pose,
    Rpe,
    Spg,
    Vqa,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text2pose" => Ok(DatasetKind::Text2pose),
            "obs2pose" => Ok(DatasetKind::Obs2pose),
            "rpe" => Ok(DatasetKind::Rpe),
            "spg" => Ok(DatasetKind::Spg),
            "vqa" => Ok(DatasetKind::Vqa),
            other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub builder: RecordBuilder,
    pub prior: PosePrior,
}

impl Default for Generator {
    fn default() -> Self {
        Generator {
            builder: RecordBuilder::default(),
            prior: PosePrior::default_prior(),
        }
    }
}

impl Generator {
    pub fn generate(&self, kind: DatasetKind, n: usize, seed: u64) -> Result<Vec<ChatRecord>> {
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            DatasetKind::Vqa => {
                let pairs = vqa_pairs();
                let mut order: Vec<usize> = (0..pairs.len()).collect();
                let mut records = Vec::with_capacity(n);
                for i in 0..n {
                    if i % pairs.len() == 0 {
                        order.shuffle(&mut rng);
                    }
                    let (q, a) = &pairs[order[i % pairs.len()]];
                    records.push(self.builder.vqa(q, a, rng.next_u64()));
                }
                Ok(records)
            }
            _ => (0..n)
                .map(|_| {
                    let pose_seed = rng.next_u64();
                    let record_seed = rng.next_u64();
                    self.one(kind, pose_seed, record_seed)
                })
                .collect(),
        }
    }

    fn one(&self, kind: DatasetKind, pose_seed: u64, record_seed: u64) -> Result<ChatRecord> {
        let pose = || sample_pose(pose_seed, &self.prior);
        match kind {
            DatasetKind::Text2pose => self.builder.text2pose(&pose(), record_seed),
            DatasetKind::Spg => self.builder.spg(&pose(), record_seed),
            DatasetKind::Obs2pose => self.builder.obs2pose(&pose(), record_seed),
            DatasetKind::Rpe => {
                let (persons, query) = self.scene(pose_seed);
                self.builder.rpe(&persons, query, record_seed)
            }
            DatasetKind::Vqa => unreachable!("handled by generate"),
        }
    }

    /// A 2-4 person scene, persons ordered left to right, with a query
    /// attribute that exactly one person carries.
    pub fn scene(&self, seed: u64) -> (Vec<AttributedPerson>, Attribute) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(2..=4);
        let mut placements: Vec<Placement> = Placement::ALL
            .choose_multiple(&mut rng, count)
            .cloned()
            .collect();
        placements.sort();
        let persons: Vec<AttributedPerson> = placements
            .into_iter()
            .map(|placement| {
                let size = SizeLabel::ALL[rng.random_range(0..SizeLabel::ALL.len())];
                AttributedPerson::new(sample_pose(rng.next_u64(), &self.prior), placement, size)
            })
            .collect();
        let mut unique: Vec<Attribute> = persons
            .iter()
            .flat_map(|p| p.attributes.iter().cloned())
            .filter(|a| persons.iter().filter(|p| p.has(a)).count() == 1)
            .collect();
        unique.sort();
        let query = *unique
            .choose(&mut rng)
            .expect("placements are distinct, so at least one attribute is unique");
        (persons, query)
    }
}

/// Writes an SPG or RPE benchmark of `n` records.
pub fn build_benchmark(kind: DatasetKind, n: usize, seed: u64, out: impl AsRef<Path>) -> Result<Vec<ChatRecord>> {
    if !matches!(kind, DatasetKind::Spg | DatasetKind::Rpe) {
        return Err(Error::Config("benchmarks are spg or rpe".into()));
    }
    let records = Generator::default().generate(kind, n, seed)?;
    write_records(out, &records)?;
    Ok(records)
}
