//! Trial files: history and front CSVs, and resumable trial state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pareto::FrontPoint;
use super::{EvolveError, GenerationRecord, Individual, ParetoFront, Population, Result, TrialState};
use crate::metrics::FitnessRecord;
use crate::model::{CheckpointMeta, NetworkGenome, CHECKPOINT_VERSION};

pub const HISTORY_HEADER: &str = "generation,best_ce,best_mse,valid_fraction";
pub const FRONT_HEADER: &str = "ce,mse,trial,age";
pub const TRIAL_STATE_FILE: &str = "state.json";
const STATE_FORMAT_VERSION: u32 = 1;

/// One front row. The member index is not written.
#[derive(Serialize, Deserialize)]
struct FrontRow {
    ce: f64,
    mse: f64,
    trial: usize,
    age: u32,
}

fn write_rows<T: Serialize>(path: &Path, header: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>().join(",") != header {
        return Err(EvolveError::Format(format!(
            "{}: expected header {header}",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `best_mse` is left empty for generations without a valid member.
pub fn write_history_csv(path: &Path, history: &[GenerationRecord]) -> Result<()> {
    write_rows(path, HISTORY_HEADER, history)
}

pub fn read_history_csv(path: &Path) -> Result<Vec<GenerationRecord>> {
    read_rows(path, HISTORY_HEADER)
}

pub fn write_front_csv(path: &Path, front: &ParetoFront) -> Result<()> {
    let rows = front.points.iter().map(|p| FrontRow {
        ce: p.ce,
        mse: p.mse,
        trial: p.trial,
        age: p.age,
    });
    write_rows(path, FRONT_HEADER, rows)
}

/// Reads a front file. Member indices are not stored and come back as the
/// row number.
pub fn read_front_csv(path: &Path) -> Result<ParetoFront> {
    let rows: Vec<FrontRow> = read_rows(path, FRONT_HEADER)?;
    let points = rows
        .into_iter()
        .enumerate()
        .map(|(index, r)| FrontPoint {
            ce: r.ce,
            mse: r.mse,
            trial: r.trial,
            age: r.age,
            index,
        })
        .collect();
    Ok(ParetoFront { points })
}

#[derive(Serialize, Deserialize)]
struct MemberState {
    checkpoint: String,
    age: u32,
    fitness: Option<FitnessRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    format_version: u32,
    trial: usize,
    trial_seed: u64,
    generation: usize,
    parent_count: usize,
    size: usize,
    members: Vec<MemberState>,
    history: Vec<GenerationRecord>,
}

impl TrialState {
    /// Writes one checkpoint per member plus `state.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut members = Vec::with_capacity(self.population.members.len());
        for (k, m) in self.population.members.iter().enumerate() {
            let name = format!("member-{k:03}.ckpt");
            let meta = CheckpointMeta {
                format_version: CHECKPOINT_VERSION,
                seed: self.trial_seed,
                provenance: format!(
                    "trial {} generation {} member {k}",
                    self.trial, self.population.generation
                ),
            };
            m.genome.save(&dir.join(&name), &meta)?;
            members.push(MemberState {
                checkpoint: name,
                age: m.age,
                fitness: m.fitness.clone(),
            });
        }
        let state = StateFile {
            format_version: STATE_FORMAT_VERSION,
            trial: self.trial,
            trial_seed: self.trial_seed,
            generation: self.population.generation,
            parent_count: self.population.parent_count,
            size: self.population.size,
            members,
            history: self.history.clone(),
        };
        let mut s = serde_json::to_string_pretty(&state)?;
        s.push('\n');
        // Write then rename so an interrupted save leaves the previous state.
        let tmp = dir.join(format!("{TRIAL_STATE_FILE}.tmp"));
        std::fs::write(&tmp, s)?;
        std::fs::rename(tmp, dir.join(TRIAL_STATE_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrialState> {
        let text = std::fs::read_to_string(dir.join(TRIAL_STATE_FILE))?;
        let state: StateFile = serde_json::from_str(&text)?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(EvolveError::Format(format!(
                "unsupported state version {}",
                state.format_version
            )));
        }
        let members = state
            .members
            .into_iter()
            .map(|m| {
                Ok(Individual {
                    genome: NetworkGenome::load(&dir.join(&m.checkpoint))?,
                    fitness: m.fitness,
                    age: m.age,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialState {
            trial: state.trial,
            trial_seed: state.trial_seed,
            population: Population {
                members,
                generation: state.generation,
                parent_count: state.parent_count,
                size: state.size,
            },
            history: state.history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let h = vec![
            GenerationRecord {
                generation: 0,
                best_ce: 1.0 / 3.0,
                best_mse: None,
                valid_fraction: 0.125,
            },
            GenerationRecord {
                generation: 1,
                best_ce: f64::MAX,
                best_mse: Some(1e-300),
                valid_fraction: 1.0,
            },
        ];
        write_history_csv(&path, &h).unwrap();
        assert_eq!(read_history_csv(&path).unwrap(), h);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("generation,best_ce,best_mse,valid_fraction\n0,"));
    }

    #[test]
    fn front_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = ParetoFront {
            points: vec![FrontPoint {
                ce: 0.1,
                mse: 2.5,
                trial: 3,
                age: 7,
                index: 0,
            }],
        };
        write_front_csv(&path, &f).unwrap();
        assert_eq!(read_front_csv(&path).unwrap(), f);
    }
}
