//! On-disk corpus: WAV files, a manifest and a trials list.
//!
//! ```text
//! <dir>/manifest.csv   utterance_id,speaker_id,path,duration,seed
//! <dir>/trials.csv     trial_id,enroll_id,test_id,is_target,partition
//! <dir>/wav/<utterance_id>.wav
//! ```
//!
//! Paths in the manifest are relative to `<dir>`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use asv_vote_core::corpus::Corpus;
use asv_vote_core::metrics::{Partition, Trial, TrialSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{core_err, csv_err, io_err, CliError, Result};
use crate::wav;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const WAV_DIR: &str = "wav";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub speaker_id: usize,
    pub path: String,
    pub duration: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: usize,
    pub enroll_id: String,
    pub test_id: String,
    pub is_target: bool,
    pub partition: String,
}

/// A corpus read back from disk, waveforms already in the float domain.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub manifest: Vec<ManifestRow>,
    pub waveforms: Vec<Vec<f64>>,
    /// Dense speaker labels `0..n_speakers`, parallel to `manifest`.
    pub labels: Vec<usize>,
    pub trials: TrialSet,
    pub sample_rate: u32,
}

impl LoadedCorpus {
    pub fn n_speakers(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn utterance_id(&self, index: usize) -> &str {
        &self.manifest[index].utterance_id
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], stage: &'static str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(stage, path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(stage, path))?;
    }
    w.flush().map_err(io_err(stage, path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(CliError::MissingInput {
            stage,
            path: path.to_path_buf(),
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(stage, path))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(stage, path))
}

/// Write WAVs, manifest and trials under `dir`, returning the corpus hash.
pub fn write_corpus(dir: &Path, corpus: &Corpus, trials: &TrialSet) -> Result<String> {
    let stage = "gen-corpus";
    let wav_dir = dir.join(WAV_DIR);
    std::fs::create_dir_all(&wav_dir).map_err(io_err(stage, &wav_dir))?;
    let mut manifest = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let rel = format!("{WAV_DIR}/{}.wav", u.utterance_id);
        wav::write_wav(&dir.join(&rel), &u.waveform.samples, u.waveform.sample_rate)?;
        manifest.push(ManifestRow {
            utterance_id: u.utterance_id.clone(),
            speaker_id: u.speaker_id,
            path: rel,
            duration: u.duration,
            seed: u.seed,
        });
    }
    let trial_rows: Vec<TrialRow> = trials
        .iter()
        .map(|(t, p)| TrialRow {
            trial_id: t.trial_id,
            enroll_id: manifest[t.enroll].utterance_id.clone(),
            test_id: manifest[t.test].utterance_id.clone(),
            is_target: t.is_target,
            partition: p.name().to_string(),
        })
        .collect();
    write_csv(&dir.join(MANIFEST_FILE), &manifest, stage)?;
    write_csv(&dir.join(TRIALS_FILE), &trial_rows, stage)?;
    corpus_hash(dir)
}

/// SHA-256 over the manifest, the trials list and every WAV in manifest
/// order.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let stage = "hash corpus";
    let manifest_path = dir.join(MANIFEST_FILE);
    let trials_path = dir.join(TRIALS_FILE);
    let manifest: Vec<ManifestRow> = read_csv(&manifest_path, stage)?;
    let mut hasher = Sha256::new();
    for path in [manifest_path, trials_path]
        .into_iter()
        .chain(manifest.iter().map(|m| dir.join(&m.path)))
    {
        hasher.update(std::fs::read(&path).map_err(io_err(stage, &path))?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn parse_partition(s: &str) -> Option<Partition> {
    [Partition::Dev, Partition::Eval].into_iter().find(|p| p.name() == s)
}

pub fn read_corpus(dir: &Path) -> Result<LoadedCorpus> {
    let stage = "load corpus";
    let manifest: Vec<ManifestRow> = read_csv(&dir.join(MANIFEST_FILE), stage)?;
    let trial_rows: Vec<TrialRow> = read_csv(&dir.join(TRIALS_FILE), stage)?;
    if manifest.is_empty() {
        return Err(CliError::Invalid {
            stage,
            msg: format!("{} lists no utterances", dir.join(MANIFEST_FILE).display()),
        });
    }
    let mut sample_rate = None;
    let mut waveforms = Vec::with_capacity(manifest.len());
    for row in &manifest {
        let path: PathBuf = dir.join(&row.path);
        let w = wav::read_wav(&path)?;
        if *sample_rate.get_or_insert(w.sample_rate) != w.sample_rate {
            return Err(CliError::Invalid {
                stage,
                msg: format!("{}: sample rate {} differs from the rest of the corpus", path.display(), w.sample_rate),
            });
        }
        waveforms.push(w.samples);
    }
    let mut speakers: Vec<usize> = manifest.iter().map(|m| m.speaker_id).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let labels = manifest
        .iter()
        .map(|m| speakers.binary_search(&m.speaker_id).expect("speaker listed"))
        .collect();
    let index: HashMap<&str, usize> = manifest.iter().enumerate().map(|(i, m)| (m.utterance_id.as_str(), i)).collect();
    let lookup = |id: &str| {
        index.get(id).copied().ok_or_else(|| CliError::Invalid {
            stage,
            msg: format!("trial references unknown utterance {id:?}"),
        })
    };
    let mut trials = Vec::with_capacity(trial_rows.len());
    let mut partitions = Vec::with_capacity(trial_rows.len());
    for row in &trial_rows {
        trials.push(Trial {
            trial_id: row.trial_id,
            enroll: lookup(&row.enroll_id)?,
            test: lookup(&row.test_id)?,
            is_target: row.is_target,
        });
        partitions.push(parse_partition(&row.partition).ok_or_else(|| CliError::Invalid {
            stage,
            msg: format!("trial {}: unknown partition {:?}", row.trial_id, row.partition),
        })?);
    }
    let trials = TrialSet::new(trials, partitions).map_err(core_err(stage))?;
    Ok(LoadedCorpus {
        manifest,
        waveforms,
        labels,
        trials,
        sample_rate: sample_rate.expect("non-empty manifest"),
    })
}
