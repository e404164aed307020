//! Durable run cache: one JSON file per simulated conversation plus an
//! append-only answer-record log with an in-memory index.
//!
//! Layout under the run directory:
//!
//! ```text
//! <run dir>/transcripts/<key-hash>.json   one cached conversation each
//! <run dir>/records.jsonl                 one AnswerRecord per line
//! ```
//!
//! The log is append-only so interrupted runs resume by replaying it; the
//! line format is plain JSON for diffability. Writes are serialized through
//! internal locks, satisfying the per-cell write ordering the pipeline
//! needs.

use super::{AnswerRecord, SimError};
use crate::domain::Transcript;
use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

struct DiskStore {
    transcripts_dir: PathBuf,
    log: Mutex<File>,
}

pub struct Cache {
    disk: Option<DiskStore>,
    transcripts: Mutex<HashMap<String, Transcript>>,
    records: Mutex<BTreeMap<(String, u32), AnswerRecord>>,
}

impl Cache {
    /// Purely in-memory cache (tests, benchmarks, throwaway runs).
    pub fn memory() -> Cache {
        Cache {
            disk: None,
            transcripts: Mutex::new(HashMap::new()),
            records: Mutex::new(BTreeMap::new()),
        }
    }

    /// Opens (or creates) the durable cache under `dir`, replaying any
    /// existing record log.
    pub fn open(dir: &std::path::Path) -> Result<Cache, SimError> {
        let transcripts_dir = dir.join("transcripts");
        fs::create_dir_all(&transcripts_dir)?;
        let log_path = dir.join("records.jsonl");
        let mut records = BTreeMap::new();
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: AnswerRecord = serde_json::from_str(&line)
                    .map_err(|e| SimError::CorruptCache(format!("{e}: {line}")))?;
                records.insert((record.cell_hash.clone(), record.item), record);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Cache {
            disk: Some(DiskStore {
                transcripts_dir,
                log: Mutex::new(log),
            }),
            transcripts: Mutex::new(HashMap::new()),
            records: Mutex::new(records),
        })
    }

    pub fn transcript(&self, key_hash: &str) -> Option<Transcript> {
        if let Some(t) = self.transcripts.lock().unwrap().get(key_hash) {
            return Some(t.clone());
        }
        let disk = self.disk.as_ref()?;
        let path = disk.transcripts_dir.join(format!("{key_hash}.json"));
        let payload = fs::read_to_string(path).ok()?;
        let transcript: Transcript = serde_json::from_str(&payload).ok()?;
        self.transcripts
            .lock()
            .unwrap()
            .insert(key_hash.to_string(), transcript.clone());
        Some(transcript)
    }

    pub fn put_transcript(&self, key_hash: &str, transcript: &Transcript) -> Result<(), SimError> {
        if let Some(disk) = &self.disk {
            let path = disk.transcripts_dir.join(format!("{key_hash}.json"));
            let tmp = disk.transcripts_dir.join(format!("{key_hash}.json.tmp"));
            fs::write(&tmp, serde_json::to_string_pretty(transcript).unwrap())?;
            fs::rename(&tmp, &path)?;
        }
        self.transcripts
            .lock()
            .unwrap()
            .insert(key_hash.to_string(), transcript.clone());
        Ok(())
    }

    pub fn record(&self, cell_hash: &str, item: u32) -> Option<AnswerRecord> {
        self.records
            .lock()
            .unwrap()
            .get(&(cell_hash.to_string(), item))
            .cloned()
    }

    pub fn append_record(&self, record: &AnswerRecord) -> Result<(), SimError> {
        if let Some(disk) = &self.disk {
            let mut log = disk.log.lock().unwrap();
            writeln!(log, "{}", serde_json::to_string(record).unwrap())?;
        }
        self.records
            .lock()
            .unwrap()
            .insert((record.cell_hash.clone(), record.item), record.clone());
        Ok(())
    }

    /// All cached records grouped per cell, in canonical key order.
    pub fn grouped_records(&self) -> BTreeMap<super::CellKey, Vec<AnswerRecord>> {
        let mut grouped: BTreeMap<super::CellKey, Vec<AnswerRecord>> = BTreeMap::new();
        for record in self.records.lock().unwrap().values() {
            grouped
                .entry(record.cell.clone())
                .or_default()
                .push(record.clone());
        }
        grouped
    }

    pub fn n_records(&self) -> usize {
        self.records.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Participant;
    use crate::domain::{self, TopicId};

    fn sample_record(item: u32) -> AnswerRecord {
        AnswerRecord {
            cell_hash: "abcd1234".into(),
            cell: crate::simulation::CellKey {
                seed: 1,
                topic: TopicId::Joke,
                participant: Participant::Persona("Gandalf".into()),
            },
            item,
            presented_order: vec![2, 0, 1, 3, 4, 5],
            chosen_letter: 'A',
            chosen_code: 3.0,
            raw_distribution: None,
        }
    }

    #[test]
    fn records_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = Cache::open(dir.path()).unwrap();
            cache.append_record(&sample_record(1)).unwrap();
            cache.append_record(&sample_record(2)).unwrap();
        }
        let cache = Cache::open(dir.path()).unwrap();
        assert_eq!(cache.n_records(), 2);
        assert_eq!(cache.record("abcd1234", 1), Some(sample_record(1)));
    }

    #[test]
    fn transcripts_round_trip_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let topic = domain::topic(&TopicId::Chess).unwrap();
        let transcript = Transcript::opener_only(None, topic, 9);
        {
            let cache = Cache::open(dir.path()).unwrap();
            cache.put_transcript("abc123", &transcript).unwrap();
        }
        let cache = Cache::open(dir.path()).unwrap();
        assert_eq!(cache.transcript("abc123"), Some(transcript));
        assert_eq!(cache.transcript("missing"), None);
    }

    #[test]
    fn memory_cache_works_without_disk() {
        let cache = Cache::memory();
        cache.append_record(&sample_record(1)).unwrap();
        assert_eq!(cache.n_records(), 1);
        assert!(cache.record("abcd1234", 2).is_none());
    }
}
