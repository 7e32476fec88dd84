//! Transition records, offline datasets and the online replay buffer.
//!
//! A dataset file is one JSON metadata line followed by CSV rows, one per
//! transition:
//!
//! ```text
//! {"version":1,"env":"trading","gamma":0.99,...,"records":2}
//! episode,t,obs_0,obs_1,s,c,act_0,reward,next_obs_0,next_obs_1,next_s,next_c,done
//! 0,0,1,0,0,1,0.5,-0.5025,...
//! ```
//!
//! Alternatively the metadata can live in a `<name>.meta.json` sidecar next
//! to a plain `<name>.csv`. Floats are written with the shortest decimal
//! that round-trips, so loading restores every value bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, ExtendedState};
use crate::error::{Result, SrmError};
use crate::{seeded_rng, SimRng};

pub const FORMAT_VERSION: u32 = 1;

/// Tolerance of the `s`/`c` replay check on load.
pub const TRACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode: u64,
    pub t: u64,
    pub obs: Vec<f64>,
    pub s: f64,
    pub c: f64,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub next_s: f64,
    pub next_c: f64,
    pub done: bool,
}

impl TransitionRecord {
    pub fn state(&self) -> ExtendedState {
        ExtendedState {
            base: self.obs.clone(),
            s: self.s,
            c: self.c,
        }
    }

    pub fn next_state(&self) -> ExtendedState {
        ExtendedState {
            base: self.next_obs.clone(),
            s: self.next_s,
            c: self.next_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub env: String,
    pub gamma: f64,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Tag of the behaviour policy that produced the data.
    pub policy: String,
    pub seed: u64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub meta: DatasetMeta,
    pub records: Vec<TransitionRecord>,
}

impl TransitionDataset {
    pub fn empty(env: &str, gamma: f64, obs_dim: usize, action_dim: usize, policy: &str, seed: u64) -> Self {
        TransitionDataset {
            meta: DatasetMeta {
                version: FORMAT_VERSION,
                env: env.to_string(),
                gamma,
                obs_dim,
                action_dim,
                policy: policy.to_string(),
                seed,
                records: 0,
            },
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.records.push(record);
        self.meta.records = self.records.len();
    }

    /// Checks dimensions, the record count, episode structure and that
    /// `s`/`c` follow `extend_step` along every episode.
    pub fn validate(&self) -> Result<()> {
        let meta = &self.meta;
        if meta.records != self.records.len() {
            return Err(SrmError::Consistency {
                what: "record count".into(),
                expected: meta.records.to_string(),
                actual: self.records.len().to_string(),
            });
        }
        let mut prev: Option<&TransitionRecord> = None;
        for (k, r) in self.records.iter().enumerate() {
            if r.obs.len() != meta.obs_dim || r.next_obs.len() != meta.obs_dim {
                return Err(SrmError::Consistency {
                    what: format!("observation width of record {k}"),
                    expected: meta.obs_dim.to_string(),
                    actual: r.obs.len().max(r.next_obs.len()).to_string(),
                });
            }
            if r.action.len() != meta.action_dim {
                return Err(SrmError::Consistency {
                    what: format!("action width of record {k}"),
                    expected: meta.action_dim.to_string(),
                    actual: r.action.len().to_string(),
                });
            }
            let continues = matches!(prev, Some(p) if p.episode == r.episode);
            let (exp_s, exp_c) = match prev {
                Some(p) if continues => {
                    if p.done {
                        return Err(SrmError::Dataset(format!(
                            "record {} ends episode {} but record {k} continues it",
                            k - 1,
                            r.episode
                        )));
                    }
                    (p.next_s, p.next_c)
                }
                _ => (0.0, 1.0),
            };
            if !continues && r.t != 0 {
                return Err(SrmError::Dataset(format!("episode {} starts at t={} (record {k})", r.episode, r.t)));
            }
            let check = |what: &str, expected: f64, actual: f64| {
                if (expected - actual).abs() > TRACE_TOL * (1.0 + expected.abs()) {
                    Err(SrmError::Consistency {
                        what: format!("{what} of record {k}"),
                        expected: expected.to_string(),
                        actual: actual.to_string(),
                    })
                } else {
                    Ok(())
                }
            };
            check("s", exp_s, r.s)?;
            check("c", exp_c, r.c)?;
            check("next s", r.s + r.c * r.reward, r.next_s)?;
            check("next c", meta.gamma * r.c, r.next_c)?;
            prev = Some(r);
        }
        Ok(())
    }

    fn header_columns(&self) -> String {
        let mut cols = vec!["episode".to_string(), "t".to_string()];
        cols.extend((0..self.meta.obs_dim).map(|i| format!("obs_{i}")));
        cols.extend(["s".to_string(), "c".to_string()]);
        cols.extend((0..self.meta.action_dim).map(|i| format!("act_{i}")));
        cols.push("reward".into());
        cols.extend((0..self.meta.obs_dim).map(|i| format!("next_obs_{i}")));
        cols.extend(["next_s".to_string(), "next_c".to_string(), "done".to_string()]);
        cols.join(",")
    }

    /// CSV table (column header plus one row per record).
    pub fn to_csv_string(&self) -> String {
        let mut out = self.header_columns();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.episode, r.t);
            let floats = r
                .obs
                .iter()
                .chain([&r.s, &r.c])
                .chain(&r.action)
                .chain(std::iter::once(&r.reward))
                .chain(&r.next_obs)
                .chain([&r.next_s, &r.next_c]);
            for v in floats {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", u8::from(r.done));
        }
        out
    }

    /// Single-file form: metadata line followed by the CSV table.
    pub fn to_hybrid_string(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        out.push_str(&self.to_csv_string());
        Ok(out)
    }

    pub fn from_hybrid_str(text: &str) -> Result<Self> {
        let (head, table) = text
            .split_once('\n')
            .ok_or_else(|| SrmError::Truncated("missing metadata line".into()))?;
        let meta = parse_meta(head)?;
        Self::from_parts(meta, table)
    }

    pub fn from_parts(meta: DatasetMeta, table: &str) -> Result<Self> {
        let mut ds = TransitionDataset {
            records: Vec::with_capacity(meta.records),
            meta,
        };
        if !table.is_empty() && !table.ends_with('\n') {
            return Err(SrmError::Truncated("last row is not newline-terminated".into()));
        }
        let mut lines = table.lines();
        let header = lines.next().ok_or_else(|| SrmError::Truncated("missing column header".into()))?;
        if header != ds.header_columns() {
            return Err(SrmError::Dataset(format!("unexpected column header `{header}`")));
        }
        let width = 2 + 2 * ds.meta.obs_dim + ds.meta.action_dim + 6;
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(SrmError::Truncated(format!(
                    "row {k} has {} fields, expected {width}",
                    fields.len()
                )));
            }
            ds.records.push(parse_row(&fields, &ds.meta, k)?);
        }
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the hybrid file, or a `.csv` plus `.meta.json` sidecar when
    /// `path` ends in `.csv`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_csv(path) {
            std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
            std::fs::write(path, self.to_csv_string())?;
        } else {
            std::fs::write(path, self.to_hybrid_string()?)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_csv(path) {
            let meta = parse_meta(&std::fs::read_to_string(sidecar_path(path))?)?;
            Self::from_parts(meta, &std::fs::read_to_string(path)?)
        } else {
            Self::from_hybrid_str(&std::fs::read_to_string(path)?)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "csv")
}

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn parse_meta(text: &str) -> Result<DatasetMeta> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION as u64) => {}
        other => {
            return Err(SrmError::Version {
                found: other.map_or("none".to_string(), |v| v.to_string()),
                expected: FORMAT_VERSION,
            })
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn parse_row(fields: &[&str], meta: &DatasetMeta, k: usize) -> Result<TransitionRecord> {
    let bad = |col: usize| SrmError::Dataset(format!("row {k}: cannot parse column {col} (`{}`)", fields[col]));
    let int = |col: usize| fields[col].parse::<u64>().map_err(|_| bad(col));
    let float = |col: usize| fields[col].parse::<f64>().map_err(|_| bad(col));
    let floats = |start: usize, n: usize| (start..start + n).map(float).collect::<Result<Vec<f64>>>();
    let (o, a) = (meta.obs_dim, meta.action_dim);
    let mut col = 2;
    let obs = floats(col, o)?;
    col += o;
    let s = float(col)?;
    let c = float(col + 1)?;
    col += 2;
    let action = floats(col, a)?;
    col += a;
    let reward = float(col)?;
    col += 1;
    let next_obs = floats(col, o)?;
    col += o;
    let next_s = float(col)?;
    let next_c = float(col + 1)?;
    col += 2;
    let done = match fields[col] {
        "0" => false,
        "1" => true,
        _ => return Err(bad(col)),
    };
    Ok(TransitionRecord {
        episode: int(0)?,
        t: int(1)?,
        obs,
        s,
        c,
        action,
        reward,
        next_obs,
        next_s,
        next_c,
        done,
    })
}

/// Rolls `policy` (fed the extended-state features) for exactly `steps`
/// transitions. Episodes end at the environment's horizon; the last one is
/// cut short without a terminal flag when the budget runs out.
pub fn generate_dataset<P>(
    env: &mut dyn Environment,
    gamma: f64,
    mut policy: P,
    policy_tag: &str,
    steps: usize,
    seed: u64,
) -> Result<TransitionDataset>
where
    P: FnMut(&[f64], &mut SimRng) -> Vec<f64>,
{
    let action_dim = env.action_space().dim();
    let mut ds = TransitionDataset::empty(env.name(), gamma, env.obs_dim(), action_dim, policy_tag, seed);
    let mut rng = seeded_rng(seed);
    let mut episode = 0u64;
    let mut t = 0u64;
    let mut state = ExtendedState::initial(env.reset(&mut rng));
    for _ in 0..steps {
        let action = policy(&state.features(), &mut rng);
        if action.len() != action_dim {
            return Err(SrmError::input(format!(
                "policy produced {} action components, environment expects {action_dim}",
                action.len()
            )));
        }
        let out = env.step(&action, &mut rng);
        let next = state.step(out.reward, gamma, out.obs);
        ds.push(TransitionRecord {
            episode,
            t,
            obs: state.base.clone(),
            s: state.s,
            c: state.c,
            action,
            reward: out.reward,
            next_obs: next.base.clone(),
            next_s: next.s,
            next_c: next.c,
            done: out.done,
        });
        if out.done {
            episode += 1;
            t = 0;
            state = ExtendedState::initial(env.reset(&mut rng));
        } else {
            t += 1;
            state = next;
        }
    }
    Ok(ds)
}

/// Uniform draw with replacement.
pub fn sample_batch<'a>(
    records: &'a [TransitionRecord],
    m: usize,
    rng: &mut SimRng,
) -> Result<Vec<&'a TransitionRecord>> {
    if records.is_empty() {
        return Err(SrmError::input("cannot sample from an empty dataset"));
    }
    Ok((0..m).map(|_| &records[rng.random_range(0..records.len())]).collect())
}

/// FIFO replay memory for online training.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            records: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, m: usize, rng: &mut SimRng) -> Result<Vec<&TransitionRecord>> {
        sample_batch(&self.records, m, rng)
    }

    /// Contents in insertion order (oldest first).
    pub fn ordered(&self) -> Vec<TransitionRecord> {
        if self.records.len() < self.capacity {
            self.records.clone()
        } else {
            let (a, b) = self.records.split_at(self.next);
            b.iter().chain(a).cloned().collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{fixtures, TabularEnv};

    fn one_state_env() -> TabularEnv {
        let mut mdp = fixtures::deterministic_chain();
        mdp.horizon = 2;
        TabularEnv::new(mdp, "chain").unwrap()
    }

    fn fixture_dataset() -> TransitionDataset {
        let mut env = one_state_env();
        generate_dataset(&mut env, 0.5, |_, _| vec![0.0], "fixed", 3, 7).unwrap()
    }

    #[test]
    fn generation_examples() {
        let ds = fixture_dataset();
        assert_eq!(ds.len(), 3);
        let episodes: Vec<u64> = ds.records.iter().map(|r| r.episode).collect();
        assert_eq!(episodes, vec![0, 0, 1]);
        let trace: Vec<(f64, f64)> = ds.records.iter().map(|r| (r.s, r.c)).collect();
        assert_eq!(trace, vec![(0.0, 1.0), (1.0, 0.5), (0.0, 1.0)]);
        assert!(!ds.records[0].done && ds.records[1].done && !ds.records[2].done);
        ds.validate().unwrap();

        let mut env = one_state_env();
        let empty = generate_dataset(&mut env, 0.5, |_, _| vec![0.0], "fixed", 0, 7).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.meta.obs_dim, 1);
        empty.validate().unwrap();

        let mut env = one_state_env();
        let err = generate_dataset(&mut env, 0.5, |_, _| vec![0.0, 1.0], "bad", 1, 7).unwrap_err();
        assert!(matches!(err, SrmError::Input(_)));
    }

    #[test]
    fn generation_is_reproducible() {
        let a = fixture_dataset().to_hybrid_string().unwrap();
        let b = fixture_dataset().to_hybrid_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = fixture_dataset();
        for name in ["d.srmd", "d.csv"] {
            let path = dir.path().join(name);
            ds.save(&path).unwrap();
            assert_eq!(TransitionDataset::load(&path).unwrap(), ds);
        }
        assert!(dir.path().join("d.meta.json").exists());
    }

    #[test]
    fn awkward_floats_survive() {
        let mut ds = TransitionDataset::empty("x", 0.3, 1, 1, "p", 0);
        let r = 0.1 + 0.2;
        ds.push(TransitionRecord {
            episode: 0,
            t: 0,
            obs: vec![1e-300],
            s: 0.0,
            c: 1.0,
            action: vec![-0.0],
            reward: r,
            next_obs: vec![f64::MAX],
            next_s: r,
            next_c: 0.3,
            done: true,
        });
        let back = TransitionDataset::from_hybrid_str(&ds.to_hybrid_string().unwrap()).unwrap();
        assert_eq!(back.records[0].reward.to_bits(), r.to_bits());
        assert_eq!(back.records[0].next_obs[0], f64::MAX);
    }

    #[test]
    fn load_errors_are_distinct() {
        let text = fixture_dataset().to_hybrid_string().unwrap();

        let wrong_count = text.replacen("\"records\":3", "\"records\":5", 1);
        match TransitionDataset::from_hybrid_str(&wrong_count).unwrap_err() {
            SrmError::Consistency { expected, actual, .. } => assert_eq!((expected.as_str(), actual.as_str()), ("5", "3")),
            e => panic!("unexpected {e}"),
        }

        let wrong_version = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            TransitionDataset::from_hybrid_str(&wrong_version).unwrap_err(),
            SrmError::Version { .. }
        ));

        let cut = &text[..text.len() - 4];
        assert!(matches!(TransitionDataset::from_hybrid_str(cut).unwrap_err(), SrmError::Truncated(_)));

        // tamper with s of the second record
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[3] = "1.5".into();
        lines[3] = fields.join(",");
        let tampered = lines.join("\n") + "\n";
        match TransitionDataset::from_hybrid_str(&tampered).unwrap_err() {
            SrmError::Consistency { what, .. } => assert!(what.starts_with("s of record 1"), "{what}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sampling() {
        let ds = fixture_dataset();
        let one = &ds.records[..1];
        let mut rng = seeded_rng(1);
        assert_eq!(sample_batch(one, 1, &mut rng).unwrap()[0], &ds.records[0]);
        assert!(sample_batch(&[], 1, &mut rng).is_err());

        let a: Vec<_> = sample_batch(&ds.records, 20, &mut seeded_rng(5)).unwrap();
        let b: Vec<_> = sample_batch(&ds.records, 20, &mut seeded_rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut ds = TransitionDataset::empty("x", 0.9, 0, 1, "p", 0);
        for i in 0..10 {
            ds.push(TransitionRecord {
                episode: i,
                t: 0,
                obs: vec![],
                s: 0.0,
                c: 1.0,
                action: vec![i as f64],
                reward: 0.0,
                next_obs: vec![],
                next_s: 0.0,
                next_c: 0.9,
                done: true,
            });
        }
        let mut counts = [0usize; 10];
        let mut rng = seeded_rng(11);
        let draws = 1_000_000;
        for r in sample_batch(&ds.records, draws, &mut rng).unwrap() {
            counts[r.action[0] as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.1).abs() < 0.001, "{f}");
        }
    }

    #[test]
    fn replay_buffer_overwrites_oldest() {
        let ds = fixture_dataset();
        let mut buf = ReplayBuffer::new(2);
        for r in &ds.records {
            buf.push(r.clone());
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.ordered(), ds.records[1..].to_vec());
    }
}
