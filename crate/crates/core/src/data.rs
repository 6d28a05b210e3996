//! Task samples, datasets and the synthetic task families.
//!
//! Every generated sample carries a reference plan: the intermediate values a
//! solver would write down on the way to the answer, never the answer itself.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    ArithChain,
    KvLookup,
    SortedRank,
    Copy,
    /// Loaded from a file without a family tag.
    #[default]
    External,
}

impl TaskFamily {
    pub const GENERATED: [TaskFamily; 4] = [
        TaskFamily::ArithChain,
        TaskFamily::KvLookup,
        TaskFamily::SortedRank,
        TaskFamily::Copy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::ArithChain => "arith-chain",
            TaskFamily::KvLookup => "kv-lookup",
            TaskFamily::SortedRank => "sorted-rank",
            TaskFamily::Copy => "copy",
            TaskFamily::External => "external",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::GENERATED
            .into_iter()
            .chain([TaskFamily::External])
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub family: TaskFamily,
    #[serde(default)]
    pub difficulty: u8,
    /// Reference plan, used to train planners. Empty when unknown.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub plan: String,
}

impl TaskSample {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Result<Self> {
        let (question, answer) = (question.into(), answer.into());
        ensure!(!question.is_empty(), Contract, "empty question");
        ensure!(!answer.is_empty(), Contract, "empty answer for {question:?}");
        Ok(Self {
            question,
            answer,
            family: TaskFamily::External,
            difficulty: 0,
            plan: String::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Generated { family: TaskFamily, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub provenance: Provenance,
    pub samples: Vec<TaskSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TaskSample> {
        self.samples.iter()
    }

    /// Stable identifier of sample `i`, used in run records.
    pub fn sample_id(&self, i: usize) -> String {
        format!("{}-{i:05}", self.split)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Knobs of the synthetic generators. Defaults are the desk-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOptions {
    /// Operator count range for arithmetic chains.
    pub arith_ops: (u8, u8),
    /// Variables on the queried chain (the first holds the digit).
    pub kv_depth: (u8, u8),
    /// Extra assignments that are not on the queried chain.
    pub kv_distractors: u8,
    pub kv_shuffle: bool,
    /// Variable names are drawn from the first `kv_letters` capitals.
    pub kv_letters: u8,
    /// Assign every one of the `kv_letters` variables and list them in
    /// alphabetical order, so each variable sits in a fixed slot. Overrides
    /// `kv_distractors` and `kv_shuffle`.
    pub kv_table: bool,
    pub sorted_len: (u8, u8),
    pub copy_len: (u8, u8),
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            arith_ops: (1, 3),
            kv_depth: (2, 4),
            kv_distractors: 2,
            kv_shuffle: true,
            kv_letters: 26,
            kv_table: false,
            sorted_len: (3, 5),
            copy_len: (2, 5),
        }
    }
}

impl SyntheticOptions {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi), min) in [
            ("arith_ops", self.arith_ops, 1),
            ("kv_depth", self.kv_depth, 1),
            ("sorted_len", self.sorted_len, 1),
            ("copy_len", self.copy_len, 1),
        ] {
            ensure!(lo >= min && lo <= hi, Config, "{name} range ({lo}, {hi}) is invalid");
        }
        ensure!(self.kv_letters <= 26, Config, "kv_letters {} exceeds 26", self.kv_letters);
        let extra = if self.kv_table { 0 } else { self.kv_distractors as usize };
        ensure!(
            self.kv_depth.1 as usize + extra <= self.kv_letters as usize,
            Config,
            "kv-lookup needs more than {} variables",
            self.kv_letters
        );
        Ok(())
    }
}

/// `n` distinct samples of `family`, deterministic in `seed`.
pub fn generate_synthetic(family: TaskFamily, n: usize, seed: u64) -> Result<Dataset> {
    generate_with(family, n, seed, &SyntheticOptions::default())
}

pub fn generate_with(
    family: TaskFamily,
    n: usize,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<Dataset> {
    let [train, ..] = generate_splits(family, [n, 0, 0], seed, opts)?;
    Ok(train)
}

/// Train/val/test datasets with no question shared between them.
pub fn generate_splits(
    family: TaskFamily,
    sizes: [usize; 3],
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<[Dataset; 3]> {
    ensure!(sizes.iter().sum::<usize>() > 0, Config, "requested zero samples");
    ensure!(family != TaskFamily::External, Config, "cannot generate the external family");
    opts.validate()?;
    let total: usize = sizes.iter().sum();
    let mut rng = stream_rng(seed, &format!("{}/{family}", stream::DATA));
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while all.len() < total {
        attempts += 1;
        ensure!(
            attempts <= total * 50 + 1000,
            Config,
            "{family}: could not find {total} distinct samples"
        );
        let s = generate_one(family, &mut rng, opts);
        if seen.insert(s.question.clone()) {
            all.push(s);
        }
    }
    let mut rest = all.into_iter();
    let provenance = Provenance::Generated { family, seed };
    Ok([Split::Train, Split::Val, Split::Test].map(|split| {
        let n = sizes[split as usize];
        Dataset {
            split,
            provenance: provenance.clone(),
            samples: rest.by_ref().take(n).collect(),
        }
    }))
}

fn generate_one(family: TaskFamily, rng: &mut Rng, opts: &SyntheticOptions) -> TaskSample {
    let mut range = |(lo, hi): (u8, u8)| rng.gen_range(lo..=hi);
    let (arith, kv, sorted, copy_len) = (
        range(opts.arith_ops),
        range(opts.kv_depth),
        range(opts.sorted_len),
        range(opts.copy_len),
    );
    match family {
        TaskFamily::ArithChain => arith_chain(rng, arith),
        TaskFamily::KvLookup => kv_lookup(rng, kv, opts),
        TaskFamily::SortedRank => sorted_rank(rng, sorted),
        TaskFamily::Copy => copy(rng, copy_len),
        TaskFamily::External => unreachable!("rejected by generate_splits"),
    }
}

fn sample(family: TaskFamily, difficulty: u8, question: String, answer: String, plan: String) -> TaskSample {
    TaskSample {
        question,
        answer,
        family,
        difficulty,
        plan,
    }
}

/// `((3+4)*2) mod 5 = ?` with plan `7,14`.
fn arith_chain(rng: &mut Rng, ops: u8) -> TaskSample {
    let mut value: i64 = rng.gen_range(1..=9);
    let mut expr = value.to_string();
    let mut partials = Vec::new();
    for _ in 0..ops {
        let operand: i64 = rng.gen_range(1..=9);
        let op = if rng.gen_bool(0.5) { '+' } else { '*' };
        value = if op == '+' { value + operand } else { value * operand };
        expr = format!("({expr}{op}{operand})");
        partials.push(value.to_string());
    }
    let modulus: i64 = rng.gen_range(2..=9);
    sample(
        TaskFamily::ArithChain,
        ops,
        format!("{expr} mod {modulus} = ?"),
        (value % modulus).to_string(),
        partials.join(","),
    )
}

/// `A=9;B=A;C=B; C?` with plan `B>A`: the variables visited after the query,
/// stopping before the digit.
fn kv_lookup(rng: &mut Rng, depth: u8, opts: &SyntheticOptions) -> TaskSample {
    let mut letters: Vec<char> = ('A'..='Z').take(opts.kv_letters as usize).collect();
    letters.shuffle(rng);
    let depth = depth as usize;
    let chain = &letters[..depth];
    let value: u8 = rng.gen_range(0..=9);

    let mut assignments = vec![format!("{}={value}", chain[0])];
    for w in chain.windows(2) {
        assignments.push(format!("{}={}", w[1], w[0]));
    }
    // Distractors hang off fresh digits or off earlier distractors, never off
    // the queried chain, so the answer stays unique.
    let n_distractors = if opts.kv_table {
        opts.kv_letters as usize - depth
    } else {
        opts.kv_distractors as usize
    };
    let distractors = &letters[depth..depth + n_distractors];
    for (i, &v) in distractors.iter().enumerate() {
        if i > 0 && rng.gen_bool(0.5) {
            assignments.push(format!("{v}={}", distractors[rng.gen_range(0..i)]));
        } else {
            assignments.push(format!("{v}={}", rng.gen_range(0..=9u8)));
        }
    }
    if opts.kv_table {
        assignments.sort();
    } else if opts.kv_shuffle {
        assignments.shuffle(rng);
    }
    let query = chain[depth - 1];
    let plan: Vec<String> = chain[..depth - 1].iter().rev().map(char::to_string).collect();
    sample(
        TaskFamily::KvLookup,
        depth as u8,
        format!("{}; {query}?", assignments.join(";")),
        value.to_string(),
        plan.join(">"),
    )
}

/// `sorted(7 3 9 1)[2] = ?` (zero-based) with plan `1 3 7 9`.
fn sorted_rank(rng: &mut Rng, len: u8) -> TaskSample {
    let xs: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=9)).collect();
    let mut sorted = xs.clone();
    sorted.sort_unstable();
    let k = rng.gen_range(0..xs.len());
    let show = |v: &[u8]| v.iter().map(u8::to_string).collect::<Vec<_>>().join(" ");
    sample(
        TaskFamily::SortedRank,
        len,
        format!("sorted({})[{k}] = ?", show(&xs)),
        sorted[k].to_string(),
        show(&sorted),
    )
}

/// `7 3 9` copied verbatim.
fn copy(rng: &mut Rng, len: u8) -> TaskSample {
    let text = (0..len)
        .map(|_| rng.gen_range(0..=9u8).to_string())
        .collect::<Vec<_>>()
        .join(" ");
    sample(TaskFamily::Copy, len, text.clone(), text.clone(), text)
}

#[derive(Deserialize)]
struct JsonlRow {
    question: String,
    answer: String,
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    difficulty: Option<u8>,
    #[serde(default)]
    plan: Option<String>,
}

/// Loads one sample per non-blank line. CRLF and LF files load identically.
pub fn load_jsonl(path: &Path, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow =
            serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        let mut s = TaskSample::new(row.question, row.answer)
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        if let Some(f) = row.family {
            s.family = f.parse().map_err(|e: Error| parse_err(i + 1, e.to_string()))?;
        }
        s.difficulty = row.difficulty.unwrap_or(0);
        s.plan = row.plan.unwrap_or_default();
        samples.push(s);
    }
    Ok(Dataset {
        split,
        provenance: Provenance::File {
            path: path.to_path_buf(),
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        for f in TaskFamily::GENERATED {
            let a = generate_synthetic(f, 20, 7).unwrap();
            let b = generate_synthetic(f, 20, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.samples, generate_synthetic(f, 20, 8).unwrap().samples);
        }
    }

    #[test]
    fn family_names_roundtrip() {
        for f in TaskFamily::GENERATED {
            assert_eq!(f.as_str().parse::<TaskFamily>().unwrap(), f);
        }
        assert!(matches!("nope".parse::<TaskFamily>(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_samples_and_external_are_rejected() {
        assert!(generate_synthetic(TaskFamily::Copy, 0, 1).is_err());
        assert!(generate_synthetic(TaskFamily::External, 3, 1).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        let [tr, va, te] =
            generate_splits(TaskFamily::KvLookup, [300, 50, 50], 3, &SyntheticOptions::default())
                .unwrap();
        let q: HashSet<_> = tr.iter().map(|s| &s.question).collect();
        assert!(va.iter().chain(te.iter()).all(|s| !q.contains(&s.question)));
        assert_eq!((tr.len(), va.len(), te.len()), (300, 50, 50));
        assert_eq!(te.split, Split::Test);
    }

    #[test]
    fn kv_table_lists_every_variable_in_order() {
        let opts = SyntheticOptions {
            kv_depth: (2, 3),
            kv_letters: 6,
            kv_table: true,
            ..Default::default()
        };
        for s in generate_with(TaskFamily::KvLookup, 50, 4, &opts).unwrap().samples {
            let lhs: String = s.question.split(';').take(6).map(|a| &a[..1]).collect();
            assert_eq!(lhs, "ABCDEF", "{}", s.question);
            assert_eq!(s.question.len(), 6 * 4 - 1 + 4);
        }
    }

    #[test]
    fn kv_plan_walks_towards_the_digit() {
        let opts = SyntheticOptions {
            kv_depth: (3, 3),
            kv_distractors: 0,
            kv_shuffle: false,
            ..Default::default()
        };
        let s = &generate_with(TaskFamily::KvLookup, 1, 0, &opts).unwrap().samples[0];
        let b: Vec<char> = s.question.chars().collect();
        // X=d;Y=X;Z=Y; Z?
        assert_eq!(s.plan, format!("{}>{}", b[4], b[0]));
        assert_eq!(s.answer, b[2].to_string());
    }

    #[test]
    fn jsonl_loads_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"question\":\"1+1\",\"answer\":\"2\"}\n{\"question\":\"q\",\"answer\":\"a\",\"family\":\"copy\"}\n").unwrap();
        let d = load_jsonl(&p, Split::Test).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples[1].family, TaskFamily::Copy);

        std::fs::write(&p, "{\"question\":\"1+1\",\"answer\":\"2\"}\n{\"question\":\"q\"}\n").unwrap();
        match load_jsonl(&p, Split::Test) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn crlf_matches_lf() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let body = "{\"question\":\"x y\",\"answer\":\"1\"}\n{\"question\":\"z\",\"answer\":\"2\"}\n";
        std::fs::write(&a, body).unwrap();
        std::fs::write(&b, body.replace('\n', "\r\n")).unwrap();
        let (da, db) = (load_jsonl(&a, Split::Train).unwrap(), load_jsonl(&b, Split::Train).unwrap());
        assert_eq!(da.samples, db.samples);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let d = generate_synthetic(TaskFamily::ArithChain, 10, 1).unwrap();
        d.write_jsonl(&p).unwrap();
        assert_eq!(load_jsonl(&p, Split::Train).unwrap().samples, d.samples);
    }
}
