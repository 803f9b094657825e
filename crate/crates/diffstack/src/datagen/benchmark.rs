//! Benchmark assembly: the fixed splits for D2, D3, D6 and palindrome.

use super::{
    dyck_oracle, make_negatives, palindrome_oracle, sample_dyck, sample_palindrome, Alphabet,
    DatasetSplit, NegativeStats, PcfgParams, Sample,
};
use crate::math::RngStream;
use crate::{Error, Result};
use std::collections::HashSet;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrammarId {
    D2,
    D3,
    D6,
    Palindrome,
}

impl GrammarId {
    pub fn all() -> [GrammarId; 4] {
        [
            GrammarId::D2,
            GrammarId::D3,
            GrammarId::D6,
            GrammarId::Palindrome,
        ]
    }

    pub fn id(&self) -> &'static str {
        match self {
            GrammarId::D2 => "d2",
            GrammarId::D3 => "d3",
            GrammarId::D6 => "d6",
            GrammarId::Palindrome => "palindrome",
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        match self {
            GrammarId::D2 => Alphabet::dyck(2).unwrap(),
            GrammarId::D3 => Alphabet::dyck(3).unwrap(),
            GrammarId::D6 => Alphabet::dyck(6).unwrap(),
            GrammarId::Palindrome => Alphabet::palindrome(),
        }
    }

    /// (train, valid, test, long_test) sizes.
    pub fn sizes(&self) -> [usize; 4] {
        match self {
            GrammarId::D6 => [15_000, 2_000, 4_000, 1_500],
            _ => [6_230, 1_000, 3_000, 1_500],
        }
    }
}

impl std::fmt::Display for GrammarId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for GrammarId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GrammarId::all()
            .into_iter()
            .find(|g| g.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown grammar '{s}'")))
    }
}

/// Split length windows, inclusive: train T<=55, valid 20<T<=70,
/// test 55<T<=102, long test 105<T<=160.
pub const SPLIT_WINDOWS: [(&str, (usize, usize)); 4] = [
    ("train", (2, 55)),
    ("valid", (21, 70)),
    ("test", (56, 102)),
    ("long_test", (106, 160)),
];

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub grammar: GrammarId,
    pub seed: u64,
    pub pcfg: PcfgParams,
    /// Range the hard-negative fraction is drawn from.
    pub hard_fraction: (f64, f64),
    /// Disable to keep only easy (uniform random) negatives.
    pub hard_negatives: bool,
    pub retry_budget: usize,
    /// Shrink every split by this divisor (1 = the paper sizes); used for
    /// smoke tests and toy runs.
    pub scale_divisor: usize,
}

impl BenchmarkSpec {
    pub fn new(grammar: GrammarId, seed: u64) -> Self {
        BenchmarkSpec {
            grammar,
            seed,
            pcfg: PcfgParams::default(),
            hard_fraction: (0.15, 0.30),
            hard_negatives: true,
            retry_budget: 10_000,
            scale_divisor: 1,
        }
    }

    fn sizes(&self) -> [usize; 4] {
        let mut s = self.grammar.sizes();
        for v in &mut s {
            *v = (*v / self.scale_divisor).max(4);
        }
        s
    }
}

pub struct Benchmark {
    pub grammar: GrammarId,
    pub seed: u64,
    pub pcfg: PcfgParams,
    pub alphabet: Alphabet,
    pub train: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
    pub long_test: DatasetSplit,
    pub negative_stats: Vec<(String, NegativeStats)>,
}

impl Benchmark {
    pub fn splits(&self) -> [&DatasetSplit; 4] {
        [&self.train, &self.valid, &self.test, &self.long_test]
    }
}

/// Build all four splits with the paper's sizes and windows, ~50/50
/// balanced, with a 15-30% share of the negatives swapped for hard
/// (mutated-positive) ones.
pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.pcfg.validate()?;
    if spec.scale_divisor == 0 {
        return Err(Error::Config("scale divisor must be >= 1".into()));
    }
    let alphabet = spec.grammar.alphabet();
    let master = RngStream::new(spec.seed);
    let sizes = spec.sizes();

    let oracle = |tokens: &[usize]| -> bool {
        match spec.grammar {
            GrammarId::Palindrome => palindrome_oracle(tokens),
            _ => dyck_oracle(tokens, &alphabet).unwrap_or(false),
        }
    };

    let mut splits = Vec::new();
    let mut stats = Vec::new();
    let mut train_set: HashSet<Vec<usize>> = HashSet::new();

    for (idx, (name, window)) in SPLIT_WINDOWS.iter().enumerate() {
        let size = sizes[idx];
        let mut rng = master.derive(idx as u64 + 1);
        let dedupe_against = if *name == "train" { None } else { Some(&train_set) };
        let (split, st) = build_split(
            spec,
            &alphabet,
            name,
            *window,
            size,
            &oracle,
            dedupe_against,
            &mut rng,
        )?;
        split.check_window()?;
        // generator/oracle closure re-check at assembly time
        for s in &split.samples {
            if oracle(&s.tokens) != s.label {
                return Err(Error::Generation(format!(
                    "split {name}: label disagrees with oracle"
                )));
            }
        }
        if *name == "train" {
            train_set = split.samples.iter().map(|s| s.tokens.clone()).collect();
        }
        stats.push((name.to_string(), st));
        splits.push(split);
    }

    let mut it = splits.into_iter();
    Ok(Benchmark {
        grammar: spec.grammar,
        seed: spec.seed,
        pcfg: spec.pcfg,
        alphabet,
        train: it.next().unwrap(),
        valid: it.next().unwrap(),
        test: it.next().unwrap(),
        long_test: it.next().unwrap(),
        negative_stats: stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_split(
    spec: &BenchmarkSpec,
    alphabet: &Alphabet,
    name: &str,
    window: (usize, usize),
    size: usize,
    oracle: &dyn Fn(&[usize]) -> bool,
    dedupe_against: Option<&HashSet<Vec<usize>>>,
    rng: &mut RngStream,
) -> Result<(DatasetSplit, NegativeStats)> {
    let n_pos = size / 2;
    let n_neg = size - n_pos;

    // positives
    let mut positives: Vec<Sample> = Vec::with_capacity(n_pos);
    let mut attempts = 0usize;
    while positives.len() < n_pos {
        attempts += 1;
        if attempts > spec.retry_budget.saturating_mul(n_pos.max(1)) {
            return Err(Error::Generation(format!(
                "split {name}: could not generate {n_pos} positives in window {window:?}"
            )));
        }
        let s = match spec.grammar {
            GrammarId::Palindrome => sample_palindrome(alphabet, window, rng)?,
            _ => sample_dyck(&spec.pcfg, alphabet, window, rng, spec.retry_budget)?,
        };
        if let Some(train) = dedupe_against {
            if train.contains(&s.tokens) {
                continue;
            }
        }
        positives.push(s);
    }

    // easy negatives: uniform random strings with a positive-matched length
    let mut negatives: Vec<Sample> = Vec::with_capacity(n_neg);
    let mut i = 0usize;
    let mut guard = 0usize;
    while negatives.len() < n_neg {
        guard += 1;
        if guard > spec.retry_budget.saturating_mul(n_neg.max(1)) {
            return Err(Error::Generation(format!(
                "split {name}: could not generate {n_neg} easy negatives"
            )));
        }
        let len = positives[i % positives.len()].len();
        i += 1;
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(alphabet.n_terminals())).collect();
        if oracle(&tokens) {
            continue;
        }
        if let Some(train) = dedupe_against {
            if train.contains(&tokens) {
                continue;
            }
        }
        negatives.push(Sample {
            tokens,
            label: false,
        });
    }

    // swap a 15-30% share for hard negatives
    let mut st = NegativeStats::default();
    if spec.hard_negatives && !negatives.is_empty() {
        let fraction = rng.uniform_in(spec.hard_fraction.0, spec.hard_fraction.1);
        let n_hard = ((fraction * n_neg as f64).round() as usize).min(n_neg);
        let (hard, hstats) = make_negatives(&positives, n_hard, alphabet, oracle, rng);
        st = hstats;
        let mut replace_at: Vec<usize> = (0..negatives.len()).collect();
        rng.shuffle(&mut replace_at);
        for (h, &slot) in hard.into_iter().zip(replace_at.iter()) {
            if let Some(train) = dedupe_against {
                if train.contains(&h.tokens) {
                    continue;
                }
            }
            negatives[slot] = h;
        }
    }

    let mut samples = positives;
    samples.extend(negatives);
    rng.shuffle(&mut samples);
    Ok((
        DatasetSplit {
            name: name.to_string(),
            samples,
            window,
        },
        st,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d2_benchmark_has_paper_sizes_and_windows() {
        let mut spec = BenchmarkSpec::new(GrammarId::D2, 7);
        spec.scale_divisor = 1;
        let b = build_benchmark(&spec).unwrap();
        assert_eq!(b.train.samples.len(), 6230);
        assert_eq!(b.valid.samples.len(), 1000);
        assert_eq!(b.test.samples.len(), 3000);
        assert_eq!(b.long_test.samples.len(), 1500);
        for s in &b.test.samples {
            assert!(s.len() > 55 && s.len() <= 102);
        }
        for s in &b.long_test.samples {
            assert!(s.len() > 105 && s.len() <= 160);
        }
        for split in b.splits() {
            let pf = split.positive_fraction();
            assert!((pf - 0.5).abs() <= 0.01, "{}: balance {pf}", split.name);
        }
    }

    #[test]
    fn labels_match_oracle_everywhere() {
        let mut spec = BenchmarkSpec::new(GrammarId::D3, 11);
        spec.scale_divisor = 20;
        let b = build_benchmark(&spec).unwrap();
        for split in b.splits() {
            for s in &split.samples {
                assert_eq!(
                    dyck_oracle(&s.tokens, &b.alphabet).unwrap(),
                    s.label,
                    "{}: {:?}",
                    split.name,
                    s.tokens
                );
            }
        }
    }

    #[test]
    fn no_duplicates_across_train_and_test() {
        let mut spec = BenchmarkSpec::new(GrammarId::D2, 5);
        spec.scale_divisor = 10;
        let b = build_benchmark(&spec).unwrap();
        let train: HashSet<&Vec<usize>> = b.train.samples.iter().map(|s| &s.tokens).collect();
        for s in b.test.samples.iter().chain(&b.long_test.samples) {
            assert!(!train.contains(&s.tokens));
        }
        // long test and train length ranges are disjoint
        let max_train = b.train.samples.iter().map(|s| s.len()).max().unwrap();
        let min_long = b.long_test.samples.iter().map(|s| s.len()).min().unwrap();
        assert!(max_train < min_long);
    }

    #[test]
    fn same_seed_same_benchmark() {
        let mut spec = BenchmarkSpec::new(GrammarId::Palindrome, 3);
        spec.scale_divisor = 50;
        let a = build_benchmark(&spec).unwrap();
        let b = build_benchmark(&spec).unwrap();
        for (sa, sb) in a.splits().iter().zip(b.splits().iter()) {
            assert_eq!(sa.samples, sb.samples);
        }
        spec.seed = 4;
        let c = build_benchmark(&spec).unwrap();
        assert_ne!(a.train.samples, c.train.samples);
    }
}
