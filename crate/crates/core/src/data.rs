//! Binary classification data: LIBSVM text parsing, a synthetic generator and
//! the label-sorted split across clients.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{sigmoid, LogisticLoss};
use crate::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vector,
    /// 0 or 1.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The samples held by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub client: usize,
    pub samples: Vec<Sample>,
}

impl Shard {
    pub fn to_loss(&self) -> Result<LogisticLoss> {
        let pairs: Vec<(Vector, f64)> = self
            .samples
            .iter()
            .map(|s| (s.features.clone(), f64::from(s.label)))
            .collect();
        LogisticLoss::from_samples(&pairs)
    }
}

fn parse_label(token: &str, line: usize) -> Result<u8> {
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("malformed label {token:?}"),
    })?;
    match value {
        v if v == 1.0 => Ok(1),
        v if v == 0.0 || v == -1.0 => Ok(0),
        _ => Err(Error::Parse {
            line,
            message: format!("label {token:?} is not binary (expected -1, 0 or 1)"),
        }),
    }
}

/// Reads `label idx:val idx:val ...` lines with 1-based indices into dense
/// `d`-vectors. Labels `-1` and `0` both map to 0. Blank lines and `#`
/// comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, d: usize) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or_default(), lineno)?;
        let mut features = Vector::zeros(d);
        for token in tokens {
            let malformed = || Error::Parse {
                line: lineno,
                message: format!("malformed feature {token:?}"),
            };
            let (index, value) = token.split_once(':').ok_or_else(malformed)?;
            let index: usize = index.parse().map_err(|_| malformed())?;
            let value: f64 = value.parse().map_err(|_| malformed())?;
            if index < 1 || index > d {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("feature index {index} outside 1..={d}"),
                });
            }
            features[index - 1] = value;
        }
        samples.push(Sample { features, label });
    }
    Ok(Dataset { dim: d, samples })
}

/// Largest feature index in a LIBSVM text, i.e. the smallest `d` that
/// [`parse_libsvm`] accepts. Malformed lines are left for the parser.
pub fn infer_dimension<R: BufRead>(reader: R) -> Result<usize> {
    let mut d = 0;
    for line in reader.lines() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        for token in content.split_whitespace().skip(1) {
            if let Some(index) = token.split_once(':').and_then(|(i, _)| i.parse::<usize>().ok()) {
                d = d.max(index);
            }
        }
    }
    Ok(d)
}

/// Writes a dataset in LIBSVM format, omitting zero features.
pub fn write_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for sample in &dataset.samples {
        write!(out, "{}", sample.label)?;
        for (k, &v) in sample.features.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", k + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Takes the first `n_take` samples, sorts them stably by label and cuts them
/// into `m` contiguous shards. Earlier shards get the extra sample when
/// `n_take` is not divisible by `m`.
pub fn partition_sorted(dataset: &Dataset, m: usize, n_take: usize) -> Result<Vec<Shard>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one client".into()));
    }
    if n_take > dataset.len() {
        return Err(Error::InvalidInput(format!(
            "cannot take {n_take} samples from a dataset of {}",
            dataset.len()
        )));
    }
    if m > n_take {
        return Err(Error::InvalidInput(format!(
            "{m} clients but only {n_take} samples"
        )));
    }
    let mut taken: Vec<Sample> = dataset.samples[..n_take].to_vec();
    taken.sort_by_key(|s| s.label);

    let base = n_take / m;
    let extra = n_take % m;
    let mut shards = Vec::with_capacity(m);
    let mut rest = taken.into_iter();
    for client in 0..m {
        let size = base + usize::from(client < extra);
        shards.push(Shard {
            client,
            samples: rest.by_ref().take(size).collect(),
        });
    }
    Ok(shards)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticParams {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// Norm of the planted separator.
const SEPARATOR_NORM: f64 = 4.0;

/// Features uniform on `[-1, 1]` per coordinate (the usual scaling of LIBSVM
/// data sets) and labels drawn from a logistic model around a planted
/// separator.
pub fn synthetic(params: SyntheticParams) -> Result<Dataset> {
    let SyntheticParams { n, d, seed } = params;
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "synthetic data needs n > 0 and d > 0 (n={n}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut separator = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = separator.norm();
    if norm > 0.0 {
        separator *= SEPARATOR_NORM / norm;
    }
    let samples = (0..n)
        .map(|_| {
            let features = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let p = sigmoid(separator.dot(&features));
            let label = u8::from(rng.random::<f64>() < p);
            Sample { features, label }
        })
        .collect();
    Ok(Dataset { dim: d, samples })
}
