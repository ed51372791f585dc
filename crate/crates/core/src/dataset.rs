//! Synthetic melody corpus drawn from a circulant pitch-transition chain.
//!
//! Transition probabilities decay exponentially with the circular interval
//! between pitches. Because every row is a rotation of the first, the matrix
//! is doubly stochastic and its stationary distribution is uniform over the
//! vocabulary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contour::{
    extract_components, ContourComponents, PitchSeries, NUM_COMPONENTS, SERIES_LEN,
};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 2.0;
pub const DEFAULT_CORPUS_SIZE: usize = 5000;

/// Token `i` stands for MIDI pitch `midi_low + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitchVocabulary {
    pub midi_low: u8,
    pub size: usize,
}

impl Default for PitchVocabulary {
    fn default() -> Self {
        PitchVocabulary {
            midi_low: 48,
            size: 36,
        }
    }
}

impl PitchVocabulary {
    pub fn new(midi_low: u8, size: usize) -> Result<Self> {
        let v = PitchVocabulary { midi_low, size };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.midi_low as usize + self.size > 128 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary {}+{} does not fit in MIDI 0..=127",
                self.midi_low, self.size
            )));
        }
        Ok(())
    }

    pub fn midi_high(&self) -> u8 {
        (self.midi_low as usize + self.size - 1) as u8
    }

    pub fn to_midi(&self, token: u8) -> u8 {
        self.midi_low + token
    }

    pub fn to_token(&self, pitch: u8) -> Result<u8> {
        if pitch < self.midi_low || pitch > self.midi_high() {
            return Err(Error::PitchOutOfRange {
                pitch,
                low: self.midi_low,
                high: self.midi_high(),
            });
        }
        Ok(pitch - self.midi_low)
    }
}

/// Sixteen vocabulary tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PitchSequence([u8; SERIES_LEN]);

impl PitchSequence {
    pub fn new(tokens: [u8; SERIES_LEN], vocab: &PitchVocabulary) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab.size) {
            return Err(Error::InvalidInput(format!(
                "token {t} outside vocabulary of size {}",
                vocab.size
            )));
        }
        Ok(PitchSequence(tokens))
    }

    pub fn from_slice(tokens: &[u8], vocab: &PitchVocabulary) -> Result<Self> {
        let arr: [u8; SERIES_LEN] = tokens.try_into().map_err(|_| {
            Error::InvalidInput(format!(
                "expected {SERIES_LEN} tokens, got {}",
                tokens.len()
            ))
        })?;
        Self::new(arr, vocab)
    }

    pub fn tokens(&self) -> &[u8; SERIES_LEN] {
        &self.0
    }

    pub fn midi_pitches(&self, vocab: &PitchVocabulary) -> [u8; SERIES_LEN] {
        self.0.map(|t| vocab.to_midi(t))
    }

    /// MIDI pitches as a real-valued series.
    pub fn to_series(&self, vocab: &PitchVocabulary) -> PitchSeries {
        PitchSeries::new(self.0.map(|t| vocab.to_midi(t) as f64))
            .expect("integer pitches are finite")
    }

    pub fn components(&self, vocab: &PitchVocabulary) -> ContourComponents {
        extract_components(&self.to_series(vocab))
    }
}

/// Row-major `size x size` matrix; row `i` is the next-token distribution
/// after token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: Vec<f64>,
    size: usize,
    tau: f64,
}

impl TransitionMatrix {
    /// Builds the interval-decay chain with `p[i][j] ∝ exp(-d(i, j) / tau)`,
    /// `d` being the circular distance on the vocabulary.
    pub fn interval_decay(vocab: &PitchVocabulary, tau: f64) -> Result<Self> {
        vocab.validate()?;
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        let v = vocab.size;
        let kernel: Vec<f64> = (0..v)
            .map(|j| {
                let d = j.min(v - j) as f64;
                (-d / tau).exp()
            })
            .collect();
        let total: f64 = kernel.iter().sum();
        let first_row: Vec<f64> = kernel.iter().map(|k| k / total).collect();
        Ok(Self::circulant(&first_row, tau))
    }

    /// Every token repeats itself forever.
    pub fn identity(size: usize) -> Self {
        let mut first_row = vec![0.0; size];
        first_row[0] = 1.0;
        Self::circulant(&first_row, 0.0)
    }

    fn circulant(first_row: &[f64], tau: f64) -> Self {
        let v = first_row.len();
        let mut probs = vec![0.0; v * v];
        for i in 0..v {
            for j in 0..v {
                probs[i * v + j] = first_row[(j + v - i) % v];
            }
        }
        TransitionMatrix {
            probs,
            size: v,
            tau,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.size + j]
    }
}

/// First token uniform (the chain's stationary law), the rest from the chain.
pub fn sample_sequence(t: &TransitionMatrix, rng: &mut SeededRng) -> [u8; SERIES_LEN] {
    use rand::Rng;
    let mut tokens = [0u8; SERIES_LEN];
    tokens[0] = rng.random_range(0..t.size()) as u8;
    for n in 1..SERIES_LEN {
        let row = t.row(tokens[n - 1] as usize);
        tokens[n] = rng::categorical(row, 1.0, rng) as u8;
    }
    tokens
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyDataset {
    pub sequences: Vec<PitchSequence>,
    pub components: Vec<ContourComponents>,
    pub vocab: PitchVocabulary,
    pub tau: f64,
    pub seed: u64,
}

impl MelodyDataset {
    /// Builds a dataset from sequences, computing their components.
    pub fn from_sequences(
        sequences: Vec<PitchSequence>,
        vocab: PitchVocabulary,
        tau: f64,
        seed: u64,
    ) -> Self {
        let components = sequences.iter().map(|s| s.components(&vocab)).collect();
        MelodyDataset {
            sequences,
            components,
            vocab,
            tau,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// The first `n` records.
    pub fn head(&self, n: usize) -> MelodyDataset {
        let n = n.min(self.len());
        MelodyDataset {
            sequences: self.sequences[..n].to_vec(),
            components: self.components[..n].to_vec(),
            ..*self
        }
    }
}

pub fn generate_dataset(
    vocab: PitchVocabulary,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<MelodyDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset size must be positive".into(),
        ));
    }
    let matrix = TransitionMatrix::interval_decay(&vocab, tau)?;
    let mut rng = rng::seeded(seed);
    let sequences = (0..n)
        .map(|_| PitchSequence(sample_sequence(&matrix, &mut rng)))
        .collect();
    Ok(MelodyDataset::from_sequences(sequences, vocab, tau, seed))
}

/// Per-component corpus mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub mean: [f64; NUM_COMPONENTS],
    pub std: [f64; NUM_COMPONENTS],
}

impl ComponentStats {
    /// Identity normalization.
    pub fn unit() -> Self {
        ComponentStats {
            mean: [0.0; NUM_COMPONENTS],
            std: [1.0; NUM_COMPONENTS],
        }
    }

    pub fn standardize(&self, c: &ContourComponents) -> [f64; NUM_COMPONENTS] {
        let mut out = [0.0; NUM_COMPONENTS];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (c.values()[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

pub fn component_stats(d: &MelodyDataset) -> Result<ComponentStats> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 melodies for statistics, got {}",
            d.len()
        )));
    }
    let n = d.len() as f64;
    let mut mean = [0.0; NUM_COMPONENTS];
    for c in &d.components {
        for (m, v) in mean.iter_mut().zip(c.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; NUM_COMPONENTS];
    for c in &d.components {
        for i in 0..NUM_COMPONENTS {
            let dv = c.values()[i] - mean[i];
            var[i] += dv * dv;
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    if let Some(component) = std.iter().position(|&s| s <= 1e-12) {
        return Err(Error::DegenerateCorpus { component });
    }
    Ok(ComponentStats { mean, std })
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    vocab_low: u8,
    vocab_size: usize,
    tau: f64,
    seed: u64,
    n: usize,
}

#[derive(Deserialize)]
struct Record {
    tokens: Vec<u8>,
    components: Vec<f64>,
}

/// Seventeen significant digits in JSON-compatible exponent form.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the dataset in its line-delimited text form.
pub fn dataset_to_string(d: &MelodyDataset) -> String {
    let mut out = String::with_capacity(d.len() * 120);
    let _ = writeln!(
        out,
        r#"{{"version":{},"vocab_low":{},"vocab_size":{},"tau":{},"seed":{},"n":{}}}"#,
        DATASET_VERSION,
        d.vocab.midi_low,
        d.vocab.size,
        fmt_f64(d.tau),
        d.seed,
        d.len()
    );
    for (seq, comp) in d.sequences.iter().zip(&d.components) {
        let tokens: Vec<String> = seq.tokens().iter().map(|t| t.to_string()).collect();
        let comps: Vec<String> = comp.values().iter().map(|&c| fmt_f64(c)).collect();
        let _ = writeln!(
            out,
            r#"{{"tokens":[{}],"components":[{}]}}"#,
            tokens.join(","),
            comps.join(",")
        );
    }
    out
}

pub fn save_dataset(d: &MelodyDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(d)).map_err(|e| Error::io(path, e))
}

pub fn parse_dataset(text: &str) -> Result<MelodyDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.version != DATASET_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported dataset version {}", header.version),
        });
    }
    let vocab =
        PitchVocabulary::new(header.vocab_low, header.vocab_size).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;

    let mut sequences = Vec::with_capacity(header.n);
    let mut components = Vec::with_capacity(header.n);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let seq =
            PitchSequence::from_slice(&record.tokens, &vocab).map_err(|e| bad(e.to_string()))?;
        let comp =
            ContourComponents::from_slice(&record.components).map_err(|e| bad(e.to_string()))?;
        sequences.push(seq);
        components.push(comp);
    }
    if sequences.len() != header.n {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header declares {} records, found {}",
                header.n,
                sequences.len()
            ),
        });
    }
    Ok(MelodyDataset {
        sequences,
        components,
        vocab,
        tau: header.tau,
        seed: header.seed,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MelodyDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}
