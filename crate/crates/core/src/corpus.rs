//! Synthetic temporally-noisy corpus generator.
//!
//! Classes live at prototype points in feature space. A *web* corpus mimics
//! untrimmed tagged videos: each clip inherits its video's class as a weak
//! label, but with probability `temporal_noise_p` the clip actually shows a
//! *related* class (drawn from a row-stochastic relatedness matrix), the way
//! a long video drifts into neighboring activities. A *target* set mimics a
//! small curated dataset: every clip shows its labeled class.
//!
//! Features are the true class's prototype plus isotropic Gaussian noise, so
//! corpus difficulty is set by `noise_std` relative to
//! `prototype_separation`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{ClassCount, ClipRecord};

/// How much class 0's noise rate shrinks in background mode.
const BACKGROUND_NOISE_FACTOR: f64 = 0.1;

/// Errors from corpus specification and generation.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// A parameter combination that cannot generate a corpus.
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
}

/// Full description of a synthetic corpus; two specs that are equal
/// generate byte-identical corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Number of action classes.
    pub n: ClassCount,
    /// Feature vector length; at least 2.
    pub feature_dim: usize,
    /// Web videos generated per class.
    pub videos_per_class: usize,
    /// Clips cut from each web video.
    pub clips_per_video: usize,
    /// Probability that a web clip shows a related class instead of its
    /// video's class.
    pub temporal_noise_p: f64,
    /// Row-stochastic matrix with a zero diagonal: row `q` is the
    /// distribution a noisy clip of class `q` is drawn from. Omitted rows
    /// default to the two nearest prototype neighbors, equally weighted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relatedness: Option<Vec<Vec<f64>>>,
    /// Distance of every prototype from the origin.
    pub prototype_separation: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise_std: f64,
    /// When set, class 0 plays the role of a cleaner background class: its
    /// videos flip with probability `0.1 * temporal_noise_p`.
    #[serde(default)]
    pub background_mode: bool,
    /// Seeds the prototype directions. Corpora meant to share geometry
    /// (web, target, held-out) share this seed.
    pub prototype_seed: u64,
    /// Seeds clip sampling.
    pub seed: u64,
}

impl CorpusSpec {
    /// Rejects specs that cannot generate a corpus.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| Err(CorpusError::InvalidSpec(msg));
        if self.feature_dim < 2 {
            return fail(format!("feature_dim must be at least 2, got {}", self.feature_dim));
        }
        if self.videos_per_class == 0 || self.clips_per_video == 0 {
            return fail("videos_per_class and clips_per_video must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.temporal_noise_p) {
            return fail(format!(
                "temporal_noise_p must lie in [0, 1], got {}",
                self.temporal_noise_p
            ));
        }
        if !(self.prototype_separation.is_finite() && self.prototype_separation > 0.0) {
            return fail(format!(
                "prototype_separation must be positive and finite, got {}",
                self.prototype_separation
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!(
                "noise_std must be non-negative and finite, got {}",
                self.noise_std
            ));
        }
        if let Some(rows) = &self.relatedness {
            validate_relatedness(rows, self.n)?;
        }
        Ok(())
    }
}

/// Checks shape, non-negativity, zero diagonal, and row sums of 1.
fn validate_relatedness(rows: &[Vec<f64>], n: ClassCount) -> Result<(), CorpusError> {
    let fail = |msg: String| Err(CorpusError::InvalidSpec(msg));
    let nn = n.get();
    if rows.len() != nn || rows.iter().any(|r| r.len() != nn) {
        return fail(format!("relatedness must be an {nn}x{nn} matrix"));
    }
    for (q, row) in rows.iter().enumerate() {
        if row[q] != 0.0 {
            return fail(format!("relatedness diagonal must be zero, row {q} has {}", row[q]));
        }
        if row.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return fail(format!("relatedness row {q} has a negative or non-finite weight"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return fail(format!("relatedness row {q} sums to {sum}, expected 1"));
        }
    }
    Ok(())
}

/// A generated corpus, with the geometry it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    /// `n` prototype points, each `feature_dim` long.
    pub prototypes: Vec<Vec<f64>>,
    /// The relatedness matrix actually used (explicit or derived).
    pub relatedness: Vec<Vec<f64>>,
    pub records: Vec<ClipRecord>,
}

/// Draws `n` prototypes: unit directions scaled to `separation`.
///
/// Each prototype is an independent standard Gaussian direction normalized
/// to length `separation`, drawn from a ChaCha8 stream seeded with `seed`.
pub fn make_prototypes(
    n: ClassCount,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CorpusError> {
    if feature_dim < 2 {
        return Err(CorpusError::InvalidSpec(format!(
            "feature_dim must be at least 2, got {feature_dim}"
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(CorpusError::InvalidSpec(format!(
            "prototype_separation must be positive and finite, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("constant std is valid");
    let mut prototypes = Vec::with_capacity(n.get());
    for _ in 0..n.get() {
        // Redraw on (vanishingly unlikely) near-zero directions.
        loop {
            let v: Vec<f64> = (0..feature_dim).map(|_| rng.sample(normal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                prototypes.push(v.into_iter().map(|x| separation * x / norm).collect());
                break;
            }
        }
    }
    for a in 0..prototypes.len() {
        for b in a + 1..prototypes.len() {
            if prototypes[a] == prototypes[b] {
                return Err(CorpusError::InvalidSpec(format!(
                    "prototypes {a} and {b} coincide; change prototype_seed"
                )));
            }
        }
    }
    Ok(prototypes)
}

/// Relatedness from geometry: each class points at its `neighbors` nearest
/// prototypes (Euclidean), equally weighted; distance ties prefer the lower
/// class id. `neighbors` is capped at `n - 1`.
#[must_use]
pub fn nearest_neighbor_relatedness(prototypes: &[Vec<f64>], neighbors: usize) -> Vec<Vec<f64>> {
    let n = prototypes.len();
    let k = neighbors.clamp(1, n.saturating_sub(1));
    let mut rows = vec![vec![0.0; n]; n];
    for q in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&o| o != q).collect();
        others.sort_by(|&a, &b| {
            distance2(&prototypes[q], &prototypes[a])
                .partial_cmp(&distance2(&prototypes[q], &prototypes[b]))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let weight = 1.0 / k as f64;
        for &o in &others[..k] {
            rows[q][o] = weight;
        }
    }
    rows
}

fn distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Inverse-CDF sample from one relatedness row.
fn sample_related(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (idx, &w) in row.iter().enumerate() {
        if w > 0.0 {
            cumulative += w;
            last_positive = idx;
            if u < cumulative {
                return idx;
            }
        }
    }
    // Row sums to 1 up to float error; u landed in the sliver above it.
    last_positive
}

/// The weak-label flip probability for one class.
fn noise_p_for_class(spec: &CorpusSpec, class: usize) -> f64 {
    if spec.background_mode && class == 0 {
        BACKGROUND_NOISE_FACTOR * spec.temporal_noise_p
    } else {
        spec.temporal_noise_p
    }
}

/// Generates the weakly-labeled web corpus described by `spec`.
///
/// Clips are laid out class-major, then video-major, then clip-major, and
/// ids embed the sampling seed, so corpora from different seeds never share
/// ids. Per clip the RNG draws one uniform (the flip), one more uniform if
/// the clip flipped (the related class), then `feature_dim` Gaussians.
pub fn generate_web_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let prototypes = make_prototypes(spec.n, spec.feature_dim, spec.prototype_separation, spec.prototype_seed)?;
    let relatedness = match &spec.relatedness {
        Some(rows) => rows.clone(),
        None => nearest_neighbor_relatedness(&prototypes, 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated above");
    let mut records = Vec::with_capacity(spec.n.get() * spec.videos_per_class * spec.clips_per_video);
    for (class, related) in relatedness.iter().enumerate() {
        let p = noise_p_for_class(spec, class);
        for video in 0..spec.videos_per_class {
            let video_id = format!("web-{:016x}-q{class:03}-v{video:04}", spec.seed);
            for clip in 0..spec.clips_per_video {
                let true_label = if rng.random::<f64>() < p {
                    sample_related(related, &mut rng)
                } else {
                    class
                };
                let features = prototypes[true_label]
                    .iter()
                    .map(|&coord| coord + rng.sample(noise))
                    .collect();
                records.push(ClipRecord {
                    clip_id: format!("{video_id}-c{clip:03}"),
                    video_id: video_id.clone(),
                    weak_label: class,
                    features,
                    true_label: Some(true_label),
                    teacher_pred: None,
                    pseudo_label: None,
                });
            }
        }
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        prototypes,
        relatedness,
        records,
    })
}

/// Generates a clean, balanced target set over the same geometry as `spec`.
///
/// Every clip shows its labeled class (no temporal noise); `sample_seed`
/// replaces `spec.seed` for clip sampling, so target and held-out sets can
/// share geometry while staying disjoint. Each clip gets its own video.
pub fn generate_target_set(
    spec: &CorpusSpec,
    clips_per_class: usize,
    sample_seed: u64,
) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    if clips_per_class == 0 {
        return Err(CorpusError::InvalidSpec("clips_per_class must be positive".into()));
    }
    let prototypes = make_prototypes(spec.n, spec.feature_dim, spec.prototype_separation, spec.prototype_seed)?;
    let relatedness = match &spec.relatedness {
        Some(rows) => rows.clone(),
        None => nearest_neighbor_relatedness(&prototypes, 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated above");
    let mut records = Vec::with_capacity(spec.n.get() * clips_per_class);
    for (class, prototype) in prototypes.iter().enumerate() {
        for clip in 0..clips_per_class {
            let video_id = format!("target-{sample_seed:016x}-q{class:03}-v{clip:04}");
            let features = prototype
                .iter()
                .map(|&coord| coord + rng.sample(noise))
                .collect();
            records.push(ClipRecord {
                clip_id: format!("{video_id}-c000"),
                video_id,
                weak_label: class,
                features,
                true_label: Some(class),
                teacher_pred: None,
                pseudo_label: None,
            });
        }
    }
    let mut spec = spec.clone();
    spec.seed = sample_seed;
    Ok(SyntheticCorpus {
        spec,
        prototypes,
        relatedness,
        records,
    })
}
