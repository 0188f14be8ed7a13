//! Representative training-image selection.
//!
//! Superpixel descriptors from the whole collection are clustered into a
//! codebook; each image becomes a histogram of nearest codewords, and images
//! are picked greedily so the accumulated histogram has maximal entropy.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::features::FeatureNormalizer;

pub const DEFAULT_CODEWORDS: usize = 400;
pub const DEFAULT_MAX_DESCRIPTORS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the closest centroid; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodewordHistogram {
    pub image: usize,
    pub counts: Vec<u64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding.
pub fn build_codebook(descriptors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    if k == 0 {
        return Err(contract("codebook needs at least one codeword"));
    }
    if descriptors.len() < k {
        return Err(contract(format!(
            "{} descriptors are not enough for {k} codewords",
            descriptors.len()
        )));
    }
    let dim = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != dim || d.iter().any(|v| !v.is_finite())) {
        return Err(contract("descriptors must share one dimension and be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeding(descriptors, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut inertia = Vec::new();

    for _ in 0..max_iters.max(1) {
        let assigned: Vec<(usize, f64)> = descriptors.par_iter().map(|p| nearest(&centroids, p)).collect();
        inertia.push(assigned.iter().map(|a| a.1).sum());
        let next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in descriptors.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; descriptors.len()];
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
                continue;
            }
            // empty: move to the point farthest from its centroid
            let far = (0..descriptors.len())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                centroids[c] = descriptors[i].clone();
            }
        }
    }
    Ok(Codebook {
        centroids,
        seed,
        inertia,
    })
}

pub fn quantize_image(image: usize, descriptors: &[Vec<f64>], cb: &Codebook) -> Result<CodewordHistogram> {
    let mut counts = vec![0u64; cb.len()];
    for d in descriptors {
        if d.len() != cb.dim() {
            return Err(contract(format!(
                "descriptor dim {} does not match codebook dim {}",
                d.len(),
                cb.dim()
            )));
        }
        counts[cb.nearest(d)] += 1;
    }
    Ok(CodewordHistogram { image, counts })
}

/// Shannon entropy (natural log) of the normalized histogram.
pub fn histogram_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// One greedy step's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub image: usize,
    pub entropy: f64,
}

/// Greedily pick `m` images maximizing the entropy of the summed histogram.
pub fn select_subset(histograms: &[CodewordHistogram], m: usize) -> Result<Vec<SelectionStep>> {
    if m == 0 || m > histograms.len() {
        return Err(contract(format!(
            "cannot select {m} of {} images",
            histograms.len()
        )));
    }
    let k = histograms[0].counts.len();
    if histograms.iter().any(|h| h.counts.len() != k) {
        return Err(contract("histograms have different codeword counts"));
    }
    let mut acc = vec![0u64; k];
    let mut remaining: Vec<&CodewordHistogram> = histograms.iter().collect();
    remaining.sort_by_key(|h| h.image);
    let mut steps = Vec::with_capacity(m);
    let mut trial = vec![0u64; k];
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (pos, h) in remaining.iter().enumerate() {
            for ((t, a), c) in trial.iter_mut().zip(&acc).zip(&h.counts) {
                *t = a + c;
            }
            let e = histogram_entropy(&trial);
            if best.is_none_or(|(_, be)| e > be) {
                best = Some((pos, e));
            }
        }
        let (pos, entropy) = best.expect("remaining is non-empty");
        let h = remaining.remove(pos);
        for (a, c) in acc.iter_mut().zip(&h.counts) {
            *a += c;
        }
        steps.push(SelectionStep {
            image: h.image,
            entropy,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub codewords: usize,
    pub max_iters: usize,
    pub max_descriptors: usize,
    pub seed: u64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            codewords: DEFAULT_CODEWORDS,
            max_iters: 50,
            max_descriptors: DEFAULT_MAX_DESCRIPTORS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub steps: Vec<SelectionStep>,
    pub histograms: Vec<CodewordHistogram>,
    pub codebook: Codebook,
}

/// Full selection over raw per-image superpixel features: z-score all
/// descriptors, fit a codebook on a subsample, quantize, select.
pub fn select_representative(
    per_image: &[Vec<Vec<f64>>],
    m: usize,
    params: &SelectionParams,
) -> Result<SelectionOutcome> {
    let all: Vec<&Vec<f64>> = per_image.iter().flatten().collect();
    let normalizer = FeatureNormalizer::fit(&all)?;
    let normalized: Vec<Vec<Vec<f64>>> = per_image
        .par_iter()
        .map(|img| img.iter().map(|v| normalizer.normalize(v)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let flat: Vec<&Vec<f64>> = normalized.iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut picked: Vec<usize> = if flat.len() > params.max_descriptors {
        index::sample(&mut rng, flat.len(), params.max_descriptors).into_vec()
    } else {
        (0..flat.len()).collect()
    };
    picked.sort_unstable();
    let sample: Vec<Vec<f64>> = picked.iter().map(|&i| flat[i].clone()).collect();
    let k = params.codewords.min(sample.len());
    let codebook = build_codebook(&sample, k, params.seed, params.max_iters)?;
    let histograms: Vec<CodewordHistogram> = normalized
        .par_iter()
        .enumerate()
        .map(|(i, d)| quantize_image(i, d, &codebook))
        .collect::<Result<_>>()?;
    let steps = select_subset(&histograms, m)?;
    Ok(SelectionOutcome {
        steps,
        histograms,
        codebook,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert!((histogram_entropy(&[7; 400]) - 400f64.ln()).abs() < 1e-12);
        assert_eq!(histogram_entropy(&[0, 0, 9, 0]), 0.0);
        assert_eq!(histogram_entropy(&[0, 0, 0]), 0.0);
        let expected = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((histogram_entropy(&[2, 1, 1, 0, 0]) - expected).abs() < 1e-12);
        assert!((expected - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn picks_spread_histogram() {
        let h = vec![
            CodewordHistogram { image: 0, counts: vec![10, 0] },
            CodewordHistogram { image: 1, counts: vec![5, 5] },
        ];
        let steps = select_subset(&h, 1).unwrap();
        assert_eq!(steps[0].image, 1);
        assert!((steps[0].entropy - 2f64.ln()).abs() < 1e-12);
        assert_eq!(select_subset(&h, 2).unwrap().len(), 2);
        assert!(select_subset(&h, 0).is_err());
        assert!(select_subset(&h, 3).is_err());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let h = vec![
            CodewordHistogram { image: 0, counts: vec![1, 0] },
            CodewordHistogram { image: 1, counts: vec![0, 1] },
        ];
        let steps = select_subset(&h, 2).unwrap();
        assert_eq!(steps.iter().map(|s| s.image).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn two_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = Vec::new();
        for i in 0..200 {
            let base = if i % 2 == 0 { 0.0 } else { 100.0 };
            pts.push(vec![base + rng.gen_range(0.0..1.0), base + rng.gen_range(0.0..1.0)]);
        }
        let cb = build_codebook(&pts, 2, 9, 100).unwrap();
        let mut c = cb.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(c[0].iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(c[1].iter().all(|v| (100.0..=101.0).contains(v)));
        assert!(cb.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn one_codeword_per_point() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let cb = build_codebook(&pts, 12, 0, 20).unwrap();
        assert!(cb.inertia.last().unwrap().abs() < 1e-12);
        assert!(build_codebook(&pts, 13, 0, 20).is_err());
    }

    #[test]
    fn quantize_edge_cases() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let cb = build_codebook(&pts, 3, 1, 10).unwrap();
        assert_eq!(quantize_image(0, &[], &cb).unwrap().counts, vec![0; 3]);
        let same = vec![vec![2.2]; 5];
        let h = quantize_image(0, &same, &cb).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(quantize_image(0, &[vec![1.0, 2.0]], &cb).is_err());
    }
}
