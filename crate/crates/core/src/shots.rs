//! Shot boundaries from windowed scene consistency.
//!
//! Every frame gets an appearance score: the mean pairwise descriptor
//! similarity over a window centred on it. A frame whose score drops below
//! `beta` starts a new shot.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{gist_similarity, GistDescriptor};
use crate::error::{Error, Result};
use crate::util::centered_window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotConfig {
    /// Window size in frames.
    pub window: usize,
    pub beta: f64,
    /// Minimum length a shot must reach before a breach may open the next
    /// one. 1 applies the raw rule: every breach starts a shot.
    pub min_shot_len: usize,
}

impl Default for ShotConfig {
    fn default() -> Self {
        ShotConfig {
            window: 15,
            beta: 0.9,
            min_shot_len: 1,
        }
    }
}

impl ShotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidInput("shot window must be at least 2".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidInput("beta must be finite".into()));
        }
        if self.min_shot_len < 1 {
            return Err(Error::InvalidInput("min_shot_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotAssignment {
    pub shot_ids: Vec<usize>,
    pub gammas: Vec<f64>,
    pub window: usize,
    pub beta: f64,
}

impl ShotAssignment {
    pub fn shot_count(&self) -> usize {
        self.shot_ids.last().map_or(0, |&last| last + 1)
    }
}

/// Mean pairwise similarity over an already-truncated window. Windows with
/// fewer than two frames score 1.
pub fn gamma_score(window: &[GistDescriptor]) -> Result<f64> {
    mean_pairwise(window.len(), |p, q| gist_similarity(&window[p], &window[q]))
}

/// Mean of `sim(p, q)` over all `p < q < n`; 1 when there are no pairs.
fn mean_pairwise(n: usize, sim: impl Fn(usize, usize) -> Result<f64>) -> Result<f64> {
    if n < 2 {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for p in 0..n - 1 {
        for q in p + 1..n {
            sum += sim(p, q)?;
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Appearance score of every frame. Windows are truncated at sequence ends
/// and never cross a segment start (e.g. the first frame of another video).
pub fn gamma_scores(
    descriptors: &[GistDescriptor],
    window: usize,
    segment_starts: &[usize],
) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::InvalidInput("shot window must be at least 2".into()));
    }
    let n = descriptors.len();
    if let Some(d) = descriptors.first() {
        if descriptors.iter().any(|x| x.dim() != d.dim()) {
            return Err(Error::InvalidInput("mixed descriptor dimensions".into()));
        }
    }
    let bounds = segment_bounds(n, segment_starts);

    // sims[i][d - 1] = similarity(i, i + d) for 1 <= d < window
    let band: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (1..window)
                .take_while(|d| i + d < n)
                .map(|d| gist_similarity(&descriptors[i], &descriptors[i + d]).unwrap())
                .collect()
        })
        .collect();

    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = bounds[i];
            let (start, end) = centered_window(i, window, lo, hi);
            let size = end - start;
            if size < 2 {
                return 1.0;
            }
            let mut sum = 0.0;
            for p in start..end - 1 {
                for q in p + 1..end {
                    sum += band[p][q - p - 1];
                }
            }
            sum / (size * (size - 1) / 2) as f64
        })
        .collect())
}

/// `(start, end)` of the segment containing each index.
pub(crate) fn segment_bounds(n: usize, segment_starts: &[usize]) -> Vec<(usize, usize)> {
    let mut starts: Vec<usize> = segment_starts.iter().copied().filter(|&s| s < n).collect();
    starts.push(0);
    starts.sort_unstable();
    starts.dedup();
    let mut out = Vec::with_capacity(n);
    for (k, &s) in starts.iter().enumerate() {
        let e = starts.get(k + 1).copied().unwrap_or(n);
        out.extend(std::iter::repeat((s, e)).take(e - s));
    }
    out
}

/// Applies the raw threshold rule: ids start at 0 and every frame with
/// `gamma < beta` opens a new shot (the breaching frame joins the new shot).
pub fn assign_shots(gammas: &[f64], beta: f64) -> ShotAssignment {
    assign_shots_with(
        gammas,
        &ShotConfig {
            beta,
            ..ShotConfig::default()
        },
        &[],
    )
}

/// Threshold rule with the optional debounce and forced boundaries at
/// `segment_starts` (other than 0).
pub fn assign_shots_with(
    gammas: &[f64],
    cfg: &ShotConfig,
    segment_starts: &[usize],
) -> ShotAssignment {
    let mut ids = Vec::with_capacity(gammas.len());
    let mut id = 0usize;
    let mut len = 0usize;
    for (i, &g) in gammas.iter().enumerate() {
        let breach = g < cfg.beta && (cfg.min_shot_len <= 1 || len >= cfg.min_shot_len);
        let forced = i > 0 && segment_starts.contains(&i);
        if breach || forced {
            id += 1;
            len = 0;
        }
        ids.push(id);
        len += 1;
    }
    ShotAssignment {
        shot_ids: ids,
        gammas: gammas.to_vec(),
        window: cfg.window,
        beta: cfg.beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> GistDescriptor {
        GistDescriptor::from_raw((0..dim).map(|_| rng.random::<f64>()).collect())
    }

    /// Brute force over every ordered pair, halved.
    fn pairwise_oracle(w: &[GistDescriptor]) -> f64 {
        let n = w.len();
        if n < 2 {
            return 1.0;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for p in 0..n {
            for q in 0..n {
                if p < q {
                    let mut d = 0.0;
                    for k in 0..w[p].dim() {
                        d += w[p].values[k] * w[q].values[k];
                    }
                    total += d.clamp(0.0, 1.0);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_window_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_unit(&mut rng, 32);
        let w = vec![d; 15];
        assert!((gamma_score(&w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_frame_arithmetic() {
        // pairwise similarities {1.0, 0.8, 0.6}
        let table = [[1.0, 1.0, 0.8], [1.0, 1.0, 0.6], [0.8, 0.6, 1.0]];
        let g = mean_pairwise(3, |p, q| Ok(table[p][q])).unwrap();
        assert!((g - 0.8).abs() < 1e-15);

        // and through real vectors: x.y = 0.8, x.z = 0.6, y.z = 0.96
        let x = GistDescriptor { values: vec![1.0, 0.0] };
        let y = GistDescriptor { values: vec![0.8, 0.6] };
        let z = GistDescriptor { values: vec![0.6, 0.8] };
        assert!((gamma_score(&[x, y, z]).unwrap() - (0.8 + 0.6 + 0.96) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_windows_score_one() {
        assert_eq!(gamma_score(&[]).unwrap(), 1.0);
        let d = GistDescriptor { values: vec![1.0, 0.0] };
        assert_eq!(gamma_score(&[d]).unwrap(), 1.0);
    }

    #[test]
    fn gamma_matches_oracle_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w: Vec<_> = (0..5).map(|_| random_unit(&mut rng, 64)).collect();
            let got = gamma_score(&w).unwrap();
            assert!((got - pairwise_oracle(&w)).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_scores_match_oracle_with_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq: Vec<_> = (0..40).map(|_| random_unit(&mut rng, 16)).collect();
        for window in [2, 3, 4, 15] {
            let gammas = gamma_scores(&seq, window, &[20]).unwrap();
            for i in 0..seq.len() {
                let (lo, hi) = if i < 20 { (0, 20) } else { (20, 40) };
                let start = (i as isize - (window / 2) as isize).max(lo as isize) as usize;
                let end = (i + window.div_ceil(2)).min(hi);
                let expected = pairwise_oracle(&seq[start..end]);
                assert!((gammas[i] - expected).abs() < 1e-12, "W={window} i={i}");
            }
        }
    }

    #[test]
    fn assignment_examples() {
        assert_eq!(assign_shots(&[1.0; 6], 0.9).shot_ids, vec![0; 6]);
        assert_eq!(
            assign_shots(&[1.0, 1.0, 0.5, 1.0, 1.0], 0.9).shot_ids,
            vec![0, 0, 1, 1, 1]
        );
        assert_eq!(assign_shots(&[0.5, 0.5], 0.9).shot_ids, vec![1, 2]);
    }

    #[test]
    fn debounce_collapses_breach_runs() {
        let gammas = [1.0, 1.0, 1.0, 0.5, 0.4, 0.5, 1.0, 1.0, 1.0, 0.3, 1.0];
        let cfg = ShotConfig {
            min_shot_len: 3,
            ..ShotConfig::default()
        };
        let a = assign_shots_with(&gammas, &cfg, &[]);
        assert_eq!(a.shot_ids, vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn forced_segment_starts() {
        let a = assign_shots_with(&[1.0; 5], &ShotConfig::default(), &[3]);
        assert_eq!(a.shot_ids, vec![0, 0, 0, 1, 1]);
        // a breach on the forced frame does not double count
        let a = assign_shots_with(&[1.0, 1.0, 1.0, 0.2, 1.0], &ShotConfig::default(), &[3]);
        assert_eq!(a.shot_ids, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn bad_window_rejected() {
        assert!(gamma_scores(&[], 1, &[]).is_err());
        assert!(ShotConfig {
            window: 1,
            ..ShotConfig::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn shot_count_is_one_plus_breaches(gammas in prop::collection::vec(0.0f64..=1.0, 1..200), beta in 0.0f64..=1.0) {
            let a = assign_shots(&gammas, beta);
            let breaches = gammas.iter().filter(|&&g| g < beta).count();
            prop_assert_eq!(a.shot_count(), 1 + breaches);
            prop_assert!(a.shot_ids.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(a.shot_ids.len(), gammas.len());
        }

        #[test]
        fn shot_count_monotone_in_beta(
            gammas in prop::collection::vec(0.0f64..=1.0, 1..200),
            b1 in 0.0f64..=1.0,
            b2 in 0.0f64..=1.0,
            min_len in 1usize..6,
        ) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let cfg = |beta| ShotConfig { beta, min_shot_len: min_len, ..ShotConfig::default() };
            let a = assign_shots_with(&gammas, &cfg(lo), &[]);
            let b = assign_shots_with(&gammas, &cfg(hi), &[]);
            prop_assert!(b.shot_count() >= a.shot_count());
        }

        #[test]
        fn gamma_is_permutation_invariant(seed in 0u64..1000, shift in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<_> = (0..6).map(|_| random_unit(&mut rng, 8)).collect();
            let mut rotated = w.clone();
            rotated.rotate_left(shift);
            rotated.reverse();
            let a = gamma_score(&w).unwrap();
            let b = gamma_score(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
