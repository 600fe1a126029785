//! Synthetic classification data with a controlled train/test shift.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dataset::{Split, TimeSeriesDataset};

/// Level of class 1 in the canonical recipe; classes 0 and 2 sit at 0.
pub const CANONICAL_LEVEL_GAP: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
#[error("invalid recipe: {0}")]
pub struct RecipeError(pub String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    /// Cycles over the whole series.
    pub frequency: f64,
    pub amplitude: f64,
}

/// Shape of one class: a constant level plus a sum of sinusoids per channel.
/// Each sample draws its own phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWaveform {
    pub levels: Vec<f64>,
    pub components: Vec<Vec<Sinusoid>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticShiftRecipe {
    pub name: String,
    pub length: usize,
    pub waveforms: Vec<ClassWaveform>,
    /// Test sample `i` is shifted by `offset * u_i`, with
    /// `u_i ~ U(1 - offset_spread, 1 + offset_spread)`.
    pub offset: f64,
    pub offset_spread: f64,
    /// Test samples are scaled by `1 + s` with `s ~ U(-drift, drift)`.
    pub scale_drift: f64,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SyntheticShiftRecipe {
    /// Three classes, two channels, length 96; test offset 1.5, scale drift
    /// 0.3, noise 0.5, 300 samples per split. Classes 0 and 1 share a shape
    /// and differ only in level; class 2 has its own frequencies.
    pub fn canonical(seed: u64) -> Self {
        let shapes = [(3.0, 7.0), (3.0, 7.0), (5.0, 9.0)];
        let levels = [0.0, CANONICAL_LEVEL_GAP, 0.0];
        let waveforms = (0..3)
            .map(|c| ClassWaveform {
                levels: vec![levels[c]; 2],
                components: (0..2)
                    .map(|j| {
                        vec![
                            Sinusoid {
                                frequency: shapes[c].0 + j as f64,
                                amplitude: 1.0,
                            },
                            Sinusoid {
                                frequency: shapes[c].1 + j as f64,
                                amplitude: 0.5,
                            },
                        ]
                    })
                    .collect(),
            })
            .collect();
        Self {
            name: "canonical-shift".into(),
            length: 96,
            waveforms,
            offset: 1.5,
            offset_spread: 1.0,
            scale_drift: 0.3,
            noise: 0.5,
            train_size: 300,
            test_size: 300,
            seed,
        }
    }

    /// Two single-channel classes with identical shape that differ only in
    /// level (0 vs `gap`); no train/test shift.
    pub fn offset_only_two_class(gap: f64, seed: u64) -> Self {
        let shape = vec![vec![
            Sinusoid {
                frequency: 3.0,
                amplitude: 1.0,
            },
            Sinusoid {
                frequency: 7.0,
                amplitude: 0.4,
            },
        ]];
        Self {
            name: "offset-only".into(),
            length: 64,
            waveforms: [0.0, gap]
                .iter()
                .map(|&l| ClassWaveform {
                    levels: vec![l],
                    components: shape.clone(),
                })
                .collect(),
            offset: 0.0,
            offset_spread: 0.0,
            scale_drift: 0.0,
            noise: 0.3,
            train_size: 200,
            test_size: 200,
            seed,
        }
    }

    /// Single-channel classes `k` with one sinusoid of frequency `freqs[k]`.
    pub fn frequencies(freqs: &[f64], length: usize, noise: f64, seed: u64) -> Self {
        Self {
            name: "frequencies".into(),
            length,
            waveforms: freqs
                .iter()
                .map(|&f| ClassWaveform {
                    levels: vec![0.0],
                    components: vec![vec![Sinusoid {
                        frequency: f,
                        amplitude: 1.0,
                    }]],
                })
                .collect(),
            offset: 0.0,
            offset_spread: 0.0,
            scale_drift: 0.0,
            noise,
            train_size: 200,
            test_size: 200,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.waveforms.len()
    }

    pub fn channels(&self) -> usize {
        self.waveforms.first().map_or(0, |w| w.levels.len())
    }

    pub fn validate(&self) -> Result<(), RecipeError> {
        let bad = |m: String| Err(RecipeError(m));
        if self.classes() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes()));
        }
        let d = self.channels();
        if d == 0 {
            return bad("need at least one channel".into());
        }
        if self
            .waveforms
            .iter()
            .any(|w| w.levels.len() != d || w.components.len() != d)
        {
            return bad("every class needs a level and components for each channel".into());
        }
        if self.length < 2 {
            return bad(format!("length must be at least 2, got {}", self.length));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("split sizes must be positive".into());
        }
        if !(self.noise >= 0.0) || !self.offset.is_finite() {
            return bad("noise must be non-negative and offset finite".into());
        }
        if !(0.0..=1.0).contains(&self.offset_spread) {
            return bad(format!("offset spread must lie in [0, 1], got {}", self.offset_spread));
        }
        if !(0.0..1.0).contains(&self.scale_drift) {
            return bad(format!("scale drift must lie in [0, 1), got {}", self.scale_drift));
        }
        Ok(())
    }
}

fn sample_series(w: &ClassWaveform, length: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    w.levels
        .iter()
        .zip(&w.components)
        .map(|(&level, comps)| {
            let phases: Vec<f64> = comps.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            (0..length)
                .map(|t| {
                    let tt = t as f64 / length as f64;
                    let wave: f64 = comps
                        .iter()
                        .zip(&phases)
                        .map(|(s, ph)| s.amplitude * (2.0 * PI * s.frequency * tt + ph).sin())
                        .sum();
                    let e: f64 = StandardNormal.sample(rng);
                    level + wave + noise * e
                })
                .collect()
        })
        .collect()
}

fn split(recipe: &SyntheticShiftRecipe, split: Split, size: usize, stream: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    rng.set_stream(stream);
    let c = recipe.classes();
    let mut series = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let k = i % c;
        let mut s = sample_series(&recipe.waveforms[k], recipe.length, recipe.noise, &mut rng);
        if split == Split::Test {
            let drift = if recipe.scale_drift > 0.0 {
                rng.gen_range(-recipe.scale_drift..recipe.scale_drift)
            } else {
                0.0
            };
            let spread = recipe.offset_spread;
            let u = if spread > 0.0 {
                rng.gen_range(1.0 - spread..1.0 + spread)
            } else {
                1.0
            };
            for v in s.iter_mut().flatten() {
                *v = (1.0 + drift) * *v + recipe.offset * u;
            }
        }
        series.push(s);
        labels.push(k);
    }
    let names = (0..c).map(|k| format!("c{k}")).collect();
    TimeSeriesDataset::new(&recipe.name, split, series, labels, names).expect("generated data is consistent")
}

/// Train and test splits; labels cycle through the classes so both are
/// balanced up to one sample.
pub fn generate_synthetic_shift(
    recipe: &SyntheticShiftRecipe,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset), RecipeError> {
    recipe.validate()?;
    Ok((
        split(recipe, Split::Train, recipe.train_size, 1),
        split(recipe, Split::Test, recipe.test_size, 2),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_shapes() {
        let r = SyntheticShiftRecipe::canonical(1);
        let (tr, te) = generate_synthetic_shift(&r).unwrap();
        assert_eq!((tr.len(), te.len()), (300, 300));
        assert_eq!((tr.channels(), tr.length(), tr.num_classes()), (2, Some(96), 3));
        assert_eq!(tr.class_indices(2).len(), 100);
    }

    #[test]
    fn deterministic_in_seed() {
        let r = SyntheticShiftRecipe::canonical(5);
        assert_eq!(
            generate_synthetic_shift(&r).unwrap(),
            generate_synthetic_shift(&r).unwrap()
        );
        let other = SyntheticShiftRecipe::canonical(6);
        assert_ne!(
            generate_synthetic_shift(&r).unwrap().0.series,
            generate_synthetic_shift(&other).unwrap().0.series
        );
    }

    #[test]
    fn invalid_recipes() {
        let mut r = SyntheticShiftRecipe::canonical(0);
        r.waveforms.truncate(1);
        assert!(r.validate().is_err());
        let mut r = SyntheticShiftRecipe::canonical(0);
        r.scale_drift = 1.0;
        assert!(r.validate().is_err());
        let mut r = SyntheticShiftRecipe::canonical(0);
        r.waveforms[1].levels.push(0.0);
        assert!(r.validate().is_err());
    }
}
