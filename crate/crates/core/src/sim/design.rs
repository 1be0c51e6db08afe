//! Synthetic designs standing in for the survey data: area covariates and
//! population sizes, and unit samples drawn from finite class populations.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AreaDataset, AreaRecord, DataError, UnitDataset, UnitRecord};
use crate::numerics::RngStream;

pub const AREA_BETA: [f64; 5] = [10.038, 7.747, -3.136, 11.317, -2.466];
pub const AREA_DELTA: f64 = 2.480;
pub const UNIT_BETA: [f64; 5] = [-2.048, 0.989, 0.172, 0.760, 0.100];
pub const UNIT_DELTA: f64 = 0.348;

pub const COVARIATES: [&str; 4] = ["ls2", "ed2", "age2", "sm1"];

const STAGE_AREA: u64 = 0xA4EA;
const STAGE_UNIT: u64 = 0x0417;

/// Ranges of the area-level covariate shares and the poverty rate.
const AREA_RANGES: [(f64, f64); 4] = [(0.04, 0.12), (0.20, 0.45), (0.07, 0.13), (0.0, 1.0)];
const RATE_RANGE: (f64, f64) = (0.12, 0.30);

/// Ranges of the area-specific indicator probabilities for unit covariates.
const UNIT_RANGES: [(f64, f64); 4] = [(0.05, 0.15), (0.20, 0.40), (0.08, 0.14), (0.0, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaDesignConfig {
    pub areas: usize,
    pub beta: Vec<f64>,
    pub seed: u64,
}

impl Default for AreaDesignConfig {
    fn default() -> Self {
        Self { areas: 52, beta: AREA_BETA.to_vec(), seed: 2015 }
    }
}

fn uniform(rng: &mut RngStream, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Covariate shares drawn once; N_d = round(λ_d / π_d) for a poverty rate
/// π_d so that counts and populations are of realistic relative size. The
/// counts are set to round(λ_d) as placeholders.
pub fn area_design(cfg: &AreaDesignConfig) -> Result<AreaDataset, DataError> {
    let mut rng = RngStream::new(cfg.seed, 0, STAGE_AREA);
    let mut areas = Vec::with_capacity(cfg.areas);
    for d in 0..cfg.areas {
        let mut x = vec![1.0];
        for r in AREA_RANGES {
            x.push(uniform(&mut rng, r));
        }
        let eta: f64 = x.iter().zip(&cfg.beta).map(|(a, b)| a * b).sum();
        let lambda = eta.exp();
        let rate = uniform(&mut rng, RATE_RANGE);
        let population = (lambda / rate).round().max(1.0) as u64;
        areas.push(AreaRecord { area_id: format!("A{:02}", d + 1), y: lambda.round() as u64, x, population });
    }
    AreaDataset::new(areas, COVARIATES.iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitDesignConfig {
    pub areas: usize,
    pub min_sample: usize,
    pub max_sample: usize,
    pub min_population: u64,
    pub max_population: u64,
    pub seed: u64,
}

impl Default for UnitDesignConfig {
    fn default() -> Self {
        Self { areas: 52, min_sample: 20, max_sample: 50, min_population: 2000, max_population: 50_000, seed: 2015 }
    }
}

/// The 16 binary patterns over the four covariates, intercept first.
pub fn binary_classes(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|mask| {
            let mut z = vec![1.0];
            z.extend((0..k).map(|i| ((mask >> (k - 1 - i)) & 1) as f64));
            z
        })
        .collect()
}

/// Draws n units without replacement from a population given by class counts.
fn sample_classes(rng: &mut RngStream, sizes: &[u64], n: usize) -> Vec<usize> {
    let total: u64 = sizes.iter().sum();
    let picks = sample(rng, total as usize, n.min(total as usize));
    let mut cum = Vec::with_capacity(sizes.len());
    let mut acc = 0u64;
    for &s in sizes {
        acc += s;
        cum.push(acc);
    }
    let mut out: Vec<usize> =
        picks.iter().map(|i| cum.iter().position(|&c| (i as u64) < c).unwrap()).collect();
    out.sort_unstable();
    out
}

fn units_for(area: usize, classes: &[Vec<f64>], drawn: &[usize], weight: f64) -> Vec<UnitRecord> {
    drawn.iter().map(|&l| UnitRecord { area, y: 0, m: 1, w: weight, x: classes[l].clone(), class: l }).collect()
}

/// Class sizes N_dl = round(N_d Π_i P(x_i = z_li)) with area-specific
/// indicator probabilities; n_d units are sampled without replacement and
/// carry weight N_d / n_d. Outcomes are zero placeholders.
pub fn unit_design(cfg: &UnitDesignConfig) -> Result<UnitDataset, DataError> {
    let mut rng = RngStream::new(cfg.seed, 0, STAGE_UNIT);
    let classes = binary_classes(COVARIATES.len());
    let mut ids = Vec::new();
    let mut units = Vec::new();
    let mut class_sizes = Vec::new();
    for d in 0..cfg.areas {
        let probs: Vec<f64> = UNIT_RANGES.iter().map(|&r| uniform(&mut rng, r)).collect();
        let n_pop = rng.random_range(cfg.min_population..=cfg.max_population);
        let sizes: Vec<u64> = classes
            .iter()
            .map(|z| {
                let share: f64 = z[1..].iter().zip(&probs).map(|(&b, &p)| if b == 1.0 { p } else { 1.0 - p }).product();
                (n_pop as f64 * share).round() as u64
            })
            .collect();
        let total: u64 = sizes.iter().sum();
        let n = rng.random_range(cfg.min_sample..=cfg.max_sample);
        let drawn = sample_classes(&mut rng, &sizes, n);
        let w = total as f64 / drawn.len() as f64;
        units.extend(units_for(d, &classes, &drawn, w));
        ids.push(format!("U{:02}", d + 1));
        class_sizes.push(sizes);
    }
    UnitDataset::new(ids, COVARIATES.iter().map(|s| s.to_string()).collect(), units, classes, class_sizes)
}

/// Areas `indices` of a unit design (repeats allowed). A repeated area gets a
/// fresh sample of the same size drawn with replacement from its class
/// population.
pub fn select_unit_areas(base: &UnitDataset, indices: &[usize], seed: u64) -> Result<UnitDataset, DataError> {
    let mut rng = RngStream::new(seed, 1, STAGE_UNIT);
    let mut seen = vec![0usize; base.num_areas()];
    let mut ids = Vec::new();
    let mut units = Vec::new();
    let mut class_sizes = Vec::new();
    let n = base.sample_sizes();
    for (new_d, &d) in indices.iter().enumerate() {
        seen[d] += 1;
        let sizes = base.class_sizes[d].clone();
        if seen[d] == 1 {
            ids.push(base.area_ids[d].clone());
            units.extend(base.units.iter().filter(|u| u.area == d).map(|u| UnitRecord { area: new_d, ..u.clone() }));
        } else {
            ids.push(format!("{}#{}", base.area_ids[d], seen[d]));
            let total: u64 = sizes.iter().sum();
            let mut drawn: Vec<usize> = (0..n[d])
                .map(|_| {
                    let r = rng.random_range(0..total);
                    let mut acc = 0;
                    sizes.iter().position(|&s| {
                        acc += s;
                        r < acc
                    })
                    .unwrap()
                })
                .collect();
            drawn.sort_unstable();
            units.extend(units_for(new_d, &base.classes, &drawn, total as f64 / n[d] as f64));
        }
        class_sizes.push(sizes);
    }
    UnitDataset::new(ids, base.covariate_names.clone(), units, base.classes.clone(), class_sizes)
}
