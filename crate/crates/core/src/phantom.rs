//! Synthetic face-like volumes with a planted five-landmark constellation.
//!
//! Each sample scales and jitters a canonical layout, optionally mirrors it
//! (swapping the eye labels), rotates it by up to ±25° about every axis and
//! renders each landmark as a Gaussian blob over a speckled fan-shaped
//! background.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::landmark::{Landmark, NUM_LANDMARKS};
use crate::prior::Points;
use crate::seed::{derive_seed, rng_for};
use crate::volume::Volume;

pub const DEFAULT_SPACING_MM: f64 = 1.3;
pub const DEFAULT_DIMS: [usize; 3] = [96, 96, 96];
/// Minimum distance of every landmark from the volume faces; half the
/// largest box.
pub const LANDMARK_MARGIN: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationTemplate {
    /// Offsets from the face centre in voxels, indexed by [`Landmark::index`].
    /// x runs from the left eye to the right eye, y upwards, z outwards.
    pub layout: Points,
    /// Maximum per-axis uniform jitter of each point, in voxels.
    pub jitter: [f64; NUM_LANDMARKS],
    pub scale_range: (f64, f64),
    pub max_rotation_deg: f64,
    pub mirror_probability: f64,
    /// Peak blob intensity per landmark.
    pub amplitude: [f64; NUM_LANDMARKS],
    /// Blob standard deviation per landmark, in voxels.
    pub blob_sigma: [f64; NUM_LANDMARKS],
    /// Log-normal speckle spread.
    pub speckle: f64,
}

impl Default for ConstellationTemplate {
    fn default() -> Self {
        ConstellationTemplate {
            layout: [
                [-12.0, 10.0, 0.0],
                [0.0, 14.0, 2.0],
                [12.0, 10.0, 0.0],
                [0.0, -2.0, 8.0],
                [0.0, -20.0, 2.0],
            ],
            jitter: [1.0; NUM_LANDMARKS],
            scale_range: (0.9, 1.1),
            max_rotation_deg: 25.0,
            mirror_probability: 0.5,
            amplitude: [0.8, 0.6, 0.8, 0.9, 0.7],
            blob_sigma: [2.0, 3.5, 2.0, 3.5, 3.5],
            speckle: 0.3,
        }
    }
}

impl ConstellationTemplate {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.layout.iter().enumerate() {
            for b in &self.layout[i + 1..] {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if !(d > 0.0) {
                    return Err(Error::InvalidArgument("template layout has coincident landmarks".into()));
                }
            }
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad scale range {:?}", self.scale_range)));
        }
        if self.jitter.iter().any(|j| !(*j >= 0.0)) || self.blob_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("jitter must be ≥ 0 and blob sigma > 0".into()));
        }
        Ok(())
    }

    /// Upper bound on the distance of any sampled landmark from the face centre.
    pub fn reach(&self) -> f64 {
        self.layout
            .iter()
            .zip(&self.jitter)
            .map(|(p, j)| {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                self.scale_range.1 * r + j * 3f64.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomVolume {
    pub volume: Volume,
    pub gt: GroundTruth,
    pub seed: u64,
    /// Whether the mirror augmentation was applied.
    pub mirrored: bool,
}

/// Sampled pose of one constellation, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub landmarks: Points,
    pub mirrored: bool,
}

/// Samples landmark positions for one volume.
pub fn sample_constellation(template: &ConstellationTemplate, dims: [usize; 3], seed: u64) -> Result<Constellation> {
    template.validate()?;
    let reach = template.reach();
    if let Some(d) = dims.iter().find(|d| (**d as f64) < 2.0 * (reach + LANDMARK_MARGIN) + 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} cannot hold the constellation (needs ≥ {:.0})",
            (2.0 * (reach + LANDMARK_MARGIN) + 1.0).ceil()
        )));
    }
    let mut rng = rng_for(seed, "phantom/pose");
    let (s_lo, s_hi) = template.scale_range;
    let scale = if s_hi > s_lo { rng.random_range(s_lo..=s_hi) } else { s_lo };
    let mut offsets: Points = [[0.0; 3]; NUM_LANDMARKS];
    for l in Landmark::ALL {
        let j = template.jitter[l.index()];
        for a in 0..3 {
            let jitter = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            offsets[l.index()][a] = scale * template.layout[l.index()][a] + jitter;
        }
    }
    let mirrored = rng.random_bool(template.mirror_probability.clamp(0.0, 1.0));
    if mirrored {
        // Reflect across the mid-sagittal plane; the point that lands on the
        // left-eye side is now the left eye.
        let mut flipped = offsets;
        for l in Landmark::ALL {
            let p = offsets[l.index()];
            flipped[l.mirrored().index()] = [-p[0], p[1], p[2]];
        }
        offsets = flipped;
    }
    let max_angle = template.max_rotation_deg.to_radians();
    let mut angle = || if max_angle > 0.0 { rng.random_range(-max_angle..=max_angle) } else { 0.0 };
    let rotation = Rotation3::from_euler_angles(angle(), angle(), angle());
    let rotated: Points = offsets.map(|p| {
        let v = rotation * Vector3::new(p[0], p[1], p[2]);
        [v.x, v.y, v.z]
    });

    let mut landmarks = rotated;
    for a in 0..3 {
        let lo_off = rotated.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi_off = rotated.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        let lo = LANDMARK_MARGIN - lo_off;
        let hi = dims[a] as f64 - LANDMARK_MARGIN - hi_off;
        let centre = if hi > lo { rng.random_range(lo..hi) } else { lo };
        for p in &mut landmarks {
            p[a] += centre;
        }
    }
    Ok(Constellation { landmarks, mirrored })
}

fn render(template: &ConstellationTemplate, dims: [usize; 3], spacing_mm: f64, landmarks: &Points, seed: u64) -> Volume {
    let mut volume = Volume::zeros(dims, spacing_mm);
    let [nx, ny, nz] = dims;

    // Fan of rays from a virtual probe above the volume, fading with depth.
    let probe = [nx as f64 / 2.0, ny as f64 * 1.6];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let dx = x as f64 - probe[0];
                let dy = probe[1] - y as f64;
                let theta = dx.atan2(dy);
                let depth = (dx * dx + dy * dy).sqrt() / (ny as f64 * 2.0);
                let fan = 0.5 + 0.5 * (14.0 * theta + 0.3 * z as f64 / nz as f64).sin();
                let i = volume.index(x, y, z);
                volume.data[i] = (0.16 - 0.03 * depth + 0.015 * fan) as f32;
            }
        }
    }

    for l in Landmark::ALL {
        let c = landmarks[l.index()];
        let sigma = template.blob_sigma[l.index()];
        let amp = template.amplitude[l.index()];
        let r = (4.0 * sigma).ceil();
        let lo = c.map(|v| (v - r).floor().max(0.0) as usize);
        let hi = [0, 1, 2].map(|a| ((c[a] + r).ceil() as usize + 1).min(dims[a]));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    // voxel centres sit at integer + 0.5
                    let d2 = (x as f64 + 0.5 - c[0]).powi(2) + (y as f64 + 0.5 - c[1]).powi(2) + (z as f64 + 0.5 - c[2]).powi(2);
                    let i = volume.index(x, y, z);
                    volume.data[i] += (amp * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
                }
            }
        }
    }

    let mut rng = rng_for(seed, "phantom/speckle");
    let sd = template.speckle;
    let normal = Normal::new(-0.5 * sd * sd, sd.max(f64::MIN_POSITIVE)).expect("finite speckle spread");
    for v in &mut volume.data {
        let s = if sd > 0.0 { normal.sample(&mut rng).exp() } else { 1.0 };
        *v = (*v as f64 * s).clamp(0.0, 1.0) as f32;
    }
    volume
}

pub fn generate(template: &ConstellationTemplate, dims: [usize; 3], seed: u64) -> Result<PhantomVolume> {
    let c = sample_constellation(template, dims, seed)?;
    let gt = GroundTruth::from_landmarks(c.landmarks)?;
    let volume = render(template, dims, DEFAULT_SPACING_MM, &c.landmarks, seed);
    Ok(PhantomVolume { volume, gt, seed, mirrored: c.mirrored })
}

/// A named volume to be generated from its own seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub train: Vec<VolumeSpec>,
    pub test: Vec<VolumeSpec>,
}

/// Number of test volumes used when only a total is given.
pub fn default_test_count(n: usize) -> usize {
    if n == 152 {
        32
    } else {
        ((n as f64) * 32.0 / 152.0).round() as usize
    }
}

/// Assigns `n` volumes to disjoint train/test splits from a master seed.
pub fn plan_dataset(n: usize, split: (usize, usize), seed: u64) -> Result<DatasetPlan> {
    if split.0 + split.1 != n {
        return Err(Error::InvalidArgument(format!("split {split:?} does not add up to {n}")));
    }
    let width = n.max(1).to_string().len().max(3);
    let specs: Vec<VolumeSpec> = (0..n)
        .map(|i| VolumeSpec { name: format!("vol_{i:0width$}"), seed: derive_seed(seed, &format!("volume/{i}")) })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, "split");
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut test_ids: Vec<usize> = order[..split.1].to_vec();
    let mut train_ids: Vec<usize> = order[split.1..].to_vec();
    test_ids.sort_unstable();
    train_ids.sort_unstable();
    Ok(DatasetPlan {
        train: train_ids.into_iter().map(|i| specs[i].clone()).collect(),
        test: test_ids.into_iter().map(|i| specs[i].clone()).collect(),
    })
}

/// Generates both splits in memory.
pub fn dataset(
    template: &ConstellationTemplate,
    dims: [usize; 3],
    n: usize,
    split: (usize, usize),
    seed: u64,
) -> Result<(Vec<PhantomVolume>, Vec<PhantomVolume>)> {
    let plan = plan_dataset(n, split, seed)?;
    let make = |specs: &[VolumeSpec]| specs.iter().map(|s| generate(template, dims, s.seed)).collect::<Result<Vec<_>>>();
    Ok((make(&plan.train)?, make(&plan.test)?))
}
