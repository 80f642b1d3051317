//! Scalar volumes and the `<name>.json` + `<name>.raw` on-disk format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::Box3;
use crate::landmark::Landmark;

/// Dense `f32` volume stored x-fastest: `data[x + nx * (y + ny * z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing_mm: f64) -> Self {
        Volume { dims, spacing_mm, data: vec![0.0; dims.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Value at the voxel containing a continuous position (clamped to bounds).
    pub fn sample_nearest(&self, p: [f64; 3]) -> f32 {
        let i = |a: usize| (p[a].floor().max(0.0) as usize).min(self.dims[a] - 1);
        self.get(i(0), i(1), i(2))
    }

    pub fn median(&self) -> f32 {
        let mut v = self.data.clone();
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
        *m
    }

    /// Copy with contents moved by `offset` voxels, wrapping around each axis.
    pub fn rolled(&self, offset: [isize; 3]) -> Volume {
        let mut out = Volume::zeros(self.dims, self.spacing_mm);
        let [nx, ny, nz] = self.dims;
        for z in 0..nz {
            let tz = (z as isize + offset[2]).rem_euclid(nz as isize) as usize;
            for y in 0..ny {
                let ty = (y as isize + offset[1]).rem_euclid(ny as isize) as usize;
                for x in 0..nx {
                    let tx = (x as isize + offset[0]).rem_euclid(nx as isize) as usize;
                    let dst = out.index(tx, ty, tz);
                    out.data[dst] = self.get(x, y, z);
                }
            }
        }
        out
    }
}

/// Per-landmark values, serialised as a JSON object in anatomical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerLandmark<T> {
    pub left_eye: T,
    pub middle_eyebrow: T,
    pub right_eye: T,
    pub nose: T,
    pub chin: T,
}

impl<T: Copy> PerLandmark<T> {
    pub fn from_fn(mut f: impl FnMut(Landmark) -> T) -> Self {
        PerLandmark {
            left_eye: f(Landmark::LeftEye),
            middle_eyebrow: f(Landmark::MiddleEyebrow),
            right_eye: f(Landmark::RightEye),
            nose: f(Landmark::Nose),
            chin: f(Landmark::Chin),
        }
    }

    pub fn get(&self, l: Landmark) -> T {
        match l {
            Landmark::LeftEye => self.left_eye,
            Landmark::MiddleEyebrow => self.middle_eyebrow,
            Landmark::RightEye => self.right_eye,
            Landmark::Nose => self.nose,
            Landmark::Chin => self.chin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub landmarks: PerLandmark<[f64; 3]>,
    /// `[cx, cy, cz, w, h, d]` in voxels.
    pub boxes: PerLandmark<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl VolumeHeader {
    pub fn new(volume: &Volume, gt: &GroundTruth, seed: Option<u64>) -> Self {
        VolumeHeader {
            dims: volume.dims,
            spacing_mm: [volume.spacing_mm; 3],
            dtype: "f32".into(),
            order: "x-fastest".into(),
            landmarks: PerLandmark::from_fn(|l| gt.landmark(l)),
            boxes: PerLandmark::from_fn(|l| gt.bbox(l).to_array()),
            seed,
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let mut boxes = [Box3 { cx: 0.0, cy: 0.0, cz: 0.0, w: 1.0, h: 1.0, d: 1.0 }; 5];
        for l in Landmark::ALL {
            boxes[l.index()] = Box3::from_array(self.boxes.get(l))?;
        }
        Ok(GroundTruth { landmarks: Landmark::ALL.map(|l| self.landmarks.get(l)), boxes })
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != "f32" {
            return Err(Error::Format(format!("unsupported dtype `{}`", self.dtype)));
        }
        if self.order != "x-fastest" {
            return Err(Error::Format(format!("unsupported voxel order `{}`", self.order)));
        }
        let s = self.spacing_mm;
        if !(s[0] > 0.0 && s[0] == s[1] && s[1] == s[2]) {
            return Err(Error::Format(format!("only positive isotropic spacing is supported, got {s:?}")));
        }
        Ok(())
    }
}

pub fn header_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn raw_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.raw"))
}

/// Writes `<name>.json` and `<name>.raw` into `dir`.
pub fn write_volume(dir: &Path, name: &str, volume: &Volume, header: &VolumeHeader) -> Result<()> {
    let mut raw = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(raw_path(dir, name), raw)?;
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    fs::write(header_path(dir, name), text)?;
    Ok(())
}

pub fn read_header(dir: &Path, name: &str) -> Result<VolumeHeader> {
    let header: VolumeHeader = serde_json::from_str(&fs::read_to_string(header_path(dir, name))?)?;
    header.validate()?;
    Ok(header)
}

pub fn read_volume(dir: &Path, name: &str) -> Result<(Volume, VolumeHeader)> {
    let header = read_header(dir, name)?;
    let bytes = fs::read(raw_path(dir, name))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{name}.raw holds {} bytes, header implies {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((Volume { dims: header.dims, spacing_mm: header.spacing_mm[0], data }, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Volume::zeros([5, 4, 3], 1.3);
        for (i, x) in v.data.iter_mut().enumerate() {
            *x = i as f32 * 0.25 - 1.0;
        }
        let gt = GroundTruth::from_landmarks([[1.0, 2.0, 3.0]; 5]).unwrap();
        let header = VolumeHeader::new(&v, &gt, Some(9));
        write_volume(dir.path(), "a", &v, &header).unwrap();
        let (back, h) = read_volume(dir.path(), "a").unwrap();
        assert_eq!(back, v);
        assert_eq!(h.ground_truth().unwrap(), gt);

        let text = fs::read_to_string(header_path(dir.path(), "a")).unwrap();
        let keys = ["\"dims\"", "\"spacing_mm\"", "\"dtype\"", "\"order\"", "\"landmarks\"", "\"boxes\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let raw = fs::read(raw_path(dir.path(), "a")).unwrap();
        assert_eq!(&raw[4..8], &(-0.75f32).to_le_bytes());
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::zeros([2, 2, 2], 1.0);
        let gt = GroundTruth::from_landmarks([[1.0; 3]; 5]).unwrap();
        write_volume(dir.path(), "b", &v, &VolumeHeader::new(&v, &gt, None)).unwrap();
        fs::write(raw_path(dir.path(), "b"), [0u8; 7]).unwrap();
        assert!(matches!(read_volume(dir.path(), "b"), Err(Error::Format(_))));
    }

    #[test]
    fn roll_wraps() {
        let mut v = Volume::zeros([3, 2, 2], 1.0);
        let i = v.index(2, 1, 0);
        v.data[i] = 5.0;
        let r = v.rolled([1, 1, 1]);
        assert_eq!(r.get(0, 0, 1), 5.0);
    }
}
