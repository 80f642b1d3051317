use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::features::{FeatureExtractor, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::{generate_anchors, AnchorGrid, AnchorSpec, Deltas};
use crate::landmark::NUM_CLASSES;
use crate::loss::ClassScores;
use crate::volume::Volume;

/// Linear classification and regression heads, one output block per anchor
/// shape. A 1×1×1 convolution over the feature map is exactly this per-cell
/// affine map.
///
/// All parameters live in one flat vector laid out as
/// `cls_weight | cls_bias | reg_weight | reg_bias`, where each weight matrix
/// is `feature_dim × outputs` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub anchor_spec: AnchorSpec,
    pub feature_dim: usize,
    pub values: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(anchor_spec: AnchorSpec, feature_dim: usize) -> Self {
        let mut p = HeadParams { anchor_spec, feature_dim, values: Vec::new() };
        p.values = vec![0.0; p.len()];
        p
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_spec.anchors_per_cell()
    }

    pub fn cls_outputs(&self) -> usize {
        self.anchors_per_cell() * NUM_CLASSES
    }

    pub fn reg_outputs(&self) -> usize {
        self.anchors_per_cell() * 6
    }

    pub fn len(&self) -> usize {
        (self.feature_dim + 1) * (self.cls_outputs() + self.reg_outputs())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cls_weight_index(&self, feature: usize, output: usize) -> usize {
        feature * self.cls_outputs() + output
    }

    #[inline]
    pub fn cls_bias_index(&self, output: usize) -> usize {
        self.feature_dim * self.cls_outputs() + output
    }

    #[inline]
    pub fn reg_weight_index(&self, feature: usize, output: usize) -> usize {
        (self.feature_dim + 1) * self.cls_outputs() + feature * self.reg_outputs() + output
    }

    #[inline]
    pub fn reg_bias_index(&self, output: usize) -> usize {
        (self.feature_dim + 1) * self.cls_outputs() + self.feature_dim * self.reg_outputs() + output
    }

    pub fn logits(&self, features: &[f32], shape: usize) -> [f64; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let o = shape * NUM_CLASSES + c;
            let mut v = self.values[self.cls_bias_index(o)];
            for (f, x) in features.iter().enumerate() {
                v += *x as f64 * self.values[self.cls_weight_index(f, o)];
            }
            v
        })
    }

    pub fn deltas(&self, features: &[f32], shape: usize) -> Deltas {
        Deltas::from_array(std::array::from_fn(|c| {
            let o = shape * 6 + c;
            let mut v = self.values[self.reg_bias_index(o)];
            for (f, x) in features.iter().enumerate() {
                v += *x as f64 * self.values[self.reg_weight_index(f, o)];
            }
            v
        }))
    }

    /// Rounds every parameter to the nearest `f32`, so the serialised form is
    /// exact.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn check_compatible(&self, features: &FeatureMap) -> Result<()> {
        if features.feature_dim != self.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "heads expect {} features per cell, extractor gives {}",
                self.feature_dim, features.feature_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cannot serialise non-finite parameters".into()));
        }
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let file = ParamsFile {
            format: "rpn3d-heads".into(),
            dtype: "f32".into(),
            endian: "little".into(),
            anchor_spec: self.anchor_spec.clone(),
            feature_dim: self.feature_dim,
            num_classes: NUM_CLASSES,
            anchors_per_cell: self.anchors_per_cell(),
            layout: vec![
                TensorShape { name: "cls_weight".into(), shape: vec![self.feature_dim, self.cls_outputs()] },
                TensorShape { name: "cls_bias".into(), shape: vec![self.cls_outputs()] },
                TensorShape { name: "reg_weight".into(), shape: vec![self.feature_dim, self.reg_outputs()] },
                TensorShape { name: "reg_bias".into(), shape: vec![self.reg_outputs()] },
            ],
            payload: STANDARD.encode(bytes),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(s)?;
        if file.dtype != "f32" || file.endian != "little" {
            return Err(Error::Format(format!("unsupported payload {} / {}", file.dtype, file.endian)));
        }
        file.anchor_spec.validate()?;
        if file.num_classes != NUM_CLASSES || file.anchors_per_cell != file.anchor_spec.anchors_per_cell() {
            return Err(Error::Format("head shape header is inconsistent".into()));
        }
        let mut p = HeadParams::zeros(file.anchor_spec, file.feature_dim);
        let bytes = STANDARD.decode(file.payload.as_bytes()).map_err(|e| Error::Format(format!("payload: {e}")))?;
        if bytes.len() != p.len() * 4 {
            return Err(Error::Format(format!("payload holds {} bytes, expected {}", bytes.len(), p.len() * 4)));
        }
        for (v, c) in p.values.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("payload contains non-finite values".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorShape {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    dtype: String,
    endian: String,
    anchor_spec: AnchorSpec,
    feature_dim: usize,
    num_classes: usize,
    anchors_per_cell: usize,
    layout: Vec<TensorShape>,
    payload: String,
}

/// Dense head output for every anchor of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub grid: AnchorGrid,
    pub scores: Vec<ClassScores>,
    pub deltas: Vec<Deltas>,
}

pub fn forward_features(features: &FeatureMap, params: &HeadParams) -> Result<HeadOutput> {
    params.check_compatible(features)?;
    let grid = AnchorGrid { spec: params.anchor_spec.clone(), grid_dims: features.grid_dims };
    let per = grid.anchors_per_cell();
    let mut scores = Vec::with_capacity(grid.len());
    let mut deltas = Vec::with_capacity(grid.len());
    for cell in 0..features.num_cells() {
        let x = features.cell(cell);
        for a in 0..per {
            scores.push(ClassScores::from_logits(params.logits(x, a)));
            deltas.push(params.deltas(x, a));
        }
    }
    Ok(HeadOutput { grid, scores, deltas })
}

/// Class scores and deltas for every anchor of the volume.
pub fn forward(volume: &Volume, extractor: &dyn FeatureExtractor, params: &HeadParams) -> Result<HeadOutput> {
    if extractor.stride() != params.anchor_spec.stride {
        return Err(Error::DimensionMismatch(format!(
            "extractor stride {} differs from anchor stride {}",
            extractor.stride(),
            params.anchor_spec.stride
        )));
    }
    let grid = generate_anchors(&params.anchor_spec, volume.dims)?;
    let features = extractor.extract(volume)?;
    debug_assert_eq!(grid.grid_dims, features.grid_dims);
    forward_features(&features, params)
}
