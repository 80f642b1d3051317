use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box given by its centre and full extents, in voxels.
///
/// Along each axis the box covers the half-open interval `[c - s/2, c + s/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub h: f64,
    pub d: f64,
}

impl Box3 {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        let b = Box3 {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            w: size[0],
            h: size[1],
            d: size[2],
        };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(center: [f64; 3], size: f64) -> Result<Self> {
        Self::new(center, [size; 3])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center().iter().chain(self.size().iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox(format!("non-finite component in {self:?}")));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.d > 0.0) {
            return Err(Error::InvalidBox(format!("non-positive extent in {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.w, self.h, self.d]
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.d
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [self.cx - 0.5 * self.w, self.cy - 0.5 * self.h, self.cz - 0.5 * self.d]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [self.cx + 0.5 * self.w, self.cy + 0.5 * self.h, self.cz + 0.5 * self.d]
    }

    pub fn translated(&self, v: [f64; 3]) -> Box3 {
        Box3 {
            cx: self.cx + v[0],
            cy: self.cy + v[1],
            cz: self.cz + v[2],
            ..*self
        }
    }

    /// Uniformly scales centre and extents about the origin.
    pub fn scaled(&self, s: f64) -> Box3 {
        Box3 {
            cx: self.cx * s,
            cy: self.cy * s,
            cz: self.cz * s,
            w: self.w * s,
            h: self.h * s,
            d: self.d * s,
        }
    }

    /// True when the box lies inside `[0, dims)` on every axis.
    pub fn contained_in(&self, dims: [usize; 3]) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        (0..3).all(|a| lo[a] >= 0.0 && hi[a] <= dims[a] as f64)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.cx, self.cy, self.cz, self.w, self.h, self.d]
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

/// Regression deltas: centre offsets in units of anchor extent, log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deltas {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub tw: f64,
    pub th: f64,
    pub td: f64,
}

impl Deltas {
    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.tw, self.th, self.td]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Deltas { tx: v[0], ty: v[1], tz: v[2], tw: v[3], th: v[4], td: v[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Applies regression deltas to an anchor.
pub fn decode(anchor: &Box3, t: &Deltas) -> Box3 {
    Box3 {
        cx: anchor.cx + t.tx * anchor.w,
        cy: anchor.cy + t.ty * anchor.h,
        cz: anchor.cz + t.tz * anchor.d,
        w: anchor.w * t.tw.exp(),
        h: anchor.h * t.th.exp(),
        d: anchor.d * t.td.exp(),
    }
}

/// Inverse of [`decode`]: the deltas that carry `anchor` onto `target`.
pub fn encode(anchor: &Box3, target: &Box3) -> Result<Deltas> {
    anchor.validate()?;
    target.validate()?;
    Ok(Deltas {
        tx: (target.cx - anchor.cx) / anchor.w,
        ty: (target.cy - anchor.cy) / anchor.h,
        tz: (target.cz - anchor.cz) / anchor.d,
        tw: (target.w / anchor.w).ln(),
        th: (target.h / anchor.h).ln(),
        td: (target.d / anchor.d).ln(),
    })
}

#[inline]
fn overlap(c0: f64, s0: f64, c1: f64, s1: f64) -> f64 {
    let lo = (c0 - 0.5 * s0).max(c1 - 0.5 * s1);
    let hi = (c0 + 0.5 * s0).min(c1 + 0.5 * s1);
    (hi - lo).max(0.0)
}

/// Intersection over union of two axis-aligned boxes.
#[inline]
pub fn iou3d(a: &Box3, b: &Box3) -> f64 {
    let ox = overlap(a.cx, a.w, b.cx, b.w);
    if ox == 0.0 {
        return 0.0;
    }
    let oy = overlap(a.cy, a.h, b.cy, b.h);
    if oy == 0.0 {
        return 0.0;
    }
    let oz = overlap(a.cz, a.d, b.cz, b.d);
    if oz == 0.0 {
        return 0.0;
    }
    let inter = ox * oy * oz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn b(v: [f64; 6]) -> Box3 {
        Box3::from_array(v).unwrap()
    }

    #[test]
    fn decode_examples() {
        let anchor = b([10.0, 10.0, 10.0, 16.0, 16.0, 16.0]);
        let out = decode(&anchor, &Deltas::from_array([0.5, 0.0, 0.0, LN_2, 0.0, 0.0]));
        assert_relative_eq!(out.cx, 18.0);
        assert_relative_eq!(out.w, 32.0, max_relative = 1e-12);
        assert_eq!(decode(&anchor, &Deltas::default()), anchor);

        let anchor = b([0.0, 0.0, 0.0, 13.0, 20.0, 28.0]);
        let out = decode(&anchor, &Deltas::from_array([-1.0, 1.0, 0.0, 0.0, 0.0, -LN_2]));
        let want = [-13.0, 20.0, 0.0, 13.0, 20.0, 14.0];
        for (got, want) in out.to_array().iter().zip(want) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn encode_examples() {
        let anchor = b([10.0, 10.0, 10.0, 16.0, 16.0, 16.0]);
        assert_eq!(encode(&anchor, &anchor).unwrap(), Deltas::default());
        let t = encode(&anchor, &b([18.0, 10.0, 10.0, 32.0, 16.0, 16.0])).unwrap();
        assert_relative_eq!(t.tx, 0.5);
        assert_relative_eq!(t.tw, LN_2, max_relative = 1e-12);
        assert_eq!([t.ty, t.tz, t.th, t.td], [0.0; 4]);
    }

    #[test]
    fn encode_rejects_degenerate_target() {
        let anchor = b([0.0, 0.0, 0.0, 16.0, 16.0, 16.0]);
        let bad = Box3 { w: 0.0, ..anchor };
        assert!(encode(&anchor, &bad).is_err());
        assert!(Box3::cube([0.0; 3], -1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b([1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(iou3d(&a, &a), 1.0);
        let shifted = a.translated([1.0, 0.0, 0.0]);
        assert_relative_eq!(iou3d(&a, &shifted), 1.0 / 3.0, max_relative = 1e-15);

        let u = b([0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(iou3d(&u, &u.translated([1.0, 0.0, 0.0])), 0.0);
        assert_eq!(iou3d(&u, &u.translated([1.0, 1.0, 1.0])), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = Box3> {
        (
            prop::array::uniform3(-50.0..50.0f64),
            prop::array::uniform3(0.5..40.0f64),
        )
            .prop_map(|(c, s)| Box3::new(c, s).unwrap())
    }

    fn arb_deltas() -> impl Strategy<Value = Deltas> {
        prop::array::uniform6(-2.0..2.0f64).prop_map(Deltas::from_array)
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou3d(&a, &c);
            prop_assert_eq!(ab, iou3d(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn encode_decode_round_trip(anchor in arb_box(), target in arb_box()) {
            let back = decode(&anchor, &encode(&anchor, &target).unwrap());
            for (g, w) in back.to_array().iter().zip(target.to_array()) {
                prop_assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
            }
        }

        #[test]
        fn decode_encode_round_trip(anchor in arb_box(), t in arb_deltas()) {
            let back = encode(&anchor, &decode(&anchor, &t)).unwrap();
            for (g, w) in back.to_array().iter().zip(t.to_array()) {
                prop_assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
            }
        }

        #[test]
        fn decode_is_translation_equivariant(anchor in arb_box(), t in arb_deltas(),
                                             v in prop::array::uniform3(-20.0..20.0f64)) {
            let moved = decode(&anchor.translated(v), &t);
            let base = decode(&anchor, &t);
            for a in 0..3 {
                prop_assert!((moved.center()[a] - base.center()[a] - v[a]).abs() < 1e-9);
            }
            prop_assert_eq!(moved.size(), base.size());
        }
    }
}
