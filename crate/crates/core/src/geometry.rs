//! Viewing-sphere arithmetic on the (azimuth, elevation) plane.
//!
//! Azimuth wraps around 360°, elevation is clamped to [-90°, 90°]. Distances
//! and NFoV overlaps are computed on the angle plane (not on the true
//! sphere), with shortest-path handling of azimuth wraparound.

use serde::{Deserialize, Serialize};

use crate::error::{PilotError, Result};

/// Default horizontal NFoV span in degrees.
pub const DEFAULT_H_SPAN: f64 = 65.5;
/// Default NFoV aspect ratio (width / height).
pub const DEFAULT_ASPECT: f64 = 4.0 / 3.0;

/// Wraps an azimuth into `[0, 360)`.
pub fn wrap_azimuth(azimuth: f64) -> f64 {
    let r = azimuth.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r + 0.0
    }
}

/// Clamps an elevation into `[-90, 90]`.
pub fn clamp_elevation(elevation: f64) -> f64 {
    elevation.clamp(-90.0, 90.0)
}

/// Signed shortest azimuth difference `to - from`, reduced into `(-180, 180]`.
pub fn azimuth_difference(from: f64, to: f64) -> f64 {
    let d = wrap_azimuth(to - from);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// A point on the viewing sphere, in degrees.
///
/// The constructor normalizes: azimuth is wrapped into `[0, 360)` and
/// elevation is clamped into `[-90, 90]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct ViewingAngle {
    azimuth: f64,
    elevation: f64,
}

impl From<(f64, f64)> for ViewingAngle {
    fn from((azimuth, elevation): (f64, f64)) -> Self {
        ViewingAngle::new(azimuth, elevation)
    }
}

impl From<ViewingAngle> for (f64, f64) {
    fn from(a: ViewingAngle) -> Self {
        (a.azimuth, a.elevation)
    }
}

impl ViewingAngle {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        ViewingAngle {
            azimuth: wrap_azimuth(azimuth),
            elevation: clamp_elevation(elevation),
        }
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn is_finite(&self) -> bool {
        self.azimuth.is_finite() && self.elevation.is_finite()
    }
}

/// A raw steering delta in degrees per frame. Not normalized.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub d_azimuth: f64,
    pub d_elevation: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        d_azimuth: 0.0,
        d_elevation: 0.0,
    };

    pub fn new(d_azimuth: f64, d_elevation: f64) -> Self {
        Action {
            d_azimuth,
            d_elevation,
        }
    }

    pub fn norm(&self) -> f64 {
        self.d_azimuth.hypot(self.d_elevation)
    }

    pub fn sub(&self, other: &Action) -> Action {
        Action::new(
            self.d_azimuth - other.d_azimuth,
            self.d_elevation - other.d_elevation,
        )
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.d_azimuth, self.d_elevation]
    }
}

/// Steers `prev` by `delta`: `l_t = l_{t-1} + Δ_t`, then normalizes.
pub fn apply_action(prev: ViewingAngle, delta: Action) -> ViewingAngle {
    ViewingAngle::new(
        prev.azimuth + delta.d_azimuth,
        prev.elevation + delta.d_elevation,
    )
}

/// Like [`apply_action`], but also reports whether the elevation was clamped.
/// Backward passes need this to zero the elevation derivative at the poles.
pub fn apply_action_tracked(prev: ViewingAngle, delta: Action) -> (ViewingAngle, bool) {
    let raw = prev.elevation + delta.d_elevation;
    let clamped = !(-90.0..=90.0).contains(&raw);
    (apply_action(prev, delta), clamped)
}

/// The action that steers `from` onto `to`, taking the short way around in
/// azimuth. `d_azimuth` lies in `(-180, 180]`.
pub fn angular_offset(from: ViewingAngle, to: ViewingAngle) -> Action {
    Action::new(
        azimuth_difference(from.azimuth, to.azimuth),
        to.elevation - from.elevation,
    )
}

/// Euclidean norm of the wrap-aware offset, in degrees.
pub fn angular_distance(a: ViewingAngle, b: ViewingAngle) -> f64 {
    angular_offset(a, b).norm()
}

/// A natural field of view: an axis-aligned rectangle on the angle plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NFoV {
    pub center: ViewingAngle,
    h_span: f64,
    v_span: f64,
}

impl NFoV {
    /// NFoV with the default 65.5° x 49.125° spans.
    pub fn new(center: ViewingAngle) -> Self {
        NFoV {
            center,
            h_span: DEFAULT_H_SPAN,
            v_span: DEFAULT_H_SPAN / DEFAULT_ASPECT,
        }
    }

    pub fn with_spans(center: ViewingAngle, h_span: f64, v_span: f64) -> Result<Self> {
        if !(h_span > 0.0 && v_span > 0.0 && h_span <= 360.0 && v_span.is_finite()) {
            return Err(PilotError::invalid(format!(
                "NFoV spans must be positive (h_span <= 360), got {h_span} x {v_span}"
            )));
        }
        Ok(NFoV {
            center,
            h_span,
            v_span,
        })
    }

    pub fn h_span(&self) -> f64 {
        self.h_span
    }

    pub fn v_span(&self) -> f64 {
        self.v_span
    }

    /// Elevation interval covered by the rectangle, clipped to the sphere.
    fn elevation_range(&self) -> (f64, f64) {
        let half = self.v_span / 2.0;
        (
            (self.center.elevation - half).max(-90.0),
            (self.center.elevation + half).min(90.0),
        )
    }

    fn area(&self) -> f64 {
        let (lo, hi) = self.elevation_range();
        self.h_span * (hi - lo).max(0.0)
    }

    /// Center-to-corner distance on the angle plane.
    pub fn corner_distance(&self) -> f64 {
        (self.h_span / 2.0).hypot(self.v_span / 2.0)
    }
}

/// Length of the intersection of two arcs of equal length `width` whose
/// centers are `sep` degrees apart (`0 <= sep <= 180`) on a 360° circle.
fn arc_overlap(width: f64, sep: f64) -> f64 {
    let near = (width - sep).max(0.0);
    let far = (width - (360.0 - sep)).max(0.0);
    (near + far).min(width)
}

/// Intersection over union of two NFoV rectangles on the angle plane.
pub fn nfov_iou(a: &NFoV, b: &NFoV) -> Result<f64> {
    if a.h_span != b.h_span || a.v_span != b.v_span {
        return Err(PilotError::invalid(format!(
            "NFoV spans differ: {}x{} vs {}x{}",
            a.h_span, a.v_span, b.h_span, b.v_span
        )));
    }
    let sep = azimuth_difference(a.center.azimuth, b.center.azimuth).abs();
    let width = arc_overlap(a.h_span, sep);

    let (alo, ahi) = a.elevation_range();
    let (blo, bhi) = b.elevation_range();
    let height = (ahi.min(bhi) - alo.max(blo)).max(0.0);

    let inter = width * height;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn va(a: f64, e: f64) -> ViewingAngle {
        ViewingAngle::new(a, e)
    }

    #[test]
    fn apply_action_examples() {
        assert_eq!(apply_action(va(10.0, 0.0), Action::ZERO), va(10.0, 0.0));
        let l = apply_action(va(359.0, 0.0), Action::new(2.0, 0.0));
        assert!((l.azimuth() - 1.0).abs() < 1e-12);
        assert_eq!(l.elevation(), 0.0);
        assert_eq!(apply_action(va(0.0, 85.0), Action::new(0.0, 10.0)), va(0.0, 90.0));
    }

    #[test]
    fn tracked_apply_reports_clamp() {
        assert!(apply_action_tracked(va(0.0, 85.0), Action::new(0.0, 10.0)).1);
        assert!(!apply_action_tracked(va(0.0, 85.0), Action::new(0.0, 5.0)).1);
    }

    #[test]
    fn wrap_never_returns_360() {
        assert_eq!(wrap_azimuth(-1e-18), 0.0);
        assert_eq!(wrap_azimuth(-0.0).to_bits(), 0.0f64.to_bits());
        assert_eq!(wrap_azimuth(720.0), 0.0);
        assert!((wrap_azimuth(-90.0) - 270.0).abs() < 1e-12);
    }

    #[test]
    fn angular_offset_examples() {
        assert_eq!(angular_offset(va(350.0, 0.0), va(10.0, 0.0)), Action::new(20.0, 0.0));
        let x = va(123.0, -4.0);
        assert_eq!(angular_offset(x, x), Action::ZERO);
        assert_eq!(angular_offset(va(0.0, -10.0), va(0.0, 30.0)), Action::new(0.0, 40.0));
        // half-turn resolves to +180
        assert_eq!(angular_offset(va(0.0, 0.0), va(180.0, 0.0)).d_azimuth, 180.0);
        assert_eq!(angular_offset(va(180.0, 0.0), va(0.0, 0.0)).d_azimuth, 180.0);
    }

    #[test]
    fn angular_distance_examples() {
        assert_eq!(angular_distance(va(40.0, 3.0), va(40.0, 3.0)), 0.0);
        let d = angular_distance(va(0.0, 0.0), va(32.75, 24.56));
        assert!((d - 40.9).abs() < 0.05, "{d}");
        assert!((angular_distance(va(355.0, 0.0), va(5.0, 0.0)) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn default_nfov_matches_eta() {
        let n = NFoV::new(va(0.0, 0.0));
        assert_eq!(n.v_span(), 49.125);
        assert!((n.corner_distance() - 40.9).abs() < 0.05);
    }

    #[test]
    fn iou_examples() {
        let a = NFoV::new(va(10.0, 5.0));
        assert_eq!(nfov_iou(&a, &a).unwrap(), 1.0);
        let b = NFoV::new(va(190.0, 5.0));
        assert_eq!(nfov_iou(&a, &b).unwrap(), 0.0);
        let c = NFoV::new(va(10.0 + 32.75, 5.0));
        let expected = (32.75 * 49.125) / (2.0 * 65.5 * 49.125 - 32.75 * 49.125);
        let got = nfov_iou(&a, &c).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.3333).abs() < 1e-3);
    }

    #[test]
    fn iou_rejects_mismatched_spans() {
        let a = NFoV::new(va(0.0, 0.0));
        let b = NFoV::with_spans(va(0.0, 0.0), 90.0, 60.0).unwrap();
        assert!(matches!(nfov_iou(&a, &b), Err(PilotError::InvalidInput(_))));
        assert!(NFoV::with_spans(va(0.0, 0.0), 0.0, 10.0).is_err());
    }

    #[test]
    fn iou_wraps_across_zero() {
        let a = NFoV::new(va(350.0, 0.0));
        let b = NFoV::new(va(10.0, 0.0));
        let direct = nfov_iou(&NFoV::new(va(100.0, 0.0)), &NFoV::new(va(120.0, 0.0))).unwrap();
        assert!((nfov_iou(&a, &b).unwrap() - direct).abs() < 1e-12);
    }

    /// Point-sampling oracle: fraction of sampled points in both rectangles
    /// over points in either, with membership tested independently of the
    /// interval arithmetic above.
    fn monte_carlo_iou(a: &NFoV, b: &NFoV, samples: usize, seed: u64) -> f64 {
        let inside = |n: &NFoV, az: f64, el: f64| {
            let daz = (az - n.center.azimuth()).rem_euclid(360.0);
            let daz = daz.min(360.0 - daz);
            daz <= n.h_span() / 2.0 && (el - n.center.elevation()).abs() <= n.v_span() / 2.0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut both, mut either) = (0usize, 0usize);
        for _ in 0..samples {
            let az: f64 = rng.random_range(0.0..360.0);
            let el: f64 = rng.random_range(-90.0..=90.0);
            let (ia, ib) = (inside(a, az, el), inside(b, az, el));
            if ia && ib {
                both += 1;
            }
            if ia || ib {
                either += 1;
            }
        }
        both as f64 / either as f64
    }

    #[test]
    fn iou_matches_point_sampling_oracle() {
        let cases = [
            (va(0.0, 0.0), va(32.75, 0.0)),
            (va(350.0, 10.0), va(20.0, -5.0)),
            (va(100.0, 80.0), va(110.0, 70.0)),
            (va(200.0, -60.0), va(180.0, -85.0)),
        ];
        for (i, (ca, cb)) in cases.iter().enumerate() {
            let (a, b) = (NFoV::new(*ca), NFoV::new(*cb));
            let exact = nfov_iou(&a, &b).unwrap();
            let mc = monte_carlo_iou(&a, &b, 2_000_000, i as u64);
            assert!((exact - mc).abs() < 5e-3, "case {i}: exact {exact} vs mc {mc}");
        }
    }

    fn angle() -> impl Strategy<Value = ViewingAngle> {
        (0.0..360.0f64, -90.0..=90.0f64).prop_map(|(a, e)| ViewingAngle::new(a, e))
    }

    proptest! {
        #[test]
        fn offset_inverts_apply(l in (0.0..360.0f64, -40.0..40.0f64), d in (-720.0..720.0f64, -40.0..40.0f64)) {
            let l = ViewingAngle::new(l.0, l.1);
            let delta = Action::new(d.0, d.1);
            let back = angular_offset(l, apply_action(l, delta));
            let reduced = azimuth_difference(0.0, d.0);
            let az_err = azimuth_difference(reduced, back.d_azimuth).abs();
            prop_assert!(az_err < 1e-9);
            prop_assert!((back.d_elevation - d.1).abs() < 1e-9);
        }

        #[test]
        fn angles_stay_normalized(a in -1e4..1e4f64, e in -1e3..1e3f64, d in (-1e3..1e3f64, -1e3..1e3f64)) {
            let l = apply_action(ViewingAngle::new(a, e), Action::new(d.0, d.1));
            prop_assert!((0.0..360.0).contains(&l.azimuth()));
            prop_assert!((-90.0..=90.0).contains(&l.elevation()));
        }

        #[test]
        fn distance_symmetric_and_zero_iff_equal(a in angle(), b in angle()) {
            let d = angular_distance(a, b);
            prop_assert!((d - angular_distance(b, a)).abs() < 1e-9);
            prop_assert_eq!(angular_distance(a, a), 0.0);
            if a != b { prop_assert!(d > 0.0); }
        }

        #[test]
        fn triangle_inequality_in_window(base in 0.0..360.0f64, o in prop::array::uniform3((0.0..170.0f64, -80.0..80.0f64))) {
            // three points inside one 180° azimuth window
            let p: Vec<_> = o.iter().map(|(x, e)| ViewingAngle::new(base + x, *e)).collect();
            let (ab, bc, ac) = (angular_distance(p[0], p[1]), angular_distance(p[1], p[2]), angular_distance(p[0], p[2]));
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in angle(), b in angle()) {
            let (na, nb) = (NFoV::new(a), NFoV::new(b));
            let x = nfov_iou(&na, &nb).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((x - nfov_iou(&nb, &na).unwrap()).abs() < 1e-12);
            if a != b { prop_assert!(x < 1.0); }
        }

        #[test]
        fn iou_non_increasing_with_separation(c in (0.0..360.0f64, -60.0..60.0f64), s1 in 0.0..180.0f64, s2 in 0.0..180.0f64, axis in 0usize..2) {
            let (near, far) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let center = ViewingAngle::new(c.0, c.1);
            let shift = |s: f64| if axis == 0 {
                ViewingAngle::new(c.0 + s, c.1)
            } else {
                ViewingAngle::new(c.0, c.1 + s)
            };
            let a = NFoV::new(center);
            let i_near = nfov_iou(&a, &NFoV::new(shift(near))).unwrap();
            let i_far = nfov_iou(&a, &NFoV::new(shift(far))).unwrap();
            prop_assert!(i_far <= i_near + 1e-12);
        }
    }
}
