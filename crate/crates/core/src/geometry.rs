//! Inner-product and angular kernels, and the region predicates that decide
//! whether a negative lies in the triangular region spanned by a query and
//! its positive.

use crate::error::{Error, Result};

/// Inner product accumulated in `f64`. Callers guarantee equal lengths.
#[inline]
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Inner product with a dimension check.
pub fn dot_score(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dot(u, v))
}

pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Angle between two nonzero vectors, in radians.
pub fn angle(u: &[f32], v: &[f32]) -> Result<f64> {
    let uv = dot_score(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Contract("angle of a zero vector".into()));
    }
    // near-parallel vectors can overshoot +-1 by a few ulps
    Ok((uv / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// `|angle(q, d_pos) - angle(q, d_neg)|` in radians.
pub fn theta(q: &[f32], d_pos: &[f32], d_neg: &[f32]) -> Result<f64> {
    Ok((angle(q, d_pos)? - angle(q, d_neg)?).abs())
}

/// The three pairwise scores of a training triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleScores {
    /// s(q, d+)
    pub s_pos: f64,
    /// s(q, d-)
    pub s_neg: f64,
    /// s(d+, d-)
    pub s_pp: f64,
}

impl TripleScores {
    pub fn new(s_pos: f64, s_neg: f64, s_pp: f64) -> Result<Self> {
        if !(s_pos.is_finite() && s_neg.is_finite() && s_pp.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite triple scores ({s_pos}, {s_neg}, {s_pp})"
            )));
        }
        Ok(Self { s_pos, s_neg, s_pp })
    }

    pub fn from_vectors(q: &[f32], d_pos: &[f32], d_neg: &[f32]) -> Result<Self> {
        Self::new(
            dot_score(q, d_pos)?,
            dot_score(q, d_neg)?,
            dot_score(d_pos, d_neg)?,
        )
    }
}

/// Score-level membership: the negative is at least as similar to the
/// positive as it is to the query. The boundary counts as inside.
pub fn in_triangular_region(ts: &TripleScores) -> bool {
    ts.s_pp >= ts.s_neg
}

/// Strict membership, matching the support of the ReLU weight.
pub fn strictly_in_triangular_region(ts: &TripleScores) -> bool {
    ts.s_pp > ts.s_neg
}

/// Angular region parameters. Only used as a diagnostic; sampling uses
/// the score-level predicate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionParams {
    /// Boundary on theta, in degrees.
    pub theta_max: f64,
    /// Project vectors onto the unit sphere before comparing angles.
    /// Angles are scale-invariant already, so this only affects callers
    /// that feed normalized scores back into the score predicate.
    pub normalize: bool,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self {
            theta_max: 60.0,
            normalize: false,
        }
    }
}

impl RegionParams {
    pub fn new(theta_max: f64, normalize: bool) -> Result<Self> {
        let p = Self { theta_max, normalize };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_max > 0.0 && self.theta_max <= 180.0) {
            return Err(Error::Contract(format!(
                "theta_max must lie in (0, 180], got {}",
                self.theta_max
            )));
        }
        Ok(())
    }

    /// True when `theta(q, d_pos, d_neg)` is within the angular boundary.
    pub fn within_theta(&self, q: &[f32], d_pos: &[f32], d_neg: &[f32]) -> Result<bool> {
        Ok(theta(q, d_pos, d_neg)? <= self.theta_max.to_radians())
    }

    /// Score triple used by the score predicate, cosine-normalized when
    /// `normalize` is set.
    pub fn triple_scores(&self, q: &[f32], d_pos: &[f32], d_neg: &[f32]) -> Result<TripleScores> {
        let raw = TripleScores::from_vectors(q, d_pos, d_neg)?;
        if !self.normalize {
            return Ok(raw);
        }
        let (nq, np, nn) = (norm(q), norm(d_pos), norm(d_neg));
        if nq == 0.0 || np == 0.0 || nn == 0.0 {
            return Err(Error::Contract("cannot normalize a zero vector".into()));
        }
        TripleScores::new(raw.s_pos / (nq * np), raw.s_neg / (nq * nn), raw.s_pp / (np * nn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn at_degrees(deg: f64) -> [f32; 2] {
        let r = deg.to_radians();
        [r.cos() as f32, r.sin() as f32]
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot_score(&[1., 0.], &[0., 1.]).unwrap(), 0.0);
        assert_eq!(dot_score(&[1., 2.], &[3., 4.]).unwrap(), 11.0);
        assert_eq!(dot_score(&[3., 4.], &[3., 4.]).unwrap(), 25.0);
        assert!(matches!(dot_score(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn angle_examples() {
        assert!((angle(&[1., 0.], &[0., 1.]).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert!((angle(&[1., 0.], &[-1., 0.]).unwrap() - PI).abs() < 1e-12);
        let v = [0.3f32, -1.7, 2.2];
        let v3 = v.map(|x| 3.0 * x);
        assert!(angle(&v, &v3).unwrap().abs() < 1e-6);
        assert!(matches!(angle(&[0., 0.], &[1., 0.]), Err(Error::Contract(_))));
    }

    #[test]
    fn angle_clamps_parallel_overshoot() {
        let v = [0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        assert!(!angle(&v, &v).unwrap().is_nan());
    }

    #[test]
    fn theta_examples() {
        let q = [1.0f32, 0.0];
        let (p, n) = (at_degrees(30.0), at_degrees(90.0));
        assert!((theta(&q, &p, &n).unwrap() - FRAC_PI_3).abs() < 1e-6);
        assert_eq!(theta(&q, &p, &p).unwrap(), 0.0);
        assert_eq!(theta(&q, &p, &n).unwrap(), theta(&q, &n, &p).unwrap());
        let region = RegionParams::default();
        assert!(region.within_theta(&q, &p, &at_degrees(80.0)).unwrap());
        assert!(!region.within_theta(&q, &p, &at_degrees(100.0)).unwrap());
    }

    #[test]
    fn region_predicate_examples() {
        let t = |s_pp, s_neg| TripleScores::new(0.0, s_neg, s_pp).unwrap();
        assert!(in_triangular_region(&t(0.8, 0.5)));
        assert!(!in_triangular_region(&t(0.4, 0.5)));
        assert!(in_triangular_region(&t(0.5, 0.5)));
        assert!(!strictly_in_triangular_region(&t(0.5, 0.5)));
        assert!(TripleScores::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn region_params_validation() {
        assert!(RegionParams::new(0.0, false).is_err());
        assert!(RegionParams::new(180.0, false).is_ok());
        assert!(RegionParams::new(181.0, true).is_err());
    }

    #[test]
    fn normalized_triple_scores_are_cosines() {
        let region = RegionParams::new(60.0, true).unwrap();
        let ts = region
            .triple_scores(&[2.0, 0.0], &[0.0, 5.0], &[3.0, 3.0])
            .unwrap();
        assert!(ts.s_pos.abs() < 1e-12);
        assert!((ts.s_neg - 0.5f64.sqrt()).abs() < 1e-7);
        assert!((ts.s_pp - 0.5f64.sqrt()).abs() < 1e-7);
    }

    fn vec3() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, 3).prop_filter("nonzero", |v| norm(v) > 1e-2)
    }

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = norm(v);
        v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
    }

    proptest! {
        #[test]
        fn angle_is_scale_invariant(u in vec3(), v in vec3(), a in 0.1f32..10.0, b in 0.1f32..10.0) {
            let su: Vec<f32> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * b).collect();
            // f32 scaling rounds each coordinate; allow for that
            prop_assert!((angle(&u, &v).unwrap() - angle(&su, &sv).unwrap()).abs() < 1e-5);
        }

        #[test]
        fn angle_is_scale_invariant_power_of_two(u in vec3(), v in vec3(), a in -4i32..4, b in -4i32..4) {
            // power-of-two scaling is exact in f32
            let su: Vec<f32> = u.iter().map(|x| x * 2f32.powi(a)).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * 2f32.powi(b)).collect();
            prop_assert!((angle(&u, &v).unwrap() - angle(&su, &sv).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn theta_symmetric_and_scale_invariant(q in vec3(), p in vec3(), n in vec3(), k in -3i32..3) {
            let t = theta(&q, &p, &n).unwrap();
            prop_assert_eq!(t, theta(&q, &n, &p).unwrap());
            let s = 2f32.powi(k);
            let sq: Vec<f32> = q.iter().map(|x| x * s).collect();
            prop_assert!((t - theta(&sq, &p, &n).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn dot_is_symmetric(u in vec3(), v in vec3()) {
            prop_assert_eq!(dot(&u, &v), dot(&v, &u));
        }

        #[test]
        fn score_region_matches_angles_for_unit_vectors(q in vec3(), p in vec3(), n in vec3()) {
            let (q, p, n) = (unit(&q), unit(&p), unit(&n));
            let ts = TripleScores::from_vectors(&q, &p, &n).unwrap();
            // skip draws whose margin is below the f32 rounding of the unit vectors
            prop_assume!((ts.s_pp - ts.s_neg).abs() > 1e-5);
            let by_angle = angle(&p, &n).unwrap() <= angle(&q, &n).unwrap();
            prop_assert_eq!(in_triangular_region(&ts), by_angle);
        }
    }
}
