//! Dynamic environments: networks where the number of active devices
//! varies. Inactive dimensions are masked out of the kNN metric, and
//! the baseline statistic is approximated as a function of per-
//! application device counts so the expensive training step is not
//! repeated for every combination.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detector::{EvidenceResult, ObservationVector, OditModel};
use crate::{Error, Result};

/// Mapping from device dimensions to applications. Data rates are
/// application-specific, so the baseline statistic is modeled on
/// per-application active-device counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProfile {
    pub application_ids: Vec<String>,
    /// Maximum concurrent devices per application.
    pub max_devices: Vec<usize>,
    /// `dim_to_app[j]` = application index of dimension `j`.
    pub dim_to_app: Vec<usize>,
}

impl ApplicationProfile {
    pub fn validate(&self) -> Result<()> {
        if self.application_ids.len() != self.max_devices.len() {
            return Err(Error::InvalidConfig(
                "application ids and maxima must have equal length".into(),
            ));
        }
        if self.max_devices.iter().any(|&m| m == 0) {
            return Err(Error::InvalidConfig("application maxima must be >= 1".into()));
        }
        if self
            .dim_to_app
            .iter()
            .any(|&a| a >= self.application_ids.len())
        {
            return Err(Error::InvalidConfig(
                "dimension maps to unknown application".into(),
            ));
        }
        Ok(())
    }

    pub fn app_count(&self) -> usize {
        self.application_ids.len()
    }
}

/// Which dimensions of the full (maximum) device set are active.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveMask {
    pub active: Vec<bool>,
    /// Active devices per application, consistent with `active`.
    pub counts: Vec<f64>,
}

impl ActiveMask {
    pub fn new(active: Vec<bool>, profile: &ApplicationProfile) -> Result<Self> {
        if active.len() != profile.dim_to_app.len() {
            return Err(Error::DimensionMismatch {
                expected: profile.dim_to_app.len(),
                got: active.len(),
            });
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::EmptyMask);
        }
        let mut counts = vec![0.0; profile.app_count()];
        for (j, &on) in active.iter().enumerate() {
            if on {
                counts[profile.dim_to_app[j]] += 1.0;
            }
        }
        Ok(Self { active, counts })
    }

    pub fn full(profile: &ApplicationProfile) -> Self {
        let active = vec![true; profile.dim_to_app.len()];
        let mut counts = vec![0.0; profile.app_count()];
        for &a in &profile.dim_to_app {
            counts[a] += 1.0;
        }
        Self { active, counts }
    }

    pub fn active_dims(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

fn masked_sq_dist(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &on)| on)
        .map(|((x, y), _)| (x - y) * (x - y))
        .sum()
}

/// kNN distance computed only over active dimensions; neighbor
/// selection uses the same masked metric. Ties break by reference
/// index, like the unmasked path.
pub fn masked_knn_distance(
    point: &ObservationVector,
    refs: &[ObservationVector],
    mask: &ActiveMask,
    k: usize,
) -> Result<(f64, usize)> {
    if !mask.active.iter().any(|&a| a) {
        return Err(Error::EmptyMask);
    }
    if refs.len() < k || k == 0 {
        return Err(Error::InsufficientReferences {
            k,
            have: refs.len(),
        });
    }
    let mut dists: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| (masked_sq_dist(&point.values, &r.values, &mask.active), i))
        .collect();
    dists.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let (d2, idx) = dists[k - 1];
    Ok((d2.sqrt(), idx))
}

/// One training sample for the baseline approximator: per-application
/// active counts and the exactly computed baseline statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSample {
    pub counts: Vec<f64>,
    pub stat: f64,
}

/// Affine least-squares approximator of the baseline statistic as a
/// function of per-application device counts. A pluggable alternative
/// can implement [`BaselinePredictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRegressor {
    pub samples: Vec<BaselineSample>,
    /// Intercept followed by one slope per application.
    pub coefficients: Vec<f64>,
    pub residual_std: f64,
    min_stat: f64,
    hull_min: Vec<f64>,
    hull_max: Vec<f64>,
}

pub trait BaselinePredictor {
    fn predict(&self, counts: &[f64]) -> Prediction;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    /// The query fell outside the sampled hull.
    pub extrapolated: bool,
}

/// Affine least-squares fit of the baseline statistic on counts.
pub fn fit_baseline_regressor(samples: &[BaselineSample]) -> Result<BaselineRegressor> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 2, have: 0 });
    }
    let p = samples[0].counts.len();
    if samples.len() < p + 1 {
        return Err(Error::InsufficientData {
            needed: p + 1,
            have: samples.len(),
        });
    }
    let rows = samples.len();
    let design = DMatrix::from_fn(rows, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            samples[i].counts[j - 1]
        }
    });
    let target = DVector::from_fn(rows, |i, _| samples[i].stat);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10;
    if svd.singular_values.iter().any(|&sv| sv <= tol) {
        // name the inputs involved in the null direction
        let v_t = svd.v_t.as_ref().expect("svd computed with V");
        let (null_row, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let involved: Vec<String> = (0..p + 1)
            .filter(|&j| v_t[(null_row, j)].abs() > 1e-6)
            .map(|j| {
                if j == 0 {
                    "intercept".to_string()
                } else {
                    format!("application {}", j - 1)
                }
            })
            .collect();
        return Err(Error::RankDeficient(involved.join(", ")));
    }
    let coef = svd.solve(&target, tol).map_err(|e| {
        Error::RankDeficient(e.to_string())
    })?;
    let residuals = &design * &coef - &target;
    let dof = (rows as f64 - (p + 1) as f64).max(1.0);
    let residual_std = (residuals.norm_squared() / dof).sqrt();
    let min_stat = samples
        .iter()
        .map(|s| s.stat)
        .fold(f64::INFINITY, f64::min);
    let mut hull_min = vec![f64::INFINITY; p];
    let mut hull_max = vec![f64::NEG_INFINITY; p];
    for s in samples {
        for j in 0..p {
            hull_min[j] = hull_min[j].min(s.counts[j]);
            hull_max[j] = hull_max[j].max(s.counts[j]);
        }
    }
    Ok(BaselineRegressor {
        samples: samples.to_vec(),
        coefficients: coef.iter().copied().collect(),
        residual_std,
        min_stat,
        hull_min,
        hull_max,
    })
}

impl BaselinePredictor for BaselineRegressor {
    /// Predict the baseline statistic for an active-count combination.
    /// The prediction is floored at half the smallest training value so
    /// it can never go nonpositive; queries outside the sampled hull
    /// are flagged as extrapolation.
    fn predict(&self, counts: &[f64]) -> Prediction {
        let extrapolated = counts
            .iter()
            .zip(self.hull_min.iter().zip(&self.hull_max))
            .any(|(c, (lo, hi))| c < lo || c > hi);
        if extrapolated {
            log::warn!("baseline prediction outside the sampled hull: {counts:?}");
        }
        let mut value = self.coefficients[0];
        for (c, b) in counts.iter().zip(&self.coefficients[1..]) {
            value += c * b;
        }
        Prediction {
            value: value.max(0.5 * self.min_stat),
            extrapolated,
        }
    }
}

/// Evidence under a mask: same log-ratio form, with the dimension
/// factor replaced by the number of active dimensions and the baseline
/// replaced by `baseline` (exactly computed or regressor-predicted).
pub fn evidence_masked(
    model: &OditModel,
    x: &ObservationVector,
    mask: &ActiveMask,
    baseline: f64,
) -> Result<EvidenceResult> {
    if x.dim() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: x.dim(),
        });
    }
    if !(baseline > 0.0) {
        return Err(Error::InvalidConfig("masked baseline must be positive".into()));
    }
    let (l_t, kth) = masked_knn_distance(x, &model.reference_set, mask, model.config.k)?;
    let d_active = mask.active_dims() as f64;
    let y_t: Vec<f64> = x
        .values
        .iter()
        .zip(&model.reference_set[kth].values)
        .zip(&mask.active)
        .map(|((a, b), &on)| if on { a - b } else { 0.0 })
        .collect();
    let d_t = if l_t == 0.0 {
        -10.0 * d_active * baseline.ln().abs() - 10.0
    } else {
        d_active * (l_t.ln() - baseline.ln())
    };
    Ok(EvidenceResult { d_t, l_t, y_t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::knn_distance;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(values: &[f64]) -> ObservationVector {
        ObservationVector {
            values: values.to_vec(),
            time_index: 0,
        }
    }

    fn profile(dims: usize) -> ApplicationProfile {
        ApplicationProfile {
            application_ids: vec!["app".into()],
            max_devices: vec![dims],
            dim_to_app: vec![0; dims],
        }
    }

    #[test]
    fn full_mask_equals_plain_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refs: Vec<_> = (0..40)
            .map(|_| obs(&[rng.gen(), rng.gen(), rng.gen()]))
            .collect();
        let mask = ActiveMask::full(&profile(3));
        for _ in 0..10 {
            let p = obs(&[rng.gen(), rng.gen(), rng.gen()]);
            let (masked, mi) = masked_knn_distance(&p, &refs, &mask, 2).unwrap();
            let (plain, pi) = knn_distance(&p, &refs, 2).unwrap();
            assert_eq!(masked, plain);
            assert_eq!(mi, pi);
        }
    }

    #[test]
    fn masked_dimension_is_ignored() {
        let refs = vec![obs(&[0.5, 0.0]), obs(&[0.7, 0.0])];
        let mask = ActiveMask::new(vec![true, false], &profile(2)).unwrap();
        let (l, idx) = masked_knn_distance(&obs(&[0.5, 9.9]), &refs, &mask, 1).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(idx, 0);
    }

    #[test]
    fn random_masks_match_column_deletion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 6;
        let refs: Vec<_> = (0..30)
            .map(|_| obs(&(0..d).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()))
            .collect();
        let prof = profile(d);
        for _ in 0..25 {
            let mut active: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.6)).collect();
            if !active.iter().any(|&a| a) {
                active[0] = true;
            }
            let mask = ActiveMask::new(active.clone(), &prof).unwrap();
            let p = obs(&(0..d).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let (masked, _) = masked_knn_distance(&p, &refs, &mask, 3).unwrap();
            // oracle: physically delete inactive columns, then plain kNN
            let strip = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .zip(&active)
                    .filter(|(_, &on)| on)
                    .map(|(x, _)| *x)
                    .collect()
            };
            let stripped_refs: Vec<_> = refs.iter().map(|r| obs(&strip(&r.values))).collect();
            let (oracle, _) = knn_distance(&obs(&strip(&p.values)), &stripped_refs, 3).unwrap();
            assert_relative_eq!(masked, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn masked_distance_monotone_in_active_dims() {
        let refs = vec![obs(&[0.1, 0.2, 0.3]), obs(&[0.9, 0.8, 0.7])];
        let prof = profile(3);
        let p = obs(&[0.5, 0.5, 0.5]);
        let small = ActiveMask::new(vec![true, false, false], &prof).unwrap();
        let big = ActiveMask::new(vec![true, true, false], &prof).unwrap();
        let full = ActiveMask::full(&prof);
        let (a, _) = masked_knn_distance(&p, &refs, &small, 1).unwrap();
        let (b, _) = masked_knn_distance(&p, &refs, &big, 1).unwrap();
        let (c, _) = masked_knn_distance(&p, &refs, &full, 1).unwrap();
        assert!(a <= b && b <= c);
    }

    #[test]
    fn all_inactive_mask_errors() {
        let prof = profile(2);
        assert!(matches!(
            ActiveMask::new(vec![false, false], &prof),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn regressor_recovers_exact_line() {
        // single application: (10 -> 0.2), (20 -> 0.3), (30 -> 0.4)
        let samples = vec![
            BaselineSample { counts: vec![10.0], stat: 0.2 },
            BaselineSample { counts: vec![20.0], stat: 0.3 },
            BaselineSample { counts: vec![30.0], stat: 0.4 },
        ];
        let reg = fit_baseline_regressor(&samples).unwrap();
        assert_relative_eq!(reg.coefficients[0], 0.1, epsilon = 1e-10);
        assert_relative_eq!(reg.coefficients[1], 0.01, epsilon = 1e-10);
        assert!(reg.residual_std < 1e-10);
        let pred = reg.predict(&[20.0]);
        assert_relative_eq!(pred.value, 0.3, epsilon = 1e-10);
        assert!(!pred.extrapolated);
    }

    #[test]
    fn regressor_exact_affine_recovery_multiapp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = [0.05, 0.004, -0.002, 0.01];
        let samples: Vec<BaselineSample> = (0..20)
            .map(|_| {
                let counts: Vec<f64> = (0..3).map(|_| rng.gen_range(1.0..50.0_f64).round()).collect();
                let stat = truth[0]
                    + truth[1] * counts[0]
                    + truth[2] * counts[1]
                    + truth[3] * counts[2];
                BaselineSample { counts, stat }
            })
            .collect();
        let reg = fit_baseline_regressor(&samples).unwrap();
        for (got, want) in reg.coefficients.iter().zip(&truth) {
            assert_relative_eq!(got, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn regressor_rank_deficiency_names_inputs() {
        // two applications with perfectly collinear counts
        let samples: Vec<BaselineSample> = (0..5)
            .map(|i| BaselineSample {
                counts: vec![i as f64, 2.0 * i as f64],
                stat: 0.1 + 0.01 * i as f64,
            })
            .collect();
        match fit_baseline_regressor(&samples) {
            Err(Error::RankDeficient(msg)) => {
                assert!(msg.contains("application"), "message: {msg}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn prediction_floor_and_extrapolation_flag() {
        let samples = vec![
            BaselineSample { counts: vec![10.0], stat: 0.2 },
            BaselineSample { counts: vec![20.0], stat: 0.1 },
            BaselineSample { counts: vec![30.0], stat: 0.05 },
        ];
        let reg = fit_baseline_regressor(&samples).unwrap();
        let far = reg.predict(&[500.0]);
        assert!(far.extrapolated);
        // strongly negative extrapolation hits the floor
        assert_relative_eq!(far.value, 0.5 * 0.05, epsilon = 1e-12);
    }
}
