//! Probabilistic solution construction by randomized rounding.
//!
//! [`construct_basic`] rounds every variable independently in index order.
//! [`construct_cp`] visits variables in a random order and propagates each
//! choice, flipping the value on conflict; after a second conflict it gives up
//! on propagation and rounds the remaining free variables like the basic
//! procedure.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{BipInstance, Solution};
use crate::propagation::PropagationState;

/// Per-variable probability of rounding to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingVector {
    probs: Vec<f64>,
}

/// Where the sampling vector comes from.
#[derive(Debug, Clone, Copy)]
pub enum SamplingSource<'a> {
    Incumbent(&'a [u8]),
    Lp(&'a [f64]),
}

/// Accepted determinism rates are in `(0, 0.5]`.
pub fn check_d_rate(d_rate: f64) -> Result<()> {
    if d_rate > 0.0 && d_rate <= 0.5 {
        Ok(())
    } else {
        Err(Error::usage(format!("d_rate {d_rate} is outside (0, 0.5]")))
    }
}

impl SamplingVector {
    /// Incumbent entries become `d_rate` / `1 - d_rate`; LP entries are
    /// clamped into `[d_rate, 1 - d_rate]`.
    pub fn build(source: SamplingSource<'_>, d_rate: f64) -> Result<Self> {
        check_d_rate(d_rate)?;
        let probs = match source {
            SamplingSource::Incumbent(values) => values
                .iter()
                .map(|&v| match v {
                    0 => Ok(d_rate),
                    1 => Ok(1.0 - d_rate),
                    _ => Err(Error::usage(format!("incumbent value {v} is not binary"))),
                })
                .collect::<Result<Vec<_>>>()?,
            SamplingSource::Lp(values) => values
                .iter()
                .map(|&x| {
                    if x.is_nan() {
                        Err(Error::usage("LP value is NaN"))
                    } else {
                        Ok(x.clamp(d_rate, 1.0 - d_rate))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(SamplingVector { probs })
    }

    /// Raw probabilities, for tests and custom sampling.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::usage(format!("probability {p} outside [0, 1]")));
        }
        Ok(SamplingVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn draw<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> u8 {
        u8::from(rng.gen::<f64>() < self.probs[j])
    }
}

/// See [`SamplingVector::build`].
pub fn build_sampling_vector(source: SamplingSource<'_>, d_rate: f64) -> Result<SamplingVector> {
    SamplingVector::build(source, d_rate)
}

/// Visiting order for one construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionPlan {
    pub order: Vec<usize>,
    pub cp_enabled: bool,
}

impl ConstructionPlan {
    /// A fresh uniformly random order (Fisher-Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, cp_enabled: bool, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        ConstructionPlan { order, cp_enabled }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &j in &self.order {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::usage("construction order is not a permutation"));
            }
        }
        if self.order.len() != n {
            return Err(Error::usage("construction order is not a permutation"));
        }
        Ok(())
    }
}

/// Independent rounding in the order `j = 1..n`; the result may be infeasible.
pub fn construct_basic<R: Rng + ?Sized>(
    instance: &BipInstance,
    sv: &SamplingVector,
    rng: &mut R,
) -> Result<Solution> {
    if sv.len() != instance.n() {
        return Err(Error::usage(format!(
            "sampling vector has {} entries for {} variables",
            sv.len(),
            instance.n()
        )));
    }
    let values = (0..sv.len()).map(|j| sv.draw(j, rng)).collect();
    Ok(instance.evaluate_unchecked(values))
}

/// Rounding guided by propagation along `plan.order`.
///
/// The state must be consistent; it is returned to exactly its entry state.
pub fn construct_cp<R: Rng + ?Sized>(
    sv: &SamplingVector,
    plan: &ConstructionPlan,
    state: &mut PropagationState<'_>,
    rng: &mut R,
) -> Result<Solution> {
    let instance = state.instance();
    let n = instance.n();
    if sv.len() != n {
        return Err(Error::usage(format!(
            "sampling vector has {} entries for {} variables",
            sv.len(),
            n
        )));
    }
    plan.validate(n)?;
    if !state.is_consistent() {
        return Err(Error::usage(
            "construction needs a consistent propagation state",
        ));
    }

    state.push_mark();
    let mut stuck: Option<(usize, u8)> = None;
    for &j in &plan.order {
        if !state.is_free(j) {
            continue;
        }
        let v = sv.draw(j, rng);
        if state.fix_and_propagate(j, v)?.is_conflict()
            && state.fix_and_propagate(j, 1 - v)?.is_conflict()
        {
            stuck = Some((j, v));
            break;
        }
    }
    let mut values: Vec<u8> = state.fixings().iter().map(|f| f.unwrap_or(0)).collect();
    if let Some((j, v)) = stuck {
        values[j] = v;
        let free: Vec<usize> = (0..n).filter(|&k| k != j && state.is_free(k)).collect();
        for k in free {
            values[k] = sv.draw(k, rng);
        }
    }
    state.backtrack_to_mark()?;
    Ok(instance.evaluate_unchecked(values))
}

/// Dispatches on `plan.cp_enabled`.
pub fn construct<R: Rng + ?Sized>(
    sv: &SamplingVector,
    plan: &ConstructionPlan,
    state: &mut PropagationState<'_>,
    rng: &mut R,
) -> Result<Solution> {
    if plan.cp_enabled {
        construct_cp(sv, plan, state, rng)
    } else {
        construct_basic(state.instance(), sv, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BipBuilder, Sense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incumbent_vector() {
        let sv = build_sampling_vector(SamplingSource::Incumbent(&[0, 1]), 0.1).unwrap();
        assert_eq!(sv.probs(), &[0.1, 0.9]);
    }

    #[test]
    fn lp_vector_clamps_inclusively() {
        let sv = build_sampling_vector(SamplingSource::Lp(&[0.02, 0.5, 0.99]), 0.05).unwrap();
        assert_eq!(sv.probs(), &[0.05, 0.5, 0.95]);
        let edge = build_sampling_vector(SamplingSource::Lp(&[0.05, 0.95]), 0.05).unwrap();
        assert_eq!(edge.probs(), &[0.05, 0.95]);
    }

    #[test]
    fn d_rate_range() {
        for bad in [0.0, -0.1, 0.51, f64::NAN] {
            assert!(build_sampling_vector(SamplingSource::Lp(&[0.3]), bad).is_err());
        }
        let half = build_sampling_vector(SamplingSource::Incumbent(&[1]), 0.5).unwrap();
        assert_eq!(half.probs(), &[0.5]);
    }

    #[test]
    fn cp_respects_root_fixings() {
        let inst = BipBuilder::new("f")
            .vars(&[0.0, 0.0])
            .row(&[(0, 1.0)], Sense::Ge, 1.0)
            .build()
            .unwrap();
        let mut state = PropagationState::new(&inst);
        let sv = SamplingVector::from_probs(vec![0.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let plan = ConstructionPlan::random(2, true, &mut rng);
            let s = construct_cp(&sv, &plan, &mut state, &mut rng).unwrap();
            assert_eq!(s.values[0], 1);
        }
    }

    #[test]
    fn cp_packing_is_always_feasible() {
        let inst = BipBuilder::new("pack")
            .vars(&[0.0, 0.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Le, 1.0)
            .build()
            .unwrap();
        let mut state = PropagationState::new(&inst);
        let sv = SamplingVector::from_probs(vec![0.9, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let plan = ConstructionPlan::random(2, true, &mut rng);
            assert!(
                construct_cp(&sv, &plan, &mut state, &mut rng)
                    .unwrap()
                    .feasible
            );
        }
    }

    #[test]
    fn bad_plan_is_rejected() {
        let inst = BipBuilder::new("p").vars(&[0.0, 0.0]).build().unwrap();
        let mut state = PropagationState::new(&inst);
        let sv = SamplingVector::from_probs(vec![0.5, 0.5]).unwrap();
        let plan = ConstructionPlan {
            order: vec![0, 0],
            cp_enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(construct_cp(&sv, &plan, &mut state, &mut rng).is_err());
    }
}
