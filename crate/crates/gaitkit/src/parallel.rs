use gaitkit_core::bayes_opt::{CostPair, EvalJob, Fidelity, Objective};
use rayon::prelude::*;

/// Runs batched evaluations on the rayon pool. Results are returned in job
/// order, so optimizer histories do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct Parallel<O>(pub O);

impl<O: Objective + Sync> Objective for Parallel<O> {
    fn evaluate(&self, x: &[f64], fidelity: Fidelity, seed: u64) -> gaitkit_core::Result<CostPair> {
        self.0.evaluate(x, fidelity, seed)
    }

    fn evaluate_batch(&self, jobs: &[EvalJob]) -> gaitkit_core::Result<Vec<CostPair>> {
        jobs.par_iter().map(|j| self.0.evaluate(&j.x, j.fidelity, j.seed)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaitkit_core::bayes_opt::GainObjective;
    use gaitkit_core::surrogate_sim::{PlantParams, RealityGap};

    #[test]
    fn batch_matches_sequential() {
        let obj = GainObjective::sagittal_arm(PlantParams::default(), &RealityGap::standard());
        let jobs: Vec<EvalJob> = (0..6)
            .map(|i| EvalJob {
                x: vec![0.5 * i as f64, 0.1],
                fidelity: if i % 2 == 0 { Fidelity::Sim } else { Fidelity::Real },
                seed: i,
            })
            .collect();
        assert_eq!(Parallel(obj.clone()).evaluate_batch(&jobs).unwrap(), obj.evaluate_batch(&jobs).unwrap());
    }
}
