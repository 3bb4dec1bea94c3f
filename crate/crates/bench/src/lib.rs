//! Fixtures shared by the benchmarks.

use gradflow_core::loss::{ProblemSpec, StepData};
use gradflow_core::network::batch::{evaluate, BatchConfig};
use gradflow_core::network::{init_params, NetworkParams};
use gradflow_core::sampling::SampleSet;

/// A heat problem at d with a primal net, a dual net, a cloud and the
/// data of the first time step.
pub struct Fixture {
    pub spec: ProblemSpec,
    pub samples: SampleSet,
    pub u: NetworkParams,
    pub v: NetworkParams,
    pub step: StepData,
    pub batch: BatchConfig,
}

impl Fixture {
    pub fn new(d: usize, n_interior: usize, n_boundary: usize, m_u: usize, m_v: usize) -> Fixture {
        let spec = ProblemSpec::heat(&vec![2; d], 100.0, 1e-4, 1).unwrap();
        let samples = SampleSet::generate(d, n_interior, n_boundary, 0).unwrap();
        let u = init_params(d, m_u, 0.03, 1).unwrap();
        let v = init_params(d, m_v, 0.03, 2).unwrap();
        let batch = BatchConfig::default();
        let mut u_prev = evaluate(&u, samples.interior(), false, batch).values;
        u_prev.iter_mut().for_each(|x| *x *= 0.9);
        let step = StepData::new(&spec, &samples, spec.t_n(1), u_prev).unwrap();
        Fixture { spec, samples, u, v, step, batch }
    }
}
