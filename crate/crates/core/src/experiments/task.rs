//! Synthetic spike-pattern classification task.

use crate::rng::{streams, CounterRng};

/// Every class has a fixed random rate template over the inputs; an example
/// is a Poisson spike train drawn from its class template.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub num_inputs: usize,
    pub steps: usize,
    /// Time step (ms).
    pub dt: f64,
    /// `templates[c][i]`: rate of input `i` in class `c` (Hz).
    pub templates: Vec<Vec<f64>>,
    seed: u64,
}

/// One example: spiking input indices per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: usize,
    pub spikes: Vec<Vec<u32>>,
}

/// Examples of the training and test sets come from disjoint index ranges.
const TEST_OFFSET: u32 = 1 << 30;

impl SyntheticTask {
    /// Templates assign `rate_high` to a random half of the inputs and
    /// `rate_low` to the rest, redrawn until all classes differ.
    pub fn new(
        num_classes: usize,
        num_inputs: usize,
        steps: usize,
        dt: f64,
        rate_low: f64,
        rate_high: f64,
        seed: u64,
    ) -> Self {
        assert!(num_inputs >= 2, "need at least two inputs");
        let mut rng = CounterRng::keyed(seed, streams::TASK, 0, 0);
        let mut templates: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        while templates.len() < num_classes {
            let high = rng.sample_k_distinct(num_inputs / 2, num_inputs).expect("k <= n");
            let mut t = vec![rate_low; num_inputs];
            for i in high {
                t[i as usize] = rate_high;
            }
            if !templates.contains(&t) {
                templates.push(t);
            }
        }
        Self { num_classes, num_inputs, steps, dt, templates, seed }
    }

    fn draw(&self, index: u32) -> Example {
        let mut rng = CounterRng::keyed(self.seed, streams::TASK, 1, index);
        let label = rng.uniform_int(self.num_classes as u64) as usize;
        let p: Vec<f64> = self.templates[label].iter().map(|r| -(-r * self.dt * 1e-3).exp_m1()).collect();
        let spikes = (0..self.steps)
            .map(|_| {
                p.iter()
                    .enumerate()
                    .filter_map(|(i, &pi)| (rng.uniform01() < pi).then_some(i as u32))
                    .collect()
            })
            .collect();
        Example { label, spikes }
    }

    pub fn train_example(&self, index: usize) -> Example {
        self.draw(index as u32)
    }

    pub fn test_example(&self, index: usize) -> Example {
        self.draw(TEST_OFFSET + index as u32)
    }
}
