//! Accumulated joint draws across adaptations.

use crate::hmc::RawChains;
use crate::joint::JointPathModel;

/// One kept joint draw with cached endpoint log densities.
#[derive(Debug, Clone)]
pub struct Draw {
    pub adaptation: usize,
    pub chain: usize,
    pub a: f64,
    pub theta: Vec<f64>,
    /// log q(theta) at the lambda = 1 endpoint.
    pub log_q: f64,
    /// log psi(theta) at the lambda = 0 endpoint.
    pub log_psi: f64,
    pub divergent: bool,
}

/// Draws from one adaptation, in chain-id order.
#[derive(Debug, Clone)]
pub struct DrawBatch {
    pub adaptation: usize,
    pub draws: Vec<Draw>,
    pub n_grad_evals: u64,
}

impl DrawBatch {
    /// Decorates raw sampler output from the joint path model: converts the
    /// unconstrained temperature coordinate to a and caches both endpoint
    /// log densities.
    pub fn from_joint_run(jpm: &JointPathModel, raw: &RawChains, adaptation: usize) -> Self {
        let mut draws = Vec::with_capacity(raw.total_kept());
        for (chain, out) in raw.chains.iter().enumerate() {
            for (pos, divergent) in out.positions.iter().zip(&out.divergent) {
                let a = jpm.a_of_u(pos[0]);
                let theta = pos[1..].to_vec();
                let (log_q, log_psi) = jpm.endpoint_logs(&theta);
                draws.push(Draw {
                    adaptation,
                    chain,
                    a,
                    theta,
                    log_q,
                    log_psi,
                    divergent: *divergent,
                });
            }
        }
        DrawBatch {
            adaptation,
            draws,
            n_grad_evals: raw.total_grad_evals(),
        }
    }
}

/// All kept draws across adaptations. Appends happen between adaptations
/// only; estimators take shared references.
#[derive(Debug, Clone, Default)]
pub struct DrawStore {
    draws: Vec<Draw>,
    adaptations: usize,
    grad_evals: u64,
}

impl DrawStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, batch: DrawBatch) {
        self.adaptations = self.adaptations.max(batch.adaptation + 1);
        self.grad_evals += batch.n_grad_evals;
        self.draws.extend(batch.draws);
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn adaptations(&self) -> usize {
        self.adaptations
    }

    pub fn total_grad_evals(&self) -> u64 {
        self.grad_evals
    }

    pub fn all(&self) -> &[Draw] {
        &self.draws
    }

    pub fn of_adaptation(&self, adaptation: usize) -> Vec<&Draw> {
        self.draws
            .iter()
            .filter(|d| d.adaptation == adaptation)
            .collect()
    }

    pub fn last_adaptation(&self) -> Option<usize> {
        self.adaptations.checked_sub(1)
    }
}
