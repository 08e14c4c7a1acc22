#![allow(dead_code)]

use stap_hmm::base_measure::Domain;
use stap_hmm::io::{SimulationTruth, TruthAnimal, TruthBehavior};

pub const SHARED_SIGMA: [[f64; 2]; 2] = [[0.02, 0.005], [0.005, 0.015]];

fn behavior(name: &str, label: [u16; 5], mu: [f64; 2], tau: f64, rho: f64) -> TruthBehavior {
    TruthBehavior { name: name.into(), label: Some(label), mu, eta: [0.5, 0.0], sigma: SHARED_SIGMA, tau, rho }
}

/// Two animals, two behaviors each; every behavior uses the same Sigma,
/// and within an animal the behaviors differ in tau (and rho).
pub fn sharing_truth(length: usize) -> SimulationTruth {
    let sticky = vec![vec![0.98, 0.02], vec![0.02, 0.98]];
    SimulationTruth {
        epsilon: 0.00001,
        domain: Domain::default(),
        step_seconds: 1800.0,
        start_time: 0.0,
        behaviors: vec![
            behavior("rest_1", [0, 0, 0, 0, 0], [-1.0, -1.0], 0.5, 0.0),
            behavior("travel_1", [0, 0, 0, 1, 1], [-1.0, -1.0], 0.05, 0.9),
            behavior("rest_2", [1, 0, 0, 0, 0], [1.0, 1.0], 0.5, 0.0),
            behavior("travel_2", [1, 0, 0, 1, 1], [1.0, 1.0], 0.05, 0.9),
        ],
        animals: vec![
            TruthAnimal { id: "dog1".into(), behaviors: vec![0, 1], transition: sticky.clone(), start: [-1.0, -1.0], length, missing_rate: 0.0 },
            TruthAnimal { id: "dog2".into(), behaviors: vec![2, 3], transition: sticky, start: [1.0, 1.0], length, missing_rate: 0.0 },
        ],
    }
}
