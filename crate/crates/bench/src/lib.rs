//! Shared fixtures for the benchmarks.

use gridform_core::system::ClosedLoop;
use gridform_core::{bundled, solve_equilibrium, Equilibrium, Scenario};

/// A bundled scenario together with its solved equilibrium.
pub struct Fixture {
    pub scenario: Scenario,
    pub equilibrium: Equilibrium,
}

impl Fixture {
    pub fn bundled(name: &str) -> Self {
        let scenario = bundled(name).expect("bundled scenario parses").scenario;
        let equilibrium = solve_equilibrium(&scenario.spec, None).expect("bundled scenario has an equilibrium");
        Fixture { scenario, equilibrium }
    }

    /// Closed-loop field with every inverter active.
    pub fn closed_loop(&self) -> ClosedLoop {
        let spec = &self.scenario.spec;
        ClosedLoop::new(spec, &self.equilibrium.active, spec.secondary.enabled).expect("valid closed loop")
    }

    /// Copy of the scenario with a shorter horizon and no events or windows.
    pub fn short_run(&self, horizon: f64) -> Scenario {
        let mut s = self.scenario.clone();
        s.horizon = horizon;
        s.events.clear();
        s.windows.clear();
        s
    }
}
