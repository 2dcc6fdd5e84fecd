//! Named model configurations.

use crate::error::{Error, Result};
use crate::graph_kernel::{DensityVector, SiteKernel};
use crate::rate_synthesis::ModelParams;
use crate::sde::SdeSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub params: ModelParams,
    pub kernel: SiteKernel,
    pub rho0: DensityVector,
    pub horizon: f64,
}

pub const PRESETS: [&str; 4] = ["feller", "anderson", "quadratic", "critical"];

impl Preset {
    pub fn named(name: &str) -> Result<Self> {
        let single = SiteKernel::single_site;
        let (name, params, kernel, rho0) = match name {
            // ℓ = 1: discrete Dynkin-type branching, Feller diffusion in the limit
            "feller" => ("feller", ModelParams::new(1.0, 1.0, 1, 1, 100)?, single(), vec![1.0]),
            // β = 0, ℓ = 2: outside the convergence theorem
            "anderson" => ("anderson", ModelParams::new(1.0, 0.0, 2, 2, 100)?, SiteKernel::complete(2, 1.0)?, vec![1.0, 1.0]),
            "quadratic" => ("quadratic", ModelParams::new(1.0, 1.0, 2, 1, 100)?, SiteKernel::complete(2, 1.0)?, vec![1.0, 0.5]),
            "critical" => ("critical", ModelParams::new(1.0, 1.0, 2, 2, 100)?, single(), vec![1.0]),
            other => {
                return Err(Error::InvalidParameter(format!("unknown preset '{other}' (known: {})", PRESETS.join(", "))))
            }
        };
        Ok(Self { name, params, kernel, rho0: DensityVector::new(rho0)?, horizon: 1.0 })
    }

    pub fn with_n(mut self, n: u64) -> Result<Self> {
        self.params = ModelParams { n, ..self.params };
        self.params.validate()?;
        Ok(self)
    }

    /// The matching limit SDE.
    pub fn sde(&self, dt: f64) -> SdeSpec {
        SdeSpec {
            alpha: self.params.alpha,
            beta: self.params.beta,
            k: self.params.k,
            ell: self.params.ell,
            kernel: self.kernel.clone(),
            rho0: self.rho0.clone(),
            dt,
            horizon: self.horizon,
            sample_dt: None,
            mass_guard: None,
        }
    }
}
