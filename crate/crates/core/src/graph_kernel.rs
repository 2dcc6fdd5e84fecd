//! Finite site set, per-particle jump intensities and the graph diffusion
//! operator `Δ_{V,p} ζ(x) = Σ_y p(y,x) ζ(y) − p(x,y) ζ(x)`.
//!
//! Rates are jump intensities (events per unit time per particle), not
//! probabilities: rows need not sum to one and `p` need not be symmetric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `|V| × |V|` jump-rate matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SiteKernel {
    sites: usize,
    rates: Vec<f64>,
}

impl SiteKernel {
    /// Builds a kernel from rows. Diagonal entries are dropped (a self-jump
    /// changes nothing).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let sites = rows.len();
        if sites == 0 {
            return Err(Error::InvalidParameter("kernel needs at least one site".into()));
        }
        let mut rates = Vec::with_capacity(sites * sites);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != sites {
                return Err(Error::DimensionMismatch { expected: sites, actual: row.len() });
            }
            for (y, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::NonFinite("kernel"));
                }
                if r < 0.0 {
                    return Err(Error::InvalidParameter(format!("negative jump rate p({x},{y}) = {r}")));
                }
                rates.push(if x == y { 0.0 } else { r });
            }
        }
        Ok(Self { sites, rates })
    }

    /// One isolated site: no diffusion.
    pub fn single_site() -> Self {
        Self { sites: 1, rates: vec![0.0] }
    }

    /// Complete graph with unit rates: recovers the unweighted graph
    /// Laplacian `Σ_{y~x} ζ(y) − ζ(x)` per neighbour.
    pub fn complete(sites: usize, rate: f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..sites)
            .map(|x| (0..sites).map(|y| if x == y { 0.0 } else { rate }).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn site_count(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from * self.sites + to]
    }

    /// Row `from` of the matrix.
    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.rates[from * self.sites..(from + 1) * self.sites]
    }

    /// Total per-particle jump intensity out of `from`.
    pub fn out_rate(&self, from: usize) -> f64 {
        self.row(from).iter().sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.sites).map(|x| self.row(x).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SiteKernel {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<SiteKernel> for Vec<Vec<f64>> {
    fn from(k: SiteKernel) -> Self {
        k.to_rows()
    }
}

/// Nonnegative mass per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DensityVector(Vec<f64>);

impl DensityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density"));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidParameter(format!("negative density {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for DensityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for DensityVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DensityVector> for Vec<f64> {
    fn from(d: DensityVector) -> Self {
        d.0
    }
}

/// `Δ_{V,p} ζ` for an arbitrary real vector. Used by the SDE solver, whose
/// state may dip below zero between truncations.
pub fn laplacian_into(kernel: &SiteKernel, zeta: &[f64], out: &mut [f64]) -> Result<()> {
    let n = kernel.site_count();
    if zeta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: zeta.len() });
    }
    if out.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: out.len() });
    }
    if zeta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("laplacian input"));
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    // Accumulate each flow p(x,y)ζ(x) once: it leaves x and enters y, so the
    // output sums to zero up to rounding in the per-entry additions.
    for x in 0..n {
        let zx = zeta[x];
        if zx == 0.0 {
            continue;
        }
        for (y, &p) in kernel.row(x).iter().enumerate() {
            if p != 0.0 {
                let flow = p * zx;
                out[x] -= flow;
                out[y] += flow;
            }
        }
    }
    Ok(())
}

pub fn discrete_laplacian(kernel: &SiteKernel, zeta: &DensityVector) -> Result<Vec<f64>> {
    let mut out = vec![0.0; kernel.site_count()];
    laplacian_into(kernel, zeta.as_slice(), &mut out)?;
    Ok(out)
}

/// `S = Σ_x ζ(x)`.
pub fn total_mass(zeta: &DensityVector) -> f64 {
    zeta.as_slice().iter().sum()
}
