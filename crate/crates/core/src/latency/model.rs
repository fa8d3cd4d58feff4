//! Differentiable runtime model over a latency table.
//!
//! With `I_x` the indicator of subset `x` and `R(k, e, se)` the table entries
//! of a layer:
//!
//! ```text
//! R_e   = I_e3 * (R(5,3,0) + I_e6 * (R(5,6,0) - R(5,3,0)))
//! rho   = rho_3 + I_e6 * (rho_6 - rho_3),     rho_e = R(3,e,0) / R(5,e,0)
//! R_ke  = R_e * (rho + (1 - rho) * I_k5)
//! s     = s_0.25 + I_se50 * (s_0.5 - s_0.25)  (each blended over k and e)
//! R     = R_ke * (1 + I_se25 * (s - 1))
//! ```
//!
//! With 0/1 indicators this reproduces every table entry exactly.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{Architecture, Gates, MBConvType};

use super::table::{LatencyTable, ScalingFactors};

/// Arithmetic the runtime formula is written against: plain floats for
/// hard evaluation, graph variables for the differentiable path.
pub trait Algebra {
    type V: Copy;
    fn constant(&mut self, c: f64) -> Self::V;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;

    /// `a + t * (b - a)`.
    fn lerp(&mut self, a: Self::V, b: Self::V, t: Self::V) -> Result<Self::V> {
        let d = self.sub(b, a)?;
        let td = self.mul(t, d)?;
        self.add(a, td)
    }
}

pub struct Plain;

impl Algebra for Plain {
    type V = f64;
    fn constant(&mut self, c: f64) -> f64 {
        c
    }
    fn add(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a + b)
    }
    fn sub(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a - b)
    }
    fn mul(&mut self, a: f64, b: f64) -> Result<f64> {
        Ok(a * b)
    }
}

impl<T: Scalar> Algebra for Graph<T> {
    type V = Var;
    fn constant(&mut self, c: f64) -> Var {
        self.scalar(T::lit(c))
    }
    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Graph::add(self, a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        Graph::sub(self, a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        Graph::mul(self, a, b)
    }
}

/// Latency table together with its precomputed SE scaling factors.
#[derive(Clone, Debug)]
pub struct RuntimeModel {
    pub table: LatencyTable,
    pub scaling: ScalingFactors,
}

impl RuntimeModel {
    pub fn new(table: LatencyTable) -> Self {
        RuntimeModel {
            scaling: table.scaling_factors(),
            table,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.table.num_layers()
    }

    /// Modelled runtime of one layer from its five indicators. The e = 3
    /// indicator of layers without a skip-op is expected to be 1.
    pub fn layer_runtime<A: Algebra>(&self, alg: &mut A, layer: usize, gates: &Gates<A::V>) -> Result<A::V> {
        if layer >= self.table.num_layers() {
            return Err(Error::Config(format!("latency table has no layer {layer}")));
        }
        let r = self.table.layer(layer);
        let s = &self.scaling.0[layer];
        let mut c = |v: f64| alg.constant(v);
        let (r53, r56) = (c(r[1][0][0]), c(r[1][1][0]));
        let (rho3, rho6) = (c(r[0][0][0] / r[1][0][0]), c(r[0][1][0] / r[1][1][0]));
        let s_q = [[c(s[0][0][0]), c(s[0][1][0])], [c(s[1][0][0]), c(s[1][1][0])]];
        let s_h = [[c(s[0][0][1]), c(s[0][1][1])], [c(s[1][0][1]), c(s[1][1][1])]];
        let one = c(1.0);

        let r5e = alg.lerp(r53, r56, gates.e6)?;
        let r_e = alg.mul(gates.e3, r5e)?;
        let rho = alg.lerp(rho3, rho6, gates.e6)?;
        let k_factor = alg.lerp(rho, one, gates.k5)?;
        let r_ke = alg.mul(r_e, k_factor)?;

        let blend = |alg: &mut A, f: [[A::V; 2]; 2]| -> Result<A::V> {
            let k3 = alg.lerp(f[0][0], f[0][1], gates.e6)?;
            let k5 = alg.lerp(f[1][0], f[1][1], gates.e6)?;
            alg.lerp(k3, k5, gates.k5)
        };
        let quarter = blend(alg, s_q)?;
        let half = blend(alg, s_h)?;
        let s = alg.lerp(quarter, half, gates.se50)?;
        let se_factor = alg.lerp(one, s, gates.se25)?;
        alg.mul(r_ke, se_factor)
    }

    /// Fixed overhead plus the sum of all layer runtimes.
    pub fn network_runtime<A: Algebra>(&self, alg: &mut A, gates: &[Gates<A::V>]) -> Result<A::V> {
        if gates.len() != self.table.num_layers() {
            return Err(Error::Config(format!(
                "{} layers of indicators for a latency table with {} layers",
                gates.len(),
                self.table.num_layers()
            )));
        }
        let mut total = alg.constant(self.table.fixed_overhead_ms);
        for (i, g) in gates.iter().enumerate() {
            let r = self.layer_runtime(alg, i, g)?;
            total = alg.add(total, r)?;
        }
        Ok(total)
    }

    /// Hard-mode runtime of a discrete architecture.
    pub fn architecture_runtime(&self, arch: &Architecture) -> Result<f64> {
        let gates: Vec<Gates<f64>> = arch.layers().iter().map(|&t| type_gates(t)).collect();
        self.network_runtime(&mut Plain, &gates)
    }
}

/// 0/1 indicators selecting `ty`.
pub fn type_gates(ty: MBConvType) -> Gates<f64> {
    let b = |on: bool| if on { 1.0 } else { 0.0 };
    match ty {
        MBConvType::Skip => Gates::splat(0.0),
        MBConvType::Block { kernel, expansion, se } => Gates {
            k5: b(kernel == 5),
            e3: 1.0,
            e6: b(expansion == 6),
            se25: b(se.value() > 0.0),
            se50: b(se.value() == 0.5),
        },
    }
}
