//! Superkernel subsets, trainable thresholds and the indicator encoding of
//! kernel size, expansion ratio and SE ratio.
//!
//! A searchable layer keeps one `E x 1 x 5 x 5` depthwise kernel at the
//! maximum expansion `E` and one `S x E x 1 x 1` squeeze kernel at SE ratio
//! 0.5. Each architectural choice zeroes a nested subset of those weights:
//!
//! ```text
//! w_k   = w_3x3 + 1(|w_shell|^2 > t_k5) * w_shell
//! w_dw  = 1(|w_k,3|^2 > t_e3) * (w_k,3 + 1(|w_k,6\3|^2 > t_e6) * w_k,6\3)
//! w_se  = 1(|w_0.25|^2 > t_se25) * (w_0.25 + 1(|w_0.5\0.25|^2 > t_se50) * w_0.5\0.25)
//! ```
//!
//! Squared norms are divided by the subset size.

use crate::autodiff::{GateKind, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

use super::config::ResolvedLayer;
use super::types::{MBConvType, SeRatio};

/// Relaxation of the indicator functions during search.
pub type IndicatorMode = GateKind;

/// Threshold magnitude used to force an indicator fully on or off.
pub const FORCE: f64 = 1e9;

/// One value per architectural decision of a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gates<V> {
    pub k5: V,
    pub e3: V,
    pub e6: V,
    pub se25: V,
    pub se50: V,
}

impl<V: Copy> Gates<V> {
    pub fn splat(v: V) -> Self {
        Gates {
            k5: v,
            e3: v,
            e6: v,
            se25: v,
            se50: v,
        }
    }

    pub fn to_array(&self) -> [V; 5] {
        [self.k5, self.e3, self.e6, self.se25, self.se50]
    }

    pub fn from_array(a: [V; 5]) -> Self {
        Gates {
            k5: a[0],
            e3: a[1],
            e6: a[2],
            se25: a[3],
            se50: a[4],
        }
    }

    pub fn map<U>(&self, f: impl Fn(V) -> U) -> Gates<U> {
        Gates {
            k5: f(self.k5),
            e3: f(self.e3),
            e6: f(self.e6),
            se25: f(self.se25),
            se50: f(self.se50),
        }
    }
}

/// Names of the five thresholds, in [`Gates::to_array`] order.
pub const THRESHOLD_NAMES: [&str; 5] = ["t_k5", "t_e3", "t_e6", "t_se25", "t_se50"];

/// Which optional subsets survive a dropout draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Keep {
    pub k5: bool,
    pub e6: bool,
    pub se25: bool,
    pub se50: bool,
}

impl Keep {
    pub const ALL: Keep = Keep {
        k5: true,
        e6: true,
        se25: true,
        se50: true,
    };
}

/// Nested subset masks of one layer's superkernels.
#[derive(Clone, Debug)]
pub struct SubsetMasks {
    /// Centered 3x3 window of the 5x5 depthwise kernel, all channels.
    pub inner: Mask,
    /// 5x5 minus the inner 3x3.
    pub shell: Mask,
    /// First half of the expanded channels (the e = 3 subset).
    pub first_half: Mask,
    pub second_half: Mask,
    /// First half of the squeeze channels (the se = 0.25 subset).
    pub se_quarter: Mask,
    pub se_shell: Mask,
}

impl SubsetMasks {
    pub fn new(layer: &ResolvedLayer) -> Self {
        let e = layer.max_expanded();
        let s = layer.max_squeeze();
        let dw = [e, 1, 5, 5];
        let sq = [s, e, 1, 1];
        let inner = Mask::from_fn(&dw, |i| (1..4).contains(&i[2]) && (1..4).contains(&i[3]));
        let first_half = Mask::from_fn(&dw, |i| i[0] < e / 2);
        let se_quarter = Mask::from_fn(&sq, |i| i[0] < s / 2);
        SubsetMasks {
            shell: inner.not(),
            inner,
            second_half: first_half.not(),
            first_half,
            se_shell: se_quarter.not(),
            se_quarter,
        }
    }
}

/// `1(norm_sq > t)` under `mode`.
pub fn indicator<T: Scalar>(g: &mut Graph<T>, norm_sq: Var, t: Var, mode: IndicatorMode) -> Result<Var> {
    g.gate(norm_sq, t, mode)
}

/// `base + gate * extra`.
fn nest<T: Scalar>(g: &mut Graph<T>, base: Var, extra: Var, gate: Var) -> Result<Var> {
    let gated = g.scale(extra, gate)?;
    g.add(base, gated)
}

/// Kernel-size composition `w_k = w_3x3 + g_k5 * w_shell`.
pub fn compose_kernel_size<T: Scalar>(g: &mut Graph<T>, dw: Var, m: &SubsetMasks, k5: Var) -> Result<Var> {
    let inner = g.mask(dw, &m.inner)?;
    let shell = g.mask(dw, &m.shell)?;
    nest(g, inner, shell, k5)
}

/// Expansion composition `w_dw = g_e3 * (w_k,3 + g_e6 * w_k,6\3)`.
pub fn compose_expansion<T: Scalar>(g: &mut Graph<T>, wk: Var, m: &SubsetMasks, e3: Var, e6: Var) -> Result<Var> {
    let first = g.mask(wk, &m.first_half)?;
    let second = g.mask(wk, &m.second_half)?;
    let inner = nest(g, first, second, e6)?;
    g.scale(inner, e3)
}

/// SE composition `w_se = g_se25 * (w_0.25 + g_se50 * w_0.5\0.25)`.
pub fn compose_se<T: Scalar>(g: &mut Graph<T>, sq: Var, m: &SubsetMasks, se25: Var, se50: Var) -> Result<Var> {
    let quarter = g.mask(sq, &m.se_quarter)?;
    let shell = g.mask(sq, &m.se_shell)?;
    let inner = nest(g, quarter, shell, se50)?;
    g.scale(inner, se25)
}

/// Effective kernels of one layer together with the indicator values used.
#[derive(Clone, Copy, Debug)]
pub struct Effective {
    pub depthwise: Var,
    pub squeeze: Var,
    /// Indicators before dropout; these feed the runtime model.
    pub gates: Gates<Var>,
    /// Indicators after dropout; these shape the kernels.
    pub applied: Gates<Var>,
}

/// Where the indicator values of a layer come from.
#[derive(Clone, Copy, Debug)]
pub enum GateSource<'a> {
    /// Norms of the weight subsets compared to trainable thresholds.
    Thresholds { thresholds: &'a Gates<Var>, mode: IndicatorMode },
    /// Precomputed relaxed indicators (softmax encodings).
    Given(&'a Gates<Var>),
}

fn keep_gate<T: Scalar>(g: &mut Graph<T>, gate: Var, keep: bool) -> Result<Var> {
    if keep {
        Ok(gate)
    } else {
        let zero = g.scalar(T::zero());
        g.mul(gate, zero)
    }
}

/// Builds the effective depthwise and squeeze kernels of a layer.
///
/// For layers without a residual path the e = 3 indicator is pinned to 1,
/// so the skip-op is never selected there.
pub fn effective_kernels<T: Scalar>(
    g: &mut Graph<T>,
    dw: Var,
    squeeze: Var,
    masks: &SubsetMasks,
    skippable: bool,
    source: GateSource<'_>,
    keep: Keep,
) -> Result<Effective> {
    check_shapes(g, dw, squeeze, masks)?;
    let one = g.scalar(T::one());
    let gate_for = |g: &mut Graph<T>, which: fn(&Gates<Var>) -> Var, x: &dyn Fn(&mut Graph<T>) -> Result<Var>| -> Result<Var> {
        match source {
            GateSource::Thresholds { thresholds, mode } => {
                let norm = x(g)?;
                indicator(g, norm, which(thresholds), mode)
            }
            GateSource::Given(gates) => Ok(which(gates)),
        }
    };

    let k5 = gate_for(g, |t| t.k5, &|g| g.group_lasso_sq_norm(dw, &masks.shell))?;
    let k5_applied = keep_gate(g, k5, keep.k5)?;
    let wk = compose_kernel_size(g, dw, masks, k5_applied)?;

    let e3 = if skippable {
        gate_for(g, |t| t.e3, &|g| g.group_lasso_sq_norm(wk, &masks.first_half))?
    } else {
        one
    };
    let e6 = gate_for(g, |t| t.e6, &|g| g.group_lasso_sq_norm(wk, &masks.second_half))?;
    let e6_applied = keep_gate(g, e6, keep.e6)?;
    let depthwise = compose_expansion(g, wk, masks, e3, e6_applied)?;

    let se25 = gate_for(g, |t| t.se25, &|g| g.group_lasso_sq_norm(squeeze, &masks.se_quarter))?;
    let se50 = gate_for(g, |t| t.se50, &|g| g.group_lasso_sq_norm(squeeze, &masks.se_shell))?;
    let se25_applied = keep_gate(g, se25, keep.se25)?;
    let se50_applied = keep_gate(g, se50, keep.se50)?;
    let squeeze_eff = compose_se(g, squeeze, masks, se25_applied, se50_applied)?;

    Ok(Effective {
        depthwise,
        squeeze: squeeze_eff,
        gates: Gates {
            k5,
            e3,
            e6,
            se25,
            se50,
        },
        applied: Gates {
            k5: k5_applied,
            e3,
            e6: e6_applied,
            se25: se25_applied,
            se50: se50_applied,
        },
    })
}

fn check_shapes<T: Scalar>(g: &Graph<T>, dw: Var, squeeze: Var, m: &SubsetMasks) -> Result<()> {
    if g.value(dw).shape() != m.inner.shape() {
        return Err(Error::Config(format!(
            "depthwise superkernel {:?} does not match masks {:?}",
            g.value(dw).shape(),
            m.inner.shape()
        )));
    }
    if g.value(squeeze).shape() != m.se_quarter.shape() {
        return Err(Error::Config(format!(
            "squeeze superkernel {:?} does not match masks {:?}",
            g.value(squeeze).shape(),
            m.se_quarter.shape()
        )));
    }
    Ok(())
}

/// Normalized squared norm of a masked subset of a plain tensor.
pub fn subset_norm<T: Scalar>(t: &Tensor<T>, mask: &Mask) -> T {
    let s: T = t
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v * v)
        .sum();
    s / T::count(mask.count())
}

/// Norms compared against thresholds when binarizing a layer.
///
/// The expansion norms are taken over `w_k` after the (hard) kernel-size
/// decision, matching the nesting of the encoding.
pub fn hard_norms<T: Scalar>(dw: &Tensor<T>, squeeze: &Tensor<T>, m: &SubsetMasks, t_k5: T) -> Gates<T> {
    let k5 = subset_norm(dw, &m.shell);
    let wk = if k5 > t_k5 { dw.clone() } else { m.inner.apply(dw) };
    Gates {
        k5,
        e3: subset_norm(&wk, &m.first_half),
        e6: subset_norm(&wk, &m.second_half),
        se25: subset_norm(squeeze, &m.se_quarter),
        se50: subset_norm(squeeze, &m.se_shell),
    }
}

/// Binarizes norms against thresholds (strict `>`; ties select "not used").
pub fn decode_rule<T: Scalar>(norms: &Gates<T>, thresholds: &Gates<T>, skippable: bool) -> MBConvType {
    let on = |n: T, t: T| n > t;
    if skippable && !on(norms.e3, thresholds.e3) {
        return MBConvType::Skip;
    }
    let kernel = if on(norms.k5, thresholds.k5) { 5 } else { 3 };
    let expansion = if on(norms.e6, thresholds.e6) { 6 } else { 3 };
    let se = if !on(norms.se25, thresholds.se25) {
        SeRatio::None
    } else if on(norms.se50, thresholds.se50) {
        SeRatio::Half
    } else {
        SeRatio::Quarter
    };
    MBConvType::Block { kernel, expansion, se }
}

/// Thresholds that select `ty` regardless of the weights.
pub fn forced_thresholds(ty: MBConvType, skippable: bool) -> Result<Gates<f64>> {
    let set = |on: bool| if on { -FORCE } else { FORCE };
    match ty {
        MBConvType::Skip => {
            if !skippable {
                return Err(Error::Config("skip-op requested for a layer without residual path".into()));
            }
            Ok(Gates {
                k5: FORCE,
                e3: FORCE,
                e6: FORCE,
                se25: FORCE,
                se50: FORCE,
            })
        }
        MBConvType::Block { kernel, expansion, se } => Ok(Gates {
            k5: set(kernel == 5),
            e3: set(true),
            e6: set(expansion == 6),
            se25: set(se != SeRatio::None),
            se50: set(se == SeRatio::Half),
        }),
    }
}
