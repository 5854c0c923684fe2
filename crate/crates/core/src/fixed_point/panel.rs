//! The fixed Monte Carlo panel behind every expectation over `(x, y)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{DataModel, Moments};
use crate::linalg;
use crate::loss::Loss;
use crate::quadrature::GaussHermite;
use crate::rng;
use crate::{Error, Result};

/// How a panel is drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelOptions {
    /// Number of `(x, y)` draws `M` (rounded up to even per class).
    pub size: usize,
    /// Gauss-Hermite order `K` for the independent `z ~ N(0, 1)`.
    pub quad_order: usize,
    pub seed: u64,
    /// Draw samples in mirrored pairs.
    pub antithetic: bool,
    /// Affinely correct each class so its sample mean and covariance equal
    /// the design's exact moments (jointly with the noise for regression).
    pub moment_match: bool,
    /// Extra directions kept fixed by the LFMM mirror (typically the
    /// regularizer shift).
    pub preserve: Vec<DVector<f64>>,
}

impl Default for PanelOptions {
    fn default() -> Self {
        PanelOptions {
            size: 200_000,
            quad_order: 41,
            seed: 0,
            antithetic: true,
            moment_match: true,
            preserve: Vec::new(),
        }
    }
}

/// A group of panel samples sharing a class (or the whole panel for
/// regression designs).
#[derive(Clone, Debug, PartialEq)]
pub struct PanelGroup {
    pub label: Option<f64>,
    /// Total sample weight of the group.
    pub prior: f64,
    pub range: Range<usize>,
}

/// Samples `(x_j, y_j)` with weights summing to one, stored class by class,
/// plus the quadrature rule for `z`. Fixed for the lifetime of a solve.
#[derive(Clone, Debug)]
pub struct ExpectationPanel {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub groups: Vec<PanelGroup>,
    pub quad: GaussHermite,
}

/// `(x, y, ε)` for one chunk of a class.
type Block = (DMatrix<f64>, Vec<f64>, Vec<f64>);

const PAIRS_PER_CHUNK: usize = 512;
const MAX_PANEL_BYTES: usize = 2 << 30;

/// Conditional expectations over one group, at a given `(μ, α, κ)`.
#[derive(Clone, Debug)]
pub(crate) struct GroupStats {
    pub ez_xi: f64,
    pub e_xi2: f64,
    pub e_dxi: f64,
    pub ex_xi: DVector<f64>,
}

impl ExpectationPanel {
    pub fn build(model: &DataModel, opts: &PanelOptions) -> Result<Self> {
        let quad = GaussHermite::new(opts.quad_order)?;
        if let DataModel::Empirical(d) = model {
            return Self::from_samples(d.x.clone(), d.y.clone(), opts.quad_order);
        }
        if opts.size < 2 {
            return Err(Error::InvalidArgument("panel size must be at least 2".into()));
        }
        let p = model.dim();
        if p.saturating_mul(opts.size).saturating_mul(8) > MAX_PANEL_BYTES {
            return Err(Error::InvalidArgument(format!(
                "panel of {} vectors in dimension {p} exceeds the memory budget; lower the panel size",
                opts.size
            )));
        }
        let plan: Vec<(Option<f64>, f64, Moments)> = match model.classes() {
            Some(cl) => cl.into_iter().map(|c| (Some(c.label), c.prior, c.moments)).collect(),
            None => vec![(None, 1.0, model.moments())],
        };
        let counts: Vec<usize> = plan
            .iter()
            .map(|(_, prior, _)| (2 * ((prior * opts.size as f64 / 2.0).round() as usize)).max(2))
            .collect();
        let total: usize = counts.iter().sum();

        let mut x = DMatrix::zeros(p, total);
        let mut y = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(plan.len());
        let mut start = 0;
        for (class, ((label, prior, moments), &count)) in plan.iter().zip(&counts).enumerate() {
            let (mut xc, mut yc, mut eps) = draw_group(model, class, count, opts)?;
            if opts.moment_match {
                match model.regression_target() {
                    Some((theta, sigma)) => {
                        match_regression(&mut xc, &mut eps, moments, sigma);
                        yc = crate::data::regression_labels(&xc, theta, &eps);
                    }
                    None => match_moments(&mut xc, moments),
                }
            }
            x.columns_mut(start, count).copy_from(&xc);
            y.extend(yc);
            weights.extend(std::iter::repeat_n(prior / count as f64, count));
            groups.push(PanelGroup {
                label: *label,
                prior: *prior,
                range: start..start + count,
            });
            start += count;
        }
        Ok(ExpectationPanel {
            x,
            y,
            weights,
            groups,
            quad,
        })
    }

    /// Panel from given samples with uniform weights. Binary labels are
    /// grouped by class.
    pub fn from_samples(x: DMatrix<f64>, y: Vec<f64>, quad_order: usize) -> Result<Self> {
        crate::error::check_dim(x.ncols(), y.len())?;
        if y.is_empty() {
            return Err(Error::InvalidArgument("panel needs at least one sample".into()));
        }
        let quad = GaussHermite::new(quad_order)?;
        let m = y.len();
        let binary = y.iter().all(|&v| v == 1.0 || v == -1.0);
        let (x, y, groups) = if binary {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&j| y[j] > 0.0);
            let neg = order.iter().filter(|&&j| y[j] < 0.0).count();
            let x = x.select_columns(&order);
            let y: Vec<f64> = order.iter().map(|&j| y[j]).collect();
            let mut groups = Vec::new();
            for (label, range) in [(-1.0, 0..neg), (1.0, neg..m)] {
                if !range.is_empty() {
                    groups.push(PanelGroup {
                        label: Some(label),
                        prior: range.len() as f64 / m as f64,
                        range,
                    });
                }
            }
            (x, y, groups)
        } else {
            let groups = vec![PanelGroup {
                label: None,
                prior: 1.0,
                range: 0..m,
            }];
            (x, y, groups)
        };
        Ok(ExpectationPanel {
            x,
            y,
            weights: vec![1.0 / m as f64; m],
            groups,
            quad,
        })
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub(crate) fn check_labels(&self, loss: &Loss) -> Result<()> {
        self.y.iter().try_for_each(|&v| loss.check_label(v))
    }

    /// Conditional expectations for each requested set of groups. Each
    /// entry of `sets` lists panel groups pooled together and evaluated
    /// with the given `(α, κ)`.
    pub(crate) fn evaluate(
        &self,
        loss: &Loss,
        mu: &DVector<f64>,
        sets: &[(Vec<usize>, f64, f64)],
    ) -> Vec<GroupStats> {
        let proj = self.x.tr_mul(mu);
        let k = self.quad.order();
        let (nodes, qw) = (&self.quad.nodes, &self.quad.weights);
        let mut out = Vec::with_capacity(sets.len());
        for (members, alpha, kappa) in sets {
            let (alpha, kappa) = (*alpha, *kappa);
            let mass: f64 = members.iter().map(|&g| self.groups[g].prior).sum();
            let mut coef = vec![0.0; self.size()];
            let mut totals = [0.0; 3];
            for &g in members {
                let range = self.groups[g].range.clone();
                let chunk_sums: Vec<[f64; 3]> = coef[range.clone()]
                    .par_chunks_mut(4096)
                    .enumerate()
                    .map(|(c, slot)| {
                        let base = range.start + c * 4096;
                        let mut acc = [0.0; 3];
                        for (i, out) in slot.iter_mut().enumerate() {
                            let j = base + i;
                            let (c0, yj) = (proj[j], self.y[j]);
                            let (mut s_xi, mut s_z, mut s_2, mut s_d) = (0.0, 0.0, 0.0, 0.0);
                            for q in 0..k / 2 {
                                let (z, w) = (nodes[k - 1 - q], qw[q]);
                                let (a, da) = loss.xi_and_du_unchecked(yj, c0 + alpha * z, kappa);
                                let (b, db) = loss.xi_and_du_unchecked(yj, c0 - alpha * z, kappa);
                                s_xi += w * (a + b);
                                s_z += w * z * (a - b);
                                s_2 += w * (a * a + b * b);
                                s_d += w * (da + db);
                            }
                            if k % 2 == 1 {
                                let w = qw[k / 2];
                                let (a, da) = loss.xi_and_du_unchecked(yj, c0, kappa);
                                s_xi += w * a;
                                s_2 += w * a * a;
                                s_d += w * da;
                            }
                            let wj = self.weights[j] / mass;
                            *out = wj * s_xi;
                            acc[0] += wj * s_z;
                            acc[1] += wj * s_2;
                            acc[2] += wj * s_d;
                        }
                        acc
                    })
                    .collect();
                for s in chunk_sums {
                    totals[0] += s[0];
                    totals[1] += s[1];
                    totals[2] += s[2];
                }
            }
            let mut ex_xi = DVector::zeros(self.dim());
            for &g in members {
                let r = self.groups[g].range.clone();
                let cols = self.x.columns(r.start, r.len());
                let c = DVector::from_column_slice(&coef[r]);
                ex_xi.gemv(1.0, &cols, &c, 1.0);
            }
            out.push(GroupStats {
                ez_xi: totals[0],
                e_xi2: totals[1],
                e_dxi: totals[2],
                ex_xi,
            });
        }
        out
    }
}

fn draw_group(
    model: &DataModel,
    class: usize,
    count: usize,
    opts: &PanelOptions,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let p = model.dim();
    // without mirroring, draw twice as many pairs and keep one of each
    let pairs = if opts.antithetic { count / 2 } else { count };
    let chunks = pairs.div_ceil(PAIRS_PER_CHUNK);
    let blocks: Vec<Result<Block>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = PAIRS_PER_CHUNK.min(pairs - c * PAIRS_PER_CHUNK);
            let index = ((class as u64) << 32) | c as u64;
            let mut r = rng::stream(opts.seed, rng::domain::PANEL, index);
            model.antithetic_block(class, n, &mut r, &opts.preserve)
        })
        .collect();
    let mut x = DMatrix::zeros(p, count);
    let mut y = Vec::with_capacity(count);
    let mut eps = Vec::with_capacity(count);
    let mut col = 0;
    for b in blocks {
        let (bx, by, be) = b?;
        if opts.antithetic {
            x.columns_mut(col, bx.ncols()).copy_from(&bx);
            col += bx.ncols();
            y.extend(by);
            eps.extend(be);
        } else {
            for j in (0..bx.ncols()).step_by(2) {
                x.set_column(col, &bx.column(j));
                col += 1;
                y.push(by[j]);
                if !be.is_empty() {
                    eps.push(be[j]);
                }
            }
        }
    }
    Ok((x, y, eps))
}

/// Mean and (1/m-normalised) covariance of the columns.
fn column_moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (p, m) = x.shape();
    let mean = x.column_mean();
    let mut second = DMatrix::zeros(p, p);
    for start in (0..m).step_by(2048) {
        let len = 2048.min(m - start);
        let mut block = x.columns(start, len).into_owned();
        for mut c in block.column_iter_mut() {
            c -= &mean;
        }
        second += &block * block.transpose();
    }
    (mean, linalg::symmetrize(&(second / m as f64)))
}

/// `x ← μ + C^{1/2} Ĉ^{-1/2} (x − x̄)`: afterwards the columns have mean
/// exactly `μ` and covariance exactly `C`. Symmetric roots commute with any
/// symmetry shared by `C` and the sample, so mirrored structure survives.
fn match_moments(x: &mut DMatrix<f64>, target: &Moments) {
    let (mean, cov) = column_moments(x);
    let t = linalg::sym_sqrt(&target.cov) * linalg::sym_inv_sqrt(&cov, 1e-12);
    let m = x.ncols();
    for start in (0..m).step_by(2048) {
        let len = 2048.min(m - start);
        let mut block = x.columns(start, len).into_owned();
        for mut c in block.column_iter_mut() {
            c -= &mean;
        }
        let mut moved = &t * block;
        for mut c in moved.column_iter_mut() {
            c += &target.mean;
        }
        x.columns_mut(start, len).copy_from(&moved);
    }
}

/// Joint correction of `(x, ε)` towards mean `(μ_x, 0)` and covariance
/// `diag(C_x, σ²)`, so the panel also carries no spurious `x`-noise
/// correlation.
fn match_regression(x: &mut DMatrix<f64>, eps: &mut [f64], target: &Moments, sigma: f64) {
    let (p, m) = x.shape();
    if sigma == 0.0 {
        eps.iter_mut().for_each(|e| *e = 0.0);
        match_moments(x, target);
        return;
    }
    let mut joint = x.clone().insert_row(p, 0.0);
    joint.row_mut(p).copy_from_slice(eps);
    let mut mean = DVector::zeros(p + 1);
    mean.rows_mut(0, p).copy_from(&target.mean);
    let mut cov = DMatrix::zeros(p + 1, p + 1);
    cov.view_mut((0, 0), (p, p)).copy_from(&target.cov);
    cov[(p, p)] = sigma * sigma;
    match_moments(&mut joint, &Moments { mean, cov });
    x.copy_from(&joint.rows(0, p));
    for (j, e) in eps.iter_mut().enumerate().take(m) {
        *e = joint[(p, j)];
    }
}
