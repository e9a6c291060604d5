//! PCA + L2 normalization + multinomial logistic regression classifier.
//!
//! The classifier minimizes `mean CE + ||W||^2 / (2 C n)`, which has the same
//! minimizer as `sum CE + ||W||^2 / (2 C)`. The bias is not penalized. Fitting
//! is deterministic full-batch gradient descent: each step tries a
//! Barzilai-Borwein step length and backtracks until the Armijo condition
//! holds, so the objective never increases.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::dataset::io::ByteCursor;
use crate::dataset::Samples;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `d x r`, orthonormal columns, ordered by explained variance.
    pub components: DMatrix<f64>,
    /// Sample variance along each kept component.
    pub explained_variance: Vec<f64>,
    /// Variance along every nonzero direction, for ratio reporting.
    pub total_variance: f64,
    pub energy_threshold: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance.iter().map(|v| v / self.total_variance).collect()
    }
}

/// Fits PCA on the rows of `x`, keeping the fewest components whose
/// cumulative explained-variance ratio reaches `energy_threshold`.
pub fn pca_fit(x: &DMatrix<f64>, energy_threshold: f64) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 || d == 0 {
        return Err(Error::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::invalid(format!("energy threshold {energy_threshold} outside (0, 1]")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if smax <= f64::EPSILON * scale * (n.max(d) as f64) {
        return Err(Error::Degenerate("all rows are identical".into()));
    }
    let tol = smax * f64::EPSILON * n.max(d) as f64;
    let rank: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > tol).collect();
    let var: Vec<f64> = rank.iter().map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64).collect();
    let total: f64 = var.iter().sum();
    let mut r = var.len();
    let mut acc = 0.0;
    for (k, v) in var.iter().enumerate() {
        acc += v;
        if acc / total >= energy_threshold - 1e-12 {
            r = k + 1;
            break;
        }
    }
    let mut components = DMatrix::zeros(d, r);
    for (c, &i) in rank.iter().take(r).enumerate() {
        let mut col: DVector<f64> = v_t.row(i).transpose();
        let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if big < 0.0 {
            col.neg_mut();
        }
        components.set_column(c, &col);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: var[..r].to_vec(),
        total_variance: total,
        energy_threshold,
    })
}

/// `(X - mean) * components`.
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "PCA input".into(),
            expected: model.input_dim(),
            actual: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= model.mean.transpose();
    }
    Ok(centered * &model.components)
}

/// Maps projected rows back to input space.
pub fn pca_reconstruct(model: &PcaModel, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = z * model.components.transpose();
    for mut row in x.row_iter_mut() {
        row += model.mean.transpose();
    }
    x
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm { index: i });
        }
        row /= n;
    }
    Ok(out)
}

/// Eleven decades from 1e-5 to 1e5.
pub fn default_c_grid() -> Vec<f64> {
    (-5..=5).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the Euclidean gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `K x r`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub c: f64,
    /// Identity id of each class row, ascending.
    pub class_labels: Vec<usize>,
    /// `(C, validation accuracy)` for every grid value that converged.
    pub grid_record: Vec<(f64, f64)>,
}

impl LogRegModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                context: "classifier input".into(),
                expected: self.weights.ncols(),
                actual: x.ncols(),
            });
        }
        let z = x * self.weights.transpose();
        Ok(z.row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] + self.bias[k] > row[best] + self.bias[best] {
                        best = k;
                    }
                }
                self.class_labels[best]
            })
            .collect())
    }
}

/// Result of one fixed-C fit.
#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub model: LogRegModel,
    /// Objective value after every accepted step, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub grad_norm: f64,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<usize>,
    k: usize,
    c: f64,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    /// Objective and gradient at `theta = [W (K x r, column-major), b (K)]`.
    fn eval(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> (f64, DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let mut z = self.x * w.transpose();
        let mut ce = 0.0;
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row += b.transpose();
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
            ce -= row[self.y[i]].max(1e-300).ln();
            row[self.y[i]] -= 1.0;
        }
        let obj = ce / n + w.norm_squared() / (2.0 * self.c * n);
        let gw = z.transpose() * self.x / n + w / (self.c * n);
        let gb = z.row_sum().transpose() / n;
        (obj, gw, gb)
    }
}

fn grad_norm(gw: &DMatrix<f64>, gb: &DVector<f64>) -> f64 {
    (gw.norm_squared() + gb.norm_squared()).sqrt()
}

fn class_map(labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("logistic regression needs at least 2 classes"));
    }
    let y = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    Ok((classes, y))
}

/// Fits the classifier for one value of C.
pub fn logreg_fit_c(x: &DMatrix<f64>, labels: &[usize], c: f64, opts: &SolverOptions) -> Result<LogRegFit> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C = {c} must be positive")));
    }
    if x.nrows() != labels.len() || x.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            context: "classifier rows vs labels".into(),
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let (classes, y) = class_map(labels)?;
    let p = Problem { x, y, k: classes.len(), c };
    let mut w = DMatrix::zeros(p.k, x.ncols());
    let mut b = DVector::zeros(p.k);
    let (mut f, mut gw, mut gb) = p.eval(&w, &b);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    while grad_norm(&gw, &gb) > opts.tolerance {
        if iterations == opts.max_iterations {
            return Err(Error::NonConvergence {
                c,
                iterations,
                grad_norm: grad_norm(&gw, &gb),
            });
        }
        iterations += 1;
        let g2 = gw.norm_squared() + gb.norm_squared();
        let mut t = step;
        let (w1, b1, f1, gw1, gb1) = loop {
            let w1 = &w - &gw * t;
            let b1 = &b - &gb * t;
            let (f1, gw1, gb1) = p.eval(&w1, &b1);
            if f1 <= f - 1e-4 * t * g2 {
                break (w1, b1, f1, gw1, gb1);
            }
            t *= 0.5;
            if t < 1e-20 {
                // no further decrease representable
                let gn = grad_norm(&gw, &gb);
                return Err(Error::NonConvergence { c, iterations, grad_norm: gn });
            }
        };
        // Barzilai-Borwein length for the next trial step
        let sw = &w1 - &w;
        let sb = &b1 - &b;
        let yw = &gw1 - &gw;
        let yb = &gb1 - &gb;
        let sy = sw.dot(&yw) + sb.dot(&yb);
        let ss = sw.norm_squared() + sb.norm_squared();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        (w, b, f, gw, gb) = (w1, b1, f1, gw1, gb1);
        trace.push(f);
    }
    let gn = grad_norm(&gw, &gb);
    Ok(LogRegFit {
        model: LogRegModel {
            weights: w,
            bias: b,
            c,
            class_labels: classes,
            grid_record: Vec::new(),
        },
        objective_trace: trace,
        grad_norm: gn,
    })
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx.iter())
}

/// Picks C from `grid` by held-out accuracy (ties to the smaller C) and
/// refits on all rows. Grid values whose fit does not converge are skipped.
pub fn logreg_fit(
    x: &DMatrix<f64>,
    labels: &[usize],
    grid: &[f64],
    validation_fraction: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<LogRegModel> {
    if grid.is_empty() {
        return Err(Error::invalid("empty C grid"));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::invalid("validation fraction outside [0, 1)"));
    }
    class_map(labels)?;
    // per-class holdout so every class stays in training
    let mut rng = rng::seeded(seed);
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let (mut fit_idx, mut val_idx) = (Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        // content order first, so the holdout does not depend on row order
        idx.sort_by(|&a, &b| {
            x.row(a)
                .iter()
                .zip(x.row(b).iter())
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx.shuffle(&mut rng);
        let m = idx.len();
        let v = ((m as f64 * validation_fraction).round() as usize).min(m - 1);
        val_idx.extend_from_slice(&idx[..v]);
        fit_idx.extend_from_slice(&idx[v..]);
    }
    fit_idx.sort_unstable();
    val_idx.sort_unstable();
    if val_idx.is_empty() {
        val_idx = fit_idx.clone();
    }
    let xf = rows(x, &fit_idx);
    let yf: Vec<usize> = fit_idx.iter().map(|&i| labels[i]).collect();
    let xv = rows(x, &val_idx);
    let yv: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut record = Vec::new();
    let mut last_err = None;
    for &c in &sorted {
        match logreg_fit_c(&xf, &yf, c, opts) {
            Ok(fit) => record.push((c, accuracy(&fit.model.predict(&xv)?, &yv))),
            Err(e @ Error::NonConvergence { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let Some(&(best_c, _)) = record.iter().fold(None, |best: Option<&(f64, f64)>, cand| match best {
        Some(b) if b.1 >= cand.1 => Some(b),
        _ => Some(cand),
    }) else {
        return Err(last_err.expect("grid is nonempty"));
    };
    let mut model = logreg_fit_c(x, labels, best_c, opts)?.model;
    model.grid_record = record;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub pca: PcaModel,
    pub classifier: LogRegModel,
}

impl BaselineModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = l2_normalize(&pca_transform(&self.pca, x)?)?;
        self.classifier.predict(&z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSettings {
    pub energy_threshold: f64,
    pub c_grid: Vec<f64>,
    pub validation_fraction: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            energy_threshold: 0.99,
            c_grid: default_c_grid(),
            validation_fraction: 0.2,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// Fits the pipeline on `train` and returns it with its accuracy on `test`.
pub fn baseline_pipeline(train: &Samples, test: &Samples, settings: &BaselineSettings) -> Result<(BaselineModel, f64)> {
    let xt = train.to_matrix();
    let pca = pca_fit(&xt, settings.energy_threshold)?;
    let z = l2_normalize(&pca_transform(&pca, &xt)?)?;
    let classifier = logreg_fit(
        &z,
        train.labels(),
        &settings.c_grid,
        settings.validation_fraction,
        settings.seed,
        &settings.solver,
    )?;
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if let Some(l) = test.labels().iter().find(|l| classifier.class_labels.binary_search(l).is_err()) {
        return Err(Error::invalid(format!("test identity {l} is absent from training")));
    }
    let model = BaselineModel { pca, classifier };
    let acc = accuracy(&model.predict(&test.to_matrix())?, test.labels());
    Ok((model, acc))
}

const MAGIC: &[u8; 4] = b"MFBL";
const VERSION: u32 = 1;

fn put_f64s<'a>(out: &mut Vec<u8>, v: impl IntoIterator<Item = &'a f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

/// Layout: `MFBL`, version `u32`, then `d`, `r` (`u64`), energy threshold,
/// total variance, mean (`d`), components (`d x r` row-major), explained
/// variance (`r`); then `K` (`u64`), C, weights (`K x r` row-major), bias
/// (`K`), `K` class ids (`u32`), grid length (`u64`) and `(C, accuracy)` pairs.
pub fn save_baseline(model: &BaselineModel, path: &Path) -> Result<()> {
    let p = &model.pca;
    let c = &model.classifier;
    let (d, r, k) = (p.input_dim(), p.output_dim(), c.class_labels.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, d);
    put_u64(&mut out, r);
    put_f64s(&mut out, [&p.energy_threshold, &p.total_variance]);
    put_f64s(&mut out, p.mean.iter());
    put_f64s(&mut out, p.components.transpose().iter());
    put_f64s(&mut out, &p.explained_variance);
    put_u64(&mut out, k);
    put_f64s(&mut out, [&c.c]);
    put_f64s(&mut out, c.weights.transpose().iter());
    put_f64s(&mut out, c.bias.iter());
    for &l in &c.class_labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    put_u64(&mut out, c.grid_record.len());
    for (gc, acc) in &c.grid_record {
        put_f64s(&mut out, [gc, acc]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_baseline(path: &Path) -> Result<BaselineModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4)? != MAGIC {
        return Err(Error::Format(format!("{}: missing MFBL magic", path.display())));
    }
    let v = cur.u32()?;
    if v != VERSION {
        return Err(Error::Format(format!("unsupported baseline version {v}")));
    }
    let d = cur.u64()? as usize;
    let r = cur.u64()? as usize;
    let energy_threshold = cur.f64()?;
    let total_variance = cur.f64()?;
    let mean = read_vec(&mut cur, d)?;
    let comp = read_vec(&mut cur, d * r)?;
    let explained_variance = read_vec(&mut cur, r)?;
    let k = cur.u64()? as usize;
    let c = cur.f64()?;
    let w = read_vec(&mut cur, k * r)?;
    let bias = read_vec(&mut cur, k)?;
    let class_labels = (0..k).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let g = cur.u64()? as usize;
    let flat = read_vec(&mut cur, 2 * g)?;
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after baseline model".into()));
    }
    Ok(BaselineModel {
        pca: PcaModel {
            mean: DVector::from_vec(mean),
            components: DMatrix::from_row_slice(d, r, &comp),
            explained_variance,
            total_variance,
            energy_threshold,
        },
        classifier: LogRegModel {
            weights: DMatrix::from_row_slice(k, r, &w),
            bias: DVector::from_vec(bias),
            c,
            class_labels,
            grid_record: flat.chunks(2).map(|p| (p[0], p[1])).collect(),
        },
    })
}

fn read_vec(cur: &mut ByteCursor<'_>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| cur.f64()).collect()
}
