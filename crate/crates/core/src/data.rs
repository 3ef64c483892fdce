//! LIBSVM ingestion, preprocessing and synthetic problem generators.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::linalg::QR;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{sym_part, DenseMatrix, SymMatrix, Vector};
use crate::sketch::rng_from_seed;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    pub centered: bool,
    pub normalized: bool,
    pub bias: bool,
}

/// Dense features with labels in `{−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vector,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParseOptions {
    /// Feature count; defaults to the largest index present.
    pub n_features: Option<usize>,
    /// One-vs-rest binarization: this label becomes `+1`, every other label `−1`.
    pub positive_class: Option<f64>,
}

pub fn parse_libsvm(path: &Path, opts: ParseOptions) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut ds = parse_libsvm_str(&text, opts)?;
    ds.provenance.source = Some(path.to_path_buf());
    Ok(ds)
}

pub fn parse_libsvm_str(text: &str, opts: ParseOptions) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let label: f64 = label_tok.parse().map_err(|_| err(format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(format!("bad label `{label_tok}`")));
        }
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("expected index:value, got `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index `{idx}`")))?;
            let val: f64 = val.parse().map_err(|_| err(format!("bad value `{val}`")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} after {last}: indices must ascend")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite value at index {idx}")));
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        raw_labels.push(label);
        rows.push(entries);
    }

    let n = match opts.n_features {
        Some(n) if n < max_index => {
            return Err(Error::DimensionMismatch(format!("index {max_index} exceeds declared feature count {n}")))
        }
        Some(n) => n,
        None => max_index,
    };
    let labels = map_labels(&raw_labels, opts.positive_class)?;
    let mut features = DenseMatrix::zeros(rows.len(), n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j)] = v;
        }
    }
    Ok(Dataset { features, labels, provenance: Provenance::default() })
}

fn map_labels(raw: &[f64], positive: Option<f64>) -> Result<Vector> {
    if let Some(p) = positive {
        return Ok(Vector::from_iterator(raw.len(), raw.iter().map(|&l| if l == p { 1.0 } else { -1.0 })));
    }
    let distinct: BTreeSet<u64> = raw.iter().map(|l| l.to_bits()).collect();
    let is = |v: f64| distinct.contains(&v.to_bits());
    let plus_minus = raw.iter().all(|&l| l == 1.0 || l == -1.0);
    let zero_one = raw.iter().all(|&l| l == 0.0 || l == 1.0);
    if plus_minus {
        Ok(Vector::from_column_slice(raw))
    } else if zero_one && is(0.0) {
        Ok(Vector::from_iterator(raw.len(), raw.iter().map(|&l| if l == 1.0 { 1.0 } else { -1.0 })))
    } else {
        let shown: Vec<String> = distinct.iter().take(5).map(|&b| f64::from_bits(b).to_string()).collect();
        Err(Error::InvalidParameter(format!(
            "labels {{{}}} are not binary ±1 or 0/1; pick a positive class to binarize",
            shown.join(", ")
        )))
    }
}

/// Writes `+1`/`-1` labels and the nonzero entries of each row.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.n_samples() {
        out.push_str(if ds.labels[i] > 0.0 { "+1" } else { "-1" });
        for j in 0..ds.n_features() {
            let v = ds.features[(i, j)];
            if v != 0.0 {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Preprocess {
    pub center: bool,
    pub normalize_rows: bool,
    pub add_bias: bool,
}

impl Preprocess {
    pub const ALL: Preprocess = Preprocess { center: true, normalize_rows: true, add_bias: true };
}

/// Centers columns, then scales rows to unit norm, then appends a column of ones.
pub fn preprocess(ds: &Dataset, flags: Preprocess) -> Dataset {
    let mut x = ds.features.clone();
    let m = x.nrows();
    if flags.center && m > 0 {
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / m as f64;
            col.add_scalar_mut(-mean);
        }
    }
    if flags.normalize_rows {
        let mut zero_rows = 0;
        for mut row in x.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            } else {
                zero_rows += 1;
            }
        }
        if zero_rows > 0 {
            log::warn!("{zero_rows} zero row(s) left unnormalized");
        }
    }
    if flags.add_bias {
        let n = x.ncols();
        x = x.insert_column(n, 1.0);
    }
    let mut provenance = ds.provenance.clone();
    provenance.centered |= flags.center;
    provenance.normalized |= flags.normalize_rows;
    provenance.bias |= flags.add_bias;
    Dataset { features: x, labels: ds.labels.clone(), provenance }
}

/// `αI + β11ᵀ`, with eigenvalues `α` (n−1 times) and `α + nβ`.
pub fn gen_alpha_beta(alpha: f64, beta: f64, n: usize) -> Result<SymMatrix> {
    if !(alpha > 0.0) || !beta.is_finite() || beta < -alpha / n as f64 {
        return Err(Error::InvalidSpectrum(format!("need α > 0 and β ≥ −α/n, got α={alpha}, β={beta}, n={n}")));
    }
    let m = DenseMatrix::from_element(n, n, beta) + DenseMatrix::identity(n, n) * alpha;
    SymMatrix::new(m)
}

/// Random orthonormal matrix: QR of a Gaussian matrix with the signs of `R`'s diagonal folded into `Q`.
pub fn random_orthonormal(n: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng_from_seed(seed);
    let g = DenseMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = QR::new(g);
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `U diag(eigs) Uᵀ` with `U` from [`random_orthonormal`].
pub fn gen_spectrum(eigs: &[f64], seed: u64) -> Result<SymMatrix> {
    if let Some(bad) = eigs.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidSpectrum(format!("eigenvalues must be positive, got {bad}")));
    }
    let n = eigs.len();
    let u = random_orthonormal(n, seed);
    let mut scaled = u.clone();
    for (j, &e) in eigs.iter().enumerate() {
        scaled.column_mut(j).scale_mut(e);
    }
    SymMatrix::new(sym_part(&(scaled * u.transpose())))
}

/// `1, 2, …, n`.
pub fn spectrum_uniform_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64).collect()
}

/// `first` followed by `n − 1` copies of `rest`.
pub fn spectrum_one_outlier(n: usize, first: f64, rest: f64) -> Vec<f64> {
    std::iter::once(first).chain(std::iter::repeat_n(rest, n.saturating_sub(1))).collect()
}

/// Gaussian features with labels `sign(⟨a, w⟩ + noise·ξ)` for a hidden Gaussian `w`.
pub fn gen_logistic(m: usize, n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let features = DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
    let w = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let scores = &features * w;
    let labels = Vector::from_fn(m, |i, _| {
        let xi: f64 = StandardNormal.sample(&mut rng);
        if scores[i] + noise * xi >= 0.0 {
            1.0
        } else {
            -1.0
        }
    });
    Dataset { features, labels, provenance: Provenance::default() }
}
