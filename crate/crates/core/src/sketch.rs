//! Sketch distributions and sampled sketch matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SymMatrix};

/// Reproducible generator used for every random stream in the crate.
pub type SketchRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SketchRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchStrategy {
    /// `S = e_i` with probability `A_ii / Tr(A)`.
    CoordinateConvenient,
    /// `S = e_i` with probability `1/n`.
    CoordinateUniform,
    /// `S` with i.i.d. standard normal entries.
    Gaussian,
}

impl SketchStrategy {
    pub fn is_coordinate(self) -> bool {
        !matches!(self, SketchStrategy::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            SketchStrategy::CoordinateConvenient => "convenient",
            SketchStrategy::CoordinateUniform => "uniform",
            SketchStrategy::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for SketchStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "convenient" | "coordinate-convenient" => Ok(SketchStrategy::CoordinateConvenient),
            "uniform" | "coordinate-uniform" => Ok(SketchStrategy::CoordinateUniform),
            "gaussian" => Ok(SketchStrategy::Gaussian),
            other => Err(format!("unknown sketch strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchSpec {
    pub strategy: SketchStrategy,
    pub rank: usize,
    pub seed: u64,
}

impl SketchSpec {
    pub fn new(strategy: SketchStrategy, rank: usize, seed: u64) -> Self {
        SketchSpec { strategy, rank, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SketchSpec { seed, ..self }
    }

    /// Exact support of a coordinate distribution as `(probability, S)` pairs.
    ///
    /// Multi-column coordinate sketches are drawn without replacement, so the
    /// probability of a column set sums over every draw order.
    pub fn finite_support(&self, a: &SymMatrix) -> Result<Vec<(f64, SketchSample)>> {
        let n = a.n();
        if !self.strategy.is_coordinate() {
            return Err(Error::UnsupportedForEnumeration);
        }
        if self.rank == 0 || self.rank > n {
            return Err(Error::InvalidSketchRank { rank: self.rank, n });
        }
        let weights = coordinate_weights(self.strategy, a)?;
        let mut sets: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut prefix = Vec::with_capacity(self.rank);
        accumulate_orders(&weights, self.rank, &mut prefix, 1.0, &mut sets);
        Ok(sets
            .into_iter()
            .map(|(coords, p)| (p, SketchSample::coordinates(n, coords)))
            .collect())
    }
}

fn accumulate_orders(
    weights: &[f64],
    rank: usize,
    prefix: &mut Vec<usize>,
    prob: f64,
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    if prefix.len() == rank {
        let mut key = prefix.clone();
        key.sort_unstable();
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, p)) => *p += prob,
            None => out.push((key, prob)),
        }
        return;
    }
    let remaining: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| !prefix.contains(i))
        .map(|(_, w)| w)
        .sum();
    for i in 0..weights.len() {
        if prefix.contains(&i) {
            continue;
        }
        prefix.push(i);
        accumulate_orders(weights, rank, prefix, prob * weights[i] / remaining, out);
        prefix.pop();
    }
}

fn coordinate_weights(strategy: SketchStrategy, a: &SymMatrix) -> Result<Vec<f64>> {
    let n = a.n();
    match strategy {
        SketchStrategy::CoordinateConvenient => {
            let d = a.diagonal();
            if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::InvalidWeights { index, value });
            }
            let tr: f64 = d.iter().sum();
            Ok(d.iter().map(|v| v / tr).collect())
        }
        SketchStrategy::CoordinateUniform => Ok(vec![1.0 / n as f64; n]),
        SketchStrategy::Gaussian => Err(Error::UnsupportedForEnumeration),
    }
}

/// One drawn `n × τ` sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchSample {
    pub s: DenseMatrix,
    /// Column indices when every column is a standard basis vector.
    pub coords: Option<Vec<usize>>,
}

impl SketchSample {
    pub fn coordinates(n: usize, coords: Vec<usize>) -> Self {
        let mut s = DMatrix::zeros(n, coords.len());
        for (j, &i) in coords.iter().enumerate() {
            s[(i, j)] = 1.0;
        }
        SketchSample { s, coords: Some(coords) }
    }

    pub fn dense(s: DenseMatrix) -> Self {
        SketchSample { s, coords: None }
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn rank(&self) -> usize {
        self.s.ncols()
    }

    /// `A S`, using column gathers for coordinate sketches.
    pub fn apply_left(&self, a: &DenseMatrix) -> DenseMatrix {
        match &self.coords {
            Some(c) => a.select_columns(c.iter()),
            None => a * &self.s,
        }
    }

    /// `Sᵀ v` for a matrix `v` with `n` rows.
    pub fn project_rows(&self, v: &DenseMatrix) -> DenseMatrix {
        match &self.coords {
            Some(c) => v.select_rows(c.iter()),
            None => self.s.transpose() * v,
        }
    }

    /// `Sᵀ A S`.
    pub fn gram(&self, a: &DenseMatrix) -> DenseMatrix {
        match &self.coords {
            Some(c) => DMatrix::from_fn(c.len(), c.len(), |i, j| a[(c[i], c[j])]),
            None => self.s.transpose() * a * &self.s,
        }
    }
}

/// A seeded stream of sketches for one system matrix.
#[derive(Debug, Clone)]
pub struct Sketcher {
    spec: SketchSpec,
    n: usize,
    cumulative: Vec<f64>,
    rng: SketchRng,
    draws: u64,
}

impl Sketcher {
    pub fn new(spec: SketchSpec, a: &SymMatrix) -> Result<Self> {
        let n = a.n();
        if spec.rank == 0 || spec.rank > n {
            return Err(Error::InvalidSketchRank { rank: spec.rank, n });
        }
        let cumulative = if spec.strategy == SketchStrategy::CoordinateConvenient {
            let w = coordinate_weights(spec.strategy, a)?;
            w.iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Sketcher { spec, n, cumulative, rng: rng_from_seed(spec.seed), draws: 0 })
    }

    pub fn spec(&self) -> &SketchSpec {
        &self.spec
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn rng_mut(&mut self) -> &mut SketchRng {
        &mut self.rng
    }

    pub fn sample(&mut self) -> SketchSample {
        self.draws += 1;
        let (n, tau) = (self.n, self.spec.rank);
        match self.spec.strategy {
            SketchStrategy::Gaussian => {
                let rng = &mut self.rng;
                let s = DMatrix::from_fn(n, tau, |_, _| rng.sample::<f64, _>(StandardNormal));
                SketchSample::dense(s)
            }
            SketchStrategy::CoordinateUniform => {
                let coords = if tau == 1 {
                    vec![self.rng.random_range(0..n)]
                } else {
                    rand::seq::index::sample(&mut self.rng, n, tau).into_vec()
                };
                SketchSample::coordinates(n, coords)
            }
            SketchStrategy::CoordinateConvenient => {
                let mut coords: Vec<usize> = Vec::with_capacity(tau);
                while coords.len() < tau {
                    let i = self.draw_weighted(&coords);
                    coords.push(i);
                }
                SketchSample::coordinates(n, coords)
            }
        }
    }

    fn draw_weighted(&mut self, taken: &[usize]) -> usize {
        if taken.is_empty() {
            let u: f64 = self.rng.random::<f64>();
            let i = self.cumulative.partition_point(|&c| c <= u);
            return i.min(self.n - 1);
        }
        // without replacement: invert the cumulative sum over the remaining mass
        let weight = |i: usize| self.cumulative[i] - if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let remaining: f64 = (0..self.n).filter(|i| !taken.contains(i)).map(weight).sum();
        let target = self.rng.random::<f64>() * remaining;
        let mut acc = 0.0;
        let mut last = 0;
        for i in (0..self.n).filter(|i| !taken.contains(i)) {
            acc += weight(i);
            last = i;
            if target < acc {
                return i;
            }
        }
        last
    }
}

/// One draw from `spec` using an external generator.
pub fn sample(spec: &SketchSpec, a: &SymMatrix, rng: &mut SketchRng) -> Result<SketchSample> {
    let mut sk = Sketcher::new(*spec, a)?;
    std::mem::swap(&mut sk.rng, rng);
    let s = sk.sample();
    std::mem::swap(&mut sk.rng, rng);
    Ok(s)
}

/// `P = A^{1/2} S (SᵀAS)⁻¹ Sᵀ A^{1/2}`.
pub fn projector_p(a: &SymMatrix, a_half: &SymMatrix, s: &SketchSample) -> Result<SymMatrix> {
    let gram_inv = gram_inverse(&s.gram(a))?;
    let hs = s.apply_left(a_half);
    SymMatrix::symmetrize(&hs * gram_inv * hs.transpose())
}

/// Inverse of a sketched Gram matrix `SᵀAS`; condition number ≥ 1e12 is degenerate.
pub(crate) fn gram_inverse(g: &DenseMatrix) -> Result<DenseMatrix> {
    if g.nrows() == 1 {
        let v = g[(0, 0)];
        return if v.is_finite() && v.abs() > 0.0 { Ok(DMatrix::from_element(1, 1, 1.0 / v)) } else { Err(Error::DegenerateSketch) };
    }
    let sv = g.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let smin = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(smin > 0.0) || smax / smin >= 1e12 {
        return Err(Error::DegenerateSketch);
    }
    g.clone().try_inverse().ok_or(Error::DegenerateSketch)
}
