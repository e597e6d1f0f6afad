//! Forward models.
//!
//! The planar-source model places `p` source nodes on a horizontal grid and
//! lifts them onto the plane `x3 = a x1 + b x2 + d`. Each surface station
//! sees every node through an inverse-square point kernel, so deeper planes
//! need stronger sources to produce the same surface signal. The geometry
//! parameter is `m = (a, b, d / depth_scale)`, which keeps all three
//! coordinates on comparable scales.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linops::{LinearOperator, RegularizerMatrix};
use crate::{Error, Result};

/// Regular grid of source nodes (cell centers) on `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl SourceGrid {
    pub fn new(nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("source grid needs at least one node per axis".into()));
        }
        if !(x_range.0 < x_range.1 && y_range.0 < y_range.1) {
            return Err(Error::InvalidArgument("source grid ranges must be increasing".into()));
        }
        Ok(Self { nx, ny, x_range, y_range })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.x_range.1 - self.x_range.0) / self.nx as f64,
            (self.y_range.1 - self.y_range.0) / self.ny as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (hx, hy) = self.spacing();
        hx * hy
    }

    /// Node index for grid position `(ix, iy)`; x varies fastest.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        let (hx, hy) = self.spacing();
        let ix = k % self.nx;
        let iy = k / self.nx;
        [
            self.x_range.0 + (ix as f64 + 0.5) * hx,
            self.y_range.0 + (iy as f64 + 0.5) * hy,
        ]
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (self.x_range.0..=self.x_range.1).contains(&x[0]) && (self.y_range.0..=self.y_range.1).contains(&x[1])
    }
}

/// `R = eps0 I + L` with `L` the 5-point graph Laplacian of the grid
/// (zero-flux boundary). `L` is positive semidefinite with constants in its
/// null space, so `R` is SPD with smallest eigenvalue `eps0`.
pub fn make_r(grid: &SourceGrid, eps0: f64) -> Result<RegularizerMatrix> {
    if !(eps0 > 0.0) {
        return Err(Error::InvalidArgument(format!("eps0 must be positive, got {eps0}")));
    }
    let mut triplets = Vec::with_capacity(5 * grid.len());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let k = grid.index(ix, iy);
            let mut neighbours = Vec::with_capacity(4);
            if ix > 0 {
                neighbours.push(grid.index(ix - 1, iy));
            }
            if ix + 1 < grid.nx {
                neighbours.push(grid.index(ix + 1, iy));
            }
            if iy > 0 {
                neighbours.push(grid.index(ix, iy - 1));
            }
            if iy + 1 < grid.ny {
                neighbours.push(grid.index(ix, iy + 1));
            }
            triplets.push((k, k, eps0 + neighbours.len() as f64));
            triplets.extend(neighbours.into_iter().map(|j| (k, j, -1.0)));
        }
    }
    RegularizerMatrix::from_triplets(grid.len(), triplets)
}

/// Stations on a sunflower spiral of the given radius, centered at the origin.
pub fn spiral_stations(count: usize, radius: f64) -> Vec<[f64; 2]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let r = radius * ((k as f64 + 0.5) / count as f64).sqrt();
            let theta = k as f64 * golden;
            [r * theta.cos(), r * theta.sin()]
        })
        .collect()
}

/// Point-source decay law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Kernel {
    /// `area / (4 pi r^2)`
    #[default]
    InverseSquare,
}

/// Serializable description from which a [`ForwardModel`] is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub stations: Vec<[f64; 2]>,
    pub grid: SourceGrid,
    #[serde(default)]
    pub kernel: Kernel,
    pub eps0: f64,
    pub depth_scale: f64,
    /// Admissible box for `m`.
    pub m_bounds: Vec<(f64, f64)>,
}

impl ModelSpec {
    /// Planar-source defaults: 51 stations within 30 km, a 20 x 20 source
    /// grid over a 20 km square, `eps0 = 1`, depths scaled by 100.
    pub fn planar_default() -> Self {
        Self {
            stations: spiral_stations(51, 30.0),
            grid: SourceGrid::new(20, 20, (-10.0, 10.0), (-10.0, 10.0)).expect("valid default grid"),
            kernel: Kernel::InverseSquare,
            eps0: 1.0,
            depth_scale: 100.0,
            m_bounds: vec![(-1.0, 1.0); 3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardModel {
    spec: ModelSpec,
    nodes: Vec<[f64; 2]>,
    regularizer: RegularizerMatrix,
}

impl ForwardModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.stations.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one station".into()));
        }
        if spec.m_bounds.len() != 3 {
            return Err(Error::Dimension(format!(
                "planar model has 3 geometry parameters, bounds list has {}",
                spec.m_bounds.len()
            )));
        }
        if spec.m_bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("m_bounds must have lower < upper".into()));
        }
        if !(spec.depth_scale > 0.0) {
            return Err(Error::InvalidArgument("depth_scale must be positive".into()));
        }
        let regularizer = make_r(&spec.grid, spec.eps0)?;
        let nodes = spec.grid.nodes();
        Ok(Self { spec, nodes, regularizer })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_measurements(&self) -> usize {
        self.spec.stations.len()
    }

    pub fn n_sources(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_params(&self) -> usize {
        3
    }

    pub fn regularizer(&self) -> &RegularizerMatrix {
        &self.regularizer
    }

    pub fn grid(&self) -> &SourceGrid {
        &self.spec.grid
    }

    pub fn m_bounds(&self) -> &[(f64, f64)] {
        &self.spec.m_bounds
    }

    /// Physical `(a, b, d)` from the scaled parameter.
    pub fn physical(&self, m: &[f64]) -> [f64; 3] {
        [m[0], m[1], m[2] * self.spec.depth_scale]
    }

    /// Scaled parameter from physical `(a, b, d)`.
    pub fn scaled(&self, abd: [f64; 3]) -> Vec<f64> {
        vec![abd[0], abd[1], abd[2] / self.spec.depth_scale]
    }

    /// Depths `x3` of the source nodes lifted onto the plane of `m`.
    pub fn node_depths(&self, m: &[f64]) -> Vec<f64> {
        let [a, b, d] = self.physical(m);
        self.nodes.iter().map(|x| a * x[0] + b * x[1] + d).collect()
    }

    /// Whether the plane of `m` lies strictly below the surface over the grid.
    pub fn is_admissible(&self, m: &[f64]) -> bool {
        m.len() == 3 && m.iter().all(|v| v.is_finite()) && self.node_depths(m).iter().all(|&z| z < 0.0)
    }

    /// Assembles `A_m`: `A[i, j] = area / (4 pi r_ij^2)` with `r_ij` the
    /// distance from station `i` to node `j` on the plane.
    pub fn assemble_a(&self, m: &[f64]) -> Result<LinearOperator> {
        if m.len() != 3 {
            return Err(Error::Dimension(format!("expected 3 geometry parameters, got {}", m.len())));
        }
        let depths = self.node_depths(m);
        if let Some((node, &depth)) = depths.iter().enumerate().find(|(_, &z)| !(z < 0.0)) {
            return Err(Error::PlaneAboveSurface { node, depth });
        }
        let n = self.n_measurements();
        let weight = self.spec.grid.cell_area() / (4.0 * PI);
        let stations = &self.spec.stations;
        let mut entries = DMatrix::zeros(n, self.nodes.len());
        match self.spec.kernel {
            Kernel::InverseSquare => {
                for (j, (node, z)) in self.nodes.iter().zip(&depths).enumerate() {
                    let z2 = z * z;
                    let mut col = entries.column_mut(j);
                    for (i, st) in stations.iter().enumerate() {
                        let dx = st[0] - node[0];
                        let dy = st[1] - node[1];
                        col[i] = weight / (dx * dx + dy * dy + z2);
                    }
                }
            }
        }
        LinearOperator::new(entries)
    }
}

/// What the posterior needs from a forward model: the operator for a given
/// `m`, the fixed regularizer, and the admissible set.
pub trait ForwardMap: Sync {
    fn n_params(&self) -> usize;
    fn n_measurements(&self) -> usize;
    fn regularizer(&self) -> &RegularizerMatrix;
    fn is_admissible(&self, m: &[f64]) -> bool;
    fn assemble(&self, m: &[f64]) -> Result<LinearOperator>;
}

impl ForwardMap for ForwardModel {
    fn n_params(&self) -> usize {
        3
    }
    fn n_measurements(&self) -> usize {
        self.spec.stations.len()
    }
    fn regularizer(&self) -> &RegularizerMatrix {
        &self.regularizer
    }
    fn is_admissible(&self, m: &[f64]) -> bool {
        ForwardModel::is_admissible(self, m)
    }
    fn assemble(&self, m: &[f64]) -> Result<LinearOperator> {
        self.assemble_a(m)
    }
}

/// Operator family `A_m = sum_k m_k A_k + A_0` (affine in `m`), mostly for
/// tests and small studies.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub base: DMatrix<f64>,
    pub terms: Vec<DMatrix<f64>>,
    pub regularizer: RegularizerMatrix,
}

impl ForwardMap for AffineModel {
    fn n_params(&self) -> usize {
        self.terms.len()
    }
    fn n_measurements(&self) -> usize {
        self.base.nrows()
    }
    fn regularizer(&self) -> &RegularizerMatrix {
        &self.regularizer
    }
    fn is_admissible(&self, m: &[f64]) -> bool {
        m.len() == self.terms.len() && m.iter().all(|v| v.is_finite())
    }
    fn assemble(&self, m: &[f64]) -> Result<LinearOperator> {
        if m.len() != self.terms.len() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", self.terms.len(), m.len())));
        }
        let mut a = self.base.clone();
        for (mk, ak) in m.iter().zip(&self.terms) {
            a += ak * *mk;
        }
        LinearOperator::new(a)
    }
}

/// Compact cosine-taper bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

/// Sum of bumps `amp * (1 + cos(pi r / radius)) / 2` for `r < radius`.
pub fn synth_slip(grid: &SourceGrid, bumps: &[Bump]) -> Result<DVector<f64>> {
    for b in bumps {
        if !grid.contains(b.center) {
            return Err(Error::InvalidArgument(format!("bump center {:?} outside the source grid", b.center)));
        }
        if !(b.radius > 0.0) || b.amplitude < 0.0 {
            return Err(Error::InvalidArgument("bumps need positive radius and nonnegative amplitude".into()));
        }
    }
    Ok(DVector::from_fn(grid.len(), |k, _| {
        let x = grid.node(k);
        bumps
            .iter()
            .map(|b| {
                let r = ((x[0] - b.center[0]).powi(2) + (x[1] - b.center[1]).powi(2)).sqrt();
                if r < b.radius {
                    b.amplitude * 0.5 * (1.0 + (PI * r / b.radius).cos())
                } else {
                    0.0
                }
            })
            .sum()
    }))
}

/// Default slip: a broad main patch plus a weaker secondary patch.
pub fn default_bumps() -> Vec<Bump> {
    vec![
        Bump {
            center: [-1.5, 1.5],
            radius: 7.0,
            amplitude: 1.0,
        },
        Bump {
            center: [4.5, -4.5],
            radius: 4.0,
            amplitude: 0.6,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub m_true: Vec<f64>,
    pub g_true: Vec<f64>,
    pub sigma_true: f64,
    pub u_clean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: Vec<f64>,
    pub sigma_known: Option<f64>,
    pub provenance: String,
}

impl Observation {
    pub fn new(u: Vec<f64>, sigma_known: Option<f64>, provenance: impl Into<String>) -> Result<Self> {
        if u.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroData);
        }
        Ok(Self {
            u,
            sigma_known,
            provenance: provenance.into(),
        })
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Clean data `A_{m_true} g_true` plus white noise with
/// `sqrt(n) sigma / |u_clean| = noise_ratio`.
pub fn generate_observations<R: Rng + ?Sized>(
    model: &ForwardModel,
    m_true: &[f64],
    g_true: &DVector<f64>,
    noise_ratio: f64,
    rng: &mut R,
) -> Result<(Observation, GroundTruth)> {
    if !(noise_ratio >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_ratio must be >= 0, got {noise_ratio}")));
    }
    if g_true.len() != model.n_sources() {
        return Err(Error::Dimension(format!(
            "slip has {} entries, model has {} sources",
            g_true.len(),
            model.n_sources()
        )));
    }
    let a = model.assemble_a(m_true)?;
    let u_clean = a.matrix() * g_true;
    let n = u_clean.len() as f64;
    let clean_norm = u_clean.norm();
    if clean_norm == 0.0 && noise_ratio > 0.0 {
        return Err(Error::ZeroData);
    }
    let sigma = noise_ratio * clean_norm / n.sqrt();
    let u: Vec<f64> = u_clean
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect();
    let obs = Observation::new(u, Some(sigma), format!("synthetic planar source, noise ratio {noise_ratio}"))?;
    let truth = GroundTruth {
        m_true: m_true.to_vec(),
        g_true: g_true.iter().copied().collect(),
        sigma_true: sigma,
        u_clean: u_clean.iter().copied().collect(),
    };
    Ok((obs, truth))
}

/// `A = U diag(s) V'` with seeded random orthonormal factors and
/// `s_j = 10^(-decay_rate (j - 1))`.
pub fn dense_test_operator(seed: u64, n: usize, p: usize, decay_rate: f64) -> Result<LinearOperator> {
    if n == 0 || n > p {
        return Err(Error::InvalidArgument(format!("dense_test_operator needs 1 <= n <= p, got n={n}, p={p}")));
    }
    if !(decay_rate >= 0.0) {
        return Err(Error::InvalidArgument("decay_rate must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gaussian(n, n).qr().q();
    let v = gaussian(p, n).qr().q();
    let s = DVector::from_fn(n, |j, _| 10f64.powf(-decay_rate * j as f64));
    LinearOperator::new(u * DMatrix::from_diagonal(&s) * v.transpose())
}
