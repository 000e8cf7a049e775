//! Domain types shared by the generators, the inference engine and the
//! benchmark harness.
//!
//! Everything here is a plain value record. The only mutable piece is
//! [`GecState`], which is owned by exactly one recovery run.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Partition of the flat index range `0..N` into `K` contiguous,
/// non-overlapping groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::GroupCoverage("at least one group is required".into()));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::GroupCoverage(format!("group {k} is empty")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self { sizes, offsets })
    }

    /// `num_groups` groups of `group_size` elements each.
    pub fn uniform(num_groups: usize, group_size: usize) -> Result<Self> {
        Self::new(vec![group_size; num_groups])
    }

    /// Splits `n` elements into `k` groups whose sizes differ by at most one.
    pub fn balanced(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::GroupCoverage(format!("cannot split {n} elements into {k} groups")));
        }
        let base = n / k;
        let extra = n % k;
        Self::new((0..k).map(|i| base + usize::from(i < extra)).collect())
    }

    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of signal elements `N`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    /// Maps a flat index to `(group, position within group)`.
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        if flat >= self.len() {
            return None;
        }
        // offsets is sorted; the group is the last offset <= flat
        let k = self.offsets.partition_point(|&o| o <= flat) - 1;
        Some((k, flat - self.offsets[k]))
    }

    pub fn flat(&self, group: usize, pos: usize) -> Option<usize> {
        (group < self.num_groups() && pos < self.sizes[group]).then(|| self.offsets[group] + pos)
    }
}

/// Per-element spike-and-slab prior `rho_hat * N(0, sigma_x_sq) + (1 - rho_hat) * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabPrior {
    pub rho_hat: Vec<f64>,
    pub sigma_x_sq: f64,
}

impl SpikeSlabPrior {
    pub fn new(rho_hat: Vec<f64>, sigma_x_sq: f64) -> Result<Self> {
        if let Some(r) = rho_hat.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidParameter(format!("activity probability {r} outside [0, 1]")));
        }
        if !(sigma_x_sq > 0.0 && sigma_x_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!("slab variance {sigma_x_sq} must be positive")));
        }
        Ok(Self { rho_hat, sigma_x_sq })
    }

    pub fn uniform(n: usize, rho: f64, sigma_x_sq: f64) -> Result<Self> {
        Self::new(vec![rho; n], sigma_x_sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    LinearAwgn,
    /// `2^bits` uniform cells over `[-clip_range, clip_range]`; the two outer
    /// cells extend to infinity.
    Quantized { bits: u32, clip_range: f64 },
}

/// Output channel `y = Q(z + w)`, `w ~ N(0, noise_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    kind: ChannelKind,
    noise_var: f64,
}

/// Largest supported quantizer resolution.
pub const MAX_BITS: u32 = 24;

impl Channel {
    pub fn linear(noise_var: f64) -> Result<Self> {
        Self::new(ChannelKind::LinearAwgn, noise_var)
    }

    pub fn quantized(bits: u32, clip_range: f64, noise_var: f64) -> Result<Self> {
        Self::new(ChannelKind::Quantized { bits, clip_range }, noise_var)
    }

    pub fn new(kind: ChannelKind, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {noise_var} must be positive")));
        }
        if let ChannelKind::Quantized { bits, clip_range } = kind {
            if bits == 0 || bits > MAX_BITS {
                return Err(Error::InvalidParameter(format!("bits must lie in 1..={MAX_BITS}, got {bits}")));
            }
            if !(clip_range > 0.0 && clip_range.is_finite()) {
                return Err(Error::InvalidParameter(format!("clip range {clip_range} must be positive")));
            }
        }
        Ok(Self { kind, noise_var })
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.kind, ChannelKind::Quantized { .. })
    }

    /// Number of output cells; `None` for the unquantized channel.
    pub fn num_cells(&self) -> Option<usize> {
        match self.kind {
            ChannelKind::LinearAwgn => None,
            ChannelKind::Quantized { bits, .. } => Some(1usize << bits),
        }
    }

    fn cell_width(bits: u32, clip_range: f64) -> f64 {
        2.0 * clip_range / (1u64 << bits) as f64
    }

    /// `(lower, upper)` edges of cell `idx`; outer edges are infinite.
    pub fn cell_edges(&self, idx: usize) -> Option<(f64, f64)> {
        let ChannelKind::Quantized { bits, clip_range } = self.kind else {
            return None;
        };
        let cells = 1usize << bits;
        if idx >= cells {
            return None;
        }
        let width = Self::cell_width(bits, clip_range);
        let edge = |i: usize| -clip_range + i as f64 * width;
        let lower = if idx == 0 { f64::NEG_INFINITY } else { edge(idx) };
        let upper = if idx + 1 == cells { f64::INFINITY } else { edge(idx + 1) };
        Some((lower, upper))
    }

    /// Index of the cell containing `t`. Cells are closed below and open above.
    pub fn quantize(&self, t: f64) -> Option<usize> {
        let ChannelKind::Quantized { bits, clip_range } = self.kind else {
            return None;
        };
        let cells = 1usize << bits;
        let width = Self::cell_width(bits, clip_range);
        let raw = ((t + clip_range) / width).floor();
        let mut idx = if raw < 1.0 {
            0
        } else if raw >= (cells - 1) as f64 {
            cells - 1
        } else {
            raw as usize
        };
        // floor() can land one cell off right at an edge
        let (lo, hi) = self.cell_edges(idx).unwrap();
        if t < lo {
            idx -= 1;
        } else if t >= hi {
            idx += 1;
        }
        Some(idx)
    }

    /// Reconstruction level of a cell: its midpoint, or the midpoint of the
    /// bounded part for the two outer cells.
    pub fn cell_midpoint(&self, idx: usize) -> Option<f64> {
        let ChannelKind::Quantized { bits, clip_range } = self.kind else {
            return None;
        };
        if idx >= 1usize << bits {
            return None;
        }
        let width = Self::cell_width(bits, clip_range);
        Some(-clip_range + (idx as f64 + 0.5) * width)
    }
}

/// Channel outputs: real values for the linear channel, cell indices for
/// the quantized one.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Real(DVector<f64>),
    Cells(Vec<usize>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Real(v) => v.len(),
            Observations::Cells(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub h: DMatrix<f64>,
    pub y: Observations,
    pub groups: GroupStructure,
    pub channel: Channel,
    /// Slab variance assumed by the estimator.
    pub sigma_x_sq: f64,
    pub x_true: Option<DVector<f64>>,
    pub xi_true: Option<Vec<bool>>,
    pub true_rho: Option<f64>,
}

impl ProblemInstance {
    pub fn num_measurements(&self) -> usize {
        self.h.nrows()
    }

    pub fn signal_len(&self) -> usize {
        self.h.ncols()
    }
}

/// Checks every structural invariant of a problem instance.
pub fn validate_instance(inst: &ProblemInstance) -> Result<()> {
    let (m, n) = inst.h.shape();
    if inst.y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "H has {m} rows but y has {} entries",
            inst.y.len()
        )));
    }
    if inst.groups.len() != n {
        return Err(Error::GroupCoverage(format!(
            "group sizes sum to {} but H has {n} columns",
            inst.groups.len()
        )));
    }
    match (&inst.y, inst.channel.num_cells()) {
        (Observations::Real(_), None) => {}
        (Observations::Cells(cells), Some(count)) => {
            if let Some(c) = cells.iter().find(|&&c| c >= count) {
                return Err(Error::DimensionMismatch(format!("cell index {c} but quantizer has {count} cells")));
            }
        }
        (Observations::Real(_), Some(_)) => {
            return Err(Error::DimensionMismatch("quantized channel with real-valued observations".into()))
        }
        (Observations::Cells(_), None) => {
            return Err(Error::DimensionMismatch("linear channel with cell-index observations".into()))
        }
    }
    if !(inst.sigma_x_sq > 0.0 && inst.sigma_x_sq.is_finite()) {
        return Err(Error::InvalidParameter(format!("slab variance {} must be positive", inst.sigma_x_sq)));
    }
    if let Some(x) = &inst.x_true {
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!("x_true has {} entries, expected {n}", x.len())));
        }
    }
    if let Some(xi) = &inst.xi_true {
        if xi.len() != inst.groups.num_groups() {
            return Err(Error::DimensionMismatch(format!(
                "xi_true has {} entries, expected {}",
                xi.len(),
                inst.groups.num_groups()
            )));
        }
        if let Some(x) = &inst.x_true {
            for (k, range) in inst.groups.ranges().enumerate() {
                if !xi[k] && range.clone().any(|i| x[i] != 0.0) {
                    return Err(Error::SupportViolation(format!("group {k} is inactive but has non-zero entries")));
                }
            }
        }
    }
    if let Some(rho) = inst.true_rho {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("true_rho {rho} outside (0, 1)")));
        }
    }
    Ok(())
}

/// The eight EP message vectors plus the indicator bookkeeping.
///
/// `pri`/`lik` follow the usual EP naming: the prior-side message feeds a
/// denoiser, the likelihood-side message is what the denoiser sends back.
#[derive(Debug, Clone, PartialEq)]
pub struct GecState {
    pub m_z_pri: DVector<f64>,
    pub v_z_pri: DVector<f64>,
    pub m_z_lik: DVector<f64>,
    pub v_z_lik: DVector<f64>,
    pub m_x_pri: DVector<f64>,
    pub v_x_pri: DVector<f64>,
    pub m_x_lik: DVector<f64>,
    pub v_x_lik: DVector<f64>,
    pub rho_hat: DVector<f64>,
    pub x_pos: DVector<f64>,
    pub v_x_pos: DVector<f64>,
    /// Completed sweeps. Likelihood-side messages carry no information
    /// until the first sweep has written them.
    pub sweeps: usize,
}

impl GecState {
    pub fn message_vectors(&self) -> [(&'static str, &DVector<f64>); 8] {
        [
            ("m_z_pri", &self.m_z_pri),
            ("v_z_pri", &self.v_z_pri),
            ("m_z_lik", &self.m_z_lik),
            ("v_z_lik", &self.v_z_lik),
            ("m_x_pri", &self.m_x_pri),
            ("v_x_pri", &self.v_x_pri),
            ("m_x_lik", &self.m_x_lik),
            ("v_x_lik", &self.v_x_lik),
        ]
    }

    /// Name of the first vector holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.message_vectors()
            .into_iter()
            .chain([("rho_hat", &self.rho_hat), ("x_pos", &self.x_pos), ("v_x_pos", &self.v_x_pos)])
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn variances_within(&self, v_min: f64, v_max: f64) -> bool {
        [&self.v_z_pri, &self.v_z_lik, &self.v_x_pri, &self.v_x_lik]
            .iter()
            .all(|v| v.iter().all(|&x| x >= v_min && x <= v_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    NumericalFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub x_hat: DVector<f64>,
    /// Linear NMSE `||x_hat - x||^2 / ||x||^2` after each iteration; empty
    /// when the instance carries no ground truth.
    pub nmse_trace: Vec<f64>,
    /// Sparse rate after each outer (EM) iteration.
    pub rho_trace: Vec<f64>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub termination: Termination,
}
