//! Periodic microstructures on the unit cell `Q = [-1/2, 1/2)^2`: inclusion
//! sets with a hardcore constraint, and scalar depth profiles.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{wrap_coord, Grid, ScalarField};

/// Largest volume fraction the random sampler accepts.
pub const MAX_RANDOM_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Inclusion {
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        /// Semi-axes along the rotated frame.
        radii: [f64; 2],
        /// Orientation of the first semi-axis, radians.
        #[serde(default)]
        angle: f64,
    },
}

impl Inclusion {
    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        Inclusion::Disk { center, radius }
    }

    pub fn center(&self) -> [f64; 2] {
        match *self {
            Inclusion::Disk { center, .. } | Inclusion::Ellipse { center, .. } => center,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Inclusion::Disk { radius, .. } => PI * radius * radius,
            Inclusion::Ellipse { radii, .. } => PI * radii[0] * radii[1],
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.bounding_radius()
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Inclusion::Disk { radius, .. } => radius,
            Inclusion::Ellipse { radii, .. } => radii[0].max(radii[1]),
        }
    }

    /// Smallest radius of curvature of the boundary; interior and exterior
    /// ball conditions hold with any radius up to this value.
    pub fn min_curvature_radius(&self) -> f64 {
        match *self {
            Inclusion::Disk { radius, .. } => radius,
            Inclusion::Ellipse { radii, .. } => {
                let (a, b) = (radii[0].max(radii[1]), radii[0].min(radii[1]));
                b * b / a
            }
        }
    }

    fn radii_ok(&self) -> bool {
        match *self {
            Inclusion::Disk { radius, .. } => radius.is_finite() && radius > 0.0,
            Inclusion::Ellipse { radii, angle, .. } => {
                radii.iter().all(|r| r.is_finite() && *r > 0.0) && angle.is_finite()
            }
        }
    }

    /// Approximate signed distance to the boundary for a displacement `d`
    /// from the center: positive inside, negative outside. Exact for disks;
    /// first-order (normalized level-set) for ellipses.
    pub fn depth_at_offset(&self, d: [f64; 2]) -> f64 {
        match *self {
            Inclusion::Disk { radius, .. } => radius - d[0].hypot(d[1]),
            Inclusion::Ellipse { radii, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let q1 = c * d[0] + s * d[1];
                let q2 = -s * d[0] + c * d[1];
                let (a, b) = (radii[0], radii[1]);
                let f = ((q1 / a).powi(2) + (q2 / b).powi(2)).sqrt();
                let inner = a.min(b);
                if f < 1e-12 {
                    return inner;
                }
                let gx = q1 / (a * a * f);
                let gy = q2 / (b * b * f);
                let g = gx.hypot(gy);
                let d = (1.0 - f) / g;
                d.min(inner)
            }
        }
    }

    /// Boundary samples, used for distance estimates between curved shapes.
    pub fn boundary_points(&self, count: usize) -> Vec<[f64; 2]> {
        let c = self.center();
        (0..count)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / count as f64;
                match *self {
                    Inclusion::Disk { radius, .. } => {
                        [c[0] + radius * t.cos(), c[1] + radius * t.sin()]
                    }
                    Inclusion::Ellipse { radii, angle, .. } => {
                        let (s, co) = angle.sin_cos();
                        let (x, y) = (radii[0] * t.cos(), radii[1] * t.sin());
                        [c[0] + co * x - s * y, c[1] + s * x + co * y]
                    }
                }
            })
            .collect()
    }

    /// Rotate the inclusion by 90 degrees about the origin.
    pub fn rotated_quarter(&self) -> Self {
        let rot = |p: [f64; 2]| [-p[1], p[0]];
        match *self {
            Inclusion::Disk { center, radius } => Inclusion::Disk {
                center: rot(center),
                radius,
            },
            Inclusion::Ellipse {
                center,
                radii,
                angle,
            } => Inclusion::Ellipse {
                center: rot(center),
                radii: [radii[1], radii[0]],
                angle,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Deterministic,
    Random {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microstructure {
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    /// Regularity and hardcore constant `ρ`.
    pub hardcore: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Boundaries of two inclusions closer than `ρ` (periodically).
    Hardcore { pair: (usize, usize), distance: f64 },
    /// An inclusion comes closer than `ρ` to its own periodic copy.
    SelfOverlap { index: usize, distance: f64 },
    /// Diameter exceeds `1/ρ`.
    Diameter { index: usize, diameter: f64 },
    /// Curvature radius below `ρ`: the ball conditions fail.
    BallCondition { index: usize, radius: f64 },
    /// Degenerate radii or non-finite parameters.
    Malformed { index: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn hardcore_pairs(&self) -> Vec<(usize, usize)> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::Hardcore { pair, .. } => Some(*pair),
                _ => None,
            })
            .collect()
    }
}

fn periodic_offset(p: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    [wrap_coord(p[0] - c[0], 1.0), wrap_coord(p[1] - c[1], 1.0)]
}

const BOUNDARY_SAMPLES: usize = 256;

fn boundary_distance(a: &Inclusion, b: &Inclusion, shift: [f64; 2]) -> f64 {
    match (a, b) {
        (
            Inclusion::Disk {
                center: ca,
                radius: ra,
            },
            Inclusion::Disk {
                center: cb,
                radius: rb,
            },
        ) => {
            let dx = cb[0] + shift[0] - ca[0];
            let dy = cb[1] + shift[1] - ca[1];
            dx.hypot(dy) - ra - rb
        }
        _ => {
            let pa = a.boundary_points(BOUNDARY_SAMPLES);
            let pb = b.boundary_points(BOUNDARY_SAMPLES);
            let mut best = f64::INFINITY;
            for p in &pa {
                for q in &pb {
                    best = best.min((q[0] + shift[0] - p[0]).hypot(q[1] + shift[1] - p[1]));
                }
            }
            // overlapping shapes: report a negative separation
            let cb = b.center();
            let inside = a.depth_at_offset([
                cb[0] + shift[0] - a.center()[0],
                cb[1] + shift[1] - a.center()[1],
            ]);
            if inside > 0.0 {
                -best
            } else {
                best
            }
        }
    }
}

const SHIFTS: [[f64; 2]; 9] = [
    [0.0, 0.0],
    [1.0, 0.0],
    [-1.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [1.0, 1.0],
    [1.0, -1.0],
    [-1.0, 1.0],
    [-1.0, -1.0],
];

impl Microstructure {
    pub fn empty(hardcore: f64) -> Self {
        Self {
            inclusions: Vec::new(),
            hardcore,
            provenance: Provenance::Deterministic,
        }
    }

    pub fn single_disk(center: [f64; 2], radius: f64, hardcore: f64) -> Self {
        Self {
            inclusions: vec![Inclusion::disk(center, radius)],
            hardcore,
            provenance: Provenance::Deterministic,
        }
    }

    /// Centered disk with prescribed volume fraction.
    pub fn disk_with_fraction(fraction: f64, hardcore: f64) -> Self {
        Self::single_disk([0.0, 0.0], (fraction / PI).sqrt(), hardcore)
    }

    pub fn is_empty(&self) -> bool {
        self.inclusions.is_empty()
    }

    /// Exact inclusion area fraction (inclusions are disjoint when valid).
    pub fn volume_fraction(&self) -> f64 {
        self.inclusions.iter().map(Inclusion::area).sum()
    }

    pub fn validate(&self) -> ValidationReport {
        let rho = self.hardcore;
        let mut violations = Vec::new();
        for (k, inc) in self.inclusions.iter().enumerate() {
            if !inc.radii_ok() || !inc.center().iter().all(|c| c.is_finite()) {
                violations.push(Violation::Malformed { index: k });
                continue;
            }
            let d = inc.diameter();
            if d > 1.0 / rho {
                violations.push(Violation::Diameter {
                    index: k,
                    diameter: d,
                });
            }
            let rc = inc.min_curvature_radius();
            if rc < rho {
                violations.push(Violation::BallCondition {
                    index: k,
                    radius: rc,
                });
            }
            let own = SHIFTS[1..5]
                .iter()
                .chain(&SHIFTS[5..])
                .map(|&s| boundary_distance(inc, inc, s))
                .fold(f64::INFINITY, f64::min);
            if own < rho {
                violations.push(Violation::SelfOverlap {
                    index: k,
                    distance: own,
                });
            }
        }
        for a in 0..self.inclusions.len() {
            for b in a + 1..self.inclusions.len() {
                let (ia, ib) = (&self.inclusions[a], &self.inclusions[b]);
                if !ia.radii_ok() || !ib.radii_ok() {
                    continue;
                }
                let dist = SHIFTS
                    .iter()
                    .map(|&s| boundary_distance(ia, ib, s))
                    .fold(f64::INFINITY, f64::min);
                if dist < rho {
                    violations.push(Violation::Hardcore {
                        pair: (a, b),
                        distance: dist,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let rep = self.validate();
        if rep.is_valid() {
            Ok(())
        } else {
            Err(Error::Geometry(format!("{:?}", rep.violations)))
        }
    }

    /// Signed depth of the nearest inclusion at a point of the torus:
    /// positive inside an inclusion, negative outside (`-inf` if empty).
    pub fn signed_depth(&self, p: [f64; 2]) -> f64 {
        self.inclusions
            .iter()
            .map(|inc| inc.depth_at_offset(periodic_offset(p, inc.center())))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the inclusion containing `p`.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        self.inclusions
            .iter()
            .position(|inc| inc.depth_at_offset(periodic_offset(p, inc.center())) > 0.0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.locate(p).is_some()
    }

    /// Node-wise signed depth field.
    pub fn depth_field(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |p| self.signed_depth(p))
    }

    /// Node-wise inclusion label (`None` outside).
    pub fn labels(&self, grid: Grid) -> Vec<Option<usize>> {
        grid.nodes().map(|(_, _, p)| self.locate(p)).collect()
    }

    pub fn rotated_quarter(&self) -> Self {
        Self {
            inclusions: self
                .inclusions
                .iter()
                .map(Inclusion::rotated_quarter)
                .collect(),
            hardcore: self.hardcore,
            provenance: self.provenance,
        }
    }
}

/// Per-cell area fraction of the inclusion set, estimated with `s x s`
/// subsamples per grid cell (cells are centered on the nodes).
pub fn rasterize_indicator(
    ms: &Microstructure,
    n: usize,
    supersampling: usize,
) -> Result<ScalarField> {
    ms.ensure_valid()?;
    if supersampling == 0 {
        return Err(Error::Grid("supersampling must be at least 1".into()));
    }
    let grid = Grid::unit(n)?;
    Ok(area_fraction(ms, grid, supersampling))
}

pub(crate) fn area_fraction(ms: &Microstructure, grid: Grid, s: usize) -> ScalarField {
    let h = grid.h();
    let mut out = ScalarField::zeros(grid);
    let weight = 1.0 / (s * s) as f64;
    let offsets: Vec<f64> = (0..s)
        .map(|a| ((a as f64 + 0.5) / s as f64 - 0.5) * h)
        .collect();
    for inc in &ms.inclusions {
        let c = inc.center();
        let reach = inc.bounding_radius() + h;
        let lo_i = ((c[0] - reach + 0.5) / h).floor() as isize;
        let hi_i = ((c[0] + reach + 0.5) / h).ceil() as isize;
        let lo_j = ((c[1] - reach + 0.5) / h).floor() as isize;
        let hi_j = ((c[1] + reach + 0.5) / h).ceil() as isize;
        for j in lo_j..=hi_j {
            for i in lo_i..=hi_i {
                let k = grid.wrap(i, j);
                let px = -0.5 + i as f64 * h;
                let py = -0.5 + j as f64 * h;
                let mut hits = 0usize;
                for oy in &offsets {
                    for ox in &offsets {
                        let d = periodic_offset([px + ox, py + oy], c);
                        if inc.depth_at_offset(d) > 0.0 {
                            hits += 1;
                        }
                    }
                }
                out.data[k] = (out.data[k] + hits as f64 * weight).min(1.0);
            }
        }
    }
    out
}

/// Width of the cut-off transition layer, `max(2h, 1/K)`.
pub fn cutoff_width(n: usize, penalty: f64) -> f64 {
    (2.0 / n as f64).max(1.0 / penalty)
}

/// Cut-off profile: 0 for `t <= 0`, 1 for `t >= 1`, `1 − (1 − t)^2` between.
///
/// The nonzero slope at the boundary makes every node inside an inclusion
/// carry a penalty proportional to `K`, so ladder energies converge at the
/// `O(1/K)` rate rather than through a slowly growing boundary layer.
#[inline]
pub fn cutoff_profile(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        1.0 - (1.0 - t) * (1.0 - t)
    }
}

/// Penalized conductivity `1 + K Σ χ_K` at the nodes; `χ_K` rises from 0 on
/// the inclusion boundary to 1 at depth `max(2h, 1/K)` and is nondecreasing in `K`.
pub fn penalization_field(ms: &Microstructure, n: usize, penalty: f64) -> Result<ScalarField> {
    ms.ensure_valid()?;
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(Error::Geometry(format!(
            "penalty must be finite and >= 0, got {penalty}"
        )));
    }
    let grid = Grid::unit(n)?;
    if penalty == 0.0 {
        return Ok(ScalarField::constant(grid, 1.0));
    }
    let w = cutoff_width(n, penalty);
    Ok(ScalarField::from_fn(grid, |p| {
        1.0 + penalty * cutoff_profile(ms.signed_depth(p) / w)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum RadiusLaw {
    Fixed { radius: f64 },
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardcoreSample {
    pub microstructure: Microstructure,
    pub achieved_fraction: f64,
    pub attempts: usize,
    /// True when the attempt budget ran out before reaching the target.
    pub saturated: bool,
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 200_000;

/// Dart throwing with hardcore rejection on the torus.
pub fn sample_random_hardcore(
    seed: u64,
    target_fraction: f64,
    hardcore: f64,
    law: RadiusLaw,
    max_attempts: usize,
) -> Result<HardcoreSample> {
    if !(0.0..=MAX_RANDOM_FRACTION).contains(&target_fraction) {
        return Err(Error::Geometry(format!(
            "target volume fraction must lie in [0, {MAX_RANDOM_FRACTION}], got {target_fraction}"
        )));
    }
    if !(hardcore > 0.0) {
        return Err(Error::Geometry("hardcore constant must be positive".into()));
    }
    let (rmin, rmax) = match law {
        RadiusLaw::Fixed { radius } => (radius, radius),
        RadiusLaw::Uniform { min, max } => (min, max),
    };
    if !(rmin > 0.0 && rmax >= rmin) {
        return Err(Error::Geometry(format!("invalid radius law {law:?}")));
    }
    if rmin < hardcore || 2.0 * rmax > 1.0 / hardcore || 2.0 * rmax + hardcore > 1.0 {
        return Err(Error::Geometry(format!(
            "radius law {law:?} incompatible with hardcore constant {hardcore}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ms = Microstructure {
        inclusions: Vec::new(),
        hardcore,
        provenance: Provenance::Random { seed },
    };
    let mut fraction = 0.0;
    let mut attempts = 0;
    let upper = 1.1 * target_fraction;
    let lower = match law {
        // a fixed radius reaches the nearest attainable count
        RadiusLaw::Fixed { radius } => {
            let a = PI * radius * radius;
            (target_fraction / a).round() * a - 1e-12
        }
        RadiusLaw::Uniform { .. } => 0.95 * target_fraction,
    };
    while fraction < lower && attempts < max_attempts {
        attempts += 1;
        let r = if rmax > rmin {
            rng.random_range(rmin..rmax)
        } else {
            rmin
        };
        let c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let area = PI * r * r;
        if fraction + area > upper {
            continue;
        }
        let ok = ms.inclusions.iter().all(|inc| {
            let Inclusion::Disk { center, radius } = *inc else {
                unreachable!()
            };
            let d = periodic_offset(c, center);
            d[0].hypot(d[1]) - r - radius >= hardcore
        });
        if ok {
            ms.inclusions.push(Inclusion::disk(c, r));
            fraction += area;
        }
    }
    let saturated = fraction < lower;
    Ok(HardcoreSample {
        microstructure: ms,
        achieved_fraction: fraction,
        attempts,
        saturated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminateTerm {
    pub k: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: [i32; 2],
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DepthProfile {
    Constant {
        value: f64,
    },
    TwoPhase {
        outside: f64,
        inside: f64,
        microstructure: Microstructure,
    },
    /// `b(x) = mean + Σ a cos(2π k x₁ + phase)`.
    Laminate {
        mean: f64,
        terms: Vec<LaminateTerm>,
    },
    /// `b(x) = mean + Σ a cos(2π k·x + phase)`.
    Trigonometric {
        mean: f64,
        terms: Vec<TrigTerm>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSpec {
    pub profile: DepthProfile,
    /// Non-degeneracy constant: `1/C₀ <= b <= C₀`.
    pub c0: f64,
}

impl DepthSpec {
    pub fn constant(value: f64, c0: f64) -> Self {
        Self {
            profile: DepthProfile::Constant { value },
            c0,
        }
    }

    pub fn laminate(mean: f64, terms: Vec<LaminateTerm>, c0: f64) -> Self {
        Self {
            profile: DepthProfile::Laminate { mean, terms },
            c0,
        }
    }

    pub fn trigonometric(mean: f64, terms: Vec<TrigTerm>, c0: f64) -> Self {
        Self {
            profile: DepthProfile::Trigonometric { mean, terms },
            c0,
        }
    }

    pub fn two_phase(outside: f64, inside: f64, microstructure: Microstructure, c0: f64) -> Self {
        Self {
            profile: DepthProfile::TwoPhase {
                outside,
                inside,
                microstructure,
            },
            c0,
        }
    }

    /// Point value of `b` at a point of the (periodic) unit cell.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let tau = 2.0 * PI;
        match &self.profile {
            DepthProfile::Constant { value } => *value,
            DepthProfile::TwoPhase {
                outside,
                inside,
                microstructure,
            } => {
                if microstructure.contains(p) {
                    *inside
                } else {
                    *outside
                }
            }
            DepthProfile::Laminate { mean, terms } => {
                mean + terms
                    .iter()
                    .map(|t| t.amplitude * (tau * t.k as f64 * p[0] + t.phase).cos())
                    .sum::<f64>()
            }
            DepthProfile::Trigonometric { mean, terms } => {
                mean + terms
                    .iter()
                    .map(|t| {
                        t.amplitude
                            * (tau * (t.k[0] as f64 * p[0] + t.k[1] as f64 * p[1]) + t.phase).cos()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Laminate, trigonometric and constant profiles are smooth.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.profile, DepthProfile::TwoPhase { .. })
    }

    /// Checks `1/C₀ <= b <= C₀` on a dense sampling.
    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 >= 1.0) {
            return Err(Error::Depth(format!("C0 must be >= 1, got {}", self.c0)));
        }
        let (lo, hi) = match &self.profile {
            DepthProfile::Constant { value } => (*value, *value),
            DepthProfile::TwoPhase {
                outside,
                inside,
                microstructure,
            } => {
                microstructure
                    .ensure_valid()
                    .map_err(|e| Error::Depth(format!("two-phase inclusions: {e}")))?;
                if microstructure.is_empty() {
                    (*outside, *outside)
                } else {
                    (outside.min(*inside), outside.max(*inside))
                }
            }
            DepthProfile::Laminate { .. } => {
                let m = 4096;
                (0..m)
                    .map(|i| self.eval([-0.5 + i as f64 / m as f64, 0.0]))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v), b.max(v))
                    })
            }
            DepthProfile::Trigonometric { .. } => {
                let m = 512;
                let g = Grid { n: m, length: 1.0 };
                g.nodes()
                    .map(|(_, _, p)| self.eval(p))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v), b.max(v))
                    })
            }
        };
        let floor = 1.0 / self.c0;
        if !(lo.is_finite() && hi.is_finite()) || lo < floor || hi > self.c0 {
            return Err(Error::Depth(format!(
                "depth range [{lo}, {hi}] violates bounds [{floor}, {}]",
                self.c0
            )));
        }
        Ok(())
    }
}

/// Sample the depth profile on the unit-cell grid; two-phase profiles use
/// per-cell area fractions (4 x 4 subsampling) to mix the two depths.
/// The averaged depth `b₀` is the mean of the returned field.
pub fn build_depth_field(spec: &DepthSpec, n: usize) -> Result<ScalarField> {
    spec.validate()?;
    let grid = Grid::unit(n)?;
    let field = match &spec.profile {
        DepthProfile::TwoPhase {
            outside,
            inside,
            microstructure,
        } => {
            let frac = area_fraction(microstructure, grid, 4);
            frac.map(|f| outside + (inside - outside) * f)
        }
        _ => ScalarField::from_fn(grid, |p| spec.eval(p)),
    };
    let floor = 1.0 / spec.c0;
    if field.min() < floor || field.max() > spec.c0 {
        return Err(Error::Depth(format!(
            "sampled depth range [{}, {}] violates bounds",
            field.min(),
            field.max()
        )));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn close_disks_violate_hardcore() {
        let rho = 0.1;
        let ms = Microstructure {
            inclusions: vec![
                Inclusion::disk([-0.15, 0.0], 0.1),
                Inclusion::disk([0.1, 0.0], 0.1),
            ],
            hardcore: rho,
            provenance: Provenance::Deterministic,
        };
        // boundary distance 0.25 - 0.2 = 0.05 = 0.5 rho
        let rep = ms.validate();
        assert!(!rep.is_valid());
        assert_eq!(rep.hardcore_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn empty_and_single_disk_are_valid() {
        let empty = Microstructure::empty(0.1);
        assert!(empty.validate().is_valid());
        assert_eq!(empty.volume_fraction(), 0.0);
        assert!(Microstructure::single_disk([0.0, 0.0], 0.25, 0.1)
            .validate()
            .is_valid());
    }

    #[test]
    fn hardcore_is_checked_across_the_periodic_boundary() {
        let ms = Microstructure {
            inclusions: vec![
                Inclusion::disk([-0.4, 0.0], 0.08),
                Inclusion::disk([0.4, 0.0], 0.08),
            ],
            hardcore: 0.05,
            provenance: Provenance::Deterministic,
        };
        // periodic gap: 0.2 - 0.16 = 0.04 < 0.05
        assert_eq!(ms.validate().hardcore_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn oversized_and_sharp_inclusions_are_flagged() {
        let ms = Microstructure::single_disk([0.0, 0.0], 0.48, 0.1);
        assert!(matches!(
            ms.validate().violations[0],
            Violation::SelfOverlap { .. }
        ));
        let ell = Microstructure {
            inclusions: vec![Inclusion::Ellipse {
                center: [0.0, 0.0],
                radii: [0.3, 0.05],
                angle: 0.0,
            }],
            hardcore: 0.05,
            provenance: Provenance::Deterministic,
        };
        assert!(ell
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BallCondition { .. })));
    }

    #[test]
    fn disk_area_fraction_matches_pi_r2() {
        let ms = Microstructure::single_disk([0.0, 0.0], 0.25, 0.1);
        let f = rasterize_indicator(&ms, 256, 4).unwrap();
        assert!((f.mean() - PI / 16.0).abs() < 1e-3);
        assert!(f.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_indicator_is_zero() {
        let f = rasterize_indicator(&Microstructure::empty(0.1), 32, 2).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indicator_wraps_across_the_boundary() {
        let ms = Microstructure::single_disk([0.45, 0.0], 0.3, 0.1);
        let f = rasterize_indicator(&ms, 64, 2).unwrap();
        let g = f.grid;
        let mid = g.n / 2;
        assert!(f.at(0, mid) > 0.99, "left edge");
        assert!(f.at(g.n - 1, mid) > 0.99, "right edge");
        assert!((f.mean() - PI * 0.09).abs() < 5e-3);
    }

    #[test]
    fn penalization_bounds_and_center_value() {
        let ms = Microstructure::single_disk([0.0, 0.0], 0.25, 0.1);
        let f = penalization_field(&ms, 128, 1e4).unwrap();
        assert!(f.min() >= 1.0 && f.max() <= 1.0 + 1e4);
        assert_eq!(f.at(64, 64), 1.0 + 1e4);
        let zero = penalization_field(&ms, 32, 0.0).unwrap();
        assert!(zero.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cutoff_width_is_grid_limited_at_large_penalty() {
        assert_eq!(cutoff_width(512, 1e6), 1.0 / 256.0);
        assert_eq!(cutoff_width(512, 100.0), 0.01);
    }

    #[test]
    fn penalization_is_monotone_in_k() {
        let ms = Microstructure::single_disk([0.05, -0.1], 0.2, 0.1);
        let mut prev = penalization_field(&ms, 64, 10.0).unwrap();
        for &k in &[30.0, 100.0, 1e3, 1e5] {
            let next = penalization_field(&ms, 64, k).unwrap();
            assert!(next.data.iter().zip(&prev.data).all(|(a, b)| a >= b));
            prev = next;
        }
    }

    #[test]
    fn random_sampler_reaches_target_and_is_deterministic() {
        let law = RadiusLaw::Fixed { radius: 0.05 };
        let a = sample_random_hardcore(7, 0.1, 0.02, law, DEFAULT_MAX_ATTEMPTS).unwrap();
        let b = sample_random_hardcore(7, 0.1, 0.02, law, DEFAULT_MAX_ATTEMPTS).unwrap();
        assert_eq!(a, b);
        assert!(!a.saturated);
        assert!(a.microstructure.validate().is_valid());
        let lam = rasterize_indicator(&a.microstructure, 256, 4)
            .unwrap()
            .mean();
        assert!((0.09..=0.11).contains(&lam), "lambda = {lam}");
    }

    #[test]
    fn random_sampler_edge_cases() {
        let law = RadiusLaw::Fixed { radius: 0.05 };
        let z = sample_random_hardcore(1, 0.0, 0.02, law, 100).unwrap();
        assert!(z.microstructure.is_empty());
        assert!(sample_random_hardcore(1, 0.5, 0.02, law, 100).is_err());
        let sat =
            sample_random_hardcore(3, 0.4, 0.2, RadiusLaw::Fixed { radius: 0.2 }, 2000).unwrap();
        assert!(sat.saturated);
        assert!(sat.microstructure.validate().is_valid());
    }

    #[test]
    fn depth_fields() {
        let c = build_depth_field(&DepthSpec::constant(2.0, 3.0), 32).unwrap();
        assert!(c.data.iter().all(|&v| v == 2.0));
        assert_eq!(c.mean(), 2.0);

        let lam = DepthSpec::laminate(
            1.0,
            vec![LaminateTerm {
                k: 1,
                amplitude: 0.5,
                phase: 0.0,
            }],
            4.0,
        );
        for &n in &[16, 64, 250] {
            let f = build_depth_field(&lam, n).unwrap();
            assert!((f.mean() - 1.0).abs() < 1e-12);
            // constant along x2
            assert_eq!(f.at(3, 0), f.at(3, n - 1));
        }

        let ms = Microstructure::disk_with_fraction(0.2, 0.1);
        let two = build_depth_field(&DepthSpec::two_phase(1.0, 2.0, ms, 3.0), 256).unwrap();
        assert!((two.mean() - 1.2).abs() < 1e-3);

        assert!(build_depth_field(&DepthSpec::constant(5.0, 2.0), 32).is_err());
        assert!(!DepthSpec::two_phase(1.0, 2.0, Microstructure::empty(0.1), 3.0).is_smooth());
    }
}
