//! Space-filling designs over the parameter space.
//!
//! Expensive design points are nested in the cheap design: a point tagged
//! [`Fidelity::Expensive`] is run at both resolutions, a point tagged
//! [`Fidelity::Cheap`] only at the coarse one.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("parameter {name}: lower bound {lower} must be below upper bound {upper}")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("parameter space needs at least one dimension")]
    NoDimensions,
    #[error("invalid design request: {0}")]
    InvalidRequest(String),
    #[error("edge filtering removed every expensive point")]
    AllExpensiveRemoved,
    #[error("design csv: {0}")]
    Csv(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl ParamDim {
    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Box-shaped parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    dims: Vec<ParamDim>,
}

impl ParameterSpace {
    pub fn new(dims: Vec<ParamDim>) -> Result<Self, DesignError> {
        if dims.is_empty() {
            return Err(DesignError::NoDimensions);
        }
        for d in &dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(DesignError::InvalidBounds { name: d.name.clone(), lower: d.lower, upper: d.upper });
            }
        }
        Ok(Self { dims })
    }

    /// Convenience constructor from `(name, lower, upper)` triples.
    pub fn from_bounds(bounds: &[(&str, f64, f64)]) -> Result<Self, DesignError> {
        Self::new(
            bounds
                .iter()
                .map(|&(name, lower, upper)| ParamDim { name: name.to_string(), lower, upper })
                .collect(),
        )
    }

    pub fn dims(&self) -> &[ParamDim] {
        &self.dims
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.k() && theta.iter().zip(&self.dims).all(|(&x, d)| x >= d.lower && x <= d.upper)
    }

    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.dims).map(|(&x, d)| (x - d.lower) / d.range()).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.dims).map(|(&x, d)| d.lower + x * d.range()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fidelity {
    /// Run at both resolutions.
    Expensive,
    /// Run at the coarse resolution only.
    Cheap,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Expensive => "expensive",
            Fidelity::Cheap => "cheap",
        }
    }
}

/// Parameter settings with fidelity tags, in native units.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    space: ParameterSpace,
    points: Vec<Vec<f64>>,
    fidelity: Vec<Fidelity>,
}

impl Design {
    pub fn new(space: ParameterSpace, points: Vec<Vec<f64>>, fidelity: Vec<Fidelity>) -> Result<Self, DesignError> {
        if points.len() != fidelity.len() {
            return Err(DesignError::InvalidRequest("one fidelity tag per point required".into()));
        }
        if let Some(p) = points.iter().find(|p| !space.contains(p)) {
            return Err(DesignError::InvalidRequest(format!("point {p:?} outside the parameter space")));
        }
        Ok(Self { space, points, fidelity })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn fidelity(&self) -> &[Fidelity] {
        &self.fidelity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points run at the fine resolution, in design order.
    pub fn expensive_points(&self) -> Vec<Vec<f64>> {
        self.points_where(|f| f == Fidelity::Expensive)
    }

    /// Points run at the coarse resolution: every point, in design order.
    pub fn cheap_points(&self) -> Vec<Vec<f64>> {
        self.points.clone()
    }

    pub fn n_expensive(&self) -> usize {
        self.fidelity.iter().filter(|&&f| f == Fidelity::Expensive).count()
    }

    /// Number of coarse-resolution runs (all points).
    pub fn n_cheap(&self) -> usize {
        self.points.len()
    }

    fn points_where(&self, pred: impl Fn(Fidelity) -> bool) -> Vec<Vec<f64>> {
        self.points.iter().zip(&self.fidelity).filter(|(_, &f)| pred(f)).map(|(p, _)| p.clone()).collect()
    }

    /// Subset of rows by index, keeping tags.
    pub fn select(&self, rows: &[usize]) -> Design {
        Design {
            space: self.space.clone(),
            points: rows.iter().map(|&i| self.points[i].clone()).collect(),
            fidelity: rows.iter().map(|&i| self.fidelity[i]).collect(),
        }
    }

    /// Writes `theta_<name>...,fidelity` CSV with round-trip exact values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), DesignError> {
        let mut header: Vec<String> = self.space.dims().iter().map(|d| format!("theta_{}", d.name)).collect();
        header.push("fidelity".into());
        writeln!(out, "{}", header.join(","))?;
        for (p, f) in self.points.iter().zip(&self.fidelity) {
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.push(f.as_str().into());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(space: &ParameterSpace, input: R) -> Result<Design, DesignError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| DesignError::Csv("empty file".into()))??;
        let expected: Vec<String> = space
            .dims()
            .iter()
            .map(|d| format!("theta_{}", d.name))
            .chain(std::iter::once("fidelity".to_string()))
            .collect();
        let got: Vec<&str> = header.trim().split(',').collect();
        if got != expected {
            return Err(DesignError::Csv(format!("header {got:?} does not match {expected:?}")));
        }
        let mut points = Vec::new();
        let mut fidelity = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.trim().split(',').collect();
            if cells.len() != space.k() + 1 {
                return Err(DesignError::Csv(format!("row {} has {} columns", i + 2, cells.len())));
            }
            let p = cells[..space.k()]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| DesignError::Csv(format!("row {}: bad number {s:?}", i + 2))))
                .collect::<Result<Vec<_>, _>>()?;
            let f = match cells[space.k()] {
                "expensive" => Fidelity::Expensive,
                "cheap" => Fidelity::Cheap,
                other => return Err(DesignError::Csv(format!("row {}: unknown fidelity {other:?}", i + 2))),
            };
            points.push(p);
            fidelity.push(f);
        }
        Design::new(space.clone(), points, fidelity)
    }
}

/// One jittered Latin hypercube on `[0,1]^k`.
fn random_lhs(rng: &mut impl Rng, p: usize, k: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; k]; p];
    for j in 0..k {
        let mut strata: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (i, &s) in strata.iter().enumerate() {
            pts[i][j] = (s as f64 + rng.random::<f64>()) / p as f64;
        }
    }
    pts
}

/// Smallest pairwise Euclidean distance between points.
pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Best-of-`n_candidates` maximin Latin hypercube in unit coordinates.
///
/// Candidate `i` draws from stream `i` of a ChaCha generator seeded with
/// `seed`, so the result does not depend on evaluation order and the
/// candidate set for a smaller budget is a prefix of a larger one.
pub fn maximin_unit_lhs(p: usize, k: usize, seed: u64, n_candidates: usize) -> Vec<Vec<f64>> {
    let scored: Vec<(f64, Vec<Vec<f64>>)> = (0..n_candidates)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let pts = random_lhs(&mut rng, p, k);
            (min_pairwise_distance(&pts), pts)
        })
        .collect();
    // First maximum wins ties.
    let mut best = 0;
    for (i, (d, _)) in scored.iter().enumerate() {
        if *d > scored[best].0 {
            best = i;
        }
    }
    scored.into_iter().nth(best).map(|(_, pts)| pts).unwrap_or_default()
}

/// Maximin Latin hypercube design of `p` expensive points.
pub fn maximin_lhs(space: &ParameterSpace, p: usize, seed: u64, n_candidates: usize) -> Result<Design, DesignError> {
    if p < 2 {
        return Err(DesignError::InvalidRequest(format!("need at least 2 design points, got {p}")));
    }
    if n_candidates < 1 {
        return Err(DesignError::InvalidRequest("need at least one candidate".into()));
    }
    let unit = maximin_unit_lhs(p, space.k(), seed, n_candidates);
    let points = unit.iter().map(|u| space.from_unit(u)).collect();
    Design::new(space.clone(), points, vec![Fidelity::Expensive; p])
}

/// Adds `extra` cheap-only points from a fresh maximin design.
pub fn augment_cheap(
    expensive: &Design,
    space: &ParameterSpace,
    extra: usize,
    seed: u64,
    n_candidates: usize,
) -> Result<Design, DesignError> {
    let mut points = expensive.points().to_vec();
    let mut fidelity = expensive.fidelity().to_vec();
    if extra > 0 {
        let unit = if extra == 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_lhs(&mut rng, 1, space.k())
        } else {
            maximin_unit_lhs(extra, space.k(), seed, n_candidates.max(1))
        };
        points.extend(unit.iter().map(|u| space.from_unit(u)));
        fidelity.extend(std::iter::repeat_n(Fidelity::Cheap, extra));
    }
    Design::new(space.clone(), points, fidelity)
}

/// Fractions of each dimension's range forming the low and high edge bands.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeBand {
    pub low: f64,
    pub high: f64,
}

/// Splits off expensive points that fall in an edge band.
///
/// Held-out points keep their cheap run: in `kept` they are retagged as
/// cheap-only, so the edges are covered by cheap runs alone. Cheap-only
/// points are never removed.
pub fn edge_filter(design: &Design, bands: &[EdgeBand]) -> Result<(Design, Design), DesignError> {
    let space = design.space();
    if bands.len() != space.k() {
        return Err(DesignError::InvalidRequest(format!("{} bands for {} dimensions", bands.len(), space.k())));
    }
    if bands.iter().any(|b| !(0.0..0.5).contains(&b.low) || !(0.0..0.5).contains(&b.high)) {
        return Err(DesignError::InvalidRequest("band fractions must lie in [0, 0.5)".into()));
    }
    let in_band = |p: &[f64]| {
        p.iter().zip(space.dims()).zip(bands).any(|((&x, d), b)| {
            (b.low > 0.0 && x < d.lower + b.low * d.range()) || (b.high > 0.0 && x > d.upper - b.high * d.range())
        })
    };
    let mut kept_fid = design.fidelity().to_vec();
    let mut held = Vec::new();
    for (i, p) in design.points().iter().enumerate() {
        if design.fidelity()[i] == Fidelity::Expensive && in_band(p) {
            kept_fid[i] = Fidelity::Cheap;
            held.push(i);
        }
    }
    let kept = Design::new(space.clone(), design.points().to_vec(), kept_fid)?;
    if kept.n_expensive() == 0 {
        return Err(DesignError::AllExpensiveRemoved);
    }
    Ok((kept, design.select(&held)))
}
