//! Ball packings of `Ω`: a periodic lattice of cells of edge `2^{-j}`, each
//! holding the same multi-scale template of disjoint balls.

use super::domain::Domain;
use super::RefineError;
use crate::map::{dist, Direction, Homeo, MAX_DIM};
use crate::qmc::task_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Template balls are shrunk by this factor inside their lattice slots, so
/// every ball sits compactly inside its cell.
pub const SHRINK: f64 = 0.999;
const MAX_SCALES: usize = 12;
const MAX_CANDIDATES: u64 = 1 << 22;

/// Cells of edge at least `2^{-RESOLVED_LEVEL}` resolve the local coordinate
/// to better than `2^{-16}` of a cell in `[0, 1]`.
pub const RESOLVED_LEVEL: i32 = 36;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl TemplateBall {
    /// Corner of the axis cube inscribed in the concentric ball of half radius.
    pub fn cube_origin(&self) -> Vec<f64> {
        let half = self.cube_edge() / 2.0;
        self.center.iter().map(|c| c - half).collect()
    }

    /// Edge `2·(r/2)/√n` of that cube.
    pub fn cube_edge(&self) -> f64 {
        self.radius / (self.center.len() as f64).sqrt()
    }
}

/// Disjoint balls in the unit cell, in cell units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub n: usize,
    pub balls: Vec<TemplateBall>,
    /// Total ball volume, exact since the balls are disjoint.
    pub coverage: f64,
    pub scales: usize,
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

impl Template {
    /// Greedy packing: at scale `s` every dyadic sub-cell of edge `2^{-s}`
    /// offers its inscribed ball, accepted when disjoint from all balls taken
    /// so far; scales are added until the balls cover `target` of the cell.
    pub fn greedy(n: usize, target: f64) -> Result<Self, RefineError> {
        let vol = unit_ball_volume(n);
        let mut balls: Vec<TemplateBall> = Vec::new();
        let mut coverage = 0.0;
        // Bucket grid of edge 2^{-g} listing the balls that reach each bucket.
        let g = match n {
            1 | 2 => 3,
            3 => 4,
            _ => 3,
        };
        let side = 1usize << g;
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); side.pow(n as u32)];
        let bucket_of = |idx: &[usize]| idx.iter().fold(0, |a, &i| a * side + i);
        for s in 0..MAX_SCALES {
            if coverage > target {
                return Ok(Self { n, balls, coverage, scales: s });
            }
            let per_axis = 1u64 << s;
            if per_axis.pow(n as u32) > MAX_CANDIDATES {
                break;
            }
            let w = 1.0 / per_axis as f64;
            let r = SHRINK * w / 2.0;
            for flat in 0..per_axis.pow(n as u32) {
                let mut idx = flat;
                let mut c = [0.0; MAX_DIM];
                for ci in c[..n].iter_mut() {
                    *ci = ((idx % per_axis) as f64 + 0.5) * w;
                    idx /= per_axis;
                }
                let center = &c[..n];
                let home: Vec<usize> = center.iter().map(|&v| ((v * side as f64) as usize).min(side - 1)).collect();
                let clash = buckets[bucket_of(&home)]
                    .iter()
                    .any(|&b| dist(center, &balls[b].center) <= (r + balls[b].radius) * (1.0 + 1e-12));
                if clash {
                    continue;
                }
                // A clash can also come from a ball listed only in a
                // neighbouring bucket when the candidate straddles buckets.
                let lo: Vec<usize> = center.iter().map(|&v| (((v - r) * side as f64).floor().max(0.0)) as usize).collect();
                let hi: Vec<usize> = center.iter().map(|&v| (((v + r) * side as f64) as usize).min(side - 1)).collect();
                let mut reach = Vec::new();
                visit_boxes(&lo, &hi, &mut |b| reach.push(bucket_of(b)));
                let clash = reach.iter().any(|&k| {
                    buckets[k].iter().any(|&b| dist(center, &balls[b].center) <= (r + balls[b].radius) * (1.0 + 1e-12))
                });
                if clash {
                    continue;
                }
                let id = balls.len();
                balls.push(TemplateBall { center: center.to_vec(), radius: r });
                for k in reach {
                    buckets[k].push(id);
                }
                coverage += vol * r.powi(n as i32);
            }
        }
        if coverage > target {
            let scales = balls.iter().map(|b| (SHRINK / (2.0 * b.radius)).log2().round() as usize + 1).max().unwrap_or(0);
            return Ok(Self { n, balls, coverage, scales });
        }
        Err(RefineError::Packing(format!("template reaches {coverage:.4} of the cell, short of {target:.4}")))
    }

    /// Index of the open ball holding `u`, if any.
    pub fn ball_at(&self, u: &[f64]) -> Option<usize> {
        self.balls.iter().position(|b| dist(u, &b.center) < b.radius)
    }

    /// Total volume of the inscribed implant cubes.
    pub fn cube_volume(&self) -> f64 {
        self.balls.iter().map(|b| b.cube_edge().powi(self.n as i32)).sum()
    }

    pub fn max_radius(&self) -> f64 {
        self.balls.iter().map(|b| b.radius).fold(0.0, f64::max)
    }
}

fn visit_boxes(lo: &[usize], hi: &[usize], f: &mut dyn FnMut(&[usize])) {
    let n = lo.len();
    let mut cur = lo.to_vec();
    loop {
        f(&cur);
        let mut i = 0;
        while i < n {
            if cur[i] < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i];
            i += 1;
        }
        if i == n {
            return;
        }
    }
}

/// Monte-Carlo fraction with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub fraction: f64,
    pub stderr: f64,
    /// Samples that landed in the region being covered.
    pub samples: usize,
}

/// The lattice packing of `Ω` at cell level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packing {
    pub template: Template,
    /// Cells have edge `2^{-level}`.
    pub level: i32,
    pub rho: f64,
    /// Lower bound on the measure of the cells inside `Ω`.
    pub cells_measure: f64,
    /// Lower bound on `|⋃B_i| / |Ω|`.
    pub domain_coverage: f64,
    /// Estimate of `|⋃F(B_i)| / |F(Ω)|`.
    pub image_coverage: Coverage,
    /// Lower bound on `Σ|Q_i|`.
    pub cubes_measure: f64,
}

/// Lattice anchor and local coordinate of `x` at level `j`.
pub fn cell_of(x: &[f64], level: i32, anchor: &mut [f64], u: &mut [f64]) {
    let scale = 2f64.powi(level);
    for i in 0..x.len() {
        anchor[i] = (x[i] * scale).floor() / scale;
        u[i] = (x[i] - anchor[i]) * scale;
    }
}

impl Packing {
    pub fn cell_edge(&self) -> f64 {
        2f64.powi(-self.level)
    }

    /// Whether cells are resolved in `f64`, so that absolute points reach
    /// their interiors.
    pub fn resolved(&self) -> bool {
        self.level <= RESOLVED_LEVEL
    }
}

/// Packs `Ω` with template balls of radius at most `rho` and checks both
/// coverage conditions: exactly for `Ω` itself and by preimage sampling for
/// `F(Ω)`, with a `2σ` margin.
pub fn pack_balls<M: Homeo + ?Sized>(
    domain: &Domain,
    rho: f64,
    target: f64,
    f: &M,
    samples: usize,
    seed: u64,
) -> Result<Packing, RefineError> {
    let n = domain.n;
    let template = Template::greedy(n, target)?;
    let level = (template.max_radius() / rho).log2().ceil().max(0.0) as i32;
    if level > 1000 {
        return Err(RefineError::Packing(format!("radius bound {rho:e} underflows the lattice")));
    }
    let edge = 2f64.powi(-level);
    let cells_measure = domain.cells_measure(edge);
    let domain_coverage = template.coverage * cells_measure / domain.measure;
    if domain_coverage <= target {
        return Err(RefineError::Packing(format!("balls cover {domain_coverage:.4} of Ω")));
    }
    let mut packing = Packing {
        cubes_measure: template.cube_volume() * cells_measure,
        template,
        level,
        rho,
        cells_measure,
        domain_coverage,
        image_coverage: Coverage { fraction: 0.0, stderr: 0.0, samples: 0 },
    };
    let cov = image_coverage(domain, &packing, f, samples, seed)?;
    packing.image_coverage = cov;
    if !(cov.fraction - target > 2.0 * cov.stderr) {
        return Err(RefineError::Packing(format!("image coverage {:.4} ± {:.4} is not above {target:.4}", cov.fraction, cov.stderr)));
    }
    Ok(packing)
}

const CHUNK: usize = 4096;

/// `y` uniform, `x = F^{-1}(y)`; among `x` in cells inside `Ω`, the fraction
/// in a template ball. Unresolved cells see `F` as affine, so the local
/// coordinate is drawn uniformly instead of read off `x`.
fn image_coverage<M: Homeo + ?Sized>(domain: &Domain, p: &Packing, f: &M, samples: usize, seed: u64) -> Result<Coverage, RefineError> {
    let n = domain.n;
    let edge = p.cell_edge();
    let chunks = samples.div_ceil(CHUNK);
    let counts: Vec<(usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let (mut inside, mut hits) = (0, 0);
            let (mut x, mut a, mut u) = ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                x[..n].iter_mut().for_each(|v| *v = rng.gen());
                f.apply(&mut x[..n], Direction::Inverse)?;
                cell_of(&x[..n], p.level, &mut a[..n], &mut u[..n]);
                if !domain.contains_box(&a[..n], edge) {
                    continue;
                }
                inside += 1;
                if !p.resolved() {
                    u[..n].iter_mut().for_each(|v| *v = rng.gen());
                }
                hits += p.template.ball_at(&u[..n]).is_some() as usize;
            }
            Ok((inside, hits))
        })
        .collect::<Result<_, RefineError>>()?;
    let (inside, hits) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if inside == 0 {
        return Err(RefineError::Packing("no sample fell in Ω".into()));
    }
    let q = hits as f64 / inside as f64;
    Ok(Coverage { fraction: q, stderr: (q * (1.0 - q) / inside as f64).sqrt(), samples: inside })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-15);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn plane_template_is_one_ball() {
        let t = Template::greedy(2, 2.0 / 3.0).unwrap();
        assert_eq!(t.balls.len(), 1);
        assert!((t.coverage - PI / 4.0 * SHRINK * SHRINK).abs() < 1e-12);
        // Inscribed square of the half-radius disc.
        assert!((t.cube_volume() - SHRINK * SHRINK / 8.0).abs() < 1e-12);
    }

    #[test]
    fn space_template_needs_several_scales() {
        let t = Template::greedy(3, 2.0 / 3.0).unwrap();
        assert!(t.coverage > 2.0 / 3.0);
        assert!(t.scales >= 2, "{}", t.scales);
        assert!(t.balls.len() > 1);
        assert!(unit_ball_volume(3) * (SHRINK / 2.0).powi(3) < 2.0 / 3.0);
    }

    #[test]
    fn template_balls_are_disjoint_and_inside() {
        for n in 2..=3 {
            let t = Template::greedy(n, 2.0 / 3.0).unwrap();
            for (i, a) in t.balls.iter().enumerate() {
                assert!(a.center.iter().all(|&c| c - a.radius > 0.0 && c + a.radius < 1.0));
                for b in &t.balls[..i] {
                    assert!(dist(&a.center, &b.center) > a.radius + b.radius);
                }
            }
        }
    }

    #[test]
    fn cells() {
        let (mut a, mut u) = ([0.0; 2], [0.0; 2]);
        cell_of(&[0.3, 0.71], 3, &mut a, &mut u);
        assert_eq!(a, [0.25, 0.625]);
        assert!((u[0] - 0.4).abs() < 1e-12 && (u[1] - 0.68).abs() < 1e-12);
        cell_of(&[0.3, 0.71], 240, &mut a, &mut u);
        assert_eq!(a, [0.3, 0.71]);
        assert_eq!(u, [0.0, 0.0]);
    }
}
