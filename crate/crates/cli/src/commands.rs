use crate::output::{hue_rgb, num, pgm, ppm, quantize, sidecar, to_json, write_atomic};
use crate::verify::run_suite;
use crate::{failed, CliError, Command, Format, MapArgs, OutArgs, RunConfig};
use flipforge::boxswap::FlowSolver;
use flipforge::flipmap::FlipHomeo;
use flipforge::map::{Direction, Homeo};
use flipforge::modulus::{build_psi, psi_ratio_profile, Modulus};
use flipforge::refine::{refinement_step, RefineConfig, RefinementState};
use flipforge::sequences::{scales_for, verify_scales};
use rayon::prelude::*;
use serde_json::json;
use std::fmt::Write as _;
use std::io::Write as _;

pub(crate) fn dispatch(cmd: Command, threads: Option<usize>) -> Result<u8, CliError> {
    let config = |command, modulus: &crate::ModulusArgs| RunConfig {
        command,
        modulus: modulus.phi.clone(),
        psi: modulus.psi,
        n: None,
        depth: None,
        seed: None,
        samples: None,
        tol: None,
        threads,
        version: env!("CARGO_PKG_VERSION"),
    };
    match cmd {
        Command::Sequences { modulus, k, out } => {
            let cfg = RunConfig { depth: Some(k), ..config("sequences", &modulus) };
            sequences(&modulus.resolve()?, k, &out, cfg)
        }
        Command::Psi { phi, k, out } => {
            let args = crate::ModulusArgs { phi, psi: false };
            let cfg = RunConfig { depth: Some(k), ..config("psi", &args) };
            psi(&args.resolve()?, k, &out, cfg)
        }
        Command::Eval { map, point, inverse, tol, out } => {
            let cfg = RunConfig { tol, ..map_config(config("eval", &map.modulus), &map) };
            eval(&map, &point, inverse, tol, &out, cfg)
        }
        Command::Grid { map, resolution, slice, inverse, out } => {
            let cfg = map_config(config("grid", &map.modulus), &map);
            grid(&map, resolution, slice, inverse, &out, cfg)
        }
        Command::Verify { suite, map, seed, samples, out } => {
            map.check()?;
            let cfg = RunConfig { seed: Some(seed), samples: Some(samples), ..map_config(config("verify", &map.modulus), &map) };
            let report = run_suite(suite, &map.modulus.resolve()?, map.n, map.depth, seed, samples, cfg);
            for c in &report.checks {
                eprintln!("{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let body = match out.format(Format::Json) {
                Format::Json => to_json(&report),
                Format::Csv => report.to_csv(),
                f => return Err(CliError::Usage(format!("verify writes json or csv, not {f:?}"))),
            };
            emit(&out, body.as_bytes(), None)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Refine { map, state, steps, seed, samples, rho, out } => {
            let cfg = RunConfig { seed: Some(seed), samples: Some(samples), ..map_config(config("refine", &map.modulus), &map) };
            let rc = RefineConfig { seed, scan_pairs: samples, rho_override: rho, ..RefineConfig::default() };
            refine(&map, state, steps, &rc, &out, cfg)
        }
    }
}

fn map_config(cfg: RunConfig, map: &MapArgs) -> RunConfig {
    RunConfig { n: Some(map.n), depth: Some(map.depth), ..cfg }
}

/// Writes `body` to `--out` (with an optional sidecar) or to standard output.
fn emit(out: &OutArgs, body: &[u8], meta: Option<serde_json::Value>) -> Result<(), CliError> {
    match &out.out {
        Some(path) => {
            write_atomic(path, body)?;
            if let Some(meta) = meta {
                write_atomic(&sidecar(path), to_json(&meta).as_bytes())?;
            }
        }
        None => std::io::stdout().lock().write_all(body)?,
    }
    Ok(())
}

fn flip(map: &MapArgs) -> Result<FlipHomeo, CliError> {
    map.check()?;
    let m = map.modulus.resolve()?;
    let seq = scales_for(&m, map.depth).map_err(failed)?;
    Ok(FlipHomeo::new(seq, map.n, map.depth, FlowSolver::Transit))
}

fn sequences(m: &Modulus, k: usize, out: &OutArgs, cfg: RunConfig) -> Result<u8, CliError> {
    let seq = scales_for(m, k).map_err(failed)?;
    let cert = verify_scales(&seq, m);
    eprintln!(
        "capacity N = {}; {} of {} checks pass",
        num(seq.capacity),
        cert.checks.iter().filter(|c| c.pass).count(),
        cert.checks.len()
    );
    match out.format(Format::Csv) {
        Format::Csv => {
            let mut s = String::from("k,alpha,beta,lambda\n");
            for i in 0..=k {
                let (b, l) = if i == 0 { (String::new(), String::new()) } else { (num(seq.beta(i)), num(seq.lambda(i))) };
                writeln!(s, "{i},{},{b},{l}", num(seq.alpha(i))).unwrap();
            }
            emit(out, s.as_bytes(), Some(json!({ "config": cfg, "certificate": cert })))?;
        }
        Format::Json => emit(out, to_json(&json!({ "config": cfg, "sequence": seq, "certificate": cert })).as_bytes(), None)?,
        f => return Err(CliError::Usage(format!("sequences writes csv or json, not {f:?}"))),
    }
    Ok(if cert.all_pass() { 0 } else { 1 })
}

fn psi(phi: &Modulus, k: usize, out: &OutArgs, cfg: RunConfig) -> Result<u8, CliError> {
    let psi = build_psi(phi, k).map_err(|e| CliError::Usage(e.to_string()))?;
    let profile = psi_ratio_profile(&psi, phi, psi.terms());
    match out.format(Format::Csv) {
        Format::Csv => {
            let mut s = String::from("k,breakpoint,psi_over_phi,series,slope\n");
            for i in 0..psi.breakpoints.len() {
                let (a, sl) = if i < psi.terms() { (num(psi.series[i]), num(psi.slope(i))) } else { (String::new(), String::new()) };
                writeln!(s, "{i},{},{},{a},{sl}", num(psi.breakpoints[i]), num(profile[2 * i].1)).unwrap();
            }
            emit(out, s.as_bytes(), Some(json!({ "config": cfg, "tail": psi.tail })))?;
        }
        Format::Json => emit(out, to_json(&json!({ "config": cfg, "psi": psi, "profile": profile })).as_bytes(), None)?,
        f => return Err(CliError::Usage(format!("psi writes csv or json, not {f:?}"))),
    }
    Ok(0)
}

fn parse_point(s: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("--point {s:?}: expected {n} comma-separated coordinates in [0, 1]"));
    let x: Vec<f64> = s.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if x.len() != n || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad());
    }
    Ok(x)
}

fn direction(inverse: bool) -> Direction {
    if inverse {
        Direction::Inverse
    } else {
        Direction::Forward
    }
}

fn coord_header(n: usize) -> String {
    let xs = (1..=n).map(|i| format!("x{i}"));
    let ys = (1..=n).map(|i| format!("y{i}"));
    xs.chain(ys).collect::<Vec<_>>().join(",")
}

fn eval(map: &MapArgs, points: &[String], inverse: bool, tol: Option<f64>, out: &OutArgs, cfg: RunConfig) -> Result<u8, CliError> {
    let f = flip(map)?;
    let dir = direction(inverse);
    let xs = points.iter().map(|p| parse_point(p, map.n)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for x in xs {
        let (y, bound) = match tol {
            Some(t) => f.eval_limit(&x, t, dir).map_err(failed)?,
            None => (f.eval(&x, dir).map_err(failed)?, f.error_bound(map.depth)),
        };
        rows.push((x, y, bound));
    }
    match out.format(Format::Csv) {
        Format::Csv => {
            let mut s = coord_header(map.n) + ",bound\n";
            for (x, y, b) in &rows {
                let cells: Vec<String> = x.iter().chain(y).map(|v| num(*v)).collect();
                writeln!(s, "{},{}", cells.join(","), num(*b)).unwrap();
            }
            emit(out, s.as_bytes(), out.out.as_ref().map(|_| json!({ "config": cfg })))?;
        }
        Format::Json => {
            let pts: Vec<_> = rows.iter().map(|(x, y, b)| json!({ "x": x, "y": y, "bound": b })).collect();
            emit(out, to_json(&json!({ "config": cfg, "points": pts })).as_bytes(), None)?;
        }
        f => return Err(CliError::Usage(format!("eval writes csv or json, not {f:?}"))),
    }
    Ok(0)
}

/// Lattice points `(i + ½)/R` with the last coordinate varying fastest.
fn lattice(n: usize, r: usize) -> Vec<Vec<f64>> {
    let total = r.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; n];
            for v in x.iter_mut().rev() {
                *v = ((idx % r) as f64 + 0.5) / r as f64;
                idx /= r;
            }
            x
        })
        .collect()
}

fn grid(map: &MapArgs, r: usize, slice: f64, inverse: bool, out: &OutArgs, cfg: RunConfig) -> Result<u8, CliError> {
    if r == 0 {
        return Err(CliError::Usage("--resolution must be positive".into()));
    }
    let format = out.format(Format::Csv);
    let image = matches!(format, Format::Pgm | Format::Ppm);
    if image && out.out.is_none() {
        return Err(CliError::Usage("image formats need --out".into()));
    }
    if format == Format::Ppm && map.n != 2 {
        return Err(CliError::Usage("ppm direction images need --n 2".into()));
    }
    if image && !(0.0..=1.0).contains(&slice) {
        return Err(CliError::Usage("--slice must lie in [0, 1]".into()));
    }
    let f = flip(map)?;
    let dir = direction(inverse);
    let points = if image {
        // Row 0 of the image is the top edge, x2 close to 1.
        (0..r * r)
            .map(|i| {
                let (row, col) = (i / r, i % r);
                let mut x = vec![slice; map.n];
                x[0] = (col as f64 + 0.5) / r as f64;
                x[1] = ((r - 1 - row) as f64 + 0.5) / r as f64;
                x
            })
            .collect()
    } else {
        lattice(map.n, r)
    };
    let images: Vec<Vec<f64>> = points.par_iter().map(|x| f.eval(x, dir)).collect::<Result<_, _>>().map_err(failed)?;
    let disp = |i: usize| -> Vec<f64> { images[i].iter().zip(&points[i]).map(|(y, x)| y - x).collect() };
    let magnitude: Vec<f64> = (0..points.len()).map(|i| disp(i).iter().map(|d| d * d).sum::<f64>().sqrt()).collect();
    let lo = magnitude.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = magnitude.iter().cloned().fold(0.0, f64::max);
    let meta = json!({ "config": cfg, "resolution": r, "inverse": inverse, "slice": slice, "min": lo, "max": hi });
    match format {
        Format::Csv => {
            let mut s = coord_header(map.n) + "\n";
            for (x, y) in points.iter().zip(&images) {
                let cells: Vec<String> = x.iter().chain(y).map(|v| num(*v)).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            emit(out, s.as_bytes(), out.out.as_ref().map(|_| meta))?;
        }
        Format::Json => emit(out, to_json(&json!({ "meta": meta, "x": points, "y": images })).as_bytes(), None)?,
        Format::Pgm => {
            let samples: Vec<u16> = magnitude.iter().map(|&m| quantize(m, lo, hi)).collect();
            emit(out, &pgm(r, r, &samples), Some(meta))?;
        }
        Format::Ppm => {
            let rgb: Vec<[u8; 3]> = (0..points.len())
                .map(|i| {
                    let d = disp(i);
                    let value = if hi > 0.0 { magnitude[i] / hi } else { 0.0 };
                    hue_rgb(d[1].atan2(d[0]) / std::f64::consts::TAU, value)
                })
                .collect();
            emit(out, &ppm(r, r, &rgb), Some(meta))?;
        }
    }
    Ok(0)
}

fn refine(map: &MapArgs, from: Option<std::path::PathBuf>, steps: usize, rc: &RefineConfig, out: &OutArgs, cfg: RunConfig) -> Result<u8, CliError> {
    if out.format(Format::Json) != Format::Json {
        return Err(CliError::Usage("refine writes json".into()));
    }
    let mut state = match from {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            RefinementState::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => {
            map.check()?;
            RefinementState::base(map.modulus.resolve()?, map.n, map.depth, rc).map_err(failed)?
        }
    };
    for _ in 0..steps {
        state = refinement_step(&state, rc).map_err(failed)?;
    }
    let c = state.constants;
    eprintln!(
        "k = {}; |C_k| >= {}; modulus constant {} (budget {})",
        state.k,
        num(state.exact_measure()),
        num(c.measured),
        num(c.budget)
    );
    if let Some(step) = &state.step {
        eprintln!("cell radius {} at lattice level {}", num(step.rho.rho), step.packing.level);
    }
    // The document itself must stay loadable with `--state`, so the run
    // settings go to the sidecar.
    emit(out, state.to_json().as_bytes(), out.out.as_ref().map(|_| json!({ "config": cfg })))?;
    Ok(if c.measured <= c.budget { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_order() {
        let l = lattice(2, 2);
        assert_eq!(l, vec![vec![0.25, 0.25], vec![0.25, 0.75], vec![0.75, 0.25], vec![0.75, 0.75]]);
    }

    #[test]
    fn point_parsing() {
        assert_eq!(parse_point("0.25, 0.75", 2).unwrap(), vec![0.25, 0.75]);
        assert!(parse_point("0.25", 2).is_err());
        assert!(parse_point("0.25,1.5", 2).is_err());
        assert!(parse_point("a,b", 2).is_err());
    }

    #[test]
    fn header() {
        assert_eq!(coord_header(3), "x1,x2,x3,y1,y2,y3");
    }
}
