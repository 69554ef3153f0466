//! Text formats for experiment inputs.
//!
//! Every parser validates what it builds: grids and sizes are capped,
//! numbers must be finite, densities nonnegative, and the resulting objects
//! go through the same constructors as in-memory data.
//!
//! | Input | Format |
//! |-------|--------|
//! | density | JSON `{"grid": {"d", "m"}, "mass" \| "values": [..]}` or CSV with a `mass` or `value` column |
//! | curve | JSON `{"grid", "densities": [[..]], "momenta"?: [[[..]]]}` (masses; momenta rebuilt when absent) |
//! | coupling | CSV square matrix of masses, no header |
//! | phases | JSON `{"grid", "phases": [{"weight", "start", "end"}]}` (density values) or `{"preset": "two-bump", "m"}` |
//! | path | JSON `{"d", "points": [[..]]}` |
//! | ν list | comma-separated positive numbers |

use serde::Deserialize;

use crate::measures::{DensityCurve, GridDensity, VectorField};
use crate::multiphase::{two_bump_exchange, Phase};
use crate::path_lab::DiscretePath;
use crate::torus::TorusGrid;
use crate::{Error, Result};

/// Largest number of grid cells accepted from a file.
pub const MAX_CELLS: usize = 1 << 16;

/// Largest number of curve nodes or path points accepted from a file.
pub const MAX_NODES: usize = 4096;

/// Largest coupling side accepted from a file.
pub const MAX_COUPLING_SIDE: usize = 1024;

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

fn checked_grid(grid: TorusGrid) -> Result<TorusGrid> {
    if grid.len() > MAX_CELLS {
        return Err(Error::Capacity {
            what: "grid cells",
            size: grid.len(),
            cap: MAX_CELLS,
        });
    }
    Ok(grid)
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("{what} contains a non-finite number")));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityFile {
    grid: TorusGrid,
    #[serde(default)]
    mass: Option<Vec<f64>>,
    #[serde(default)]
    values: Option<Vec<f64>>,
}

fn density_from_parts(grid: TorusGrid, mass: Option<Vec<f64>>, values: Option<Vec<f64>>) -> Result<GridDensity> {
    let grid = checked_grid(grid)?;
    match (mass, values) {
        (Some(m), None) => {
            finite(&m, "mass")?;
            GridDensity::new(grid, m)
        }
        (None, Some(v)) => {
            finite(&v, "values")?;
            if v.len() != grid.len() {
                return Err(Error::GridMismatch(format!("{} values for {} cells", v.len(), grid.len())));
            }
            GridDensity::from_density_values(grid, v)
        }
        _ => Err(Error::Parse("give exactly one of `mass` and `values`".into())),
    }
}

/// Density from JSON; `mass` must already sum to one, `values` are normalized.
pub fn parse_density_json(text: &str) -> Result<GridDensity> {
    let f: DensityFile = serde_json::from_str(text).map_err(parse_err)?;
    density_from_parts(f.grid, f.mass, f.values)
}

/// Density from CSV with a header naming a `mass` or `value` column (other
/// columns, such as a cell index, are ignored). Rows are cells in flat order.
pub fn parse_density_csv(text: &str, grid: TorusGrid) -> Result<GridDensity> {
    let grid = checked_grid(grid)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(parse_err)?.clone();
    let pick = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (col, is_mass) = match (pick("mass"), pick("value")) {
        (Some(c), None) => (c, true),
        (None, Some(c)) => (c, false),
        _ => return Err(Error::Parse("header needs exactly one of `mass` and `value`".into())),
    };
    let mut data = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(parse_err)?;
        if data.len() >= grid.len() {
            return Err(Error::GridMismatch(format!("more than {} rows", grid.len())));
        }
        let field = rec.get(col).ok_or_else(|| Error::Parse("short row".into()))?;
        data.push(field.parse::<f64>().map_err(parse_err)?);
    }
    if is_mass {
        density_from_parts(grid, Some(data), None)
    } else {
        density_from_parts(grid, None, Some(data))
    }
}

/// Square coupling matrix in mass units; returns the side and row-major entries.
pub fn parse_coupling_csv(text: &str) -> Result<(usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(parse_err)?;
        if rows.len() >= MAX_COUPLING_SIDE || rec.len() > MAX_COUPLING_SIDE {
            return Err(Error::Capacity {
                what: "coupling side",
                size: rows.len().max(rec.len()) + 1,
                cap: MAX_COUPLING_SIDE,
            });
        }
        rows.push(rec.iter().map(|f| f.parse::<f64>().map_err(parse_err)).collect::<Result<_>>()?);
    }
    let m = rows.len();
    if m < 2 {
        return Err(Error::Parse("coupling needs at least two rows".into()));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse(format!("coupling must be square ({m} rows)")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    finite(&flat, "coupling")?;
    if flat.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidDensity("negative coupling entry".into()));
    }
    Ok((m, flat))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveFile {
    grid: TorusGrid,
    densities: Vec<Vec<f64>>,
    #[serde(default)]
    momenta: Option<Vec<Vec<Vec<f64>>>>,
}

/// Curve from JSON node masses; without `momenta` the minimal ones are built.
pub fn parse_curve_json(text: &str) -> Result<DensityCurve> {
    let f: CurveFile = serde_json::from_str(text).map_err(parse_err)?;
    let grid = checked_grid(f.grid)?;
    if f.densities.len() > MAX_NODES {
        return Err(Error::Capacity {
            what: "curve nodes",
            size: f.densities.len(),
            cap: MAX_NODES,
        });
    }
    if f.densities.len() < 2 {
        return Err(Error::Domain("a curve needs at least two nodes".into()));
    }
    let nodes = f
        .densities
        .into_iter()
        .map(|m| density_from_parts(grid, Some(m), None))
        .collect::<Result<Vec<_>>>()?;
    match f.momenta {
        None => DensityCurve::from_densities(nodes),
        Some(mom) => {
            let fields = mom
                .into_iter()
                .map(|components| {
                    components.iter().try_for_each(|c| finite(c, "momentum"))?;
                    Ok(VectorField { components })
                })
                .collect::<Result<Vec<_>>>()?;
            DensityCurve::new(grid, nodes, fields)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseEntry {
    weight: f64,
    start: Vec<f64>,
    end: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PhasesFile {
    Preset { preset: String, m: usize },
    Explicit { grid: TorusGrid, phases: Vec<PhaseEntry> },
}

/// Phase list from JSON. Endpoint arrays are density values and are
/// normalized; averaging to Lebesgue is checked by the solver.
pub fn parse_phases_json(text: &str) -> Result<Vec<Phase>> {
    let f: PhasesFile = serde_json::from_str(text).map_err(parse_err)?;
    match f {
        PhasesFile::Preset { preset, m } => match preset.as_str() {
            "two-bump" => two_bump_exchange(&checked_grid(TorusGrid::new(1, m)?)?),
            other => Err(Error::Parse(format!("unknown phase preset `{other}`"))),
        },
        PhasesFile::Explicit { grid, phases } => {
            let grid = checked_grid(grid)?;
            if phases.is_empty() || phases.len() > 64 {
                return Err(Error::Parse(format!("between 1 and 64 phases expected, got {}", phases.len())));
            }
            phases
                .into_iter()
                .map(|p| {
                    if !(p.weight > 0.0 && p.weight.is_finite()) {
                        return Err(Error::Parse(format!("phase weight {}", p.weight)));
                    }
                    Ok(Phase {
                        weight: p.weight,
                        start: density_from_parts(grid, None, Some(p.start))?,
                        end: density_from_parts(grid, None, Some(p.end))?,
                    })
                })
                .collect()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathFile {
    d: usize,
    points: Vec<Vec<f64>>,
}

/// Torus path from JSON; coordinates are wrapped into `[0, 1)`.
pub fn parse_path_json(text: &str) -> Result<DiscretePath> {
    let f: PathFile = serde_json::from_str(text).map_err(parse_err)?;
    if f.points.len() > MAX_NODES {
        return Err(Error::Capacity {
            what: "path points",
            size: f.points.len(),
            cap: MAX_NODES,
        });
    }
    if !(1..=2).contains(&f.d) {
        return Err(Error::UnsupportedDimension(f.d));
    }
    let pts = f
        .points
        .iter()
        .map(|p| {
            if p.len() != f.d {
                return Err(Error::Parse(format!("point of length {} in dimension {}", p.len(), f.d)));
            }
            let mut q = [0.0; 2];
            q[..f.d].copy_from_slice(p);
            Ok(q)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscretePath::new(f.d, pts)
}

/// Comma-separated list of positive finite numbers, e.g. `0.4,0.2,0.1`.
pub fn parse_nu_list(text: &str) -> Result<Vec<f64>> {
    let out = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(parse_err))
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::Parse("empty list".into()));
    }
    if out.len() > MAX_NODES {
        return Err(Error::Capacity {
            what: "list entries",
            size: out.len(),
            cap: MAX_NODES,
        });
    }
    if let Some(v) = out.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Parse(format!("entries must be positive and finite, got {v}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn density_json_round_trip() {
        let grid = TorusGrid::line(8).unwrap();
        let rho = GridDensity::wrapped_gaussian(&grid, &[0.3], 0.1).unwrap();
        let text = serde_json::to_string(&rho).unwrap();
        assert_eq!(parse_density_json(&text).unwrap(), rho);
        let v = parse_density_json(r#"{"grid":{"d":1,"m":4},"values":[1,1,1,1]}"#).unwrap();
        assert_eq!(v, GridDensity::uniform(&TorusGrid::line(4).unwrap()));
        assert!(parse_density_json(r#"{"grid":{"d":1,"m":4},"mass":[0.5,0.5,0.5,-0.5]}"#).is_err());
        assert!(parse_density_json(r#"{"grid":{"d":3,"m":4},"values":[1]}"#).is_err());
        assert!(parse_density_json(r#"{"grid":{"d":1,"m":2},"mass":[0.5,0.5],"values":[1,1]}"#).is_err());
    }

    #[test]
    fn density_csv() {
        let grid = TorusGrid::line(3).unwrap();
        let rho = parse_density_csv("cell,value\n0,1\n1,2\n2,1\n", grid).unwrap();
        assert_eq!(rho.mass(), &[0.25, 0.5, 0.25]);
        assert!(parse_density_csv("cell,value\n0,1\n1,2\n", grid).is_err());
        assert!(parse_density_csv("x\n1\n", grid).is_err());
        assert!(parse_density_csv("value\n1\n1\n1\n1\n", grid).is_err());
    }

    #[test]
    fn coupling_csv() {
        let (m, g) = parse_coupling_csv("0.5,0\n0,0.5\n").unwrap();
        assert_eq!((m, g), (2, vec![0.5, 0.0, 0.0, 0.5]));
        assert!(parse_coupling_csv("0.5,0\n0\n").is_err());
        assert!(parse_coupling_csv("1,-1\n0,1\n").is_err());
        assert!(parse_coupling_csv("nan,0\n0,1\n").is_err());
    }

    #[test]
    fn curve_json() {
        let text = r#"{"grid":{"d":1,"m":2},"densities":[[0.5,0.5],[0.5,0.5]]}"#;
        let c = parse_curve_json(text).unwrap();
        assert_eq!(c.n_steps(), 1);
        let bad = r#"{"grid":{"d":1,"m":2},"densities":[[0.5,0.5],[0.5,0.5]],"momenta":[]}"#;
        assert!(parse_curve_json(bad).is_err());
        let serialized = serde_json::to_string(&c).unwrap();
        let back: DensityCurve = serde_json::from_str(&serialized).unwrap();
        assert_eq!(back, c);
        let broken = serialized.replace("\"momenta\":[", "\"momenta\":[{\"components\":[[0.0,0.0]]},");
        assert!(serde_json::from_str::<DensityCurve>(&broken).is_err());
    }

    #[test]
    fn phases_json() {
        let p = parse_phases_json(r#"{"preset":"two-bump","m":16}"#).unwrap();
        assert_eq!(p.len(), 2);
        let text = r#"{"grid":{"d":1,"m":2},"phases":[{"weight":1,"start":[1,1],"end":[1,1]}]}"#;
        assert_eq!(parse_phases_json(text).unwrap().len(), 1);
        assert!(parse_phases_json(r#"{"preset":"other","m":16}"#).is_err());
        assert!(parse_phases_json(r#"{"grid":{"d":1,"m":2},"phases":[{"weight":-1,"start":[1,1],"end":[1,1]}]}"#).is_err());
    }

    #[test]
    fn path_and_list() {
        let p = parse_path_json(r#"{"d":1,"points":[[0.1],[1.2]]}"#).unwrap();
        assert!((p.point(1)[0] - 0.2).abs() < 1e-15);
        assert!(parse_path_json(r#"{"d":2,"points":[[0.1],[0.2]]}"#).is_err());
        assert!(parse_path_json(r#"{"d":1,"points":[[0.1]]}"#).is_err());
        assert_eq!(parse_nu_list("0.4, 0.2,0.1").unwrap(), vec![0.4, 0.2, 0.1]);
        assert!(parse_nu_list("0.4,-1").is_err());
        assert!(parse_nu_list("").is_err());
        assert!(parse_nu_list("inf").is_err());
    }

    proptest! {
        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_density_json(&s);
            let _ = parse_density_csv(&s, TorusGrid::line(4).unwrap());
            let _ = parse_coupling_csv(&s);
            let _ = parse_curve_json(&s);
            let _ = parse_phases_json(&s);
            let _ = parse_path_json(&s);
            let _ = parse_nu_list(&s);
        }
    }
}
